//! Concave and convex envelopes of tabular contracts, their supporting
//! hyperplanes, contact sets and Carathéodory reduction.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{solve_lp, LpProblem, LpStatus, Sense};
use crate::model::{dot, AffineContract, DistributionAtAction, OutcomeSpace, TabularContract};

const WEIGHT_FLOOR: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Upper,
    Lower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeResult {
    pub side: Side,
    pub action: Vec<f64>,
    pub value: f64,
    pub weights: DistributionAtAction,
    pub slope: Vec<f64>,
    pub intercept: f64,
    /// Largest LP certification residual.
    pub lp_residual: f64,
}

impl EnvelopeResult {
    pub fn supporting(&self) -> AffineContract {
        AffineContract::new(self.intercept, self.slope.clone())
    }
}

/// `w̄(a)`: the largest expected payment of a compatible mixture with mean `a`.
pub fn upper_envelope(space: &OutcomeSpace, w: &TabularContract, a: &[f64]) -> Result<EnvelopeResult> {
    envelope(space, w, a, Side::Upper)
}

/// `w̲(a)`: the smallest expected payment of a compatible mixture with mean `a`.
pub fn lower_envelope(space: &OutcomeSpace, w: &TabularContract, a: &[f64]) -> Result<EnvelopeResult> {
    envelope(space, w, a, Side::Lower)
}

fn envelope(space: &OutcomeSpace, w: &TabularContract, a: &[f64], side: Side) -> Result<EnvelopeResult> {
    w.check_against(space)?;
    let d = space.dimension();
    if a.len() != d {
        return Err(Error::Input(format!("query point has length {}, expected {d}", a.len())));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("query point has non-finite entries".into()));
    }
    let m = space.len();
    let mut rows: Vec<Vec<f64>> = (0..d).map(|i| space.outcomes().iter().map(|x| x[i]).collect()).collect();
    rows.push(vec![1.0; m]);
    let mut rhs = a.to_vec();
    rhs.push(1.0);
    let sense = match side {
        Side::Upper => Sense::Maximize,
        Side::Lower => Sense::Minimize,
    };
    let problem = LpProblem::new(sense, w.payments.clone(), rows, rhs);
    let sol = solve_lp(&problem)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible => {
            return Err(Error::Domain(format!("action {a:?} lies outside the convex hull of the outcomes")))
        }
        LpStatus::Unbounded => return Err(Error::numeric("envelope program reported unbounded")),
    }
    let lp_residual = sol.residuals(&problem).max();
    let mut weights = DistributionAtAction::from_dense(a.to_vec(), &sol.primal, WEIGHT_FLOOR);
    let total: f64 = weights.weights.iter().sum();
    weights.weights.iter_mut().for_each(|v| *v /= total);
    let slope = sol.duals[..d].to_vec();
    let intercept = sol.duals[d];
    Ok(EnvelopeResult { side, action: a.to_vec(), value: sol.objective, weights, slope, intercept, lp_residual })
}

/// Outcomes where `ψ` touches `w`. `ψ` must support `w` from above within `tol`.
pub fn contact_set(space: &OutcomeSpace, w: &TabularContract, psi: &AffineContract, tol: f64) -> Result<Vec<usize>> {
    w.check_against(space)?;
    let mut contact = Vec::new();
    for (k, x) in space.outcomes().iter().enumerate() {
        let gap = psi.eval(x) - w.payments[k];
        if gap < -tol {
            return Err(Error::Precondition(format!(
                "affine contract lies below the payment at outcome {k} {x:?} by {:.3e}",
                -gap
            )));
        }
        if gap <= tol {
            contact.push(k);
        }
    }
    Ok(contact)
}

/// Reduces a compatible distribution to at most `d + 1` support points with the same mean.
pub fn caratheodory_reduce(space: &OutcomeSpace, dist: &DistributionAtAction) -> DistributionAtAction {
    let d = space.dimension();
    let mut support = dist.support.clone();
    let mut weights = dist.weights.clone();
    let mut k = 0;
    while k < support.len() {
        if weights[k] <= 0.0 {
            support.remove(k);
            weights.remove(k);
        } else {
            k += 1;
        }
    }
    while support.len() > d + 1 {
        let s = support.len();
        // Columns (xₖ, 1); any null vector keeps both the mean and the total mass.
        let mat = DMatrix::from_fn(d + 1, s, |i, j| if i < d { space.outcomes()[support[j]][i] } else { 1.0 });
        let null = null_vector(&mat);
        let null = if null.iter().any(|v| *v > 1e-14) { null } else { null.iter().map(|v| -v).collect() };
        let mut step = f64::INFINITY;
        let mut drop = 0;
        for j in 0..s {
            if null[j] > 1e-14 {
                let t = weights[j] / null[j];
                if t < step {
                    step = t;
                    drop = j;
                }
            }
        }
        for j in 0..s {
            weights[j] = (weights[j] - step * null[j]).max(0.0);
        }
        weights[drop] = 0.0;
        let mut j = 0;
        while j < support.len() {
            if weights[j] <= 1e-16 {
                support.remove(j);
                weights.remove(j);
            } else {
                j += 1;
            }
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|v| *v /= total);
    DistributionAtAction { action: dist.action.clone(), support, weights }
}

fn null_vector(mat: &DMatrix<f64>) -> Vec<f64> {
    // Pad to a square matrix so the SVD exposes the full right singular basis.
    let (r, c) = mat.shape();
    let mut square = DMatrix::<f64>::zeros(c.max(r), c);
    square.view_mut((0, 0), (r, c)).copy_from(mat);
    let svd = square.svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .expect("nonempty spectrum");
    v_t.row(idx).iter().copied().collect()
}

/// A face of the upper hull of the lifted points `(xₖ, wₖ)`: the plane and the outcomes spanning it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpperFacet {
    pub plane: AffineContract,
    pub vertices: Vec<usize>,
}

/// Exact upper-hull facets for `d ≤ 2`, used as a cross-check of the LP envelope.
pub fn upper_facets(space: &OutcomeSpace, w: &TabularContract) -> Result<Vec<UpperFacet>> {
    w.check_against(space)?;
    match space.dimension() {
        1 => Ok(facets_1d(space, w)),
        2 => Ok(facets_2d(space, w)),
        d => Err(Error::Unsupported(format!("facet enumeration is implemented for d ≤ 2, got d = {d}"))),
    }
}

fn facets_1d(space: &OutcomeSpace, w: &TabularContract) -> Vec<UpperFacet> {
    let mut order: Vec<usize> = (0..space.len()).collect();
    order.sort_by(|&i, &j| space.outcomes()[i][0].partial_cmp(&space.outcomes()[j][0]).unwrap());
    let x = |k: usize| space.outcomes()[k][0];
    let y = |k: usize| w.payments[k];
    // Monotone chain, keeping right turns only.
    let mut hull: Vec<usize> = Vec::new();
    for &k in &order {
        while hull.len() >= 2 {
            let (o, a) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (x(a) - x(o)) * (y(k) - y(o)) - (y(a) - y(o)) * (x(k) - x(o));
            if cross >= -1e-12 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(k);
    }
    hull.windows(2)
        .map(|pair| {
            let (i, j) = (pair[0], pair[1]);
            let slope = (y(j) - y(i)) / (x(j) - x(i));
            UpperFacet { plane: AffineContract::new(y(i) - slope * x(i), vec![slope]), vertices: vec![i, j] }
        })
        .collect()
}

fn facets_2d(space: &OutcomeSpace, w: &TabularContract) -> Vec<UpperFacet> {
    let m = space.len();
    let pts = space.outcomes();
    let mut facets = Vec::new();
    for i in 0..m {
        for j in (i + 1)..m {
            for k in (j + 1)..m {
                let (a, b, c) = (&pts[i], &pts[j], &pts[k]);
                let det = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
                if det.abs() < 1e-12 {
                    continue;
                }
                let mat = nalgebra::Matrix3::new(1.0, a[0], a[1], 1.0, b[0], b[1], 1.0, c[0], c[1]);
                let rhs = nalgebra::Vector3::new(w.payments[i], w.payments[j], w.payments[k]);
                let Some(z) = mat.lu().solve(&rhs) else { continue };
                let plane = AffineContract::new(z[0], vec![z[1], z[2]]);
                let supports = (0..m).all(|l| plane.eval(&pts[l]) >= w.payments[l] - 1e-10);
                let seen = facets.iter().any(|f: &UpperFacet| f.vertices.contains(&i) && f.vertices.contains(&j) && f.vertices.contains(&k));
                if supports && !seen {
                    // Coplanar lifted points form one facet.
                    let vertices = (0..m).filter(|&l| (plane.eval(&pts[l]) - w.payments[l]).abs() <= 1e-10).collect();
                    facets.push(UpperFacet { plane, vertices });
                }
            }
        }
    }
    facets
}

/// `w̄(a)` from enumerated facets: the smallest facet plane value at `a`.
pub fn envelope_from_facets(facets: &[UpperFacet], a: &[f64]) -> Option<f64> {
    facets.iter().map(|f| f.plane.intercept + dot(&f.plane.slope, a)).reduce(f64::min)
}
