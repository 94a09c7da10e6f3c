//! Independent validators: grid worst case, grid best responses, finite
//! differences, sampled curvature and an exhaustive LP oracle.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envelope::{lower_envelope, upper_envelope, upper_facets};
use crate::geometry::project_simplex;
use crate::homogeneous::projected_ascent;
use crate::error::{Error, Result};
use crate::lp::{LpProblem, Sense};
use crate::model::{AffineContract, DistributionAtAction, FunctionSpec, Objective, OutcomeSpace, TabularContract};

/// The adversary's explicit mapping: upper-hull column at the induced action,
/// lower-hull column at the floor action (and everywhere else).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseMapping {
    pub induced: DistributionAtAction,
    pub floor: DistributionAtAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseReport {
    pub value: f64,
    pub action: Vec<f64>,
    pub induced_payment: f64,
    pub agent_floor: f64,
    pub floor_action: Vec<f64>,
    pub grid_size: usize,
    /// False when the induced action only ties the floor, so the value is a limit.
    pub attained: bool,
    pub mapping: WorstCaseMapping,
}

/// Grid approximation of the worst-case principal payoff over compatible mappings.
pub fn worst_case_payoff(
    space: &OutcomeSpace,
    w: &TabularContract,
    cost: &FunctionSpec,
    utility: &FunctionSpec,
    grid: &[Vec<f64>],
) -> Result<WorstCaseReport> {
    if grid.is_empty() {
        return Err(Error::Input("worst-case grid is empty".into()));
    }
    // The exact floor action joins the grid, so refining the grid only adds candidates.
    let mut points = grid.to_vec();
    if let Some(a) = exact_floor_action(space, w, cost)? {
        points.push(a);
    }
    let envelopes: Vec<(f64, f64)> = points
        .par_iter()
        .map(|a| Ok((upper_envelope(space, w, a)?.value, lower_envelope(space, w, a)?.value)))
        .collect::<Result<Vec<_>>>()?;
    let costs: Vec<f64> = points.iter().map(|a| cost.value(a)).collect();

    let mut floor_idx = 0;
    for i in 0..points.len() {
        if envelopes[i].1 - costs[i] > envelopes[floor_idx].1 - costs[floor_idx] {
            floor_idx = i;
        }
    }
    let floor = envelopes[floor_idx].1 - costs[floor_idx];

    let mut best: Option<(usize, f64)> = None;
    for i in 0..points.len() {
        if envelopes[i].0 - costs[i] >= floor - 1e-9 {
            let v = utility.value(&points[i]) - envelopes[i].0;
            if best.map_or(true, |(_, b)| v < b) {
                best = Some((i, v));
            }
        }
    }
    let (idx, value) = best.ok_or_else(|| Error::numeric("inducible set is empty"))?;
    let induced = upper_envelope(space, w, &points[idx])?;
    let floor_col = lower_envelope(space, w, &points[floor_idx])?;
    let attained = envelopes[idx].0 - costs[idx] > floor + 1e-9 || idx == floor_idx;
    Ok(WorstCaseReport {
        value,
        action: points[idx].clone(),
        induced_payment: envelopes[idx].0,
        agent_floor: floor,
        floor_action: points[floor_idx].clone(),
        grid_size: points.len(),
        attained,
        mapping: WorstCaseMapping { induced: induced.weights, floor: floor_col.weights },
    })
}

/// `max_a w̲(a) − c(a)` over the hull, solved facet by facet of the lower hull (`d ≤ 2` only).
fn exact_floor_action(space: &OutcomeSpace, w: &TabularContract, cost: &FunctionSpec) -> Result<Option<Vec<f64>>> {
    if space.dimension() > 2 {
        return Ok(None);
    }
    let top = w.payments.iter().copied().fold(0.0, f64::max);
    let flipped = TabularContract::new(w.payments.iter().map(|p| top - p).collect())?;
    let facets = upper_facets(space, &flipped)?;
    let mut best: Option<(f64, Vec<f64>)> = None;
    for f in &facets {
        let obj = FacetFloor {
            points: f.vertices.iter().map(|&k| space.outcomes()[k].clone()).collect(),
            plane: AffineContract::new(top - f.plane.intercept, f.plane.slope.iter().map(|s| -s).collect()),
            cost,
        };
        let n = obj.points.len();
        // Any hull point is a valid extra candidate, so a facet whose ascent stalls is skipped.
        let m = match projected_ascent(&obj, &project_simplex, vec![1.0 / n as f64; n]) {
            Ok(m) => m,
            Err(Error::Numeric { .. }) => continue,
            Err(e) => return Err(e),
        };
        if best.as_ref().map_or(true, |(v, _)| m.value > *v) {
            best = Some((m.value, obj.mean(&m.argmax)));
        }
    }
    Ok(best.map(|(_, a)| a))
}

/// `λ ↦ ψ(Xλ) − c(Xλ)` on the simplex over one facet's vertices.
struct FacetFloor<'a> {
    points: Vec<Vec<f64>>,
    plane: AffineContract,
    cost: &'a FunctionSpec,
}

impl FacetFloor<'_> {
    fn mean(&self, lambda: &[f64]) -> Vec<f64> {
        let d = self.points[0].len();
        (0..d).map(|j| self.points.iter().zip(lambda).map(|(x, l)| x[j] * l.max(0.0)).sum()).collect()
    }
}

impl Objective for FacetFloor<'_> {
    fn value(&self, lambda: &[f64]) -> f64 {
        let a = self.mean(lambda);
        self.plane.eval(&a) - self.cost.value(&a)
    }
    fn gradient(&self, lambda: &[f64]) -> Vec<f64> {
        let a = self.mean(lambda);
        let g: Vec<f64> = self.plane.slope.iter().zip(self.cost.gradient(&a)).map(|(s, c)| s - c).collect();
        self.points.iter().map(|x| x.iter().zip(&g).map(|(xi, gi)| xi * gi).sum()).collect()
    }
}

/// Argmax of `payment(a) − c(a)` over the grid.
///
/// Near-ties are resolved by `principal(a)` when given, then by the
/// lexicographically smallest action.
pub fn best_response_grid(
    payment: &(dyn Fn(&[f64]) -> f64 + Sync),
    cost: &dyn Objective,
    grid: &[Vec<f64>],
    principal: Option<&(dyn Fn(&[f64]) -> f64 + Sync)>,
) -> Result<(Vec<f64>, f64)> {
    if grid.is_empty() {
        return Err(Error::Input("best-response grid is empty".into()));
    }
    let values: Vec<f64> = grid.par_iter().map(|a| payment(a) - cost.value(a)).collect();
    let top = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tie = 1e-12 * (1.0 + top.abs());
    let mut chosen: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if v < top - tie {
            continue;
        }
        chosen = Some(match chosen {
            None => i,
            Some(j) => {
                let pi = principal.map_or(0.0, |p| p(&grid[i]));
                let pj = principal.map_or(0.0, |p| p(&grid[j]));
                if pi > pj + 1e-12 || ((pi - pj).abs() <= 1e-12 && lex_less(&grid[i], &grid[j])) {
                    i
                } else {
                    j
                }
            }
        });
    }
    let i = chosen.expect("grid is nonempty");
    Ok((grid[i].clone(), values[i]))
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).find(|(x, y)| x != y).is_some_and(|(x, y)| x < y)
}

/// `max ‖∇f − central difference‖ / (1 + ‖∇f‖)` with step `1e-5`.
pub fn fd_gradient_check(spec: &FunctionSpec, points: &[Vec<f64>]) -> f64 {
    let h = 1e-5;
    points
        .iter()
        .map(|a| {
            let g = spec.gradient(a);
            let mut err = 0.0;
            for i in 0..a.len() {
                let mut up = a.clone();
                let mut down = a.clone();
                up[i] += h;
                down[i] -= h;
                let fd = (spec.value(&up) - spec.value(&down)) / (2.0 * h);
                err += (g[i] - fd).powi(2);
            }
            err.sqrt() / (1.0 + g.iter().map(|v| v * v).sum::<f64>().sqrt())
        })
        .fold(0.0, f64::max)
}

/// Finite-difference Hessian with steps `1e-4 · max(1, |aᵢ|)` and fourth-order stencils.
pub fn fd_hessian(f: &dyn Fn(&[f64]) -> f64, a: &[f64]) -> DMatrix<f64> {
    let d = a.len();
    let h: Vec<f64> = a.iter().map(|x| 1e-4 * x.abs().max(1.0)).collect();
    let shifted = |moves: &[(usize, f64)]| {
        let mut p = a.to_vec();
        for &(i, s) in moves {
            p[i] += s * h[i];
        }
        f(&p)
    };
    let f0 = f(a);
    let mut hess = DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        let v = -shifted(&[(i, 2.0)]) + 16.0 * shifted(&[(i, 1.0)]) - 30.0 * f0 + 16.0 * shifted(&[(i, -1.0)])
            - shifted(&[(i, -2.0)]);
        hess[(i, i)] = v / (12.0 * h[i] * h[i]);
        for j in 0..i {
            let s = |p: f64, q: f64| shifted(&[(i, p), (j, q)]);
            let v = 8.0 * (s(1.0, -2.0) + s(2.0, -1.0) + s(-2.0, 1.0) + s(-1.0, 2.0))
                - 8.0 * (s(-1.0, -2.0) + s(-2.0, -1.0) + s(1.0, 2.0) + s(2.0, 1.0))
                - (s(2.0, -2.0) + s(-2.0, 2.0) - s(-2.0, -2.0) - s(2.0, 2.0))
                + 64.0 * (s(-1.0, -1.0) + s(1.0, 1.0) - s(1.0, -1.0) - s(-1.0, 1.0));
            let hij = v / (144.0 * h[i] * h[j]);
            hess[(i, j)] = hij;
            hess[(j, i)] = hij;
        }
    }
    hess
}

/// Aggregate curvature statistics over sampled points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Curvature {
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    /// Largest absolute eigenvalue seen, for relative tolerances.
    pub spectral_scale: f64,
    pub min_off_diagonal: f64,
}

pub fn curvature_at(f: &dyn Fn(&[f64]) -> f64, points: &[Vec<f64>]) -> Curvature {
    let mut out = Curvature {
        min_eigenvalue: f64::INFINITY,
        max_eigenvalue: f64::NEG_INFINITY,
        spectral_scale: 0.0,
        min_off_diagonal: f64::INFINITY,
    };
    for a in points {
        let hess = fd_hessian(f, a);
        let d = a.len();
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    out.min_off_diagonal = out.min_off_diagonal.min(hess[(i, j)]);
                }
            }
        }
        let eig = SymmetricEigen::new(hess).eigenvalues;
        for &e in eig.iter() {
            out.min_eigenvalue = out.min_eigenvalue.min(e);
            out.max_eigenvalue = out.max_eigenvalue.max(e);
            out.spectral_scale = out.spectral_scale.max(e.abs());
        }
    }
    if out.min_off_diagonal == f64::INFINITY {
        out.min_off_diagonal = 0.0;
    }
    out
}

/// Sample points in `[0.1, 2]^d` from a fixed seed.
pub fn positive_samples(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| (0..dim).map(|_| rng.gen_range(0.1..2.0)).collect()).collect()
}

pub fn sampled_curvature(f: &dyn Fn(&[f64]) -> f64, dim: usize, count: usize, seed: u64) -> Curvature {
    curvature_at(f, &positive_samples(dim, count, seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcavityReport {
    pub is_concave: bool,
    pub max_eigenvalue: f64,
    pub is_supermodular: bool,
    pub min_off_diagonal: f64,
}

/// Sampled finite-difference Hessian test: concave when every eigenvalue is `≤ 1e-6`.
pub fn numeric_concavity_check(spec: &FunctionSpec, sample_count: usize) -> ConcavityReport {
    let points = positive_samples(spec.sampling_dimension(), sample_count.max(1), 0xc0ca);
    concavity_at(spec, &points)
}

pub fn concavity_at(spec: &dyn Objective, points: &[Vec<f64>]) -> ConcavityReport {
    let c = curvature_at(&|a: &[f64]| spec.value(a), points);
    ConcavityReport {
        is_concave: c.max_eigenvalue <= 1e-6,
        max_eigenvalue: c.max_eigenvalue,
        is_supermodular: c.min_off_diagonal >= -1e-6,
        min_off_diagonal: c.min_off_diagonal,
    }
}

/// Optimal objective by enumerating every basis of a full-row-rank LP with
/// zero lower bounds; `None` when no basic feasible solution exists.
pub fn lp_by_enumeration(problem: &LpProblem) -> Option<f64> {
    let n = problem.num_vars();
    let r = problem.num_rows();
    let a = DMatrix::from_fn(r, n, |i, j| problem.constraints[i][j]);
    let b = DVector::from_column_slice(&problem.rhs);
    let mut best: Option<f64> = None;
    let mut subset: Vec<usize> = (0..r).collect();
    loop {
        let basis = DMatrix::from_fn(r, r, |i, k| a[(i, subset[k])]);
        if let Some(x) = basis.lu().solve(&b) {
            let residual = (DMatrix::from_fn(r, r, |i, k| a[(i, subset[k])]) * &x - &b).amax();
            if residual < 1e-9 && x.iter().all(|v| *v >= -1e-10) {
                let obj: f64 = subset.iter().zip(x.iter()).map(|(&j, v)| problem.objective[j] * v).sum();
                best = Some(match (best, problem.sense) {
                    (None, _) => obj,
                    (Some(v), Sense::Minimize) => v.min(obj),
                    (Some(v), Sense::Maximize) => v.max(obj),
                });
            }
        }
        // Next r-subset of 0..n in lexicographic order.
        let mut i = r;
        while i > 0 && subset[i - 1] == n - r + i - 1 {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        subset[i - 1] += 1;
        for k in i..r {
            subset[k] = subset[k - 1] + 1;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::uniform_grid;

    #[test]
    fn best_response_examples() {
        let quad = FunctionSpec::norm_power(1.0, 2.0);
        let grid = uniform_grid(&[1.0, 1.0], 21);
        let (a, _) = best_response_grid(&|a: &[f64]| a[0] + a[1], &quad, &grid, None).unwrap();
        assert_eq!(a, vec![0.5, 0.5]);
        let (a, v) = best_response_grid(&|_: &[f64]| 0.0, &quad, &grid, None).unwrap();
        assert_eq!(a, vec![0.0, 0.0]);
        assert_eq!(v, 0.0);
        let sq = FunctionSpec::power_sum(vec![1.0], 2.0);
        let line = uniform_grid(&[1.0], 1001);
        let (a, _) = best_response_grid(&|a: &[f64]| 0.8 * a[0], &sq, &line, None).unwrap();
        assert!((a[0] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn ties_favor_principal_then_lexicographic() {
        let zero = FunctionSpec::linear(vec![0.0, 0.0]);
        let grid = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let (a, _) = best_response_grid(&|_: &[f64]| 1.0, &zero, &grid, None).unwrap();
        assert_eq!(a, vec![0.0, 1.0]);
        let (a, _) = best_response_grid(&|_: &[f64]| 1.0, &zero, &grid, Some(&|a: &[f64]| a[0])).unwrap();
        assert_eq!(a, vec![1.0, 0.0]);
    }

    #[test]
    fn fd_examples() {
        let pts = vec![vec![0.3, 0.7], vec![1.0, 1.0]];
        assert!(fd_gradient_check(&FunctionSpec::norm_power(1.0, 2.0), &pts) <= 1e-7);
        assert!(fd_gradient_check(&FunctionSpec::cobb_douglas(1.0, vec![0.2, 0.2]), &[vec![1.0, 1.0]]) <= 1e-6);
        assert!(fd_gradient_check(&FunctionSpec::power_sum(vec![1.0], 3.0), &[vec![2.0]]) <= 1e-6);
    }

    #[test]
    fn concavity_examples() {
        assert!(numeric_concavity_check(&FunctionSpec::cobb_douglas(1.0, vec![0.2, 0.2]), 50).is_concave);
        assert!(!numeric_concavity_check(&FunctionSpec::norm_power(1.0, 2.0), 50).is_concave);
        let r = numeric_concavity_check(&FunctionSpec::cobb_douglas(1.0, vec![0.5, 0.5]), 50);
        assert!(r.is_concave && r.is_supermodular);
    }

    #[test]
    fn worst_case_e2() {
        let space = OutcomeSpace::scalar(&[0.0, 0.5, 1.0]).unwrap();
        let w = TabularContract::new(vec![0.0, 0.4, 0.5]).unwrap();
        let grid = uniform_grid(&[1.0], 2001);
        let r = worst_case_payoff(
            &space,
            &w,
            &FunctionSpec::power_sum(vec![1.0], 2.0),
            &FunctionSpec::linear(vec![1.0]),
            &grid,
        )
        .unwrap();
        assert!((r.agent_floor - 0.0625).abs() < 1e-9);
        assert!((r.value - 0.01755).abs() < 1e-3);
        r.mapping.induced.validate(&space).unwrap();
    }

    #[test]
    fn enumeration_matches_hand_solution() {
        let p = LpProblem::new(
            Sense::Maximize,
            vec![0.0, 0.4, 0.5],
            vec![vec![0.0, 0.5, 1.0], vec![1.0, 1.0, 1.0]],
            vec![0.4, 1.0],
        );
        assert!((lp_by_enumeration(&p).unwrap() - 0.32).abs() < 1e-12);
    }
}
