//! Small geometric kernels: projections, grids, affine interpolation.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{dot, ActionDomain, OutcomeSpace};

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cumulative += ui;
        let t = (cumulative - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

pub fn project_box(a: &[f64], upper: &[f64]) -> Vec<f64> {
    a.iter().zip(upper).map(|(x, u)| x.clamp(0.0, *u)).collect()
}

/// Closest point of `conv(points)` to `y` together with convex weights (Wolfe's method).
pub fn project_onto_hull(points: &[Vec<f64>], y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = points.len();
    if m == 0 {
        return Err(Error::Input("cannot project onto an empty point set".into()));
    }
    let q: Vec<Vec<f64>> = points.iter().map(|p| p.iter().zip(y).map(|(a, b)| a - b).collect()).collect();
    let scale = q.iter().map(|v| dot(v, v)).fold(0.0, f64::max).max(1e-300);
    let tol = 1e-14 * scale;

    let first = (0..m).min_by(|&i, &j| dot(&q[i], &q[i]).partial_cmp(&dot(&q[j], &q[j])).unwrap()).unwrap();
    let mut corral = vec![first];
    let mut lambda = vec![1.0];
    let combine = |corral: &[usize], lambda: &[f64]| {
        let mut x = vec![0.0; y.len()];
        for (&k, &l) in corral.iter().zip(lambda) {
            for (xi, qi) in x.iter_mut().zip(&q[k]) {
                *xi += l * qi;
            }
        }
        x
    };
    let mut x = combine(&corral, &lambda);

    for _major in 0..(10 * m + 100) {
        let j = (0..m).min_by(|&i, &k| dot(&x, &q[i]).partial_cmp(&dot(&x, &q[k])).unwrap()).unwrap();
        if dot(&x, &x) - dot(&x, &q[j]) <= tol || corral.contains(&j) {
            break;
        }
        corral.push(j);
        lambda.push(0.0);
        for _minor in 0..(m + 10) {
            let mu = affine_minimizer(&q, &corral);
            if mu.iter().all(|&v| v > 1e-15) {
                lambda = mu;
                break;
            }
            let mut theta = 1.0_f64;
            for (l, u) in lambda.iter().zip(&mu) {
                if *u <= 1e-15 && l - u > 0.0 {
                    theta = theta.min(l / (l - u));
                }
            }
            for (l, u) in lambda.iter_mut().zip(&mu) {
                *l = theta * u + (1.0 - theta) * *l;
            }
            let mut k = 0;
            while k < corral.len() {
                if lambda[k] <= 1e-15 {
                    corral.remove(k);
                    lambda.remove(k);
                } else {
                    k += 1;
                }
            }
            let total: f64 = lambda.iter().sum();
            lambda.iter_mut().for_each(|l| *l /= total);
        }
        x = combine(&corral, &lambda);
    }

    let mut weights = vec![0.0; m];
    for (&k, &l) in corral.iter().zip(&lambda) {
        weights[k] = l;
    }
    let point = x.iter().zip(y).map(|(a, b)| a + b).collect();
    Ok((point, weights))
}

/// Minimizes `‖Σ μᵢ qᵢ‖` over the affine hull of the corral, `Σ μᵢ = 1`.
fn affine_minimizer(q: &[Vec<f64>], corral: &[usize]) -> Vec<f64> {
    let s = corral.len();
    let mut kkt = DMatrix::<f64>::zeros(s + 1, s + 1);
    for (a, &i) in corral.iter().enumerate() {
        for (b, &j) in corral.iter().enumerate() {
            kkt[(a, b)] = dot(&q[i], &q[j]);
        }
        kkt[(a, s)] = 1.0;
        kkt[(s, a)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(s + 1);
    rhs[s] = 1.0;
    let sol = kkt.clone().lu().solve(&rhs).unwrap_or_else(|| {
        kkt.svd(true, true).solve(&rhs, 1e-14).unwrap_or_else(|_| DVector::from_element(s + 1, 1.0 / s as f64))
    });
    sol.iter().take(s).copied().collect()
}

/// Point `i` of the Halton sequence in `d` dimensions on the unit cube.
pub fn halton(i: usize, d: usize) -> Vec<f64> {
    const PRIMES: [usize; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    (0..d)
        .map(|k| {
            let base = PRIMES[k % PRIMES.len()];
            let mut f = 1.0;
            let mut r = 0.0;
            let mut n = i + 1;
            while n > 0 {
                f /= base as f64;
                r += f * (n % base) as f64;
                n /= base;
            }
            r
        })
        .collect()
}

/// Tensor grid with `per_axis` points on each `[0, upperᵢ]`.
pub fn uniform_grid(upper: &[f64], per_axis: usize) -> Vec<Vec<f64>> {
    let per_axis = per_axis.max(2);
    let d = upper.len();
    let total = per_axis.pow(d as u32);
    (0..total)
        .map(|mut idx| {
            let mut point = vec![0.0; d];
            for (i, p) in point.iter_mut().enumerate() {
                let step = idx % per_axis;
                idx /= per_axis;
                *p = if step == per_axis - 1 { upper[i] } else { upper[i] * step as f64 / (per_axis - 1) as f64 };
            }
            point
        })
        .collect()
}

/// Default audit grid: `per_axis^d` tensor points for `d ≤ 2`, otherwise
/// `samples` Halton points in the bounding box; both intersected with the domain.
pub fn audit_grid(space: &OutcomeSpace, domain: &ActionDomain, per_axis: usize, samples: usize) -> Result<Vec<Vec<f64>>> {
    let upper = domain.bounding_box(space);
    let d = upper.len();
    let mut candidates = if d <= 2 {
        uniform_grid(&upper, per_axis)
    } else {
        let mut pts = vec![vec![0.0; d]];
        pts.extend((0..samples.saturating_sub(1)).map(|i| {
            halton(i, d).iter().zip(&upper).map(|(h, u)| h * u).collect::<Vec<f64>>()
        }));
        pts
    };
    let keep: Vec<bool> = candidates
        .par_iter()
        .map(|a| domain.contains(a, space))
        .collect::<Result<Vec<bool>>>()?;
    let mut k = 0;
    candidates.retain(|_| {
        k += 1;
        keep[k - 1]
    });
    if candidates.is_empty() {
        return Err(Error::Input("audit grid is empty".into()));
    }
    Ok(candidates)
}

/// Numerical rank of the point differences `xᵢ − x₀`.
pub fn affine_rank(points: &[&[f64]]) -> usize {
    if points.len() <= 1 {
        return 0;
    }
    let d = points[0].len();
    let rows = points.len() - 1;
    let m = DMatrix::from_fn(rows, d, |i, j| points[i + 1][j] - points[0][j]);
    m.rank(1e-9)
}

/// Minimum-norm `(ψ₀, ψ)` with `ψ₀ + ⟨ψ, xₖ⟩ = vₖ`, and whether the fit is exact.
pub fn affine_interpolant(points: &[&[f64]], values: &[f64]) -> (f64, Vec<f64>, f64) {
    let s = points.len();
    let d = points.first().map_or(0, |p| p.len());
    let a = DMatrix::from_fn(s, d + 1, |i, j| if j == 0 { 1.0 } else { points[i][j - 1] });
    let b = DVector::from_column_slice(values);
    let z = a
        .clone()
        .svd(true, true)
        .solve(&b, 1e-12)
        .unwrap_or_else(|_| DVector::zeros(d + 1));
    let fit = &a * &z;
    let residual = (fit - b).amax();
    (z[0], z.iter().skip(1).copied().collect(), residual)
}
