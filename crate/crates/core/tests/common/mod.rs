//! Independent reference computations for the integration and acceptance tests.
//! Nothing here calls the LP or the envelope code of the library.

#![allow(dead_code)]

/// Solves `M λ = rhs` for a tall or square `M` (columns = unknowns).
/// Returns `None` unless the columns are independent and the system is consistent.
pub fn solve_exact(columns: &[Vec<f64>], rhs: &[f64]) -> Option<Vec<f64>> {
    let rows = rhs.len();
    let cols = columns.len();
    let mut m: Vec<Vec<f64>> = (0..rows).map(|r| (0..cols).map(|c| columns[c][r]).chain([rhs[r]]).collect()).collect();
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..cols {
        let (best, val) = (r..rows).map(|i| (i, m[i][c].abs())).fold((r, -1.0), |a, b| if b.1 > a.1 { b } else { a });
        if r >= rows || val < 1e-12 {
            return None;
        }
        m.swap(r, best);
        for i in 0..rows {
            if i != r {
                let f = m[i][c] / m[r][c];
                for j in c..=cols {
                    m[i][j] -= f * m[r][j];
                }
            }
        }
        pivots.push(r);
        r += 1;
    }
    if (r..rows).any(|i| m[i][cols].abs() > 1e-9) {
        return None;
    }
    Some((0..cols).map(|c| m[pivots[c]][cols] / m[pivots[c]][c]).collect())
}

fn subsets(m: usize, max_size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for mask in 1u32..(1 << m) {
        if (mask.count_ones() as usize) <= max_size {
            out.push((0..m).filter(|k| mask >> k & 1 == 1).collect());
        }
    }
    out
}

/// Best and worst `Σ λₖ wₖ` over mixtures with mean `a`, by enumerating affinely
/// independent supports of size at most `d + 1` (the vertices of the feasible polytope).
pub fn brute_envelopes(outcomes: &[Vec<f64>], payments: &[f64], a: &[f64]) -> Option<(f64, f64)> {
    let d = a.len();
    let mut rhs = vec![1.0];
    rhs.extend_from_slice(a);
    let mut best: Option<(f64, f64)> = None;
    for s in subsets(outcomes.len(), d + 1) {
        let cols: Vec<Vec<f64>> = s.iter().map(|&k| std::iter::once(1.0).chain(outcomes[k].iter().copied()).collect()).collect();
        let Some(lambda) = solve_exact(&cols, &rhs) else { continue };
        if lambda.iter().any(|l| *l < -1e-10) {
            continue;
        }
        let v: f64 = s.iter().zip(&lambda).map(|(&k, l)| l * payments[k]).sum();
        best = Some(match best {
            None => (v, v),
            Some((hi, lo)) => (hi.max(v), lo.min(v)),
        });
    }
    best
}

pub fn independence_number(vertices: usize, edges: &[(usize, usize)]) -> usize {
    (0u32..1 << vertices)
        .filter(|s| edges.iter().all(|&(i, j)| s >> i & 1 == 0 || s >> j & 1 == 0))
        .map(|s| s.count_ones() as usize)
        .max()
        .unwrap_or(0)
}

/// Maximizer of a unimodal function on `[lo, hi]`.
pub fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..200 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        }
    }
    let x = (lo + hi) / 2.0;
    (x, f(x))
}

/// Eigenvalues of a small symmetric matrix by cyclic Jacobi rotations.
pub fn symmetric_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                let t = sign / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

/// Exact Hessian of `s Π aᵢ^{θᵢ}`.
pub fn cobb_douglas_hessian(scale: f64, theta: &[f64], a: &[f64]) -> Vec<Vec<f64>> {
    let f = scale * theta.iter().zip(a).map(|(t, x)| x.powf(*t)).product::<f64>();
    let n = a.len();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let cross = f * theta[i] * theta[j] / (a[i] * a[j]);
                    if i == j { cross - f * theta[i] / (a[i] * a[i]) } else { cross }
                })
                .collect()
        })
        .collect()
}

/// `k_c^{−k_u/(k_c−k_u)}`.
pub fn bilateral_ratio(ku: f64, kc: f64) -> f64 {
    kc.powf(-ku / (kc - ku))
}

/// Two-principal welfare ratio with identical degree-`k_u` utilities.
pub fn agency_ratio(ku: f64, kc: f64) -> f64 {
    let b = 2.0 * kc - 1.0;
    (kc * b.powf(-ku / (kc - ku)) - ku * b.powf(-kc / (kc - ku))) / (kc - ku)
}

/// Scalar bilateral problem `u = aᵏᵘ`, `c = aᵏᶜ` solved by nested golden sections:
/// returns `(V_LIN, V_FB)`.
pub fn bilateral_values(ku: f64, kc: f64) -> (f64, f64) {
    let u = |a: f64| a.powf(ku);
    let c = |a: f64| a.powf(kc);
    let response = |phi: f64| golden_max(|a| phi * a - c(a), 0.0, 10.0).0;
    let (_, v_lin) = golden_max(|phi| {
        let a = response(phi);
        u(a) - phi * a
    }, 0.0, 10.0);
    let (_, v_fb) = golden_max(|a| u(a) - c(a), 0.0, 10.0);
    (v_lin, v_fb)
}
