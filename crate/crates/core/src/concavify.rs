//! Self-inducing actions, dominating distributions, and the improvement of
//! tabular contracts (and common-agency profiles) to linear/affine ones.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envelope::{caratheodory_reduce, contact_set, upper_envelope, upper_facets};
use crate::error::{Error, Result};
use crate::geometry::{affine_interpolant, affine_rank, project_box, project_onto_hull, project_simplex};
use crate::lp::{LpBuilder, LpStatus, RowKind, Sense};
use crate::model::{
    dot, max_abs_diff, ActionDomain, AffineContract, DistributionAtAction, FunctionSpec, LinearContract, Objective,
    OutcomeSpace, TabularContract,
};

const CONTACT_TOL: f64 = 1e-7;
const VERIFY_TOL: f64 = 1e-5;
const ACTIVE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateResiduals {
    /// `‖∇c(a♯) − ψ + ν‖∞` with `ν` the domain normal component.
    pub alignment: f64,
    /// `max(0, maxₖ w(xₖ) − ψ(xₖ))`.
    pub support: f64,
    /// `|ψ(a♯) − w̄(a♯)|`.
    pub envelope_touch: f64,
    /// Worst compatibility residual of `λ`.
    pub compatibility: f64,
}

impl CertificateResiduals {
    pub fn max(&self) -> f64 {
        self.alignment.max(self.support).max(self.envelope_touch).max(self.compatibility)
    }
}

/// Which minimization route produced the action, with the objective each reached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverTrace {
    pub method: String,
    pub subgradient_objective: f64,
    pub subgradient_iterations: usize,
    pub facet_objective: Option<f64>,
    pub lifted_objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfInducingCertificate {
    pub action: Vec<f64>,
    pub psi: AffineContract,
    pub contact: Vec<usize>,
    pub lambda: DistributionAtAction,
    /// `c(a♯) − w̄(a♯)`.
    pub objective: f64,
    pub envelope_value: f64,
    /// Normal-cone component `ν` of the boundary KKT condition; zero in the interior.
    pub normal: Vec<f64>,
    pub interior: bool,
    pub domain: ActionDomain,
    pub residuals: CertificateResiduals,
    pub solver: SolverTrace,
}

/// `min_{a ∈ domain} c(a) − w̄(a)` and its certificate.
pub fn find_self_inducing(
    space: &OutcomeSpace,
    w: &TabularContract,
    cost: &FunctionSpec,
    domain: &ActionDomain,
) -> Result<SelfInducingCertificate> {
    w.check_against(space)?;
    domain.check_against(space)?;
    cost.check_dimension(space.dimension())?;
    let upper = match domain {
        ActionDomain::Box { upper } => Some(upper.as_slice()),
        ActionDomain::Hull => None,
    };
    let objective_at = |a: &[f64]| -> Result<f64> { Ok(cost.value(a) - upper_envelope(space, w, a)?.value) };

    let points: Vec<&[f64]> = space.outcomes().iter().map(|x| x.as_slice()).collect();
    let lifted = solve_lifted(&points, &w.payments, cost, upper);
    let lifted_obj = objective_at(&lifted)?;
    let mut best = (lifted.clone(), lifted_obj, "lifted");

    let mut facet_obj = None;
    if space.dimension() <= 2 {
        let facets = upper_facets(space, w)?;
        let candidates: Vec<(Vec<f64>, f64)> = facets
            .par_iter()
            .filter_map(|f| {
                let pts: Vec<&[f64]> = f.vertices.iter().map(|&k| points[k]).collect();
                let vals: Vec<f64> = f.vertices.iter().map(|&k| w.payments[k]).collect();
                let a = solve_lifted(&pts, &vals, cost, upper);
                if !domain.contains(&a, space).unwrap_or(false) {
                    return None;
                }
                objective_at(&a).ok().map(|v| (a, v))
            })
            .collect();
        for (a, v) in candidates {
            if facet_obj.map_or(true, |b| v < b) {
                facet_obj = Some(v);
            }
            if v < best.1 - 1e-15 {
                best = (a, v, "facet");
            }
        }
    }

    let (sub_a, sub_obj, sub_iters) = projected_subgradient(space, w, cost, domain)?;
    if sub_obj < best.1 - 1e-15 {
        best = (sub_a, sub_obj, "subgradient");
    }

    let trace = SolverTrace {
        method: best.2.to_string(),
        subgradient_objective: sub_obj,
        subgradient_iterations: sub_iters,
        facet_objective: facet_obj,
        lifted_objective: lifted_obj,
    };
    certify(space, w, cost, domain, &best.0, trace)
}

/// Builds the certificate at a candidate action: envelope, aligned supergradient, contact set.
pub fn certify(
    space: &OutcomeSpace,
    w: &TabularContract,
    cost: &FunctionSpec,
    domain: &ActionDomain,
    a: &[f64],
    solver: SolverTrace,
) -> Result<SelfInducingCertificate> {
    let env = upper_envelope(space, w, a)?;
    let grad = cost.gradient(a);
    let (slope, normal, alignment) = align_supergradient(space, w, domain, a, env.value, &grad)?;
    let intercept = env.value - dot(&slope, a);
    let psi = AffineContract::new(intercept, slope);
    let contact = contact_set(space, w, &psi, CONTACT_TOL)?;
    let lambda = env.weights.clone();
    let support = space
        .outcomes()
        .iter()
        .zip(&w.payments)
        .map(|(x, wk)| wk - psi.eval(x))
        .fold(0.0, f64::max);
    let compat = lambda.residuals(space);
    let residuals = CertificateResiduals {
        alignment,
        support,
        envelope_touch: (psi.eval(a) - env.value).abs(),
        compatibility: compat.weight_sum.max(compat.mean).max((-compat.min_weight).max(0.0)),
    };
    if let Some(&k) = lambda.support.iter().find(|k| !contact.contains(k)) {
        return Err(Error::numeric_with(
            format!("envelope weight on outcome {k} outside the contact set"),
            [("support", support)],
        ));
    }
    let interior = normal.iter().all(|v| *v == 0.0) && active_sets(domain, a).iter().all(|s| *s == Active::Free);
    Ok(SelfInducingCertificate {
        action: a.to_vec(),
        psi,
        contact,
        lambda,
        objective: cost.value(a) - env.value,
        envelope_value: env.value,
        normal,
        interior,
        domain: domain.clone(),
        residuals,
        solver,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Active {
    Free,
    Lower,
    Upper,
}

fn active_sets(domain: &ActionDomain, a: &[f64]) -> Vec<Active> {
    match domain {
        ActionDomain::Box { upper } => a
            .iter()
            .zip(upper)
            .map(|(x, u)| {
                if *x <= ACTIVE_TOL {
                    Active::Lower
                } else if *x >= u - ACTIVE_TOL {
                    Active::Upper
                } else {
                    Active::Free
                }
            })
            .collect(),
        ActionDomain::Hull => vec![Active::Free; a.len()],
    }
}

/// Supergradient `p` of `w̄` at `a` and normal component `ν` minimizing `‖∇c − p + ν‖∞`.
fn align_supergradient(
    space: &OutcomeSpace,
    w: &TabularContract,
    domain: &ActionDomain,
    a: &[f64],
    value: f64,
    grad: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let d = a.len();
    let active = active_sets(domain, a);
    let mut lp = LpBuilder::new(Sense::Minimize);
    let p: Vec<usize> = (0..d).map(|_| lp.var(0.0, true)).collect();
    let p0 = lp.var(0.0, true);
    let s = lp.var(1.0, false);
    // ν = ν⁺ at upper-active coordinates, −ν⁻ at lower-active ones.
    let nu: Vec<Option<usize>> = active.iter().map(|act| (*act != Active::Free).then(|| lp.var(0.0, false))).collect();
    for (x, wk) in space.outcomes().iter().zip(&w.payments) {
        let mut row: Vec<(usize, f64)> = p.iter().zip(x).map(|(&j, xi)| (j, *xi)).collect();
        row.push((p0, 1.0));
        lp.row(row, RowKind::Ge, *wk);
    }
    let mut touch: Vec<(usize, f64)> = p.iter().zip(a).map(|(&j, ai)| (j, *ai)).collect();
    touch.push((p0, 1.0));
    lp.row(touch, RowKind::Eq, value);
    for i in 0..d {
        let sign = if active[i] == Active::Lower { -1.0 } else { 1.0 };
        // ∇cᵢ − pᵢ + νᵢ ≤ s and ≥ −s.
        let mut hi = vec![(p[i], -1.0), (s, -1.0)];
        let mut lo = vec![(p[i], -1.0), (s, 1.0)];
        if let Some(j) = nu[i] {
            hi.push((j, sign));
            lo.push((j, sign));
        }
        lp.row(hi, RowKind::Le, -grad[i]);
        lp.row(lo, RowKind::Ge, -grad[i]);
    }
    let sol = lp.solve()?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::numeric_with(
            "no supporting hyperplane of the envelope passes through the candidate action",
            [("envelope_value", value)],
        ));
    }
    let slope: Vec<f64> = p.iter().map(|&j| sol.values[j]).collect();
    let normal: Vec<f64> = (0..d)
        .map(|i| match nu[i] {
            Some(j) if active[i] == Active::Lower => -sol.values[j],
            Some(j) => sol.values[j],
            None => 0.0,
        })
        .collect();
    let alignment = (0..d).map(|i| (grad[i] - slope[i] + normal[i]).abs()).fold(0.0, f64::max);
    Ok((slope, normal, alignment))
}

/// `min_{λ ∈ Δ} c(Xλ) − vᵀλ`, with `Xλ ≤ upper` handled by an augmented Lagrangian.
fn solve_lifted(points: &[&[f64]], values: &[f64], cost: &dyn Objective, upper: Option<&[f64]>) -> Vec<f64> {
    let s = points.len();
    let d = points[0].len();
    let mix = |lambda: &[f64]| {
        let mut a = vec![0.0; d];
        for (l, x) in lambda.iter().zip(points) {
            for (ai, xi) in a.iter_mut().zip(x.iter()) {
                *ai += l * xi;
            }
        }
        a
    };
    let mut lambda = vec![1.0 / s as f64; s];
    let mut mu = vec![0.0; d];
    let rho = 10.0;
    let outer_rounds = if upper.is_some() { 60 } else { 1 };
    for _ in 0..outer_rounds {
        let penalty = |a: &[f64]| -> (f64, Vec<f64>) {
            let Some(u) = upper else { return (0.0, vec![0.0; d]) };
            let mut val = 0.0;
            let mut grad = vec![0.0; d];
            for i in 0..d {
                let t = (a[i] - u[i] + mu[i] / rho).max(0.0);
                val += 0.5 * rho * t * t - mu[i] * mu[i] / (2.0 * rho);
                grad[i] = rho * t;
            }
            (val, grad)
        };
        let value = |lambda: &[f64]| {
            let a = mix(lambda);
            cost.value(&a) - dot(values, lambda) + penalty(&a).0
        };
        let gradient = |lambda: &[f64]| {
            let a = mix(lambda);
            let mut ga = cost.gradient(&a);
            for (g, p) in ga.iter_mut().zip(penalty(&a).1) {
                *g += p;
            }
            points.iter().zip(values).map(|(x, v)| dot(&ga, x) - v).collect::<Vec<f64>>()
        };
        lambda = fista_simplex(&value, &gradient, lambda, 20_000);
        if let Some(u) = upper {
            let a = mix(&lambda);
            let mut change = 0.0_f64;
            for i in 0..d {
                let next = (mu[i] + rho * (a[i] - u[i])).max(0.0);
                change = change.max((next - mu[i]).abs());
                mu[i] = next;
            }
            if change < 1e-13 {
                break;
            }
        }
    }
    let a = mix(&lambda);
    match upper {
        Some(u) => project_box(&a, u),
        None => a.into_iter().map(|v| v.max(0.0)).collect(),
    }
}

/// Accelerated projected gradient on the simplex with backtracking and function-value restarts.
fn fista_simplex(
    value: &dyn Fn(&[f64]) -> f64,
    gradient: &dyn Fn(&[f64]) -> Vec<f64>,
    start: Vec<f64>,
    max_iter: usize,
) -> Vec<f64> {
    let mut x = project_simplex(&start);
    let mut fx = value(&x);
    let mut y = x.clone();
    let mut t = 1.0_f64;
    let mut lip = 1.0_f64;
    for _ in 0..max_iter {
        let fy = value(&y);
        let g = gradient(&y);
        let mut z;
        loop {
            let step: Vec<f64> = y.iter().zip(&g).map(|(yi, gi)| yi - gi / lip).collect();
            z = project_simplex(&step);
            let diff: Vec<f64> = z.iter().zip(&y).map(|(a, b)| a - b).collect();
            let model = fy + dot(&g, &diff) + 0.5 * lip * dot(&diff, &diff);
            if value(&z) <= model + 1e-15 * (1.0 + fy.abs()) || lip > 1e16 {
                break;
            }
            lip *= 2.0;
        }
        let fz = value(&z);
        let mapping = max_abs_diff(&z, &y) * lip;
        if fz > fx {
            // Restart momentum from the last accepted point.
            y = x.clone();
            t = 1.0;
            if mapping < 1e-13 {
                break;
            }
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let momentum = (t - 1.0) / t_next;
        y = z.iter().zip(&x).map(|(zi, xi)| zi + momentum * (zi - xi)).collect();
        x = z;
        fx = fz;
        t = t_next;
        lip *= 0.95;
        if mapping < 1e-13 {
            break;
        }
    }
    x
}

/// Projected subgradient with step `D/√t` along the normalized subgradient `∇c − p(a)`.
fn projected_subgradient(
    space: &OutcomeSpace,
    w: &TabularContract,
    cost: &FunctionSpec,
    domain: &ActionDomain,
) -> Result<(Vec<f64>, f64, usize)> {
    let d = space.dimension();
    let project = |a: &[f64]| -> Result<Vec<f64>> {
        match domain {
            ActionDomain::Box { upper } => Ok(project_box(a, upper)),
            ActionDomain::Hull => Ok(project_onto_hull(space.outcomes(), a)?.0),
        }
    };
    let bbox = domain.bounding_box(space);
    let diameter = bbox.iter().map(|u| u * u).sum::<f64>().sqrt().max(1e-12);
    let mut a = match domain {
        ActionDomain::Box { upper } => upper.iter().map(|u| 0.5 * u).collect(),
        ActionDomain::Hull => {
            let m = space.len() as f64;
            (0..d).map(|i| space.outcomes().iter().map(|x| x[i]).sum::<f64>() / m).collect::<Vec<f64>>()
        }
    };
    let mut average = a.clone();
    let mut best = (a.clone(), f64::INFINITY);
    let mut last_improvement = 0usize;
    let mut iterations = 0;
    for t in 1..=20_000usize {
        iterations = t;
        let env = upper_envelope(space, w, &a)?;
        let obj = cost.value(&a) - env.value;
        if obj < best.1 - 1e-10 {
            last_improvement = t;
        }
        if obj < best.1 {
            best = (a.clone(), obj);
        }
        if t % 25 == 0 {
            let avg_obj = cost.value(&average) - upper_envelope(space, w, &average)?.value;
            if avg_obj < best.1 - 1e-10 {
                last_improvement = t;
            }
            if avg_obj < best.1 {
                best = (average.clone(), avg_obj);
            }
        }
        if t - last_improvement >= 50 {
            break;
        }
        let g: Vec<f64> = cost.gradient(&a).iter().zip(&env.slope).map(|(gc, p)| gc - p).collect();
        let norm = dot(&g, &g).sqrt();
        if norm < 1e-14 {
            break;
        }
        let step = diameter / (t as f64).sqrt() / norm;
        let next: Vec<f64> = a.iter().zip(&g).map(|(ai, gi)| ai - step * gi).collect();
        a = project(&next)?;
        let weight = 1.0 / (t as f64 + 1.0);
        for (m, ai) in average.iter_mut().zip(&a) {
            *m += weight * (ai - *m);
        }
    }
    Ok((best.0, best.1, iterations))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub residuals: CertificateResiduals,
    /// How far `ν` is from the domain's normal cone at the action.
    pub normal_cone: f64,
    /// How far the action is outside the domain.
    pub feasibility: f64,
    /// Largest `λ` weight placed outside the recomputed contact set.
    pub contact_support: f64,
    pub max_residual: f64,
    pub passed: bool,
}

/// Independent recomputation of every certificate invariant.
pub fn verify_self_inducing(
    cert: &SelfInducingCertificate,
    space: &OutcomeSpace,
    w: &TabularContract,
    cost: &FunctionSpec,
) -> VerificationReport {
    let a = &cert.action;
    let failed = |feasibility: f64| VerificationReport {
        residuals: CertificateResiduals {
            alignment: f64::INFINITY,
            support: f64::INFINITY,
            envelope_touch: f64::INFINITY,
            compatibility: f64::INFINITY,
        },
        normal_cone: f64::INFINITY,
        feasibility,
        contact_support: f64::INFINITY,
        max_residual: f64::INFINITY,
        passed: false,
    };
    if a.len() != space.dimension() || w.check_against(space).is_err() {
        return failed(f64::INFINITY);
    }
    let env = match upper_envelope(space, w, a) {
        Ok(env) => env,
        Err(_) => return failed(f64::INFINITY),
    };
    let grad = cost.gradient(a);
    let alignment = (0..a.len())
        .map(|i| (grad[i] - cert.psi.slope.get(i).copied().unwrap_or(f64::NAN) + cert.normal.get(i).copied().unwrap_or(0.0)).abs())
        .fold(0.0, |m: f64, v| if v.is_nan() { f64::INFINITY } else { m.max(v) });
    let gaps: Vec<f64> = space.outcomes().iter().zip(&w.payments).map(|(x, wk)| cert.psi.eval(x) - wk).collect();
    let support = gaps.iter().map(|g| -g).fold(0.0, f64::max);
    let compat = cert.lambda.residuals(space);
    let mut lambda_action_gap = max_abs_diff(&cert.lambda.action, a);
    if cert.lambda.action.len() != a.len() {
        lambda_action_gap = f64::INFINITY;
    }
    let mean_gap = max_abs_diff(&cert.lambda.mean(space), a);
    let residuals = CertificateResiduals {
        alignment,
        support,
        envelope_touch: (cert.psi.eval(a) - env.value).abs(),
        compatibility: compat.weight_sum.max(mean_gap).max((-compat.min_weight).max(0.0)).max(lambda_action_gap),
    };
    let contact_support = cert
        .lambda
        .support
        .iter()
        .zip(&cert.lambda.weights)
        .filter(|(&k, _)| gaps.get(k).map_or(true, |g| g.abs() > CONTACT_TOL))
        .map(|(_, w)| *w)
        .fold(0.0, f64::max);
    let (normal_cone, feasibility) = match &cert.domain {
        ActionDomain::Box { upper } => {
            let mut cone = 0.0_f64;
            let mut feas = 0.0_f64;
            for i in 0..a.len() {
                let nu = cert.normal.get(i).copied().unwrap_or(0.0);
                feas = feas.max(-a[i]).max(a[i] - upper[i]);
                cone = cone.max(if a[i] <= ACTIVE_TOL {
                    nu.max(0.0)
                } else if a[i] >= upper[i] - ACTIVE_TOL {
                    (-nu).max(0.0)
                } else {
                    nu.abs()
                });
            }
            (cone, feas)
        }
        ActionDomain::Hull => (cert.normal.iter().map(|v| v.abs()).fold(0.0, f64::max), 0.0),
    };
    let max_residual = residuals.max().max(normal_cone).max(feasibility).max(contact_support);
    VerificationReport {
        residuals,
        normal_cone,
        feasibility,
        contact_support,
        max_residual,
        passed: max_residual <= VERIFY_TOL,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditPoint {
    pub action: Vec<f64>,
    /// `w̄(a) − c(a)`.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominatingDistribution {
    pub distribution: DistributionAtAction,
    pub expected_payment: f64,
    pub psi_at_action: f64,
    /// `max_grid [w̄(a) − c(a)] − [w̄(a♯) − c(a♯)]`.
    pub best_response_gap: f64,
    pub worst_action: Vec<f64>,
    pub audit: Vec<AuditPoint>,
}

/// `F♯ = λ`, audited: it pays `ψ♯(a♯)` and no grid action beats `a♯` under `w̄`.
pub fn build_dominating_distribution(
    cert: &SelfInducingCertificate,
    space: &OutcomeSpace,
    w: &TabularContract,
    cost: &FunctionSpec,
    audit_grid: &[Vec<f64>],
) -> Result<DominatingDistribution> {
    let check = verify_self_inducing(cert, space, w, cost);
    if !check.passed {
        return Err(Error::Precondition(format!(
            "certificate fails verification (max residual {:.3e})",
            check.max_residual
        )));
    }
    let expected_payment = cert.lambda.expectation(&w.payments);
    let psi_at_action = cert.psi.eval(&cert.action);
    if (expected_payment - psi_at_action).abs() > 1e-8 {
        return Err(Error::numeric_with(
            format!("expected payment under F♯ differs from ψ♯(a♯) at {:?}", cert.action),
            [("expected_payment", expected_payment), ("psi_at_action", psi_at_action)],
        ));
    }
    let audit: Vec<AuditPoint> = audit_grid
        .par_iter()
        .map(|a| Ok(AuditPoint { action: a.clone(), value: upper_envelope(space, w, a)?.value - cost.value(a) }))
        .collect::<Result<Vec<_>>>()?;
    let reference = cert.envelope_value - cost.value(&cert.action);
    let (worst_action, best_response_gap) = audit
        .iter()
        .map(|p| (p.action.clone(), p.value - reference))
        .fold((cert.action.clone(), f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
    if best_response_gap > 1e-6 {
        return Err(Error::numeric_with(
            format!("grid action {worst_action:?} beats the self-inducing action"),
            [("best_response_gap", best_response_gap)],
        ));
    }
    Ok(DominatingDistribution {
        distribution: cert.lambda.clone(),
        expected_payment,
        psi_at_action,
        best_response_gap,
        worst_action,
        audit,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linearization {
    pub contract: LinearContract,
    pub linear_payment: f64,
    pub affine_payment: f64,
    /// Gradient entries that were slightly negative and clamped to zero.
    pub clamped: Vec<usize>,
    /// `max_grid ⟨φ,a⟩ − c(a)` minus the agent's value at `a♯`.
    pub grid_response_gap: f64,
}

/// Replaces `ψ♯` by `φ = ∇c(a♯)`, which induces `a♯` at no larger expected payment.
pub fn affine_to_linear(
    cert: &SelfInducingCertificate,
    cost: &FunctionSpec,
    domain: &ActionDomain,
    space: &OutcomeSpace,
    audit_grid: &[Vec<f64>],
) -> Result<Linearization> {
    if !domain.contains_origin(space) {
        return Err(Error::Precondition("the action domain must contain the origin".into()));
    }
    let a = &cert.action;
    let grad = cost.gradient(a);
    let mut clamped = Vec::new();
    let mut slope = Vec::with_capacity(grad.len());
    for (i, g) in grad.iter().enumerate() {
        if *g < -1e-10 {
            return Err(Error::Model(format!("cost decreases in coordinate {i} at the self-inducing action ({g:.3e})")));
        }
        if *g < 0.0 {
            clamped.push(i);
        }
        slope.push(g.max(0.0));
    }
    let contract = LinearContract::new(slope)?;
    let linear_payment = contract.eval(a);
    let affine_payment = cert.psi.eval(a);
    if linear_payment > affine_payment + 1e-8 {
        return Err(Error::numeric_with(
            "linear contract pays more than the supporting affine contract",
            [("linear_payment", linear_payment), ("affine_payment", affine_payment)],
        ));
    }
    let at_action = linear_payment - cost.value(a);
    let grid_best = audit_grid
        .par_iter()
        .map(|x| contract.eval(x) - cost.value(x))
        .reduce(|| f64::NEG_INFINITY, f64::max);
    let grid_response_gap = grid_best - at_action;
    if grid_response_gap > 1e-9 {
        return Err(Error::numeric_with(
            "a grid action beats the self-inducing action under the linear contract",
            [("grid_response_gap", grid_response_gap)],
        ));
    }
    Ok(Linearization { contract, linear_payment, affine_payment, clamped, grid_response_gap })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementReport {
    pub contract: TabularContract,
    pub certificate: SelfInducingCertificate,
    pub verification: VerificationReport,
    pub dominating: DominatingDistribution,
    pub linear: Linearization,
    /// `u(a♯) − ⟨φ, a♯⟩`.
    pub value_linear: f64,
    /// `u(a♯) − Σ λₖ w(xₖ)`.
    pub value_tabular: f64,
    pub gap: f64,
}

/// The full pipeline: certificate, dominating distribution, linear contract, payoff comparison.
pub fn improve_contract(
    space: &OutcomeSpace,
    w: &TabularContract,
    cost: &FunctionSpec,
    utility: &FunctionSpec,
    domain: &ActionDomain,
    audit_grid: &[Vec<f64>],
) -> Result<ImprovementReport> {
    let d = space.dimension();
    utility.check_dimension(d)?;
    let certificate = find_self_inducing(space, w, cost, domain)?;
    let verification = verify_self_inducing(&certificate, space, w, cost);
    let dominating = build_dominating_distribution(&certificate, space, w, cost, audit_grid)?;
    let linear = affine_to_linear(&certificate, cost, domain, space, audit_grid)?;
    let u = utility.value(&certificate.action);
    let value_linear = u - linear.linear_payment;
    let value_tabular = u - dominating.expected_payment;
    let gap = value_linear - value_tabular;
    if gap < -1e-6 {
        return Err(Error::numeric_with("linear contract does worse than the tabular one", [("gap", gap)]));
    }
    Ok(ImprovementReport {
        contract: w.clone(),
        certificate,
        verification,
        dominating,
        linear,
        value_linear,
        value_tabular,
        gap,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrincipalReport {
    pub contract: AffineContract,
    pub affine_payment: f64,
    pub tabular_payment: f64,
    pub payoff_affine: f64,
    pub payoff_tabular: f64,
    /// Outcomes where this principal's affine payment is negative.
    pub negative_outcomes: Vec<usize>,
    pub interpolation_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub aggregate: ImprovementReport,
    /// Carathéodory-reduced `F♯`.
    pub reduced: DistributionAtAction,
    /// Interpolation nodes: the reduced support, extended within the contact set when possible.
    pub nodes: Vec<usize>,
    /// True when the nodes are `d + 1` affinely independent points.
    pub exact: bool,
    /// Set when the minimum-norm fallback was used.
    pub flagged: bool,
    pub principals: Vec<PrincipalReport>,
    /// `‖Σᵢ ψᵢ − ψ♯‖` over the nodes.
    pub sum_residual: f64,
    /// `|Σᵢ E_F♯[ψᵢ] − E_F♯[Σᵢ wᵢ]|`.
    pub consistency: f64,
}

/// Decomposes the aggregate pipeline into an affine profile, one contract per principal.
pub fn improve_profile(
    space: &OutcomeSpace,
    contracts: &[TabularContract],
    cost: &FunctionSpec,
    utilities: &[FunctionSpec],
    domain: &ActionDomain,
    audit_grid: &[Vec<f64>],
) -> Result<ProfileReport> {
    let n = contracts.len();
    if n < 2 {
        return Err(Error::Input(format!("a profile needs at least 2 principals, got {n}")));
    }
    if utilities.len() != n {
        return Err(Error::Input(format!("{n} contracts but {} utilities", utilities.len())));
    }
    for c in contracts {
        c.check_against(space)?;
    }
    let m = space.len();
    let total: Vec<f64> = (0..m).map(|k| contracts.iter().map(|c| c.payments[k]).sum()).collect();
    if let Some(k) = (0..m).find(|&k| total[k] < 0.0) {
        return Err(Error::Input(format!("aggregate payment at outcome {k} is negative ({})", total[k])));
    }
    let aggregate_contract = TabularContract::new(total)?;
    let d = space.dimension();
    let zero_utility = FunctionSpec::linear(vec![0.0; d]);
    let aggregate = improve_contract(space, &aggregate_contract, cost, &zero_utility, domain, audit_grid)?;
    let cert = &aggregate.certificate;

    let reduced = caratheodory_reduce(space, &cert.lambda);
    let mut nodes = reduced.support.clone();
    for &k in &cert.contact {
        if nodes.len() >= d + 1 {
            break;
        }
        if nodes.contains(&k) {
            continue;
        }
        let mut trial: Vec<&[f64]> = nodes.iter().map(|&j| space.outcomes()[j].as_slice()).collect();
        trial.push(&space.outcomes()[k]);
        if affine_rank(&trial) == trial.len() - 1 {
            nodes.push(k);
        }
    }
    let node_points: Vec<&[f64]> = nodes.iter().map(|&j| space.outcomes()[j].as_slice()).collect();
    let exact = nodes.len() == d + 1 && affine_rank(&node_points) == d;
    let psi = &cert.psi;
    let share = 1.0 / n as f64;

    let mut principals = Vec::with_capacity(n);
    for (i, wi) in contracts.iter().enumerate() {
        let contract = if exact {
            let vals: Vec<f64> = nodes.iter().map(|&k| wi.payments[k]).collect();
            let (c0, c, _) = affine_interpolant(&node_points, &vals);
            AffineContract::new(c0, c)
        } else {
            // ψᵢ = MN(wᵢ − ψ♯/n) + ψ♯/n keeps Σᵢ ψᵢ = ψ♯ everywhere.
            let vals: Vec<f64> = nodes.iter().map(|&k| wi.payments[k] - share * psi.eval(&space.outcomes()[k])).collect();
            let (c0, c, _) = affine_interpolant(&node_points, &vals);
            AffineContract::new(c0 + share * psi.intercept, c.iter().zip(&psi.slope).map(|(a, b)| a + share * b).collect())
        };
        let interpolation_residual =
            nodes.iter().map(|&k| (contract.eval(&space.outcomes()[k]) - wi.payments[k]).abs()).fold(0.0, f64::max);
        let affine_payment = contract.eval(&cert.action);
        let tabular_payment = cert.lambda.expectation(&wi.payments);
        let u = utilities[i].value(&cert.action);
        let negative_outcomes = (0..m).filter(|&k| contract.eval(&space.outcomes()[k]) < -1e-12).collect();
        principals.push(PrincipalReport {
            contract,
            affine_payment,
            tabular_payment,
            payoff_affine: u - affine_payment,
            payoff_tabular: u - tabular_payment,
            negative_outcomes,
            interpolation_residual,
        });
    }
    let sum_residual = nodes
        .iter()
        .map(|&k| {
            let x = &space.outcomes()[k];
            (principals.iter().map(|p| p.contract.eval(x)).sum::<f64>() - psi.eval(x)).abs()
        })
        .fold(0.0, f64::max);
    let consistency = (principals.iter().map(|p| cert.lambda.expectation(&p.contract.on_space(space))).sum::<f64>()
        - cert.lambda.expectation(&aggregate_contract.payments))
    .abs();
    if sum_residual > 1e-7 || consistency > 1e-7 {
        return Err(Error::numeric_with(
            "affine profile does not reproduce the aggregate",
            [("sum_residual", sum_residual), ("consistency", consistency)],
        ));
    }
    for (i, p) in principals.iter().enumerate() {
        if (p.affine_payment - p.tabular_payment).abs() > 1e-7 {
            return Err(Error::numeric_with(
                format!("principal {i} expected payment changed under the affine profile"),
                [("affine", p.affine_payment), ("tabular", p.tabular_payment)],
            ));
        }
    }
    Ok(ProfileReport {
        aggregate,
        reduced,
        nodes,
        exact,
        flagged: !exact,
        principals,
        sum_residual,
        consistency,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{audit_grid, uniform_grid};

    fn e1() -> (OutcomeSpace, TabularContract) {
        let space =
            OutcomeSpace::new(2, vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        (space, TabularContract::new(vec![0.0, 2.0, 2.0, 3.0]).unwrap())
    }

    fn e2() -> (OutcomeSpace, TabularContract) {
        (OutcomeSpace::scalar(&[0.0, 0.5, 1.0]).unwrap(), TabularContract::new(vec![0.0, 0.4, 0.5]).unwrap())
    }

    #[test]
    fn e1_certificate() {
        let (space, w) = e1();
        let cost = FunctionSpec::norm_power(1.0, 2.0);
        let cert = find_self_inducing(&space, &w, &cost, &ActionDomain::Hull).unwrap();
        assert!(max_abs_diff(&cert.action, &[0.5, 0.5]) < 1e-6, "{:?}", cert.action);
        assert!((cert.psi.intercept - 1.0).abs() < 1e-6);
        assert!(max_abs_diff(&cert.psi.slope, &[1.0, 1.0]) < 1e-6);
        assert_eq!(cert.contact, vec![1, 2, 3]);
        assert!((cert.objective + 1.5).abs() < 1e-9);
        assert!(verify_self_inducing(&cert, &space, &w, &cost).max_residual <= 1e-6);
    }

    #[test]
    fn e2_certificate_and_perturbation() {
        let (space, w) = e2();
        let cost = FunctionSpec::power_sum(vec![1.0], 2.0);
        let cert = find_self_inducing(&space, &w, &cost, &ActionDomain::Hull).unwrap();
        assert!((cert.action[0] - 0.4).abs() < 1e-7);
        assert!((cert.psi.slope[0] - 0.8).abs() < 1e-7 && cert.psi.intercept.abs() < 1e-7);
        assert_eq!(cert.contact, vec![0, 1]);
        assert!((cert.objective + 0.16).abs() < 1e-10);
        let mut bad = cert.clone();
        bad.action = vec![0.45];
        let report = verify_self_inducing(&bad, &space, &w, &cost);
        assert!(!report.passed);
        assert!((report.residuals.alignment - 0.1).abs() < 1e-6);
    }

    #[test]
    fn box_boundary_uses_normal_cone() {
        let (space, w) = e2();
        let cost = FunctionSpec::power_sum(vec![1.0], 2.0);
        let domain = ActionDomain::Box { upper: vec![0.3] };
        let cert = find_self_inducing(&space, &w, &cost, &domain).unwrap();
        assert!((cert.action[0] - 0.3).abs() < 1e-7);
        assert!((cert.normal[0] - 0.2).abs() < 1e-6);
        assert!(!cert.interior);
        assert!(verify_self_inducing(&cert, &space, &w, &cost).passed);
        let grid = uniform_grid(&[0.3], 301);
        let lin = affine_to_linear(&cert, &cost, &domain, &space, &grid).unwrap();
        assert!((lin.contract.slope[0] - 0.6).abs() < 1e-6);
        assert!(lin.linear_payment <= lin.affine_payment);
    }

    #[test]
    fn e1_pipeline() {
        let (space, w) = e1();
        let grid = audit_grid(&space, &ActionDomain::Hull, 21, 0).unwrap();
        let r = improve_contract(
            &space,
            &w,
            &FunctionSpec::norm_power(1.0, 2.0),
            &FunctionSpec::linear(vec![2.0, 2.0]),
            &ActionDomain::Hull,
            &grid,
        )
        .unwrap();
        assert!((r.value_linear - 1.0).abs() < 1e-6);
        assert!(r.value_tabular.abs() < 1e-6);
        assert!((r.linear.affine_payment - 2.0).abs() < 1e-6);
    }

    #[test]
    fn affine_contract_is_fixed_point() {
        let (space, _) = e1();
        let w = TabularContract::new(vec![0.0, 0.6, 0.8, 1.4]).unwrap();
        let cost = FunctionSpec::norm_power(1.0, 2.0);
        let cert = find_self_inducing(&space, &w, &cost, &ActionDomain::Hull).unwrap();
        assert!(max_abs_diff(&cert.action, &[0.3, 0.4]) < 1e-6);
        assert!(max_abs_diff(&cert.psi.slope, &[0.6, 0.8]) < 1e-6);
        assert_eq!(cert.contact.len(), 4);
    }

    #[test]
    fn profiles() {
        let (space, _) = e1();
        let cost = FunctionSpec::norm_power(1.0, 2.0);
        let grid = audit_grid(&space, &ActionDomain::Hull, 11, 0).unwrap();
        let us = vec![FunctionSpec::linear(vec![1.0, 1.0]), FunctionSpec::linear(vec![1.0, 1.0])];
        let half = TabularContract::new(vec![0.0, 1.0, 1.0, 1.5]).unwrap();
        let r = improve_profile(&space, &[half.clone(), half], &cost, &us, &ActionDomain::Hull, &grid).unwrap();
        assert!(r.exact);
        for p in &r.principals {
            assert!((p.contract.intercept - 0.5).abs() < 1e-6);
            assert!(max_abs_diff(&p.contract.slope, &[0.5, 0.5]) < 1e-6);
            assert!((p.affine_payment - 1.0).abs() < 1e-6);
        }
        let w1 = TabularContract::new(vec![0.0, 2.0, 0.0, 1.0]).unwrap();
        let w2 = TabularContract::new(vec![0.0, 0.0, 2.0, 2.0]).unwrap();
        let r = improve_profile(&space, &[w1, w2], &cost, &us, &ActionDomain::Hull, &grid).unwrap();
        assert!(r.exact);
        let p1 = &r.principals[0].contract;
        assert!((p1.intercept - 1.0).abs() < 1e-6 && max_abs_diff(&p1.slope, &[1.0, -1.0]) < 1e-6);
        assert!(r.sum_residual < 1e-7);
    }
}
