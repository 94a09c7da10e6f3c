//! Homogeneous bilateral and common-agency settings: concave maximization,
//! optimal linear contracts, equilibria and approximation ratios.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::project_box;
use crate::model::{dot, homogeneity_check, FunctionSpec, Objective};

const MAX_ITER: usize = 50_000;
const KKT_TOL: f64 = 1e-8;
const HOMOGENEITY_TOL: f64 = 1e-8;

/// `Σ coefᵢ · fᵢ`.
pub struct Combination<'a> {
    pub terms: Vec<(f64, &'a dyn Objective)>,
}

impl<'a> Combination<'a> {
    pub fn new(terms: Vec<(f64, &'a dyn Objective)>) -> Self {
        Combination { terms }
    }
}

impl Objective for Combination<'_> {
    fn value(&self, a: &[f64]) -> f64 {
        self.terms.iter().map(|(c, f)| c * f.value(a)).sum()
    }
    fn gradient(&self, a: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; a.len()];
        for (c, f) in &self.terms {
            for (gi, fi) in g.iter_mut().zip(f.gradient(a)) {
                *gi += c * fi;
            }
        }
        g
    }
}

/// Where a homogeneous problem is solved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SearchDomain {
    /// `[0, upper]`, fixed.
    Box { upper: Vec<f64> },
    /// The whole orthant of the given dimension, searched with an expanding box.
    Orthant { dimension: usize },
}

impl SearchDomain {
    pub fn dimension(&self) -> usize {
        match self {
            SearchDomain::Box { upper } => upper.len(),
            SearchDomain::Orthant { dimension } => *dimension,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Maximum {
    pub argmax: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    /// `‖P(a + ∇f) − a‖∞`, the projected-gradient (boundary KKT) residual.
    pub kkt_residual: f64,
}

/// Projected gradient ascent with Armijo backtracking on `[0, upper]`.
pub fn concave_maximize_box(objective: &dyn Objective, upper: &[f64], start: Option<&[f64]>) -> Result<Maximum> {
    let start = match start {
        Some(s) => project_box(s, upper),
        None => upper.iter().map(|u| 0.5 * u).collect(),
    };
    projected_ascent(objective, &|a: &[f64]| project_box(a, upper), start)
}

/// Projected gradient ascent with Armijo backtracking onto a closed convex set given by `project`.
/// Only monotone ascent is guaranteed for nonconcave objectives.
pub fn projected_ascent(
    objective: &dyn Objective,
    project: &dyn Fn(&[f64]) -> Vec<f64>,
    start: Vec<f64>,
) -> Result<Maximum> {
    let mut a = project(&start);
    let mut fa = objective.value(&a);
    if !fa.is_finite() {
        return Err(Error::numeric("objective is not finite at the starting point"));
    }
    let mut step = 1.0_f64;
    let residual = |a: &[f64], g: &[f64]| {
        let moved: Vec<f64> = a.iter().zip(g).map(|(x, gi)| x + gi).collect();
        let p = project(&moved);
        p.iter().zip(a).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    };
    for iter in 0..MAX_ITER {
        let g = objective.gradient(&a);
        let r = residual(&a, &g);
        if r <= KKT_TOL {
            return Ok(Maximum { argmax: a, value: fa, iterations: iter, kkt_residual: r });
        }
        step *= 4.0;
        let mut accepted = false;
        for _ in 0..200 {
            let trial: Vec<f64> = a.iter().zip(&g).map(|(x, gi)| x + step * gi).collect();
            let next = project(&trial);
            let fnext = objective.value(&next);
            let diff: Vec<f64> = next.iter().zip(&a).map(|(x, y)| x - y).collect();
            let armijo = fnext - fa >= (1e-4 * dot(&g, &diff)).max(1e-14 * (1.0 + fa.abs()));
            // Near the optimum value differences drown in roundoff; fall back to the slope at the trial point.
            let flat = (fnext - fa).abs() <= 1e-13 * (1.0 + fa.abs())
                && dot(&objective.gradient(&next), &diff) >= 0.0;
            if fnext.is_finite() && (armijo || flat) {
                let stalled = diff.iter().all(|v| v.abs() <= 1e-16 * (1.0 + a.iter().fold(0.0_f64, |m, x| m.max(x.abs()))));
                a = next;
                fa = fnext;
                accepted = !stalled;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // No representable ascent step remains; accept if the residual is tiny in relative terms.
            let g = objective.gradient(&a);
            let r = residual(&a, &g);
            let scale = 1.0 + g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            if r <= KKT_TOL * scale {
                return Ok(Maximum { argmax: a, value: fa, iterations: iter, kkt_residual: r });
            }
            return Err(Error::numeric_with(
                "projected gradient ascent stalled",
                [("kkt_residual", r), ("value", fa)],
            ));
        }
    }
    let g = objective.gradient(&a);
    Err(Error::numeric_with(
        format!("projected gradient ascent did not converge in {MAX_ITER} iterations"),
        [("kkt_residual", residual(&a, &g)), ("value", fa)],
    ))
}

/// Concave maximization over a box or, for the orthant, over an expanding box
/// doubled until the argmax is interior with a 10% margin.
pub fn concave_maximize(objective: &dyn Objective, domain: &SearchDomain) -> Result<Maximum> {
    concave_maximize_from(objective, domain, None)
}

pub fn concave_maximize_from(objective: &dyn Objective, domain: &SearchDomain, start: Option<&[f64]>) -> Result<Maximum> {
    match domain {
        SearchDomain::Box { upper } => concave_maximize_box(objective, upper, start),
        SearchDomain::Orthant { dimension } => {
            let mut side = start.map_or(1.0_f64, |s| s.iter().fold(1.0_f64, |m, x| m.max(2.0 * x)));
            let mut start: Option<Vec<f64>> = start.map(<[f64]>::to_vec);
            for _ in 0..60 {
                let upper = vec![side; *dimension];
                let m = concave_maximize_box(objective, &upper, start.as_deref())?;
                if m.argmax.iter().all(|x| *x <= 0.9 * side) {
                    return Ok(m);
                }
                start = Some(m.argmax);
                side *= 2.0;
            }
            Err(Error::numeric("maximizer escapes every expanding box"))
        }
    }
}

fn declared_degree(spec: &FunctionSpec, what: &str) -> Result<f64> {
    let k = spec.degree.ok_or_else(|| Error::Input(format!("{what} must declare a homogeneity degree")))?;
    let r = homogeneity_check(spec, k, 64);
    if r > HOMOGENEITY_TOL {
        return Err(Error::Input(format!("{what} is not homogeneous of degree {k} (residual {r:.3e})")));
    }
    Ok(k)
}

fn optional_degree(spec: &FunctionSpec) -> Option<f64> {
    let k = spec.degree?;
    (homogeneity_check(spec, k, 64) <= HOMOGENEITY_TOL).then_some(k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BilateralSolution {
    pub action: Vec<f64>,
    pub contract: Vec<f64>,
    pub v_lin: f64,
    pub first_best_action: Vec<f64>,
    pub v_fb: f64,
    pub ratio: Option<f64>,
    pub formula_ratio: Option<f64>,
    pub k_c: f64,
    pub k_u: Option<f64>,
    /// `|⟨φ*, a*⟩ − k_c c(a*)|`.
    pub payment_identity_residual: f64,
    /// `‖φ* − ∇c(a*)‖∞`, zero by construction and kept for the report.
    pub contract_residual: f64,
}

/// Optimal linear contract `φ* = ∇c(a*)` with `a* = argmax u − k_c c`, and the first best.
pub fn solve_bilateral(u: &FunctionSpec, c: &FunctionSpec, domain: &SearchDomain) -> Result<BilateralSolution> {
    let d = domain.dimension();
    let k_c = declared_degree(c, "cost")?;
    if k_c <= 1.0 {
        return Err(Error::Input(format!("cost degree must exceed 1, got {k_c}")));
    }
    c.validate_as_cost(d)?;
    u.validate_as_utility(d)?;
    let k_u = optional_degree(u);

    let lin = concave_maximize(&Combination::new(vec![(1.0, u), (-k_c, c)]), domain)?;
    let fb = concave_maximize(&Combination::new(vec![(1.0, u), (-1.0, c)]), domain)?;
    let a = lin.argmax;
    let contract = c.gradient(&a);
    let payment = dot(&contract, &a);
    let v_lin = u.value(&a) - payment;
    let v_fb = fb.value;
    let payment_identity_residual = (payment - k_c * c.value(&a)).abs();
    let formula_ratio = match k_u {
        Some(k) if k > 0.0 && k < 1.0 => Some(ratio_bilateral(k, k_c)?),
        _ => None,
    };
    Ok(BilateralSolution {
        action: a,
        contract,
        v_lin,
        first_best_action: fb.argmax,
        v_fb,
        ratio: (v_fb > 0.0).then(|| v_lin / v_fb),
        formula_ratio,
        k_c,
        k_u,
        payment_identity_residual,
        contract_residual: 0.0,
    })
}

/// `k_c^{−k_u/(k_c−k_u)}`.
pub fn ratio_bilateral(k_u: f64, k_c: f64) -> Result<f64> {
    if !(k_u > 0.0 && k_u < 1.0 && k_c > 1.0) {
        return Err(Error::Input(format!("need 0 < k_u < 1 < k_c, got k_u = {k_u}, k_c = {k_c}")));
    }
    Ok(k_c.powf(-k_u / (k_c - k_u)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgencySolution {
    pub n: usize,
    pub action: Vec<f64>,
    pub contracts: Vec<Vec<f64>>,
    /// Some contract has a negative entry (allowed under aggregate liability).
    pub negative_entries: bool,
    /// `‖Σᵢ φᵢ − ∇c(a*)‖∞`.
    pub agent_foc_residual: f64,
    /// `‖(n(k_c−1)+1)∇c(a*) − Σᵢ ∇uᵢ(a*)‖∞`.
    pub equilibrium_residual: f64,
    pub payoffs: Vec<f64>,
    pub sw_lin: f64,
    pub sw_fb: f64,
    pub first_best_action: Vec<f64>,
    pub ratio: Option<f64>,
    pub formula_ratio: Option<f64>,
    pub k_c: f64,
}

/// Equilibrium of the common-agency game with linear contracts.
pub fn solve_common_agency(us: &[FunctionSpec], c: &FunctionSpec, domain: &SearchDomain) -> Result<AgencySolution> {
    let n = us.len();
    if n == 0 {
        return Err(Error::Input("need at least one principal".into()));
    }
    let d = domain.dimension();
    let k_c = declared_degree(c, "cost")?;
    if k_c <= 1.0 {
        return Err(Error::Input(format!("cost degree must exceed 1, got {k_c}")));
    }
    c.validate_as_cost(d)?;
    for u in us {
        u.validate_as_utility(d)?;
    }
    let coef = n as f64 * (k_c - 1.0) + 1.0;
    let mut terms: Vec<(f64, &dyn Objective)> = us.iter().map(|u| (1.0, u as &dyn Objective)).collect();
    terms.push((-coef, c));
    let eq = concave_maximize(&Combination::new(terms.clone()), domain)?;
    let a = eq.argmax;
    let grad_c = c.gradient(&a);
    let contracts: Vec<Vec<f64>> = us
        .iter()
        .map(|u| u.gradient(&a).iter().zip(&grad_c).map(|(gu, gc)| (1.0 - k_c) * gc + gu).collect())
        .collect();
    let agent_foc_residual = (0..d)
        .map(|j| (contracts.iter().map(|p| p[j]).sum::<f64>() - grad_c[j]).abs())
        .fold(0.0, f64::max);
    let sum_grad_u: Vec<f64> = (0..d).map(|j| us.iter().map(|u| u.gradient(&a)[j]).sum()).collect();
    let equilibrium_residual = (0..d).map(|j| (coef * grad_c[j] - sum_grad_u[j]).abs()).fold(0.0, f64::max);
    let payoffs = us.iter().zip(&contracts).map(|(u, p)| u.value(&a) - dot(p, &a)).collect();
    let total_u: f64 = us.iter().map(|u| u.value(&a)).sum();
    let sw_lin = total_u - c.value(&a);
    terms.pop();
    terms.push((-1.0, c));
    let fb = concave_maximize(&Combination::new(terms), domain)?;
    let degrees: Option<Vec<f64>> = us.iter().map(optional_degree).collect();
    let formula_ratio = match degrees {
        Some(ks) if n == 2 && (ks[0] - ks[1]).abs() < 1e-12 && ks[0] > 0.0 && ks[0] < 1.0 => {
            Some(ratio_common_agency(ks[0], k_c, 2)?)
        }
        _ => None,
    };
    let negative_entries = contracts.iter().flatten().any(|v| *v < 0.0);
    Ok(AgencySolution {
        n,
        action: a,
        contracts,
        negative_entries,
        agent_foc_residual,
        equilibrium_residual,
        payoffs,
        sw_lin,
        sw_fb: fb.value,
        first_best_action: fb.argmax,
        ratio: (fb.value > 0.0).then(|| sw_lin / fb.value),
        formula_ratio,
        k_c,
    })
}

/// Two-principal social-welfare ratio.
pub fn ratio_common_agency(k_u: f64, k_c: f64, n: usize) -> Result<f64> {
    if n != 2 {
        return Err(Error::Unsupported(format!("the closed-form ratio is known for two principals, got n = {n}")));
    }
    if !(k_u > 0.0 && k_u < 1.0 && k_c > 1.0) {
        return Err(Error::Input(format!("need 0 < k_u < 1 < k_c, got k_u = {k_u}, k_c = {k_c}")));
    }
    let base = 2.0 * k_c - 1.0;
    let gap = k_c - k_u;
    Ok((k_c * base.powf(-k_u / gap) - k_u * base.powf(-k_c / gap)) / gap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrincipalDeviation {
    pub equilibrium_payoff: f64,
    pub best_deviation_payoff: f64,
    pub best_deviation_action: Vec<f64>,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NashReport {
    /// The agent's response to the aggregate of the reported contracts.
    pub agent_response: Vec<f64>,
    pub principals: Vec<PrincipalDeviation>,
    pub max_gain: f64,
    pub passed: bool,
}

/// Sweeps every principal's induced action over the grid with the others' contracts fixed.
pub fn verify_nash(sol: &AgencySolution, us: &[FunctionSpec], c: &FunctionSpec, grid: &[Vec<f64>]) -> Result<NashReport> {
    let n = us.len();
    if sol.contracts.len() != n {
        return Err(Error::Input(format!("{} contracts for {n} principals", sol.contracts.len())));
    }
    if grid.is_empty() {
        return Err(Error::Input("deviation grid is empty".into()));
    }
    let d = sol.action.len();
    let aggregate: Vec<f64> = (0..d).map(|j| sol.contracts.iter().map(|p| p[j]).sum()).collect();
    let upper: Vec<f64> = (0..d).map(|j| grid.iter().map(|a| a[j]).fold(0.0, f64::max)).collect();
    let linear = FunctionSpec::linear(aggregate.clone());
    let response = Combination::new(vec![(1.0, &linear as &dyn Objective), (-1.0, c)]);
    let a = concave_maximize_box(&response, &upper, Some(&sol.action))?.argmax;

    let principals: Vec<PrincipalDeviation> = (0..n)
        .map(|i| {
            let others: Vec<f64> = (0..d).map(|j| aggregate[j] - sol.contracts[i][j]).collect();
            let equilibrium_payoff = us[i].value(&a) - dot(&sol.contracts[i], &a);
            let (best_action, best) = grid
                .par_iter()
                .map(|x| {
                    let dev: Vec<f64> = c.gradient(x).iter().zip(&others).map(|(g, o)| g - o).collect();
                    (x.clone(), us[i].value(x) - dot(&dev, x))
                })
                .reduce(|| (vec![], f64::NEG_INFINITY), |p, q| if q.1 > p.1 || (q.1 == p.1 && q.0 < p.0) { q } else { p });
            PrincipalDeviation {
                equilibrium_payoff,
                best_deviation_payoff: best,
                best_deviation_action: best_action,
                gain: best - equilibrium_payoff,
            }
        })
        .collect();
    let max_gain = principals.iter().map(|p| p.gain).fold(f64::NEG_INFINITY, f64::max);
    Ok(NashReport { agent_response: a, principals, max_gain, passed: max_gain <= 1e-5 })
}
