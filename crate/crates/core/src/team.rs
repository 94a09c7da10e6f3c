//! Team production: one principal, `n` agents with normalized costs `cᵢ(a) = a`
//! sharing a scalar output through budget-balanced linear shares.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envelope::{lower_envelope, upper_envelope, EnvelopeResult};
use crate::error::{Error, Result};
use crate::geometry::{affine_interpolant, project_simplex};
use crate::homogeneous::{concave_maximize_from, projected_ascent, Maximum, SearchDomain};
use crate::model::{homogeneity_check, DistributionAtAction, FunctionSpec, Objective, OutcomeSpace, TabularContract};
use crate::oracles::{concavity_at, positive_samples};

const MULTISTARTS: usize = 16;
const MULTISTART_SEED: u64 = 0x7ea3;
const HARDNESS_STARTS: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeamInstance {
    pub n: usize,
    pub production: FunctionSpec,
    pub a_max: f64,
    pub outputs: Vec<f64>,
}

impl TeamInstance {
    pub fn new(n: usize, production: FunctionSpec, a_max: f64, outputs: Vec<f64>) -> Result<Self> {
        let inst = TeamInstance { n, production, a_max, outputs };
        inst.validate()?;
        Ok(inst)
    }

    /// Structural checks: dimensions, `f(0) = 0`, declared degree in `(0, 1)`.
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Input("team needs at least one agent".into()));
        }
        self.production.check_dimension(self.n)?;
        if !(self.a_max.is_finite() && self.a_max > 0.0) {
            return Err(Error::Input(format!("a_max must be positive, got {}", self.a_max)));
        }
        if self.outputs.is_empty() || self.outputs.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Input("outputs must be a nonempty list of nonnegative reals".into()));
        }
        let f0 = self.production.value(&vec![0.0; self.n]);
        if f0.abs() > 1e-12 {
            return Err(Error::Model(format!("production must vanish at zero effort, f(0) = {f0}")));
        }
        self.degree().map(|_| ())
    }

    /// Homogeneity degree `k`, declared or implied by the family, checked numerically.
    pub fn degree(&self) -> Result<f64> {
        let k = self
            .production
            .degree
            .or_else(|| self.production.natural_degree())
            .ok_or_else(|| Error::Input("production must be homogeneous with a known degree".into()))?;
        if !(k > 0.0 && k < 1.0) {
            return Err(Error::Input(format!("production degree must lie in (0, 1), got {k}")));
        }
        let r = homogeneity_check(&self.production, k, 64);
        if r > 1e-8 {
            return Err(Error::Input(format!("production is not homogeneous of degree {k} (residual {r:.3e})")));
        }
        Ok(k)
    }

    pub fn x_max(&self) -> f64 {
        self.outputs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn output_space(&self) -> Result<OutcomeSpace> {
        OutcomeSpace::scalar(&self.outputs)
    }

    fn concave(&self) -> bool {
        let points = positive_samples(self.n, 48, 0x7c0c);
        concavity_at(&self.production, &points).is_concave
    }
}

fn check_shares(shares: &[f64], n: usize) -> Result<()> {
    if shares.len() != n {
        return Err(Error::Input(format!("{} shares for {n} agents", shares.len())));
    }
    if let Some(i) = shares.iter().position(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::Input(format!("share {i} must be positive, got {}", shares[i])));
    }
    Ok(())
}

/// `Γ(a; φ) = f(a) − Σᵢ aᵢ/φᵢ`.
pub fn potential(a: &[f64], shares: &[f64], inst: &TeamInstance) -> Result<f64> {
    check_shares(shares, inst.n)?;
    if a.len() != inst.n {
        return Err(Error::Input(format!("profile has length {}, expected {}", a.len(), inst.n)));
    }
    Ok(inst.production.value(a) - a.iter().zip(shares).map(|(x, s)| x / s).sum::<f64>())
}

/// Largest `|ΔVᵢ − φᵢ ΔΓ|` over random unilateral deviations from `a`, with `Vᵢ = φᵢ f − aᵢ`.
pub fn potential_identity_residual(inst: &TeamInstance, shares: &[f64], a: &[f64], deviations: usize, seed: u64) -> Result<f64> {
    let base = potential(a, shares, inst)?;
    let f = &inst.production;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for _ in 0..deviations {
        let i = rng.gen_range(0..inst.n);
        let mut b = a.to_vec();
        b[i] = rng.gen_range(0.0..inst.a_max);
        let dv = (shares[i] * f.value(&b) - b[i]) - (shares[i] * f.value(a) - a[i]);
        let dg = potential(&b, shares, inst)? - base;
        worst = worst.max((dv - shares[i] * dg).abs());
    }
    Ok(worst)
}

struct PotentialObjective<'a> {
    f: &'a FunctionSpec,
    inverse_shares: Vec<f64>,
}

impl Objective for PotentialObjective<'_> {
    fn value(&self, a: &[f64]) -> f64 {
        self.f.value(a) - a.iter().zip(&self.inverse_shares).map(|(x, s)| x * s).sum::<f64>()
    }
    fn gradient(&self, a: &[f64]) -> Vec<f64> {
        self.f.gradient(a).iter().zip(&self.inverse_shares).map(|(g, s)| g - s).collect()
    }
}

/// `b ↦ Γ(s·b)/s`, so that optima at tiny scales are solved at unit scale.
struct Rescaled<'a> {
    inner: &'a dyn Objective,
    scale: f64,
}

impl Rescaled<'_> {
    fn up(&self, b: &[f64]) -> Vec<f64> {
        b.iter().map(|x| x * self.scale).collect()
    }
}

impl Objective for Rescaled<'_> {
    fn value(&self, b: &[f64]) -> f64 {
        self.inner.value(&self.up(b)) / self.scale
    }
    fn gradient(&self, b: &[f64]) -> Vec<f64> {
        self.inner.gradient(&self.up(b))
    }
}

/// `g(z) = f(z₁², …, zₙ²) − (Σ zᵢ)²`.
pub struct ZTransform<'a> {
    pub f: &'a FunctionSpec,
}

impl Objective for ZTransform<'_> {
    fn value(&self, z: &[f64]) -> f64 {
        let sq: Vec<f64> = z.iter().map(|v| v * v).collect();
        let s: f64 = z.iter().sum();
        self.f.value(&sq) - s * s
    }
    fn gradient(&self, z: &[f64]) -> Vec<f64> {
        let sq: Vec<f64> = z.iter().map(|v| v * v).collect();
        let s: f64 = z.iter().sum();
        self.f.gradient(&sq).iter().zip(z).map(|(g, zi)| 2.0 * zi * g - 2.0 * s).collect()
    }
}

/// Best scaling `s·u` of a direction for `s^k F − s L` (or `s^{2k} F − s² L` with `power = 2`).
fn ray_start(u: &[f64], f_value: f64, linear: f64, k: f64, power: f64) -> Vec<f64> {
    if f_value <= 0.0 || linear <= 0.0 {
        return u.to_vec();
    }
    let kk = power * k;
    let s = (kk * f_value / (power * linear)).powf(1.0 / (power - kk));
    u.iter().map(|x| s * x).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeamEquilibrium {
    pub action: Vec<f64>,
    pub potential: f64,
    pub output: f64,
    /// `max |φᵢ ∂f/∂aᵢ − 1|` over coordinates with `aᵢ > 0`.
    pub foc_residual: f64,
}

/// The unique equilibrium `a(φ) = argmax Γ(·; φ)` for concave production.
pub fn team_equilibrium(shares: &[f64], inst: &TeamInstance) -> Result<TeamEquilibrium> {
    check_shares(shares, inst.n)?;
    let k = inst.degree()?;
    if !inst.concave() {
        let hint = if 2.0 * k < 1.0 { "; use the z-transform path" } else { "" };
        return Err(Error::Model(format!("production is not concave, the equilibrium need not be unique{hint}")));
    }
    let f = &inst.production;
    let inverse_shares: Vec<f64> = shares.iter().map(|s| 1.0 / s).collect();
    let objective = PotentialObjective { f, inverse_shares: inverse_shares.clone() };
    let u = vec![1.0; inst.n];
    let start = ray_start(&u, f.value(&u), inverse_shares.iter().sum(), k, 1.0);
    let scale = start[0];
    let scaled = Rescaled { inner: &objective, scale };
    let m = concave_maximize_from(&scaled, &SearchDomain::Orthant { dimension: inst.n }, Some(&u))?;
    let action = scaled.up(&m.argmax);
    let potential = m.value * scale;
    let grad = f.gradient(&action);
    let foc_residual = action
        .iter()
        .zip(grad.iter().zip(shares))
        .filter(|(a, _)| **a > 1e-9)
        .map(|(_, (g, s))| (s * g - 1.0).abs())
        .fold(0.0, f64::max);
    let output = f.value(&action);
    Ok(TeamEquilibrium { action, potential, output, foc_residual })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeamMethod {
    ZTransform,
    Multistart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeamResiduals {
    /// `|Γ* − (1−k) f(a*)|`.
    pub identity: f64,
    /// `|Σ φ*ᵢ − 1|`.
    pub budget: f64,
    /// `‖a(φ*) − a*‖∞`, when the equilibrium map could be evaluated.
    pub equilibrium: Option<f64>,
    /// `|Γ(a(φ*); φ*) − f(a(φ*)) + Σ aᵢ/φ*ᵢ|`.
    pub potential: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeamSolution {
    pub shares: Vec<f64>,
    pub action: Vec<f64>,
    pub potential: f64,
    pub output: f64,
    pub gamma_star: f64,
    pub optimal_action: Vec<f64>,
    pub k: f64,
    pub v_lin: f64,
    pub v_fb: f64,
    pub ratio: Option<f64>,
    pub bound: f64,
    pub method: TeamMethod,
    pub residuals: TeamResiduals,
}

/// `a* = z*²` and `Γ*` found by some route, before the cross-checks.
struct RawOptimum {
    z: Vec<f64>,
    value: f64,
}

fn z_samples(n: usize) -> Vec<Vec<f64>> {
    positive_samples(n, 48, 0x2a7e)
}

/// Maximizes `f(a) − (Σ√aᵢ)²` through `z = √a`, where it is a concave program.
pub fn solve_team_z(inst: &TeamInstance) -> Result<TeamSolution> {
    let raw = z_route(inst)?;
    finish(inst, raw, TeamMethod::ZTransform)
}

fn z_route(inst: &TeamInstance) -> Result<RawOptimum> {
    inst.validate()?;
    let k = inst.degree()?;
    if 2.0 * k >= 1.0 {
        return Err(Error::Unsupported(format!("the z-transform needs degree below 1/2, got {k}")));
    }
    let f = &inst.production;
    let samples = positive_samples(inst.n, 48, 0x5e9a);
    if !concavity_at(f, &samples).is_supermodular {
        return Err(Error::Model("production is not supermodular".into()));
    }
    let g = ZTransform { f };
    let report = concavity_at(&g, &z_samples(inst.n));
    if !report.is_concave {
        return Err(Error::Model(format!(
            "transformed objective is not concave: Hessian eigenvalue {:.3e}",
            report.max_eigenvalue
        )));
    }
    let u = vec![1.0; inst.n];
    let start = ray_start(&u, f.value(&u), (inst.n * inst.n) as f64, k, 2.0);
    let m = concave_maximize_from(&g, &SearchDomain::Orthant { dimension: inst.n }, Some(&start))?;
    Ok(RawOptimum { z: m.argmax, value: m.value })
}

/// Multistart local ascent of the transformed objective from ray-scaled random directions.
fn multistart_route(inst: &TeamInstance, starts: usize, seed: u64) -> Result<RawOptimum> {
    let k = inst.degree()?;
    let f = &inst.production;
    let g = ZTransform { f };
    let n = inst.n;
    let results: Vec<(usize, Option<Maximum>)> = (0..starts.max(1))
        .into_par_iter()
        .map(|s| {
            let u: Vec<f64> = if s == 0 {
                vec![1.0; n]
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(s as u64));
                (0..n).map(|_| rng.gen_range(0.05..1.0)).collect()
            };
            let sq: Vec<f64> = u.iter().map(|v| v * v).collect();
            let total: f64 = u.iter().sum();
            let start = ray_start(&u, f.value(&sq), total * total, k, 2.0);
            (s, concave_maximize_from(&g, &SearchDomain::Orthant { dimension: n }, Some(&start)).ok())
        })
        .collect();
    let best = results
        .into_iter()
        .filter_map(|(s, m)| m.map(|m| (s, m)))
        .fold(None::<(usize, Maximum)>, |acc, (s, m)| match acc {
            Some((t, b)) if b.value >= m.value => Some((t, b)),
            _ => Some((s, m)),
        });
    let (_, m) = best.ok_or_else(|| Error::numeric("every multistart run failed"))?;
    // Zero effort is always feasible with value zero.
    if m.value < 0.0 {
        return Ok(RawOptimum { z: vec![0.0; n], value: 0.0 });
    }
    Ok(RawOptimum { z: m.argmax, value: m.value })
}

/// `Γ*` by multistart ascent regardless of regime.
pub fn gamma_star_multistart(inst: &TeamInstance, starts: usize, seed: u64) -> Result<TeamSolution> {
    inst.validate()?;
    let raw = multistart_route(inst, starts, seed)?;
    finish(inst, raw, TeamMethod::Multistart)
}

/// `Γ* = max_{a ≥ 0} f(a) − (Σ√aᵢ)²` with optimal shares `φ* ∝ √a*`.
pub fn gamma_star(inst: &TeamInstance) -> Result<TeamSolution> {
    inst.validate()?;
    match z_route(inst) {
        Ok(raw) => finish(inst, raw, TeamMethod::ZTransform),
        Err(Error::Unsupported(_)) | Err(Error::Model(_)) => {
            finish(inst, multistart_route(inst, MULTISTARTS, MULTISTART_SEED)?, TeamMethod::Multistart)
        }
        Err(e) => Err(e),
    }
}

fn finish(inst: &TeamInstance, raw: RawOptimum, method: TeamMethod) -> Result<TeamSolution> {
    let k = inst.degree()?;
    let n = inst.n;
    let f = &inst.production;
    let a_star: Vec<f64> = raw.z.iter().map(|z| z * z).collect();
    let total: f64 = raw.z.iter().sum();
    let shares: Vec<f64> = if total > 1e-300 { raw.z.iter().map(|z| z / total).collect() } else { vec![1.0 / n as f64; n] };
    let output_star = f.value(&a_star);
    let identity = (raw.value - (1.0 - k) * output_star).abs();
    if identity > 1e-6 {
        return Err(Error::numeric_with(
            "optimum violates the equilibrium identity",
            [("identity", identity), ("gamma_star", raw.value)],
        ));
    }
    let budget = (shares.iter().sum::<f64>() - 1.0).abs();

    let (action, pot, output, equilibrium, potential_res) = if shares.iter().all(|s| *s > 0.0) && inst.concave() {
        let eq = team_equilibrium(&shares, inst)?;
        let gap = eq.action.iter().zip(&a_star).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        if gap > 1e-5 {
            return Err(Error::numeric_with(
                "equilibrium at the optimal shares does not reproduce the optimum",
                [("equilibrium", gap)],
            ));
        }
        let direct = potential(&eq.action, &shares, inst)?;
        (eq.action, eq.potential, eq.output, Some(gap), Some((direct - eq.potential).abs()))
    } else {
        (a_star.clone(), raw.value, output_star, None, None)
    };

    let r = team_ratio_with(inst, k, output_star)?;
    Ok(TeamSolution {
        shares,
        action,
        potential: pot,
        output,
        gamma_star: raw.value,
        optimal_action: a_star,
        k,
        v_lin: r.v_lin,
        v_fb: r.v_fb,
        ratio: r.ratio,
        bound: r.bound,
        method,
        residuals: TeamResiduals { identity, budget, equilibrium, potential: potential_res },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeamRatio {
    pub v_lin: f64,
    pub v_fb: f64,
    pub ratio: Option<f64>,
    pub bound: f64,
    /// Maximizer of `f` on the simplex; the first best is its multiple with `f(a) = Σaᵢ`.
    pub first_best_direction: Vec<f64>,
}

/// `V_LIN = Γ*/(1−k)`, budget-balanced first best `V_FB`, and the bound `(k/n)^{k/(1−k)}`.
pub fn team_ratio(inst: &TeamInstance) -> Result<TeamRatio> {
    let sol = gamma_star(inst)?;
    team_ratio_with(inst, sol.k, sol.gamma_star / (1.0 - sol.k))
}

fn team_ratio_with(inst: &TeamInstance, k: f64, v_lin: f64) -> Result<TeamRatio> {
    let (direction, max_on_simplex) = maximize_on_simplex(inst)?;
    // f(s u) = s Σuᵢ fixes s = f(u)^{1/(1−k)} on the simplex, and the output equals s.
    let v_fb = max_on_simplex.max(0.0).powf(1.0 / (1.0 - k));
    let bound = (k / inst.n as f64).powf(k / (1.0 - k));
    let ratio = (v_fb > 0.0).then(|| v_lin / v_fb);
    if let Some(r) = ratio {
        if r < bound - 1e-6 {
            return Err(Error::numeric_with("ratio falls below the guaranteed bound", [("ratio", r), ("bound", bound)]));
        }
    }
    Ok(TeamRatio { v_lin, v_fb, ratio, bound, first_best_direction: direction })
}

fn maximize_on_simplex(inst: &TeamInstance) -> Result<(Vec<f64>, f64)> {
    let n = inst.n;
    let f = &inst.production;
    let project = |a: &[f64]| project_simplex(a);
    let runs: Vec<Maximum> = (0..8)
        .into_par_iter()
        .filter_map(|s| {
            let start: Vec<f64> = if s == 0 {
                vec![1.0 / n as f64; n]
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(0x51a9 + s as u64);
                let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
                let t: f64 = raw.iter().sum();
                raw.iter().map(|v| v / t).collect()
            };
            projected_ascent(f, &project, start).ok()
        })
        .collect();
    let best = runs
        .into_iter()
        .fold(None::<Maximum>, |acc, m| match acc {
            Some(b) if b.value >= m.value => Some(b),
            _ => Some(m),
        })
        .ok_or_else(|| Error::numeric("first-best search failed from every start"))?;
    Ok((best.argmax, best.value))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationCertificate {
    pub agent: usize,
    pub epsilon: f64,
    /// Flat expected payment `p` delivered at both outputs.
    pub level: f64,
    pub output: f64,
    pub deviation_output: f64,
    pub at_profile: DistributionAtAction,
    pub at_deviation: DistributionAtAction,
    /// `c(aᵢ) − c(aᵢ − ε)`.
    pub gain: f64,
    /// Largest `|E[wᵢ] − p|` over the two columns.
    pub payment_residual: f64,
}

/// Whether the payments equal an affine function of the output within `1e-9`.
pub fn is_affine(space: &OutcomeSpace, w: &TabularContract) -> bool {
    let points: Vec<&[f64]> = space.outcomes().iter().map(|x| x.as_slice()).collect();
    let (_, _, residual) = affine_interpolant(&points, &w.payments);
    residual <= 1e-9
}

fn blend(space: &OutcomeSpace, upper: &EnvelopeResult, lower: &EnvelopeResult, level: f64) -> DistributionAtAction {
    let gap = upper.value - lower.value;
    let theta = if gap > 1e-15 { ((level - lower.value) / gap).clamp(0.0, 1.0) } else { 1.0 };
    let mut dense = vec![0.0; space.len()];
    for (&k, &w) in upper.weights.support.iter().zip(&upper.weights.weights) {
        dense[k] += theta * w;
    }
    for (&k, &w) in lower.weights.support.iter().zip(&lower.weights.weights) {
        dense[k] += (1.0 - theta) * w;
    }
    DistributionAtAction::from_dense(upper.action.clone(), &dense, 0.0)
}

/// Checks the standing assumptions for the robustness analysis.
pub fn check_robustness_assumptions(inst: &TeamInstance) -> Result<()> {
    inst.validate()?;
    let f = &inst.production;
    let full = vec![inst.a_max; inst.n];
    for i in 0..inst.n {
        let mut a = full.clone();
        a[i] = 0.0;
        let v = f.value(&a);
        if v.abs() > 1e-12 {
            return Err(Error::Input(format!("assumption violated: agent {i} is not essential, f = {v} without it")));
        }
    }
    let top = f.value(&full);
    if top >= inst.x_max() {
        return Err(Error::Input(format!(
            "assumption violated: f(a_max, ..., a_max) = {top} must be below the largest output {}",
            inst.x_max()
        )));
    }
    if !inst.outputs.iter().any(|x| *x == 0.0) {
        return Err(Error::Input("assumption violated: the output space must contain 0".into()));
    }
    Ok(())
}

/// A profitable unilateral deviation from `profile` under worst-case-consistent
/// distributions, or `None` when the profile is zero, all contracts are affine,
/// or no flat payment level is found.
pub fn break_equilibrium(
    inst: &TeamInstance,
    contracts: &[TabularContract],
    profile: &[f64],
    agent_cost: &FunctionSpec,
) -> Result<Option<DeviationCertificate>> {
    check_robustness_assumptions(inst)?;
    let space = inst.output_space()?;
    if contracts.len() != inst.n {
        return Err(Error::Input(format!("{} contracts for {} agents", contracts.len(), inst.n)));
    }
    for w in contracts {
        w.check_against(&space)?;
    }
    if profile.len() != inst.n || profile.iter().any(|a| !a.is_finite() || *a < 0.0 || *a > inst.a_max) {
        return Err(Error::Input(format!("profile must lie in [0, {}]^{}", inst.a_max, inst.n)));
    }
    agent_cost.validate_as_cost(1)?;
    if profile.iter().all(|a| *a == 0.0) || contracts.iter().all(|w| is_affine(&space, w)) {
        return Ok(None);
    }
    let f = &inst.production;
    let y = f.value(profile);
    for i in 0..inst.n {
        if profile[i] <= 0.0 {
            continue;
        }
        let w = &contracts[i];
        let up = upper_envelope(&space, w, &[y])?;
        let lo = lower_envelope(&space, w, &[y])?;
        for j in 3..=20 {
            let eps = inst.a_max * 0.5f64.powi(j);
            if eps > profile[i] {
                continue;
            }
            let mut dev = profile.to_vec();
            dev[i] -= eps;
            let y2 = f.value(&dev);
            let up2 = upper_envelope(&space, w, &[y2])?;
            let lo2 = lower_envelope(&space, w, &[y2])?;
            let low = lo.value.max(lo2.value);
            let high = up.value.min(up2.value);
            if low > high + 1e-12 {
                continue;
            }
            let level = 0.5 * (low + high);
            let gain = agent_cost.value(&[profile[i]]) - agent_cost.value(&[dev[i]]);
            if gain <= 0.0 {
                continue;
            }
            let at_profile = blend(&space, &up, &lo, level);
            let at_deviation = blend(&space, &up2, &lo2, level);
            let payment_residual = (at_profile.expectation(&w.payments) - level)
                .abs()
                .max((at_deviation.expectation(&w.payments) - level).abs());
            if payment_residual > 1e-8
                || !at_profile.residuals(&space).is_compatible()
                || !at_deviation.residuals(&space).is_compatible()
            {
                continue;
            }
            return Ok(Some(DeviationCertificate {
                agent: i,
                epsilon: eps,
                level,
                output: y,
                deviation_output: y2,
                at_profile,
                at_deviation,
                gain,
                payment_residual,
            }));
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardnessInstance {
    pub vertices: usize,
    pub edges: Vec<(usize, usize)>,
    /// Agent `vertices + t` owns non-edge `nonedges[t]`.
    pub nonedges: Vec<(usize, usize)>,
    pub instance: TeamInstance,
}

/// Team instance with one agent per vertex and per non-edge `{i, j}`, producing
/// `Σ (aᵢ aⱼ a_{ij})^{1/4}` over the non-edges.
pub fn hardness_instance(vertices: usize, edges: &[(usize, usize)]) -> Result<HardnessInstance> {
    let mut adjacent = vec![vec![false; vertices]; vertices];
    let mut clean = Vec::new();
    for &(u, v) in edges {
        if u >= vertices || v >= vertices {
            return Err(Error::Input(format!("edge ({u}, {v}) names a vertex outside 0..{vertices}")));
        }
        if u == v {
            return Err(Error::Input(format!("self-loop at vertex {u}")));
        }
        if !adjacent[u][v] {
            clean.push((u.min(v), u.max(v)));
        }
        adjacent[u][v] = true;
        adjacent[v][u] = true;
    }
    clean.sort_unstable();
    let nonedges: Vec<(usize, usize)> =
        (0..vertices).flat_map(|i| (i + 1..vertices).map(move |j| (i, j))).filter(|&(i, j)| !adjacent[i][j]).collect();
    if nonedges.is_empty() {
        return Err(Error::Input("degenerate instance: the graph is complete, so production is identically zero".into()));
    }
    let n = vertices + nonedges.len();
    let terms: Vec<FunctionSpec> = nonedges
        .iter()
        .enumerate()
        .map(|(t, &(i, j))| {
            let mut e = vec![0.0; n];
            e[i] = 0.25;
            e[j] = 0.25;
            e[vertices + t] = 0.25;
            FunctionSpec::cobb_douglas(1.0, e)
        })
        .collect();
    let production = FunctionSpec::sum(terms).with_degree(0.75);
    let instance = TeamInstance { n, production, a_max: 1.0, outputs: vec![0.0, nonedges.len() as f64 + 1.0] };
    Ok(HardnessInstance { vertices, edges: clean, nonedges, instance })
}

/// `Σ_{ij} y_{ij} xᵢ xⱼ − (Σ xᵢ² + Σ y_{ij}²)²` with `xᵢ = aᵢ^{1/4}`, `y_{ij} = a_{ij}^{1/4}`.
struct HardnessObjective<'a> {
    vertices: usize,
    nonedges: &'a [(usize, usize)],
}

impl Objective for HardnessObjective<'_> {
    fn value(&self, v: &[f64]) -> f64 {
        let (x, y) = v.split_at(self.vertices);
        let cubic: f64 = self.nonedges.iter().zip(y).map(|(&(i, j), yt)| yt * x[i] * x[j]).sum();
        let sq: f64 = v.iter().map(|t| t * t).sum();
        cubic - sq * sq
    }
    fn gradient(&self, v: &[f64]) -> Vec<f64> {
        let (x, y) = v.split_at(self.vertices);
        let sq: f64 = v.iter().map(|t| t * t).sum();
        let mut g: Vec<f64> = v.iter().map(|t| -4.0 * sq * t).collect();
        for (t, &(i, j)) in self.nonedges.iter().enumerate() {
            g[i] += y[t] * x[j];
            g[j] += y[t] * x[i];
            g[self.vertices + t] += x[i] * x[j];
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardnessOptimum {
    pub value: f64,
    /// Optimal `(x, y)`; efforts are their fourth powers.
    pub point: Vec<f64>,
    pub action: Vec<f64>,
    pub best_start: usize,
}

/// Best of `starts` projected-ascent runs from seeded random points in `[0, a_max^{1/4}]`.
pub fn optimize_hardness(h: &HardnessInstance, starts: usize, seed: u64) -> Result<HardnessOptimum> {
    let obj = HardnessObjective { vertices: h.vertices, nonedges: &h.nonedges };
    let n = h.instance.n;
    let side = h.instance.a_max.powf(0.25);
    let upper = vec![side; n];
    let runs: Vec<(usize, Maximum)> = (0..starts.max(1))
        .into_par_iter()
        .filter_map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(s as u64));
            let u: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..side)).collect();
            let cubic = obj.value(&u) + u.iter().map(|t| t * t).sum::<f64>().powi(2);
            let quartic = u.iter().map(|t| t * t).sum::<f64>().powi(2);
            let scale = if cubic > 0.0 && quartic > 0.0 { (0.75 * cubic / quartic).min(1.0) } else { 1.0 };
            let start: Vec<f64> = u.iter().map(|t| t * scale).collect();
            let project = |p: &[f64]| crate::geometry::project_box(p, &upper);
            projected_ascent(&obj, &project, start).ok().map(|m| (s, m))
        })
        .collect();
    let (best_start, m) = runs
        .into_iter()
        .fold(None::<(usize, Maximum)>, |acc, (s, m)| match acc {
            Some((t, b)) if b.value >= m.value => Some((t, b)),
            _ => Some((s, m)),
        })
        .ok_or_else(|| Error::numeric("every multistart run failed"))?;
    let action = m.argmax.iter().map(|t| t.powi(4)).collect();
    Ok(HardnessOptimum { value: m.value.max(0.0), point: m.argmax, action, best_start })
}

/// [`optimize_hardness`] with the default 32 starts.
pub fn hardness_value(h: &HardnessInstance, seed: u64) -> Result<HardnessOptimum> {
    optimize_hardness(h, HARDNESS_STARTS, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cd_team() -> TeamInstance {
        TeamInstance::new(2, FunctionSpec::cobb_douglas(1.0, vec![0.2, 0.2]), 1.0, vec![0.0, 1.0, 2.0]).unwrap()
    }

    fn t() -> f64 {
        10f64.powf(-5.0 / 3.0)
    }

    #[test]
    fn potential_values() {
        let inst = cd_team();
        let g = potential(&[t(), t()], &[0.5, 0.5], &inst).unwrap();
        assert!((g - (t().powf(0.4) - 4.0 * t())).abs() < 1e-15);
        assert!((g - 0.129266).abs() < 1e-6);
        assert_eq!(potential(&[0.0, 0.0], &[0.5, 0.5], &inst).unwrap(), 0.0);
        assert!(potential(&[0.1, 0.1], &[0.5, 0.0], &inst).is_err());
        assert!(potential_identity_residual(&inst, &[0.3, 0.7], &[0.2, 0.4], 100, 1).unwrap() < 1e-8);
    }

    #[test]
    fn equilibrium_examples() {
        let inst = cd_team();
        let eq = team_equilibrium(&[0.5, 0.5], &inst).unwrap();
        assert!((eq.action[0] - t()).abs() < 1e-8 && (eq.action[1] - t()).abs() < 1e-8);
        assert!(eq.foc_residual < 1e-6);
        let eq = team_equilibrium(&[1e-6, 1e-6], &inst).unwrap();
        assert!(eq.action.iter().all(|a| *a <= 1e-6));
        let single = TeamInstance::new(1, FunctionSpec::power_sum(vec![1.0], 0.5), 1.0, vec![0.0, 2.0]).unwrap();
        let eq = team_equilibrium(&[1.0], &single).unwrap();
        assert!((eq.action[0] - 0.25).abs() < 1e-8);
    }

    #[test]
    fn gamma_star_closed_forms() {
        let s = gamma_star(&cd_team()).unwrap();
        assert_eq!(s.method, TeamMethod::ZTransform);
        assert!((s.gamma_star - 0.129266).abs() < 1e-5);
        assert!((s.shares[0] - 0.5).abs() < 1e-6);
        assert!((s.v_lin - 10f64.powf(-2.0 / 3.0)).abs() < 1e-6);
        assert!((s.v_fb - 2f64.powf(-2.0 / 3.0)).abs() < 1e-6);
        assert!((s.ratio.unwrap() - s.bound).abs() < 1e-5);
        assert!((s.potential - 0.6 * s.output).abs() < 1e-6);

        let m = gamma_star_multistart(&cd_team(), 8, 3).unwrap();
        assert!((m.gamma_star - s.gamma_star).abs() < 1e-6);

        let cube = TeamInstance::new(1, FunctionSpec::power_sum(vec![1.0], 1.0 / 3.0), 1.0, vec![0.0, 2.0]).unwrap();
        let s = gamma_star(&cube).unwrap();
        assert!((s.optimal_action[0] - 3f64.powf(-1.5)).abs() < 1e-6);
        assert!((s.gamma_star - 2.0 / 3.0 * s.output).abs() < 1e-8);
        assert!(s.ratio.unwrap() >= (1.0f64 / 3.0).powf(0.5) - 1e-6);

        let zero = TeamInstance::new(2, FunctionSpec::cobb_douglas(0.0, vec![0.2, 0.2]), 1.0, vec![0.0, 1.0]).unwrap();
        let s = gamma_star(&zero).unwrap();
        assert!(s.gamma_star.abs() < 1e-12 && s.ratio.is_none());
    }

    #[test]
    fn z_transform_regime() {
        let quarter = TeamInstance::new(1, FunctionSpec::power_sum(vec![1.0], 0.25), 1.0, vec![0.0, 2.0]).unwrap();
        let s = solve_team_z(&quarter).unwrap();
        assert!(((s.optimal_action[0]).sqrt() - 0.25f64.powf(2.0 / 3.0)).abs() < 1e-7);
        let high = TeamInstance::new(2, FunctionSpec::cobb_douglas(1.0, vec![0.3, 0.3]), 1.0, vec![0.0, 2.0]).unwrap();
        assert!(matches!(solve_team_z(&high), Err(Error::Unsupported(_))));
        let s = gamma_star(&high).unwrap();
        assert_eq!(s.method, TeamMethod::Multistart);
        assert!(s.ratio.unwrap() >= s.bound - 1e-6);
    }

    #[test]
    fn breaking_profiles() {
        let inst = cd_team();
        let space = inst.output_space().unwrap();
        let w1 = TabularContract::new(vec![0.0, 1.5, 2.0]).unwrap();
        let w2 = TabularContract::new(vec![0.0, 0.5, 1.0]).unwrap();
        assert!(!is_affine(&space, &w1) && is_affine(&space, &w2));
        let cost = FunctionSpec::power_sum(vec![1.0], 2.0);
        let cert = break_equilibrium(&inst, &[w1.clone(), w2.clone()], &[0.1, 0.1], &cost).unwrap().unwrap();
        assert_eq!(cert.agent, 0);
        assert!(cert.gain > 0.0 && cert.payment_residual < 1e-8);
        assert!((cert.gain - (0.01 - (0.1 - cert.epsilon).powi(2))).abs() < 1e-12);
        assert!(break_equilibrium(&inst, &[w2.clone(), w2.clone()], &[0.1, 0.1], &cost).unwrap().is_none());
        assert!(break_equilibrium(&inst, &[w1.clone(), w2.clone()], &[0.0, 0.0], &cost).unwrap().is_none());
        let bad = TeamInstance::new(2, FunctionSpec::cobb_douglas(1.0, vec![0.2, 0.2]), 1.0, vec![0.0, 0.5]).unwrap();
        assert!(matches!(break_equilibrium(&bad, &[w1.clone(), w2], &[0.1, 0.1], &cost), Err(Error::Input(_))));
    }

    #[test]
    fn hardness_structure() {
        let p3 = hardness_instance(3, &[(0, 1), (1, 2)]).unwrap();
        assert_eq!(p3.instance.n, 4);
        assert_eq!(p3.nonedges, vec![(0, 2)]);
        let e2 = hardness_instance(2, &[]).unwrap();
        assert_eq!(e2.instance.n, 3);
        let v = e2.instance.production.value(&[0.0625, 1.0, 0.0625 * 0.0625]);
        assert!((v - 0.125).abs() < 1e-14);
        let c4 = hardness_instance(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
        assert_eq!(c4.instance.n, 6);
        assert!(hardness_instance(3, &[(0, 1), (1, 2), (0, 2)]).is_err());
        let opt = hardness_value(&e2, 7).unwrap();
        assert!(opt.value > 0.0);
        let direct = e2.instance.production.value(&opt.action) - opt.action.iter().map(|a| a.sqrt()).sum::<f64>().powi(2);
        assert!((direct - opt.value).abs() < 1e-12);
    }
}
