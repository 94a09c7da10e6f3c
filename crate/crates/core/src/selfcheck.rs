//! Randomized property suites behind the `verify` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::concavify::{improve_contract, verify_self_inducing};
use crate::envelope::{lower_envelope, upper_envelope};
use crate::error::Result;
use crate::geometry::{audit_grid, project_simplex, uniform_grid};
use crate::homogeneous::{ratio_bilateral, solve_bilateral, solve_common_agency, SearchDomain};
use crate::lp::{solve_lp, LpProblem, LpStatus, Sense};
use crate::model::{dot, euler_residual, ActionDomain, FunctionSpec, Objective, OutcomeSpace, TabularContract};
use crate::oracles::{fd_gradient_check, lp_by_enumeration, numeric_concavity_check, positive_samples, worst_case_payoff};
use crate::team::{break_equilibrium, gamma_star, hardness_instance, hardness_value, is_affine, TeamInstance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteOutcome {
    pub name: String,
    pub cases: usize,
    pub failures: usize,
    /// Worst observed violation in the suite's own units.
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl SuiteOutcome {
    fn from_margins(name: &str, margins: Vec<Option<f64>>, tolerance: f64) -> Self {
        let cases = margins.len();
        let mut failures = 0;
        let mut worst = 0.0_f64;
        for m in margins {
            match m {
                Some(v) if v.is_finite() => {
                    worst = worst.max(v);
                    if v > tolerance {
                        failures += 1;
                    }
                }
                _ => {
                    failures += 1;
                    worst = f64::INFINITY;
                }
            }
        }
        SuiteOutcome { name: name.into(), cases, failures, worst, tolerance, passed: failures == 0 }
    }
}

/// A random contract-design instance on a hull domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomInstance {
    pub space: OutcomeSpace,
    pub contract: TabularContract,
    pub cost: FunctionSpec,
    pub utility: FunctionSpec,
    pub domain: ActionDomain,
}

/// `d ∈ {1,2,3}`, `m ∈ [3,8]` outcomes in `[0,1]^d` including the origin, payments in `[0,3]`,
/// an increasing positive-definite quadratic (nonnegative entries) or power-sum cost and a linear utility.
pub fn random_instance(rng: &mut impl Rng) -> RandomInstance {
    let d = rng.gen_range(1..=3);
    let m = rng.gen_range(3..=8);
    let mut outcomes = vec![vec![0.0; d]];
    while outcomes.len() < m {
        outcomes.push((0..d).map(|_| rng.gen_range(0.0..1.0)).collect());
    }
    let space = OutcomeSpace::new(d, outcomes).expect("generated outcomes are valid");
    let contract = TabularContract::new((0..m).map(|_| rng.gen_range(0.0..3.0)).collect()).expect("nonnegative");
    let cost = if rng.gen_bool(0.5) {
        let b: Vec<Vec<f64>> = (0..d).map(|_| (0..d).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
        let matrix = (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| (0..d).map(|k| b[k][i] * b[k][j]).sum::<f64>() + if i == j { 0.5 } else { 0.0 })
                    .collect()
            })
            .collect();
        FunctionSpec::quadratic(matrix)
    } else {
        let p = rng.gen_range(1.5..3.0);
        FunctionSpec::power_sum((0..d).map(|_| rng.gen_range(0.5..2.0)).collect(), p)
    };
    let utility = FunctionSpec::linear((0..d).map(|_| rng.gen_range(0.5..3.0)).collect());
    RandomInstance { space, contract, cost, utility, domain: ActionDomain::Hull }
}

fn rng_for(seed: u64, suite: u64, case: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (suite << 32) ^ case as u64)
}

fn random_lp(rng: &mut impl Rng) -> LpProblem {
    let n = rng.gen_range(2..=12);
    let r = rng.gen_range(1..=4.min(n - 1));
    let mut rows: Vec<Vec<f64>> = (0..r - 1).map(|_| (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
    rows.push(vec![1.0; n]);
    let x0: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.6) { rng.gen_range(0.0..1.0) } else { 0.0 }).collect();
    let rhs: Vec<f64> = rows.iter().map(|row| dot(row, &x0)).collect();
    let sense = if rng.gen_bool(0.5) { Sense::Minimize } else { Sense::Maximize };
    LpProblem::new(sense, (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect(), rows, rhs)
}

pub fn suite_lp(cases: usize, seed: u64) -> SuiteOutcome {
    let margins = (0..cases)
        .into_par_iter()
        .map(|c| {
            let p = random_lp(&mut rng_for(seed, 1, c));
            let s = solve_lp(&p).ok()?;
            let reference = lp_by_enumeration(&p)?;
            if s.status != LpStatus::Optimal {
                return None;
            }
            let rc = s.reduced_costs(&p);
            let dual = rc.iter().zip(&s.primal).filter(|(_, x)| **x > 1e-9).map(|(r, _)| r.abs()).fold(0.0, f64::max);
            Some((s.objective - reference).abs().max(dual))
        })
        .collect();
    SuiteOutcome::from_margins("lp_vs_enumeration", margins, 1e-8)
}

fn random_family(rng: &mut impl Rng, d: usize) -> FunctionSpec {
    match rng.gen_range(0..5) {
        0 => FunctionSpec::power_sum((0..d).map(|_| rng.gen_range(0.2..2.0)).collect(), rng.gen_range(0.3..3.0)),
        1 => FunctionSpec::norm_power(rng.gen_range(0.2..2.0), rng.gen_range(0.5..3.0)),
        2 => FunctionSpec::cobb_douglas(rng.gen_range(0.2..2.0), (0..d).map(|_| rng.gen_range(0.05..0.5)).collect()),
        3 => FunctionSpec::linear((0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()),
        _ => FunctionSpec::quadratic((0..d).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()),
    }
    .with_natural_degree()
}

pub fn suite_gradients(cases: usize, seed: u64) -> Vec<SuiteOutcome> {
    let results: Vec<(Option<f64>, Option<f64>)> = (0..cases)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_for(seed, 2, c);
            let d = rng.gen_range(1..=3);
            let spec = random_family(&mut rng, d);
            let points = positive_samples(d, 100, seed ^ c as u64);
            let grad = fd_gradient_check(&spec, &points);
            let k = spec.degree.unwrap_or(1.0);
            let euler = points.iter().map(|a| euler_residual(&spec, k, a)).fold(0.0, f64::max);
            (Some(grad), Some(euler))
        })
        .collect();
    let (g, e): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    vec![
        SuiteOutcome::from_margins("gradient_fd", g, 1e-4),
        SuiteOutcome::from_margins("euler_identity", e, 1e-8),
    ]
}

fn random_space(rng: &mut impl Rng) -> (OutcomeSpace, TabularContract) {
    let inst = random_instance(rng);
    (inst.space, inst.contract)
}

fn random_hull_point(space: &OutcomeSpace, rng: &mut impl Rng) -> (Vec<f64>, Vec<f64>) {
    let raw: Vec<f64> = (0..space.len()).map(|_| -rng.gen_range(1e-9_f64..1.0).ln()).collect();
    let total: f64 = raw.iter().sum();
    let lambda: Vec<f64> = raw.iter().map(|v| v / total).collect();
    let d = space.dimension();
    let a = (0..d).map(|i| space.outcomes().iter().zip(&lambda).map(|(x, l)| l * x[i]).sum()).collect();
    (a, lambda)
}

pub fn suite_envelopes(cases: usize, seed: u64) -> Vec<SuiteOutcome> {
    type Margins = (Option<f64>, Option<f64>, Option<f64>, Option<f64>);
    let results: Vec<Margins> = (0..cases)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_for(seed, 3, c);
            let (space, w) = random_space(&mut rng);
            let (a, lambda) = random_hull_point(&space, &mut rng);
            let sandwich = (|| {
                let up = upper_envelope(&space, &w, &a).ok()?;
                let lo = lower_envelope(&space, &w, &a).ok()?;
                let mid = dot(&lambda, &w.payments);
                Some((lo.value - mid).max(mid - up.value).max(0.0))
            })();
            let concavity = (|| {
                let (b, _) = random_hull_point(&space, &mut rng);
                let t: f64 = rng.gen_range(0.0..1.0);
                let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| t * x + (1.0 - t) * y).collect();
                let v = |p: &[f64]| upper_envelope(&space, &w, p).map(|e| e.value).ok();
                Some((t * v(&a)? + (1.0 - t) * v(&b)? - v(&mix)?).max(0.0))
            })();
            let domination = (|| {
                let env = upper_envelope(&space, &w, &a).ok()?;
                let plane = env.supporting();
                let mut worst = 0.0_f64;
                for _ in 0..100 {
                    let (b, _) = random_hull_point(&space, &mut rng);
                    worst = worst.max(upper_envelope(&space, &w, &b).ok()?.value - plane.eval(&b));
                }
                Some(worst)
            })();
            let fixed_point = (|| {
                let d = space.dimension();
                let slope: Vec<f64> = (0..d).map(|_| rng.gen_range(0.0..2.0)).collect();
                let psi = crate::model::AffineContract::new(rng.gen_range(0.0..1.0), slope);
                let aff = TabularContract::new(psi.on_space(&space)).ok()?;
                let up = upper_envelope(&space, &aff, &a).ok()?.value;
                let lo = lower_envelope(&space, &aff, &a).ok()?.value;
                Some((up - psi.eval(&a)).abs().max((lo - psi.eval(&a)).abs()))
            })();
            (sandwich, concavity, domination, fixed_point)
        })
        .collect();
    let mut s = Vec::new();
    let mut cn = Vec::new();
    let mut dm = Vec::new();
    let mut fp = Vec::new();
    for (a, b, c, d) in results {
        s.push(a);
        cn.push(b);
        dm.push(c);
        fp.push(d);
    }
    vec![
        SuiteOutcome::from_margins("envelope_sandwich", s, 1e-8),
        SuiteOutcome::from_margins("envelope_concavity", cn, 1e-8),
        SuiteOutcome::from_margins("supergradient_domination", dm, 1e-8),
        SuiteOutcome::from_margins("affine_fixed_point", fp, 1e-10),
    ]
}

/// Dominance, certificate and oracle-vs-pipeline checks on random instances.
pub fn suite_dominance(cases: usize, seed: u64, samples_3d: usize) -> Vec<SuiteOutcome> {
    let results: Vec<(Option<f64>, Option<f64>, Option<f64>)> = (0..cases)
        .into_par_iter()
        .map(|c| {
            let inst = random_instance(&mut rng_for(seed, 4, c));
            let d = inst.space.dimension();
            let Ok(grid) = audit_grid(&inst.space, &inst.domain, 21, samples_3d) else {
                return (None, None, None);
            };
            let Ok(r) = improve_contract(&inst.space, &inst.contract, &inst.cost, &inst.utility, &inst.domain, &grid)
            else {
                return (None, None, None);
            };
            let v = verify_self_inducing(&r.certificate, &inst.space, &inst.contract, &inst.cost);
            let cert = v.residuals.envelope_touch.max(v.residuals.support).max(r.dominating.best_response_gap.max(0.0));
            let oracle = (d <= 2).then(|| {
                worst_case_payoff(&inst.space, &inst.contract, &inst.cost, &inst.utility, &grid)
                    .ok()
                    .map(|wc| (wc.value - r.value_linear).max(0.0))
            });
            (Some((-r.gap).max(0.0)), Some(cert), oracle.flatten().or(Some(0.0)))
        })
        .collect();
    let mut g = Vec::new();
    let mut c = Vec::new();
    let mut o = Vec::new();
    for (a, b, x) in results {
        g.push(a);
        c.push(b);
        o.push(x);
    }
    vec![
        SuiteOutcome::from_margins("dominance_gap", g, 1e-6),
        SuiteOutcome::from_margins("certificate_invariants", c, 1e-6),
        SuiteOutcome::from_margins("oracle_vs_pipeline", o, 1e-4),
    ]
}

/// Closed-form vs numeric bilateral and common-agency ratios over the standard degree grid.
pub fn suite_homogeneous() -> Vec<SuiteOutcome> {
    let grid: Vec<(f64, f64)> =
        [0.2, 0.4, 0.6, 0.8].iter().flat_map(|&ku| [1.5, 2.0, 3.0, 4.0].iter().map(move |&kc| (ku, kc))).collect();
    let results: Vec<(Option<f64>, Option<f64>, Option<f64>)> = grid
        .par_iter()
        .map(|&(ku, kc)| {
            let u = FunctionSpec::power_sum(vec![1.0], ku).with_degree(ku);
            let c = FunctionSpec::power_sum(vec![1.0], kc).with_degree(kc);
            let dom = SearchDomain::Orthant { dimension: 1 };
            let b = solve_bilateral(&u, &c, &dom).ok();
            let ratio = b.as_ref().and_then(|b| Some((b.ratio? - ratio_bilateral(ku, kc).ok()?).abs()));
            let scaling = b.as_ref().map(|b| {
                let predicted = kc.powf(-1.0 / (kc - ku)) * b.first_best_action[0];
                (b.action[0] - predicted).abs().max(b.payment_identity_residual * 1e3)
            });
            let agency = solve_common_agency(&[u.clone(), u.clone()], &c, &dom).ok().and_then(|s| {
                let predicted = (2.0 * kc - 1.0).powf(-1.0 / (kc - ku)) * s.first_best_action[0];
                Some((s.action[0] - predicted).abs().max((s.ratio? - s.formula_ratio?).abs() * 1e-2))
            });
            (ratio, scaling, agency)
        })
        .collect();
    let mut r = Vec::new();
    let mut s = Vec::new();
    let mut a = Vec::new();
    for (x, y, z) in results {
        r.push(x);
        s.push(y);
        a.push(z);
    }
    vec![
        SuiteOutcome::from_margins("bilateral_ratio_formula", r, 1e-3),
        SuiteOutcome::from_margins("bilateral_scaling_and_payment", s, 1e-5),
        SuiteOutcome::from_margins("agency_scaling", a, 1e-5),
    ]
}

fn random_cobb_douglas(rng: &mut impl Rng, n: usize, total: f64) -> FunctionSpec {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.0)).collect();
    let s: f64 = raw.iter().sum();
    FunctionSpec::cobb_douglas(1.0, raw.iter().map(|v| v * total / s).collect()).with_natural_degree()
}

pub fn suite_team(cases: usize, seed: u64) -> Vec<SuiteOutcome> {
    let ratio: Vec<Option<f64>> = (0..cases)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_for(seed, 5, c);
            let n = rng.gen_range(1..=3);
            let k = rng.gen_range(0.1..0.9);
            let inst = TeamInstance::new(n, random_cobb_douglas(&mut rng, n, k), 1.0, vec![0.0, 2.0]).ok()?;
            let s = gamma_star(&inst).ok()?;
            let cauchy = uniform_grid(&vec![1.0; n], 11)
                .iter()
                .map(|a| inst.production.value(a) - n as f64 * a.iter().sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max);
            Some((s.bound - s.ratio?).max(cauchy - s.gamma_star).max(s.residuals.identity))
        })
        .collect();

    let dichotomy: Vec<Option<f64>> = (0..cases)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_for(seed, 6, c);
            dichotomy_case(&mut rng).map(|ok| if ok { 0.0 } else { 1.0 })
        })
        .collect();

    let concavity: Vec<Option<f64>> = (0..cases.min(20))
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_for(seed, 7, c);
            let n = rng.gen_range(2..=4);
            let total = rng.gen_range(0.1..=1.0);
            let r = numeric_concavity_check(&random_cobb_douglas(&mut rng, n, total), 100);
            Some(r.max_eigenvalue)
        })
        .collect();

    vec![
        SuiteOutcome::from_margins("team_ratio_and_cauchy_bounds", ratio, 1e-6),
        SuiteOutcome::from_margins("robustness_dichotomy", dichotomy, 0.0),
        SuiteOutcome::from_margins("supermodular_concavity", concavity, 1e-6),
        hardness_suite(seed),
    ]
}

/// One contract set with several profiles; true when every profile behaves as predicted.
fn dichotomy_case(rng: &mut impl Rng) -> Option<bool> {
    let m = rng.gen_range(3..=6);
    let mut outputs: Vec<f64> = vec![0.0];
    outputs.extend((2..m).map(|_| rng.gen_range(0.2..3.0)));
    outputs.push(3.5);
    let inst = TeamInstance::new(2, FunctionSpec::cobb_douglas(1.0, vec![0.2, 0.2]), 1.0, outputs.clone()).ok()?;
    let space = inst.output_space().ok()?;
    let affine = rng.gen_bool(0.3);
    let contracts: Vec<TabularContract> = (0..2)
        .map(|_| {
            if affine {
                let (c0, c1) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
                TabularContract::new(outputs.iter().map(|x| c0 + c1 * x).collect())
            } else {
                TabularContract::new(outputs.iter().map(|_| rng.gen_range(0.0..3.0)).collect())
            }
        })
        .collect::<Result<_>>()
        .ok()?;
    let nonaffine = contracts.iter().any(|w| !is_affine(&space, w));
    let cost = FunctionSpec::power_sum(vec![1.0], 2.0);
    let mut ok = break_equilibrium(&inst, &contracts, &[0.0, 0.0], &cost).ok()?.is_none();
    for _ in 0..5 {
        let profile = [rng.gen_range(1..=10) as f64 / 10.0, rng.gen_range(0..=10) as f64 / 10.0];
        let cert = break_equilibrium(&inst, &contracts, &profile, &cost).ok()?;
        ok &= cert.is_some() == nonaffine;
        if let Some(c) = cert {
            ok &= c.gain > 0.0 && c.payment_residual <= 1e-8;
            ok &= c.at_profile.residuals(&space).is_compatible() && c.at_deviation.residuals(&space).is_compatible();
        }
    }
    Some(ok)
}

fn independence_number(vertices: usize, adjacent: &[Vec<bool>]) -> usize {
    (0usize..1 << vertices)
        .filter(|&s| (0..vertices).all(|i| (i + 1..vertices).all(|j| s >> i & 1 == 0 || s >> j & 1 == 0 || !adjacent[i][j])))
        .map(|s| s.count_ones() as usize)
        .max()
        .unwrap_or(0)
}

fn hardness_suite(seed: u64) -> SuiteOutcome {
    let pairs: Vec<(usize, usize)> = (0..4).flat_map(|i| (i + 1..4).map(move |j| (i, j))).collect();
    let rows: Vec<Option<(usize, f64)>> = (0u32..(1 << pairs.len()) - 1)
        .into_par_iter()
        .map(|mask| {
            let edges: Vec<(usize, usize)> =
                pairs.iter().enumerate().filter(|(t, _)| mask >> t & 1 == 1).map(|(_, e)| *e).collect();
            let mut adjacent = vec![vec![false; 4]; 4];
            for &(i, j) in &edges {
                adjacent[i][j] = true;
                adjacent[j][i] = true;
            }
            let h = hardness_instance(4, &edges).ok()?;
            Some((independence_number(4, &adjacent), hardness_value(&h, seed).ok()?.value))
        })
        .collect();
    let Some(rows) = rows.into_iter().collect::<Option<Vec<_>>>() else {
        return SuiteOutcome::from_margins("hardness_monotone", vec![None], 1e-9);
    };
    let mut margins = Vec::new();
    for &(a1, v1) in &rows {
        for &(a2, v2) in &rows {
            if a1 < a2 {
                margins.push(Some((v1 - v2).max(0.0)));
            }
        }
    }
    SuiteOutcome::from_margins("hardness_monotone", margins, 1e-9)
}

/// Idempotence: a linear contract is already optimal for the pipeline.
pub fn suite_idempotence(cases: usize, seed: u64) -> SuiteOutcome {
    let margins = (0..cases)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_for(seed, 8, c);
            let d = rng.gen_range(1..=2);
            let space = OutcomeSpace::new(d, uniform_grid(&vec![1.0; d], 3)).ok()?;
            let phi: Vec<f64> = project_simplex(&(0..d).map(|_| rng.gen_range(0.0..1.0)).collect::<Vec<_>>());
            let w = TabularContract::new(space.outcomes().iter().map(|x| dot(&phi, x)).collect()).ok()?;
            let cost = FunctionSpec::power_sum(vec![1.0; d], 2.0);
            let utility = FunctionSpec::linear(vec![2.0; d]);
            let dom = ActionDomain::Hull;
            let grid = audit_grid(&space, &dom, 11, 0).ok()?;
            let r = improve_contract(&space, &w, &cost, &utility, &dom, &grid).ok()?;
            Some((r.value_linear - r.value_tabular).abs())
        })
        .collect();
    SuiteOutcome::from_margins("idempotence", margins, 1e-8)
}

/// Sizes of the randomized suites.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuiteSizes {
    pub lp: usize,
    pub functions: usize,
    pub envelopes: usize,
    pub dominance: usize,
    pub team: usize,
    pub samples_3d: usize,
}

impl Default for SuiteSizes {
    fn default() -> Self {
        SuiteSizes { lp: 500, functions: 40, envelopes: 200, dominance: 200, team: 50, samples_3d: 2000 }
    }
}

pub fn run_all(sizes: SuiteSizes, seed: u64) -> Vec<SuiteOutcome> {
    let mut out = vec![suite_lp(sizes.lp, seed)];
    out.extend(suite_gradients(sizes.functions, seed));
    out.extend(suite_envelopes(sizes.envelopes, seed));
    out.extend(suite_dominance(sizes.dominance, seed, sizes.samples_3d));
    out.push(suite_idempotence(sizes.dominance.min(20), seed));
    out.extend(suite_homogeneous());
    out.extend(suite_team(sizes.team, seed));
    out
}
