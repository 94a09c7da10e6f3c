//! End-to-end acceptance checks, one line per criterion. Exits nonzero on any failure.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use robust_contracts::concavify::improve_contract;
use robust_contracts::envelope::upper_envelope;
use robust_contracts::geometry::{audit_grid, uniform_grid};
use robust_contracts::homogeneous::{solve_bilateral, solve_common_agency, verify_nash, SearchDomain};
use robust_contracts::model::{ActionDomain, FunctionSpec, Objective, OutcomeSpace, TabularContract};
use robust_contracts::oracles::{fd_hessian, worst_case_payoff};
use robust_contracts::selfcheck::{random_instance, suite_envelopes, suite_gradients, suite_lp};
use robust_contracts::team::{break_equilibrium, gamma_star, hardness_instance, hardness_value, is_affine, TeamInstance};

use common::*;

type Outcome = Result<String, String>;

fn close(name: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    if (got - want).abs() <= tol && got.is_finite() {
        Ok(())
    } else {
        Err(format!("{name} = {got}, expected {want} ± {tol}"))
    }
}

fn fail(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn e1() -> Outcome {
    let space = OutcomeSpace::new(2, vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).map_err(fail)?;
    let w = TabularContract::new(vec![0.0, 2.0, 2.0, 3.0]).map_err(fail)?;
    let cost = FunctionSpec::power_sum(vec![1.0, 1.0], 2.0);
    let utility = FunctionSpec::linear(vec![2.0, 2.0]);
    let grid = audit_grid(&space, &ActionDomain::Hull, 21, 10_000).map_err(fail)?;
    let r = improve_contract(&space, &w, &cost, &utility, &ActionDomain::Hull, &grid).map_err(fail)?;
    for j in 0..2 {
        close("a♯", r.certificate.action[j], 0.5, 1e-5)?;
        close("φ", r.linear.contract.slope[j], 1.0, 1e-6)?;
    }
    close("V_P(φ)", r.value_linear, 1.0, 1e-6)?;
    close("V_P(w;F♯)", r.value_tabular, 0.0, 1e-6)?;
    Ok(format!("a♯ = {:?}, V_P(φ) = {}, V_P(w;F♯) = {}", r.certificate.action, r.value_linear, r.value_tabular))
}

fn e2() -> Outcome {
    let space = OutcomeSpace::scalar(&[0.0, 0.5, 1.0]).map_err(fail)?;
    let w = TabularContract::new(vec![0.0, 0.4, 0.5]).map_err(fail)?;
    let cost = FunctionSpec::power_sum(vec![1.0], 2.0);
    let utility = FunctionSpec::linear(vec![1.0]);
    let grid = audit_grid(&space, &ActionDomain::Hull, 2001, 0).map_err(fail)?;
    let r = improve_contract(&space, &w, &cost, &utility, &ActionDomain::Hull, &grid).map_err(fail)?;
    close("a♯", r.certificate.action[0], 0.4, 1e-6)?;
    close("φ", r.linear.contract.slope[0], 0.8, 1e-6)?;
    let f = &r.dominating.distribution;
    let mut dense = [0.0; 3];
    for (&k, &p) in f.support.iter().zip(&f.weights) {
        dense[k] += p;
    }
    close("F♯(0)", dense[0], 0.2, 1e-6)?;
    close("F♯(0.5)", dense[1], 0.8, 1e-6)?;
    close("F♯(1)", dense[2], 0.0, 1e-6)?;
    close("V_P(φ)", r.value_linear, 0.08, 1e-6)?;
    let wc = worst_case_payoff(&space, &w, &cost, &utility, &grid).map_err(fail)?;
    // Hand solution: induced action solves 0.8a − a² = 1/16 on the low branch, payoff a − 0.8a.
    let a_star = (0.8 - (0.64f64 - 0.25).sqrt()) / 2.0;
    close("worst-case", wc.value, 0.2 * a_star, 1e-3)?;
    if wc.value > r.value_linear + 1e-12 {
        return Err(format!("worst-case {} exceeds V_P(φ) {}", wc.value, r.value_linear));
    }
    Ok(format!("a♯ = {}, φ = {}, worst-case = {:.5} ≤ {}", r.certificate.action[0], r.linear.contract.slope[0], wc.value, r.value_linear))
}

fn random_dominance() -> Outcome {
    let rows: Vec<Result<(f64, f64, f64), String>> = (0..200u64)
        .into_par_iter()
        .map(|c| {
            let inst = random_instance(&mut ChaCha8Rng::seed_from_u64(0xacce_0000 + c));
            let space = &inst.space;
            let d = space.dimension();
            let grid = audit_grid(space, &inst.domain, 21, 2000).map_err(fail)?;
            let r = improve_contract(space, &inst.contract, &inst.cost, &inst.utility, &inst.domain, &grid)
                .map_err(|e| format!("instance {c}: {e}"))?;
            let cert = &r.certificate;
            // Independent recomputation: support, touch, and λ's mean against brute-force envelopes.
            let psi = &cert.psi;
            let support = space
                .outcomes()
                .iter()
                .zip(&inst.contract.payments)
                .map(|(x, w)| w - psi.eval(x))
                .fold(0.0f64, f64::max);
            let (hi, _) = brute_envelopes(space.outcomes(), &inst.contract.payments, &cert.action)
                .ok_or_else(|| format!("instance {c}: a♯ outside the hull"))?;
            let touch = (psi.eval(&cert.action) - hi).abs();
            let lambda = cert.lambda.residuals(space);
            let invariants = support.max(touch).max(lambda.mean).max(lambda.weight_sum).max(r.verification.max_residual);
            let oracle = if d <= 2 {
                let wc = worst_case_payoff(space, &inst.contract, &inst.cost, &inst.utility, &grid).map_err(fail)?;
                wc.value - r.value_linear
            } else {
                f64::NEG_INFINITY
            };
            Ok((invariants, -r.gap, oracle))
        })
        .collect();
    let rows: Vec<(f64, f64, f64)> = rows.into_iter().collect::<Result<_, _>>()?;
    let inv = rows.iter().map(|r| r.0).fold(0.0, f64::max);
    let gap = rows.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let orc = rows.iter().map(|r| r.2).fold(f64::NEG_INFINITY, f64::max);
    if inv > 1e-5 || gap > 1e-6 || orc > 1e-4 {
        return Err(format!("worst invariant {inv:.2e}, worst −gap {gap:.2e}, worst oracle excess {orc:.2e}"));
    }
    Ok(format!("200 instances: worst invariant {inv:.2e}, worst −gap {gap:.2e}, worst oracle excess {orc:.2e}"))
}

fn power(k: f64) -> FunctionSpec {
    FunctionSpec::power_sum(vec![1.0], k).with_degree(k)
}

fn bilateral() -> Outcome {
    let dom = SearchDomain::Orthant { dimension: 1 };
    let s = solve_bilateral(&power(0.5), &power(2.0), &dom).map_err(fail)?;
    let (v_lin, v_fb) = bilateral_values(0.5, 2.0);
    close("V_LIN", s.v_lin, 0.375, 1e-6)?;
    close("V_LIN oracle", v_lin, 0.375, 1e-6)?;
    close("V_FB", s.v_fb, 0.472470, 1e-5)?;
    close("V_FB oracle", v_fb, 0.472470, 1e-5)?;
    close("ratio", s.ratio.ok_or("no ratio")?, 2f64.powf(-1.0 / 3.0), 1e-4)?;
    let mut worst = 0.0f64;
    for ku in [0.2, 0.4, 0.6, 0.8] {
        for kc in [1.5, 2.0, 3.0, 4.0] {
            let s = solve_bilateral(&power(ku), &power(kc), &dom).map_err(fail)?;
            let (v_lin, v_fb) = bilateral_values(ku, kc);
            let r = s.ratio.ok_or("no ratio")?;
            close(&format!("ratio({ku},{kc}) vs formula"), r, bilateral_ratio(ku, kc), 1e-3)?;
            close(&format!("ratio({ku},{kc}) vs oracle"), r, v_lin / v_fb, 1e-3)?;
            worst = worst.max((r - bilateral_ratio(ku, kc)).abs());
        }
    }
    Ok(format!("V_LIN = {}, V_FB = {:.6}, grid worst |ratio − formula| = {worst:.2e}", s.v_lin, s.v_fb))
}

fn agency() -> Outcome {
    let u = power(0.5);
    let c = power(2.0);
    let s = solve_common_agency(&[u.clone(), u.clone()], &c, &SearchDomain::Orthant { dimension: 1 }).map_err(fail)?;
    close("a*", s.action[0], 6f64.powf(-2.0 / 3.0), 1e-6)?;
    for phi in &s.contracts {
        close("φᵢ*", phi[0], 0.302853, 1e-5)?;
    }
    if s.agent_foc_residual > 1e-7 {
        return Err(format!("agent FOC residual {:.2e}", s.agent_foc_residual));
    }
    let grid = uniform_grid(&[2.0], 4001);
    let nash = verify_nash(&s, &[u.clone(), u], &c, &grid).map_err(fail)?;
    if !(nash.max_gain <= 1e-5) {
        return Err(format!("a principal gains {:.2e} by deviating", nash.max_gain));
    }
    // Welfare ratio against golden-section optima of 2√a − a².
    let sw = |a: f64| 2.0 * a.sqrt() - a * a;
    let (_, sw_fb) = golden_max(sw, 0.0, 10.0);
    let ratio = sw(s.action[0]) / sw_fb;
    close("SW ratio vs formula", ratio, agency_ratio(0.5, 2.0), 1e-3)?;
    close("SW ratio (solver)", s.ratio.ok_or("no ratio")?, ratio, 1e-6)?;
    Ok(format!("a* = {:.7}, φ* = {:.6}, FOC {:.1e}, Nash gain {:.1e}, SW ratio {ratio:.6}", s.action[0], s.contracts[0][0], s.agent_foc_residual, nash.max_gain))
}

fn team() -> Outcome {
    let inst = TeamInstance::new(2, FunctionSpec::cobb_douglas(1.0, vec![0.2, 0.2]), 1.0, vec![0.0, 1.0]).map_err(fail)?;
    let s = gamma_star(&inst).map_err(fail)?;
    // Symmetric equal-share equilibrium: 0.2·φ·t^{-0.6} = 1 at φ = 1/2, so t = 0.1^{5/3}.
    let k: f64 = 0.4;
    let t = 0.1f64.powf(5.0 / 3.0);
    let v_lin = (t * t).powf(0.2);
    let gamma = v_lin - 2.0 * t / 0.5;
    let v_fb = 0.25f64.powf(0.2).powf(1.0 / (1.0 - k));
    close("Γ* vs hand", s.gamma_star, gamma, 1e-5)?;
    close("V_LIN vs hand", s.v_lin, v_lin, 1e-5)?;
    close("V_FB vs hand", s.v_fb, v_fb, 1e-5)?;
    close("Γ*", s.gamma_star, 0.129266, 1e-5)?;
    for phi in &s.shares {
        close("φ*", *phi, 0.5, 1e-5)?;
    }
    close("V_LIN", s.v_lin, 0.215443, 1e-5)?;
    close("V_FB", s.v_fb, 0.629961, 1e-5)?;
    let ratio = s.ratio.ok_or("no ratio")?;
    close("ratio", ratio, 0.341995, 1e-4)?;
    close("ratio vs bound", ratio, (k / 2.0).powf(k / (1.0 - k)), 1e-4)?;
    let identity = (s.gamma_star - (1.0 - k) * s.output).abs();
    if identity > 1e-6 {
        return Err(format!("Γ* − (1−k)f(a*) = {identity:.2e}"));
    }
    Ok(format!("Γ* = {:.6}, V_LIN = {:.6}, V_FB = {:.6}, ratio = {ratio:.6}, identity {identity:.1e}", s.gamma_star, s.v_lin, s.v_fb))
}

fn dichotomy() -> Outcome {
    let cost = FunctionSpec::power_sum(vec![1.0], 2.0);
    let results: Vec<Result<usize, String>> = (0..50u64)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(0xd1c0 + c);
            let m = rng.gen_range(3..=6);
            let mut outputs = vec![0.0];
            outputs.extend((2..m).map(|_| rng.gen_range(0.2..3.0)));
            outputs.push(3.5);
            let inst = TeamInstance::new(2, FunctionSpec::cobb_douglas(1.0, vec![0.2, 0.2]), 1.0, outputs.clone()).map_err(fail)?;
            let space = inst.output_space().map_err(fail)?;
            let affine = c % 5 == 0;
            let contracts: Vec<TabularContract> = (0..2)
                .map(|_| {
                    let pay = if affine {
                        let (c0, c1) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
                        outputs.iter().map(|x| c0 + c1 * x).collect()
                    } else {
                        outputs.iter().map(|_| rng.gen_range(0.0..3.0)).collect()
                    };
                    TabularContract::new(pay)
                })
                .collect::<Result<_, _>>()
                .map_err(fail)?;
            // Affinity judged independently: a least-squares line through the payments.
            let independent_affine = contracts.iter().all(|w| line_residual(&outputs, &w.payments) <= 1e-9);
            if independent_affine != contracts.iter().all(|w| is_affine(&space, w)) {
                return Err(format!("set {c}: affinity test disagrees"));
            }
            if break_equilibrium(&inst, &contracts, &[0.0, 0.0], &cost).map_err(fail)?.is_some() {
                return Err(format!("set {c}: certificate at profile 0"));
            }
            let mut certs = 0;
            for p in 0..20 {
                let profile = [(1 + p % 10) as f64 / 10.0, (p / 2 % 11) as f64 / 10.0];
                let cert = break_equilibrium(&inst, &contracts, &profile, &cost).map_err(fail)?;
                match (cert, independent_affine) {
                    (None, true) => {}
                    (Some(_), true) => return Err(format!("set {c}: certificate for affine contracts")),
                    (None, false) => return Err(format!("set {c}: no certificate at {profile:?}")),
                    (Some(cert), false) => {
                        let w = &contracts[cert.agent].payments;
                        let mut dev = profile.to_vec();
                        dev[cert.agent] -= cert.epsilon;
                        let f = |a: &[f64]| (a[0] * a[1]).powf(0.2);
                        let mean = |d: &robust_contracts::model::DistributionAtAction| {
                            d.support.iter().zip(&d.weights).map(|(&k, p)| p * outputs[k]).sum::<f64>()
                        };
                        let pay = |d: &robust_contracts::model::DistributionAtAction| {
                            d.support.iter().zip(&d.weights).map(|(&k, p)| p * w[k]).sum::<f64>()
                        };
                        let gain = profile[cert.agent].powi(2) - dev[cert.agent].powi(2);
                        let ok = cert.epsilon > 0.0
                            && cert.epsilon <= profile[cert.agent]
                            && (mean(&cert.at_profile) - f(&profile)).abs() <= 1e-8
                            && (mean(&cert.at_deviation) - f(&dev)).abs() <= 1e-8
                            && (pay(&cert.at_profile) - pay(&cert.at_deviation)).abs() <= 1e-8
                            && cert.at_profile.weights.iter().chain(&cert.at_deviation.weights).all(|p| *p >= -1e-12)
                            && (cert.at_profile.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-10
                            && (cert.at_deviation.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-10
                            && gain > 0.0
                            && (gain - cert.gain).abs() <= 1e-12;
                        if !ok {
                            return Err(format!("set {c}: invalid certificate at {profile:?}"));
                        }
                        certs += 1;
                    }
                }
            }
            Ok(certs)
        })
        .collect();
    let certs: usize = results.into_iter().collect::<Result<Vec<_>, _>>()?.iter().sum();
    Ok(format!("50 contract sets × 20 profiles, {certs} certificates checked"))
}

fn line_residual(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    x.iter().zip(y).map(|(a, b)| (b - my - slope * (a - mx)).abs()).fold(0.0, f64::max)
}

fn concavity() -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    let mut worst_fd_error = 0.0f64;
    for c in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0xcd00 + c);
        let n = rng.gen_range(2..=4);
        let total = rng.gen_range(0.1..=1.0);
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.0)).collect();
        let s: f64 = raw.iter().sum();
        let theta: Vec<f64> = raw.iter().map(|v| v * total / s).collect();
        let spec = FunctionSpec::cobb_douglas(1.0, theta.clone());
        for _ in 0..100 {
            let a: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..2.0)).collect();
            let h = fd_hessian(&|x: &[f64]| spec.value(x), &a);
            let h: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| 0.5 * (h[(i, j)] + h[(j, i)])).collect()).collect();
            let exact = cobb_douglas_hessian(1.0, &theta, &a);
            for i in 0..n {
                for j in 0..n {
                    worst_fd_error = worst_fd_error.max((h[i][j] - exact[i][j]).abs());
                }
            }
            let top = symmetric_eigenvalues(h).into_iter().fold(f64::NEG_INFINITY, f64::max);
            worst = worst.max(top);
        }
    }
    if worst > 1e-6 || worst_fd_error > 1e-5 {
        return Err(format!("max eigenvalue {worst:.2e}, FD vs exact Hessian {worst_fd_error:.2e}"));
    }
    Ok(format!("20 specs × 100 points: max eigenvalue {worst:.2e}, FD vs exact {worst_fd_error:.1e}"))
}

fn hardness() -> Outcome {
    let pairs: Vec<(usize, usize)> = (0..4).flat_map(|i| (i + 1..4).map(move |j| (i, j))).collect();
    let rows: Vec<Result<(usize, f64), String>> = (0u32..(1 << pairs.len()) - 1)
        .into_par_iter()
        .map(|mask| {
            let edges: Vec<(usize, usize)> =
                pairs.iter().enumerate().filter(|(t, _)| mask >> t & 1 == 1).map(|(_, e)| *e).collect();
            let h = hardness_instance(4, &edges).map_err(fail)?;
            Ok((independence_number(4, &edges), hardness_value(&h, 42).map_err(fail)?.value))
        })
        .collect();
    let rows: Vec<(usize, f64)> = rows.into_iter().collect::<Result<_, _>>()?;
    let mut by_alpha = [(f64::INFINITY, f64::NEG_INFINITY); 5];
    for &(a, v) in &rows {
        by_alpha[a].0 = by_alpha[a].0.min(v);
        by_alpha[a].1 = by_alpha[a].1.max(v);
    }
    for a in 2..5 {
        for b in a + 1..5 {
            if by_alpha[a].1 > by_alpha[b].0 + 1e-9 {
                return Err(format!("α = {a} reaches {} but α = {b} only {}", by_alpha[a].1, by_alpha[b].0));
            }
        }
    }
    let summary: Vec<String> = (2..5).map(|a| format!("α={a}: {:.6}", by_alpha[a].1)).collect();
    Ok(format!("{} graphs, {}", rows.len(), summary.join(", ")))
}

fn infrastructure() -> Outcome {
    let mut lines = Vec::new();
    let mut suites = vec![suite_lp(500, 10)];
    suites.extend(suite_gradients(40, 10));
    suites.extend(suite_envelopes(200, 10));
    for s in &suites {
        if !s.passed {
            return Err(format!("{} failed {} of {} (worst {:.2e})", s.name, s.failures, s.cases, s.worst));
        }
        lines.push(format!("{} {:.1e}", s.name, s.worst));
    }
    // Library envelopes against subset enumeration on random 2-d clouds.
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(0xe0e0);
    for _ in 0..100 {
        let m = rng.gen_range(3..=7);
        let mut pts = vec![vec![0.0, 0.0]];
        pts.extend((1..m).map(|_| vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]));
        let pay: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..3.0)).collect();
        let space = OutcomeSpace::new(2, pts.clone()).map_err(fail)?;
        let w = TabularContract::new(pay.clone()).map_err(fail)?;
        let lam: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..1.0)).collect();
        let t: f64 = lam.iter().sum();
        let a: Vec<f64> = (0..2).map(|j| pts.iter().zip(&lam).map(|(p, l)| p[j] * l / t).sum()).collect();
        let (hi, _) = brute_envelopes(&pts, &pay, &a).ok_or("hull point rejected by enumeration")?;
        worst = worst.max((upper_envelope(&space, &w, &a).map_err(fail)?.value - hi).abs());
    }
    if worst > 1e-8 {
        return Err(format!("upper envelope vs enumeration {worst:.2e}"));
    }
    lines.push(format!("envelope_vs_enumeration {worst:.1e}"));
    Ok(lines.join(", "))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("binary two-task pipeline", e1),
        ("three-outcome scalar pipeline", e2),
        ("random dominance suite", random_dominance),
        ("bilateral homogeneous ratios", bilateral),
        ("common agency equilibrium", agency),
        ("team production closed forms", team),
        ("robustness dichotomy", dichotomy),
        ("supermodular concavity", concavity),
        ("hardness monotonicity", hardness),
        ("LP, gradient and envelope suites", infrastructure),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS [{secs:6.2}s] {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL [{secs:6.2}s] {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
