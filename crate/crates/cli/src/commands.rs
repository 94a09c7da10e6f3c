use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use robust_contracts::concavify::improve_contract;
use robust_contracts::envelope::{lower_envelope, upper_envelope};
use robust_contracts::geometry::{audit_grid, uniform_grid};
use robust_contracts::homogeneous::{solve_bilateral, solve_common_agency, verify_nash, SearchDomain};
use robust_contracts::model::{ActionDomain, FunctionSpec};
use robust_contracts::oracles::worst_case_payoff;
use robust_contracts::selfcheck::{run_all, SuiteSizes};
use robust_contracts::team::{break_equilibrium, gamma_star};
use serde::Serialize;
use serde_json::{json, Value};

use crate::input::{parse_contract, parse_payment_list, parse_points, parse_team, parse_vector, read_json, FunctionArg};
use crate::report::{digest, RunReport};
use crate::Common;

const SAMPLES_3D: usize = 10_000;

fn write_output(c: &Common, text: &str) -> anyhow::Result<()> {
    match &c.out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.write_all(b"\n")?;
            Ok(())
        }
    }
}

/// Emits the report; exit code 2 when a gated residual exceeds `--tol`.
fn finish(
    c: &Common,
    command: &str,
    inputs: &Value,
    result: impl Serialize,
    residuals: BTreeMap<String, f64>,
    gated: &[&str],
    start: Instant,
) -> anyhow::Result<ExitCode> {
    let report = RunReport {
        command: command.to_string(),
        input_digest: digest(inputs),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        parameters: c.parameters(),
        result: serde_json::to_value(result)?,
        residuals,
    };
    write_output(c, &report.to_json())?;
    let failing: BTreeMap<&String, f64> = report
        .residuals
        .iter()
        .filter(|(k, v)| gated.contains(&k.as_str()) && !(**v <= c.tol))
        .map(|(k, v)| (k, *v))
        .collect();
    if failing.is_empty() {
        return Ok(ExitCode::SUCCESS);
    }
    eprintln!("numeric failure: residuals above --tol {}", c.tol);
    eprintln!("{}", json!({"tol": c.tol, "residuals": failing}));
    Ok(ExitCode::from(2))
}

fn load_contract(path: &Path) -> anyhow::Result<(robust_contracts::model::OutcomeSpace, robust_contracts::model::TabularContract, Value)> {
    let v = read_json(path)?;
    let (space, w) = parse_contract(&v, &path.display().to_string())?;
    Ok((space, w, v))
}

fn residual_map<const N: usize>(entries: [(&str, f64); N]) -> BTreeMap<String, f64> {
    entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

pub fn improve(c: &Common, contract: &Path, cost: &FunctionArg, utility: &FunctionArg, upper: Option<&str>) -> anyhow::Result<ExitCode> {
    let start = Instant::now();
    let (space, w, contract_json) = load_contract(contract)?;
    let d = space.dimension();
    let (cost, cost_json) = cost.resolve(d, None)?;
    let (utility, utility_json) = utility.resolve(d, None)?;
    let domain = match upper {
        Some(s) => ActionDomain::Box { upper: parse_vector(s)? },
        None => ActionDomain::Hull,
    };
    let grid = audit_grid(&space, &domain, c.grid, SAMPLES_3D)?;
    let r = improve_contract(&space, &w, &cost, &utility, &domain, &grid)?;
    let inputs = json!({"contract": contract_json, "cost": cost_json, "utility": utility_json, "domain": domain});
    let v = &r.verification;
    let residuals = residual_map([
        ("alignment", v.residuals.alignment),
        ("support", v.residuals.support),
        ("envelope_touch", v.residuals.envelope_touch),
        ("compatibility", v.residuals.compatibility),
        ("normal_cone", v.normal_cone),
        ("best_response_gap", r.dominating.best_response_gap.max(0.0)),
        ("dominance_shortfall", (-r.gap).max(0.0)),
    ]);
    let gated = ["alignment", "support", "envelope_touch", "compatibility", "normal_cone", "best_response_gap", "dominance_shortfall"];
    finish(c, "improve", &inputs, &r, residuals, &gated, start)
}

pub fn envelope(c: &Common, contract: &Path, points: Option<&Path>, point: &[String]) -> anyhow::Result<ExitCode> {
    let (space, w, _) = load_contract(contract)?;
    let mut queries = Vec::new();
    if let Some(p) = points {
        queries.extend(parse_points(&read_json(p)?, &p.display().to_string())?);
    }
    for s in point {
        queries.push(parse_vector(s)?);
    }
    if queries.is_empty() {
        anyhow::bail!(robust_contracts::Error::Input("no query points given (use --points or --point)".into()));
    }
    let d = space.dimension();
    let mut out = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = (1..=d).map(|i| format!("a_{i}")).collect();
    header.extend(["upper", "lower", "gap", "p_0"].map(String::from));
    header.extend((1..=d).map(|i| format!("p_{i}")));
    out.write_record(&header)?;
    for a in &queries {
        let up = upper_envelope(&space, &w, a)?;
        let lo = lower_envelope(&space, &w, a)?;
        let mut row: Vec<String> = a.iter().map(|x| x.to_string()).collect();
        row.extend([up.value, lo.value, up.value - lo.value, up.intercept].map(|x| x.to_string()));
        row.extend(up.slope.iter().map(|x| x.to_string()));
        out.write_record(&row)?;
    }
    let text = String::from_utf8(out.into_inner()?)?;
    write_output(c, text.trim_end())?;
    Ok(ExitCode::SUCCESS)
}

pub fn worst_case(c: &Common, contract: &Path, cost: &FunctionArg, utility: &FunctionArg) -> anyhow::Result<ExitCode> {
    let start = Instant::now();
    let (space, w, contract_json) = load_contract(contract)?;
    let d = space.dimension();
    let (cost, cost_json) = cost.resolve(d, None)?;
    let (utility, utility_json) = utility.resolve(d, None)?;
    let grid = audit_grid(&space, &ActionDomain::Hull, c.grid, SAMPLES_3D)?;
    let r = worst_case_payoff(&space, &w, &cost, &utility, &grid)?;
    let inputs = json!({"contract": contract_json, "cost": cost_json, "utility": utility_json});
    let residuals = residual_map([
        ("induced_compatibility", r.mapping.induced.residuals(&space).mean),
        ("floor_compatibility", r.mapping.floor.residuals(&space).mean),
    ]);
    finish(c, "worst-case", &inputs, &r, residuals, &["induced_compatibility", "floor_compatibility"], start)
}

pub fn bilateral(
    c: &Common,
    ku: Option<f64>,
    kc: Option<f64>,
    utility: &FunctionArg,
    cost: &FunctionArg,
    dimension: usize,
) -> anyhow::Result<ExitCode> {
    let start = Instant::now();
    let (u, u_json) = utility.resolve(dimension, ku)?;
    let (cst, c_json) = cost.resolve(dimension, kc)?;
    let s = solve_bilateral(&u, &cst, &SearchDomain::Orthant { dimension })?;
    let inputs = json!({"utility": u_json, "cost": c_json, "dimension": dimension});
    let mut residuals = residual_map([
        ("payment_identity", s.payment_identity_residual),
        ("contract", s.contract_residual),
    ]);
    if let (Some(r), Some(f)) = (s.ratio, s.formula_ratio) {
        residuals.insert("formula_gap".into(), (r - f).abs());
    }
    finish(c, "bilateral", &inputs, &s, residuals, &["contract"], start)
}

#[allow(clippy::too_many_arguments)]
pub fn agency(
    c: &Common,
    principals: usize,
    ku: Option<f64>,
    kc: Option<f64>,
    utility: Option<&FunctionArg>,
    utility_files: &[PathBuf],
    cost: &FunctionArg,
    dimension: usize,
) -> anyhow::Result<ExitCode> {
    let start = Instant::now();
    let mut us = Vec::new();
    let mut u_json = Vec::new();
    if !utility_files.is_empty() {
        for f in utility_files {
            let (u, j) = FunctionArg::File(f.display().to_string()).resolve(dimension, ku)?;
            us.push(u);
            u_json.push(j);
        }
    } else {
        let arg = utility.ok_or_else(|| robust_contracts::Error::Input("give --utility or --utility-file".into()))?;
        let (u, j) = arg.resolve(dimension, ku)?;
        us = vec![u; principals];
        u_json = vec![j; principals];
    }
    let (cst, c_json) = cost.resolve(dimension, kc)?;
    let s = solve_common_agency(&us, &cst, &SearchDomain::Orthant { dimension })?;
    let upper: Vec<f64> =
        (0..dimension).map(|j| 2.0 * s.action[j].max(s.first_best_action[j]).max(1e-3)).collect();
    let per_axis = if dimension == 1 { c.grid.max(2001) } else { c.grid };
    let nash = verify_nash(&s, &us, &cst, &uniform_grid(&upper, per_axis))?;
    let inputs = json!({"utilities": u_json, "cost": c_json, "dimension": dimension});
    let mut residuals = residual_map([
        ("agent_foc", s.agent_foc_residual),
        ("equilibrium", s.equilibrium_residual),
        ("nash_gain", nash.max_gain.max(0.0)),
    ]);
    if let (Some(r), Some(f)) = (s.ratio, s.formula_ratio) {
        residuals.insert("formula_gap".into(), (r - f).abs());
    }
    let code = finish(c, "agency", &inputs, json!({"solution": s, "nash": nash}), residuals, &["agent_foc", "equilibrium"], start)?;
    if !nash.passed {
        eprintln!("numeric failure: a principal gains {:.3e} by deviating", nash.max_gain);
        return Ok(ExitCode::from(2));
    }
    Ok(code)
}

pub fn team(c: &Common, instance: &Path) -> anyhow::Result<ExitCode> {
    let start = Instant::now();
    let v = read_json(instance)?;
    let inst = parse_team(&v, &instance.display().to_string())?;
    let s = gamma_star(&inst)?;
    let mut residuals = residual_map([("identity", s.residuals.identity), ("budget", s.residuals.budget)]);
    if let Some(e) = s.residuals.equilibrium {
        residuals.insert("equilibrium".into(), e);
    }
    if let Some(p) = s.residuals.potential {
        residuals.insert("potential".into(), p);
    }
    finish(c, "team", &json!({"instance": v}), &s, residuals, &["identity", "budget", "potential"], start)
}

pub fn break_profile(c: &Common, instance: &Path, contracts: &Path, profile: &str, agent_cost: &FunctionArg) -> anyhow::Result<ExitCode> {
    let start = Instant::now();
    let v = read_json(instance)?;
    let inst = parse_team(&v, &instance.display().to_string())?;
    let cv = read_json(contracts)?;
    let ws = parse_payment_list(&cv, &contracts.display().to_string())?;
    let a = parse_vector(profile)?;
    let (cost, cost_json): (FunctionSpec, Value) = agent_cost.resolve(1, None)?;
    let cert = break_equilibrium(&inst, &ws, &a, &cost)?;
    let residuals = match &cert {
        Some(cert) => residual_map([("payment", cert.payment_residual)]),
        None => BTreeMap::new(),
    };
    let inputs = json!({"instance": v, "contracts": cv, "profile": a, "agent_cost": cost_json});
    finish(c, "break", &inputs, &cert, residuals, &["payment"], start)
}

pub fn verify(c: &Common, quick: bool) -> anyhow::Result<ExitCode> {
    let start = Instant::now();
    let sizes = if quick {
        SuiteSizes { lp: 60, functions: 10, envelopes: 20, dominance: 12, team: 8, samples_3d: 400 }
    } else {
        SuiteSizes::default()
    };
    let suites = run_all(sizes, c.seed);
    let mut table = format!("{:<34} {:>6} {:>8} {:>12} {:>10}  status\n", "suite", "cases", "failures", "worst", "tolerance");
    for s in &suites {
        table.push_str(&format!(
            "{:<34} {:>6} {:>8} {:>12.3e} {:>10.1e}  {}\n",
            s.name,
            s.cases,
            s.failures,
            s.worst,
            s.tolerance,
            if s.passed { "PASS" } else { "FAIL" }
        ));
    }
    print!("{table}");
    let failed = suites.iter().filter(|s| !s.passed).count();
    if c.out.is_some() {
        let residuals = suites.iter().map(|s| (s.name.clone(), s.worst)).collect();
        finish(c, "verify", &json!({"sizes": sizes}), &suites, residuals, &[], start)?;
    }
    if failed > 0 {
        eprintln!("{failed} suite(s) failed");
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}
