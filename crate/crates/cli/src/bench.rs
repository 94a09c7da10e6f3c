//! Degree sweeps written as CSV tables.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use robust_contracts::homogeneous::{ratio_bilateral, ratio_common_agency, solve_bilateral, solve_common_agency, SearchDomain};
use robust_contracts::model::FunctionSpec;
use robust_contracts::team::{gamma_star, team_ratio, TeamInstance};

use crate::Common;

const KU: [f64; 4] = [0.2, 0.4, 0.6, 0.8];
const KC: [f64; 4] = [1.5, 2.0, 3.0, 4.0];
const TEAM_K: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];
const TEAM_N: [usize; 3] = [2, 3, 4];

fn power(k: f64) -> FunctionSpec {
    FunctionSpec::power_sum(vec![1.0], k).with_degree(k)
}

fn cell(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn open(dir: &Path, name: &str) -> anyhow::Result<csv::Writer<std::fs::File>> {
    let path = dir.join(name);
    csv::Writer::from_path(&path).with_context(|| format!("cannot write {}", path.display()))
}

fn bilateral(dir: &Path) -> anyhow::Result<usize> {
    let mut out = open(dir, "bilateral.csv")?;
    out.write_record(["k_u", "k_c", "action", "phi", "ratio_numeric", "ratio_formula", "abs_error"])?;
    let mut rows = 0;
    for ku in KU {
        for kc in KC {
            let s = solve_bilateral(&power(ku), &power(kc), &SearchDomain::Orthant { dimension: 1 })?;
            let formula = ratio_bilateral(ku, kc)?;
            let err = s.ratio.map(|r| (r - formula).abs());
            out.write_record([
                ku.to_string(),
                kc.to_string(),
                s.action[0].to_string(),
                s.contract[0].to_string(),
                cell(s.ratio),
                formula.to_string(),
                cell(err),
            ])?;
            rows += 1;
        }
    }
    out.flush()?;
    Ok(rows)
}

fn agency(dir: &Path) -> anyhow::Result<usize> {
    let mut out = open(dir, "agency.csv")?;
    out.write_record(["n", "k_u", "k_c", "action", "phi", "ratio_numeric", "ratio_formula", "abs_error"])?;
    let mut rows = 0;
    for n in [2usize, 3] {
        for ku in KU {
            for kc in KC {
                let us = vec![power(ku); n];
                let s = solve_common_agency(&us, &power(kc), &SearchDomain::Orthant { dimension: 1 })?;
                let formula = ratio_common_agency(ku, kc, n).ok();
                let err = match (s.ratio, formula) {
                    (Some(r), Some(f)) => Some((r - f).abs()),
                    _ => None,
                };
                out.write_record([
                    n.to_string(),
                    ku.to_string(),
                    kc.to_string(),
                    s.action[0].to_string(),
                    s.contracts[0][0].to_string(),
                    cell(s.ratio),
                    cell(formula),
                    cell(err),
                ])?;
                rows += 1;
            }
        }
    }
    out.flush()?;
    Ok(rows)
}

fn team(dir: &Path) -> anyhow::Result<usize> {
    let mut out = open(dir, "team.csv")?;
    out.write_record(["n", "k", "gamma_star", "share_1", "v_lin", "v_fb", "ratio_numeric", "bound", "method"])?;
    let mut rows = 0;
    for n in TEAM_N {
        for k in TEAM_K {
            let inst = TeamInstance::new(
                n,
                FunctionSpec::cobb_douglas(1.0, vec![k / n as f64; n]),
                1.0,
                vec![0.0, 1.0],
            )?;
            let s = gamma_star(&inst)?;
            let r = team_ratio(&inst)?;
            out.write_record([
                n.to_string(),
                k.to_string(),
                s.gamma_star.to_string(),
                s.shares[0].to_string(),
                r.v_lin.to_string(),
                r.v_fb.to_string(),
                cell(r.ratio),
                r.bound.to_string(),
                format!("{:?}", s.method),
            ])?;
            rows += 1;
        }
    }
    out.flush()?;
    Ok(rows)
}

pub fn run(c: &Common) -> anyhow::Result<ExitCode> {
    let dir = c.out.clone().unwrap_or_else(|| PathBuf::from("bench_out"));
    std::fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let b = bilateral(&dir)?;
    let a = agency(&dir)?;
    let t = team(&dir)?;
    println!("wrote {b} bilateral, {a} agency and {t} team rows to {}", dir.display());
    Ok(ExitCode::SUCCESS)
}
