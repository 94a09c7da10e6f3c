//! Input files: JSON loading with pointer diagnostics, and function presets.

use std::fmt;
use std::path::Path;

use anyhow::Context;
use robust_contracts::model::{FunctionSpec, OutcomeSpace, TabularContract};
use robust_contracts::team::TeamInstance;
use serde_json::Value;

/// A schema violation located by a JSON pointer into the offending file.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaError {
    pub file: String,
    pub pointer: String,
    pub message: String,
}

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: at \"{}\": {}", self.file, self.pointer, self.message)
    }
}

impl std::error::Error for SchemaError {}

pub type SchemaResult<T> = std::result::Result<T, SchemaError>;

struct Cursor<'a> {
    file: &'a str,
}

impl Cursor<'_> {
    fn err<T>(&self, pointer: &str, message: impl Into<String>) -> SchemaResult<T> {
        Err(SchemaError { file: self.file.to_string(), pointer: pointer.to_string(), message: message.into() })
    }

    fn field<'v>(&self, v: &'v Value, pointer: &str, key: &str) -> SchemaResult<&'v Value> {
        match v.as_object() {
            Some(map) => match map.get(key) {
                Some(x) => Ok(x),
                None => self.err(pointer, format!("missing field \"{key}\"")),
            },
            None => self.err(pointer, "expected an object"),
        }
    }

    fn number(&self, v: &Value, pointer: &str) -> SchemaResult<f64> {
        match v.as_f64() {
            Some(x) if x.is_finite() => Ok(x),
            _ => self.err(pointer, "expected a finite number"),
        }
    }

    fn count(&self, v: &Value, pointer: &str) -> SchemaResult<usize> {
        match v.as_u64() {
            Some(x) => Ok(x as usize),
            None => self.err(pointer, "expected a nonnegative integer"),
        }
    }

    fn numbers(&self, v: &Value, pointer: &str) -> SchemaResult<Vec<f64>> {
        let Some(items) = v.as_array() else { return self.err(pointer, "expected an array of numbers") };
        items.iter().enumerate().map(|(i, x)| self.number(x, &format!("{pointer}/{i}"))).collect()
    }

    fn nonnegative(&self, v: &Value, pointer: &str) -> SchemaResult<Vec<f64>> {
        let xs = self.numbers(v, pointer)?;
        if let Some(i) = xs.iter().position(|x| *x < 0.0) {
            return self.err(&format!("{pointer}/{i}"), format!("value {} must be nonnegative", xs[i]));
        }
        Ok(xs)
    }
}

pub fn read_json(path: &Path) -> anyhow::Result<Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| {
        anyhow::Error::new(SchemaError {
            file: path.display().to_string(),
            pointer: String::new(),
            message: format!("not valid JSON: {e}"),
        })
    })
}

/// A contract file `{"dimension", "outcomes", "payments"}`.
pub fn parse_contract(v: &Value, file: &str) -> SchemaResult<(OutcomeSpace, TabularContract)> {
    let c = Cursor { file };
    let d = c.count(c.field(v, "", "dimension")?, "/dimension")?;
    if d == 0 {
        return c.err("/dimension", "dimension must be at least 1");
    }
    let outcomes_v = c.field(v, "", "outcomes")?;
    let Some(rows) = outcomes_v.as_array() else { return c.err("/outcomes", "expected an array of outcome vectors") };
    let mut outcomes = Vec::with_capacity(rows.len());
    for (k, row) in rows.iter().enumerate() {
        let x = c.nonnegative(row, &format!("/outcomes/{k}"))?;
        if x.len() != d {
            return c.err(&format!("/outcomes/{k}"), format!("outcome has length {}, expected {d}", x.len()));
        }
        outcomes.push(x);
    }
    let payments = c.nonnegative(c.field(v, "", "payments")?, "/payments")?;
    if payments.len() != outcomes.len() {
        return c.err("/payments", format!("{} payments for {} outcomes", payments.len(), outcomes.len()));
    }
    let space = OutcomeSpace::new(d, outcomes).or_else(|e| c.err("/outcomes", e.to_string()))?;
    let w = TabularContract::new(payments).or_else(|e| c.err("/payments", e.to_string()))?;
    Ok((space, w))
}

const FAMILIES: [&str; 6] = ["power_sum", "norm_power", "cobb_douglas", "linear", "quadratic", "sum_of_specs"];

/// A function file `{"family", "params", "degree"}`.
pub fn parse_function(v: &Value, file: &str, pointer: &str) -> SchemaResult<FunctionSpec> {
    let c = Cursor { file };
    let family = c.field(v, pointer, "family")?;
    let Some(name) = family.as_str() else { return c.err(&format!("{pointer}/family"), "expected a string") };
    if !FAMILIES.contains(&name) {
        return c.err(&format!("{pointer}/family"), format!("unknown family \"{name}\"; expected one of {FAMILIES:?}"));
    }
    let params = c.field(v, pointer, "params")?;
    if !params.is_object() {
        return c.err(&format!("{pointer}/params"), "expected an object");
    }
    if name == "sum_of_specs" {
        let specs = c.field(params, &format!("{pointer}/params"), "specs")?;
        let Some(items) = specs.as_array() else { return c.err(&format!("{pointer}/params/specs"), "expected an array") };
        for (i, s) in items.iter().enumerate() {
            parse_function(s, file, &format!("{pointer}/params/specs/{i}"))?;
        }
    }
    if let Some(deg) = v.get("degree") {
        if !deg.is_null() {
            c.number(deg, &format!("{pointer}/degree"))?;
        }
    }
    serde_json::from_value::<FunctionSpec>(v.clone()).or_else(|e| c.err(&format!("{pointer}/params"), e.to_string()))
}

/// A team instance `{"n", "production", "a_max", "outputs"}`.
pub fn parse_team(v: &Value, file: &str) -> SchemaResult<TeamInstance> {
    let c = Cursor { file };
    let n = c.count(c.field(v, "", "n")?, "/n")?;
    let production = parse_function(c.field(v, "", "production")?, file, "/production")?;
    let a_max = c.number(c.field(v, "", "a_max")?, "/a_max")?;
    let outputs = c.nonnegative(c.field(v, "", "outputs")?, "/outputs")?;
    Ok(TeamInstance { n, production, a_max, outputs })
}

/// A list of payment vectors `[[…], …]`.
pub fn parse_payment_list(v: &Value, file: &str) -> SchemaResult<Vec<TabularContract>> {
    let c = Cursor { file };
    let Some(items) = v.as_array() else { return c.err("", "expected an array of payment vectors") };
    items
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let p = c.nonnegative(p, &format!("/{i}"))?;
            TabularContract::new(p).or_else(|e| c.err(&format!("/{i}"), e.to_string()))
        })
        .collect()
}

/// A list of points `[[…], …]`.
pub fn parse_points(v: &Value, file: &str) -> SchemaResult<Vec<Vec<f64>>> {
    let c = Cursor { file };
    let Some(items) = v.as_array() else { return c.err("", "expected an array of points") };
    items.iter().enumerate().map(|(i, p)| c.numbers(p, &format!("/{i}"))).collect()
}

/// Comma-separated reals, as in `--profile 0.1,0.1`.
pub fn parse_vector(s: &str) -> anyhow::Result<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().with_context(|| format!("cannot parse \"{t}\" as a number")))
        .collect()
}

/// A function argument: a preset name or a path to a function file.
#[derive(Debug, Clone)]
pub enum FunctionArg {
    /// `Σ √aᵢ`.
    Sqrt,
    /// `Σ aᵢ²`.
    Square,
    /// `Σ aᵢ^k`, with `k` supplied by the command.
    Power,
    /// `Σ aᵢ`.
    Linear,
    File(String),
}

impl std::str::FromStr for FunctionArg {
    type Err = std::convert::Infallible;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "sqrt" => FunctionArg::Sqrt,
            "square" => FunctionArg::Square,
            "power" => FunctionArg::Power,
            "linear" => FunctionArg::Linear,
            path => FunctionArg::File(path.to_string()),
        })
    }
}

impl FunctionArg {
    /// Resolves to a spec on `dim` arguments and its canonical JSON for the input digest.
    /// `exponent` is the degree requested on the command line, if any.
    pub fn resolve(&self, dim: usize, exponent: Option<f64>) -> anyhow::Result<(FunctionSpec, Value)> {
        let preset = |p: f64| -> anyhow::Result<FunctionSpec> {
            if let Some(k) = exponent {
                if (k - p).abs() > 1e-12 {
                    anyhow::bail!(robust_contracts::Error::Input(format!(
                        "preset has degree {p} but degree {k} was requested"
                    )));
                }
            }
            Ok(FunctionSpec::power_sum(vec![1.0; dim], p).with_degree(p))
        };
        let spec = match self {
            FunctionArg::Sqrt => preset(0.5)?,
            FunctionArg::Square => preset(2.0)?,
            FunctionArg::Linear => preset(1.0)?,
            FunctionArg::Power => {
                let k = exponent.ok_or_else(|| {
                    robust_contracts::Error::Input("the power preset needs a degree (--ku or --kc)".into())
                })?;
                FunctionSpec::power_sum(vec![1.0; dim], k).with_degree(k)
            }
            FunctionArg::File(path) => {
                let v = read_json(Path::new(path))?;
                let mut spec = parse_function(&v, path, "")?;
                if spec.degree.is_none() {
                    spec.degree = exponent;
                }
                spec
            }
        };
        let value = serde_json::to_value(&spec)?;
        Ok((spec, value))
    }
}
