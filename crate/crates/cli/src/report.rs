//! Run reports and input digests.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub grid: usize,
    pub tol: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub input_digest: String,
    pub tool_version: String,
    pub wall_time_seconds: f64,
    pub parameters: Parameters,
    pub result: Value,
    pub residuals: BTreeMap<String, f64>,
}

/// SHA-256 over the canonical serialization of `inputs` (object keys sorted).
pub fn digest(inputs: &Value) -> String {
    let canonical = canonical_string(inputs);
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

/// Keys are sorted explicitly so the digest does not depend on serde_json's map features.
fn canonical_string(v: &Value) -> String {
    fn sort(v: &Value) -> Value {
        match v {
            Value::Object(map) => {
                let sorted: BTreeMap<&String, Value> = map.iter().map(|(k, x)| (k, sort(x))).collect();
                Value::Object(sorted.into_iter().map(|(k, x)| (k.clone(), x)).collect())
            }
            Value::Array(items) => Value::Array(items.iter().map(sort).collect()),
            other => other.clone(),
        }
    }
    sort(v).to_string()
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }
}
