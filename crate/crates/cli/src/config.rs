//! Run configuration: one JSON file holding the family, base dynamics, seed and the
//! parameters of the command being run.

use henon_core::{BaseDynamics, FactorRule, HenonFamily, ParameterDomain, ParameterPoint};
use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FamilySpec {
    /// `p(y) = y^degree + c` with Jacobian `a` over a one-point domain.
    Single { degree: usize, c: Complex64, a: Complex64 },
    QuadraticCircle { c0: f64, c1: f64, a0: f64 },
    QuadraticTorus { c0: f64, c1: f64, c2: f64, a0: f64 },
    /// Affine coefficient rules over an explicit domain; composed right to left.
    Custom { domain: ParameterDomain, factors: Vec<FactorRule> },
}

impl FamilySpec {
    pub fn build(&self) -> Result<HenonFamily, CliError> {
        let f = match self {
            FamilySpec::Single { degree, c, a } => HenonFamily::single(*degree, *c, *a),
            FamilySpec::QuadraticCircle { c0, c1, a0 } => HenonFamily::quadratic_circle(*c0, *c1, *a0),
            FamilySpec::QuadraticTorus { c0, c1, c2, a0 } => HenonFamily::quadratic_torus(*c0, *c1, *c2, *a0),
            FamilySpec::Custom { domain, factors } => HenonFamily::new(domain.clone(), factors.clone()),
        };
        f.map_err(|e| CliError::from_core_in("family", e))
    }
}

const TOP_LEVEL: [&str; 6] = ["family", "base", "seed", "threads", "filtration_samples", "params"];

pub const DEFAULT_FILTRATION_SAMPLES: usize = 64;

/// Parsed top level of a config file; `params` stays raw until the command is known.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub family: FamilySpec,
    pub base: BaseDynamics,
    pub seed: u64,
    /// 0 lets the pool pick one thread per core.
    pub threads: usize,
    pub filtration_samples: usize,
    pub params: Map<String, Value>,
    /// Dotted paths of every field filled from a default.
    pub defaulted: Vec<String>,
}

fn field<T: DeserializeOwned>(obj: &Map<String, Value>, key: &str) -> Result<Option<T>, CliError> {
    obj.get(key)
        .map(|v| serde_json::from_value(v.clone()).map_err(|e| CliError::config(key, e)))
        .transpose()
}

fn field_or<T: DeserializeOwned>(
    obj: &Map<String, Value>,
    key: &str,
    default: T,
    defaulted: &mut Vec<String>,
) -> Result<T, CliError> {
    Ok(field(obj, key)?.unwrap_or_else(|| {
        defaulted.push(key.to_string());
        default
    }))
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let root: Value = serde_json::from_str(text).map_err(|e| CliError::config("", e))?;
        let Value::Object(obj) = root else {
            return Err(CliError::config("", "top level must be an object"));
        };
        if let Some(k) = obj.keys().find(|k| !TOP_LEVEL.contains(&k.as_str())) {
            return Err(CliError::config(k.as_str(), "unknown field"));
        }
        let mut defaulted = Vec::new();
        let family: FamilySpec = field(&obj, "family")?.ok_or_else(|| CliError::config("family", "missing field"))?;
        let base = field_or(&obj, "base", BaseDynamics::Identity, &mut defaulted)?;
        let seed = field_or(&obj, "seed", 0u64, &mut defaulted)?;
        let threads = field_or(&obj, "threads", 0usize, &mut defaulted)?;
        let filtration_samples = field_or(&obj, "filtration_samples", DEFAULT_FILTRATION_SAMPLES, &mut defaulted)?;
        if filtration_samples == 0 {
            return Err(CliError::config("filtration_samples", "must be positive"));
        }
        let params = match obj.get("params") {
            None => {
                defaulted.push("params".into());
                Map::new()
            }
            Some(Value::Object(m)) => m.clone(),
            Some(_) => return Err(CliError::config("params", "must be an object")),
        };
        Ok(Self { family, base, seed, threads, filtration_samples, params, defaulted })
    }
}

/// Deserializes command parameters, recording every key that took its default value.
pub fn parse_params<T>(raw: &Map<String, Value>, defaulted: &mut Vec<String>) -> Result<T, CliError>
where
    T: DeserializeOwned + Serialize,
{
    let parsed: T = serde_json::from_value(Value::Object(raw.clone())).map_err(|e| CliError::config("params", e))?;
    if let Value::Object(full) = serde_json::to_value(&parsed).map_err(|e| CliError::config("params", e))? {
        defaulted.extend(full.keys().filter(|k| !raw.contains_key(*k)).map(|k| format!("params.{k}")));
    }
    Ok(parsed)
}

/// Effective configuration as echoed in the report; the thread budget is left out
/// because it must not change any output byte.
#[derive(Clone, Debug, Serialize)]
pub struct ConfigEcho {
    pub command: String,
    pub family: FamilySpec,
    pub base: BaseDynamics,
    pub seed: u64,
    pub filtration_samples: usize,
    pub params: Value,
}

impl ConfigEcho {
    pub fn sha256(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config echo serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Checks a user-given parameter point, or picks the domain's reference point.
pub fn resolve_lambda(
    domain: &ParameterDomain,
    lambda: &Option<ParameterPoint>,
    field: &str,
) -> Result<ParameterPoint, CliError> {
    match lambda {
        Some(l) if domain.contains(l) => Ok(l.clone()),
        Some(_) => Err(CliError::config(field, "point outside the parameter domain")),
        None => Ok(domain.grid(1).swap_remove(0)),
    }
}
