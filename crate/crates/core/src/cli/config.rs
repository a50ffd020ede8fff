//! Run configuration: one JSON document, dotted `key=value` overrides, and a
//! content digest of the effective configuration.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{build_coefficients, CoefficientSet, Intensity, JumpModel, ModelSpec, SizeLaw};
use crate::montecarlo::McSettings;
use crate::simulate::TimeGrid;

/// Keys that never enter the digest or the echoed configuration, because
/// they cannot change any reported number.
const RUNTIME_KEYS: &[(&str, &str)] = &[("mc", "workers")];

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IntensitySpec {
    Constant(f64),
    Linear { intercept: f64, slope: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpsSpec {
    #[serde(default = "zero_intensity")]
    pub intensity: IntensitySpec,
    /// Defaults to `max λ` over `[0, T]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dominating_intensity: Option<f64>,
    pub size_law: SizeLaw,
}

fn zero_intensity() -> IntensitySpec {
    IntensitySpec::Constant(0.0)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub horizon: f64,
    pub n_steps: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            horizon: 1.0,
            n_steps: 100,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSpec {
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub workers: usize,
}

fn default_paths() -> usize {
    10_000
}

impl Default for McSpec {
    fn default() -> Self {
        McSpec {
            paths: default_paths(),
            master_seed: 0,
            workers: 0,
        }
    }
}

/// Deterministic integrand `scale · h(y)` for `verify-bdg`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrandSpec {
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default = "identity")]
    pub mark: String,
}

fn one() -> f64 {
    1.0
}

fn identity() -> String {
    "identity".into()
}

impl Default for IntegrandSpec {
    fn default() -> Self {
        IntegrandSpec {
            scale: 1.0,
            mark: identity(),
        }
    }
}

/// One model parameter swept for the uniform bound.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub param: String,
    pub values: Vec<f64>,
}

/// Per-experiment parameters; each subcommand reads the ones it needs.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    /// When present, must name the subcommand being run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payoff: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strike: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exponent: Option<u32>,
    /// Bump of the finite-difference oracle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integrand: Option<IntegrandSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    /// Number of paths written by `simulate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jumps: Option<JumpsSpec>,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub mc: McSpec,
    #[serde(default)]
    pub experiment: ExperimentSpec,
}

/// A parsed configuration together with its effective JSON form and digest.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: RunConfig,
    /// Effective configuration with runtime-only keys removed.
    pub effective: Value,
    pub digest: String,
}

/// Parses the JSON text (line/column diagnostics on syntax errors).
pub fn parse_document(text: &str, origin: &str) -> Result<Value> {
    let v: Value = serde_json::from_str(text)
        .map_err(|e| Error::Config(format!("{origin}: line {}, column {}: {e}", e.line(), e.column())))?;
    if !v.is_object() {
        return Err(Error::Config(format!("{origin}: top level must be a JSON object")));
    }
    Ok(v)
}

/// Sets `a.b.c = value`, creating objects on the way. The value is read as
/// JSON when it parses, as a string otherwise.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key `{key}` has an empty component")));
    }
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    let mut node = doc;
    for (i, part) in path.iter().enumerate() {
        let map = match node {
            Value::Object(m) => m,
            other => {
                return Err(Error::Config(format!(
                    "override `{key}`: `{}` is {other}, not an object",
                    path[..i].join(".")
                )))
            }
        };
        if i + 1 == path.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    unreachable!("path is nonempty")
}

fn strip_runtime_keys(doc: &mut Value) {
    for (block, key) in RUNTIME_KEYS {
        if let Some(Value::Object(m)) = doc.get_mut(*block) {
            m.remove(*key);
        }
    }
}

/// SHA-256 of the compact JSON of `effective` (object keys sorted).
pub fn digest(effective: &Value) -> String {
    let bytes = serde_json::to_vec(effective).expect("a JSON value always serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl LoadedConfig {
    pub fn from_document(mut doc: Value, overrides: &[String]) -> Result<Self> {
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let config: RunConfig =
            serde_json::from_value(doc.clone()).map_err(|e| Error::Config(format!("invalid configuration: {e}")))?;
        // Round-trip through the typed form so defaults are echoed too.
        let mut effective = serde_json::to_value(&config)?;
        strip_runtime_keys(&mut effective);
        let digest = digest(&effective);
        Ok(LoadedConfig {
            config,
            effective,
            digest,
        })
    }

    pub fn from_text(text: &str, origin: &str, overrides: &[String]) -> Result<Self> {
        LoadedConfig::from_document(parse_document(text, origin)?, overrides)
    }
}

impl RunConfig {
    pub fn coefficients(&self) -> Result<CoefficientSet> {
        let spec = self
            .model
            .as_ref()
            .ok_or_else(|| Error::Config("the `model` block is required for this experiment".into()))?;
        build_coefficients(spec)
    }

    pub fn quadrature_nodes(&self) -> usize {
        self.model.as_ref().map_or(32, |m| m.quadrature)
    }

    pub fn jump_model(&self) -> Result<JumpModel> {
        let Some(spec) = &self.jumps else {
            return Ok(JumpModel::none());
        };
        let horizon = self.grid.horizon;
        let (intensity, peak) = match spec.intensity {
            IntensitySpec::Constant(l) => (Intensity::Constant(l), l),
            IntensitySpec::Linear { intercept, slope } => (
                Intensity::Linear { intercept, slope },
                intercept.max(intercept + slope * horizon),
            ),
        };
        let bar = spec.dominating_intensity.unwrap_or(peak);
        let jm = JumpModel::new(intensity, bar, spec.size_law.clone(), self.quadrature_nodes())?;
        jm.check_domination(horizon, 256)?;
        Ok(jm)
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.grid.horizon, self.grid.n_steps)
    }

    pub fn mc(&self) -> McSettings {
        McSettings::new(self.mc.paths, self.mc.master_seed).with_workers(self.mc.workers)
    }
}
