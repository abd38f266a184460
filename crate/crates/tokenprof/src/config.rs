//! Declarative run configuration (schema version 1).
//!
//! ```yaml
//! version: 1
//! seed: 42
//! report_dir: reports/example
//! engine:
//!   target: http://127.0.0.1:8000
//!   max_workers: 4
//!   timeout: 30s
//! workload:
//!   source: synthetic
//!   input_tokens: 320
//!   output_tokens: 200
//!   truncation_limit: 320
//! load:
//!   arrival: poisson
//!   sweep: { base_rate: 10, max_rate: 80, progression: { geometric: { factor: 2 } } }
//!   duration: 30s
//! mock:
//!   output_tokens: echo
//! ```
//!
//! Unknown keys are errors. Seeds that are not given are derived from the
//! master `seed`: `workload.seed = derive_seed(seed, "workload")`,
//! `mock.seed = derive_seed(seed, "mock")`, and stage `i` schedules use
//! `derive_seed(seed, "schedule/i")`. The effective configuration, with
//! every default filled in, is what reports archive.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_yaml::{Mapping, Value};
use thiserror::Error;
use tokenprof_core::fidelity::LoadMode;
use tokenprof_core::profile::SaturationConfig;
use tokenprof_core::queue_model::ClientModel;
use tokenprof_core::schedule::{build_sweep, ArrivalKind, Progression, StageLength, SweepPlan};
use tokenprof_core::seed::{derive_seed, stage_seed};
use tokenprof_core::workload::WorkloadSpec;

use crate::engine::{host_cores, EngineConfig};
use crate::mockserver::MockBehavior;
use crate::units::opt_duration_ns;

pub const CONFIG_VERSION: u32 = 1;

/// Overrides `report_dir`.
pub const REPORT_DIR_ENV: &str = "TOKENPROF_REPORT_DIR";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.to_string(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base_rate: f64,
    pub max_rate: f64,
    pub progression: Progression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadConfig {
    #[serde(default = "default_arrival")]
    pub arrival: ArrivalKind,
    /// Single-stage rate in requests per second.
    #[serde(default)]
    pub rate: Option<f64>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    /// Stage length as a duration...
    #[serde(default, rename = "duration", with = "opt_duration_ns")]
    pub duration_ns: Option<u64>,
    /// ...or as a request count.
    #[serde(default)]
    pub requests: Option<usize>,
    /// Leading fraction of each stage excluded from latency statistics.
    #[serde(default = "default_warmup")]
    pub warmup_fraction: f64,
}

fn default_arrival() -> ArrivalKind {
    ArrivalKind::Poisson
}

fn default_warmup() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_report_dir")]
    pub report_dir: PathBuf,
    #[serde(default = "default_engine")]
    pub engine: EngineConfig,
    pub workload: WorkloadSpec,
    pub load: LoadConfig,
    /// Start a co-located mock server with this behavior and target it.
    #[serde(default)]
    pub mock: Option<MockBehavior>,
    /// Calibrated client model used by `engine.auto_size`; measured at
    /// startup when absent.
    #[serde(default)]
    pub client_model: Option<ClientModel>,
    #[serde(default)]
    pub saturation: SaturationConfig,
}

fn default_version() -> u32 {
    CONFIG_VERSION
}

fn default_engine() -> EngineConfig {
    EngineConfig::for_target("")
}

fn default_report_dir() -> PathBuf {
    PathBuf::from("reports")
}

fn inject_seed(root: &mut Mapping, section: &str, master: u64) {
    if let Some(Value::Mapping(m)) = root.get_mut(section) {
        let key = Value::from("seed");
        if !m.contains_key(&key) {
            m.insert(key, Value::from(derive_seed(master, section)));
        }
    }
}

/// Converts a YAML document to JSON. Tagged values (`!variant {..}`) become
/// single-key maps, so enum variants may be written either way.
fn yaml_to_json(v: Value) -> Result<serde_json::Value, ConfigError> {
    use serde_json::Value as J;
    Ok(match v {
        Value::Null => J::Null,
        Value::Bool(b) => J::Bool(b),
        Value::Number(n) => {
            if let Some(u) = n.as_u64() {
                J::from(u)
            } else if let Some(i) = n.as_i64() {
                J::from(i)
            } else {
                let f = n.as_f64().unwrap_or(f64::NAN);
                serde_json::Number::from_f64(f).map(J::Number).ok_or_else(|| ConfigError::Parse(format!("non-finite number {f}")))?
            }
        }
        Value::String(s) => J::String(s),
        Value::Sequence(seq) => J::Array(seq.into_iter().map(yaml_to_json).collect::<Result<_, _>>()?),
        Value::Mapping(m) => {
            let mut out = serde_json::Map::new();
            for (k, v) in m {
                let key = match k {
                    Value::String(s) => s,
                    Value::Number(n) => n.to_string(),
                    Value::Bool(b) => b.to_string(),
                    other => return Err(ConfigError::Parse(format!("unsupported mapping key {other:?}"))),
                };
                out.insert(key, yaml_to_json(v)?);
            }
            J::Object(out)
        }
        Value::Tagged(t) => {
            let tag = t.tag.to_string();
            let mut out = serde_json::Map::new();
            out.insert(tag.trim_start_matches('!').to_string(), yaml_to_json(t.value)?);
            J::Object(out)
        }
    })
}

impl RunConfig {
    /// Parses YAML, derives missing sub-seeds, validates, and fills every
    /// default.
    pub fn from_yaml(text: &str) -> Result<Self, ConfigError> {
        let mut doc: Value = serde_yaml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if let Value::Mapping(root) = &mut doc {
            let master = root.get("seed").and_then(Value::as_u64).unwrap_or(0);
            inject_seed(root, "workload", master);
            inject_seed(root, "mock", master);
        }
        let json = yaml_to_json(doc)?;
        let cfg: RunConfig = serde_path_to_error::deserialize(json).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::Parse(if path == "." { e.inner().to_string() } else { format!("{path}: {}", e.inner()) })
        })?;
        cfg.validate()?;
        Ok(cfg.effective())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_yaml(&text)
    }

    /// Reads the effective configuration archived in a `report.json`.
    pub fn from_report(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let report: serde_json::Value = serde_json::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let config = report.get("config").cloned().ok_or_else(|| invalid("config", "missing from report"))?;
        let cfg: RunConfig = serde_json::from_value(config).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("config serialises")
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serialises")
    }

    /// Same configuration with every implicit value made explicit.
    pub fn effective(mut self) -> Self {
        self.engine.max_workers = Some(self.engine.max_workers.unwrap_or_else(host_cores));
        self
    }

    /// `report_dir` unless the override variable is set.
    pub fn resolved_report_dir(&self) -> PathBuf {
        std::env::var_os(REPORT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| self.report_dir.clone())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.version != CONFIG_VERSION {
            return Err(invalid("version", format!("unsupported config version {} (expected {CONFIG_VERSION})", self.version)));
        }
        if self.mock.is_none() && self.engine.target.is_empty() {
            return Err(invalid("engine.target", "required unless a `mock` section is given"));
        }
        if let Some(m) = &self.mock {
            m.validate().map_err(|e| invalid("mock", e.to_string()))?;
        }
        let mut engine = self.engine.clone();
        if engine.target.is_empty() {
            // Checked with a placeholder; the mock's address replaces it.
            engine.target = "http://127.0.0.1:1".into();
        }
        engine.validate().map_err(|e| match e {
            crate::engine::EngineError::InvalidParam(m) => match m.split_once(' ') {
                Some((field, rest)) if field.starts_with("engine.") => invalid(field, rest),
                _ => invalid("engine", m),
            },
            other => invalid("engine", other.to_string()),
        })?;
        self.workload.validate().map_err(|e| invalid("workload", e.to_string()))?;
        let l = &self.load;
        if !(0.0..1.0).contains(&l.warmup_fraction) {
            return Err(invalid("load.warmup_fraction", "must lie in [0, 1)"));
        }
        match (l.duration_ns, l.requests) {
            (Some(0), _) => return Err(invalid("load.duration", "must be > 0")),
            (_, Some(0)) => return Err(invalid("load.requests", "must be >= 1")),
            (Some(_), Some(_)) => return Err(invalid("load", "give either `duration` or `requests`, not both")),
            _ => {}
        }
        match self.engine.mode {
            LoadMode::ClosedLoop { .. } => {
                if l.requests.is_none() {
                    return Err(invalid("load.requests", "closed-loop mode needs a request count"));
                }
                if l.sweep.is_some() {
                    return Err(invalid("load.sweep", "closed-loop mode runs a single stage"));
                }
            }
            LoadMode::OpenLoop => {
                if l.duration_ns.is_none() && l.requests.is_none() {
                    return Err(invalid("load", "give a stage `duration` or `requests`"));
                }
                match (l.rate, &l.sweep) {
                    (Some(_), Some(_)) => return Err(invalid("load", "give either `rate` or `sweep`, not both")),
                    (None, None) => return Err(invalid("load.rate", "required (or give `sweep`)")),
                    (Some(r), None) if !(r.is_finite() && r > 0.0) => {
                        return Err(invalid("load.rate", format!("must be > 0, got {r}")))
                    }
                    _ => {}
                }
                self.plan()?;
            }
        }
        Ok(())
    }

    fn stage_length(&self) -> StageLength {
        match (self.load.duration_ns, self.load.requests) {
            (Some(ns), _) => StageLength::DurationNs(ns),
            (None, Some(n)) => StageLength::Requests(n),
            (None, None) => StageLength::Requests(1),
        }
    }

    /// Stage plan for open-loop runs.
    pub fn plan(&self) -> Result<SweepPlan, ConfigError> {
        let length = self.stage_length();
        match (&self.load.sweep, self.load.rate) {
            (Some(s), _) => build_sweep(s.base_rate, s.max_rate, s.progression, length)
                .map_err(|e| invalid("load.sweep", e.to_string())),
            (None, Some(rate)) => SweepPlan::single(rate, length).map_err(|e| invalid("load.rate", e.to_string())),
            (None, None) => Err(invalid("load.rate", "required (or give `sweep`)")),
        }
    }

    pub fn schedule_seed(&self, stage: usize) -> u64 {
        stage_seed(self.seed, "schedule", stage)
    }
}
