//! Experiment configuration: TOML file plus command-line overrides.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

use cpomdp_core::fixtures;
use cpomdp_core::grid::GridMeta;
use cpomdp_core::ModelSpec;

/// A problem with the user's inputs (exit code 2).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub resolution: Option<u64>,
    pub resolutions: Option<Vec<u64>>,
    pub thresholds: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivityConfig {
    /// Screening disutility sets (days), one value per action.
    pub screening: Option<Vec<Vec<f64>>>,
    /// Positive-test disutility (days) applied to both true and false positives.
    pub pt: Option<Vec<f64>>,
    /// Cost sets, one value per action.
    pub costs: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: Option<String>,
    #[serde(default)]
    pub grid: GridConfig,
    pub objective: Option<String>,
    pub weights: Option<[f64; 2]>,
    pub steps: Option<usize>,
    pub budget: Option<f64>,
    #[serde(default)]
    pub no_budget: bool,
    #[serde(default)]
    pub deterministic: bool,
    pub pi0: Option<Vec<f64>>,
    #[serde(default)]
    pub sensitivity: SensitivityConfig,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| config_err(format!("config {}: {e}", path.display())))
    }
}

/// Loads `builtin:<name>` or a JSON model file.
pub fn load_model(source: &str) -> Result<ModelSpec> {
    if let Some(name) = source.strip_prefix("builtin:") {
        return builtin(name);
    }
    let path = Path::new(source);
    if !path.exists() {
        return Err(config_err(format!("model file {} does not exist", path.display())));
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    ModelSpec::from_json(&text).map_err(|e| config_err(format!("model {}: {e}", path.display())))
}

pub fn builtin(name: &str) -> Result<ModelSpec> {
    match name {
        "default" | "average-risk" => Ok(fixtures::default_spec()),
        "high-risk" => Ok(fixtures::high_risk_spec()),
        "overshoot" => Ok(fixtures::overshoot_spec()),
        _ => Err(config_err(format!("unknown built-in model '{name}' (default, high-risk, overshoot)"))),
    }
}

/// Grid from explicit settings, or a default suited to the state count.
pub fn grid_meta(g: &GridConfig, n_states: usize) -> Result<GridMeta> {
    match (g.resolution, &g.resolutions, &g.thresholds) {
        (Some(_), Some(_), _) => Err(config_err("give either a fixed resolution or resolutions with thresholds, not both")),
        (Some(r), None, _) => Ok(GridMeta::Fixed { resolution: r }),
        (None, Some(rs), Some(ts)) => Ok(GridMeta::Variable { resolutions: rs.clone(), thresholds: ts.clone() }),
        (None, Some(_), None) => Err(config_err("variable resolutions need thresholds")),
        (None, None, Some(_)) => Err(config_err("thresholds need variable resolutions")),
        (None, None, None) if n_states == 3 => {
            Ok(GridMeta::Variable { resolutions: vec![100, 25, 5], thresholds: vec![0.96, 0.8, 0.0] })
        }
        (None, None, None) => Ok(GridMeta::Fixed { resolution: 4 }),
    }
}

pub fn grid_label(meta: &GridMeta) -> String {
    let join = |v: &[u64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("/");
    match meta {
        GridMeta::Fixed { resolution } => format!("fixed-{resolution}"),
        GridMeta::Variable { resolutions, .. } => format!("variable-{}", join(resolutions)),
        GridMeta::Custom => "custom".into(),
    }
}

/// `"a,b;c,d"` into rows.
pub fn parse_sets(s: &str) -> Result<Vec<Vec<f64>>> {
    if s.trim().is_empty() {
        return Err(config_err("sweep axis is empty"));
    }
    s.split(';')
        .map(|row| {
            row.split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|e| config_err(format!("bad number '{x}': {e}"))))
                .collect()
        })
        .collect()
}
