use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::GenConfig;
use crate::domain::{HyperParams, TileGrid};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Dmtfl,
    Fedavg,
    Fedprox,
    Heuristic,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Dmtfl,
        Algorithm::Fedavg,
        Algorithm::Fedprox,
        Algorithm::Heuristic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Dmtfl => "dmtfl",
            Algorithm::Fedavg => "fedavg",
            Algorithm::Fedprox => "fedprox",
            Algorithm::Heuristic => "heuristic",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn all_algorithms() -> Vec<Algorithm> {
    Algorithm::ALL.to_vec()
}

fn one() -> usize {
    1
}

fn train_fraction() -> f64 {
    0.8
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(default = "all_algorithms")]
    pub algorithms: Vec<Algorithm>,
    /// Cache sizes to sweep, in tiles.
    pub cache_sizes: Vec<usize>,
    #[serde(default = "one")]
    pub repetitions: usize,
    #[serde(default = "train_fraction")]
    pub train_fraction: f64,
    /// Repetition `r` uses seed `seed + r`; otherwise every repetition
    /// reuses `seed`.
    #[serde(default = "yes")]
    pub vary_seed: bool,
    /// Fill the wall-time column. Off by default so reruns are byte-identical.
    #[serde(default)]
    pub record_timing: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

/// Where the per-station datasets come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    Synthetic(GenConfig),
    /// One head-trace file per station.
    Traces {
        paths: Vec<PathBuf>,
        grid: TileGrid,
        #[serde(default = "default_fov")]
        fov_deg: f64,
        window_sec: f64,
    },
}

fn default_fov() -> f64 {
    100.0
}

impl DataSource {
    pub fn grid(&self) -> TileGrid {
        match self {
            DataSource::Synthetic(g) => g.grid,
            DataSource::Traces { grid, .. } => *grid,
        }
    }

    pub fn num_bs(&self) -> usize {
        match self {
            DataSource::Synthetic(g) => g.num_bs,
            DataSource::Traces { paths, .. } => paths.len(),
        }
    }
}

fn mu_prox() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineParams {
    #[serde(default = "one")]
    pub local_steps: usize,
    #[serde(default = "mu_prox")]
    pub mu_prox: f64,
    /// Rounds and step size; the DMTFL values when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rounds: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub descent_step: Option<f64>,
}

impl Default for BaselineParams {
    fn default() -> Self {
        Self {
            local_steps: 1,
            mu_prox: mu_prox(),
            rounds: None,
            descent_step: None,
        }
    }
}

/// A full experiment: data source, sweep, and algorithm settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub data: DataSource,
    #[serde(default)]
    pub dmtfl: HyperParams,
    #[serde(default)]
    pub baselines: BaselineParams,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// The resolved configuration, defaults included.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        if e.cache_sizes.is_empty() {
            return Err(Error::Config("cache_sizes must not be empty".into()));
        }
        if e.repetitions == 0 {
            return Err(Error::Config("repetitions must be >= 1".into()));
        }
        if e.algorithms.is_empty() {
            return Err(Error::Config("algorithms must not be empty".into()));
        }
        if !(e.train_fraction > 0.0 && e.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must lie in (0, 1), got {}",
                e.train_fraction
            )));
        }
        let tiles = self.data.grid().num_tiles();
        if let Some(&c) = e.cache_sizes.iter().find(|&&c| c == 0 || c > tiles) {
            return Err(Error::Config(format!("cache size {c} outside [1, {tiles}]")));
        }
        match &self.data {
            DataSource::Synthetic(g) => g.validate()?,
            DataSource::Traces { paths, window_sec, .. } => {
                if paths.is_empty() {
                    return Err(Error::Config("trace source needs at least one path".into()));
                }
                if !(*window_sec > 0.0) {
                    return Err(Error::Config("window_sec must be > 0".into()));
                }
            }
        }
        if self.baselines.local_steps == 0 {
            return Err(Error::Config("baselines.local_steps must be >= 1".into()));
        }
        if !(self.baselines.mu_prox >= 0.0) {
            return Err(Error::Config("baselines.mu_prox must be >= 0".into()));
        }
        let mut hp = self.dmtfl.clone();
        hp.cache_budget = e.cache_sizes[0] as f64;
        hp.validate_for(self.data.num_bs(), tiles)
    }
}
