//! Experiment configuration: JSON-backed, hashed for provenance.

use std::path::Path;

use qrc_core::dynamics::SystemId;
use qrc_core::quantum::ConfigId;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("grid for {name} is empty{detail}")]
    EmptyGrid { name: &'static str, detail: String },
    #[error("{name} = {value} out of range: {why}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        why: &'static str,
    },
    #[error("{0}")]
    Invalid(String),
}

/// Which reservoir backs the experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReservoirKind {
    Classical { n_r: usize },
    Quantum { config: ConfigId, n: usize },
}

impl ReservoirKind {
    pub fn is_quantum(&self) -> bool {
        matches!(self, ReservoirKind::Quantum { .. })
    }

    pub fn reservoir_size(&self) -> usize {
        match self {
            ReservoirKind::Classical { n_r } => *n_r,
            ReservoirKind::Quantum { n, .. } => 1 << n,
        }
    }
}

/// Hyperparameter axes swept by the grid search. The quantum reservoirs have
/// no input scaling, spectral radius or density knobs; those axes are
/// ignored for them and the leak rate is restricted to [0.05, 0.3].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub sigma_in: Vec<f64>,
    pub rho: Vec<f64>,
    pub density: Vec<f64>,
    pub eps: Vec<f64>,
    pub beta: Vec<f64>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        HyperGrid {
            sigma_in: (1..=10).map(|i| i as f64 / 10.0).collect(),
            rho: (1..=10).map(|i| i as f64 / 10.0).collect(),
            density: vec![0.1, 0.6, 0.9],
            eps: vec![0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0],
            beta: vec![1e-6, 1e-9, 1e-12],
        }
    }
}

/// One point of the hyperparameter grid. The classical-only axes are None
/// for quantum reservoirs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperPoint {
    pub sigma_in: Option<f64>,
    pub rho: Option<f64>,
    pub density: Option<f64>,
    pub eps: f64,
    pub beta: f64,
}

impl HyperPoint {
    /// Lexicographic ordering key used for deterministic tie-breaking.
    pub fn lex_key(&self) -> [f64; 5] {
        [
            self.sigma_in.unwrap_or(f64::NEG_INFINITY),
            self.rho.unwrap_or(f64::NEG_INFINITY),
            self.density.unwrap_or(f64::NEG_INFINITY),
            self.eps,
            self.beta,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Vpt,
    Ph,
    Fscore,
    Mc,
}

/// Full experiment description; everything an invocation needs besides the
/// output location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemId<f64>,
    pub reservoir: ReservoirKind,
    #[serde(default)]
    pub grid: HyperGrid,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Integration step; defaults to the system's conventional step.
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default = "default_washout_lt")]
    pub washout_lt: f64,
    #[serde(default = "default_train_lt")]
    pub train_lt: f64,
    #[serde(default = "default_test_lt")]
    pub test_lt: f64,
    /// On-attractor transient discarded before the data set starts.
    #[serde(default = "default_transient_lt")]
    pub transient_lt: f64,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<MetricKind>,
    /// Explicit hyperparameters for `run`; when absent, `run` tunes first.
    #[serde(default)]
    pub hyperparams: Option<HyperPoint>,

    // closed-loop evaluation protocol
    #[serde(default = "default_start_points")]
    pub start_points: usize,
    #[serde(default = "default_horizon_lt")]
    pub horizon_lt: f64,

    // recycle-validation protocol for the grid search
    #[serde(default = "default_validation_intervals")]
    pub validation_intervals: usize,
    #[serde(default = "default_validation_lt")]
    pub validation_lt: f64,

    // shear-flow ensemble protocol
    #[serde(default = "default_ensemble_count")]
    pub ensemble_count: usize,
    #[serde(default = "default_ensemble_length_lt")]
    pub ensemble_length_lt: f64,
    #[serde(default = "default_laminar_threshold")]
    pub laminar_threshold: f64,
    #[serde(default = "default_train_series")]
    pub train_series: usize,
    #[serde(default = "default_event_count")]
    pub event_count: usize,
    #[serde(default = "default_pt_windows")]
    pub pt_windows_lt: Vec<f64>,
    #[serde(default = "default_ph_delta_init")]
    pub ph_delta_init_lt: f64,
    #[serde(default = "default_ph_tau")]
    pub ph_tau_lt: f64,

    // memory-capacity protocol
    #[serde(default = "default_mc_delays")]
    pub mc_delays: usize,
    #[serde(default = "default_mc_len")]
    pub mc_len: usize,
    #[serde(default = "default_mc_washout")]
    pub mc_washout: usize,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}
fn default_washout_lt() -> f64 {
    2.0
}
fn default_train_lt() -> f64 {
    20.0
}
fn default_test_lt() -> f64 {
    40.0
}
fn default_transient_lt() -> f64 {
    10.0
}
fn default_metrics() -> Vec<MetricKind> {
    vec![MetricKind::Vpt]
}
fn default_start_points() -> usize {
    20
}
fn default_horizon_lt() -> f64 {
    8.0
}
fn default_validation_intervals() -> usize {
    3
}
fn default_validation_lt() -> f64 {
    3.0
}
fn default_ensemble_count() -> usize {
    200
}
fn default_ensemble_length_lt() -> f64 {
    65.0
}
fn default_laminar_threshold() -> f64 {
    0.48
}
fn default_train_series() -> usize {
    8
}
fn default_event_count() -> usize {
    100
}
fn default_pt_windows() -> Vec<f64> {
    vec![0.0, 3.0]
}
fn default_ph_delta_init() -> f64 {
    10.0
}
fn default_ph_tau() -> f64 {
    0.5
}
fn default_mc_delays() -> usize {
    25
}
fn default_mc_len() -> usize {
    5000
}
fn default_mc_washout() -> usize {
    200
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn dt(&self) -> f64 {
        self.dt.unwrap_or_else(|| self.system.default_dt())
    }

    /// The grid restricted to the axes the reservoir kind actually has.
    pub fn effective_grid(&self) -> Result<HyperGrid, ConfigError> {
        if self.reservoir.is_quantum() {
            let eps: Vec<f64> = self
                .grid
                .eps
                .iter()
                .copied()
                .filter(|e| (0.05..=0.3).contains(e))
                .collect();
            if eps.is_empty() {
                return Err(ConfigError::EmptyGrid {
                    name: "eps",
                    detail: " after restricting to the quantum range [0.05, 0.3]".into(),
                });
            }
            Ok(HyperGrid {
                sigma_in: vec![f64::NAN],
                rho: vec![f64::NAN],
                density: vec![f64::NAN],
                eps,
                beta: self.grid.beta.clone(),
            })
        } else {
            Ok(self.grid.clone())
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, axis) in [
            ("sigma_in", &self.grid.sigma_in),
            ("rho", &self.grid.rho),
            ("density", &self.grid.density),
            ("eps", &self.grid.eps),
            ("beta", &self.grid.beta),
        ] {
            if axis.is_empty() {
                return Err(ConfigError::EmptyGrid {
                    name,
                    detail: String::new(),
                });
            }
        }
        self.effective_grid()?;
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("seeds list is empty".into()));
        }
        let dt = self.dt();
        if !(dt > 0.0) {
            return Err(ConfigError::OutOfRange {
                name: "dt",
                value: dt,
                why: "must be positive",
            });
        }
        for (name, v) in [
            ("washout_lt", self.washout_lt),
            ("train_lt", self.train_lt),
            ("horizon_lt", self.horizon_lt),
        ] {
            if !(v > 0.0) {
                return Err(ConfigError::OutOfRange {
                    name,
                    value: v,
                    why: "must be positive",
                });
            }
        }
        if self.test_lt < 0.0 {
            return Err(ConfigError::OutOfRange {
                name: "test_lt",
                value: self.test_lt,
                why: "must be non-negative",
            });
        }
        if let ReservoirKind::Quantum { n, .. } = self.reservoir {
            if n == 0 || n > 24 {
                return Err(ConfigError::OutOfRange {
                    name: "n",
                    value: n as f64,
                    why: "qubit count must be in 1..=24",
                });
            }
        }
        if matches!(self.system, SystemId::Mfe { .. }) && self.ensemble_count == 0 {
            return Err(ConfigError::OutOfRange {
                name: "ensemble_count",
                value: 0.0,
                why: "must be positive for the shear-flow system",
            });
        }
        Ok(())
    }

    /// Hash over the canonical serialization; any semantic field change
    /// changes the hash.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        let mut hex = String::with_capacity(16);
        for byte in digest.iter().take(8) {
            use std::fmt::Write;
            write!(hex, "{byte:02x}").unwrap();
        }
        hex
    }
}
