//! Run configuration read from JSON: model parameters and shared settings at
//! the top level, one flat section per command.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::analysis::{HistorySeed, DEFAULT_KAPPA, DEFAULT_T_MAX};
use crate::error::Result;
use crate::ffs::{evenly_spaced, FfsConfig, COMMIT_RADIUS};
use crate::mam::{round_grid, RelaxConfig};
use crate::model::{invalid, ModelParams};

/// Grid given either as explicit values or as an inclusive range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    Values(Vec<f64>),
    Range { start: f64, stop: f64, step: f64 },
}

impl Grid {
    pub fn values(&self) -> Result<Vec<f64>> {
        match self {
            Grid::Values(v) => Ok(v.clone()),
            Grid::Range { start, stop, step } => {
                if !(step.is_finite() && *step > 0.0 && start.is_finite() && stop.is_finite()) {
                    return Err(invalid("grid", "range needs finite bounds and a positive step"));
                }
                if stop < start {
                    return Err(invalid("grid", "range stop lies below start"));
                }
                let n = ((stop - start) / step + 1e-9).floor() as usize;
                if n > 1_000_000 {
                    return Err(invalid("grid", "range has too many points"));
                }
                Ok((0..=n).map(|k| round_grid(start + k as f64 * step)).collect())
            }
        }
    }

    /// Parses `start:stop:step` or a comma-separated list.
    pub fn parse(s: &str) -> Result<Self> {
        let num = |t: &str| -> Result<f64> {
            t.trim()
                .parse::<f64>()
                .map_err(|_| invalid("grid", format!("`{}` is not a number", t.trim())))
        };
        if s.contains(':') {
            let parts: Vec<&str> = s.split(':').collect();
            if parts.len() != 3 {
                return Err(invalid("grid", "range form is start:stop:step"));
            }
            Ok(Grid::Range {
                start: num(parts[0])?,
                stop: num(parts[1])?,
                step: num(parts[2])?,
            })
        } else if s.trim().is_empty() {
            Ok(Grid::Values(vec![]))
        } else {
            Ok(Grid::Values(s.split(',').map(num).collect::<Result<_>>()?))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSection {
    pub tau_grid: Grid,
    /// More than one value turns the scan into a two-dimensional diagram.
    pub beta_grid: Vec<f64>,
    /// Bisect the first on-axis to off-axis switch down to this width.
    pub threshold_tol: f64,
}

impl Default for ScanSection {
    fn default() -> Self {
        Self {
            tau_grid: Grid::Range {
                start: 0.1,
                stop: 1.6,
                step: 0.1,
            },
            beta_grid: vec![],
            threshold_tol: 0.0125,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseSection {
    pub path: Option<PathBuf>,
    pub kappa: f64,
    pub t_max: f64,
    pub history: HistorySeed,
}

impl Default for DiagnoseSection {
    fn default() -> Self {
        Self {
            path: None,
            kappa: DEFAULT_KAPPA,
            t_max: DEFAULT_T_MAX,
            history: HistorySeed::PathSegment,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MethodChoice {
    #[default]
    Ffs,
    Direct,
    Action,
}

impl std::str::FromStr for MethodChoice {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ffs" => Ok(MethodChoice::Ffs),
            "direct" => Ok(MethodChoice::Direct),
            "action" => Ok(MethodChoice::Action),
            other => Err(format!("unknown method `{other}` (expected ffs, direct or action)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateSection {
    pub method: MethodChoice,
    pub lambda_a: f64,
    pub interfaces: Vec<f64>,
    pub trials_per_interface: usize,
    pub n0_crossings: usize,
    pub commit_radius: f64,
    pub max_steps: u64,
    /// First passages collected by the direct method.
    pub n_transitions: usize,
    /// Sidecar of a previous solve supplying the action.
    pub sidecar: Option<PathBuf>,
    pub prefactor: bool,
}

impl Default for RateSection {
    fn default() -> Self {
        let ffs = FfsConfig::default();
        Self {
            method: MethodChoice::Ffs,
            lambda_a: ffs.lambda_a,
            interfaces: ffs.interfaces,
            trials_per_interface: ffs.trials_per_interface,
            n0_crossings: ffs.n0_crossings,
            commit_radius: COMMIT_RADIUS,
            max_steps: ffs.max_steps,
            n_transitions: 40,
            sidecar: None,
            prefactor: false,
        }
    }
}

impl RateSection {
    pub fn ffs_config(&self, seed: u64) -> FfsConfig {
        FfsConfig {
            lambda_a: self.lambda_a,
            interfaces: self.interfaces.clone(),
            trials_per_interface: self.trials_per_interface,
            n0_crossings: self.n0_crossings,
            seed,
            commit_radius: self.commit_radius,
            max_steps: self.max_steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilitySection {
    pub tau_grid: Grid,
}

impl Default for StabilitySection {
    fn default() -> Self {
        Self {
            tau_grid: Grid::Range {
                start: 0.0,
                stop: 2.0,
                step: 0.1,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub tau: f64,
    pub beta: f64,
    pub epsilon: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    /// Mesh intervals; derived from the mesh rule when absent.
    #[serde(rename = "N")]
    pub intervals: Option<usize>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub jobs: Option<usize>,
    pub relax: RelaxConfig,
    pub scan: ScanSection,
    pub diagnose: DiagnoseSection,
    pub rate: RateSection,
    pub stability: StabilitySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            tau: 0.0,
            beta: 1.0,
            epsilon: 0.02,
            horizon: 100.0,
            intervals: None,
            out_dir: PathBuf::from("out"),
            seed: 0,
            jobs: None,
            relax: RelaxConfig::default(),
            scan: ScanSection::default(),
            diagnose: DiagnoseSection::default(),
            rate: RateSection::default(),
            stability: StabilitySection::default(),
        }
    }
}

impl RunConfig {
    /// Parses and validates a JSON configuration; missing keys take defaults.
    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn params(&self) -> Result<ModelParams> {
        ModelParams::new(self.tau, self.beta, self.epsilon)
    }

    pub fn validate(&self) -> Result<()> {
        self.params()?;
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(invalid("T", format!("must be finite and > 0, got {}", self.horizon)));
        }
        if self.intervals == Some(0) {
            return Err(invalid("N", "must be positive"));
        }
        if self.jobs == Some(0) {
            return Err(invalid("jobs", "must be positive"));
        }
        self.relax.validate()?;
        self.scan.tau_grid.values()?;
        self.stability.tau_grid.values()?;
        if self.scan.beta_grid.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
            return Err(invalid("beta_grid", "values must be finite and > 0"));
        }
        if !(self.scan.threshold_tol > 0.0) {
            return Err(invalid("threshold_tol", "must be > 0"));
        }
        if !(self.diagnose.kappa > 0.0 && self.diagnose.kappa.is_finite()) {
            return Err(invalid("kappa", "must be finite and > 0"));
        }
        if !(self.diagnose.t_max > 0.0 && self.diagnose.t_max.is_finite()) {
            return Err(invalid("t_max", "must be finite and > 0"));
        }
        self.rate.ffs_config(self.seed).validate()?;
        if self.rate.n_transitions == 0 {
            return Err(invalid("n_transitions", "must be positive"));
        }
        Ok(())
    }
}

/// Interface set from `-0.7` to `0.5` with the given number of intervals.
pub fn interfaces_with(intervals: usize) -> Vec<f64> {
    evenly_spaced(-0.7, 0.5, intervals)
}
