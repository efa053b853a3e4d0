//! Experiment runners behind the `jumpdr` subcommands. Each runner returns
//! plain rows; [`output`] writes them as CSV or JSONL.

pub mod concentration;
pub mod consistency;
pub mod output;
pub mod simulate;
pub mod timing;

use serde::{Deserialize, Serialize};

use crate::ambiguity::{Divergence, DivergenceKind};
use crate::error::{Error, Result};
use crate::learner::RadiusSpec;
use crate::markov::{cooling_kernel, one_based, TransitionKernel};
use crate::model::{MjlsModel, ModelConfig};

/// Experiment description; every field has a default reproducing the cooling
/// study, so `{}` is a valid config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    /// True transition kernel; defaults to the cooling kernel.
    pub kernel: Option<Vec<Vec<f64>>>,
    pub horizon: usize,
    pub seed: u64,
    pub out_dir: String,
    pub divergences: Vec<DivergenceKind>,
    /// Use the data-dependent KL radius `ln C(m + d - 1, d - 1)`.
    pub sharp_kl: bool,
    pub beta_b: f64,
    pub beta_q: f64,
    pub simulate: SimulateConfig,
    pub concentration: ConcentrationConfig,
    pub consistency: ConsistencyConfig,
    pub timing: TimingConfig,
    pub solve: SolveConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateConfig {
    pub runs: usize,
    pub steps: usize,
    pub x0: Vec<f64>,
    #[serde(with = "one_based")]
    pub w0: usize,
    pub warm_starts: Vec<usize>,
    pub divergence: DivergenceKind,
    /// Solve the omniscient problem along DR runs for the value comparison.
    pub track_omniscient: bool,
    pub write_traces: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConcentrationConfig {
    pub d: usize,
    pub runs: usize,
    /// `β_t = b (1 + t)^{-q}`.
    pub b: f64,
    pub q: f64,
    pub t_max: u64,
    pub points_per_decade: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConsistencyConfig {
    pub x0: Vec<f64>,
    #[serde(with = "one_based")]
    pub w0: usize,
    pub grid: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimingConfig {
    pub samples: usize,
    pub warm_start: usize,
    /// Initial states are drawn uniformly from `[-box, box]^nx`.
    pub box_half_width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveConfig {
    pub x0: Vec<f64>,
    #[serde(with = "one_based")]
    pub w0: usize,
    pub warm_start: usize,
    pub variant: VariantKind,
    pub divergence: DivergenceKind,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    Dr,
    Robust,
    Omniscient,
}

impl std::str::FromStr for VariantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dr" => Ok(VariantKind::Dr),
            "robust" => Ok(VariantKind::Robust),
            "omniscient" => Ok(VariantKind::Omniscient),
            other => Err(Error::Config(format!("unknown variant '{other}'"))),
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelConfig::cooling(3),
            kernel: None,
            horizon: 5,
            seed: 0,
            out_dir: "out".into(),
            divergences: DivergenceKind::ALL.to_vec(),
            sharp_kl: false,
            beta_b: 0.19,
            beta_q: 2.0,
            simulate: SimulateConfig::default(),
            concentration: ConcentrationConfig::default(),
            consistency: ConsistencyConfig::default(),
            timing: TimingConfig::default(),
            solve: SolveConfig::default(),
        }
    }
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            runs: 50,
            steps: 30,
            x0: vec![0.5, 0.5],
            w0: 0,
            warm_starts: vec![10, 100],
            divergence: DivergenceKind::Tv,
            track_omniscient: true,
            write_traces: true,
        }
    }
}

impl Default for ConcentrationConfig {
    fn default() -> Self {
        ConcentrationConfig { d: 5, runs: 200, b: (-5.0f64).exp(), q: 2.0, t_max: 10_000, points_per_decade: 10 }
    }
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        ConsistencyConfig { x0: vec![0.25, 0.25], w0: 0, grid: default_consistency_grid() }
    }
}

impl Default for TimingConfig {
    fn default() -> Self {
        TimingConfig { samples: 10, warm_start: 100, box_half_width: 0.5 }
    }
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig { x0: vec![0.5, 0.5], w0: 0, warm_start: 100, variant: VariantKind::Dr, divergence: DivergenceKind::Tv }
    }
}

/// `{1, 2, 5} × 10^k` from 10 to 10⁵.
pub fn default_consistency_grid() -> Vec<u64> {
    let mut g = Vec::new();
    for k in 1..5 {
        let p = 10u64.pow(k);
        g.extend([p, 2 * p, 5 * p]);
    }
    g.push(100_000);
    g
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: ExperimentConfig = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.model()?;
        self.kernel()?;
        if self.kernel()?.d() != m.d {
            return Err(Error::Config(format!("kernel has {} modes, model has {}", self.kernel()?.d(), m.d)));
        }
        if self.divergences.is_empty() {
            return Err(Error::Config("divergence list is empty".into()));
        }
        for (x0, w0) in
            [(&self.simulate.x0, self.simulate.w0), (&self.consistency.x0, self.consistency.w0), (&self.solve.x0, self.solve.w0)]
        {
            if x0.len() != m.nx {
                return Err(Error::Config(format!("initial state {x0:?} has wrong dimension")));
            }
            if w0 >= m.d {
                return Err(Error::ModeOutOfRange { mode: w0 + 1, d: m.d });
            }
        }
        Ok(())
    }

    pub fn model(&self) -> Result<MjlsModel> {
        MjlsModel::from_config(&self.model)
    }

    pub fn kernel(&self) -> Result<TransitionKernel> {
        match &self.kernel {
            Some(rows) => TransitionKernel::new(rows.clone()),
            None => cooling_kernel(self.model.a.len()),
        }
    }

    pub fn radius_spec(&self, kind: DivergenceKind, d: usize) -> RadiusSpec {
        RadiusSpec { divergence: Divergence::default_for(kind, d), sharp_kl: self.sharp_kl }
    }
}
