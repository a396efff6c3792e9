//! `tandem-config v1` experiment configuration.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use tandem_core::losses::{LossWeights, DEFAULT_KLIEP_CLAMP};
use tandem_core::synthdata::{Ar1Spec, DiscreteMarkovSpec, GaussPairSpec};

pub const SCHEMA: &str = "tandem-config v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: String,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalConfig,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Generator {
    IidGauss { mu0: Vec<f64>, mu1: Vec<f64> },
    RampGauss { mu0: Vec<f64>, mu1: Vec<f64> },
    Ar1Gauss { rho: f64, mu0: Vec<f64>, mu1: Vec<f64>, sigma: f64 },
    /// `cond[y]` has `alphabet^(order+1)` entries, `init[y]` has `alphabet^order`.
    DiscreteMarkov { order: usize, alphabet: usize, cond: [Vec<f64>; 2], init: [Vec<f64>; 2] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub generator: Generator,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    #[serde(rename = "T")]
    pub t_len: usize,
    pub prior: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    pub order: usize,
    /// Relative paths resolve against the output directory.
    pub snapshot: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsConfig {
    pub lllr: f64,
    pub multiplet: f64,
    pub kliep: f64,
}

impl From<WeightsConfig> for LossWeights {
    fn from(w: WeightsConfig) -> Self {
        LossWeights { lllr: w.lllr, multiplet: w.multiplet, kliep: w.kliep }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub weights: WeightsConfig,
    pub clamp: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { weights: WeightsConfig { lllr: 1.0, multiplet: 1.0, kliep: 0.0 }, clamp: DEFAULT_KLIEP_CLAMP }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self { lr: 1e-3, epochs: 50, batch: 64 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlrSourceConfig {
    Model,
    Analytic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Symmetric threshold magnitudes; `null` selects the default log-spaced grid.
    pub thresholds: Option<Vec<f64>>,
    pub trials: usize,
    pub llr_source: LlrSourceConfig,
    pub np_alphas: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { thresholds: None, trials: 10_000, llr_source: LlrSourceConfig::Model, np_alphas: vec![0.1, 0.01, 0.001] }
    }
}

/// A generator resolved into its validated core spec.
#[derive(Debug, Clone)]
pub enum DataSpec {
    Iid(GaussPairSpec),
    Ramp(GaussPairSpec),
    Ar1(Ar1Spec),
    Discrete(DiscreteMarkovSpec),
}

impl DataSpec {
    /// Values per stored frame; discrete symbols occupy one.
    pub fn frame_dim(&self) -> usize {
        match self {
            DataSpec::Discrete(_) => 1,
            _ => self.input_dim(),
        }
    }

    /// Network input width.
    pub fn input_dim(&self) -> usize {
        match self {
            DataSpec::Iid(g) | DataSpec::Ramp(g) => g.dim(),
            DataSpec::Ar1(a) => a.dim(),
            DataSpec::Discrete(d) => d.alphabet,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).context("invalid config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA {
            bail!("schema: expected \"{SCHEMA}\", got \"{}\"", self.schema);
        }
        let d = &self.dataset;
        if d.t_len == 0 {
            bail!("dataset.T: must be >= 1");
        }
        if !(d.prior > 0.0 && d.prior < 1.0) {
            bail!("dataset.prior: must lie in (0,1), got {}", d.prior);
        }
        if d.t_len <= self.model.order {
            bail!("model.order: T={} must exceed N={}", d.t_len, self.model.order);
        }
        if self.model.hidden == 0 {
            bail!("model.hidden: must be >= 1");
        }
        if self.train.batch == 0 {
            bail!("train.batch: must be >= 1");
        }
        if !(self.train.lr > 0.0) {
            bail!("train.lr: must be > 0, got {}", self.train.lr);
        }
        if !(self.loss.clamp > 0.0) {
            bail!("loss.clamp: must be > 0, got {}", self.loss.clamp);
        }
        LossWeights::from(self.loss.weights).validate().context("loss.weights")?;
        if let Some(t) = &self.eval.thresholds {
            if t.is_empty() || t.iter().any(|a| !(*a >= 0.0)) {
                bail!("eval.thresholds: must be a nonempty list of values >= 0");
            }
        }
        if let Some(a) = self.eval.np_alphas.iter().find(|a| !(**a > 0.0 && **a < 0.5)) {
            bail!("eval.np_alphas: {a} outside (0, 0.5)");
        }
        self.data_spec().context("dataset.generator")?;
        Ok(())
    }

    pub fn data_spec(&self) -> Result<DataSpec> {
        Ok(match &self.dataset.generator {
            Generator::IidGauss { mu0, mu1 } => DataSpec::Iid(GaussPairSpec::new(mu0.clone(), mu1.clone())?),
            Generator::RampGauss { mu0, mu1 } => DataSpec::Ramp(GaussPairSpec::new(mu0.clone(), mu1.clone())?),
            Generator::Ar1Gauss { rho, mu0, mu1, sigma } => {
                DataSpec::Ar1(Ar1Spec::new(*rho, mu0.clone(), mu1.clone(), *sigma)?)
            }
            Generator::DiscreteMarkov { order, alphabet, cond, init } => DataSpec::Discrete(DiscreteMarkovSpec::new(
                *order,
                *alphabet,
                cond.clone(),
                init.clone(),
                self.dataset.prior,
            )?),
        })
    }

    pub fn snapshot_path(&self) -> PathBuf {
        self.output_dir.join(&self.model.snapshot)
    }

    pub fn thresholds(&self) -> Vec<f64> {
        self.eval.thresholds.clone().unwrap_or_else(tandem_core::eval::default_threshold_grid)
    }
}
