use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::agent::AgentConfig;
use crate::data::{SplitRatios, SynthConfig};
use crate::dts::DtsConfig;
use crate::env::{CellKind, EnvConfig};
use crate::error::{Error, Result};
use crate::ppo::PpoConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Rre,
    NaiveAll,
    NaiveLast,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Rre => "rre",
            Mode::NaiveAll => "naive-all",
            Mode::NaiveLast => "naive-last",
        }
    }
}

/// Where the series comes from and how it is windowed. Without a `csv`
/// path the synthetic generator is used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub csv: Option<PathBuf>,
    pub target: String,
    /// Window length `T`.
    pub window: usize,
    /// Forecast horizon `H`.
    pub horizon: usize,
    pub split: SplitRatios,
    pub synth: SynthConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            csv: None,
            target: "target".into(),
            window: 24,
            horizon: 6,
            split: SplitRatios::default(),
            synth: SynthConfig::default(),
        }
    }
}

/// Forecaster settings; the input width comes from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSettings {
    pub cell: CellKind,
    pub hidden_dim: usize,
    pub skip_window: usize,
    pub alpha: f64,
    pub threshold: f64,
}

impl Default for EnvSettings {
    fn default() -> Self {
        EnvSettings {
            cell: CellKind::Gru,
            hidden_dim: 32,
            skip_window: 8,
            alpha: 1.0,
            threshold: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSettings {
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    /// Initial probability of each conventional action factor; `None`
    /// starts from near-uniform heads.
    pub conventional_prior: Option<f64>,
}

impl Default for AgentSettings {
    fn default() -> Self {
        AgentSettings {
            embed_dim: 256,
            layers: 3,
            heads: 8,
            ff_dim: 1024,
            dropout: 0.1,
            conventional_prior: Some(0.9),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub rounds: usize,
    pub agent_epochs: usize,
    pub env_epochs: usize,
    pub pretrain_epochs: usize,
    pub pretrain_patience: usize,
    pub round_patience: usize,
    pub finetune_patience: usize,
    /// Absolute decrease of the scaled validation MSE that resets patience.
    pub min_improvement: f64,
    pub batch_size: usize,
    pub env_lr: f64,
    /// Sample actions at inference instead of taking the per-head argmax.
    pub stochastic_inference: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rounds: 20,
            agent_epochs: 50,
            env_epochs: 20,
            pretrain_epochs: 20,
            pretrain_patience: 10,
            round_patience: 5,
            finetune_patience: 6,
            min_improvement: 1e-3,
            batch_size: 32,
            env_lr: 1e-3,
            stochastic_inference: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.env_epochs == 0 || self.pretrain_epochs == 0 || self.batch_size == 0 {
            return bad("epoch counts and batch size must be positive");
        }
        if self.pretrain_patience == 0 || self.finetune_patience == 0 || self.round_patience == 0 {
            return bad("patience values must be positive");
        }
        if self.pretrain_patience > self.pretrain_epochs || self.finetune_patience > self.env_epochs {
            return bad("patience cannot exceed the corresponding epoch count");
        }
        if self.rounds > 0 && self.round_patience > self.rounds {
            return bad("round patience cannot exceed the number of rounds");
        }
        if !(self.min_improvement >= 0.0) {
            return bad("min_improvement must be non-negative");
        }
        if !(self.env_lr > 0.0) {
            return bad("env_lr must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub mode: Mode,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    /// Cells compared by the benchmark; empty means `env.cell` only.
    pub backbones: Vec<CellKind>,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            mode: Mode::Rre,
            output_dir: PathBuf::from("runs"),
            seeds: vec![0],
            backbones: Vec::new(),
        }
    }
}

/// Every setting of one experiment.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub env: EnvSettings,
    pub agent: AgentSettings,
    pub dts: DtsConfig,
    pub ppo: PpoConfig,
    pub train: TrainConfig,
    pub run: RunSettings,
}

impl ExperimentConfig {
    pub fn env_config(&self, input_dim: usize) -> EnvConfig {
        EnvConfig {
            cell: self.env.cell,
            input_dim,
            hidden_dim: self.env.hidden_dim,
            horizon: self.data.horizon,
            skip_window: self.env.skip_window,
            alpha: self.env.alpha,
            threshold: self.env.threshold,
        }
    }

    pub fn agent_config(&self, input_dim: usize) -> AgentConfig {
        AgentConfig {
            embed_dim: self.agent.embed_dim,
            layers: self.agent.layers,
            heads: self.agent.heads,
            ff_dim: self.agent.ff_dim,
            dropout: self.agent.dropout,
            conventional_prior: self.agent.conventional_prior,
            skip_window: self.env.skip_window,
            hidden_dim: self.env.hidden_dim,
            input_dim,
        }
    }

    /// Desk-scale comparison on the default synthetic series: GRU with
    /// `D_h = 32`, six rounds, five seeds and a reduced agent.
    pub fn benchmark() -> Self {
        let mut cfg = ExperimentConfig::default();
        cfg.agent = AgentSettings {
            embed_dim: 32,
            layers: 1,
            heads: 4,
            ff_dim: 64,
            ..AgentSettings::default()
        };
        cfg.train.rounds = 6;
        cfg.train.pretrain_epochs = 150;
        cfg.ppo.policy_lr = 1e-3;
        cfg.run.seeds = (0..5).collect();
        cfg
    }

    /// Checks everything that does not depend on the data.
    pub fn validate(&self) -> Result<()> {
        if self.data.window == 0 || self.data.horizon == 0 {
            return Err(Error::Config("window and horizon must be positive".into()));
        }
        self.env_config(1).validate()?;
        self.agent_config(1).validate()?;
        self.dts.validate()?;
        self.ppo.validate()?;
        self.train.validate()?;
        if (self.dts.alpha - self.env.alpha).abs() > 0.0 {
            return Err(Error::Config(format!(
                "dts.alpha ({}) must equal env.alpha ({}): both scale the same forecast error",
                self.dts.alpha, self.env.alpha
            )));
        }
        if (self.dts.gamma - self.ppo.gamma).abs() > 0.0 {
            return Err(Error::Config(format!(
                "dts.gamma ({}) must equal ppo.gamma ({})",
                self.dts.gamma, self.ppo.gamma
            )));
        }
        if self.run.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        Ok(())
    }
}
