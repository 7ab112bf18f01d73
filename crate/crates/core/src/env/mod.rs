//! The recurrent forecaster viewed as an MDP environment.
//!
//! State `s_t = concat(h_{t-1}, x_t)`. An action `(u, k, q)` gates the input,
//! picks a skip source from the last `K` hidden outputs (or none for
//! `k = 0`), and decides whether step `t` is supervised.

mod cell;
mod history;
mod loss;
mod rollout;
mod step;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Rng};

pub use cell::{cell_forward, cell_step, output_layer, CellOut};
pub use history::{skip_source, zero_padded_count, HiddenHistory};
pub use loss::{masked_loss_weights, masked_training_loss, masked_training_loss_graph, step_loss};
pub use rollout::{rollout, BatchInputs, RolloutStep};
pub use step::{env_step, make_state, reward, StepOutcome};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Rnn,
    Mgu,
    Gru,
    Lstm,
}

impl CellKind {
    /// Number of stacked gate blocks in the input-to-hidden matrix.
    pub fn gate_blocks(self) -> usize {
        match self {
            CellKind::Rnn => 1,
            CellKind::Mgu => 2,
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CellKind::Rnn => "rnn",
            CellKind::Mgu => "mgu",
            CellKind::Gru => "gru",
            CellKind::Lstm => "lstm",
        }
    }
}

impl std::str::FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rnn" => Ok(CellKind::Rnn),
            "mgu" => Ok(CellKind::Mgu),
            "gru" => Ok(CellKind::Gru),
            "lstm" => Ok(CellKind::Lstm),
            other => Err(Error::Config(format!("unknown cell kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub cell: CellKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub horizon: usize,
    /// Skip window `K`: skip actions range over `1..=K`.
    pub skip_window: usize,
    /// Reward sensitivity.
    pub alpha: f64,
    /// Reward threshold in `(0, 1)`.
    pub threshold: f64,
}

impl EnvConfig {
    pub fn new(cell: CellKind, input_dim: usize, hidden_dim: usize, horizon: usize) -> Self {
        EnvConfig {
            cell,
            input_dim,
            hidden_dim,
            horizon,
            skip_window: 8,
            alpha: 1.0,
            threshold: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.skip_window < 1 {
            return Err(Error::Config("skip window must be at least 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("reward threshold must lie in (0, 1), got {}", self.threshold)));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Config(format!("reward sensitivity must be positive, got {}", self.alpha)));
        }
        if self.hidden_dim == 0 || self.input_dim == 0 || self.horizon == 0 {
            return Err(Error::Config("input, hidden and horizon sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.hidden_dim + self.input_dim
    }
}

/// Input gate, skip index and supervision flag for one step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub u: bool,
    pub k: usize,
    pub q: bool,
}

impl Action {
    /// Full input, no skip, supervised: the conventional configuration.
    pub const CONVENTIONAL: Action = Action { u: true, k: 0, q: true };

    pub fn new(u: bool, k: usize, q: bool) -> Self {
        Action { u, k, q }
    }

    pub fn validate(&self, skip_window: usize) -> Result<()> {
        if self.k > skip_window {
            return Err(Error::Action(format!("skip index {} exceeds window {skip_window}", self.k)));
        }
        Ok(())
    }
}

/// `concat(h_{t-1}, x_t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdpState(pub Vec<f64>);

impl MdpState {
    pub fn hidden_part(&self, hidden_dim: usize) -> &[f64] {
        &self.0[..hidden_dim]
    }

    pub fn input_part(&self, hidden_dim: usize) -> &[f64] {
        &self.0[hidden_dim..]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub const W_IH: &str = "env.w_ih";
pub const W_HH: &str = "env.w_hh";
pub const W_HF: &str = "env.w_hf";
pub const W_HN: &str = "env.w_hn";
pub const BIAS: &str = "env.b";
pub const W_SKIP: &str = "env.w_skip";
pub const W_OUT: &str = "env.w_out";
pub const B_OUT: &str = "env.b_out";

/// Forecaster weights: recurrent cell, skip projection and output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvParams {
    pub config: EnvConfig,
    pub store: ParamStore,
}

impl EnvParams {
    pub fn init(config: EnvConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let (di, dh, h) = (config.input_dim, config.hidden_dim, config.horizon);
        let blocks = config.cell.gate_blocks();
        let mut store = ParamStore::new();
        store.insert_uniform(W_IH, di, blocks * dh, rng)?;
        match config.cell {
            CellKind::Mgu => {
                store.insert_uniform(W_HF, dh, dh, rng)?;
                store.insert_uniform(W_HN, dh, dh, rng)?;
            }
            _ => store.insert_uniform(W_HH, dh, blocks * dh, rng)?,
        }
        store.insert_zeros(BIAS, 1, blocks * dh)?;
        // Zero skip projection: training starts from the plain cell.
        store.insert_zeros(W_SKIP, dh, dh)?;
        store.insert_uniform(W_OUT, dh, h, rng)?;
        store.insert_zeros(B_OUT, 1, h)?;
        Ok(EnvParams { config, store })
    }

    pub fn from_store(config: EnvConfig, store: ParamStore) -> Result<Self> {
        config.validate()?;
        let p = EnvParams { config, store };
        let mut rng = Rng::seeded(0);
        let template = EnvParams::init(p.config.clone(), &mut rng)?;
        for (name, t) in template.store.iter() {
            match p.store.get(name) {
                Some(v) if v.shape() == t.shape() => {}
                Some(v) => {
                    return Err(Error::shape(format!(
                        "`{name}`: expected {:?}, got {:?}",
                        t.shape(),
                        v.shape()
                    )))
                }
                None => return Err(Error::shape(format!("missing parameter `{name}`"))),
            }
        }
        Ok(p)
    }
}
