//! Reinforced recurrent encoder forecasting.
//!
//! An encoder-only recurrent forecaster whose per-step input gate, hidden
//! skip connection and supervision mask are chosen by a Transformer policy.
//! The policy is trained with a PPO variant that draws minibatches through
//! dynamic transition sampling, and the forecaster and agent are trained in
//! alternating rounds.

pub mod agent;
pub mod data;
pub mod dts;
pub mod env;
pub mod error;
pub mod numerics;
pub mod ppo;
pub mod trainer;

pub use error::{Error, Result};
