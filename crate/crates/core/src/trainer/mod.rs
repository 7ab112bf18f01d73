//! Pretraining, experience collection, co-evolutionary rounds, baselines and
//! inference.

mod baseline;
mod coevolve;
mod config;
mod dataset;
mod fit;
mod log;
mod model;
mod run;

pub use baseline::{plain_last_step_mse, train_baseline, BaselineOutcome, Supervision};
pub use coevolve::{co_evolve, collect_experience, train_agent_round, CoEvolveOutcome, RoundRecord};
pub use config::{AgentSettings, DataConfig, EnvSettings, ExperimentConfig, Mode, RunSettings, TrainConfig};
pub use dataset::{load_series, Dataset};
pub use fit::{env_train_epoch, fit_env, last_step_mse, predict_last, Controller, EarlyStopping, FitOutcome};
pub use log::{write_log_csv, LogRow, Phase};
pub use model::{Inference, PolicyMode, TrainedModel};
pub use run::{improvement_pct, run_seed, Metrics, SeedResult, Summary};

/// Sub-seed streams derived from the master seed.
pub(crate) const STREAM_ENV_INIT: u64 = 1;
pub(crate) const STREAM_AGENT_INIT: u64 = 2;
pub(crate) const STREAM_PRETRAIN: u64 = 3;
pub(crate) const STREAM_INFERENCE: u64 = 4;
pub(crate) const STREAM_ROUND: u64 = 100;

#[cfg(test)]
mod tests;
