use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::rng::derive_seed;
use crate::numerics::Rng;
use crate::trainer::baseline::{train_baseline, Supervision};
use crate::trainer::coevolve::{co_evolve, RoundRecord};
use crate::trainer::log::{LogRow, Phase};
use crate::trainer::model::{PolicyMode, TrainedModel};
use crate::trainer::{Dataset, ExperimentConfig, Mode, STREAM_INFERENCE};

/// Outcome of training and testing one mode for one seed.
pub struct SeedResult {
    pub seed: u64,
    pub mode: Mode,
    pub test_mse: f64,
    pub test_mae: f64,
    pub best_val: f64,
    pub model: TrainedModel,
    pub log: Vec<LogRow>,
    pub rounds: Vec<RoundRecord>,
    pub aborted: Option<String>,
}

pub fn run_seed(cfg: &ExperimentConfig, data: &Dataset, mode: Mode, seed: u64) -> Result<SeedResult> {
    cfg.validate()?;
    let (model, best_val, log, rounds, aborted) = match mode {
        Mode::Rre => {
            let out = co_evolve(cfg, data, seed)?;
            (out.model, out.best_val, out.log, out.rounds, out.aborted)
        }
        Mode::NaiveAll | Mode::NaiveLast => {
            let sup = if mode == Mode::NaiveAll { Supervision::AllSteps } else { Supervision::LastStep };
            let out = train_baseline(cfg.env_config(data.input_dim()), &data.train, &data.val, &cfg.train, sup, seed)?;
            let log = out
                .history
                .iter()
                .enumerate()
                .map(|(i, (t, v))| LogRow {
                    round: 0,
                    epoch: i + 1,
                    phase: Phase::Pretrain,
                    train_loss: *t,
                    val_loss: Some(*v),
                    mean_reward: None,
                })
                .collect();
            let model = TrainedModel::new(out.env, None, PolicyMode::Conventional, data, cfg.data.window, mode);
            (model, out.best_val, log, Vec::new(), None)
        }
    };
    let mut sampler = Rng::seeded(derive_seed(seed, STREAM_INFERENCE));
    let sampler = cfg.train.stochastic_inference.then_some(&mut sampler);
    let (test_mse, test_mae) = model.evaluate(&data.test, sampler)?;
    log::info!("{} seed {seed}: test MSE {test_mse:.6} MAE {test_mae:.6}", mode.name());
    Ok(SeedResult {
        seed,
        mode,
        test_mse,
        test_mae,
        best_val,
        model,
        log,
        rounds,
        aborted,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub per_seed: Vec<f64>,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Summary {
            mean,
            std: var.sqrt(),
            per_seed: values.to_vec(),
        }
    }
}

/// Test metrics across seeds, in original units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mode: Mode,
    pub seeds: Vec<u64>,
    pub mse: Summary,
    pub mae: Summary,
}

impl Metrics {
    pub fn from_results(results: &[SeedResult]) -> Result<Self> {
        let first = results.first().ok_or_else(|| Error::Training("no seed results".into()))?;
        Ok(Metrics {
            mode: first.mode,
            seeds: results.iter().map(|r| r.seed).collect(),
            mse: Summary::of(&results.iter().map(|r| r.test_mse).collect::<Vec<_>>()),
            mae: Summary::of(&results.iter().map(|r| r.test_mae).collect::<Vec<_>>()),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// `(baseline - ours) / baseline`, as a percentage.
pub fn improvement_pct(baseline: f64, ours: f64) -> f64 {
    if baseline == 0.0 {
        0.0
    } else {
        100.0 * (baseline - ours) / baseline
    }
}
