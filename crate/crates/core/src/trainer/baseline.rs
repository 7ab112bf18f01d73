//! Conventional encoder-only training, written without any of the action
//! machinery so it can serve as a reference for the pipeline.

use crate::data::WindowedExample;
use crate::env::{cell_step, output_layer, BatchInputs, EnvConfig, EnvParams};
use crate::error::{Error, Result};
use crate::numerics::rng::derive_seed;
use crate::numerics::{Graph, Rng, Tensor, Var};
use crate::trainer::fit::{EarlyStopping, EVAL_CHUNK};
use crate::trainer::{TrainConfig, STREAM_ENV_INIT, STREAM_PRETRAIN};

/// Which steps contribute to the training loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Supervision {
    AllSteps,
    LastStep,
}

fn forward(g: &mut Graph<'_>, cfg: &EnvConfig, inputs: &BatchInputs) -> Result<Vec<Var>> {
    let batch = inputs.batch_size();
    let mut h = g.constant(&Tensor::zeros(&[batch, cfg.hidden_dim]));
    let mut c = None;
    let mut preds = Vec::with_capacity(inputs.steps());
    for x in &inputs.xs {
        let xv = g.constant(x);
        let out = cell_step(g, cfg.cell, xv, h, c, None)?;
        h = out.h;
        c = out.c;
        preds.push(output_layer(g, h)?);
    }
    Ok(preds)
}

fn loss(g: &mut Graph<'_>, preds: &[Var], targets: &[Tensor], sup: Supervision) -> Var {
    let steps = preds.len();
    let batch = g.shape(preds[0]).0;
    let per_step: Vec<Var> = preds
        .iter()
        .zip(targets)
        .map(|(p, y)| {
            let yc = g.constant(y);
            let d = g.sub(*p, yc);
            let sq = g.square(d);
            g.mean_cols(sq)
        })
        .collect();
    let losses = g.concat_cols(&per_step);
    let row: Vec<f64> = match sup {
        Supervision::AllSteps => vec![1.0 / steps as f64; steps],
        Supervision::LastStep => (0..steps).map(|t| if t + 1 == steps { 1.0 } else { 0.0 }).collect(),
    };
    let weights = g.constant_matrix(batch, steps, row.repeat(batch));
    let weighted = g.mul(losses, weights);
    let total = g.sum_all(weighted);
    g.scale(total, 1.0 / batch as f64)
}

/// Scaled last-step validation MSE of the plain forecaster.
pub fn plain_last_step_mse(env: &EnvParams, examples: &[WindowedExample]) -> Result<f64> {
    let h = env.config.horizon;
    let mut se = 0.0;
    for chunk in examples.chunks(EVAL_CHUNK) {
        let refs: Vec<&WindowedExample> = chunk.iter().collect();
        let inputs = BatchInputs::new(&refs)?;
        let mut g = Graph::new(&env.store);
        let preds = forward(&mut g, &env.config, &inputs)?;
        g.check()?;
        let last = g.value(*preds.last().expect("non-empty window"));
        for (b, ex) in chunk.iter().enumerate() {
            se += last[b * h..(b + 1) * h]
                .iter()
                .zip(ex.y_last())
                .map(|(p, y)| (p - y) * (p - y))
                .sum::<f64>();
        }
    }
    Ok(se / (examples.len() * h) as f64)
}

pub struct BaselineOutcome {
    pub env: EnvParams,
    pub best_val: f64,
    /// `(train_loss, val_loss)` per epoch run.
    pub history: Vec<(f64, f64)>,
}

/// Trains a fresh forecaster conventionally with early stopping.
pub fn train_baseline(
    cfg: EnvConfig,
    train: &[WindowedExample],
    val: &[WindowedExample],
    tc: &TrainConfig,
    sup: Supervision,
    seed: u64,
) -> Result<BaselineOutcome> {
    let mut env = EnvParams::init(cfg, &mut Rng::seeded(derive_seed(seed, STREAM_ENV_INIT)))?;
    let mut rng = Rng::seeded(derive_seed(seed, STREAM_PRETRAIN));
    let mut stopper = EarlyStopping::new(tc.pretrain_patience, 0.0);
    let mut best = None;
    let mut history = Vec::new();
    for _ in 0..tc.pretrain_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut batches = 0;
        for idx in order.chunks(tc.batch_size) {
            let refs: Vec<&WindowedExample> = idx.iter().map(|&i| &train[i]).collect();
            let inputs = BatchInputs::new(&refs)?;
            let (l, grads) = {
                let mut g = Graph::new(&env.store);
                let preds = forward(&mut g, &env.config, &inputs)?;
                let l = loss(&mut g, &preds, &inputs.ys, sup);
                (g.scalar(l), g.backward(l)?)
            };
            if !l.is_finite() {
                return Err(Error::Training(format!("baseline loss diverged ({l})")));
            }
            env.store.adam_step(&grads, tc.env_lr, false)?;
            total += l;
            batches += 1;
        }
        let v = plain_last_step_mse(&env, val)?;
        history.push((total / batches.max(1) as f64, v));
        let (new_best, stop) = stopper.update(v);
        if new_best {
            best = Some(env.store.clone());
        }
        if stop {
            break;
        }
    }
    if let Some(store) = best {
        env.store = store;
    }
    Ok(BaselineOutcome {
        env,
        best_val: stopper.best(),
        history,
    })
}
