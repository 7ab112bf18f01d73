use crate::agent::{greedy_action, sample_action, AgentParams};
use crate::data::WindowedExample;
use crate::env::{masked_training_loss_graph, rollout, Action, BatchInputs, EnvParams};
use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Rng, Tensor};
use crate::trainer::log::{LogRow, Phase};

/// Rows per forward-only evaluation batch.
pub const EVAL_CHUNK: usize = 256;

/// Chooses the per-example actions during a rollout.
pub enum Controller<'a> {
    /// `u = 1, k = 0, q = 1` at every step.
    Conventional,
    Greedy(&'a AgentParams),
    Sample(&'a AgentParams, &'a mut Rng),
}

impl Controller<'_> {
    pub fn choose(&mut self, states: &Tensor) -> Result<Vec<Action>> {
        match self {
            Controller::Conventional => Ok(vec![Action::CONVENTIONAL; states.rows()]),
            Controller::Greedy(agent) => Ok(agent.distributions(states)?.iter().map(greedy_action).collect()),
            Controller::Sample(agent, rng) => agent
                .distributions(states)?
                .iter()
                .map(|d| sample_action(d, rng).map(|(a, _)| a))
                .collect(),
        }
    }
}

/// Tracks the best score and a patience counter that only resets on
/// improvements larger than `min_delta` over the last reset point.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    best: f64,
    reference: f64,
    bad: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self::starting_from(patience, min_delta, f64::INFINITY)
    }

    pub fn starting_from(patience: usize, min_delta: f64, score: f64) -> Self {
        EarlyStopping {
            patience,
            min_delta,
            best: score,
            reference: score,
            bad: 0,
        }
    }

    /// Returns `(new_best, stop)`.
    pub fn update(&mut self, score: f64) -> (bool, bool) {
        let new_best = score < self.best;
        if new_best {
            self.best = score;
        }
        if score < self.reference - self.min_delta {
            self.reference = score;
            self.bad = 0;
        } else {
            self.bad += 1;
        }
        (new_best, self.bad >= self.patience)
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

/// Last-step predictions `[N, H]` (scaled) for `examples`.
pub fn predict_last(env: &EnvParams, examples: &[WindowedExample], controller: &mut Controller<'_>) -> Result<Tensor> {
    let h = env.config.horizon;
    let mut out = Vec::with_capacity(examples.len() * h);
    for chunk in examples.chunks(EVAL_CHUNK) {
        let refs: Vec<&WindowedExample> = chunk.iter().collect();
        let inputs = BatchInputs::new(&refs)?;
        let mut g = Graph::new(&env.store);
        g.set_scope("env/eval");
        let steps = rollout(&mut g, &env.config, &inputs, |_, s| controller.choose(s))?;
        g.check()?;
        out.extend_from_slice(g.value(steps.last().expect("non-empty window").y_hat));
    }
    Tensor::matrix(examples.len(), h, out)
}

/// Mean squared error of the final-step forecast, in scaled units.
pub fn last_step_mse(env: &EnvParams, examples: &[WindowedExample], controller: &mut Controller<'_>) -> Result<f64> {
    let preds = predict_last(env, examples, controller)?;
    let mut se = 0.0;
    for (i, ex) in examples.iter().enumerate() {
        se += preds.row(i).iter().zip(ex.y_last()).map(|(p, y)| (p - y) * (p - y)).sum::<f64>();
    }
    Ok(se / (examples.len() * env.config.horizon) as f64)
}

/// One pass over `train` in shuffled batches; returns the mean batch loss.
pub fn env_train_epoch(
    env: &mut EnvParams,
    train: &[WindowedExample],
    batch_size: usize,
    lr: f64,
    controller: &mut Controller<'_>,
    rng: &mut Rng,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..train.len()).collect();
    rng.shuffle(&mut order);
    let mut total = 0.0;
    let mut batches = 0;
    for idx in order.chunks(batch_size) {
        let refs: Vec<&WindowedExample> = idx.iter().map(|&i| &train[i]).collect();
        let inputs = BatchInputs::new(&refs)?;
        let (loss, grads) = {
            let mut g = Graph::new(&env.store);
            g.set_scope("env/train");
            let steps = rollout(&mut g, &env.config, &inputs, |_, s| controller.choose(s))?;
            let masks: Vec<Vec<bool>> = (0..refs.len())
                .map(|b| steps.iter().map(|s| s.actions[b].q).collect())
                .collect();
            let y: Vec<_> = steps.iter().map(|s| s.y_hat).collect();
            let (loss, _) = masked_training_loss_graph(&mut g, &y, &inputs.ys, &masks)?;
            (g.scalar(loss), g.backward(loss)?)
        };
        if !loss.is_finite() {
            return Err(Error::Training(format!("forecaster loss diverged ({loss})")));
        }
        env.store.adam_step(&grads, lr, false)?;
        total += loss;
        batches += 1;
    }
    Ok(total / batches.max(1) as f64)
}

pub struct FitOutcome {
    pub best_val: f64,
    pub epochs_run: usize,
    pub rows: Vec<LogRow>,
}

/// Trains `env` under `controller` with early stopping on last-step
/// validation MSE and restores the best parameters seen. `start` gives the
/// score and parameters to beat, if any.
#[allow(clippy::too_many_arguments)]
pub fn fit_env(
    env: &mut EnvParams,
    train: &[WindowedExample],
    val: &[WindowedExample],
    epochs: usize,
    stopper: EarlyStopping,
    batch_size: usize,
    lr: f64,
    mut controller: Controller<'_>,
    rng: &mut Rng,
    phase: Phase,
    round: usize,
) -> Result<FitOutcome> {
    let mut stopper = stopper;
    let initial = stopper.best().is_finite().then(|| env.store.clone());
    let mut best_store: Option<ParamStore> = None;
    let mut rows = Vec::new();
    let mut run = 0;
    for epoch in 1..=epochs {
        let train_loss = env_train_epoch(env, train, batch_size, lr, &mut controller, rng)?;
        let val_loss = last_step_mse(env, val, &mut controller)?;
        run = epoch;
        rows.push(LogRow {
            round,
            epoch,
            phase,
            train_loss,
            val_loss: Some(val_loss),
            mean_reward: None,
        });
        log::debug!("{} round {round} epoch {epoch}: train {train_loss:.6} val {val_loss:.6}", phase.name());
        let (new_best, stop) = stopper.update(val_loss);
        if new_best {
            best_store = Some(env.store.clone());
        }
        if stop {
            log::debug!("{} round {round}: early stop after epoch {epoch}", phase.name());
            break;
        }
    }
    if let Some(store) = best_store.or(initial) {
        env.store = store;
    }
    Ok(FitOutcome {
        best_val: stopper.best(),
        epochs_run: run,
        rows,
    })
}
