use serde::{Deserialize, Serialize};

use crate::agent::{greedy_action, AgentConfig, AgentParams};
use crate::data::{mse_mae, Scaler, WindowedExample};
use crate::env::{rollout, Action, BatchInputs, EnvConfig, EnvParams};
use crate::error::{Error, Result};
use crate::numerics::{Checkpoint, Graph, Rng, Tensor};
use crate::trainer::fit::{predict_last, Controller};
use crate::trainer::{Dataset, Mode};

const META_KIND: &str = "rre-model";

/// How actions are produced at inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyMode {
    /// Plain encoder: full input, no skips.
    Conventional,
    /// Greedy actions from the trained policy.
    Agent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelMeta {
    kind: String,
    mode: Mode,
    policy: PolicyMode,
    env: EnvConfig,
    agent: Option<AgentConfig>,
    scaler: Scaler,
    target: usize,
    names: Vec<String>,
    window: usize,
}

/// A forecaster with everything needed to predict from raw rows.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub env: EnvParams,
    pub agent: Option<AgentParams>,
    pub policy: PolicyMode,
    pub mode: Mode,
    pub scaler: Scaler,
    pub target: usize,
    pub names: Vec<String>,
    pub window: usize,
}

/// Prediction for one raw input window.
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub scaled: Vec<f64>,
    pub original: Vec<f64>,
    /// Action taken at each step; `q` plays no part in prediction.
    pub actions: Vec<Action>,
}

impl TrainedModel {
    pub fn new(env: EnvParams, agent: Option<AgentParams>, policy: PolicyMode, data: &Dataset, window: usize, mode: Mode) -> Self {
        TrainedModel {
            env,
            agent,
            policy,
            mode,
            scaler: data.scaler.clone(),
            target: data.target,
            names: data.names.clone(),
            window,
        }
    }

    pub fn controller<'a>(&'a self, sampler: Option<&'a mut Rng>) -> Result<Controller<'a>> {
        match (self.policy, &self.agent) {
            (PolicyMode::Conventional, _) => Ok(Controller::Conventional),
            (PolicyMode::Agent, Some(a)) => Ok(match sampler {
                Some(rng) => Controller::Sample(a, rng),
                None => Controller::Greedy(a),
            }),
            (PolicyMode::Agent, None) => Err(Error::Checkpoint("policy mode `agent` without agent parameters".into())),
        }
    }

    /// Scaled final-step forecasts `[N, H]`.
    pub fn predict_scaled(&self, examples: &[WindowedExample], sampler: Option<&mut Rng>) -> Result<Tensor> {
        let mut c = self.controller(sampler)?;
        predict_last(&self.env, examples, &mut c)
    }

    /// Test MSE and MAE of the final-step forecast in original units.
    pub fn evaluate(&self, examples: &[WindowedExample], sampler: Option<&mut Rng>) -> Result<(f64, f64)> {
        let preds = self.predict_scaled(examples, sampler)?;
        let mut p = Vec::with_capacity(preds.len());
        let mut y = Vec::with_capacity(preds.len());
        for (i, ex) in examples.iter().enumerate() {
            p.extend(self.scaler.inverse_column(self.target, preds.row(i)));
            y.extend(self.scaler.inverse_column(self.target, ex.y_last()));
        }
        mse_mae(&p, &y)
    }

    /// Predicts from `T` raw rows (original units, all variables), greedy
    /// actions.
    pub fn infer(&self, raw: &Tensor) -> Result<Inference> {
        if raw.rows() != self.window || raw.cols() != self.env.config.input_dim {
            return Err(Error::shape(format!(
                "input window must be {} x {}, got {} x {}",
                self.window,
                self.env.config.input_dim,
                raw.rows(),
                raw.cols()
            )));
        }
        let x = self.scaler.transform(raw)?;
        let example = WindowedExample {
            x,
            y_all: Tensor::zeros(&[self.window, self.env.config.horizon]),
        };
        let inputs = BatchInputs::new(&[&example])?;
        let mut g = Graph::new(&self.env.store);
        let steps = rollout(&mut g, &self.env.config, &inputs, |_, s| match (self.policy, &self.agent) {
            (PolicyMode::Agent, Some(a)) => Ok(a.distributions(s)?.iter().map(greedy_action).collect()),
            _ => Ok(vec![Action::CONVENTIONAL; s.rows()]),
        })?;
        g.check()?;
        let last = steps.last().expect("non-empty window");
        let scaled = g.value(last.y_hat).to_vec();
        Ok(Inference {
            original: self.scaler.inverse_column(self.target, &scaled),
            scaled,
            actions: steps.iter().map(|s| s.actions[0]).collect(),
        })
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let meta = ModelMeta {
            kind: META_KIND.into(),
            mode: self.mode,
            policy: self.policy,
            env: self.env.config.clone(),
            agent: self.agent.as_ref().map(|a| a.config.clone()),
            scaler: self.scaler.clone(),
            target: self.target,
            names: self.names.clone(),
            window: self.window,
        };
        let mut ck = Checkpoint::new(serde_json::to_string(&meta)?).with_section("env", &self.env.store);
        if let Some(a) = &self.agent {
            ck = ck.with_section("policy", &a.policy).with_section("value", &a.value);
        }
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta: ModelMeta =
            serde_json::from_str(&ck.metadata).map_err(|e| Error::Checkpoint(format!("bad metadata: {e}")))?;
        if meta.kind != META_KIND {
            return Err(Error::Checkpoint(format!("unexpected checkpoint kind `{}`", meta.kind)));
        }
        let as_ck = |e: Error| Error::Checkpoint(e.to_string());
        let env = EnvParams::from_store(meta.env, ck.section("env")?.clone()).map_err(as_ck)?;
        let agent = match meta.agent {
            Some(cfg) => Some(
                AgentParams::from_stores(cfg, ck.section("policy")?.clone(), ck.section("value")?.clone())
                    .map_err(as_ck)?,
            ),
            None => None,
        };
        if meta.policy == PolicyMode::Agent && agent.is_none() {
            return Err(Error::Checkpoint("policy mode `agent` without agent parameters".into()));
        }
        if meta.scaler.n_vars() != env.config.input_dim || meta.target >= env.config.input_dim {
            return Err(Error::Checkpoint("scaler does not match the forecaster input".into()));
        }
        Ok(TrainedModel {
            env,
            agent,
            policy: meta.policy,
            mode: meta.mode,
            scaler: meta.scaler,
            target: meta.target,
            names: meta.names,
            window: meta.window,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
