//! PPO updates with one-step TD advantages and bootstrapped value targets.

use serde::{Deserialize, Serialize};

use crate::agent::{policy_graph, value_graph, AgentParams, PolicyOutput};
use crate::dts::{sample_minibatch, DtsConfig, EpochSampling, ReplayBuffer};
use crate::env::Action;
use crate::error::{Error, Result};
use crate::numerics::{Graph, Rng, Var};

pub use crate::dts::td_error as advantage;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip: f64,
    pub gamma: f64,
    pub policy_lr: f64,
    pub value_lr: f64,
    /// Weight of the mean head entropy added to the policy objective.
    pub entropy_coef: f64,
    /// Standardise minibatch advantages before the policy step.
    pub normalize_advantages: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip: 0.2,
            gamma: 0.95,
            policy_lr: 1e-4,
            value_lr: 1e-3,
            entropy_coef: 0.0,
            normalize_advantages: false,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(Error::Config(format!("clip must lie in (0, 1), got {}", self.clip)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if !(self.policy_lr > 0.0 && self.value_lr > 0.0) {
            return Err(Error::Config("agent learning rates must be positive".into()));
        }
        if !(self.entropy_coef >= 0.0) {
            return Err(Error::Config("entropy coefficient must be non-negative".into()));
        }
        Ok(())
    }
}

/// `r + gamma * v(s')`, no bootstrap at terminal steps.
pub fn bootstrapped_return(r: f64, v_next: f64, terminal: bool, gamma: f64) -> f64 {
    r + if terminal { 0.0 } else { gamma * v_next }
}

/// Clipped surrogate term `min(rho * a, clip(rho, 1 - eps, 1 + eps) * a)`.
pub fn surrogate_term(rho: f64, a: f64, clip: f64) -> f64 {
    (rho * a).min(rho.clamp(1.0 - clip, 1.0 + clip) * a)
}

/// Mean clipped surrogate on the tape (to be maximised).
pub fn policy_loss(
    g: &mut Graph<'_>,
    out: &PolicyOutput,
    actions: &[Action],
    old_log_probs: &[f64],
    advantages: &[f64],
    clip: f64,
) -> Var {
    let n = actions.len();
    let lp = out.log_prob(g, actions);
    let old = g.constant_matrix(n, 1, old_log_probs.to_vec());
    let diff = g.sub(lp, old);
    let rho = g.exp(diff);
    let adv = g.constant_matrix(n, 1, advantages.to_vec());
    let plain = g.mul(rho, adv);
    let clipped = g.clamp(rho, 1.0 - clip, 1.0 + clip);
    let clipped = g.mul(clipped, adv);
    let term = g.minimum(plain, clipped);
    g.mean_all(term)
}

/// Mean squared error between predicted values and returns (to be minimised).
pub fn value_loss(g: &mut Graph<'_>, values: Var, returns: &[f64]) -> Var {
    let target = g.constant_matrix(returns.len(), 1, returns.to_vec());
    let d = g.sub(values, target);
    let sq = g.square(d);
    g.mean_all(sq)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub policy_objective: f64,
    pub value_loss: f64,
    pub mean_abs_td: f64,
}

/// One agent epoch on one buffer: refresh priorities with the current value
/// network, draw a minibatch, then take one ascent step on the policy and
/// one descent step on the value network.
pub fn agent_epoch(
    agent: &mut AgentParams,
    buffer: &ReplayBuffer,
    dts: &DtsConfig,
    ppo: &PpoConfig,
    g: usize,
    total: usize,
    rng: &mut Rng,
) -> Result<EpochStats> {
    let sampling = EpochSampling::compute(agent, buffer, dts, g, total)?;
    let idx = sample_minibatch(&sampling.probs, dts.minibatch, rng)?;
    epoch_update(agent, buffer, &sampling, &idx, ppo, rng)
}

/// Applies the two optimiser steps to the minibatch `idx`.
pub fn epoch_update(
    agent: &mut AgentParams,
    buffer: &ReplayBuffer,
    sampling: &EpochSampling,
    idx: &[usize],
    ppo: &PpoConfig,
    rng: &mut Rng,
) -> Result<EpochStats> {
    let tr = &buffer.transitions;
    let states = buffer.states(idx)?;
    let actions: Vec<Action> = idx.iter().map(|&i| tr[i].a).collect();
    let old: Vec<f64> = idx.iter().map(|&i| tr[i].old_log_prob).collect();
    let mut adv: Vec<f64> = idx.iter().map(|&i| sampling.deltas[i]).collect();
    let returns: Vec<f64> = idx
        .iter()
        .map(|&i| bootstrapped_return(tr[i].r, sampling.next_values[i], tr[i].terminal, ppo.gamma))
        .collect();
    if ppo.normalize_advantages && adv.len() > 1 {
        let mean = adv.iter().sum::<f64>() / adv.len() as f64;
        let sd = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / adv.len() as f64).sqrt();
        adv.iter_mut().for_each(|a| *a = (*a - mean) / (sd + 1e-8));
    }
    let mean_abs_td = adv.iter().map(|a| a.abs()).sum::<f64>() / adv.len().max(1) as f64;

    let cfg = agent.config.clone();
    let (objective, pgrads) = {
        let mut gr = Graph::new(&agent.policy);
        gr.set_scope("policy");
        let out = policy_graph(&mut gr, &cfg, &states, Some(rng))?;
        let mut obj = policy_loss(&mut gr, &out, &actions, &old, &adv, ppo.clip);
        if ppo.entropy_coef > 0.0 {
            let h = out.entropy(&mut gr);
            let h = gr.mean_all(h);
            let h = gr.scale(h, ppo.entropy_coef);
            obj = gr.add(obj, h);
        }
        (gr.scalar(obj), gr.backward(obj)?)
    };
    let (vloss, vgrads) = {
        let mut gr = Graph::new(&agent.value);
        gr.set_scope("value");
        let v = value_graph(&mut gr, &cfg, &states, Some(rng))?;
        let loss = value_loss(&mut gr, v, &returns);
        (gr.scalar(loss), gr.backward(loss)?)
    };
    agent.policy.adam_step(&pgrads, ppo.policy_lr, true)?;
    agent.value.adam_step(&vgrads, ppo.value_lr, false)?;
    Ok(EpochStats {
        policy_objective: objective,
        value_loss: vloss,
        mean_abs_td,
    })
}

#[cfg(test)]
mod tests;
