//! Dynamic transition sampling over a replay buffer.
//!
//! Each transition gets a priority mixing its normalised TD error with its
//! forecasting error. Priorities are turned into a sampling distribution by
//! a softmax whose per-transition temperature decays towards `lambda_min`
//! while oscillating over the agent epochs.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::agent::AgentParams;
use crate::env::{Action, MdpState};
use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub s: MdpState,
    pub a: Action,
    /// Joint log-probability of `a` under the collecting policy.
    pub old_log_prob: f64,
    pub r: f64,
    pub s_next: MdpState,
    pub y_hat: Vec<f64>,
    pub y: Vec<f64>,
    pub terminal: bool,
}

/// Transitions from one data batch, stored sequence by sequence.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReplayBuffer {
    pub transitions: Vec<Transition>,
}

impl ReplayBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, t: Transition) {
        self.transitions.push(t);
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn terminal_count(&self) -> usize {
        self.transitions.iter().filter(|t| t.terminal).count()
    }

    pub fn mean_reward(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.transitions.iter().map(|t| t.r).sum::<f64>() / self.len() as f64
    }

    /// Stacks the selected states into a `[n, state_dim]` tensor.
    pub fn states(&self, idx: &[usize]) -> Result<Tensor> {
        let rows: Vec<Vec<f64>> = idx.iter().map(|&i| self.transitions[i].s.0.clone()).collect();
        Tensor::from_rows(&rows)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DtsConfig {
    pub beta: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub mu: f64,
    pub omega: u32,
    pub alpha: f64,
    pub gamma: f64,
    pub minibatch: usize,
}

impl Default for DtsConfig {
    fn default() -> Self {
        DtsConfig {
            beta: 0.5,
            lambda_min: 0.1,
            lambda_max: 2.0,
            mu: 0.2,
            omega: 2,
            alpha: 1.0,
            gamma: 0.95,
            minibatch: 64,
        }
    }
}

impl DtsConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.beta) {
            return bad(format!("beta must lie in [0, 1], got {}", self.beta));
        }
        if !(self.lambda_min > 0.0 && self.lambda_min <= self.lambda_max) {
            return bad(format!(
                "temperatures need 0 < lambda_min <= lambda_max, got {} and {}",
                self.lambda_min, self.lambda_max
            ));
        }
        if !(0.0..1.0).contains(&self.mu) {
            return bad(format!("mu must lie in [0, 1), got {}", self.mu));
        }
        if self.omega == 0 {
            return bad("omega must be a positive integer".into());
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if self.minibatch == 0 {
            return bad("minibatch size must be positive".into());
        }
        Ok(())
    }
}

/// `r + gamma * v(s') - v(s)` with `v(s') = 0` at terminal steps.
pub fn td_error(r: f64, v_s: f64, v_next: f64, terminal: bool, gamma: f64) -> f64 {
    let boot = if terminal { 0.0 } else { v_next };
    r + gamma * boot - v_s
}

/// `1 - alpha / (alpha + ||y_hat - y||_1)`.
pub fn forecast_error_metric(y_hat: &[f64], y: &[f64], alpha: f64) -> f64 {
    let l1: f64 = y_hat.iter().zip(y).map(|(a, b)| (a - b).abs()).sum();
    1.0 - alpha / (alpha + l1)
}

/// `beta * |delta| / delta_max + (1 - beta) * e`; the TD term is 0 when
/// `delta_max` is 0.
pub fn priority(delta: f64, delta_max: f64, e: f64, beta: f64) -> f64 {
    let td = if delta_max > 0.0 { delta.abs() / delta_max } else { 0.0 };
    beta * td + (1.0 - beta) * e
}

/// Temperature for priority `p` at agent epoch `g` of `total`.
pub fn effective_temperature(p: f64, g: usize, total: usize, cfg: &DtsConfig) -> f64 {
    let lambda = cfg.lambda_min + p * (cfg.lambda_max - cfg.lambda_min);
    let frac = g as f64 / total as f64;
    let decay = (cfg.lambda_min / lambda).powf(frac);
    let wave = 1.0 + cfg.mu * (2.0 * PI * cfg.omega as f64 * frac).sin();
    lambda * decay * wave
}

/// `softmax(p_m / lambda_m)` with max subtraction.
pub fn sampling_distribution(priorities: &[f64], temperatures: &[f64]) -> Result<Vec<f64>> {
    if priorities.len() != temperatures.len() || priorities.is_empty() {
        return Err(Error::Buffer(format!(
            "{} priorities for {} temperatures",
            priorities.len(),
            temperatures.len()
        )));
    }
    if temperatures.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::Distribution("temperatures must be positive".into()));
    }
    let z: Vec<f64> = priorities.iter().zip(temperatures).map(|(p, t)| p / t).collect();
    let probs = crate::numerics::softmax_row(&z);
    if probs.iter().any(|p| !p.is_finite()) {
        return Err(Error::Numerical {
            node: "dts/softmax".into(),
        });
    }
    Ok(probs)
}

/// `count` independent draws with replacement.
pub fn sample_minibatch(probs: &[f64], count: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if probs.is_empty() {
        return Err(Error::Buffer("cannot sample from an empty buffer".into()));
    }
    let cdf: Vec<f64> = probs
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect();
    let total = *cdf.last().unwrap();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Distribution("sampling weights must have positive finite mass".into()));
    }
    Ok((0..count)
        .map(|_| {
            let u = rng.uniform() * total;
            cdf.partition_point(|c| *c <= u).min(probs.len() - 1)
        })
        .collect())
}

/// Per-transition quantities for one agent epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochSampling {
    pub values: Vec<f64>,
    pub next_values: Vec<f64>,
    pub deltas: Vec<f64>,
    pub errors: Vec<f64>,
    pub priorities: Vec<f64>,
    pub temperatures: Vec<f64>,
    pub probs: Vec<f64>,
}

impl EpochSampling {
    /// Evaluates the current value network over the buffer and derives
    /// priorities, temperatures and sampling probabilities for epoch `g`.
    pub fn compute(agent: &AgentParams, buffer: &ReplayBuffer, cfg: &DtsConfig, g: usize, total: usize) -> Result<Self> {
        if buffer.is_empty() {
            return Err(Error::Buffer("empty replay buffer".into()));
        }
        let (values, next_values) = buffer_values(agent, buffer)?;
        let deltas: Vec<f64> = buffer
            .transitions
            .iter()
            .enumerate()
            .map(|(i, t)| td_error(t.r, values[i], next_values[i], t.terminal, cfg.gamma))
            .collect();
        let delta_max = deltas.iter().fold(0.0_f64, |m, d| m.max(d.abs()));
        let errors: Vec<f64> = buffer
            .transitions
            .iter()
            .map(|t| forecast_error_metric(&t.y_hat, &t.y, cfg.alpha))
            .collect();
        let priorities: Vec<f64> = deltas
            .iter()
            .zip(&errors)
            .map(|(d, e)| priority(*d, delta_max, *e, cfg.beta))
            .collect();
        let temperatures: Vec<f64> = priorities.iter().map(|p| effective_temperature(*p, g, total, cfg)).collect();
        let probs = sampling_distribution(&priorities, &temperatures)?;
        Ok(EpochSampling {
            values,
            next_values,
            deltas,
            errors,
            priorities,
            temperatures,
            probs,
        })
    }

    /// Debug dump: `index,abs_td,forecast_error,priority,temperature,prob`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["index", "abs_td", "forecast_error", "priority", "temperature", "prob"])?;
        for i in 0..self.deltas.len() {
            w.write_record([
                i.to_string(),
                self.deltas[i].abs().to_string(),
                self.errors[i].to_string(),
                self.priorities[i].to_string(),
                self.temperatures[i].to_string(),
                self.probs[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `v(s)` for every transition and `v(s')` for the non-terminal ones. A
/// successor state equal to the next stored state reuses its value.
pub fn buffer_values(agent: &AgentParams, buffer: &ReplayBuffer) -> Result<(Vec<f64>, Vec<f64>)> {
    let all: Vec<usize> = (0..buffer.len()).collect();
    let values = agent.values(&buffer.states(&all)?)?;
    let tr = &buffer.transitions;
    let mut next_values = vec![0.0; tr.len()];
    let mut missing = Vec::new();
    for i in 0..tr.len() {
        if tr[i].terminal {
            continue;
        }
        match tr.get(i + 1) {
            Some(n) if n.s == tr[i].s_next => next_values[i] = values[i + 1],
            _ => missing.push(i),
        }
    }
    if !missing.is_empty() {
        let rows: Vec<Vec<f64>> = missing.iter().map(|&i| tr[i].s_next.0.clone()).collect();
        let extra = agent.values(&Tensor::from_rows(&rows)?)?;
        for (i, v) in missing.into_iter().zip(extra) {
            next_values[i] = v;
        }
    }
    Ok((values, next_values))
}

#[cfg(test)]
mod tests;
