//! Transformer policy and value networks over MDP states.
//!
//! A state is split into an h-token and an x-token, each projected to the
//! embedding width and tagged with a learned type embedding. Both networks
//! use the same pre-norm encoder layout with separate parameters.

mod network;

use serde::{Deserialize, Serialize};

use crate::env::{Action, MdpState};
use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Rng, Tensor};

pub use network::{encode_states, encode_tokens, policy_graph, value_graph, PolicyOutput};

pub const POLICY_PREFIX: &str = "policy.";
pub const VALUE_PREFIX: &str = "value.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    /// When set, the policy heads start out choosing each conventional
    /// factor (`u = 1`, `k = 0`, `q = 1`) with this probability.
    #[serde(default)]
    pub conventional_prior: Option<f64>,
    pub skip_window: usize,
    pub hidden_dim: usize,
    pub input_dim: usize,
}

impl AgentConfig {
    pub fn new(hidden_dim: usize, input_dim: usize, skip_window: usize) -> Self {
        AgentConfig {
            embed_dim: 256,
            layers: 3,
            heads: 8,
            ff_dim: 1024,
            dropout: 0.1,
            conventional_prior: None,
            skip_window,
            hidden_dim,
            input_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.heads == 0 || self.ff_dim == 0 || self.layers == 0 {
            return Err(Error::Config("agent dimensions must be positive".into()));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "embedding dim {} is not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if let Some(p) = self.conventional_prior {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Config(format!("conventional prior must lie in (0, 1), got {p}")));
            }
        }
        if self.hidden_dim == 0 || self.input_dim == 0 {
            return Err(Error::Config("state dimensions must be positive".into()));
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.hidden_dim + self.input_dim
    }
}

/// Policy and value networks; the two stores share no names.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentParams {
    pub config: AgentConfig,
    pub policy: ParamStore,
    pub value: ParamStore,
}

impl AgentParams {
    pub fn init(config: AgentConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut policy = ParamStore::new();
        network::init_encoder(&mut policy, POLICY_PREFIX, &config, rng)?;
        let e = config.embed_dim;
        for (head, width) in [("u", 2), ("k", config.skip_window + 1), ("q", 2)] {
            network::init_mlp(&mut policy, &format!("{POLICY_PREFIX}head_{head}."), e, width, rng)?;
        }
        if let Some(p) = config.conventional_prior {
            let odds = p / (1.0 - p);
            let k = config.skip_window as f64;
            for (head, idx, logit) in [("u", 1, odds.ln()), ("k", 0, (odds * k).ln()), ("q", 1, odds.ln())] {
                let b = policy.value_mut(&format!("{POLICY_PREFIX}head_{head}.b2")).expect("head bias initialised above");
                b[idx] = logit;
            }
        }
        let mut value = ParamStore::new();
        network::init_encoder(&mut value, VALUE_PREFIX, &config, rng)?;
        network::init_mlp(&mut value, &format!("{VALUE_PREFIX}head_v."), e, 1, rng)?;
        Ok(AgentParams { config, policy, value })
    }

    /// Rebuilds from stored tensors, checking names and shapes against a
    /// freshly initialised template.
    pub fn from_stores(config: AgentConfig, policy: ParamStore, value: ParamStore) -> Result<Self> {
        let template = AgentParams::init(config.clone(), &mut Rng::seeded(0))?;
        for (t, s) in [(&template.policy, &policy), (&template.value, &value)] {
            if t.len() != s.len() {
                return Err(Error::shape(format!("expected {} agent tensors, got {}", t.len(), s.len())));
            }
            for (name, tv) in t.iter() {
                match s.get(name) {
                    Some(v) if v.shape() == tv.shape() => {}
                    _ => return Err(Error::shape(format!("agent parameter `{name}` missing or misshapen"))),
                }
            }
        }
        Ok(AgentParams { config, policy, value })
    }

    fn check_states(&self, states: &Tensor) -> Result<()> {
        if states.cols() != self.config.state_dim() {
            return Err(Error::shape(format!(
                "state width {} but the agent expects {}",
                states.cols(),
                self.config.state_dim()
            )));
        }
        Ok(())
    }

    /// Policy encoder output for one state, dropout off.
    pub fn embed_state(&self, s: &MdpState) -> Result<Vec<f64>> {
        let states = Tensor::row_vector(s.0.clone())?;
        self.check_states(&states)?;
        let mut g = Graph::new(&self.policy);
        let e = encode_states(&mut g, &self.config, POLICY_PREFIX, &states, None)?;
        g.check()?;
        Ok(g.value(e).to_vec())
    }

    /// Action distributions for every row of `states`, dropout off.
    pub fn distributions(&self, states: &Tensor) -> Result<Vec<ActionDistribution>> {
        self.check_states(states)?;
        let mut g = Graph::new(&self.policy);
        let out = policy_graph(&mut g, &self.config, states, None)?;
        g.check()?;
        let (lu, lk, lq) = (g.tensor(out.log_u), g.tensor(out.log_k), g.tensor(out.log_q));
        Ok((0..states.rows())
            .map(|r| ActionDistribution::from_log_probs(lu.row(r).to_vec(), lk.row(r).to_vec(), lq.row(r).to_vec()))
            .collect())
    }

    pub fn policy_forward(&self, s: &MdpState) -> Result<ActionDistribution> {
        let states = Tensor::row_vector(s.0.clone())?;
        Ok(self.distributions(&states)?.remove(0))
    }

    /// State values for every row of `states`, dropout off.
    pub fn values(&self, states: &Tensor) -> Result<Vec<f64>> {
        self.check_states(states)?;
        let mut g = Graph::new(&self.value);
        let v = value_graph(&mut g, &self.config, states, None)?;
        g.check()?;
        Ok(g.value(v).to_vec())
    }

    pub fn value_forward(&self, s: &MdpState) -> Result<f64> {
        Ok(self.values(&Tensor::row_vector(s.0.clone())?)?[0])
    }
}

/// Independent categorical distributions of the three action components.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionDistribution {
    pub p_u: Vec<f64>,
    pub p_k: Vec<f64>,
    pub p_q: Vec<f64>,
    log_u: Vec<f64>,
    log_k: Vec<f64>,
    log_q: Vec<f64>,
}

impl ActionDistribution {
    pub fn from_log_probs(log_u: Vec<f64>, log_k: Vec<f64>, log_q: Vec<f64>) -> Self {
        let exp = |v: &[f64]| v.iter().map(|x| x.exp()).collect::<Vec<_>>();
        ActionDistribution {
            p_u: exp(&log_u),
            p_k: exp(&log_k),
            p_q: exp(&log_q),
            log_u,
            log_k,
            log_q,
        }
    }

    pub fn from_probs(p_u: Vec<f64>, p_k: Vec<f64>, p_q: Vec<f64>) -> Result<Self> {
        for p in [&p_u, &p_k, &p_q] {
            let sum: f64 = p.iter().sum();
            if p.iter().any(|x| !(*x >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Distribution(format!("not a probability simplex: {p:?}")));
            }
        }
        let ln = |v: &[f64]| v.iter().map(|x| x.ln()).collect::<Vec<_>>();
        Ok(ActionDistribution {
            log_u: ln(&p_u),
            log_k: ln(&p_k),
            log_q: ln(&p_q),
            p_u,
            p_k,
            p_q,
        })
    }

    pub fn skip_window(&self) -> usize {
        self.p_k.len() - 1
    }

    /// `log p_u(u) + log p_k(k) + log p_q(q)`.
    pub fn log_prob(&self, a: &Action) -> f64 {
        self.log_u[a.u as usize] + self.log_k[a.k] + self.log_q[a.q as usize]
    }

    /// Sum of the three head entropies.
    pub fn entropy(&self) -> f64 {
        let h = |p: &[f64], l: &[f64]| -p.iter().zip(l).map(|(p, l)| if *p > 0.0 { p * l } else { 0.0 }).sum::<f64>();
        h(&self.p_u, &self.log_u) + h(&self.p_k, &self.log_k) + h(&self.p_q, &self.log_q)
    }
}

/// Draws each component independently; returns the joint log-probability.
pub fn sample_action(dist: &ActionDistribution, rng: &mut Rng) -> Result<(Action, f64)> {
    let u = rng.categorical(&dist.p_u)? == 1;
    let k = rng.categorical(&dist.p_k)?;
    let q = rng.categorical(&dist.p_q)? == 1;
    let a = Action { u, k, q };
    Ok((a, dist.log_prob(&a)))
}

/// Per-head argmax, lowest index on ties.
pub fn greedy_action(dist: &ActionDistribution) -> Action {
    Action {
        u: argmax(&dist.p_u) == 1,
        k: argmax(&dist.p_k),
        q: argmax(&dist.p_q) == 1,
    }
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}
