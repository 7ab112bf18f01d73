use crate::env::{cell_forward, Action, EnvParams, HiddenHistory, MdpState};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor};

/// `concat(h_{t-1}, x_t)`.
pub fn make_state(h_prev: &[f64], x_t: &[f64]) -> MdpState {
    let mut s = Vec::with_capacity(h_prev.len() + x_t.len());
    s.extend_from_slice(h_prev);
    s.extend_from_slice(x_t);
    MdpState(s)
}

/// `q * (alpha / (alpha + ||y_hat - y||_1) - threshold)`.
pub fn reward(y_hat: &[f64], y: &[f64], q: bool, alpha: f64, threshold: f64) -> f64 {
    if !q {
        return 0.0;
    }
    let l1: f64 = y_hat.iter().zip(y).map(|(a, b)| (a - b).abs()).sum();
    alpha / (alpha + l1) - threshold
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub h: Vec<f64>,
    pub y_hat: Vec<f64>,
    pub reward: f64,
    /// `concat(h_t, x_{t+1})`; the input half is zero after the last step.
    pub next_state: MdpState,
}

/// Applies `action` at the current step of `history` and advances it.
pub fn env_step(
    params: &EnvParams,
    history: &mut HiddenHistory,
    x_t: &[f64],
    action: Action,
    y_t: &[f64],
    x_next: Option<&[f64]>,
) -> Result<StepOutcome> {
    let cfg = &params.config;
    action.validate(cfg.skip_window)?;
    if x_t.len() != cfg.input_dim || y_t.len() != cfg.horizon {
        return Err(Error::shape(format!(
            "step expects input {} and target {}, got {} and {}",
            cfg.input_dim,
            cfg.horizon,
            x_t.len(),
            y_t.len()
        )));
    }
    let x_gated: Vec<f64> = if action.u { x_t.to_vec() } else { vec![0.0; x_t.len()] };
    let skip = if action.k > 0 { Some(history.candidate(action.k)?) } else { None };
    let (h, c) = cell_forward(params, &x_gated, history.h_prev(), history.memory(), skip.as_deref())?;

    let mut g = Graph::new(&params.store);
    let hv = g.constant(&Tensor::row_vector(h.clone())?);
    let yv = crate::env::output_layer(&mut g, hv)?;
    g.check()?;
    let y_hat = g.value(yv).to_vec();

    let r = reward(&y_hat, y_t, action.q, cfg.alpha, cfg.threshold);
    let next_x = match x_next {
        Some(x) => x.to_vec(),
        None => vec![0.0; cfg.input_dim],
    };
    let next_state = make_state(&h, &next_x);
    history.push(h.clone(), c);
    Ok(StepOutcome { h, y_hat, reward: r, next_state })
}
