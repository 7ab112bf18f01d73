use crate::data::WindowedExample;
use crate::env::{cell_step, output_layer, skip_source, Action, EnvConfig};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};

/// Step-major view of a batch of windows.
#[derive(Clone, Debug)]
pub struct BatchInputs {
    /// `xs[t]` is `[B, D_in]` for step `t + 1`.
    pub xs: Vec<Tensor>,
    /// `ys[t]` is `[B, H]` for step `t + 1`.
    pub ys: Vec<Tensor>,
}

impl BatchInputs {
    pub fn new(examples: &[&WindowedExample]) -> Result<Self> {
        let first = examples.first().ok_or_else(|| Error::shape("empty batch".to_string()))?;
        let (steps, d_in, h) = (first.len(), first.x.cols(), first.horizon());
        let mut xs = Vec::with_capacity(steps);
        let mut ys = Vec::with_capacity(steps);
        for t in 0..steps {
            let mut xd = Vec::with_capacity(examples.len() * d_in);
            let mut yd = Vec::with_capacity(examples.len() * h);
            for ex in examples {
                if ex.len() != steps || ex.x.cols() != d_in || ex.horizon() != h {
                    return Err(Error::shape("windows in a batch must share their shape".to_string()));
                }
                xd.extend_from_slice(ex.x.row(t));
                yd.extend_from_slice(ex.y_all.row(t));
            }
            xs.push(Tensor::matrix(examples.len(), d_in, xd)?);
            ys.push(Tensor::matrix(examples.len(), h, yd)?);
        }
        Ok(BatchInputs { xs, ys })
    }

    pub fn batch_size(&self) -> usize {
        self.xs.first().map_or(0, |x| x.rows())
    }

    pub fn steps(&self) -> usize {
        self.xs.len()
    }
}

#[derive(Clone, Debug)]
pub struct RolloutStep {
    /// `[B, D_h + D_in]` states the actions were chosen from.
    pub states: Tensor,
    pub actions: Vec<Action>,
    pub h: Var,
    pub y_hat: Var,
}

/// Unrolls the forecaster over a batch, asking `choose(t, states)` for the
/// per-example actions at each 1-based step `t`.
pub fn rollout<F>(g: &mut Graph<'_>, cfg: &EnvConfig, inputs: &BatchInputs, mut choose: F) -> Result<Vec<RolloutStep>>
where
    F: FnMut(usize, &Tensor) -> Result<Vec<Action>>,
{
    let batch = inputs.batch_size();
    let (dh, di) = (cfg.hidden_dim, cfg.input_dim);
    let h0 = g.constant(&Tensor::zeros(&[batch, dh]));
    let mut history = vec![h0];
    let mut c = None;
    let mut out = Vec::with_capacity(inputs.steps());
    for (idx, x) in inputs.xs.iter().enumerate() {
        let t = idx + 1;
        if x.cols() != di {
            return Err(Error::shape(format!("input width {} but the forecaster expects {di}", x.cols())));
        }
        let h_prev = *history.last().unwrap();
        let hv = g.value(h_prev);
        let mut sd = Vec::with_capacity(batch * (dh + di));
        for b in 0..batch {
            sd.extend_from_slice(&hv[b * dh..(b + 1) * dh]);
            sd.extend_from_slice(x.row(b));
        }
        let states = Tensor::matrix(batch, dh + di, sd)?;
        let actions = choose(t, &states)?;
        if actions.len() != batch {
            return Err(Error::Action(format!("{} actions for a batch of {batch}", actions.len())));
        }
        for a in &actions {
            a.validate(cfg.skip_window)?;
        }

        let xv = if actions.iter().all(|a| a.u) {
            g.constant(x)
        } else {
            let mut xd = x.data().to_vec();
            for (b, a) in actions.iter().enumerate() {
                if !a.u {
                    xd[b * di..(b + 1) * di].iter_mut().for_each(|v| *v = 0.0);
                }
            }
            g.constant_matrix(batch, di, xd)
        };
        let sel: Vec<Option<usize>> = actions.iter().map(|a| skip_source(t, a.k)).collect();
        let any_skip = actions.iter().any(|a| a.k > 0);
        let h_skip = any_skip.then(|| g.gather_rows(&history, &sel));
        let cell = cell_step(g, cfg.cell, xv, h_prev, c, h_skip)?;
        c = cell.c;
        let y_hat = output_layer(g, cell.h)?;
        history.push(cell.h);
        out.push(RolloutStep {
            states,
            actions,
            h: cell.h,
            y_hat,
        });
    }
    Ok(out)
}
