use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};

/// Mean squared error over the horizon for one step.
pub fn step_loss(y_hat: &[f64], y: &[f64]) -> f64 {
    let n = y.len().max(1) as f64;
    y_hat.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n
}

/// Per-step weights `q_t / ||q||_1`. An all-zero mask falls back to
/// supervising only the last step; the second value reports that fallback.
pub fn masked_loss_weights(q: &[bool]) -> (Vec<f64>, bool) {
    let n = q.iter().filter(|b| **b).count();
    if n == 0 {
        let mut w = vec![0.0; q.len()];
        if let Some(last) = w.last_mut() {
            *last = 1.0;
        }
        return (w, true);
    }
    let inv = 1.0 / n as f64;
    (q.iter().map(|b| if *b { inv } else { 0.0 }).collect(), false)
}

/// Masked sequence loss for one example; `preds` and `targets` are `[T, H]`.
pub fn masked_training_loss(preds: &Tensor, targets: &Tensor, q: &[bool]) -> Result<f64> {
    if preds.shape() != targets.shape() || preds.rows() != q.len() {
        return Err(Error::shape(format!(
            "masked loss: predictions {:?}, targets {:?}, mask {}",
            preds.shape(),
            targets.shape(),
            q.len()
        )));
    }
    let (w, degenerate) = masked_loss_weights(q);
    if degenerate {
        log::debug!("all-zero supervision mask, falling back to the last step");
    }
    Ok((0..q.len()).map(|t| w[t] * step_loss(preds.row(t), targets.row(t))).sum())
}

/// Batch mean of the masked sequence loss on the tape.
///
/// `y_hats[t]` and `targets[t]` are `[B, H]`; `masks[b][t]` is the flag of
/// example `b` at step `t + 1`. Returns the loss node and how many examples
/// hit the all-zero fallback.
pub fn masked_training_loss_graph(
    g: &mut Graph<'_>,
    y_hats: &[Var],
    targets: &[Tensor],
    masks: &[Vec<bool>],
) -> Result<(Var, usize)> {
    let steps = y_hats.len();
    if steps == 0 || targets.len() != steps {
        return Err(Error::shape(format!("masked loss over {steps} predictions and {} targets", targets.len())));
    }
    let batch = g.shape(y_hats[0]).0;
    if masks.len() != batch || masks.iter().any(|m| m.len() != steps) {
        return Err(Error::shape("mask dimensions do not match the batch".to_string()));
    }
    let mut per_step = Vec::with_capacity(steps);
    for (yh, y) in y_hats.iter().zip(targets) {
        let yc = g.constant(y);
        let d = g.sub(*yh, yc);
        let sq = g.square(d);
        per_step.push(g.mean_cols(sq));
    }
    let losses = g.concat_cols(&per_step);
    let mut weights = Vec::with_capacity(batch * steps);
    let mut degenerate = 0;
    for m in masks {
        let (w, fell_back) = masked_loss_weights(m);
        degenerate += fell_back as usize;
        weights.extend(w);
    }
    if degenerate > 0 {
        log::debug!("{degenerate} sequence(s) with an all-zero supervision mask");
    }
    let wv = g.constant_matrix(batch, steps, weights);
    let weighted = g.mul(losses, wv);
    let total = g.sum_all(weighted);
    Ok((g.scale(total, 1.0 / batch as f64), degenerate))
}
