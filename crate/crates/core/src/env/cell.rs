use crate::env::{CellKind, EnvParams, B_OUT, BIAS, W_HF, W_HH, W_HN, W_IH, W_OUT, W_SKIP};
use crate::error::Result;
use crate::numerics::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub struct CellOut {
    pub h: Var,
    /// LSTM memory cell; `None` for the other kinds.
    pub c: Option<Var>,
}

/// One recurrent update on a batch.
///
/// `x` is the already gated input `[B, D_in]`. When `h_skip` is present the
/// cell sees `h_prev + h_skip W_skip` in place of `h_prev`; with `None` it is
/// exactly the plain cell.
pub fn cell_step(
    g: &mut Graph<'_>,
    kind: CellKind,
    x: Var,
    h_prev: Var,
    c_prev: Option<Var>,
    h_skip: Option<Var>,
) -> Result<CellOut> {
    let dh = g.shape(h_prev).1;
    let h_drive = match h_skip {
        Some(s) => {
            let w = g.param(W_SKIP)?;
            let proj = g.matmul(s, w);
            g.add(h_prev, proj)
        }
        None => h_prev,
    };
    let w_ih = g.param(W_IH)?;
    let b = g.param(BIAS)?;
    let xi = g.matmul(x, w_ih);
    let gi = g.add_row(xi, b);

    let out = match kind {
        CellKind::Rnn => {
            let w_hh = g.param(W_HH)?;
            let gh = g.matmul(h_drive, w_hh);
            let pre = g.add(gi, gh);
            CellOut { h: g.tanh(pre), c: None }
        }
        CellKind::Gru => {
            let w_hh = g.param(W_HH)?;
            let gh = g.matmul(h_drive, w_hh);
            let (ir, iz, inn) = (g.slice_cols(gi, 0, dh), g.slice_cols(gi, dh, 2 * dh), g.slice_cols(gi, 2 * dh, 3 * dh));
            let (hr, hz, hn) = (g.slice_cols(gh, 0, dh), g.slice_cols(gh, dh, 2 * dh), g.slice_cols(gh, 2 * dh, 3 * dh));
            let r_pre = g.add(ir, hr);
            let r = g.sigmoid(r_pre);
            let z_pre = g.add(iz, hz);
            let z = g.sigmoid(z_pre);
            let rh = g.mul(r, hn);
            let n_pre = g.add(inn, rh);
            let n = g.tanh(n_pre);
            CellOut { h: blend(g, z, h_drive, n), c: None }
        }
        CellKind::Mgu => {
            let w_hf = g.param(W_HF)?;
            let w_hn = g.param(W_HN)?;
            let (i_f, i_n) = (g.slice_cols(gi, 0, dh), g.slice_cols(gi, dh, 2 * dh));
            let hf = g.matmul(h_drive, w_hf);
            let f_pre = g.add(i_f, hf);
            let f = g.sigmoid(f_pre);
            let fh = g.mul(f, h_drive);
            let hn = g.matmul(fh, w_hn);
            let n_pre = g.add(i_n, hn);
            let n = g.tanh(n_pre);
            CellOut { h: blend(g, f, h_drive, n), c: None }
        }
        CellKind::Lstm => {
            let w_hh = g.param(W_HH)?;
            let gh = g.matmul(h_drive, w_hh);
            let pre = g.add(gi, gh);
            let i_pre = g.slice_cols(pre, 0, dh);
            let f_pre = g.slice_cols(pre, dh, 2 * dh);
            let g_pre = g.slice_cols(pre, 2 * dh, 3 * dh);
            let o_pre = g.slice_cols(pre, 3 * dh, 4 * dh);
            let (i, f, cand, o) = (g.sigmoid(i_pre), g.sigmoid(f_pre), g.tanh(g_pre), g.sigmoid(o_pre));
            let c_prev = match c_prev {
                Some(c) => c,
                None => g.constant(&Tensor::zeros(&[g.shape(h_prev).0, dh])),
            };
            let keep = g.mul(f, c_prev);
            let write = g.mul(i, cand);
            let c = g.add(keep, write);
            let tc = g.tanh(c);
            CellOut { h: g.mul(o, tc), c: Some(c) }
        }
    };
    Ok(out)
}

/// `(1 - z) * a + z * b`.
fn blend(g: &mut Graph<'_>, z: Var, a: Var, b: Var) -> Var {
    let nz = g.one_minus(z);
    let left = g.mul(nz, a);
    let right = g.mul(z, b);
    g.add(left, right)
}

/// `h W_out + b_out`, shape `[B, H]`.
pub fn output_layer(g: &mut Graph<'_>, h: Var) -> Result<Var> {
    let w = g.param(W_OUT)?;
    let b = g.param(B_OUT)?;
    let y = g.matmul(h, w);
    Ok(g.add_row(y, b))
}

/// Single-example cell update without gradient tracking.
pub fn cell_forward(
    params: &EnvParams,
    x_gated: &[f64],
    h_prev: &[f64],
    c_prev: Option<&[f64]>,
    h_skip: Option<&[f64]>,
) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    let mut g = Graph::new(&params.store);
    let x = g.constant(&Tensor::row_vector(x_gated.to_vec())?);
    let h = g.constant(&Tensor::row_vector(h_prev.to_vec())?);
    let c = match c_prev {
        Some(c) => Some(g.constant(&Tensor::row_vector(c.to_vec())?)),
        None => None,
    };
    let s = match h_skip {
        Some(s) => Some(g.constant(&Tensor::row_vector(s.to_vec())?)),
        None => None,
    };
    let out = cell_step(&mut g, params.config.cell, x, h, c, s)?;
    g.check()?;
    Ok((g.value(out.h).to_vec(), out.c.map(|c| g.value(c).to_vec())))
}
