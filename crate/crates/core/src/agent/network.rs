use crate::agent::AgentConfig;
use crate::env::Action;
use crate::error::Result;
use crate::numerics::{Graph, ParamStore, Rng, Tensor, Var};

pub(super) fn init_encoder(store: &mut ParamStore, prefix: &str, cfg: &AgentConfig, rng: &mut Rng) -> Result<()> {
    let e = cfg.embed_dim;
    let p = |s: &str| format!("{prefix}enc.{s}");
    store.insert_uniform(&p("proj_h.w"), cfg.hidden_dim, e, rng)?;
    store.insert_zeros(&p("proj_h.b"), 1, e)?;
    store.insert_uniform(&p("proj_x.w"), cfg.input_dim, e, rng)?;
    store.insert_zeros(&p("proj_x.b"), 1, e)?;
    for t in ["type_h", "type_x"] {
        let data = (0..e).map(|_| 0.1 * rng.normal()).collect();
        store.insert(p(t), Tensor::matrix(1, e, data)?)?;
    }
    for l in 0..cfg.layers {
        let lp = |s: &str| format!("{prefix}enc.l{l}.{s}");
        for ln in ["ln1", "ln2"] {
            store.insert_filled(&lp(&format!("{ln}.g")), 1, e, 1.0)?;
            store.insert_zeros(&lp(&format!("{ln}.b")), 1, e)?;
        }
        for w in ["wq", "wk", "wv", "wo"] {
            store.insert_uniform(&lp(&format!("{w}.w")), e, e, rng)?;
            store.insert_zeros(&lp(&format!("{w}.b")), 1, e)?;
        }
        store.insert_uniform(&lp("ff1.w"), e, cfg.ff_dim, rng)?;
        store.insert_zeros(&lp("ff1.b"), 1, cfg.ff_dim)?;
        store.insert_uniform(&lp("ff2.w"), cfg.ff_dim, e, rng)?;
        store.insert_zeros(&lp("ff2.b"), 1, e)?;
    }
    store.insert_filled(&p("ln_f.g"), 1, e, 1.0)?;
    store.insert_zeros(&p("ln_f.b"), 1, e)?;
    Ok(())
}

pub(super) fn init_mlp(store: &mut ParamStore, prefix: &str, width: usize, out: usize, rng: &mut Rng) -> Result<()> {
    store.insert_uniform(&format!("{prefix}w1"), width, width, rng)?;
    store.insert_zeros(&format!("{prefix}b1"), 1, width)?;
    store.insert_uniform(&format!("{prefix}w2"), width, out, rng)?;
    store.insert_zeros(&format!("{prefix}b2"), 1, out)?;
    Ok(())
}

fn linear(g: &mut Graph<'_>, name: &str, x: Var) -> Result<Var> {
    let w = g.param(&format!("{name}.w"))?;
    let b = g.param(&format!("{name}.b"))?;
    let y = g.matmul(x, w);
    Ok(g.add_row(y, b))
}

fn norm(g: &mut Graph<'_>, name: &str, x: Var) -> Result<Var> {
    let gain = g.param(&format!("{name}.g"))?;
    let bias = g.param(&format!("{name}.b"))?;
    let n = g.layer_norm(x);
    let scaled = g.mul_row(n, gain);
    Ok(g.add_row(scaled, bias))
}

fn dropout(g: &mut Graph<'_>, x: Var, rate: f64, rng: &mut Option<&mut Rng>) -> Var {
    match rng {
        Some(rng) if rate > 0.0 => {
            let (r, c) = g.shape(x);
            let keep = 1.0 / (1.0 - rate);
            let mask = (0..r * c).map(|_| if rng.bernoulli(rate) { 0.0 } else { keep }).collect();
            let m = g.constant_matrix(r, c, mask);
            g.mul(x, m)
        }
        _ => x,
    }
}

/// Runs the encoder layers over the token pair `(first[b], second[b])` and
/// mean-pools the two positions, giving `[B, D_e]`.
pub fn encode_tokens(
    g: &mut Graph<'_>,
    cfg: &AgentConfig,
    prefix: &str,
    first: Var,
    second: Var,
    mut rng: Option<&mut Rng>,
) -> Result<Var> {
    let mut z = g.interleave_rows(&[first, second]);
    for l in 0..cfg.layers {
        let lp = |s: &str| format!("{prefix}enc.l{l}.{s}");
        let n1 = norm(g, &lp("ln1"), z)?;
        let q = linear(g, &lp("wq"), n1)?;
        let k = linear(g, &lp("wk"), n1)?;
        let v = linear(g, &lp("wv"), n1)?;
        let att = g.attention(q, k, v, 2, cfg.heads);
        let o = linear(g, &lp("wo"), att)?;
        let o = dropout(g, o, cfg.dropout, &mut rng);
        z = g.add(z, o);
        let n2 = norm(g, &lp("ln2"), z)?;
        let f = linear(g, &lp("ff1"), n2)?;
        let f = g.gelu(f);
        let f = linear(g, &lp("ff2"), f)?;
        let f = dropout(g, f, cfg.dropout, &mut rng);
        z = g.add(z, f);
    }
    let z = norm(g, &format!("{prefix}enc.ln_f"), z)?;
    Ok(g.group_mean_rows(z, 2))
}

/// Tokenises `states` (`[B, D_h + D_in]`) and encodes them.
pub fn encode_states(
    g: &mut Graph<'_>,
    cfg: &AgentConfig,
    prefix: &str,
    states: &Tensor,
    rng: Option<&mut Rng>,
) -> Result<Var> {
    let s = g.constant(states);
    let dh = cfg.hidden_dim;
    let h_part = g.slice_cols(s, 0, dh);
    let x_part = g.slice_cols(s, dh, dh + cfg.input_dim);
    let th = linear(g, &format!("{prefix}enc.proj_h"), h_part)?;
    let type_h = g.param(&format!("{prefix}enc.type_h"))?;
    let th = g.add_row(th, type_h);
    let tx = linear(g, &format!("{prefix}enc.proj_x"), x_part)?;
    let type_x = g.param(&format!("{prefix}enc.type_x"))?;
    let tx = g.add_row(tx, type_x);
    encode_tokens(g, cfg, prefix, th, tx, rng)
}

fn mlp(g: &mut Graph<'_>, prefix: &str, e: Var) -> Result<Var> {
    let w1 = g.param(&format!("{prefix}w1"))?;
    let b1 = g.param(&format!("{prefix}b1"))?;
    let w2 = g.param(&format!("{prefix}w2"))?;
    let b2 = g.param(&format!("{prefix}b2"))?;
    let h = g.matmul(e, w1);
    let h = g.add_row(h, b1);
    let h = g.gelu(h);
    let y = g.matmul(h, w2);
    Ok(g.add_row(y, b2))
}

/// Per-head log-probabilities, each `[B, n_choices]`.
#[derive(Clone, Copy, Debug)]
pub struct PolicyOutput {
    pub log_u: Var,
    pub log_k: Var,
    pub log_q: Var,
}

impl PolicyOutput {
    /// Joint log-probability of `actions`, `[B, 1]`.
    pub fn log_prob(&self, g: &mut Graph<'_>, actions: &[Action]) -> Var {
        let u: Vec<usize> = actions.iter().map(|a| a.u as usize).collect();
        let k: Vec<usize> = actions.iter().map(|a| a.k).collect();
        let q: Vec<usize> = actions.iter().map(|a| a.q as usize).collect();
        let lu = g.pick_cols(self.log_u, &u);
        let lk = g.pick_cols(self.log_k, &k);
        let lq = g.pick_cols(self.log_q, &q);
        let s = g.add(lu, lk);
        g.add(s, lq)
    }

    /// Summed head entropies, `[B, 1]`.
    pub fn entropy(&self, g: &mut Graph<'_>) -> Var {
        let mut total = None;
        for lp in [self.log_u, self.log_k, self.log_q] {
            let n = g.shape(lp).1 as f64;
            let p = g.exp(lp);
            let pl = g.mul(p, lp);
            let m = g.mean_cols(pl);
            let h = g.scale(m, -n);
            total = Some(match total {
                Some(t) => g.add(t, h),
                None => h,
            });
        }
        total.expect("three heads")
    }
}

pub fn policy_graph(g: &mut Graph<'_>, cfg: &AgentConfig, states: &Tensor, rng: Option<&mut Rng>) -> Result<PolicyOutput> {
    let prefix = super::POLICY_PREFIX;
    let e = encode_states(g, cfg, prefix, states, rng)?;
    let mut heads = [None; 3];
    for (slot, name) in heads.iter_mut().zip(["u", "k", "q"]) {
        let logits = mlp(g, &format!("{prefix}head_{name}."), e)?;
        *slot = Some(g.log_softmax(logits));
    }
    let [u, k, q] = heads.map(|h| h.expect("filled above"));
    Ok(PolicyOutput { log_u: u, log_k: k, log_q: q })
}

/// State values, `[B, 1]`.
pub fn value_graph(g: &mut Graph<'_>, cfg: &AgentConfig, states: &Tensor, rng: Option<&mut Rng>) -> Result<Var> {
    let prefix = super::VALUE_PREFIX;
    let e = encode_states(g, cfg, prefix, states, rng)?;
    mlp(g, &format!("{prefix}head_v."), e)
}
