//! Reverse-mode differentiation over a per-forward-pass tape.
//!
//! A [`Graph`] records every operation eagerly (values are computed as soon
//! as the node is pushed), so the same graph doubles as an inference engine.
//! All operations work on 2-D row-major matrices; vectors are `[1, n]` or
//! `[n, 1]` and scalars `[1, 1]`. Calling [`Graph::backward`] replays the tape
//! in reverse and returns gradients for every parameter that was read.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::numerics::params::ParamStore;
use crate::numerics::tensor::Tensor;

const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    MulRow(Var, Var),
    Affine(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Gelu(Var),
    Exp(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Minimum(Var, Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    InterleaveRows(Vec<Var>),
    GroupMeanRows(Var, usize),
    LayerNorm(Var),
    LogSoftmax(Var),
    Softmax(Var),
    PickCols(Var, Vec<usize>),
    GatherRows(Vec<Var>, Vec<Option<usize>>),
    SumAll(Var),
    MeanAll(Var),
    MeanCols(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        seq: usize,
        heads: usize,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Constant => "constant",
            Op::Param => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::MulCol(..) => "mul_col",
            Op::MulRow(..) => "mul_row",
            Op::Affine(..) => "affine",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Gelu(_) => "gelu",
            Op::Exp(_) => "exp",
            Op::Square(_) => "square",
            Op::Clamp(..) => "clamp",
            Op::Minimum(..) => "minimum",
            Op::SliceCols(..) => "slice_cols",
            Op::ConcatCols(_) => "concat_cols",
            Op::InterleaveRows(_) => "interleave_rows",
            Op::GroupMeanRows(..) => "group_mean_rows",
            Op::LayerNorm(_) => "layer_norm",
            Op::LogSoftmax(_) => "log_softmax",
            Op::Softmax(_) => "softmax",
            Op::PickCols(..) => "pick_cols",
            Op::GatherRows(..) => "gather_rows",
            Op::SumAll(_) => "sum_all",
            Op::MeanAll(_) => "mean_all",
            Op::MeanCols(_) => "mean_cols",
            Op::Attention { .. } => "attention",
        }
    }
}

struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
    // Saved forward quantities: layer-norm inverse std, attention probabilities.
    aux: Vec<f64>,
}

/// Gradients keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    grads: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Tensor) {
        self.grads.insert(name.into(), grad);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.grads.iter()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Largest absolute gradient entry across all parameters.
    pub fn max_abs(&self) -> f64 {
        self.grads
            .values()
            .flat_map(|t| t.data().iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
    scope: &'static str,
    poisoned: Option<String>,
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Graph {
            store,
            nodes: Vec::with_capacity(256),
            params: HashMap::new(),
            scope: "",
            poisoned: None,
        }
    }

    /// Sets a label prefix used when reporting non-finite nodes.
    pub fn set_scope(&mut self, scope: &'static str) {
        self.scope = scope;
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::from_parts_unchecked(vec![n.rows, n.cols], n.value.clone())
    }

    /// Errors if any recorded node produced a non-finite value.
    pub fn check(&self) -> Result<()> {
        match &self.poisoned {
            Some(node) => Err(Error::Numerical { node: node.clone() }),
            None => Ok(()),
        }
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op, aux: Vec<f64>) -> Var {
        debug_assert_eq!(rows * cols, value.len(), "{}", op.name());
        let requires_grad = match &op {
            Op::Constant => false,
            Op::Param => true,
            _ => self.inputs(&op).iter().any(|v| self.nodes[v.0].requires_grad),
        };
        let id = self.nodes.len();
        if self.poisoned.is_none() && value.iter().any(|x| !x.is_finite()) {
            let label = if self.scope.is_empty() {
                format!("{}#{}", op.name(), id)
            } else {
                format!("{}/{}#{}", self.scope, op.name(), id)
            };
            self.poisoned = Some(label);
        }
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
            requires_grad,
            aux,
        });
        Var(id)
    }

    fn inputs(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Constant | Op::Param => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::MulCol(a, b)
            | Op::MulRow(a, b)
            | Op::Minimum(a, b) => vec![*a, *b],
            Op::Affine(a, _)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Gelu(a)
            | Op::Exp(a)
            | Op::Square(a)
            | Op::Clamp(a, ..)
            | Op::SliceCols(a, _)
            | Op::GroupMeanRows(a, _)
            | Op::LayerNorm(a)
            | Op::LogSoftmax(a)
            | Op::Softmax(a)
            | Op::PickCols(a, _)
            | Op::SumAll(a)
            | Op::MeanAll(a)
            | Op::MeanCols(a) => vec![*a],
            Op::ConcatCols(vs) | Op::InterleaveRows(vs) | Op::GatherRows(vs, _) => vs.clone(),
            Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
        }
    }

    // ---- leaves -----------------------------------------------------------

    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.rows(), t.cols(), t.data().to_vec(), Op::Constant, vec![])
    }

    pub fn constant_matrix(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Var {
        assert_eq!(rows * cols, data.len(), "constant_matrix size");
        self.push(rows, cols, data, Op::Constant, vec![])
    }

    /// Reads a named parameter; repeated reads share one node.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(v) = self.params.get(name) {
            return Ok(*v);
        }
        let t = self
            .store
            .get(name)
            .ok_or_else(|| Error::shape(format!("unknown parameter `{name}`")))?;
        let v = self.push(
            t.rows(),
            t.cols(),
            t.data().to_vec(),
            Op::Param,
            vec![],
        );
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    // ---- linear algebra ---------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dims {m}x{k} * {k2}x{n}");
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.nodes[a.0].value, (k, 1), &self.nodes[b.0].value, (n, 1), &mut out);
        self.push(m, n, out, Op::MatMul(a, b), vec![])
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!((r, c), self.shape(b), "{} shape mismatch", op.name());
        let va = &self.nodes[a.0].value;
        let vb = &self.nodes[b.0].value;
        let out = va.iter().zip(vb).map(|(x, y)| f(*x, *y)).collect();
        self.push(r, c, out, op, vec![])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Minimum(a, b), f64::min)
    }

    /// `a[m, n] + row[1, n]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(self.shape(row), (1, n), "add_row shape");
        let va = &self.nodes[a.0].value;
        let vr = &self.nodes[row.0].value;
        let out = va.iter().enumerate().map(|(i, x)| x + vr[i % n]).collect();
        self.push(m, n, out, Op::AddRow(a, row), vec![])
    }

    /// `a[m, n] * row[1, n]` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(self.shape(row), (1, n), "mul_row shape");
        let va = &self.nodes[a.0].value;
        let vr = &self.nodes[row.0].value;
        let out = va.iter().enumerate().map(|(i, x)| x * vr[i % n]).collect();
        self.push(m, n, out, Op::MulRow(a, row), vec![])
    }

    /// `a[m, n] * col[m, 1]` broadcast over columns.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(self.shape(col), (m, 1), "mul_col shape");
        let va = &self.nodes[a.0].value;
        let vc = &self.nodes[col.0].value;
        let out = va.iter().enumerate().map(|(i, x)| x * vc[i / n]).collect();
        self.push(m, n, out, Op::MulCol(a, col), vec![])
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let (r, c) = self.shape(a);
        let out = self.nodes[a.0].value.iter().map(|x| scale * x + shift).collect();
        self.push(r, c, out, Op::Affine(a, scale), vec![])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let (r, c) = self.shape(a);
        let out = self.nodes[a.0].value.iter().map(|x| s * x).collect();
        self.push(r, c, out, Op::Affine(a, s), vec![])
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = self.nodes[a.0].value.iter().map(|x| 1.0 - x).collect();
        self.push(r, c, out, Op::Affine(a, -1.0), vec![])
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let (r, c) = self.shape(a);
        let out = self.nodes[a.0].value.iter().map(|x| f(*x)).collect();
        self.push(r, c, out, op, vec![])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        self.map(a, Op::Gelu(a), |x| {
            0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
        })
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, Op::Exp(a), f64::exp)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, Op::Square(a), |x| x * x)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.map(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    // ---- structural -------------------------------------------------------

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let (m, n) = self.shape(a);
        assert!(start <= end && end <= n, "slice_cols {start}..{end} of {n}");
        let w = end - start;
        let va = &self.nodes[a.0].value;
        let mut out = Vec::with_capacity(m * w);
        for r in 0..m {
            out.extend_from_slice(&va[r * n + start..r * n + end]);
        }
        self.push(m, w, out, Op::SliceCols(a, start), vec![])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let m = self.shape(parts[0]).0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|p| {
                let (r, c) = self.shape(*p);
                assert_eq!(r, m, "concat_cols rows");
                c
            })
            .collect();
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for r in 0..m {
            for (p, w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.nodes[p.0].value[r * w..(r + 1) * w]);
            }
        }
        self.push(m, n, out, Op::ConcatCols(parts.to_vec()), vec![])
    }

    /// Interleaves `L` matrices of shape `[B, D]` into `[B * L, D]` with row
    /// `b * L + l` taken from part `l`.
    pub fn interleave_rows(&mut self, parts: &[Var]) -> Var {
        let (b, d) = self.shape(parts[0]);
        let l = parts.len();
        let mut out = Vec::with_capacity(b * l * d);
        for r in 0..b {
            for p in parts {
                assert_eq!(self.shape(*p), (b, d), "interleave_rows shape");
                out.extend_from_slice(&self.nodes[p.0].value[r * d..(r + 1) * d]);
            }
        }
        self.push(b * l, d, out, Op::InterleaveRows(parts.to_vec()), vec![])
    }

    /// Mean over consecutive groups of `group` rows: `[B * group, D] -> [B, D]`.
    pub fn group_mean_rows(&mut self, a: Var, group: usize) -> Var {
        let (m, d) = self.shape(a);
        assert!(group > 0 && m % group == 0, "group_mean_rows");
        let b = m / group;
        let va = &self.nodes[a.0].value;
        let mut out = vec![0.0; b * d];
        for r in 0..m {
            let o = (r / group) * d;
            for j in 0..d {
                out[o + j] += va[r * d + j];
            }
        }
        let inv = 1.0 / group as f64;
        out.iter_mut().for_each(|x| *x *= inv);
        self.push(b, d, out, Op::GroupMeanRows(a, group), vec![])
    }

    /// Row `r` of the output is row `r` of `sources[sel[r]]`, or zeros.
    pub fn gather_rows(&mut self, sources: &[Var], sel: &[Option<usize>]) -> Var {
        let (m, n) = self.shape(sources[0]);
        assert_eq!(sel.len(), m, "gather_rows selection length");
        let mut out = vec![0.0; m * n];
        for (r, s) in sel.iter().enumerate() {
            if let Some(s) = s {
                let src = sources[*s];
                assert_eq!(self.shape(src), (m, n), "gather_rows source shape");
                out[r * n..(r + 1) * n].copy_from_slice(&self.nodes[src.0].value[r * n..(r + 1) * n]);
            }
        }
        self.push(m, n, out, Op::GatherRows(sources.to_vec(), sel.to_vec()), vec![])
    }

    /// `out[r] = a[r, idx[r]]`, shape `[m, 1]`.
    pub fn pick_cols(&mut self, a: Var, idx: &[usize]) -> Var {
        let (m, n) = self.shape(a);
        assert_eq!(idx.len(), m, "pick_cols index length");
        let va = &self.nodes[a.0].value;
        let out = idx
            .iter()
            .enumerate()
            .map(|(r, &c)| {
                assert!(c < n, "pick_cols index {c} out of {n}");
                va[r * n + c]
            })
            .collect();
        self.push(m, 1, out, Op::PickCols(a, idx.to_vec()), vec![])
    }

    // ---- normalisation ----------------------------------------------------

    /// Per-row standardisation (no affine part).
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let va = &self.nodes[a.0].value;
        let mut out = Vec::with_capacity(m * n);
        let mut inv_std = Vec::with_capacity(m);
        for r in 0..m {
            let row = &va[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            out.extend(row.iter().map(|x| (x - mean) * inv));
            inv_std.push(inv);
        }
        self.push(m, n, out, Op::LayerNorm(a), inv_std)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let va = &self.nodes[a.0].value;
        let mut out = Vec::with_capacity(m * n);
        for r in 0..m {
            let row = &va[r * n..(r + 1) * n];
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln() + mx;
            out.extend(row.iter().map(|x| x - lse));
        }
        self.push(m, n, out, Op::LogSoftmax(a), vec![])
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let va = &self.nodes[a.0].value;
        let mut out = Vec::with_capacity(m * n);
        for r in 0..m {
            out.extend(softmax_row(&va[r * n..(r + 1) * n]));
        }
        self.push(m, n, out, Op::Softmax(a), vec![])
    }

    // ---- reductions -------------------------------------------------------

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.iter().sum();
        self.push(1, 1, vec![s], Op::SumAll(a), vec![])
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let v = &self.nodes[a.0].value;
        let s = v.iter().sum::<f64>() / v.len() as f64;
        self.push(1, 1, vec![s], Op::MeanAll(a), vec![])
    }

    /// Row means, `[m, n] -> [m, 1]`.
    pub fn mean_cols(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let va = &self.nodes[a.0].value;
        let out = (0..m)
            .map(|r| va[r * n..(r + 1) * n].iter().sum::<f64>() / n as f64)
            .collect();
        self.push(m, 1, out, Op::MeanCols(a), vec![])
    }

    // ---- attention --------------------------------------------------------

    /// Multi-head scaled dot-product self-attention applied independently to
    /// consecutive groups of `seq` rows. `q`, `k`, `v` are `[B * seq, D]` with
    /// `D` divisible by `heads`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, seq: usize, heads: usize) -> Var {
        let (m, d) = self.shape(q);
        assert_eq!(self.shape(k), (m, d), "attention k shape");
        assert_eq!(self.shape(v), (m, d), "attention v shape");
        assert!(m % seq == 0 && d % heads == 0, "attention grouping");
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let groups = m / seq;
        let (vq, vk, vv) = (&self.nodes[q.0].value, &self.nodes[k.0].value, &self.nodes[v.0].value);
        let mut out = vec![0.0; m * d];
        let mut probs = vec![0.0; groups * heads * seq * seq];
        let mut scores = vec![0.0; seq];
        for g in 0..groups {
            for h in 0..heads {
                let off = h * dh;
                for i in 0..seq {
                    let qi = &vq[(g * seq + i) * d + off..(g * seq + i) * d + off + dh];
                    for (j, s) in scores.iter_mut().enumerate() {
                        let kj = &vk[(g * seq + j) * d + off..(g * seq + j) * d + off + dh];
                        *s = dot(qi, kj) * scale;
                    }
                    let p = softmax_row(&scores);
                    let base = ((g * heads + h) * seq + i) * seq;
                    probs[base..base + seq].copy_from_slice(&p);
                    let o = &mut out[(g * seq + i) * d + off..(g * seq + i) * d + off + dh];
                    for (j, pj) in p.iter().enumerate() {
                        let vj = &vv[(g * seq + j) * d + off..(g * seq + j) * d + off + dh];
                        for (oo, vvv) in o.iter_mut().zip(vj) {
                            *oo += pj * vvv;
                        }
                    }
                }
            }
        }
        self.push(m, d, out, Op::Attention { q, k, v, seq, heads }, probs)
    }

    // ---- backward ---------------------------------------------------------

    /// Gradients of the scalar `loss` with respect to every parameter read by
    /// this graph.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.check()?;
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(gout) = grads[id].take() else { continue };
            if let Op::Param = node.op {
                grads[id] = Some(gout);
                continue;
            }
            self.backprop_node(node, &gout, &mut grads);
        }

        let mut out = Gradients::new();
        for (name, v) in &self.params {
            if let Some(Some(g)) = grads.get(v.0) {
                let n = &self.nodes[v.0];
                let shape = self.store.get(name).map(|t| t.shape().to_vec()).unwrap_or(vec![n.rows, n.cols]);
                out.insert(name.clone(), Tensor::from_parts_unchecked(shape, g.clone()));
            }
        }
        if out.iter().any(|(_, t)| t.data().iter().any(|x| !x.is_finite())) {
            return Err(Error::Numerical {
                node: "backward".into(),
            });
        }
        Ok(out)
    }

    fn backprop_node(&self, node: &Node, gout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let n = &self.nodes;
        let needs = |v: &Var| n[v.0].requires_grad;
        match &node.op {
            Op::Constant | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = (n[a.0].rows, n[a.0].cols);
                let nn = n[b.0].cols;
                if needs(a) {
                    // dA = dC * B^T
                    let ga = slot(grads, *a, m * k);
                    gemm(m, nn, k, gout, (nn, 1), &n[b.0].value, (1, nn), ga);
                }
                if needs(b) {
                    // dB = A^T * dC
                    let gb = slot(grads, *b, k * nn);
                    gemm(k, m, nn, &n[a.0].value, (1, k), gout, (nn, 1), gb);
                }
            }
            Op::Add(a, b) => {
                if needs(a) {
                    axpy(slot(grads, *a, gout.len()), gout, 1.0);
                }
                if needs(b) {
                    axpy(slot(grads, *b, gout.len()), gout, 1.0);
                }
            }
            Op::Sub(a, b) => {
                if needs(a) {
                    axpy(slot(grads, *a, gout.len()), gout, 1.0);
                }
                if needs(b) {
                    axpy(slot(grads, *b, gout.len()), gout, -1.0);
                }
            }
            Op::Mul(a, b) => {
                if needs(a) {
                    let vb = &n[b.0].value;
                    let ga = slot(grads, *a, gout.len());
                    for i in 0..gout.len() {
                        ga[i] += gout[i] * vb[i];
                    }
                }
                if needs(b) {
                    let va = &n[a.0].value;
                    let gb = slot(grads, *b, gout.len());
                    for i in 0..gout.len() {
                        gb[i] += gout[i] * va[i];
                    }
                }
            }
            Op::Minimum(a, b) => {
                let (va, vb) = (&n[a.0].value, &n[b.0].value);
                if needs(a) {
                    let ga = slot(grads, *a, gout.len());
                    for i in 0..gout.len() {
                        if va[i] <= vb[i] {
                            ga[i] += gout[i];
                        }
                    }
                }
                if needs(b) {
                    let gb = slot(grads, *b, gout.len());
                    for i in 0..gout.len() {
                        if va[i] > vb[i] {
                            gb[i] += gout[i];
                        }
                    }
                }
            }
            Op::AddRow(a, row) => {
                let c = node.cols;
                if needs(a) {
                    axpy(slot(grads, *a, gout.len()), gout, 1.0);
                }
                if needs(row) {
                    let gr = slot(grads, *row, c);
                    for (i, g) in gout.iter().enumerate() {
                        gr[i % c] += g;
                    }
                }
            }
            Op::MulCol(a, col) => {
                let c = node.cols;
                let (va, vc) = (&n[a.0].value, &n[col.0].value);
                if needs(a) {
                    let ga = slot(grads, *a, gout.len());
                    for i in 0..gout.len() {
                        ga[i] += gout[i] * vc[i / c];
                    }
                }
                if needs(col) {
                    let gc = slot(grads, *col, node.rows);
                    for i in 0..gout.len() {
                        gc[i / c] += gout[i] * va[i];
                    }
                }
            }
            Op::MulRow(a, row) => {
                let c = node.cols;
                let (va, vr) = (&n[a.0].value, &n[row.0].value);
                if needs(a) {
                    let ga = slot(grads, *a, gout.len());
                    for i in 0..gout.len() {
                        ga[i] += gout[i] * vr[i % c];
                    }
                }
                if needs(row) {
                    let gr = slot(grads, *row, c);
                    for i in 0..gout.len() {
                        gr[i % c] += gout[i] * va[i];
                    }
                }
            }
            Op::Affine(a, s) => axpy(slot(grads, *a, gout.len()), gout, *s),
            Op::Tanh(a) => {
                let y = &node.value;
                let ga = slot(grads, *a, gout.len());
                for i in 0..gout.len() {
                    ga[i] += gout[i] * (1.0 - y[i] * y[i]);
                }
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                let ga = slot(grads, *a, gout.len());
                for i in 0..gout.len() {
                    ga[i] += gout[i] * y[i] * (1.0 - y[i]);
                }
            }
            Op::Gelu(a) => {
                let x = &n[a.0].value;
                let ga = slot(grads, *a, gout.len());
                for i in 0..gout.len() {
                    let xi = x[i];
                    let t = (GELU_C * (xi + GELU_K * xi * xi * xi)).tanh();
                    let d = 0.5 * (1.0 + t)
                        + 0.5 * xi * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * xi * xi);
                    ga[i] += gout[i] * d;
                }
            }
            Op::Exp(a) => {
                let y = &node.value;
                let ga = slot(grads, *a, gout.len());
                for i in 0..gout.len() {
                    ga[i] += gout[i] * y[i];
                }
            }
            Op::Square(a) => {
                let x = &n[a.0].value;
                let ga = slot(grads, *a, gout.len());
                for i in 0..gout.len() {
                    ga[i] += 2.0 * gout[i] * x[i];
                }
            }
            Op::Clamp(a, lo, hi) => {
                let x = &n[a.0].value;
                let ga = slot(grads, *a, gout.len());
                for i in 0..gout.len() {
                    if x[i] >= *lo && x[i] <= *hi {
                        ga[i] += gout[i];
                    }
                }
            }
            Op::SliceCols(a, start) => {
                let (m, w) = (node.rows, node.cols);
                let src_cols = n[a.0].cols;
                let ga = slot(grads, *a, m * src_cols);
                for r in 0..m {
                    for j in 0..w {
                        ga[r * src_cols + start + j] += gout[r * w + j];
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let (m, total) = (node.rows, node.cols);
                let mut off = 0;
                for p in parts {
                    let w = n[p.0].cols;
                    if needs(p) {
                        let gp = slot(grads, *p, m * w);
                        for r in 0..m {
                            for j in 0..w {
                                gp[r * w + j] += gout[r * total + off + j];
                            }
                        }
                    }
                    off += w;
                }
            }
            Op::InterleaveRows(parts) => {
                let l = parts.len();
                let d = node.cols;
                let b = node.rows / l;
                for (pi, p) in parts.iter().enumerate() {
                    if !needs(p) {
                        continue;
                    }
                    let gp = slot(grads, *p, b * d);
                    for r in 0..b {
                        let src = &gout[(r * l + pi) * d..(r * l + pi + 1) * d];
                        axpy(&mut gp[r * d..(r + 1) * d], src, 1.0);
                    }
                }
            }
            Op::GroupMeanRows(a, group) => {
                let d = node.cols;
                let m = n[a.0].rows;
                let inv = 1.0 / *group as f64;
                let ga = slot(grads, *a, m * d);
                for r in 0..m {
                    let o = (r / group) * d;
                    for j in 0..d {
                        ga[r * d + j] += gout[o + j] * inv;
                    }
                }
            }
            Op::GatherRows(sources, sel) => {
                let c = node.cols;
                let total = node.rows * c;
                for (r, s) in sel.iter().enumerate() {
                    if let Some(s) = s {
                        let src = sources[*s];
                        if needs(&src) {
                            let gs = slot(grads, src, total);
                            axpy(&mut gs[r * c..(r + 1) * c], &gout[r * c..(r + 1) * c], 1.0);
                        }
                    }
                }
            }
            Op::PickCols(a, idx) => {
                let c = n[a.0].cols;
                let ga = slot(grads, *a, n[a.0].rows * c);
                for (r, &j) in idx.iter().enumerate() {
                    ga[r * c + j] += gout[r];
                }
            }
            Op::LayerNorm(a) => {
                let (m, c) = (node.rows, node.cols);
                let y = &node.value;
                let ga = slot(grads, *a, m * c);
                for r in 0..m {
                    let inv = node.aux[r];
                    let gy = &gout[r * c..(r + 1) * c];
                    let yr = &y[r * c..(r + 1) * c];
                    let mean_g = gy.iter().sum::<f64>() / c as f64;
                    let mean_gy = dot(gy, yr) / c as f64;
                    for j in 0..c {
                        ga[r * c + j] += inv * (gy[j] - mean_g - yr[j] * mean_gy);
                    }
                }
            }
            Op::LogSoftmax(a) => {
                let (m, c) = (node.rows, node.cols);
                let y = &node.value;
                let ga = slot(grads, *a, m * c);
                for r in 0..m {
                    let gs: f64 = gout[r * c..(r + 1) * c].iter().sum();
                    for j in 0..c {
                        ga[r * c + j] += gout[r * c + j] - y[r * c + j].exp() * gs;
                    }
                }
            }
            Op::Softmax(a) => {
                let (m, c) = (node.rows, node.cols);
                let p = &node.value;
                let ga = slot(grads, *a, m * c);
                for r in 0..m {
                    let s = dot(&gout[r * c..(r + 1) * c], &p[r * c..(r + 1) * c]);
                    for j in 0..c {
                        ga[r * c + j] += p[r * c + j] * (gout[r * c + j] - s);
                    }
                }
            }
            Op::SumAll(a) => {
                let len = n[a.0].value.len();
                slot(grads, *a, len).iter_mut().for_each(|x| *x += gout[0]);
            }
            Op::MeanAll(a) => {
                let len = n[a.0].value.len();
                let g = gout[0] / len as f64;
                slot(grads, *a, len).iter_mut().for_each(|x| *x += g);
            }
            Op::MeanCols(a) => {
                let c = n[a.0].cols;
                let inv = 1.0 / c as f64;
                let ga = slot(grads, *a, node.rows * c);
                for (i, g) in ga.iter_mut().enumerate() {
                    *g += gout[i / c] * inv;
                }
            }
            Op::Attention { q, k, v, seq, heads } => {
                self.attention_backward(node, gout, grads, *q, *k, *v, *seq, *heads);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        node: &Node,
        gout: &[f64],
        grads: &mut [Option<Vec<f64>>],
        q: Var,
        k: Var,
        v: Var,
        seq: usize,
        heads: usize,
    ) {
        let (m, d) = (node.rows, node.cols);
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let groups = m / seq;
        let (vq, vk, vv) = (&self.nodes[q.0].value, &self.nodes[k.0].value, &self.nodes[v.0].value);
        let mut gq = vec![0.0; m * d];
        let mut gk = vec![0.0; m * d];
        let mut gv = vec![0.0; m * d];
        let mut dp = vec![0.0; seq];
        for g in 0..groups {
            for h in 0..heads {
                let off = h * dh;
                for i in 0..seq {
                    let ri = (g * seq + i) * d + off;
                    let go = &gout[ri..ri + dh];
                    let base = ((g * heads + h) * seq + i) * seq;
                    let p = &node.aux[base..base + seq];
                    for j in 0..seq {
                        let rj = (g * seq + j) * d + off;
                        dp[j] = dot(go, &vv[rj..rj + dh]);
                        axpy(&mut gv[rj..rj + dh], go, p[j]);
                    }
                    let s = dot(&dp, p);
                    for j in 0..seq {
                        let ds = p[j] * (dp[j] - s) * scale;
                        let rj = (g * seq + j) * d + off;
                        for t in 0..dh {
                            gq[ri + t] += ds * vk[rj + t];
                            gk[rj + t] += ds * vq[ri + t];
                        }
                    }
                }
            }
        }
        for (var, gsrc) in [(q, gq), (k, gk), (v, gv)] {
            if self.nodes[var.0].requires_grad {
                axpy(slot(grads, var, m * d), &gsrc, 1.0);
            }
        }
    }
}

/// Runs `build` on a fresh graph over `store` and returns the scalar loss
/// plus a gradient for every parameter in the store (zeros where untouched).
pub fn evaluate_with_gradients<F>(store: &ParamStore, build: F) -> Result<(f64, Gradients)>
where
    F: FnOnce(&mut Graph<'_>) -> Result<Var>,
{
    let mut g = Graph::new(store);
    let loss = build(&mut g)?;
    let value = g.scalar(loss);
    let touched = g.backward(loss)?;
    let mut full = Gradients::new();
    for (name, t) in store.iter() {
        let grad = touched
            .get(name)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(t.shape()));
        full.insert(name.clone(), grad);
    }
    Ok((value, full))
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn axpy(y: &mut [f64], x: &[f64], a: f64) {
    for (yy, xx) in y.iter_mut().zip(x) {
        *yy += a * xx;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax of one row.
pub fn softmax_row(x: &[f64]) -> Vec<f64> {
    let mx = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `c += a * b` where `a` is `m x k`, `b` is `k x n`, and strides are given
/// as `(row_stride, col_stride)`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    sa: (usize, usize),
    b: &[f64],
    sb: (usize, usize),
    c: &mut [f64],
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: strides describe in-bounds views of `a` (m x k), `b` (k x n)
    // and the contiguous row-major `c` (m x n); lengths are checked by the
    // callers' shape assertions.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
