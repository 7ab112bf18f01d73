//! Central finite-difference checker for tape gradients.
//!
//! Only forward evaluations are used on the numeric side, so the check is
//! independent of every backward rule it validates.

use crate::error::Result;
use crate::numerics::graph::{evaluate_with_gradients, Graph, Var};
use crate::numerics::params::ParamStore;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Entries whose gradients are both below this magnitude are compared on an
/// absolute basis scaled by it.
pub const RELATIVE_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest per-entry `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    /// `||analytic - numeric|| / max(||analytic||, ||numeric||)` over all checked entries.
    pub global_rel_error: f64,
    pub worst: String,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol && self.global_rel_error < tol
    }
}

/// Compares analytic gradients against central differences with step `h`.
/// At most `max_per_param` entries of each parameter are probed, spread
/// evenly over the tensor.
pub fn check_gradients<F>(store: &ParamStore, h: f64, max_per_param: usize, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    let (_, analytic) = evaluate_with_gradients(store, &build)?;
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new(s);
        let v = build(&mut g)?;
        g.check()?;
        Ok(g.scalar(v))
    };

    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        global_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
    };
    let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
    let names: Vec<String> = store.names().cloned().collect();
    for name in names {
        let len = store.get(&name).map_or(0, |t| t.len());
        let stride = (len / max_per_param.max(1)).max(1);
        for idx in (0..len).step_by(stride).take(max_per_param) {
            let orig = store.get(&name).unwrap().data()[idx];
            probe.value_mut(&name).unwrap()[idx] = orig + h;
            let up = eval(&probe)?;
            probe.value_mut(&name).unwrap()[idx] = orig - h;
            let down = eval(&probe)?;
            probe.value_mut(&name).unwrap()[idx] = orig;

            let numeric = (up - down) / (2.0 * h);
            let a = analytic.get(&name).unwrap().data()[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = format!("{name}[{idx}] analytic={a:e} numeric={numeric:e}");
            }
        }
    }
    let denom = a2.max(n2).sqrt();
    report.global_rel_error = if denom > 0.0 { diff2.sqrt() / denom } else { 0.0 };
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::Rng;
    use crate::numerics::tensor::Tensor;

    const TOL: f64 = 1e-4;

    fn random_store(shapes: &[(&str, usize, usize)], seed: u64) -> ParamStore {
        let mut rng = Rng::seeded(seed);
        let mut s = ParamStore::new();
        for (name, r, c) in shapes {
            let data = (0..r * c).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            s.insert(*name, Tensor::matrix(*r, *c, data).unwrap()).unwrap();
        }
        s
    }

    fn assert_check<F>(store: &ParamStore, build: F)
    where
        F: Fn(&mut Graph<'_>) -> Result<Var>,
    {
        let r = check_gradients(store, DEFAULT_STEP, 64, build).unwrap();
        assert!(r.passes(TOL), "{r:?}");
        assert!(r.checked > 0);
    }

    #[test]
    fn sum_gives_ones() {
        let s = random_store(&[("p", 1, 5)], 1);
        let (_, g) = evaluate_with_gradients(&s, |g| {
            let p = g.param("p")?;
            Ok(g.sum_all(p))
        })
        .unwrap();
        assert_eq!(g.get("p").unwrap().data(), &[1.0; 5]);
    }

    #[test]
    fn half_squared_norm_gives_identity() {
        let mut s = ParamStore::new();
        s.insert("p", Tensor::row_vector(vec![3.0, -4.0]).unwrap()).unwrap();
        let (loss, g) = evaluate_with_gradients(&s, |g| {
            let p = g.param("p")?;
            let sq = g.square(p);
            let total = g.sum_all(sq);
            Ok(g.scale(total, 0.5))
        })
        .unwrap();
        assert_eq!(loss, 12.5);
        assert_eq!(g.get("p").unwrap().data(), &[3.0, -4.0]);
    }

    #[test]
    fn untouched_parameters_get_zero_gradients() {
        let s = random_store(&[("a", 2, 2), ("b", 1, 3)], 2);
        let (_, g) = evaluate_with_gradients(&s, |g| {
            let a = g.param("a")?;
            Ok(g.sum_all(a))
        })
        .unwrap();
        assert_eq!(g.get("b").unwrap().data(), &[0.0; 3]);
        assert_eq!(g.len(), 2);
    }

    #[test]
    fn softmax_cross_entropy_matches_finite_differences_tightly() {
        let s = random_store(&[("logits", 1, 3)], 3);
        let build = |g: &mut Graph<'_>| {
            let l = g.param("logits")?;
            let lp = g.log_softmax(l);
            let picked = g.pick_cols(lp, &[1]);
            let s = g.sum_all(picked);
            Ok(g.scale(s, -1.0))
        };
        let r = check_gradients(&s, DEFAULT_STEP, 8, build).unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn elementwise_ops() {
        let s = random_store(&[("a", 3, 4), ("b", 3, 4)], 4);
        assert_check(&s, |g| {
            let a = g.param("a")?;
            let b = g.param("b")?;
            let x = g.mul(a, b);
            let y = g.sub(x, b);
            let t = g.tanh(y);
            let sg = g.sigmoid(a);
            let z = g.add(t, sg);
            let ge = g.gelu(z);
            let e = g.exp(ge);
            let sq = g.square(e);
            let af = g.affine(sq, 0.3, 1.0);
            let om = g.one_minus(af);
            Ok(g.mean_all(om))
        });
    }

    #[test]
    fn matmul_and_broadcasts() {
        let s = random_store(&[("x", 4, 3), ("w", 3, 5), ("b", 1, 5), ("c", 4, 1)], 5);
        assert_check(&s, |g| {
            let x = g.param("x")?;
            let w = g.param("w")?;
            let b = g.param("b")?;
            let c = g.param("c")?;
            let y = g.matmul(x, w);
            let y = g.add_row(y, b);
            let y = g.mul_col(y, c);
            let y = g.mul_row(y, b);
            let y = g.tanh(y);
            let m = g.mean_cols(y);
            let sq = g.square(m);
            Ok(g.sum_all(sq))
        });
    }

    #[test]
    fn structural_ops() {
        let s = random_store(&[("a", 4, 6), ("b", 4, 2), ("c", 4, 6)], 6);
        assert_check(&s, |g| {
            let a = g.param("a")?;
            let b = g.param("b")?;
            let c = g.param("c")?;
            let left = g.slice_cols(a, 1, 4);
            let cat = g.concat_cols(&[left, b]);
            let sq = g.square(cat);
            let inter = g.interleave_rows(&[a, c]);
            let pooled = g.group_mean_rows(inter, 2);
            let gathered = g.gather_rows(&[a, c], &[Some(1), None, Some(0), Some(1)]);
            let mix = g.mul(pooled, gathered);
            let t1 = g.sum_all(sq);
            let t2 = g.sum_all(mix);
            let tot = g.add(t1, t2);
            Ok(tot)
        });
    }

    #[test]
    fn normalisation_and_softmax() {
        let s = random_store(&[("a", 3, 5), ("w", 3, 5)], 7);
        assert_check(&s, |g| {
            let a = g.param("a")?;
            let w = g.param("w")?;
            let n = g.layer_norm(a);
            let p = g.softmax(n);
            let lp = g.log_softmax(a);
            let x = g.mul(p, w);
            let y = g.mul(lp, w);
            let z = g.add(x, y);
            Ok(g.sum_all(z))
        });
    }

    #[test]
    fn clamp_and_minimum_away_from_kinks() {
        let mut s = ParamStore::new();
        s.insert("a", Tensor::row_vector(vec![0.5, 1.1, 1.5, -0.3]).unwrap()).unwrap();
        s.insert("b", Tensor::row_vector(vec![0.7, 0.2, 2.0, -1.0]).unwrap()).unwrap();
        assert_check(&s, |g| {
            let a = g.param("a")?;
            let b = g.param("b")?;
            let c = g.clamp(a, 0.8, 1.2);
            let m = g.minimum(c, b);
            let sq = g.square(m);
            Ok(g.sum_all(sq))
        });
    }

    #[test]
    fn attention_matches_finite_differences() {
        let s = random_store(&[("q", 6, 8), ("k", 6, 8), ("v", 6, 8), ("w", 6, 8)], 8);
        assert_check(&s, |g| {
            let q = g.param("q")?;
            let k = g.param("k")?;
            let v = g.param("v")?;
            let w = g.param("w")?;
            let o = g.attention(q, k, v, 2, 4);
            let x = g.mul(o, w);
            Ok(g.sum_all(x))
        });
    }

    #[test]
    fn non_finite_nodes_are_reported() {
        let mut s = ParamStore::new();
        s.insert("p", Tensor::scalar(1000.0).unwrap()).unwrap();
        let err = evaluate_with_gradients(&s, |g| {
            g.set_scope("blowup");
            let p = g.param("p")?;
            let e = g.exp(p);
            Ok(g.sum_all(e))
        })
        .unwrap_err();
        match err {
            crate::Error::Numerical { node } => assert!(node.starts_with("blowup/exp"), "{node}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = Rng::seeded(9);
        for _ in 0..100 {
            let x: Vec<f64> = (0..7).map(|_| rng.uniform_in(-30.0, 30.0)).collect();
            let p = crate::numerics::softmax_row(&x);
            assert!(p.iter().all(|v| *v >= 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
