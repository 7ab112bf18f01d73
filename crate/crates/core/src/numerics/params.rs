use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::graph::Gradients;
use crate::numerics::rng::Rng;
use crate::numerics::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// One parameter together with its Adam moment accumulators.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSlot {
    pub value: Tensor,
    pub m: Tensor,
    pub v: Tensor,
}

/// Named parameter tensors plus Adam state.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    slots: BTreeMap<String, ParamSlot>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a parameter with zeroed moments. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.slots.contains_key(&name) {
            return Err(Error::shape(format!("duplicate parameter `{name}`")));
        }
        let m = Tensor::zeros(value.shape());
        let v = Tensor::zeros(value.shape());
        self.slots.insert(name, ParamSlot { value, m, v });
        Ok(())
    }

    /// Uniform in `±1/sqrt(fan_in)` where `fan_in` is the row count.
    pub fn insert_uniform(&mut self, name: &str, rows: usize, cols: usize, rng: &mut Rng) -> Result<()> {
        let bound = 1.0 / (rows.max(1) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.uniform_in(-bound, bound)).collect();
        self.insert(name, Tensor::matrix(rows, cols, data)?)
    }

    pub fn insert_zeros(&mut self, name: &str, rows: usize, cols: usize) -> Result<()> {
        self.insert(name, Tensor::zeros(&[rows, cols]))
    }

    pub fn insert_filled(&mut self, name: &str, rows: usize, cols: usize, value: f64) -> Result<()> {
        self.insert(name, Tensor::matrix(rows, cols, vec![value; rows * cols])?)
    }

    /// Restores a slot verbatim (used by checkpoint loading).
    pub(crate) fn insert_slot(&mut self, name: String, slot: ParamSlot) -> Result<()> {
        if slot.m.shape() != slot.value.shape() || slot.v.shape() != slot.value.shape() {
            return Err(Error::shape(format!("moment shape mismatch for `{name}`")));
        }
        if self.slots.insert(name.clone(), slot).is_some() {
            return Err(Error::shape(format!("duplicate parameter `{name}`")));
        }
        Ok(())
    }

    pub(crate) fn value_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        self.slots.get_mut(name).map(|s| s.value.data_mut())
    }

    pub(crate) fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.slots.get(name).map(|s| &s.value)
    }

    pub fn slot(&self, name: &str) -> Option<&ParamSlot> {
        self.slots.get(name)
    }

    /// Overwrites a parameter value, keeping its moments.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .slots
            .get_mut(name)
            .ok_or_else(|| Error::shape(format!("unknown parameter `{name}`")))?;
        if slot.value.shape() != value.shape() {
            return Err(Error::shape(format!(
                "`{name}`: expected {:?}, got {:?}",
                slot.value.shape(),
                value.shape()
            )));
        }
        slot.value = value;
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.slots.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.slots.iter().map(|(k, s)| (k, &s.value))
    }

    pub fn slots(&self) -> impl Iterator<Item = (&String, &ParamSlot)> {
        self.slots.iter()
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn num_scalars(&self) -> usize {
        self.slots.values().map(|s| s.value.len()).sum()
    }

    /// FNV-1a over names and the raw bits of every value; used to assert that
    /// a phase left a parameter set untouched.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |b: u8| {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        for (name, slot) in &self.slots {
            name.bytes().for_each(&mut feed);
            for x in slot.value.data() {
                x.to_bits().to_le_bytes().into_iter().for_each(&mut feed);
            }
        }
        h
    }

    /// One Adam update. With `ascend` the gradient sign is flipped so the
    /// objective is maximised. Parameters absent from `grads` are left alone.
    pub fn adam_step(&mut self, grads: &Gradients, lr: f64, ascend: bool) -> Result<()> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        for (name, g) in grads.iter() {
            let slot = self
                .slots
                .get(name)
                .ok_or_else(|| Error::shape(format!("gradient for unknown parameter `{name}`")))?;
            if slot.value.shape() != g.shape() {
                return Err(Error::shape(format!(
                    "gradient for `{name}`: expected {:?}, got {:?}",
                    slot.value.shape(),
                    g.shape()
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        let sign = if ascend { -1.0 } else { 1.0 };
        for (name, g) in grads.iter() {
            let slot = self.slots.get_mut(name).expect("checked above");
            let ParamSlot { value, m, v } = slot;
            let (p, m, v) = (value.data_mut(), m.data_mut(), v.data_mut());
            for (i, gi) in g.data().iter().enumerate() {
                let gi = sign * gi;
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * gi;
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numerical {
                    node: format!("adam update of `{name}`"),
                });
            }
        }
        Ok(())
    }
}

/// Free-function form of [`ParamStore::adam_step`].
pub fn adam_step(store: &mut ParamStore, grads: &Gradients, lr: f64, ascend: bool) -> Result<()> {
    store.adam_step(grads, lr, ascend)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(p: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("p", Tensor::scalar(p).unwrap()).unwrap();
        s
    }

    fn grad(g: f64) -> Gradients {
        let mut gs = Gradients::new();
        gs.insert("p", Tensor::scalar(g).unwrap());
        gs
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut s = scalar_store(1.5);
        s.adam_step(&grad(0.0), 0.1, false).unwrap();
        assert_eq!(s.get("p").unwrap().item(), 1.5);
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = scalar_store(0.0);
        s.adam_step(&grad(1.0), 0.1, false).unwrap();
        // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
        let p = s.get("p").unwrap().item();
        assert!((p + 0.1).abs() < 1e-8, "{p}");
    }

    #[test]
    fn ascend_equals_descend_on_negated_gradient() {
        let mut a = scalar_store(0.3);
        let mut b = scalar_store(0.3);
        for g in [0.5, -1.2, 2.0] {
            a.adam_step(&grad(g), 0.01, true).unwrap();
            b.adam_step(&grad(-g), 0.01, false).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut s = scalar_store(0.0);
        let mut gs = Gradients::new();
        gs.insert("p", Tensor::zeros(&[2, 1]));
        assert!(matches!(s.adam_step(&gs, 0.1, false), Err(Error::Shape(_))));
        assert_eq!(s.step(), 0);
    }

    #[test]
    fn unknown_gradient_name_is_rejected() {
        let mut s = scalar_store(0.0);
        let mut gs = Gradients::new();
        gs.insert("q", Tensor::scalar(1.0).unwrap());
        assert!(s.adam_step(&gs, 0.1, false).is_err());
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let mut s = scalar_store(0.0);
        assert!(s.insert("p", Tensor::scalar(1.0).unwrap()).is_err());
    }
}
