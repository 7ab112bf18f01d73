use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Per-variable min-max scaling onto `[-1, 1]`, fitted on training rows only.
/// Constant columns map to 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Scaler {
    pub fn fit(train: &Tensor) -> Result<Self> {
        let cols = train.cols();
        if train.rows() == 0 {
            return Err(Error::shape("cannot fit a scaler on zero rows"));
        }
        let mut min = vec![f64::INFINITY; cols];
        let mut max = vec![f64::NEG_INFINITY; cols];
        for r in 0..train.rows() {
            for (c, v) in train.row(r).iter().enumerate() {
                min[c] = min[c].min(*v);
                max[c] = max[c].max(*v);
            }
        }
        Ok(Scaler { min, max })
    }

    pub fn n_vars(&self) -> usize {
        self.min.len()
    }

    pub fn scale_value(&self, col: usize, v: f64) -> f64 {
        let span = self.max[col] - self.min[col];
        if span > 0.0 {
            2.0 * (v - self.min[col]) / span - 1.0
        } else {
            0.0
        }
    }

    pub fn unscale_value(&self, col: usize, s: f64) -> f64 {
        let span = self.max[col] - self.min[col];
        if span > 0.0 {
            (s + 1.0) * 0.5 * span + self.min[col]
        } else {
            self.min[col]
        }
    }

    pub fn transform(&self, m: &Tensor) -> Result<Tensor> {
        self.map(m, |c, v| self.scale_value(c, v))
    }

    pub fn inverse_transform(&self, m: &Tensor) -> Result<Tensor> {
        self.map(m, |c, v| self.unscale_value(c, v))
    }

    /// Maps a vector of scaled values of column `col` back to original units.
    pub fn inverse_column(&self, col: usize, values: &[f64]) -> Vec<f64> {
        values.iter().map(|v| self.unscale_value(col, *v)).collect()
    }

    fn map(&self, m: &Tensor, f: impl Fn(usize, f64) -> f64) -> Result<Tensor> {
        if m.cols() != self.n_vars() {
            return Err(Error::shape(format!(
                "scaler fitted on {} variables, got {}",
                self.n_vars(),
                m.cols()
            )));
        }
        let c = m.cols();
        let data = m.data().iter().enumerate().map(|(i, v)| f(i % c, *v)).collect();
        Tensor::new(m.shape().to_vec(), data)
    }
}
