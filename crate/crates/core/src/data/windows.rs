use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Integer split weights; boundaries are `floor(N * train / total)` and
/// `floor(N * (train + val) / total)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 7,
            val: 1,
            test: 2,
        }
    }
}

impl SplitRatios {
    pub fn boundaries(&self, n: usize) -> (usize, usize) {
        let total = self.train + self.val + self.test;
        (n * self.train / total, n * (self.train + self.val) / total)
    }
}

/// Splits rows into contiguous train / validation / test segments.
/// Every segment must hold at least `min_len` rows (typically `T + H`).
pub fn chronological_split(values: &Tensor, ratios: SplitRatios, min_len: usize) -> Result<(Tensor, Tensor, Tensor)> {
    if ratios.train + ratios.val + ratios.test == 0 {
        return Err(Error::Split("split weights sum to zero".into()));
    }
    let n = values.rows();
    let (b1, b2) = ratios.boundaries(n);
    let parts = [(0, b1), (b1, b2), (b2, n)];
    for (name, (s, e)) in ["train", "validation", "test"].iter().zip(parts) {
        if e - s < min_len {
            return Err(Error::Split(format!(
                "{name} segment has {} rows, need at least {min_len} (series length {n})",
                e - s
            )));
        }
    }
    Ok((
        values.slice_rows(0, b1),
        values.slice_rows(b1, b2),
        values.slice_rows(b2, n),
    ))
}

/// One input window with step-wise forecast targets.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowedExample {
    /// `[T, D_in]` scaled inputs.
    pub x: Tensor,
    /// `[T, H]`: row `t` holds the next `H` target values after step `t`.
    pub y_all: Tensor,
}

impl WindowedExample {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn horizon(&self) -> usize {
        self.y_all.cols()
    }

    /// Forecast target of the final step.
    pub fn y_last(&self) -> &[f64] {
        self.y_all.row(self.y_all.rows() - 1)
    }
}

/// All windows of length `t` with horizon `h`, one per start offset.
pub fn make_windows(segment: &Tensor, t: usize, h: usize, target: usize) -> Result<Vec<WindowedExample>> {
    let len = segment.rows();
    if t == 0 || h == 0 {
        return Err(Error::shape("window length and horizon must be positive"));
    }
    if len < t + h {
        return Err(Error::Split(format!("segment of {len} rows is shorter than T + H = {}", t + h)));
    }
    if target >= segment.cols() {
        return Err(Error::shape(format!("target column {target} out of range")));
    }
    let target_col = segment.column(target);
    let out = (0..=len - t - h)
        .map(|s| {
            let x = segment.slice_rows(s, s + t);
            let mut y = Vec::with_capacity(t * h);
            for step in 0..t {
                let start = s + step + 1;
                y.extend_from_slice(&target_col[start..start + h]);
            }
            WindowedExample {
                x,
                y_all: Tensor::from_parts_unchecked(vec![t, h], y),
            }
        })
        .collect();
    Ok(out)
}
