use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

use super::RawSeries;

/// Synthetic series: a seasonal driver with AR(1) residuals, a target that
/// responds to the driver at two lags plus trend, and two pure-noise
/// variables. A fraction of time steps is corrupted: their driver reading is
/// replaced by a spike of random sign, so only the remaining steps carry
/// information.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub steps: usize,
    pub noise_frac: f64,
    pub seed: u64,
    pub noise_vars: usize,
    /// Lags (in steps) at which the driver feeds the target.
    pub lags: (usize, usize),
    pub trend: f64,
    /// Magnitude range of corrupted readings.
    pub spike: (f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            steps: 2000,
            noise_frac: 0.2,
            seed: 0,
            noise_vars: 2,
            lags: (7, 10),
            trend: 0.3,
            spike: (3.0, 5.0),
        }
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<RawSeries> {
    if !(0.0..1.0).contains(&cfg.noise_frac) {
        return Err(Error::Config(format!("noise fraction must be in [0, 1), got {}", cfg.noise_frac)));
    }
    if cfg.steps == 0 {
        return Err(Error::Config("steps must be positive".into()));
    }
    if !(cfg.spike.0 >= 0.0 && cfg.spike.0 <= cfg.spike.1) {
        return Err(Error::Config(format!("invalid spike range {:?}", cfg.spike)));
    }
    let mut rng = Rng::seeded(cfg.seed);
    let n = cfg.steps;
    let burn = cfg.lags.0.max(cfg.lags.1);

    let mut ar = 0.0;
    let driver: Vec<f64> = (0..n + burn)
        .map(|i| {
            ar = 0.8 * ar + 0.3 * rng.normal();
            let t = i as f64;
            (2.0 * PI * t / 24.0).sin() + 0.5 * (2.0 * PI * t / 60.0).sin() + ar
        })
        .collect();

    let vars = 2 + cfg.noise_vars;
    let mut data = Vec::with_capacity(n * vars);
    for i in 0..n {
        let j = i + burn;
        let target = 0.6 * driver[j - cfg.lags.0]
            + 0.4 * driver[j - cfg.lags.1]
            + cfg.trend * i as f64 / n as f64
            + 0.05 * rng.normal();
        let observed = if rng.bernoulli(cfg.noise_frac) {
            let sign = if rng.bernoulli(0.5) { 1.0 } else { -1.0 };
            sign * rng.uniform_in(cfg.spike.0, cfg.spike.1)
        } else {
            driver[j]
        };
        data.push(target);
        data.push(observed);
        for _ in 0..cfg.noise_vars {
            data.push(rng.normal());
        }
    }
    let mut names = vec!["target".to_string(), "driver".to_string()];
    names.extend((0..cfg.noise_vars).map(|k| format!("noise{}", k + 1)));
    Ok(RawSeries {
        values: Tensor::matrix(n, vars, data)?,
        names,
        target: 0,
    })
}
