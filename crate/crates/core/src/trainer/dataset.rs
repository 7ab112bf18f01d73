use crate::data::{chronological_split, generate, load_csv, make_windows, RawSeries, Scaler, WindowedExample};
use crate::error::Result;
use crate::trainer::DataConfig;

/// Scaled windows for the three chronological splits.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<WindowedExample>,
    pub val: Vec<WindowedExample>,
    pub test: Vec<WindowedExample>,
    pub scaler: Scaler,
    pub target: usize,
    pub names: Vec<String>,
}

impl Dataset {
    /// Splits, fits the scaler on the training rows and windows each split.
    pub fn prepare(series: &RawSeries, window: usize, horizon: usize, cfg: &DataConfig) -> Result<Self> {
        let (train, val, test) = chronological_split(&series.values, cfg.split, window + horizon)?;
        let scaler = Scaler::fit(&train)?;
        let win = |seg| -> Result<Vec<WindowedExample>> {
            make_windows(&scaler.transform(seg)?, window, horizon, series.target)
        };
        Ok(Dataset {
            train: win(&train)?,
            val: win(&val)?,
            test: win(&test)?,
            scaler: scaler.clone(),
            target: series.target,
            names: series.names.clone(),
        })
    }

    /// Loads the configured CSV or generates the synthetic series.
    pub fn from_config(cfg: &DataConfig) -> Result<Self> {
        let series = load_series(cfg)?;
        Self::prepare(&series, cfg.window, cfg.horizon, cfg)
    }

    pub fn input_dim(&self) -> usize {
        self.names.len()
    }

    pub fn horizon(&self) -> usize {
        self.train.first().map_or(0, |e| e.horizon())
    }
}

pub fn load_series(cfg: &DataConfig) -> Result<RawSeries> {
    match &cfg.csv {
        Some(path) => load_csv(path, &cfg.target),
        None => generate(&cfg.synth),
    }
}
