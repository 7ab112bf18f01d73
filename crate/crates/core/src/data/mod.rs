//! Series loading, min-max scaling, chronological splits, sliding windows,
//! forecast metrics and a synthetic series generator.

mod metrics;
mod scaler;
mod series;
mod synth;
mod windows;

pub use metrics::mse_mae;
pub use scaler::Scaler;
pub use series::{load_csv, read_csv, write_csv, RawSeries};
pub use synth::{generate, SynthConfig};
pub use windows::{chronological_split, make_windows, SplitRatios, WindowedExample};
