use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rre_core::data::{generate, read_csv, write_csv, SynthConfig};
use rre_core::env::CellKind;
use rre_core::numerics::Tensor;
use rre_core::trainer::{improvement_pct, run_seed, write_log_csv, Dataset, ExperimentConfig, Metrics, Mode, SeedResult, TrainedModel};

use crate::error::{CliError, CliResult};

const BENCH_MODES: [Mode; 3] = [Mode::NaiveAll, Mode::NaiveLast, Mode::Rre];

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(CliError::io(format!("cannot create {}", dir.display())))?;
    }
    let file = File::create(path).map_err(CliError::io(format!("cannot create {}", path.display())))?;
    Ok(BufWriter::new(file))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(CliError::io(format!("cannot create {}", dir.display())))?;
    }
    fs::write(path, text).map_err(CliError::io(format!("cannot write {}", path.display())))
}

/// Files written by `train` for one mode.
pub struct TrainArtifacts {
    pub metrics: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub logs: Vec<PathBuf>,
}

fn seed_stem(mode: Mode, seed: u64) -> String {
    format!("{}-seed{seed}", mode.name())
}

fn save_seed(out_dir: &Path, r: &SeedResult) -> CliResult<(PathBuf, PathBuf)> {
    let stem = seed_stem(r.mode, r.seed);
    let ckpt = out_dir.join(format!("{stem}.ckpt"));
    fs::create_dir_all(out_dir).map_err(CliError::io(format!("cannot create {}", out_dir.display())))?;
    r.model.save(&ckpt)?;
    let log = out_dir.join(format!("{stem}-log.csv"));
    write_log_csv(&r.log, create(&log)?)?;
    Ok((ckpt, log))
}

/// Trains the configured mode for every seed and writes checkpoints,
/// training logs and a metrics JSON into the output directory.
pub fn train(cfg: &ExperimentConfig, seed: Option<u64>) -> CliResult<TrainArtifacts> {
    let mut cfg = cfg.clone();
    if let Some(s) = seed {
        cfg.run.seeds = vec![s];
    }
    let data = Dataset::from_config(&cfg.data)?;
    let out_dir = cfg.run.output_dir.clone();
    let mut results = Vec::with_capacity(cfg.run.seeds.len());
    let (mut checkpoints, mut logs) = (Vec::new(), Vec::new());
    for &s in &cfg.run.seeds {
        let r = run_seed(&cfg, &data, cfg.run.mode, s)?;
        if let Some(reason) = &r.aborted {
            log::error!("seed {s}: training stopped early, best model kept ({reason})");
        }
        let (ckpt, log) = save_seed(&out_dir, &r)?;
        checkpoints.push(ckpt);
        logs.push(log);
        results.push(r);
    }
    let metrics = out_dir.join(format!("{}-metrics.json", cfg.run.mode.name()));
    write_text(&metrics, &Metrics::from_results(&results)?.to_json()?)?;
    Ok(TrainArtifacts {
        metrics,
        checkpoints,
        logs,
    })
}

/// One benchmark row: a single seed, or the mean over seeds when `seed` is
/// `None`. Improvement is measured against Naive-all on the same backbone.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub backbone: CellKind,
    pub mode: Mode,
    pub seed: Option<u64>,
    pub mse: f64,
    pub mae: f64,
    pub improvement_pct: f64,
}

/// Rows sorted by backbone, then mode, then seed, with each group's summary
/// row last.
pub fn bench_rows(results: &[(CellKind, SeedResult)]) -> Vec<BenchRow> {
    let mut backbones: Vec<CellKind> = results.iter().map(|(b, _)| *b).collect();
    backbones.sort_by_key(|b| b.name());
    backbones.dedup();
    let mut modes: Vec<Mode> = results.iter().map(|(_, r)| r.mode).collect();
    modes.sort_by_key(|m| m.name());
    modes.dedup();

    let mut rows = Vec::new();
    for &b in &backbones {
        let of = |m: Mode| {
            let mut rs: Vec<&SeedResult> = results.iter().filter(|(bb, r)| *bb == b && r.mode == m).map(|(_, r)| r).collect();
            rs.sort_by_key(|r| r.seed);
            rs
        };
        let base = of(Mode::NaiveAll);
        let base_seed = |seed: u64| base.iter().find(|r| r.seed == seed).map(|r| r.test_mse);
        let base_mean = (!base.is_empty()).then(|| base.iter().map(|r| r.test_mse).sum::<f64>() / base.len() as f64);
        for &m in &modes {
            let rs = of(m);
            if rs.is_empty() {
                continue;
            }
            for r in &rs {
                rows.push(BenchRow {
                    backbone: b,
                    mode: m,
                    seed: Some(r.seed),
                    mse: r.test_mse,
                    mae: r.test_mae,
                    improvement_pct: base_seed(r.seed).map_or(f64::NAN, |bm| improvement_pct(bm, r.test_mse)),
                });
            }
            let n = rs.len() as f64;
            let mse = rs.iter().map(|r| r.test_mse).sum::<f64>() / n;
            rows.push(BenchRow {
                backbone: b,
                mode: m,
                seed: None,
                mse,
                mae: rs.iter().map(|r| r.test_mae).sum::<f64>() / n,
                improvement_pct: base_mean.map_or(f64::NAN, |bm| improvement_pct(bm, mse)),
            });
        }
    }
    rows
}

pub fn write_bench_csv<W: std::io::Write>(rows: &[BenchRow], out: W) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| CliError::Core(e.into());
    w.write_record(["backbone", "mode", "seed", "test_mse", "test_mae", "improvement_pct"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.backbone.name().to_string(),
            r.mode.name().to_string(),
            r.seed.map_or_else(|| "mean".to_string(), |s| s.to_string()),
            format!("{:.6}", r.mse),
            format!("{:.6}", r.mae),
            if r.improvement_pct.is_nan() { String::new() } else { format!("{:.2}", r.improvement_pct) },
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(CliError::io("cannot write benchmark table"))?;
    Ok(())
}

/// Runs Naive-all, Naive-last and RRE for every backbone and seed and
/// writes `bench.csv` into the output directory.
pub fn bench(cfg: &ExperimentConfig) -> CliResult<(PathBuf, Vec<BenchRow>)> {
    let data = Dataset::from_config(&cfg.data)?;
    let backbones = if cfg.run.backbones.is_empty() { vec![cfg.env.cell] } else { cfg.run.backbones.clone() };
    let mut results = Vec::new();
    for &b in &backbones {
        let mut c = cfg.clone();
        c.env.cell = b;
        for mode in BENCH_MODES {
            for &s in &c.run.seeds {
                log::info!("bench: {} {} seed {s}", b.name(), mode.name());
                results.push((b, run_seed(&c, &data, mode, s)?));
            }
        }
    }
    let rows = bench_rows(&results);
    let path = cfg.run.output_dir.join("bench.csv");
    write_bench_csv(&rows, create(&path)?)?;
    Ok((path, rows))
}

/// Forecasts every length-`T` window of `input` and writes the predictions
/// plus the per-step action trace (`<output stem>.actions.csv`).
pub fn infer(checkpoint: &Path, input: &Path, output: &Path) -> CliResult<(usize, PathBuf)> {
    let model = TrainedModel::load(checkpoint).map_err(|e| CliError::Checkpoint {
        path: checkpoint.to_path_buf(),
        reason: e.to_string(),
    })?;
    let file = File::open(input).map_err(CliError::io(format!("cannot open {}", input.display())))?;
    let series = read_csv(file, &model.names[model.target])?;
    let cols: Vec<usize> = model
        .names
        .iter()
        .map(|n| {
            series
                .names
                .iter()
                .position(|s| s == n)
                .ok_or_else(|| CliError::Input(format!("input is missing column `{n}`")))
        })
        .collect::<CliResult<_>>()?;
    let (rows, t) = (series.n_steps(), model.window);
    if rows < t {
        return Err(CliError::Input(format!("input has {rows} rows, the model needs at least {t}")));
    }

    let csv_err = |e: csv::Error| CliError::Core(e.into());
    let mut pred = csv::Writer::from_writer(create(output)?);
    let target = &model.names[model.target];
    let mut header = vec!["end_row".to_string()];
    header.extend((1..=model.env.config.horizon).map(|h| format!("{target}_h{h}")));
    pred.write_record(&header).map_err(csv_err)?;
    let actions_path = output.with_extension("actions.csv");
    let mut trace = csv::Writer::from_writer(create(&actions_path)?);
    trace.write_record(["window", "t", "u", "k", "q"]).map_err(csv_err)?;

    let windows = rows - t + 1;
    for w in 0..windows {
        let values = &series.values;
        let data: Vec<f64> = (w..w + t).flat_map(|r| cols.iter().map(move |&c| values.get(r, c))).collect();
        let out = model.infer(&Tensor::matrix(t, cols.len(), data)?)?;
        let mut rec = vec![(w + t - 1).to_string()];
        rec.extend(out.original.iter().map(|v| v.to_string()));
        pred.write_record(&rec).map_err(csv_err)?;
        for (step, a) in out.actions.iter().enumerate() {
            trace
                .write_record([w.to_string(), (step + 1).to_string(), u8::from(a.u).to_string(), a.k.to_string(), u8::from(a.q).to_string()])
                .map_err(csv_err)?;
        }
    }
    pred.flush().map_err(CliError::io(format!("cannot write {}", output.display())))?;
    trace.flush().map_err(CliError::io(format!("cannot write {}", actions_path.display())))?;
    Ok((windows, actions_path))
}

pub fn synth(out: &Path, steps: usize, noise_frac: f64, seed: u64) -> CliResult<()> {
    let cfg = SynthConfig {
        steps,
        noise_frac,
        seed,
        ..SynthConfig::default()
    };
    let series = generate(&cfg)?;
    write_csv(&series, create(out)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn improvement_matches_hand_values() {
        assert!((improvement_pct(0.4, 0.3) - 25.0).abs() < 1e-12);
        assert_eq!(improvement_pct(0.7, 0.7), 0.0);
    }
}
