use std::fs;
use std::path::Path;

use rre_core::trainer::ExperimentConfig;

use crate::error::{CliError, CliResult};

/// Reads a TOML config whose tables mirror the module names (`[data]`,
/// `[env]`, `[agent]`, `[dts]`, `[ppo]`, `[train]`, `[run]`). Missing keys
/// take their defaults; unknown keys are rejected.
pub fn load(path: &Path) -> CliResult<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse(&text)
}

pub fn parse(text: &str) -> CliResult<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(parse("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn sections_override_defaults() {
        let cfg = parse("[env]\ncell = \"lstm\"\nhidden_dim = 8\n\n[run]\nmode = \"naive-last\"\nseeds = [1, 2]\n").unwrap();
        assert_eq!(cfg.env.cell, rre_core::env::CellKind::Lstm);
        assert_eq!(cfg.env.hidden_dim, 8);
        assert_eq!(cfg.run.seeds, vec![1, 2]);
        assert_eq!(cfg.run.mode, rre_core::trainer::Mode::NaiveLast);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse("[train]\nroundz = 3\n").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("roundz"), "{err}");
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let err = parse("[dts]\ngamma = 0.5\n").unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn default_config_round_trips_through_toml() {
        let text = toml::to_string(&ExperimentConfig::default()).unwrap();
        assert_eq!(parse(&text).unwrap(), ExperimentConfig::default());
    }

    fn shipped(name: &str) -> ExperimentConfig {
        load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)).unwrap()
    }

    #[test]
    fn shipped_benchmark_config_matches_the_preset() {
        let mut cfg = shipped("benchmark.toml");
        cfg.run.output_dir = ExperimentConfig::default().run.output_dir;
        assert_eq!(cfg, ExperimentConfig::benchmark());
    }

    #[test]
    fn shipped_quick_config_is_valid() {
        shipped("quick.toml");
    }
}
