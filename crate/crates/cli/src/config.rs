//! Experiment configuration files.

use std::path::{Path, PathBuf};

use ltr_lab::experiment::{DataSource, ExperimentConfig};

use crate::CliError;

/// Parses and validates an experiment config. Relative dataset paths are
/// resolved against `base_dir`.
pub fn parse_config(text: &str, base_dir: Option<&Path>) -> Result<ExperimentConfig, CliError> {
    let de = toml::Deserializer::parse(text)
        .map_err(|e| CliError::Config { key: "<document>".into(), message: e.message().to_string() })?;
    let mut cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        CliError::Config { key, message: e.into_inner().message().to_string() }
    })?;
    if let Some(base) = base_dir {
        resolve_paths(&mut cfg.data, base);
    }
    cfg.validate().map_err(|e| CliError::Invalid(format!("invalid config: {e}")))?;
    Ok(cfg)
}

pub fn read_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    parse_config(&text, path.parent())
}

fn resolve_paths(data: &mut DataSource, base: &Path) {
    let absolute = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    if let DataSource::Letor { train, validation, test, .. } = data {
        absolute(train);
        absolute(test);
        if let Some(v) = validation {
            absolute(v);
        }
    }
}

/// Serializes a config back to TOML.
pub fn to_toml(cfg: &ExperimentConfig) -> Result<String, CliError> {
    toml::to_string(cfg).map_err(|e| CliError::Invalid(format!("cannot serialize config: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ltr_lab::estimators::DeltaKind;

    #[test]
    fn minimal_config_takes_documented_defaults() {
        let cfg = parse_config("", None).unwrap();
        assert_eq!(cfg.total_timesteps, 20_000);
        assert_eq!(cfg.n_interventions, 0);
        assert_eq!(cfg.t_min, 100);
        assert_eq!(cfg.n_runs, 20);
        assert_eq!(cfg.estimator, DeltaKind::InterventionAware);
        assert_eq!(cfg.bootstrap_fraction, 0.01);
        assert_eq!(cfg.policy.temperature, 1.0);
        assert_eq!(cfg.optimizer.validation_fraction, 0.15);
        assert_eq!(cfg.optimizer.patience, 5);
        assert_eq!(cfg.optimizer.batch_size, 32);
        assert_eq!(cfg.bias.alphas(), &[0.35, 0.53, 0.55, 0.54, 0.52]);
        assert_eq!(cfg.resolved_eval_points().len(), 20);
    }

    #[test]
    fn bias_vectors_are_echoed() {
        let cfg = parse_config(
            "[bias]\nalpha = [0.35, 0.53, 0.55, 0.54, 0.52]\nbeta = [0.65, 0.26, 0.15, 0.11, 0.08]\n",
            None,
        )
        .unwrap();
        assert_eq!(cfg.bias.alphas(), &[0.35, 0.53, 0.55, 0.54, 0.52]);
        assert_eq!(cfg.bias.betas(), &[0.65, 0.26, 0.15, 0.11, 0.08]);
    }

    fn error_of(text: &str) -> String {
        parse_config(text, None).unwrap_err().to_string()
    }

    #[test]
    fn errors_name_the_key() {
        assert!(error_of("n_interventions = -1\n").contains("n_interventions"));
        assert!(error_of("[optimizer]\nlearning_rate = \"fast\"\n").contains("optimizer.learning_rate"));
        let unknown = error_of("[optimizer]\nmomentum = 0.9\n");
        assert!(unknown.contains("momentum"), "{unknown}");
        assert!(error_of("t_min = 50000\n").contains("t_min"));
        assert!(error_of("estimator = \"dr\"\n").contains("estimator"));
        assert!(error_of("n_runs = [").contains("<document>"));
    }

    #[test]
    fn letor_paths_resolve_against_the_config_directory() {
        let text = "[data]\nkind = \"letor\"\ntrain = \"train.txt\"\ntest = \"/abs/test.txt\"\n";
        let cfg = parse_config(text, Some(Path::new("/data/set"))).unwrap();
        match cfg.data {
            DataSource::Letor { train, test, .. } => {
                assert_eq!(train, PathBuf::from("/data/set/train.txt"));
                assert_eq!(test, PathBuf::from("/abs/test.txt"));
            }
            other => panic!("unexpected source {other:?}"),
        }
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = parse_config("seed = 9\n[policy]\ntemperature = 0.05\n", None).unwrap();
        assert_eq!(parse_config(&to_toml(&cfg).unwrap(), None).unwrap(), cfg);
    }
}
