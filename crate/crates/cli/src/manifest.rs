//! Run manifests: everything needed to replay a `run` exactly.

use std::path::Path;

use ltr_lab::experiment::ExperimentConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    /// Version of the tool that produced the run.
    pub version: String,
    /// Master seed and the derived per-run seeds, as decimal strings.
    pub master_seed: String,
    pub run_seeds: Vec<String>,
    /// Output files, relative to the output directory.
    pub outputs: Vec<String>,
    /// Fully resolved configuration (command-line overrides applied).
    pub config: ExperimentConfig,
}

impl RunManifest {
    pub fn new(config: &ExperimentConfig, outputs: &[&str]) -> Self {
        RunManifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            master_seed: config.seed.to_string(),
            run_seeds: (0..config.n_runs).map(|r| config.run_seed(r).to_string()).collect(),
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
            config: config.clone(),
        }
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Invalid(format!("cannot serialize manifest: {e}")))
    }

    pub fn parse(text: &str) -> Result<RunManifest, CliError> {
        let de = toml::Deserializer::parse(text)
            .map_err(|e| CliError::Config { key: "<manifest>".into(), message: e.message().to_string() })?;
        let manifest: RunManifest = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            CliError::Config { key, message: e.into_inner().message().to_string() }
        })?;
        manifest.config.validate().map_err(|e| CliError::Invalid(format!("invalid manifest config: {e}")))?;
        if manifest.version != env!("CARGO_PKG_VERSION") {
            log::warn!(
                "manifest was written by version {} but this is {}",
                manifest.version,
                env!("CARGO_PKG_VERSION")
            );
        }
        Ok(manifest)
    }

    pub fn read(path: &Path) -> Result<RunManifest, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trips() {
        let cfg = crate::config::parse_config("seed = 18446744073709551\nn_runs = 3\n", None).unwrap();
        let m = RunManifest::new(&cfg, &["results.csv"]);
        assert_eq!(m.run_seeds.len(), 3);
        let back = RunManifest::parse(&m.to_toml().unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
