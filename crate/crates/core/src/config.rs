//! The declarative pipeline config: backend, evolution settings and paths.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendDescriptor, BackendKind};
use crate::eval_harness::LiveWeights;
use crate::evolution::EvolutionConfig;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    /// Query file; `{round}` is replaced by the round number.
    #[serde(default)]
    pub queries: Option<String>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub cases: Option<PathBuf>,
    #[serde(default)]
    pub toolpool: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub backend: BackendDescriptor,
    #[serde(default)]
    pub evolution: EvolutionConfig,
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default)]
    pub live_weights: LiveWeights,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Load a config file. Relative paths inside it are resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text).map_err(|message| ConfigError::Parse {
            path: path.to_owned(),
            message,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(q) = &mut self.paths.queries {
            if Path::new(q.as_str()).is_relative() {
                *q = base.join(q.as_str()).to_string_lossy().into_owned();
            }
        }
        for p in [&mut self.paths.out_dir, &mut self.paths.cases, &mut self.paths.toolpool]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        if let Some(p) = &mut self.backend.scenario_file {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let b = &self.backend;
        if b.kind == BackendKind::HttpChat && (b.endpoint.is_none() || b.model_id.is_none()) {
            return Err(ConfigError::Invalid("http_chat backend requires endpoint and model_id".into()));
        }
        if b.max_in_flight == 0 {
            return Err(ConfigError::Invalid("max_in_flight must be at least 1".into()));
        }
        b.defects.check().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.evolution
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn queries_path(&self, round: u32) -> Option<PathBuf> {
        self.paths
            .queries
            .as_ref()
            .map(|q| PathBuf::from(q.replace("{round}", &round.to_string())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_scripted_config() {
        let cfg = PipelineConfig::from_toml("[backend]\nkind = \"scripted\"\n").unwrap();
        assert_eq!(cfg.evolution, EvolutionConfig::default());
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn http_needs_endpoint() {
        let cfg = PipelineConfig::from_toml("[backend]\nkind = \"http_chat\"\nmodel_id = \"m\"\n").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(
            &path,
            "[backend]\nkind = \"scripted\"\n[backend.defects]\np_wrong_answer = 0.2\n[evolution]\nn_samples = 3\n[paths]\nqueries = \"q-{round}.txt\"\nout_dir = \"out\"\n",
        )
        .unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        assert_eq!(cfg.queries_path(2).unwrap(), dir.path().join("q-2.txt"));
        assert_eq!(cfg.paths.out_dir.unwrap(), dir.path().join("out"));
        assert_eq!(cfg.evolution.n_samples, 3);
        assert_eq!(cfg.backend.defects.p_wrong_answer, 0.2);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(PipelineConfig::from_toml("[backend]\nkind = \"scripted\"\nbogus = 1\n").is_err());
    }
}
