//! Model backends: anything that turns a chat prompt into completions.

mod http;
mod scripted;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompting::ChatPrompt;

pub use http::HttpChatBackend;
pub use scripted::{load_scenarios, DefectProfile, ScriptedBackend};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<u32>,
    pub n_samples: u32,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl DecodeParams {
    pub fn sampled(temperature: f64, n_samples: u32, max_tokens: u32, seed: Option<u64>) -> Self {
        Self {
            temperature,
            top_k: None,
            n_samples,
            max_tokens,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(BackendError::Config(format!("invalid temperature {}", self.temperature)));
        }
        if self.n_samples == 0 {
            return Err(BackendError::Config("n_samples must be at least 1".into()));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::Config("max_tokens must be at least 1".into()));
        }
        if self.top_k == Some(0) {
            return Err(BackendError::Config("top_k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("request timed out")]
    Timeout,
    #[error("backend returned HTTP {0}")]
    HttpStatus(u16),
    #[error("credential variable {0} is not set")]
    AuthMissing(String),
    #[error("backend still overloaded after {attempts} attempts")]
    Overloaded { attempts: u32 },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("invalid response: {0}")]
    InvalidResponse(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

pub trait Backend: Send + Sync {
    /// Exactly `params.n_samples` completions on success.
    fn complete(&self, prompt: &ChatPrompt, params: &DecodeParams) -> Result<Vec<String>, BackendError>;

    /// Upper bound on concurrent requests worth issuing.
    fn max_in_flight(&self) -> usize;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    HttpChat,
    Scripted,
}

fn default_timeout() -> u64 {
    120
}
fn default_in_flight() -> usize {
    4
}
fn default_attempts() -> u32 {
    4
}
fn default_retry_base() -> u64 {
    500
}
fn default_decay() -> f64 {
    1.0
}

/// Backend settings as they appear in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    /// Full URL of an OpenAI-style chat completions route.
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model_id: Option<String>,
    /// Name of the environment variable holding a bearer token.
    #[serde(default)]
    pub auth_env_var: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_retry_base")]
    pub retry_base_ms: u64,
    #[serde(default)]
    pub defects: DefectProfile,
    /// Scripted only: defect rates shrink by this factor per round.
    #[serde(default = "default_decay")]
    pub decay_per_round: f64,
    /// Scripted only: JSONL scenarios the backend answers from.
    #[serde(default)]
    pub scenario_file: Option<PathBuf>,
}

impl BackendDescriptor {
    pub fn scripted(defects: DefectProfile) -> Self {
        Self {
            kind: BackendKind::Scripted,
            endpoint: None,
            model_id: None,
            auth_env_var: None,
            timeout_secs: default_timeout(),
            max_in_flight: default_in_flight(),
            max_attempts: default_attempts(),
            retry_base_ms: default_retry_base(),
            defects,
            decay_per_round: default_decay(),
            scenario_file: None,
        }
    }

    pub fn http(endpoint: impl Into<String>, model_id: impl Into<String>) -> Self {
        Self {
            kind: BackendKind::HttpChat,
            endpoint: Some(endpoint.into()),
            model_id: Some(model_id.into()),
            ..Self::scripted(DefectProfile::default())
        }
    }
}

/// Instantiate a backend. `round` only affects scripted defect decay.
pub fn build_backend(desc: &BackendDescriptor, round: u32) -> Result<Box<dyn Backend>, BackendError> {
    if desc.max_in_flight == 0 {
        return Err(BackendError::Config("max_in_flight must be at least 1".into()));
    }
    match desc.kind {
        BackendKind::HttpChat => Ok(Box::new(HttpChatBackend::from_descriptor(desc)?)),
        BackendKind::Scripted => {
            let profile = desc.defects.decayed(desc.decay_per_round, round);
            profile.check()?;
            let mut backend = ScriptedBackend::new(profile).with_max_in_flight(desc.max_in_flight);
            if let Some(path) = &desc.scenario_file {
                backend = backend.with_scenarios(load_scenarios(path)?);
            }
            Ok(Box::new(backend))
        }
    }
}
