use std::sync::{Condvar, Mutex};
use std::time::Duration;

use log::{debug, warn};
use serde_json::{json, Value};

use super::{Backend, BackendDescriptor, BackendError, DecodeParams};
use crate::prompting::ChatPrompt;

/// Counting gate that caps concurrent requests.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

/// Client for OpenAI-style chat completion endpoints.
pub struct HttpChatBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    model_id: String,
    auth_env_var: Option<String>,
    max_in_flight: usize,
    max_attempts: u32,
    retry_base: Duration,
    gate: Gate,
}

enum Attempt {
    Done(Vec<String>),
    Retry(BackendError),
    Fail(BackendError),
}

impl HttpChatBackend {
    pub fn from_descriptor(desc: &BackendDescriptor) -> Result<Self, BackendError> {
        let endpoint = desc
            .endpoint
            .clone()
            .ok_or_else(|| BackendError::Config("http_chat backend needs an endpoint".into()))?;
        let model_id = desc
            .model_id
            .clone()
            .ok_or_else(|| BackendError::Config("http_chat backend needs a model_id".into()))?;
        if desc.max_attempts == 0 {
            return Err(BackendError::Config("max_attempts must be at least 1".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(desc.timeout_secs))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self {
            client,
            endpoint,
            model_id,
            auth_env_var: desc.auth_env_var.clone(),
            max_in_flight: desc.max_in_flight.max(1),
            max_attempts: desc.max_attempts,
            retry_base: Duration::from_millis(desc.retry_base_ms),
            gate: Gate::new(desc.max_in_flight.max(1)),
        })
    }

    fn body(&self, prompt: &ChatPrompt, params: &DecodeParams, n: u32, seed: Option<u64>) -> Value {
        let mut body = json!({
            "model": self.model_id,
            "messages": prompt.messages,
            "temperature": params.temperature,
            "n": n,
            "max_tokens": params.max_tokens,
        });
        if let Some(k) = params.top_k {
            body["top_k"] = json!(k);
        }
        if let Some(s) = seed {
            body["seed"] = json!(s);
        }
        body
    }

    fn token(&self) -> Result<Option<String>, BackendError> {
        match &self.auth_env_var {
            None => Ok(None),
            Some(var) => match std::env::var(var) {
                Ok(v) if !v.is_empty() => Ok(Some(v)),
                _ => Err(BackendError::AuthMissing(var.clone())),
            },
        }
    }

    fn attempt(&self, body: &Value) -> Attempt {
        let token = match self.token() {
            Ok(t) => t,
            Err(e) => return Attempt::Fail(e),
        };
        let _permit = self.gate.acquire();
        let mut req = self.client.post(&self.endpoint).json(body);
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) if e.is_timeout() => return Attempt::Retry(BackendError::Timeout),
            Err(e) => return Attempt::Retry(BackendError::Transport(e.to_string())),
        };
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Attempt::Retry(BackendError::HttpStatus(status.as_u16()));
        }
        if !status.is_success() {
            return Attempt::Fail(BackendError::HttpStatus(status.as_u16()));
        }
        let value: Value = match resp.json() {
            Ok(v) => v,
            Err(e) if e.is_timeout() => return Attempt::Retry(BackendError::Timeout),
            Err(e) => return Attempt::Fail(BackendError::InvalidResponse(e.to_string())),
        };
        match parse_choices(&value) {
            Ok(texts) => Attempt::Done(texts),
            Err(e) => Attempt::Fail(e),
        }
    }

    fn request(&self, body: &Value) -> Result<Vec<String>, BackendError> {
        let mut last = None;
        for attempt in 1..=self.max_attempts {
            match self.attempt(body) {
                Attempt::Done(texts) => return Ok(texts),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(e) => {
                    debug!("attempt {attempt} failed: {e}");
                    last = Some(e);
                    if attempt < self.max_attempts {
                        let factor = 1u32 << (attempt - 1).min(6);
                        std::thread::sleep((self.retry_base * factor).min(Duration::from_secs(30)));
                    }
                }
            }
        }
        Err(match last {
            Some(BackendError::HttpStatus(_)) => BackendError::Overloaded {
                attempts: self.max_attempts,
            },
            Some(e) => e,
            None => BackendError::Overloaded { attempts: 0 },
        })
    }
}

fn parse_choices(value: &Value) -> Result<Vec<String>, BackendError> {
    let choices = value
        .get("choices")
        .and_then(Value::as_array)
        .ok_or_else(|| BackendError::InvalidResponse("missing choices array".into()))?;
    choices
        .iter()
        .map(|c| match c.pointer("/message/content") {
            Some(Value::String(s)) => Ok(s.clone()),
            Some(Value::Null) => Ok(String::new()),
            _ => Err(BackendError::InvalidResponse("choice without message content".into())),
        })
        .collect()
}

impl Backend for HttpChatBackend {
    fn complete(&self, prompt: &ChatPrompt, params: &DecodeParams) -> Result<Vec<String>, BackendError> {
        params.validate()?;
        let n = params.n_samples;
        let mut texts = if n > 1 {
            match self.request(&self.body(prompt, params, n, params.seed)) {
                Ok(t) => t,
                Err(BackendError::HttpStatus(code @ (400 | 422))) => {
                    warn!("endpoint rejected n={n} (HTTP {code}); sampling one at a time");
                    Vec::new()
                }
                Err(e) => return Err(e),
            }
        } else {
            Vec::new()
        };
        texts.truncate(n as usize);
        // Endpoints without multi-sample support get one request per sample.
        while texts.len() < n as usize {
            let i = texts.len() as u64;
            let seed = params.seed.map(|s| s.wrapping_add(i));
            let got = self.request(&self.body(prompt, params, 1, seed))?;
            let first = got
                .into_iter()
                .next()
                .ok_or_else(|| BackendError::InvalidResponse("empty choices array".into()))?;
            texts.push(first);
        }
        Ok(texts)
    }

    fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }
}
