//! HTTP client for an external generation service.
//!
//! Wire contract: `POST {base}/v1/generate` with a JSON body
//! `{"mode", "source", "max_tokens", "model_id"}`; a 200 response carries
//! `{"text": "..."}`. The service appends the separator to `source` itself.
//! 404 (unknown model) and 422 (bad request) are permanent; 503 and
//! transport failures are retried.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{GenMode, GenRequest, Generator};
use crate::error::{Error, Result};
use crate::text::Text;

pub const DEFAULT_QG_MODEL: &str = "qg";
pub const DEFAULT_AG_MODEL: &str = "ag";

#[derive(Debug, Clone)]
pub struct RemoteGeneratorConfig {
    pub base_url: String,
    pub qg_model: String,
    pub ag_model: String,
    /// Total tries per request, including the first.
    pub max_attempts: u32,
    pub backoff: Duration,
    pub timeout: Duration,
}

impl RemoteGeneratorConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        RemoteGeneratorConfig {
            base_url: base_url.into(),
            qg_model: DEFAULT_QG_MODEL.into(),
            ag_model: DEFAULT_AG_MODEL.into(),
            max_attempts: 3,
            backoff: Duration::from_millis(100),
            timeout: Duration::from_secs(30),
        }
    }
}

#[derive(Serialize)]
struct GenerateBody<'a> {
    mode: &'a str,
    source: &'a str,
    max_tokens: usize,
    model_id: &'a str,
}

#[derive(Deserialize)]
struct GenerateReply {
    text: String,
}

pub struct RemoteGenerator {
    config: RemoteGeneratorConfig,
    agent: ureq::Agent,
}

enum Attempt {
    Retry(String),
    Fatal(String),
}

impl RemoteGenerator {
    pub fn new(config: RemoteGeneratorConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        RemoteGenerator { config, agent }
    }

    fn endpoint(&self) -> String {
        format!("{}/v1/generate", self.config.base_url.trim_end_matches('/'))
    }

    fn try_once(&self, request: &GenRequest) -> std::result::Result<Text, Attempt> {
        let model_id = match request.mode {
            GenMode::Question => &self.config.qg_model,
            GenMode::Answer => &self.config.ag_model,
        };
        let body = GenerateBody {
            mode: request.mode.as_str(),
            source: request.source.raw(),
            max_tokens: request.max_tokens,
            model_id,
        };
        let mut response = match self.agent.post(&self.endpoint()).send_json(&body) {
            Ok(r) => r,
            Err(ureq::Error::StatusCode(code @ (404 | 422))) => {
                return Err(Attempt::Fatal(format!("service answered {code}")))
            }
            Err(ureq::Error::StatusCode(code)) => {
                return Err(Attempt::Retry(format!("service answered {code}")))
            }
            Err(e) => return Err(Attempt::Retry(e.to_string())),
        };
        let reply: GenerateReply = response
            .body_mut()
            .read_json()
            .map_err(|e| Attempt::Fatal(format!("malformed reply: {e}")))?;
        let text = Text::new(reply.text);
        if text.is_empty() {
            return Err(Attempt::Fatal("service returned empty text".into()));
        }
        if text.len() > request.max_tokens {
            log::warn!(
                "service exceeded the {}-token cap ({} tokens); truncating",
                request.max_tokens,
                text.len()
            );
        }
        Ok(text.truncated(request.max_tokens))
    }
}

impl Generator for RemoteGenerator {
    fn generate(&self, request: &GenRequest) -> Result<Text> {
        let attempts = self.config.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.try_once(request) {
                Ok(text) => return Ok(text),
                Err(Attempt::Fatal(msg)) => {
                    return Err(Error::Generation(format!("{}: {msg}", self.endpoint())))
                }
                Err(Attempt::Retry(msg)) => {
                    log::debug!("attempt {attempt}/{attempts} failed: {msg}");
                    last = msg;
                    if attempt < attempts {
                        thread::sleep(self.config.backoff * attempt);
                    }
                }
            }
        }
        Err(Error::Generation(format!(
            "{}: giving up after {attempts} attempts: {last}",
            self.endpoint()
        )))
    }
}
