//! OpenAI-compatible chat-completions backend.
//!
//! `POST {base_url}/chat/completions` with a bearer token taken from a
//! configurable environment variable; reads
//! `choices[0].message.content`. Transient transport failures and
//! throttling statuses are retried with jittered exponential backoff.

use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{ChatRequest, Provider};

const BACKOFF_BASE_MS: u64 = 200;

/// Remote provider settings. The API key itself never lives in config
/// files, only the name of the environment variable that holds it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub base_url: String,
    pub model_name: String,
    pub api_key_env: String,
    pub request_timeout: Duration,
    pub max_retries: u32,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            base_url: "https://api.openai.com/v1".to_string(),
            model_name: "gpt-4o-mini".to_string(),
            api_key_env: "OPENAI_API_KEY".to_string(),
            request_timeout: Duration::from_secs(60),
            max_retries: 3,
        }
    }
}

pub struct HttpProvider {
    config: ProviderConfig,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(config: ProviderConfig) -> Self {
        let agent_config = ureq::Agent::config_builder()
            .timeout_global(Some(config.request_timeout))
            .http_status_as_error(false)
            .build();
        HttpProvider {
            config,
            agent: agent_config.into(),
        }
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    fn endpoint(&self) -> String {
        format!(
            "{}/chat/completions",
            self.config.base_url.trim_end_matches('/')
        )
    }

    fn request_once(&self, key: &str, body: &serde_json::Value) -> Attempt {
        let sent = self
            .agent
            .post(&self.endpoint())
            .header("Authorization", &format!("Bearer {key}"))
            .send_json(body);
        let mut response = match sent {
            Ok(r) => r,
            Err(e) => return Attempt::Transport(e.to_string()),
        };
        let status = response.status().as_u16();
        let text = match response.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Transport(e.to_string()),
        };
        if (200..300).contains(&status) {
            Attempt::Success(text)
        } else if status == 429 || status >= 500 {
            Attempt::Retryable(status, text)
        } else {
            Attempt::Fatal(status, text)
        }
    }
}

enum Attempt {
    Success(String),
    Transport(String),
    Retryable(u16, String),
    Fatal(u16, String),
}

fn backoff(attempt: u32) -> Duration {
    let base = BACKOFF_BASE_MS.saturating_mul(1 << attempt.min(6));
    let jitter = rand::rng().random_range(0..=base / 2);
    Duration::from_millis(base + jitter)
}

fn extract_content(body: &str) -> Result<String> {
    let value: serde_json::Value = serde_json::from_str(body)
        .map_err(|e| Error::BadProviderResponse(format!("invalid JSON body: {e}")))?;
    value["choices"][0]["message"]["content"]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| {
            Error::BadProviderResponse(format!(
                "missing choices[0].message.content in {}",
                truncate(body)
            ))
        })
}

fn truncate(text: &str) -> String {
    let mut s: String = text.chars().take(160).collect();
    if s.len() < text.len() {
        s.push_str("...");
    }
    s
}

impl Provider for HttpProvider {
    fn complete_text(&self, request: &ChatRequest) -> Result<String> {
        let key = std::env::var(&self.config.api_key_env)
            .map_err(|_| Error::MissingApiKey(self.config.api_key_env.clone()))?;
        let body = serde_json::json!({
            "model": self.config.model_name,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
            "temperature": request.temperature,
        });

        let attempts = self.config.max_retries + 1;
        let mut last_transport = String::new();
        let mut last_status: Option<(u16, String)> = None;
        for attempt in 0..attempts {
            match self.request_once(&key, &body) {
                Attempt::Success(text) => return extract_content(&text),
                Attempt::Fatal(status, body) => {
                    return Err(Error::HttpStatus {
                        status,
                        body: truncate(&body),
                    })
                }
                Attempt::Transport(detail) => last_transport = detail,
                Attempt::Retryable(status, body) => last_status = Some((status, body)),
            }
            if attempt + 1 < attempts {
                std::thread::sleep(backoff(attempt));
            }
        }
        if let Some((status, body)) = last_status {
            return Err(Error::HttpStatus {
                status,
                body: truncate(&body),
            });
        }
        Err(Error::Transport {
            attempts,
            detail: last_transport,
        })
    }

    fn name(&self) -> &str {
        &self.config.model_name
    }
}
