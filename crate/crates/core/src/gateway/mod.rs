//! Uniform chat-completion interface with call/token/latency accounting.
//!
//! Two providers implement it: an OpenAI-compatible HTTP backend and a
//! deterministic scripted backend for tests. Token estimates use the
//! cost model in [`crate::metrics`] on the exact strings sent and
//! received, so accounting is comparable across providers.

mod http;
mod parse;
mod scripted;

use std::fmt;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::centitokens;

pub use http::{HttpProvider, ProviderConfig};
pub use parse::{
    parse_assessment, parse_keyword_list, parse_match_result, parse_selection, parse_structured,
    Assessment, KeywordMatch, MatchOutput, Parsed, Schema,
};
pub use scripted::{Script, ScriptedProvider};

/// Which pipeline step a request belongs to. Scripted responses key on
/// this, and accounting reports split auxiliary from main usage by it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleTag {
    Extract,
    Match,
    Select,
    Answer,
    Rewrite,
}

impl fmt::Display for RoleTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            RoleTag::Extract => "extract",
            RoleTag::Match => "match",
            RoleTag::Select => "select",
            RoleTag::Answer => "answer",
            RoleTag::Rewrite => "rewrite",
        };
        f.write_str(name)
    }
}

/// One chat-completion request: a system prompt, a user prompt, and the
/// sampling temperature (0.0 unless overridden).
#[derive(Debug, Clone)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature: f64,
    pub role: RoleTag,
}

impl ChatRequest {
    pub fn new(role: RoleTag, system_prompt: impl Into<String>, user_prompt: impl Into<String>) -> Self {
        ChatRequest {
            system_prompt: system_prompt.into(),
            user_prompt: user_prompt.into(),
            temperature: 0.0,
            role,
        }
    }
}

/// Completion text plus the cost observables for this call. Token
/// estimates are integers in hundredths of a token.
#[derive(Debug, Clone)]
pub struct ChatResponse {
    pub text: String,
    pub centitokens_in: u64,
    pub centitokens_out: u64,
    pub latency: Duration,
}

impl ChatResponse {
    pub fn tokens_in(&self) -> f64 {
        self.centitokens_in as f64 / 100.0
    }

    pub fn tokens_out(&self) -> f64 {
        self.centitokens_out as f64 / 100.0
    }
}

/// A chat-completion backend. Implementations must be shareable across
/// concurrent query evaluations.
pub trait Provider: Send + Sync {
    fn complete_text(&self, request: &ChatRequest) -> Result<String>;
    fn name(&self) -> &str;
}

/// Monotonic accounting totals for one gateway.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterSnapshot {
    pub calls: u64,
    pub centitokens_in: u64,
    pub centitokens_out: u64,
    pub total_latency_ms: u64,
}

impl CounterSnapshot {
    pub fn centitokens(&self) -> u64 {
        self.centitokens_in + self.centitokens_out
    }

    pub fn tokens(&self) -> f64 {
        self.centitokens() as f64 / 100.0
    }
}

/// Provider plus thread-safe accounting. Every `complete` increments the
/// call counter by exactly one and adds token estimates computed on the
/// wire strings.
pub struct Gateway {
    provider: Box<dyn Provider>,
    counters: Mutex<CounterSnapshot>,
}

impl Gateway {
    pub fn new(provider: Box<dyn Provider>) -> Self {
        Gateway {
            provider,
            counters: Mutex::new(CounterSnapshot::default()),
        }
    }

    /// Gateway over a scripted provider; the standard test harness entry.
    pub fn scripted(script: Script) -> Self {
        Gateway::new(Box::new(ScriptedProvider::new(script)))
    }

    pub fn provider_name(&self) -> &str {
        self.provider.name()
    }

    pub fn counters(&self) -> CounterSnapshot {
        *self.counters.lock().expect("gateway counter lock")
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse> {
        if request.system_prompt.trim().is_empty() {
            return Err(Error::EmptyPrompt("system prompt"));
        }
        if request.user_prompt.trim().is_empty() {
            return Err(Error::EmptyPrompt("user prompt"));
        }
        if !(0.0..=2.0).contains(&request.temperature) {
            return Err(Error::Validation(format!(
                "temperature {} outside [0, 2]",
                request.temperature
            )));
        }
        let tokens_in =
            centitokens(&request.system_prompt) + centitokens(&request.user_prompt);
        {
            let mut c = self.counters.lock().expect("gateway counter lock");
            c.calls += 1;
            c.centitokens_in += tokens_in;
        }
        let start = Instant::now();
        let text = self.provider.complete_text(request)?;
        let latency = start.elapsed();
        let tokens_out = centitokens(&text);
        {
            let mut c = self.counters.lock().expect("gateway counter lock");
            c.centitokens_out += tokens_out;
            c.total_latency_ms += latency.as_millis() as u64;
        }
        Ok(ChatResponse {
            text,
            centitokens_in: tokens_in,
            centitokens_out: tokens_out,
            latency,
        })
    }
}
