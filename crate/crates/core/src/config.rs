//! TOML application config: provider sections, retrieval knobs, prompt
//! directory, and evaluation options.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::gateway::{Gateway, HttpProvider, ProviderConfig, Script};
use crate::metrics::ROUGE_BETA_DEFAULT;
use crate::prompts::PromptSet;
use crate::pyramid::{DEPTH_CAP_DEFAULT, DEPTH_CAP_MAX};
use crate::reflect::{LoopConfig, MAX_ROUNDS_DEFAULT};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    #[serde(default)]
    pub provider: Providers,
    #[serde(default)]
    pub retrieval: Retrieval,
    #[serde(default)]
    pub prompts: Prompts,
    #[serde(default)]
    pub eval: Eval,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Providers {
    #[serde(default)]
    pub main: ProviderSection,
    #[serde(default = "ProviderSection::aux_default")]
    pub aux: ProviderSection,
}

impl Default for Providers {
    fn default() -> Self {
        Providers {
            main: ProviderSection::default(),
            aux: ProviderSection::aux_default(),
        }
    }
}

/// One provider section. `kind = "openai"` talks to an OpenAI-compatible
/// endpoint; `kind = "scripted"` replays a response script from disk.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderSection {
    #[serde(default)]
    pub kind: ProviderKind,
    #[serde(default = "defaults::base_url")]
    pub base_url: String,
    #[serde(default = "defaults::main_model")]
    pub model_name: String,
    #[serde(default = "defaults::api_key_env")]
    pub api_key_env: String,
    #[serde(default = "defaults::timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "defaults::max_retries")]
    pub max_retries: u32,
    /// Path to a script JSON file, required when kind = "scripted".
    #[serde(default)]
    pub script: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Openai,
    Scripted,
}

mod defaults {
    pub fn base_url() -> String {
        "https://api.openai.com/v1".to_string()
    }
    pub fn main_model() -> String {
        "gpt-4o".to_string()
    }
    pub fn aux_model() -> String {
        "gpt-4o-mini".to_string()
    }
    pub fn api_key_env() -> String {
        "OPENAI_API_KEY".to_string()
    }
    pub fn timeout_secs() -> u64 {
        60
    }
    pub fn max_retries() -> u32 {
        3
    }
}

impl Default for ProviderSection {
    fn default() -> Self {
        ProviderSection {
            kind: ProviderKind::Openai,
            base_url: defaults::base_url(),
            model_name: defaults::main_model(),
            api_key_env: defaults::api_key_env(),
            timeout_secs: defaults::timeout_secs(),
            max_retries: defaults::max_retries(),
            script: None,
        }
    }
}

impl ProviderSection {
    fn aux_default() -> Self {
        ProviderSection {
            model_name: defaults::aux_model(),
            ..ProviderSection::default()
        }
    }

    /// Build a gateway for this section. Script paths are resolved
    /// relative to `base_dir` (normally the config file's directory).
    pub fn build_gateway(&self, base_dir: &Path) -> Result<Gateway> {
        match self.kind {
            ProviderKind::Openai => {
                if self.timeout_secs == 0 {
                    return Err(Error::Config("timeout_secs must be positive".into()));
                }
                Ok(Gateway::new(Box::new(HttpProvider::new(ProviderConfig {
                    base_url: self.base_url.clone(),
                    model_name: self.model_name.clone(),
                    api_key_env: self.api_key_env.clone(),
                    request_timeout: Duration::from_secs(self.timeout_secs),
                    max_retries: self.max_retries,
                }))))
            }
            ProviderKind::Scripted => {
                let rel = self.script.as_ref().ok_or_else(|| {
                    Error::Config("scripted provider needs a `script` path".into())
                })?;
                let path = if rel.is_absolute() {
                    rel.clone()
                } else {
                    base_dir.join(rel)
                };
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                Ok(Gateway::scripted(Script::from_json(&text)?))
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Retrieval {
    #[serde(default = "defaults_depth")]
    pub depth: usize,
    #[serde(default = "defaults_max_rounds")]
    pub max_rounds: usize,
}

fn defaults_depth() -> usize {
    DEPTH_CAP_DEFAULT
}

fn defaults_max_rounds() -> usize {
    MAX_ROUNDS_DEFAULT
}

impl Default for Retrieval {
    fn default() -> Self {
        Retrieval {
            depth: DEPTH_CAP_DEFAULT,
            max_rounds: MAX_ROUNDS_DEFAULT,
        }
    }
}

impl Retrieval {
    pub fn loop_config(&self) -> Result<LoopConfig> {
        if self.depth == 0 || self.depth > DEPTH_CAP_MAX {
            return Err(Error::Config(format!(
                "retrieval.depth must be in 1..={DEPTH_CAP_MAX}"
            )));
        }
        if self.max_rounds == 0 {
            return Err(Error::Config("retrieval.max_rounds must be positive".into()));
        }
        Ok(LoopConfig {
            depth_cap: self.depth,
            max_rounds: self.max_rounds,
        })
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prompts {
    /// Directory with prompt template overrides.
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Eval {
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_rouge_beta")]
    pub rouge_beta: f64,
    /// Directory for per-conversation bank snapshots keyed by content
    /// hash; repeated evaluations skip re-ingestion.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

fn default_parallelism() -> usize {
    1
}

fn default_rouge_beta() -> f64 {
    ROUGE_BETA_DEFAULT
}

impl Default for Eval {
    fn default() -> Self {
        Eval {
            parallelism: 1,
            rouge_beta: ROUGE_BETA_DEFAULT,
            cache_dir: None,
        }
    }
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Prompt set honoring the configured override directory.
    pub fn prompt_set(&self) -> Result<PromptSet> {
        match &self.prompts.dir {
            Some(dir) => PromptSet::from_dir(dir),
            None => Ok(PromptSet::builtin()),
        }
    }
}
