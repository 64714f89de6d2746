//! Deterministic scripted provider for tests and offline runs.
//!
//! Responses resolve in a fixed order: exact (role, user-prompt hash)
//! entries first, then substring rules in declaration order, then the
//! per-role default. The provider is pure: identical requests always get
//! identical responses, which keeps end-to-end traces byte-reproducible.

use std::collections::HashMap;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::keyword::fnv1a64;

use super::{ChatRequest, Provider, RoleTag};

#[derive(Debug, Clone)]
struct Rule {
    role: RoleTag,
    needle: String,
    response: String,
}

/// Response script for a [`ScriptedProvider`].
#[derive(Debug, Clone, Default)]
pub struct Script {
    exact: HashMap<(RoleTag, u64), String>,
    rules: Vec<Rule>,
    defaults: HashMap<RoleTag, String>,
}

impl Script {
    pub fn new() -> Self {
        Script::default()
    }

    /// Respond to this exact user prompt (keyed by hash) for a role.
    pub fn exact(mut self, role: RoleTag, user_prompt: &str, response: &str) -> Self {
        self.exact
            .insert((role, fnv1a64(user_prompt)), response.to_string());
        self
    }

    /// Respond when the user prompt contains `needle`. Rules are checked
    /// in the order they were added.
    pub fn when_contains(mut self, role: RoleTag, needle: &str, response: &str) -> Self {
        self.rules.push(Rule {
            role,
            needle: needle.to_string(),
            response: response.to_string(),
        });
        self
    }

    /// Fallback response for a role.
    pub fn default_for(mut self, role: RoleTag, response: &str) -> Self {
        self.defaults.insert(role, response.to_string());
        self
    }

    fn resolve(&self, request: &ChatRequest) -> Option<&str> {
        if let Some(r) = self
            .exact
            .get(&(request.role, fnv1a64(&request.user_prompt)))
        {
            return Some(r);
        }
        for rule in &self.rules {
            if rule.role == request.role && request.user_prompt.contains(&rule.needle) {
                return Some(&rule.response);
            }
        }
        self.defaults.get(&request.role).map(String::as_str)
    }
}

/// On-disk form of a script, for CLI runs with `kind = "scripted"`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptFile {
    #[serde(default)]
    pub defaults: HashMap<RoleTag, String>,
    #[serde(default)]
    pub rules: Vec<ScriptRule>,
    #[serde(default)]
    pub exact: Vec<ScriptExact>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptRule {
    pub role: RoleTag,
    pub contains: String,
    pub response: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptExact {
    pub role: RoleTag,
    pub user_prompt: String,
    pub response: String,
}

impl From<ScriptFile> for Script {
    fn from(file: ScriptFile) -> Self {
        let mut script = Script::new();
        for e in file.exact {
            script = script.exact(e.role, &e.user_prompt, &e.response);
        }
        for r in file.rules {
            script = script.when_contains(r.role, &r.contains, &r.response);
        }
        for (role, response) in file.defaults {
            script = script.default_for(role, &response);
        }
        script
    }
}

impl Script {
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ScriptFile = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("script file: {e}")))?;
        Ok(file.into())
    }
}

pub struct ScriptedProvider {
    script: Script,
}

impl ScriptedProvider {
    pub fn new(script: Script) -> Self {
        ScriptedProvider { script }
    }
}

impl Provider for ScriptedProvider {
    fn complete_text(&self, request: &ChatRequest) -> Result<String> {
        self.script
            .resolve(request)
            .map(str::to_string)
            .ok_or_else(|| Error::ScriptMiss(request.role.to_string()))
    }

    fn name(&self) -> &str {
        "scripted"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_beats_rules_beats_default() {
        let script = Script::new()
            .exact(RoleTag::Answer, "the exact prompt", "from-exact")
            .when_contains(RoleTag::Answer, "exact", "from-rule")
            .default_for(RoleTag::Answer, "from-default");
        let provider = ScriptedProvider::new(script);

        let exact = ChatRequest::new(RoleTag::Answer, "s", "the exact prompt");
        assert_eq!(provider.complete_text(&exact).unwrap(), "from-exact");

        let ruled = ChatRequest::new(RoleTag::Answer, "s", "almost exact prompt");
        assert_eq!(provider.complete_text(&ruled).unwrap(), "from-rule");

        let other = ChatRequest::new(RoleTag::Answer, "s", "unrelated");
        assert_eq!(provider.complete_text(&other).unwrap(), "from-default");
    }

    #[test]
    fn rules_are_checked_in_order() {
        let script = Script::new()
            .when_contains(RoleTag::Answer, "blue", "first")
            .when_contains(RoleTag::Answer, "blue bike", "second");
        let provider = ScriptedProvider::new(script);
        let req = ChatRequest::new(RoleTag::Answer, "s", "a blue bike");
        assert_eq!(provider.complete_text(&req).unwrap(), "first");
    }

    #[test]
    fn roles_are_independent() {
        let script = Script::new().default_for(RoleTag::Select, "selected");
        let provider = ScriptedProvider::new(script);
        let req = ChatRequest::new(RoleTag::Answer, "s", "u");
        assert!(matches!(
            provider.complete_text(&req),
            Err(Error::ScriptMiss(_))
        ));
    }

    #[test]
    fn script_file_round_trip() {
        let json = r#"{
            "defaults": {"answer": "fallback"},
            "rules": [{"role": "answer", "contains": "x", "response": "ruled"}],
            "exact": [{"role": "select", "user_prompt": "u", "response": "sel"}]
        }"#;
        let script = Script::from_json(json).unwrap();
        let provider = ScriptedProvider::new(script);
        assert_eq!(
            provider
                .complete_text(&ChatRequest::new(RoleTag::Select, "s", "u"))
                .unwrap(),
            "sel"
        );
        assert_eq!(
            provider
                .complete_text(&ChatRequest::new(RoleTag::Answer, "s", "has x inside"))
                .unwrap(),
            "ruled"
        );
        assert_eq!(
            provider
                .complete_text(&ChatRequest::new(RoleTag::Answer, "s", "other"))
                .unwrap(),
            "fallback"
        );
    }
}
