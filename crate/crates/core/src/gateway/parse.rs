//! Structured-output parsing for LLM completions.
//!
//! Models are instructed to emit a single JSON object, but real
//! completions arrive wrapped in prose, code fences, or both. The parser
//! extracts the first balanced JSON object that parses, then checks the
//! declared schema's fields. Every failure is a classified error carrying
//! the offending snippet; nothing here panics on model output.

use serde_json::Value;

use crate::error::{Error, Result};
use crate::store::MemoryId;

/// Output schemas the pipeline expects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schema {
    KeywordList,
    MatchResult,
    Selection,
    AnswerAssessment,
}

/// A completion parsed under one of the schemas.
#[derive(Debug, Clone, PartialEq)]
pub enum Parsed {
    Keywords(Vec<String>),
    Match(MatchOutput),
    Selection(Vec<String>),
    Assessment(Assessment),
}

/// Vocabulary-matching verdicts: per-candidate matched entries plus the
/// candidates declared new.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MatchOutput {
    pub matches: Vec<KeywordMatch>,
    pub new: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordMatch {
    pub keyword: String,
    pub entries: Vec<String>,
}

/// Answer/assessment triple: current answer, sufficiency flag, critical
/// memory ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assessment {
    pub answer: String,
    pub sufficient: bool,
    pub critical_ids: Vec<MemoryId>,
}

fn snippet(text: &str) -> String {
    let trimmed = text.trim();
    let mut s: String = trimmed.chars().take(120).collect();
    if s.len() < trimmed.len() {
        s.push_str("...");
    }
    s
}

/// Find the first balanced `{...}` region that parses as JSON, skipping
/// string literals and tolerating surrounding prose or fences.
fn first_json_object(text: &str) -> Result<Value> {
    let bytes: Vec<char> = text.chars().collect();
    let mut search_from = 0usize;
    while let Some(open) = bytes[search_from..].iter().position(|c| *c == '{') {
        let start = search_from + open;
        let mut depth = 0usize;
        let mut in_string = false;
        let mut escaped = false;
        for (offset, ch) in bytes[start..].iter().enumerate() {
            if in_string {
                if escaped {
                    escaped = false;
                } else if *ch == '\\' {
                    escaped = true;
                } else if *ch == '"' {
                    in_string = false;
                }
                continue;
            }
            match ch {
                '"' => in_string = true,
                '{' => depth += 1,
                '}' => {
                    depth -= 1;
                    if depth == 0 {
                        let candidate: String = bytes[start..=start + offset].iter().collect();
                        if let Ok(v) = serde_json::from_str::<Value>(&candidate) {
                            return Ok(v);
                        }
                        break;
                    }
                }
                _ => {}
            }
        }
        search_from = start + 1;
    }
    Err(Error::NoJson {
        snippet: snippet(text),
    })
}

fn string_array(value: &Value, field: &'static str, text: &str) -> Result<Vec<String>> {
    let arr = value
        .get(field)
        .ok_or_else(|| Error::MissingField {
            field,
            snippet: snippet(text),
        })?
        .as_array()
        .ok_or_else(|| Error::WrongType {
            field,
            expected: "array of strings",
            snippet: snippet(text),
        })?;
    arr.iter()
        .map(|v| {
            v.as_str().map(str::to_string).ok_or(Error::WrongType {
                field,
                expected: "array of strings",
                snippet: snippet(text),
            })
        })
        .collect()
}

/// Parse a `{"keywords": [...]}` completion.
pub fn parse_keyword_list(text: &str) -> Result<Vec<String>> {
    let value = first_json_object(text)?;
    string_array(&value, "keywords", text)
}

/// Selection uses the same wire shape as keyword extraction.
pub fn parse_selection(text: &str) -> Result<Vec<String>> {
    parse_keyword_list(text)
}

/// Parse a vocabulary-matching completion:
/// `{"matches": [{"keyword": "...", "entries": ["..."]}], "new": ["..."]}`.
/// Both top-level fields default to empty when absent.
pub fn parse_match_result(text: &str) -> Result<MatchOutput> {
    let value = first_json_object(text)?;
    let mut output = MatchOutput::default();
    if let Some(matches) = value.get("matches") {
        let arr = matches.as_array().ok_or(Error::WrongType {
            field: "matches",
            expected: "array of objects",
            snippet: snippet(text),
        })?;
        for item in arr {
            let keyword = item
                .get("keyword")
                .and_then(Value::as_str)
                .ok_or(Error::MissingField {
                    field: "matches[].keyword",
                    snippet: snippet(text),
                })?
                .to_string();
            let entries = string_array(item, "entries", text).map_err(|e| match e {
                Error::MissingField { .. } => Error::MissingField {
                    field: "matches[].entries",
                    snippet: snippet(text),
                },
                other => other,
            })?;
            output.matches.push(KeywordMatch { keyword, entries });
        }
    }
    if value.get("new").is_some() {
        output.new = string_array(&value, "new", text)?;
    }
    Ok(output)
}

/// Parse an answer/assessment completion:
/// `{"answer": "...", "sufficient": bool, "critical_ids": [ids]}`.
/// `critical_ids` defaults to empty when absent.
pub fn parse_assessment(text: &str) -> Result<Assessment> {
    let value = first_json_object(text)?;
    let answer = value
        .get("answer")
        .ok_or_else(|| Error::MissingField {
            field: "answer",
            snippet: snippet(text),
        })?
        .as_str()
        .ok_or_else(|| Error::WrongType {
            field: "answer",
            expected: "string",
            snippet: snippet(text),
        })?
        .to_string();
    let sufficient = value
        .get("sufficient")
        .ok_or_else(|| Error::MissingField {
            field: "sufficient",
            snippet: snippet(text),
        })?
        .as_bool()
        .ok_or_else(|| Error::WrongType {
            field: "sufficient",
            expected: "boolean",
            snippet: snippet(text),
        })?;
    let mut critical_ids = Vec::new();
    if let Some(ids) = value.get("critical_ids") {
        let arr = ids.as_array().ok_or(Error::WrongType {
            field: "critical_ids",
            expected: "array of integers",
            snippet: snippet(text),
        })?;
        for v in arr {
            let id = v.as_u64().ok_or(Error::WrongType {
                field: "critical_ids",
                expected: "array of integers",
                snippet: snippet(text),
            })?;
            critical_ids.push(id);
        }
    }
    Ok(Assessment {
        answer,
        sufficient,
        critical_ids,
    })
}

/// Schema-dispatched entry point.
pub fn parse_structured(text: &str, schema: Schema) -> Result<Parsed> {
    match schema {
        Schema::KeywordList => parse_keyword_list(text).map(Parsed::Keywords),
        Schema::Selection => parse_selection(text).map(Parsed::Selection),
        Schema::MatchResult => parse_match_result(text).map(Parsed::Match),
        Schema::AnswerAssessment => parse_assessment(text).map(Parsed::Assessment),
    }
}
