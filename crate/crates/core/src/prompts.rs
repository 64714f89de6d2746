//! Prompt templates for the five LLM roles.
//!
//! Built-in templates ship with the binary; a prompts directory with
//! files named `extract.txt`, `match.txt`, `select.txt`, `answer.txt`,
//! and `rewrite.txt` overrides them per file.

use std::path::Path;

use crate::error::{Error, Result};
use crate::store::MemoryRecord;

const EXTRACT: &str = include_str!("../prompts/extract.txt");
const MATCH: &str = include_str!("../prompts/match.txt");
const SELECT: &str = include_str!("../prompts/select.txt");
const ANSWER: &str = include_str!("../prompts/answer.txt");
const REWRITE: &str = include_str!("../prompts/rewrite.txt");

/// The system prompts used by ingestion, retrieval, answering, and
/// rewriting.
#[derive(Debug, Clone)]
pub struct PromptSet {
    extract: String,
    match_: String,
    select: String,
    answer: String,
    rewrite: String,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptSet {
    pub fn builtin() -> Self {
        PromptSet {
            extract: EXTRACT.to_string(),
            match_: MATCH.to_string(),
            select: SELECT.to_string(),
            answer: ANSWER.to_string(),
            rewrite: REWRITE.to_string(),
        }
    }

    /// Load templates from a directory. Files that are missing fall back
    /// to the built-in template; unreadable files are errors.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut set = Self::builtin();
        for (name, slot) in [
            ("extract.txt", &mut set.extract),
            ("match.txt", &mut set.match_),
            ("select.txt", &mut set.select),
            ("answer.txt", &mut set.answer),
            ("rewrite.txt", &mut set.rewrite),
        ] {
            let path = dir.join(name);
            if path.exists() {
                *slot = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            }
        }
        Ok(set)
    }

    pub fn extract_system(&self, max_keywords: usize) -> String {
        self.extract
            .replace("{max_keywords}", &max_keywords.to_string())
    }

    pub fn match_system(&self) -> &str {
        &self.match_
    }

    pub fn select_system(&self, depth: usize) -> String {
        self.select.replace("{depth}", &depth.to_string())
    }

    pub fn answer_system(&self) -> &str {
        &self.answer
    }

    pub fn rewrite_system(&self) -> &str {
        &self.rewrite
    }
}

/// Render one memory for a prompt: `[id] question / answer / session`.
pub fn render_memory(record: &MemoryRecord) -> String {
    match &record.session {
        Some(session) => format!(
            "[{}] {} / {} / {}",
            record.id, record.question, record.answer, session
        ),
        None => format!("[{}] {} / {}", record.id, record.question, record.answer),
    }
}

/// Render a memory list one per line, or the explicit `none` marker.
pub fn render_memory_list(records: &[&MemoryRecord]) -> String {
    if records.is_empty() {
        "none".to_string()
    } else {
        records
            .iter()
            .map(|r| render_memory(r))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Render a bullet list of keywords or vocabulary entries.
pub fn render_keyword_list<'a>(items: impl Iterator<Item = &'a str>) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str("- ");
        out.push_str(item);
        out.push('\n');
    }
    if out.is_empty() {
        out.push_str("(empty)\n");
    }
    out
}
