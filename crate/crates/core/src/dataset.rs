//! Dataset loading for the evaluation harness.
//!
//! Two on-disk formats: the LoCoMo release JSON (multi-session
//! conversations with QA annotations) and a minimal line-delimited JSON
//! format for hand-written fixtures.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::ingest::MemoryInput;

/// The four reasoning categories scored by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    SingleHop,
    MultiHop,
    Temporal,
    OpenDomain,
}

impl Category {
    pub fn as_str(&self) -> &'static str {
        match self {
            Category::SingleHop => "single_hop",
            Category::MultiHop => "multi_hop",
            Category::Temporal => "temporal",
            Category::OpenDomain => "open_domain",
        }
    }

    /// LoCoMo numeric category codes. Code 5 (adversarial) is outside
    /// the four scored categories and is skipped by the reader.
    fn from_code(code: u64) -> Option<Category> {
        match code {
            1 => Some(Category::MultiHop),
            2 => Some(Category::Temporal),
            3 => Some(Category::OpenDomain),
            4 => Some(Category::SingleHop),
            _ => None,
        }
    }
}

/// One scored question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalQuestion {
    pub id: String,
    pub question: String,
    pub references: Vec<String>,
    pub category: Category,
    pub conversation_id: String,
}

/// One conversation's worth of raw memories.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conversation {
    pub id: String,
    pub memories: Vec<MemoryInput>,
}

/// Parsed dataset: conversations to ingest plus the questions to run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dataset {
    pub conversations: Vec<Conversation>,
    pub questions: Vec<EvalQuestion>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[clap(rename_all = "snake_case")]
pub enum DatasetFormat {
    LocomoJson,
    SimpleJsonl,
}

pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        DatasetFormat::SimpleJsonl => parse_simple_jsonl(path, &text),
        DatasetFormat::LocomoJson => parse_locomo(path, &text),
    }
}

fn dataset_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Dataset {
        path: path.display().to_string(),
        detail: detail.into(),
    }
}

/// Line-delimited fixture format. Each line is one JSON object:
/// `{"type":"memory","question":..,"answer":..,"session"?,"conversation"?}` or
/// `{"type":"question","question":..,"references":[..],"category":..,"id"?,"conversation"?}`.
fn parse_simple_jsonl(path: &Path, text: &str) -> Result<Dataset> {
    #[derive(Deserialize)]
    #[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
    enum Line {
        Memory {
            question: String,
            answer: String,
            #[serde(default)]
            session: Option<String>,
            #[serde(default)]
            conversation: Option<String>,
        },
        Question {
            question: String,
            references: Vec<String>,
            category: Category,
            #[serde(default)]
            id: Option<String>,
            #[serde(default)]
            conversation: Option<String>,
        },
    }

    let mut dataset = Dataset::default();
    for (number, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(line)
            .map_err(|e| dataset_err(path, format!("line {}: {e}", number + 1)))?;
        match parsed {
            Line::Memory {
                question,
                answer,
                session,
                conversation,
            } => {
                let conv = conversation.unwrap_or_else(|| "default".to_string());
                conversation_mut(&mut dataset, &conv).memories.push(MemoryInput {
                    question,
                    answer,
                    session,
                });
            }
            Line::Question {
                question,
                references,
                category,
                id,
                conversation,
            } => {
                if references.iter().all(|r| r.trim().is_empty()) {
                    return Err(dataset_err(
                        path,
                        format!("line {}: question has no non-empty reference", number + 1),
                    ));
                }
                let conversation_id = conversation.unwrap_or_else(|| "default".to_string());
                let id = id.unwrap_or_else(|| format!("q{}", dataset.questions.len()));
                dataset.questions.push(EvalQuestion {
                    id,
                    question,
                    references,
                    category,
                    conversation_id,
                });
            }
        }
    }
    Ok(dataset)
}

fn conversation_mut<'d>(dataset: &'d mut Dataset, id: &str) -> &'d mut Conversation {
    if let Some(pos) = dataset.conversations.iter().position(|c| c.id == id) {
        return &mut dataset.conversations[pos];
    }
    dataset.conversations.push(Conversation {
        id: id.to_string(),
        memories: Vec::new(),
    });
    dataset.conversations.last_mut().expect("just pushed")
}

/// LoCoMo release JSON: an array of samples, each carrying a multi-session
/// `conversation` object (`session_1`, `session_1_date_time`, ...) and a
/// `qa` array with numeric categories.
///
/// Turns are paired in order into (question, answer) memories; a session
/// with an odd turn count keeps the trailing turn with a placeholder
/// reply. Adversarial QA entries (category 5) are skipped; any other
/// unknown category code is rejected.
fn parse_locomo(path: &Path, text: &str) -> Result<Dataset> {
    let root: Value = serde_json::from_str(text)
        .map_err(|e| dataset_err(path, format!("invalid JSON: {e}")))?;
    let samples = root
        .as_array()
        .ok_or_else(|| dataset_err(path, "expected a top-level array of samples"))?;

    let mut dataset = Dataset::default();
    for (si, sample) in samples.iter().enumerate() {
        let sample_id = sample["sample_id"]
            .as_str()
            .map(str::to_string)
            .unwrap_or_else(|| format!("sample-{si}"));
        let conversation = sample.get("conversation").ok_or_else(|| {
            dataset_err(path, format!("samples[{si}]: missing conversation"))
        })?;
        let object = conversation.as_object().ok_or_else(|| {
            dataset_err(path, format!("samples[{si}]: conversation is not an object"))
        })?;

        // Collect session indices, then walk them in numeric order.
        let mut session_numbers: Vec<u64> = object
            .keys()
            .filter_map(|k| {
                k.strip_prefix("session_")
                    .filter(|rest| !rest.contains('_'))
                    .and_then(|rest| rest.parse().ok())
            })
            .collect();
        session_numbers.sort_unstable();

        let mut memories = Vec::new();
        for n in session_numbers {
            let key = format!("session_{n}");
            let turns = match object.get(&key).and_then(Value::as_array) {
                Some(t) => t,
                None => continue,
            };
            let date = object
                .get(&format!("session_{n}_date_time"))
                .and_then(Value::as_str);
            let session_label = match date {
                Some(d) => format!("{key} ({d})"),
                None => key.clone(),
            };
            let rendered: Vec<String> = turns
                .iter()
                .enumerate()
                .map(|(ti, turn)| {
                    let speaker = turn["speaker"].as_str().unwrap_or("speaker");
                    let text = turn["text"].as_str().ok_or_else(|| {
                        dataset_err(
                            path,
                            format!("samples[{si}].{key}[{ti}]: missing text"),
                        )
                    })?;
                    Ok(format!("{speaker}: {text}"))
                })
                .collect::<Result<_>>()?;
            for pair in rendered.chunks(2) {
                memories.push(MemoryInput {
                    question: pair[0].clone(),
                    answer: pair
                        .get(1)
                        .cloned()
                        .unwrap_or_else(|| "(no reply)".to_string()),
                    session: Some(session_label.clone()),
                });
            }
        }
        dataset.conversations.push(Conversation {
            id: sample_id.clone(),
            memories,
        });

        let qa = sample["qa"].as_array().ok_or_else(|| {
            dataset_err(path, format!("samples[{si}]: missing qa array"))
        })?;
        for (qi, entry) in qa.iter().enumerate() {
            let code = entry["category"].as_u64().ok_or_else(|| {
                dataset_err(path, format!("samples[{si}].qa[{qi}]: missing category"))
            })?;
            if code == 5 {
                continue; // adversarial split, outside the scored categories
            }
            let category = Category::from_code(code).ok_or_else(|| {
                dataset_err(
                    path,
                    format!("samples[{si}].qa[{qi}]: unknown category code {code}"),
                )
            })?;
            let question = entry["question"]
                .as_str()
                .ok_or_else(|| {
                    dataset_err(path, format!("samples[{si}].qa[{qi}]: missing question"))
                })?
                .to_string();
            let answer = match &entry["answer"] {
                Value::String(s) => s.clone(),
                Value::Number(n) => n.to_string(),
                _ => {
                    return Err(dataset_err(
                        path,
                        format!("samples[{si}].qa[{qi}]: missing answer"),
                    ))
                }
            };
            if answer.trim().is_empty() {
                return Err(dataset_err(
                    path,
                    format!("samples[{si}].qa[{qi}]: empty answer"),
                ));
            }
            dataset.questions.push(EvalQuestion {
                id: format!("{sample_id}-q{qi}"),
                question,
                references: vec![answer],
                category,
                conversation_id: sample_id.clone(),
            });
        }
    }
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(name: &str, text: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(name);
        std::fs::write(&path, text).unwrap();
        (dir, path)
    }

    #[test]
    fn simple_jsonl_maps_directly() {
        let text = r#"
{"type":"memory","question":"Did you visit Paris?","answer":"Yes, in May."}
{"type":"memory","question":"Do you ski?","answer":"Every winter.","session":"s2"}
{"type":"question","question":"When was Paris?","references":["May"],"category":"temporal"}
"#;
        let (_dir, path) = write("d.jsonl", text);
        let d = load_dataset(&path, DatasetFormat::SimpleJsonl).unwrap();
        assert_eq!(d.conversations.len(), 1);
        assert_eq!(d.conversations[0].memories.len(), 2);
        assert_eq!(d.questions.len(), 1);
        assert_eq!(d.questions[0].category, Category::Temporal);
        assert_eq!(d.questions[0].conversation_id, "default");
    }

    #[test]
    fn question_without_references_is_rejected() {
        let text = r#"{"type":"question","question":"?","references":["  "],"category":"single_hop"}"#;
        let (_dir, path) = write("d.jsonl", text);
        assert!(matches!(
            load_dataset(&path, DatasetFormat::SimpleJsonl),
            Err(Error::Dataset { .. })
        ));
    }

    #[test]
    fn unknown_simple_category_is_rejected() {
        let text = r#"{"type":"question","question":"?","references":["x"],"category":"adversarial"}"#;
        let (_dir, path) = write("d.jsonl", text);
        assert!(load_dataset(&path, DatasetFormat::SimpleJsonl).is_err());
    }

    fn locomo_sample() -> String {
        serde_json::json!([{
            "sample_id": "conv-1",
            "conversation": {
                "speaker_a": "Ann",
                "speaker_b": "Bob",
                "session_2": [
                    {"speaker": "Ann", "text": "How was the trip?"},
                    {"speaker": "Bob", "text": "Great, lots of skiing."},
                    {"speaker": "Ann", "text": "Lovely."}
                ],
                "session_2_date_time": "2:10 pm on 2 February 2023",
                "session_1": [
                    {"speaker": "Ann", "text": "Hi Bob!"},
                    {"speaker": "Bob", "text": "Hi Ann, planning a ski trip."}
                ],
                "session_1_date_time": "1:00 pm on 1 January 2023"
            },
            "qa": [
                {"question": "What trip did Bob plan?", "answer": "a ski trip", "category": 4},
                {"question": "ignored adversarial", "answer": "n/a", "category": 5},
                {"question": "When did Bob plan the trip?", "answer": "January 2023", "category": 2}
            ]
        }])
        .to_string()
    }

    #[test]
    fn locomo_sessions_flatten_in_order() {
        let (_dir, path) = write("locomo.json", &locomo_sample());
        let d = load_dataset(&path, DatasetFormat::LocomoJson).unwrap();
        assert_eq!(d.conversations.len(), 1);
        let mems = &d.conversations[0].memories;
        // Session 1 (1 pair) then session 2 (1 pair + trailing turn).
        assert_eq!(mems.len(), 3);
        assert!(mems[0].question.starts_with("Ann: Hi Bob!"));
        assert!(mems[0].session.as_deref().unwrap().starts_with("session_1"));
        assert!(mems[1].session.as_deref().unwrap().starts_with("session_2"));
        assert_eq!(mems[2].answer, "(no reply)");
        // Adversarial entry skipped, two scored questions kept.
        assert_eq!(d.questions.len(), 2);
        assert_eq!(d.questions[0].category, Category::SingleHop);
        assert_eq!(d.questions[1].category, Category::Temporal);
        assert_eq!(d.questions[0].conversation_id, "conv-1");
    }

    #[test]
    fn locomo_sessions_order_numerically_not_alphabetically() {
        let text = serde_json::json!([{
            "sample_id": "conv-2",
            "conversation": {
                "session_10": [
                    {"speaker": "Ann", "text": "tenth session"},
                    {"speaker": "Bob", "text": "indeed"}
                ],
                "session_2": [
                    {"speaker": "Ann", "text": "second session"},
                    {"speaker": "Bob", "text": "yes"}
                ]
            },
            "qa": []
        }])
        .to_string();
        let (_dir, path) = write("locomo.json", &text);
        let d = load_dataset(&path, DatasetFormat::LocomoJson).unwrap();
        let mems = &d.conversations[0].memories;
        assert_eq!(mems.len(), 2);
        assert!(mems[0].question.contains("second session"));
        assert!(mems[1].question.contains("tenth session"));
    }

    #[test]
    fn locomo_unknown_category_is_rejected() {
        let text = locomo_sample().replace("\"category\":4", "\"category\":9");
        let (_dir, path) = write("locomo.json", &text);
        let err = load_dataset(&path, DatasetFormat::LocomoJson).unwrap_err();
        assert!(err.to_string().contains("unknown category code 9"), "{err}");
    }

    #[test]
    fn locomo_numeric_answers_are_stringified() {
        let text = locomo_sample().replace("\"a ski trip\"", "42");
        let (_dir, path) = write("locomo.json", &text);
        let d = load_dataset(&path, DatasetFormat::LocomoJson).unwrap();
        assert_eq!(d.questions[0].references, vec!["42"]);
    }
}
