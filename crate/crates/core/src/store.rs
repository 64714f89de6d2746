//! Append-only memory bank: records, keyword vocabulary, and the
//! keyword -> memory inverted mapping, with a versioned JSON snapshot.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use indexmap::IndexSet;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keyword::normalize_keyword;

/// Memory identifier. Unique within a bank and never reused.
pub type MemoryId = u64;

/// Snapshot schema version this build reads and writes.
pub const SNAPSHOT_FORMAT_VERSION: u32 = 1;

const EMPTY_POSTINGS: &[MemoryId] = &[];

/// One stored interaction: a question/answer pair with provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub id: MemoryId,
    pub question: String,
    pub answer: String,
    pub session: Option<String>,
    pub ingested_at: DateTime<Utc>,
}

/// Ordered, append-only set of normalized keywords. Insertion order is
/// part of the state and survives snapshots.
#[derive(Debug, Clone, Default)]
pub struct KeywordVocabulary {
    entries: IndexSet<String>,
}

impl KeywordVocabulary {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, keyword: &str) -> bool {
        self.entries.contains(normalize_keyword(keyword).as_str())
    }

    /// Insert a keyword (normalized first). Returns true when the entry
    /// is new.
    pub fn insert(&mut self, keyword: &str) -> bool {
        let n = normalize_keyword(keyword);
        if n.is_empty() {
            return false;
        }
        self.entries.insert(n)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(String::as_str)
    }
}

// IndexSet equality ignores order; insertion order is semantic here.
impl PartialEq for KeywordVocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.entries.iter().eq(other.entries.iter())
    }
}

impl Eq for KeywordVocabulary {}

/// Inverted index: keyword -> sorted, duplicate-free posting list.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeywordMapping {
    map: BTreeMap<String, Vec<MemoryId>>,
}

impl KeywordMapping {
    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Posting list for a keyword; unknown keywords yield the empty slice.
    pub fn postings(&self, keyword: &str) -> &[MemoryId] {
        self.map
            .get(normalize_keyword(keyword).as_str())
            .map_or(EMPTY_POSTINGS, Vec::as_slice)
    }

    pub fn keywords(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    /// Insert one (keyword, id) pair keeping the list sorted. Returns
    /// true when the pair was not already present.
    fn add(&mut self, keyword: &str, id: MemoryId) -> bool {
        let list = self.map.entry(normalize_keyword(keyword)).or_default();
        match list.binary_search(&id) {
            Ok(_) => false,
            Err(pos) => {
                list.insert(pos, id);
                true
            }
        }
    }
}

/// Result of registering keywords for one memory.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RegisterOutcome {
    /// Vocabulary entries created by this registration.
    pub new_entries: Vec<String>,
    /// Count of (keyword, memory) pairs newly added to posting lists.
    pub postings_updated: usize,
}

/// The whole memory side: record store, vocabulary, and mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    records: BTreeMap<MemoryId, MemoryRecord>,
    vocabulary: KeywordVocabulary,
    mapping: KeywordMapping,
    format_version: u32,
}

impl Default for MemoryBank {
    fn default() -> Self {
        Self::new()
    }
}

impl MemoryBank {
    pub fn new() -> Self {
        MemoryBank {
            records: BTreeMap::new(),
            vocabulary: KeywordVocabulary::default(),
            mapping: KeywordMapping::default(),
            format_version: SNAPSHOT_FORMAT_VERSION,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn vocabulary(&self) -> &KeywordVocabulary {
        &self.vocabulary
    }

    pub fn mapping(&self) -> &KeywordMapping {
        &self.mapping
    }

    pub fn record(&self, id: MemoryId) -> Option<&MemoryRecord> {
        self.records.get(&id)
    }

    pub fn records(&self) -> impl Iterator<Item = &MemoryRecord> {
        self.records.values()
    }

    fn next_id(&self) -> MemoryId {
        self.records.keys().next_back().map_or(0, |max| max + 1)
    }

    /// Store a new record. Existing records are never mutated.
    pub fn add_record(
        &mut self,
        question: &str,
        answer: &str,
        session: Option<&str>,
    ) -> Result<MemoryId> {
        let question = question.trim();
        let answer = answer.trim();
        if question.is_empty() {
            return Err(Error::Validation("record question is empty".into()));
        }
        if answer.is_empty() {
            return Err(Error::Validation("record answer is empty".into()));
        }
        let id = self.next_id();
        self.records.insert(
            id,
            MemoryRecord {
                id,
                question: question.to_string(),
                answer: answer.to_string(),
                session: session.map(str::to_string),
                ingested_at: Utc::now(),
            },
        );
        Ok(id)
    }

    /// Register keywords for an existing memory: new keywords enter the
    /// vocabulary, and every keyword gains the memory in its posting
    /// list exactly once. Idempotent per (keyword, memory) pair.
    pub fn register_keywords(
        &mut self,
        id: MemoryId,
        keywords: &[String],
    ) -> Result<RegisterOutcome> {
        if !self.records.contains_key(&id) {
            return Err(Error::UnknownMemory(id));
        }
        if keywords.is_empty() {
            return Err(Error::Validation("keyword list is empty".into()));
        }
        let mut outcome = RegisterOutcome::default();
        for raw in keywords {
            let keyword = normalize_keyword(raw);
            if keyword.is_empty() {
                return Err(Error::Validation(format!(
                    "keyword {raw:?} is empty after normalization"
                )));
            }
            if self.vocabulary.insert(&keyword) {
                outcome.new_entries.push(keyword.clone());
            }
            if self.mapping.add(&keyword, id) {
                outcome.postings_updated += 1;
            }
        }
        Ok(outcome)
    }

    /// Posting list for a keyword; unknown keywords yield the empty set.
    pub fn associated_memories(&self, keyword: &str) -> &[MemoryId] {
        self.mapping.postings(keyword)
    }

    /// Stable content fingerprint of the bank's JSON form.
    pub fn fingerprint(&self) -> u64 {
        crate::keyword::fnv1a64(&self.to_json())
    }

    pub fn to_json(&self) -> String {
        let doc = SnapshotDoc {
            format_version: self.format_version,
            records: self
                .records
                .values()
                .map(|r| RecordDoc {
                    id: r.id,
                    question: r.question.clone(),
                    answer: r.answer.clone(),
                    session: r.session.clone(),
                    ingested_at: r.ingested_at.to_rfc3339_opts(SecondsFormat::AutoSi, true),
                })
                .collect(),
            vocabulary: self.vocabulary.iter().map(str::to_string).collect(),
            mapping: self.mapping.map.clone(),
        };
        let mut text = serde_json::to_string_pretty(&doc).expect("snapshot serialization");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SnapshotDoc = serde_json::from_str(text)
            .map_err(|e| Error::MalformedSnapshot(e.to_string()))?;
        if doc.format_version != SNAPSHOT_FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: doc.format_version,
                supported: SNAPSHOT_FORMAT_VERSION,
            });
        }
        let mut records = BTreeMap::new();
        for r in doc.records {
            if r.question.trim().is_empty() {
                return Err(Error::MalformedSnapshot(format!(
                    "records[{}].question is empty",
                    r.id
                )));
            }
            if r.answer.trim().is_empty() {
                return Err(Error::MalformedSnapshot(format!(
                    "records[{}].answer is empty",
                    r.id
                )));
            }
            let ingested_at = DateTime::parse_from_rfc3339(&r.ingested_at)
                .map_err(|e| {
                    Error::MalformedSnapshot(format!(
                        "records[{}].ingested_at: {e}",
                        r.id
                    ))
                })?
                .with_timezone(&Utc);
            let id = r.id;
            let prev = records.insert(
                id,
                MemoryRecord {
                    id,
                    question: r.question,
                    answer: r.answer,
                    session: r.session,
                    ingested_at,
                },
            );
            if prev.is_some() {
                return Err(Error::MalformedSnapshot(format!(
                    "records: duplicate id {id}"
                )));
            }
        }
        let mut vocabulary = KeywordVocabulary::default();
        for entry in &doc.vocabulary {
            if *entry != normalize_keyword(entry) {
                return Err(Error::MalformedSnapshot(format!(
                    "vocabulary entry {entry:?} is not normalized"
                )));
            }
            if !vocabulary.insert(entry) {
                return Err(Error::MalformedSnapshot(format!(
                    "vocabulary: duplicate entry {entry:?}"
                )));
            }
        }
        for (keyword, postings) in &doc.mapping {
            if !vocabulary.contains(keyword) {
                return Err(Error::MalformedSnapshot(format!(
                    "mapping keyword {keyword:?} is not in the vocabulary"
                )));
            }
            if !postings.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::MalformedSnapshot(format!(
                    "mapping[{keyword:?}] posting list is not sorted and duplicate-free"
                )));
            }
            for id in postings {
                if !records.contains_key(id) {
                    return Err(Error::MalformedSnapshot(format!(
                        "mapping[{keyword:?}] references unknown memory id {id}"
                    )));
                }
            }
        }
        Ok(MemoryBank {
            records,
            vocabulary,
            mapping: KeywordMapping { map: doc.mapping },
            format_version: doc.format_version,
        })
    }

    /// Write the bank to a snapshot file.
    pub fn snapshot(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// Load a bank from a snapshot file, validating referential
    /// integrity before accepting it.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SnapshotDoc {
    format_version: u32,
    records: Vec<RecordDoc>,
    vocabulary: Vec<String>,
    mapping: BTreeMap<String, Vec<MemoryId>>,
}

#[derive(Serialize, Deserialize)]
struct RecordDoc {
    id: MemoryId,
    question: String,
    answer: String,
    session: Option<String>,
    ingested_at: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kw(words: &[&str]) -> Vec<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn ids_are_monotonic_from_zero() {
        let mut bank = MemoryBank::new();
        let a = bank
            .add_record("Did you visit Paris?", "Yes, in May.", None)
            .unwrap();
        let b = bank.add_record("Second?", "Also yes.", None).unwrap();
        assert_eq!(a, 0);
        assert_eq!(b, 1);
    }

    #[test]
    fn empty_text_is_rejected() {
        let mut bank = MemoryBank::new();
        assert!(matches!(
            bank.add_record("", "x", None),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            bank.add_record("x", "   ", None),
            Err(Error::Validation(_))
        ));
        assert!(bank.is_empty());
    }

    #[test]
    fn register_inserts_new_entries_and_postings() {
        let mut bank = MemoryBank::new();
        for _ in 0..6 {
            bank.add_record("q", "a", None).unwrap();
        }
        bank.register_keywords(0, &kw(&["paris"])).unwrap();
        let outcome = bank.register_keywords(5, &kw(&["paris", "travel"])).unwrap();
        assert_eq!(outcome.new_entries, vec!["travel"]);
        assert_eq!(outcome.postings_updated, 2);
        assert_eq!(bank.associated_memories("paris"), &[0, 5]);
        assert_eq!(bank.associated_memories("travel"), &[5]);
    }

    #[test]
    fn register_is_idempotent() {
        let mut bank = MemoryBank::new();
        bank.add_record("q", "a", None).unwrap();
        bank.register_keywords(0, &kw(&["skiing"])).unwrap();
        let snapshot = bank.clone();
        let outcome = bank.register_keywords(0, &kw(&["skiing"])).unwrap();
        assert_eq!(outcome.postings_updated, 0);
        assert!(outcome.new_entries.is_empty());
        assert_eq!(bank, snapshot);
    }

    #[test]
    fn register_unknown_memory_fails() {
        let mut bank = MemoryBank::new();
        assert!(matches!(
            bank.register_keywords(7, &kw(&["x"])),
            Err(Error::UnknownMemory(7))
        ));
    }

    #[test]
    fn three_new_keywords_grow_vocabulary_to_three() {
        let mut bank = MemoryBank::new();
        bank.add_record("q", "a", None).unwrap();
        bank.register_keywords(0, &kw(&["a", "b", "c"])).unwrap();
        assert_eq!(bank.vocabulary().len(), 3);
    }

    #[test]
    fn postings_are_sorted_regardless_of_insertion_order() {
        let mut bank = MemoryBank::new();
        for _ in 0..8 {
            bank.add_record("q", "a", None).unwrap();
        }
        for id in [1u64, 7, 3] {
            bank.register_keywords(id, &kw(&["shared"])).unwrap();
        }
        assert_eq!(bank.associated_memories("shared"), &[1, 3, 7]);
    }

    #[test]
    fn unknown_keyword_is_empty_not_error() {
        let bank = MemoryBank::new();
        assert!(bank.associated_memories("zzz").is_empty());
    }

    #[test]
    fn round_trip_empty_and_populated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.json");

        let empty = MemoryBank::new();
        empty.snapshot(&path).unwrap();
        assert_eq!(MemoryBank::load(&path).unwrap(), empty);

        let mut bank = MemoryBank::new();
        bank.add_record("Did you visit Paris?", "Yes, in May.", Some("s1"))
            .unwrap();
        bank.add_record("Any trips planned?", "Skiing next winter.", None)
            .unwrap();
        bank.register_keywords(0, &kw(&["paris", "travel"])).unwrap();
        bank.register_keywords(1, &kw(&["skiing", "travel"])).unwrap();
        bank.snapshot(&path).unwrap();
        let loaded = MemoryBank::load(&path).unwrap();
        assert_eq!(loaded, bank);
        // Snapshot of the reload is byte-identical.
        assert_eq!(loaded.to_json(), bank.to_json());
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.json");
        let mut bank = MemoryBank::new();
        bank.add_record("q", "a", None).unwrap();
        let text = bank.to_json();
        std::fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(
            MemoryBank::load(&path),
            Err(Error::MalformedSnapshot(_))
        ));
    }

    #[test]
    fn version_mismatch_is_classified() {
        let text = MemoryBank::new().to_json().replace(
            "\"format_version\": 1",
            "\"format_version\": 9",
        );
        assert!(matches!(
            MemoryBank::from_json(&text),
            Err(Error::VersionMismatch { found: 9, .. })
        ));
    }

    #[test]
    fn unknown_top_level_field_is_rejected() {
        let mut value: serde_json::Value =
            serde_json::from_str(&MemoryBank::new().to_json()).unwrap();
        value["surprise"] = serde_json::json!(true);
        let err = MemoryBank::from_json(&value.to_string()).unwrap_err();
        assert!(err.to_string().contains("surprise"), "{err}");
    }

    #[test]
    fn dangling_posting_is_rejected_with_field_name() {
        let mut bank = MemoryBank::new();
        bank.add_record("q", "a", None).unwrap();
        bank.register_keywords(0, &kw(&["paris"])).unwrap();
        let text = bank.to_json().replace("[\n      0\n    ]", "[\n      0,\n      9\n    ]");
        let err = MemoryBank::from_json(&text).unwrap_err();
        assert!(err.to_string().contains("paris"), "{err}");
        assert!(err.to_string().contains('9'), "{err}");
    }
}
