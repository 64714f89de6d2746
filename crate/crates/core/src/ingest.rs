//! Ingestion: turn raw memories into indexed bank entries.
//!
//! Per record: store it, extract keywords with the auxiliary LLM, match
//! them against the vocabulary (exact matches are resolved locally, the
//! rest go to the LLM), then register the final keyword set. At most two
//! auxiliary calls per memory.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{parse_keyword_list, parse_match_result, ChatRequest, Gateway, RoleTag};
use crate::keyword::{edit_distance, normalize_keyword, normalize_list};
use crate::metrics::CostCounters;
use crate::prompts::{render_keyword_list, render_memory, PromptSet};
use crate::store::{KeywordVocabulary, MemoryBank, MemoryId, MemoryRecord};

/// Hard cap on keywords kept per memory; the prompt asks for at most
/// this many and the result is truncated defensively.
pub const MAX_KEYWORDS_PER_MEMORY: usize = 8;

/// When the vocabulary outgrows this, the matching prompt only shows the
/// entries nearest (by edit distance) to the unmatched keywords.
pub const MATCH_VOCAB_LIMIT: usize = 200;

/// One raw memory waiting to be ingested.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryInput {
    pub question: String,
    pub answer: String,
    #[serde(default)]
    pub session: Option<String>,
}

/// Keyword resolution for one record: raw extraction, vocabulary
/// matches, novel entries, and the final set that gets registered.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExtractionOutcome {
    pub raw_keywords: Vec<String>,
    pub matched: Vec<String>,
    pub novel: Vec<String>,
    pub final_keywords: Vec<String>,
}

/// Batch ingestion totals.
#[derive(Debug, Clone, Default, Serialize)]
pub struct IngestReport {
    pub records_added: usize,
    pub records_indexed: usize,
    pub new_vocabulary_entries: usize,
    pub postings_updated: usize,
    pub aux: CostCounters,
    /// Records stored but left unindexed because extraction produced
    /// no keywords.
    pub unindexed: Vec<MemoryId>,
    /// (input index, error) pairs; one bad record does not abort the batch.
    pub errors: Vec<(usize, String)>,
}

/// Drives extraction and matching through the auxiliary gateway.
pub struct Ingestor<'a> {
    aux: &'a Gateway,
    prompts: &'a PromptSet,
}

impl<'a> Ingestor<'a> {
    pub fn new(aux: &'a Gateway, prompts: &'a PromptSet) -> Self {
        Ingestor { aux, prompts }
    }

    /// Extract up to [`MAX_KEYWORDS_PER_MEMORY`] normalized keywords for
    /// one record. An empty result is legal; the record stays unindexed.
    pub fn extract_keywords(&self, record: &MemoryRecord) -> Result<(Vec<String>, CostCounters)> {
        let request = ChatRequest::new(
            RoleTag::Extract,
            self.prompts.extract_system(MAX_KEYWORDS_PER_MEMORY),
            render_memory(record),
        );
        let response = self.aux.complete(&request)?;
        let raw = parse_keyword_list(&response.text)?;
        let mut keywords = normalize_list(&raw);
        if keywords.len() > MAX_KEYWORDS_PER_MEMORY {
            keywords.truncate(MAX_KEYWORDS_PER_MEMORY);
        }
        if keywords.is_empty() {
            warn!("memory {} produced no keywords; leaving it unindexed", record.id);
        }
        let mut cost = CostCounters::default();
        cost.add_call(response.centitokens_in + response.centitokens_out);
        Ok((keywords, cost))
    }

    /// Resolve raw keywords against the vocabulary. Exact normalized
    /// matches never reach the LLM; only unmatched keywords are sent,
    /// with the candidate vocabulary (truncated by edit distance when
    /// large). A claimed match outside the vocabulary is repaired to a
    /// novel entry with a warning.
    pub fn match_vocabulary(
        &self,
        raw: &[String],
        vocabulary: &KeywordVocabulary,
    ) -> Result<(ExtractionOutcome, CostCounters)> {
        let mut outcome = ExtractionOutcome {
            raw_keywords: raw.to_vec(),
            ..ExtractionOutcome::default()
        };
        let mut cost = CostCounters::default();
        if raw.is_empty() {
            return Ok((outcome, cost));
        }

        let mut unmatched: Vec<String> = Vec::new();
        for keyword in raw {
            if vocabulary.contains(keyword) {
                outcome.matched.push(normalize_keyword(keyword));
            } else {
                unmatched.push(keyword.clone());
            }
        }

        if !unmatched.is_empty() && !vocabulary.is_empty() {
            let candidates = candidate_entries(&unmatched, vocabulary);
            let user = format!(
                "Candidate keywords:\n{}\nVocabulary:\n{}",
                render_keyword_list(unmatched.iter().map(String::as_str)),
                render_keyword_list(candidates.iter().copied()),
            );
            let request =
                ChatRequest::new(RoleTag::Match, self.prompts.match_system(), user);
            let response = self.aux.complete(&request)?;
            cost.add_call(response.centitokens_in + response.centitokens_out);
            let verdict = parse_match_result(&response.text)?;

            let mut decided: Vec<String> = Vec::new();
            for m in &verdict.matches {
                let keyword = normalize_keyword(&m.keyword);
                decided.push(keyword);
                for entry in &m.entries {
                    let entry = normalize_keyword(entry);
                    if vocabulary.contains(&entry) {
                        outcome.matched.push(entry);
                    } else {
                        warn!(
                            "matcher returned {entry:?} which is not a vocabulary entry; treating it as novel"
                        );
                        outcome.novel.push(entry);
                    }
                }
            }
            for keyword in &verdict.new {
                let keyword = normalize_keyword(keyword);
                decided.push(keyword.clone());
                if vocabulary.contains(&keyword) {
                    outcome.matched.push(keyword);
                } else {
                    outcome.novel.push(keyword);
                }
            }
            // Keywords the model left undecided stay novel.
            for keyword in &unmatched {
                let keyword = normalize_keyword(keyword);
                if !decided.contains(&keyword) {
                    outcome.novel.push(keyword);
                }
            }
        } else {
            // Empty vocabulary: everything unmatched is novel.
            outcome
                .novel
                .extend(unmatched.iter().map(|k| normalize_keyword(k)));
        }

        outcome.matched = dedup_preserving_order(outcome.matched);
        outcome.novel = dedup_preserving_order(outcome.novel)
            .into_iter()
            .filter(|k| !k.is_empty() && !vocabulary.contains(k))
            .collect();
        outcome.final_keywords = dedup_preserving_order(
            outcome
                .matched
                .iter()
                .chain(outcome.novel.iter())
                .cloned()
                .collect(),
        );
        Ok((outcome, cost))
    }

    /// Ingest a batch: store, extract, match, register, in input order.
    /// Matching at step `i` sees the vocabulary as of step `i-1`. The
    /// reported auxiliary cost is the gateway counter delta over the
    /// batch, so it stays exact even when a completion fails to parse
    /// (the batch must own the gateway for the duration).
    pub fn ingest(&self, inputs: &[MemoryInput], bank: &mut MemoryBank) -> IngestReport {
        let before = self.aux.counters();
        let mut report = IngestReport::default();
        for (index, input) in inputs.iter().enumerate() {
            match self.ingest_one(input, bank) {
                Ok((outcome, _cost, id)) => {
                    report.records_added += 1;
                    if outcome.final_keywords.is_empty() {
                        report.unindexed.push(id);
                    } else {
                        report.records_indexed += 1;
                        report.new_vocabulary_entries += outcome.novel.len();
                        report.postings_updated += outcome.final_keywords.len();
                    }
                }
                Err((err, _cost, added)) => {
                    if added {
                        report.records_added += 1;
                    }
                    report.errors.push((index, err.to_string()));
                }
            }
        }
        let after = self.aux.counters();
        report.aux = CostCounters {
            calls: after.calls - before.calls,
            centitokens: after.centitokens() - before.centitokens(),
        };
        report
    }

    fn ingest_one(
        &self,
        input: &MemoryInput,
        bank: &mut MemoryBank,
    ) -> std::result::Result<(ExtractionOutcome, CostCounters, MemoryId), (Error, CostCounters, bool)>
    {
        let mut cost = CostCounters::default();
        let id = bank
            .add_record(&input.question, &input.answer, input.session.as_deref())
            .map_err(|e| (e, cost, false))?;
        let record = bank.record(id).expect("record just added").clone();
        let (raw, extract_cost) = self
            .extract_keywords(&record)
            .map_err(|e| (e, cost, true))?;
        cost.merge(&extract_cost);
        let (outcome, match_cost) = self
            .match_vocabulary(&raw, bank.vocabulary())
            .map_err(|e| (e, cost, true))?;
        cost.merge(&match_cost);
        if !outcome.final_keywords.is_empty() {
            bank.register_keywords(id, &outcome.final_keywords)
                .map_err(|e| (e, cost, true))?;
        }
        Ok((outcome, cost, id))
    }
}

/// Vocabulary entries offered to the matching prompt: all of them while
/// small, otherwise the entries nearest to any unmatched keyword.
fn candidate_entries<'v>(
    unmatched: &[String],
    vocabulary: &'v KeywordVocabulary,
) -> Vec<&'v str> {
    if vocabulary.len() <= MATCH_VOCAB_LIMIT {
        return vocabulary.iter().collect();
    }
    let mut scored: Vec<(usize, &str)> = vocabulary
        .iter()
        .map(|entry| {
            let best = unmatched
                .iter()
                .map(|k| edit_distance(&normalize_keyword(k), entry))
                .min()
                .unwrap_or(usize::MAX);
            (best, entry)
        })
        .collect();
    scored.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    scored
        .into_iter()
        .take(MATCH_VOCAB_LIMIT)
        .map(|(_, entry)| entry)
        .collect()
}

fn dedup_preserving_order(items: Vec<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(items.len());
    for item in items {
        if !out.contains(&item) {
            out.push(item);
        }
    }
    out
}
