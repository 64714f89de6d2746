//! The per-query reflective loop: walk the keyword pyramid group by
//! group, show only memories not seen in earlier rounds, ask the main
//! LLM to answer and judge sufficiency, carry critical memories forward,
//! and finally rewrite the accepted answer into a standardized form.

use std::collections::BTreeSet;
use std::time::Instant;

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::gateway::{parse_assessment, ChatRequest, Gateway, RoleTag};
use crate::metrics::centitokens;
use crate::prompts::{render_memory_list, PromptSet};
use crate::pyramid::{build_pyramid, next_group, select_query_keywords, DEPTH_CAP_DEFAULT};
use crate::store::{MemoryBank, MemoryId, MemoryRecord};

/// Default reflective-round budget.
pub const MAX_ROUNDS_DEFAULT: usize = 4;

/// Per-query knobs. `max_rounds = 1` is exactly the one-shot variant.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LoopConfig {
    pub depth_cap: usize,
    pub max_rounds: usize,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            depth_cap: DEPTH_CAP_DEFAULT,
            max_rounds: MAX_ROUNDS_DEFAULT,
        }
    }
}

/// Why the loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Accepted,
    MaxRounds,
    PyramidExhausted,
    NoKeywords,
}

/// Mutable loop state across rounds.
#[derive(Debug, Default)]
pub struct RoundState {
    pub round_index: usize,
    /// Everything ever retrieved (pre-filter), not just what was shown.
    pub seen_ids: BTreeSet<MemoryId>,
    /// Critical memories from the latest round; replaced each round.
    pub critical_ids: Vec<MemoryId>,
    pub prev_answer: Option<String>,
    pub accepted: bool,
    pub groups_consumed: Vec<Vec<String>>,
}

/// One consumed round, as recorded in the trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundRecord {
    pub group_keywords: Vec<String>,
    /// |R|: memories retrieved by the group.
    pub retrieved: usize,
    /// |R~|: memories actually shown after redundancy filtering.
    pub fresh: usize,
    pub fresh_ids: Vec<MemoryId>,
    pub answer: String,
    pub accepted: bool,
    pub critical_ids: Vec<MemoryId>,
    pub calls: u64,
    pub centitokens_in: u64,
    pub centitokens_out: u64,
    pub latency_ms: u64,
}

/// Full observability record for one query.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryTrace {
    pub query: String,
    pub query_keywords: Vec<String>,
    pub rounds: Vec<RoundRecord>,
    pub final_answer: String,
    pub rewritten_answer: String,
    pub stop_reason: StopReason,
    pub warnings: Vec<String>,
    pub aux_calls: u64,
    pub aux_centitokens: u64,
    pub main_calls: u64,
    pub main_centitokens: u64,
    pub wall_ms: u64,
}

impl QueryTrace {
    fn new(query: &str) -> Self {
        QueryTrace {
            query: query.to_string(),
            query_keywords: Vec::new(),
            rounds: Vec::new(),
            final_answer: String::new(),
            rewritten_answer: String::new(),
            stop_reason: StopReason::PyramidExhausted,
            warnings: Vec::new(),
            aux_calls: 0,
            aux_centitokens: 0,
            main_calls: 0,
            main_centitokens: 0,
            wall_ms: 0,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serialization")
    }

    /// JSON with every wall-clock field removed; byte-stable across runs
    /// under a scripted provider.
    pub fn stable_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("trace serialization");
        strip_wall_clock(&mut value);
        serde_json::to_string_pretty(&value).expect("trace serialization")
    }
}

/// Remove timing fields recursively; golden comparisons use this.
pub fn strip_wall_clock(value: &mut Value) {
    match value {
        Value::Object(map) => {
            map.remove("wall_ms");
            map.remove("latency_ms");
            map.remove("mean_response_ms");
            map.remove("total_latency_ms");
            for v in map.values_mut() {
                strip_wall_clock(v);
            }
        }
        Value::Array(arr) => {
            for v in arr.iter_mut() {
                strip_wall_clock(v);
            }
        }
        _ => {}
    }
}

/// R~ = R minus everything retrieved in earlier rounds.
pub fn filter_new(current: &[MemoryId], seen: &BTreeSet<MemoryId>) -> Vec<MemoryId> {
    current
        .iter()
        .copied()
        .filter(|id| !seen.contains(id))
        .collect()
}

/// Build the answering prompts: the system template plus a user prompt
/// with four labeled sections. Absent sections render as explicit
/// `none` markers so round 1 is well-formed.
pub fn assemble_input(
    prompts: &PromptSet,
    query: &str,
    prev_answer: Option<&str>,
    critical: &[&MemoryRecord],
    fresh: &[&MemoryRecord],
) -> (String, String) {
    let prev = prev_answer.filter(|a| !a.trim().is_empty()).unwrap_or("none");
    let user = format!(
        "Question: {query}\nPrevious answer: {prev}\nCritical memories:\n{}\nNewly retrieved memories:\n{}",
        render_memory_list(critical),
        render_memory_list(fresh),
    );
    (prompts.answer_system().to_string(), user)
}

/// Result of one answer/assessment call.
#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub answer: String,
    pub accepted: bool,
    pub critical_ids: Vec<MemoryId>,
    pub calls: u64,
    pub centitokens_in: u64,
    pub centitokens_out: u64,
    pub latency_ms: u64,
    pub warnings: Vec<String>,
}

/// One answer/assessment round. Critical ids are filtered to memories
/// actually present in the prompt; a malformed completion gets one
/// re-ask and then degrades to `accepted = false` with the previous
/// critical set rather than aborting the query.
pub fn answer_round(
    main: &Gateway,
    system: &str,
    user: &str,
    allowed_ids: &BTreeSet<MemoryId>,
    prev_answer: &str,
    prev_critical: &[MemoryId],
) -> Result<RoundOutcome> {
    let mut outcome = RoundOutcome {
        answer: String::new(),
        accepted: false,
        critical_ids: Vec::new(),
        calls: 0,
        centitokens_in: 0,
        centitokens_out: 0,
        latency_ms: 0,
        warnings: Vec::new(),
    };

    let mut parsed = None;
    let mut user_prompt = user.to_string();
    for attempt in 0..2 {
        let request = ChatRequest::new(RoleTag::Answer, system, user_prompt.clone());
        let response = main.complete(&request)?;
        outcome.calls += 1;
        outcome.centitokens_in += response.centitokens_in;
        outcome.centitokens_out += response.centitokens_out;
        outcome.latency_ms += response.latency.as_millis() as u64;
        match parse_assessment(&response.text) {
            Ok(a) => {
                parsed = Some(a);
                break;
            }
            Err(e) if attempt == 0 => {
                outcome
                    .warnings
                    .push(format!("assessment parse failed, re-asking: {e}"));
                user_prompt = format!(
                    "{user}\n\nYour previous reply could not be parsed. Respond with exactly one JSON object of the form {{\"answer\": \"...\", \"sufficient\": true, \"critical_ids\": []}} and nothing else."
                );
            }
            Err(e) => {
                outcome
                    .warnings
                    .push(format!("assessment parse failed twice, degrading: {e}"));
            }
        }
    }

    match parsed {
        Some(assessment) => {
            outcome.answer = assessment.answer;
            outcome.accepted = assessment.sufficient;
            let mut kept: Vec<MemoryId> = Vec::new();
            for id in assessment.critical_ids {
                if allowed_ids.contains(&id) {
                    if !kept.contains(&id) {
                        kept.push(id);
                    }
                } else {
                    let message =
                        format!("critical id {id} was not shown in this round's prompt; dropped");
                    warn!("{message}");
                    outcome.warnings.push(message);
                }
            }
            kept.sort_unstable();
            outcome.critical_ids = kept;
        }
        None => {
            outcome.answer = prev_answer.to_string();
            outcome.accepted = false;
            outcome.critical_ids = prev_critical.to_vec();
        }
    }
    Ok(outcome)
}

/// Result of the final rewriting pass.
#[derive(Debug, Clone)]
pub struct RewriteOutcome {
    pub answer: String,
    pub calls: u64,
    pub centitokens_in: u64,
    pub centitokens_out: u64,
    pub latency_ms: u64,
    pub warnings: Vec<String>,
}

/// Rewrite the final answer using only the final critical memories; no
/// retrieval happens here. Best-effort: on any gateway failure the
/// original answer is kept.
pub fn rewrite(
    main: &Gateway,
    prompts: &PromptSet,
    answer: &str,
    critical: &[&MemoryRecord],
) -> RewriteOutcome {
    let user = format!(
        "Answer: {answer}\nCritical memories:\n{}",
        render_memory_list(critical)
    );
    let system = prompts.rewrite_system();
    let mut outcome = RewriteOutcome {
        answer: answer.to_string(),
        calls: 1,
        centitokens_in: centitokens(system) + centitokens(&user),
        centitokens_out: 0,
        latency_ms: 0,
        warnings: Vec::new(),
    };
    let request = ChatRequest::new(RoleTag::Rewrite, system, user);
    match main.complete(&request) {
        Ok(response) => {
            outcome.centitokens_in = response.centitokens_in;
            outcome.centitokens_out = response.centitokens_out;
            outcome.latency_ms = response.latency.as_millis() as u64;
            let text = response.text.trim();
            if text.is_empty() {
                outcome
                    .warnings
                    .push("rewrite returned empty text; keeping the original answer".to_string());
            } else {
                outcome.answer = text.to_string();
            }
        }
        Err(e) => {
            let message = format!("rewrite failed, keeping the original answer: {e}");
            warn!("{message}");
            outcome.warnings.push(message);
        }
    }
    outcome
}

/// The per-query orchestrator over a shared bank and two gateways.
pub struct ReflectiveLoop<'a> {
    main: &'a Gateway,
    aux: &'a Gateway,
    prompts: &'a PromptSet,
    config: LoopConfig,
}

fn expand<'b>(bank: &'b MemoryBank, ids: &[MemoryId]) -> Vec<&'b MemoryRecord> {
    ids.iter().filter_map(|id| bank.record(*id)).collect()
}

impl<'a> ReflectiveLoop<'a> {
    pub fn new(
        main: &'a Gateway,
        aux: &'a Gateway,
        prompts: &'a PromptSet,
        config: LoopConfig,
    ) -> Self {
        ReflectiveLoop {
            main,
            aux,
            prompts,
            config,
        }
    }

    pub fn config(&self) -> LoopConfig {
        self.config
    }

    /// Run the full loop for one query. The bank is never mutated.
    pub fn run_query(&self, query: &str, bank: &MemoryBank) -> Result<QueryTrace> {
        if bank.is_empty() {
            return Err(Error::Validation("memory bank is empty".into()));
        }
        let started = Instant::now();
        let mut trace = QueryTrace::new(query);

        let keywords = if bank.vocabulary().is_empty() {
            trace
                .warnings
                .push("vocabulary is empty; keyword selection skipped".to_string());
            Vec::new()
        } else {
            let selection = select_query_keywords(
                self.aux,
                self.prompts,
                query,
                bank.vocabulary(),
                self.config.depth_cap,
            )?;
            trace.aux_calls += 1;
            trace.aux_centitokens +=
                selection.response.centitokens_in + selection.response.centitokens_out;
            trace.warnings.extend(selection.warnings);
            selection.keywords
        };
        trace.query_keywords = keywords.clone();

        let final_critical: Vec<MemoryId> = if keywords.is_empty() {
            trace.stop_reason = StopReason::NoKeywords;
            self.fallback_round(query, bank, &mut trace)?
        } else {
            self.pyramid_rounds(query, bank, &keywords, &mut trace)?
        };

        if trace.final_answer.trim().is_empty() {
            trace.rewritten_answer = trace.final_answer.clone();
        } else {
            let critical = expand(bank, &final_critical);
            let out = rewrite(self.main, self.prompts, &trace.final_answer, &critical);
            trace.main_calls += out.calls;
            trace.main_centitokens += out.centitokens_in + out.centitokens_out;
            trace.warnings.extend(out.warnings);
            trace.rewritten_answer = out.answer;
        }

        trace.wall_ms = started.elapsed().as_millis() as u64;
        Ok(trace)
    }

    /// Walk the pyramid. Groups whose memories were all seen before are
    /// skipped without an LLM call or a round. Returns the final
    /// critical set for rewriting.
    fn pyramid_rounds(
        &self,
        query: &str,
        bank: &MemoryBank,
        keywords: &[String],
        trace: &mut QueryTrace,
    ) -> Result<Vec<MemoryId>> {
        let pyramid = build_pyramid(keywords, bank.mapping());
        let mut state = RoundState::default();
        let mut cursor = 0;

        trace.stop_reason = loop {
            let Some((group, next)) = next_group(&pyramid, cursor) else {
                break StopReason::PyramidExhausted;
            };
            cursor = next;

            let fresh_ids = filter_new(&group.memories, &state.seen_ids);
            state.seen_ids.extend(group.memories.iter().copied());
            if fresh_ids.is_empty() {
                continue;
            }

            state.round_index += 1;
            state.groups_consumed.push(group.keywords.clone());

            let critical_records = expand(bank, &state.critical_ids);
            let fresh_records = expand(bank, &fresh_ids);
            let (system, user) = assemble_input(
                self.prompts,
                query,
                state.prev_answer.as_deref(),
                &critical_records,
                &fresh_records,
            );
            let allowed: BTreeSet<MemoryId> = state
                .critical_ids
                .iter()
                .chain(fresh_ids.iter())
                .copied()
                .collect();
            let out = answer_round(
                self.main,
                &system,
                &user,
                &allowed,
                state.prev_answer.as_deref().unwrap_or(""),
                &state.critical_ids,
            )?;

            trace.main_calls += out.calls;
            trace.main_centitokens += out.centitokens_in + out.centitokens_out;
            trace.warnings.extend(out.warnings.iter().cloned());
            trace.rounds.push(RoundRecord {
                group_keywords: group.keywords.clone(),
                retrieved: group.memories.len(),
                fresh: fresh_ids.len(),
                fresh_ids,
                answer: out.answer.clone(),
                accepted: out.accepted,
                critical_ids: out.critical_ids.clone(),
                calls: out.calls,
                centitokens_in: out.centitokens_in,
                centitokens_out: out.centitokens_out,
                latency_ms: out.latency_ms,
            });

            state.prev_answer = Some(out.answer);
            state.critical_ids = out.critical_ids;
            state.accepted = out.accepted;

            if state.accepted {
                break StopReason::Accepted;
            }
            if state.round_index >= self.config.max_rounds {
                break StopReason::MaxRounds;
            }
        };

        trace.final_answer = state.prev_answer.unwrap_or_default();
        Ok(state.critical_ids)
    }

    /// No usable query keywords: answer one round over the union of the
    /// most-populous keywords' memories.
    fn fallback_round(
        &self,
        query: &str,
        bank: &MemoryBank,
        trace: &mut QueryTrace,
    ) -> Result<Vec<MemoryId>> {
        let mut ranked: Vec<(&str, usize)> = bank
            .vocabulary()
            .iter()
            .map(|v| (v, bank.associated_memories(v).len()))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let top: Vec<String> = ranked
            .into_iter()
            .take(self.config.depth_cap)
            .map(|(v, _)| v.to_string())
            .collect();

        let mut union: BTreeSet<MemoryId> = BTreeSet::new();
        for keyword in &top {
            union.extend(bank.associated_memories(keyword).iter().copied());
        }
        let fresh_ids: Vec<MemoryId> = union.iter().copied().collect();
        let fresh_records = expand(bank, &fresh_ids);
        let (system, user) = assemble_input(self.prompts, query, None, &[], &fresh_records);
        let out = answer_round(self.main, &system, &user, &union, "", &[])?;

        trace.main_calls += out.calls;
        trace.main_centitokens += out.centitokens_in + out.centitokens_out;
        trace.warnings.extend(out.warnings.iter().cloned());
        trace.rounds.push(RoundRecord {
            group_keywords: top,
            retrieved: fresh_ids.len(),
            fresh: fresh_ids.len(),
            fresh_ids,
            answer: out.answer.clone(),
            accepted: out.accepted,
            critical_ids: out.critical_ids.clone(),
            calls: out.calls,
            centitokens_in: out.centitokens_in,
            centitokens_out: out.centitokens_out,
            latency_ms: out.latency_ms,
        });
        trace.final_answer = out.answer;
        Ok(out.critical_ids)
    }
}
