//! Per-query keyword pyramid: the lattice of all non-empty subsets of
//! the selected query keywords, with each group's memory set computed by
//! intersecting posting lists.
//!
//! Traversal runs from the most specific level (all keywords) down to
//! single keywords; within a level, groups are ordered by memory count
//! descending, ties broken by the lexicographic keyword tuple so runs
//! are reproducible.

use log::warn;
use serde::Serialize;

use crate::error::Result;
use crate::gateway::{parse_selection, ChatRequest, ChatResponse, Gateway, RoleTag};
use crate::keyword::normalize_list;
use crate::prompts::{render_keyword_list, PromptSet};
use crate::store::{KeywordMapping, KeywordVocabulary, MemoryId};

/// Default pyramid depth (also the query-keyword cap).
pub const DEPTH_CAP_DEFAULT: usize = 4;

/// Hard ceiling on depth; beyond this the lattice size is pointless.
pub const DEPTH_CAP_MAX: usize = 8;

/// One l-subset of the query keywords and its retrieved memories.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KeywordGroup {
    /// Sorted subset of the query keywords.
    pub keywords: Vec<String>,
    /// Number of keywords in the group.
    pub level: usize,
    /// Intersection of the keywords' posting lists, sorted.
    pub memories: Vec<MemoryId>,
}

/// The full subset lattice plus its traversal order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KeywordPyramid {
    /// Query keywords in the order the model returned them.
    pub query_keywords: Vec<String>,
    /// `levels[l-1]` holds every l-keyword group, already in within-level
    /// traversal order.
    levels: Vec<Vec<KeywordGroup>>,
    /// Traversal as (level index, group index) pairs, top level first.
    traversal: Vec<(usize, usize)>,
}

impl KeywordPyramid {
    pub fn levels(&self) -> &[Vec<KeywordGroup>] {
        &self.levels
    }

    pub fn total_groups(&self) -> usize {
        self.traversal.len()
    }

    /// Group at a traversal position.
    pub fn group_at(&self, cursor: usize) -> Option<&KeywordGroup> {
        let (li, gi) = *self.traversal.get(cursor)?;
        Some(&self.levels[li][gi])
    }

    /// Groups in traversal order.
    pub fn traversal(&self) -> impl Iterator<Item = &KeywordGroup> {
        self.traversal.iter().map(|(li, gi)| &self.levels[*li][*gi])
    }
}

/// Advance the traversal: the group at `cursor` plus the next cursor, or
/// `None` when the pyramid is exhausted.
pub fn next_group(pyramid: &KeywordPyramid, cursor: usize) -> Option<(&KeywordGroup, usize)> {
    pyramid.group_at(cursor).map(|g| (g, cursor + 1))
}

/// Sorted intersection of the posting lists of `keywords`.
fn intersect_postings(keywords: &[String], mapping: &KeywordMapping) -> Vec<MemoryId> {
    let mut iter = keywords.iter();
    let first = match iter.next() {
        Some(k) => mapping.postings(k).to_vec(),
        None => return Vec::new(),
    };
    iter.fold(first, |acc, k| {
        let other = mapping.postings(k);
        let mut out = Vec::with_capacity(acc.len().min(other.len()));
        let (mut i, mut j) = (0, 0);
        while i < acc.len() && j < other.len() {
            match acc[i].cmp(&other[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    out.push(acc[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        out
    })
}

/// Build the full lattice over the query keywords. A pure function of
/// the keyword set and the mapping; empty memory sets are legal groups.
pub fn build_pyramid(query_keywords: &[String], mapping: &KeywordMapping) -> KeywordPyramid {
    let query_keywords = normalize_list(query_keywords);
    let mut sorted = query_keywords.clone();
    sorted.sort();
    let n = sorted.len();

    let mut levels: Vec<Vec<KeywordGroup>> = Vec::with_capacity(n);
    for level in 1..=n {
        let mut groups: Vec<KeywordGroup> = Vec::new();
        let mut combo: Vec<usize> = (0..level).collect();
        'combos: loop {
            let keywords: Vec<String> = combo.iter().map(|&i| sorted[i].clone()).collect();
            let memories = intersect_postings(&keywords, mapping);
            groups.push(KeywordGroup {
                keywords,
                level,
                memories,
            });
            // Advance to the next lexicographic combination of `level`
            // indices out of n; stop when no position can advance.
            let mut pos = level;
            loop {
                if pos == 0 {
                    break 'combos;
                }
                pos -= 1;
                if combo[pos] != pos + n - level {
                    combo[pos] += 1;
                    for k in pos + 1..level {
                        combo[k] = combo[k - 1] + 1;
                    }
                    continue 'combos;
                }
            }
        }
        groups.sort_by(|a, b| {
            b.memories
                .len()
                .cmp(&a.memories.len())
                .then_with(|| a.keywords.cmp(&b.keywords))
        });
        levels.push(groups);
    }

    let mut traversal = Vec::with_capacity((1usize << n).saturating_sub(1));
    for li in (0..n).rev() {
        for gi in 0..levels[li].len() {
            traversal.push((li, gi));
        }
    }

    KeywordPyramid {
        query_keywords,
        levels,
        traversal,
    }
}

/// Outcome of query-keyword selection: the kept keywords, the raw
/// response for accounting, and any defensive-filter warnings.
#[derive(Debug)]
pub struct SelectionOutcome {
    pub keywords: Vec<String>,
    pub response: ChatResponse,
    pub warnings: Vec<String>,
}

/// Ask the auxiliary LLM for query-relevant keywords (one call), then
/// defensively keep only vocabulary entries, deduplicated, capped to
/// `depth_cap`. An empty result signals that no pyramid can be built;
/// the caller decides the fallback.
pub fn select_query_keywords(
    aux: &Gateway,
    prompts: &PromptSet,
    query: &str,
    vocabulary: &KeywordVocabulary,
    depth_cap: usize,
) -> Result<SelectionOutcome> {
    let user = format!(
        "Question: {query}\nVocabulary:\n{}",
        render_keyword_list(vocabulary.iter())
    );
    let request = ChatRequest::new(RoleTag::Select, prompts.select_system(depth_cap), user);
    let response = aux.complete(&request)?;
    let raw = parse_selection(&response.text)?;
    let mut warnings = Vec::new();
    let mut keywords = Vec::new();
    for keyword in normalize_list(&raw) {
        if !vocabulary.contains(&keyword) {
            let message = format!("selected keyword {keyword:?} is not in the vocabulary; dropped");
            warn!("{message}");
            warnings.push(message);
            continue;
        }
        if keywords.len() < depth_cap {
            keywords.push(keyword);
        } else {
            warnings.push(format!(
                "selected keyword {keyword:?} beyond the depth cap {depth_cap}; dropped"
            ));
        }
    }
    Ok(SelectionOutcome {
        keywords,
        response,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::Script;
    use crate::store::MemoryBank;

    fn bank_with(postings: &[(&str, &[MemoryId])]) -> MemoryBank {
        let mut bank = MemoryBank::new();
        let max_id = postings
            .iter()
            .flat_map(|(_, ids)| ids.iter())
            .copied()
            .max()
            .unwrap_or(0);
        for _ in 0..=max_id {
            bank.add_record("q", "a", None).unwrap();
        }
        for (kw, ids) in postings {
            for id in *ids {
                bank.register_keywords(*id, &[kw.to_string()]).unwrap();
            }
        }
        bank
    }

    #[test]
    fn level_sizes_are_binomial() {
        let bank = bank_with(&[("a", &[0]), ("b", &[1]), ("c", &[2])]);
        let q = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        let p = build_pyramid(&q, bank.mapping());
        let sizes: Vec<usize> = p.levels().iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![3, 3, 1]);
        assert_eq!(p.total_groups(), 7);
    }

    #[test]
    fn intersection_and_ordering() {
        let bank = bank_with(&[("a", &[1, 2]), ("b", &[2, 3])]);
        let q = vec!["a".to_string(), "b".to_string()];
        let p = build_pyramid(&q, bank.mapping());
        let order: Vec<(Vec<String>, Vec<MemoryId>)> = p
            .traversal()
            .map(|g| (g.keywords.clone(), g.memories.clone()))
            .collect();
        // Top group is the pair, then the singletons (equal sizes, lex).
        assert_eq!(order[0].0, vec!["a", "b"]);
        assert_eq!(order[0].1, vec![2]);
        assert_eq!(order[1].0, vec!["a"]);
        assert_eq!(order[2].0, vec!["b"]);
    }

    #[test]
    fn ties_break_lexicographically() {
        let bank = bank_with(&[("a", &[0, 1]), ("b", &[0, 1]), ("c", &[0, 1]), ("d", &[0, 1])]);
        let q: Vec<String> = ["d", "c", "b", "a"].iter().map(|s| s.to_string()).collect();
        let p = build_pyramid(&q, bank.mapping());
        assert_eq!(p.total_groups(), 15);
        // All memory sets equal, so each level is purely lexicographic.
        let level2: Vec<Vec<String>> = p.levels()[1].iter().map(|g| g.keywords.clone()).collect();
        assert_eq!(
            level2,
            vec![
                vec!["a", "b"],
                vec!["a", "c"],
                vec!["a", "d"],
                vec!["b", "c"],
                vec!["b", "d"],
                vec!["c", "d"],
            ]
        );
        // Query order is preserved for logging only.
        assert_eq!(p.query_keywords, vec!["d", "c", "b", "a"]);
    }

    #[test]
    fn traversal_is_top_down_and_exhaustive() {
        let bank = bank_with(&[("a", &[0]), ("b", &[0, 1]), ("c", &[1, 2])]);
        let q = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        let p = build_pyramid(&q, bank.mapping());

        let mut cursor = 0;
        let mut seen = Vec::new();
        while let Some((group, next)) = next_group(&p, cursor) {
            seen.push(group.keywords.clone());
            cursor = next;
        }
        assert_eq!(cursor, 7);
        assert!(next_group(&p, cursor).is_none());
        assert_eq!(seen.len(), 7);
        // Every group appears exactly once.
        let mut dedup = seen.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), 7);
        // Levels are non-increasing along the traversal.
        let levels: Vec<usize> = seen.iter().map(Vec::len).collect();
        assert!(levels.windows(2).all(|w| w[0] >= w[1]));
        assert_eq!(levels[0], 3);
    }

    #[test]
    fn empty_groups_are_kept_in_the_lattice() {
        let bank = bank_with(&[("a", &[0]), ("b", &[1])]);
        let q = vec!["a".to_string(), "b".to_string()];
        let p = build_pyramid(&q, bank.mapping());
        let top = p.group_at(0).unwrap();
        assert_eq!(top.keywords, vec!["a", "b"]);
        assert!(top.memories.is_empty());
    }

    #[test]
    fn selection_keeps_vocabulary_entries_in_model_order() {
        let bank = bank_with(&[("james", &[0]), ("adventure", &[0]), ("book", &[0])]);
        let gw = Gateway::scripted(Script::new().default_for(
            RoleTag::Select,
            r#"{"keywords":["james","adventure","book"]}"#,
        ));
        let prompts = PromptSet::builtin();
        let out =
            select_query_keywords(&gw, &prompts, "what book?", bank.vocabulary(), 4).unwrap();
        assert_eq!(out.keywords, vec!["james", "adventure", "book"]);
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn selection_drops_non_vocabulary_keywords() {
        let bank = bank_with(&[("james", &[0])]);
        let gw = Gateway::scripted(Script::new().default_for(
            RoleTag::Select,
            r#"{"keywords":["james","unicorn"]}"#,
        ));
        let prompts = PromptSet::builtin();
        let out = select_query_keywords(&gw, &prompts, "q", bank.vocabulary(), 4).unwrap();
        assert_eq!(out.keywords, vec!["james"]);
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn selection_caps_at_depth() {
        let bank = bank_with(&[
            ("a", &[0]),
            ("b", &[0]),
            ("c", &[0]),
            ("d", &[0]),
            ("e", &[0]),
            ("f", &[0]),
        ]);
        let gw = Gateway::scripted(Script::new().default_for(
            RoleTag::Select,
            r#"{"keywords":["a","b","c","d","e","f"]}"#,
        ));
        let prompts = PromptSet::builtin();
        let out = select_query_keywords(&gw, &prompts, "q", bank.vocabulary(), 4).unwrap();
        assert_eq!(out.keywords, vec!["a", "b", "c", "d"]);
    }

    #[test]
    fn subset_monotonicity_on_a_fixed_bank() {
        let bank = bank_with(&[
            ("a", &[0, 1, 2, 3]),
            ("b", &[1, 2, 3, 4]),
            ("c", &[2, 3, 4, 5]),
        ]);
        let q = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        let p = build_pyramid(&q, bank.mapping());
        let groups: Vec<&KeywordGroup> = p.traversal().collect();
        for g in &groups {
            for h in &groups {
                if g.keywords.iter().all(|k| h.keywords.contains(k)) {
                    // g subset of h: h's memories must be within g's.
                    assert!(h.memories.iter().all(|m| g.memories.contains(m)));
                }
            }
        }
    }
}
