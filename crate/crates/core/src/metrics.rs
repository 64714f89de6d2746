//! Answer-quality metrics and the token cost model.
//!
//! All scores are in `[0, 1]`; reports multiply by 100 for display. The
//! token estimate is `1.1*w + 0.35*s` where `w` counts words (maximal
//! alphanumeric runs) and `s` counts non-alphanumeric, non-whitespace
//! characters. For exact accounting arithmetic the same estimate is also
//! available as an integer number of centitokens (`110*w + 35*s`).

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Recall-leaning LCS weight for ROUGE-L. Surfaced in report headers.
pub const ROUGE_BETA_DEFAULT: f64 = 1.2;

/// Word tokens plus the word/symbol counts the cost model needs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedText {
    pub tokens: Vec<String>,
    pub word_count: usize,
    pub symbol_count: usize,
}

/// Lowercase and split into maximal alphanumeric runs; everything else
/// that is not whitespace counts as a symbol.
pub fn tokenize(text: &str) -> TokenizedText {
    let mut tokens = Vec::new();
    let mut symbols = 0usize;
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            if !ch.is_whitespace() {
                symbols += 1;
            }
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    TokenizedText {
        word_count: tokens.len(),
        symbol_count: symbols,
        tokens,
    }
}

/// Token estimate `1.1*w + 0.35*s`.
pub fn estimate_tokens(text: &str) -> f64 {
    let t = tokenize(text);
    1.1 * (t.word_count as f64) + 0.35 * (t.symbol_count as f64)
}

/// The same estimate as an exact integer count of hundredths of a token.
/// Sums of centitokens are associative, so accounting totals computed in
/// different orders compare equal.
pub fn centitokens(text: &str) -> u64 {
    let t = tokenize(text);
    110 * (t.word_count as u64) + 35 * (t.symbol_count as u64)
}

/// Token-set F1 against one reference; `None` when the reference is empty.
fn f1_single(pred: &HashSet<&str>, reference: &TokenizedText) -> Option<f64> {
    let ref_set: HashSet<&str> = reference.tokens.iter().map(String::as_str).collect();
    if ref_set.is_empty() {
        return None;
    }
    if pred.is_empty() {
        return Some(0.0);
    }
    let overlap = pred.intersection(&ref_set).count();
    if overlap == 0 {
        return Some(0.0);
    }
    let p = overlap as f64 / pred.len() as f64;
    let r = overlap as f64 / ref_set.len() as f64;
    Some(2.0 * p * r / (p + r))
}

/// Token-set F1, maximum over references.
///
/// Errors when every reference tokenizes to nothing.
pub fn f1(prediction: &str, references: &[&str]) -> Result<f64> {
    let pred = tokenize(prediction);
    let pred_set: HashSet<&str> = pred.tokens.iter().map(String::as_str).collect();
    references
        .iter()
        .filter_map(|r| f1_single(&pred_set, &tokenize(r)))
        .fold(None, |best: Option<f64>, s| {
            Some(best.map_or(s, |b| b.max(s)))
        })
        .ok_or(Error::UndefinedMetric("f1: all references are empty"))
}

fn counts(tokens: &[String]) -> HashMap<&str, usize> {
    let mut map = HashMap::new();
    for t in tokens {
        *map.entry(t.as_str()).or_insert(0) += 1;
    }
    map
}

/// BLEU-1: clipped unigram precision times the brevity penalty.
///
/// The effective reference length is the reference length closest to the
/// candidate length, ties resolved toward the shorter reference.
pub fn bleu1(prediction: &str, references: &[&str]) -> Result<f64> {
    let cand = tokenize(prediction);
    let refs: Vec<TokenizedText> = references
        .iter()
        .map(|r| tokenize(r))
        .filter(|t| !t.tokens.is_empty())
        .collect();
    if refs.is_empty() {
        return Err(Error::UndefinedMetric("bleu1: all references are empty"));
    }
    let c = cand.tokens.len();
    if c == 0 {
        return Ok(0.0);
    }

    let cand_counts = counts(&cand.tokens);
    let mut max_ref_counts: HashMap<&str, usize> = HashMap::new();
    for r in &refs {
        for (tok, n) in counts(&r.tokens) {
            let entry = max_ref_counts.entry(tok).or_insert(0);
            *entry = (*entry).max(n);
        }
    }
    let clipped: usize = cand_counts
        .iter()
        .map(|(tok, n)| (*n).min(max_ref_counts.get(tok).copied().unwrap_or(0)))
        .sum();
    let p1 = clipped as f64 / c as f64;

    let r_eff = refs
        .iter()
        .map(|r| r.tokens.len())
        .min_by_key(|len| (len.abs_diff(c), *len))
        .expect("refs is non-empty");
    let bp = if c > r_eff {
        1.0
    } else {
        (1.0 - r_eff as f64 / c as f64).exp()
    };
    Ok(bp * p1)
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for ta in a {
        for (j, tb) in b.iter().enumerate() {
            cur[j + 1] = if ta == tb {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L with the default beta weight.
pub fn rouge_l(prediction: &str, reference: &str) -> Result<f64> {
    rouge_l_with_beta(prediction, reference, ROUGE_BETA_DEFAULT)
}

/// LCS-based F measure `(1+beta^2)*R*P / (R + beta^2*P)`.
///
/// Errors on an empty reference; zero when there is no common subsequence.
pub fn rouge_l_with_beta(prediction: &str, reference: &str, beta: f64) -> Result<f64> {
    let pred = tokenize(prediction);
    let refr = tokenize(reference);
    if refr.tokens.is_empty() {
        return Err(Error::UndefinedMetric("rouge_l: empty reference"));
    }
    let lcs = lcs_len(&pred.tokens, &refr.tokens);
    if lcs == 0 {
        return Ok(0.0);
    }
    let r = lcs as f64 / refr.tokens.len() as f64;
    let p = lcs as f64 / pred.tokens.len() as f64;
    let b2 = beta * beta;
    Ok((1.0 + b2) * r * p / (r + b2 * p))
}

fn bigrams(tokens: &[String]) -> HashMap<(&str, &str), usize> {
    let mut map = HashMap::new();
    for w in tokens.windows(2) {
        *map.entry((w[0].as_str(), w[1].as_str())).or_insert(0) += 1;
    }
    map
}

/// ROUGE-2: clipped bigram overlap relative to the reference bigrams.
/// References with fewer than two tokens score 0 by convention (the
/// formula would divide by zero there).
pub fn rouge_2(prediction: &str, reference: &str) -> f64 {
    let pred = tokenize(prediction);
    let refr = tokenize(reference);
    if refr.tokens.len() < 2 {
        return 0.0;
    }
    let ref_bi = bigrams(&refr.tokens);
    let cand_bi = bigrams(&pred.tokens);
    let total: usize = ref_bi.values().sum();
    let matched: usize = ref_bi
        .iter()
        .map(|(b, n)| (*n).min(cand_bi.get(b).copied().unwrap_or(0)))
        .sum();
    matched as f64 / total as f64
}

/// Exact-match METEOR: greedy left-to-right unigram alignment, then
/// `F_mean * (1 - 0.5*(ch/m)^3)` with `F_mean = 10PR/(R+9P)`.
///
/// Note the penalty applies even to identical texts: `pred == ref` with
/// `m` tokens in one chunk scores `1 - 0.5/m^3`, not 1.
pub fn meteor(prediction: &str, reference: &str) -> f64 {
    let pred = tokenize(prediction);
    let refr = tokenize(reference);
    if pred.tokens.is_empty() || refr.tokens.is_empty() {
        return 0.0;
    }

    // Greedy alignment: each candidate token takes the earliest unused
    // identical reference token.
    let mut used = vec![false; refr.tokens.len()];
    let mut alignment: Vec<(usize, usize)> = Vec::new();
    for (i, tok) in pred.tokens.iter().enumerate() {
        if let Some(j) = refr
            .tokens
            .iter()
            .enumerate()
            .position(|(j, r)| !used[j] && r == tok)
        {
            used[j] = true;
            alignment.push((i, j));
        }
    }
    let m = alignment.len();
    if m == 0 {
        return 0.0;
    }

    // Chunks: maximal runs adjacent in both candidate and reference.
    let mut chunks = 1usize;
    for pair in alignment.windows(2) {
        let (pi, ri) = pair[0];
        let (pj, rj) = pair[1];
        if pj != pi + 1 || rj != ri + 1 {
            chunks += 1;
        }
    }

    let p = m as f64 / pred.tokens.len() as f64;
    let r = m as f64 / refr.tokens.len() as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
    f_mean * (1.0 - penalty)
}

/// The five per-question scores, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricScores {
    pub f1: f64,
    pub bleu1: f64,
    pub rouge_l: f64,
    pub rouge_2: f64,
    pub meteor: f64,
}

impl MetricScores {
    fn add(&mut self, other: &MetricScores) {
        self.f1 += other.f1;
        self.bleu1 += other.bleu1;
        self.rouge_l += other.rouge_l;
        self.rouge_2 += other.rouge_2;
        self.meteor += other.meteor;
    }

    fn scale(&mut self, factor: f64) {
        self.f1 *= factor;
        self.bleu1 *= factor;
        self.rouge_l *= factor;
        self.rouge_2 *= factor;
        self.meteor *= factor;
    }
}

/// Score one prediction against a reference list. F1 and BLEU-1 handle
/// multiple references natively; the single-reference metrics take the
/// maximum over references.
pub fn score_all(prediction: &str, references: &[String], rouge_beta: f64) -> Result<MetricScores> {
    let refs: Vec<&str> = references.iter().map(String::as_str).collect();
    let mut rouge_l_best = None::<f64>;
    let mut rouge_2_best = None::<f64>;
    let mut meteor_best = None::<f64>;
    for r in &refs {
        if tokenize(r).tokens.is_empty() {
            continue;
        }
        let rl = rouge_l_with_beta(prediction, r, rouge_beta)?;
        rouge_l_best = Some(rouge_l_best.map_or(rl, |b: f64| b.max(rl)));
        let r2 = rouge_2(prediction, r);
        rouge_2_best = Some(rouge_2_best.map_or(r2, |b: f64| b.max(r2)));
        let me = meteor(prediction, r);
        meteor_best = Some(meteor_best.map_or(me, |b: f64| b.max(me)));
    }
    Ok(MetricScores {
        f1: f1(prediction, &refs)?,
        bleu1: bleu1(prediction, &refs)?,
        rouge_l: rouge_l_best.ok_or(Error::UndefinedMetric("rouge_l: all references empty"))?,
        rouge_2: rouge_2_best.unwrap_or(0.0),
        meteor: meteor_best.unwrap_or(0.0),
    })
}

/// Per-category mean scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryBreakdown {
    pub category: String,
    pub count: usize,
    pub scores: MetricScores,
}

/// Score aggregation: per-category means plus the overall mean weighted
/// by category question counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub per_category: Vec<CategoryBreakdown>,
    pub weighted: MetricScores,
    pub total_questions: usize,
}

/// Aggregate `(category, scores)` rows. Categories are sorted by name;
/// empty input yields an empty report.
pub fn aggregate(items: &[(String, MetricScores)]) -> AggregateReport {
    let mut buckets: BTreeMap<&str, (usize, MetricScores)> = BTreeMap::new();
    for (category, scores) in items {
        let entry = buckets.entry(category.as_str()).or_default();
        entry.0 += 1;
        entry.1.add(scores);
    }
    let mut weighted = MetricScores::default();
    let mut total = 0usize;
    let per_category = buckets
        .into_iter()
        .map(|(category, (count, mut sum))| {
            weighted.add(&sum);
            total += count;
            sum.scale(1.0 / count as f64);
            CategoryBreakdown {
                category: category.to_string(),
                count,
                scores: sum,
            }
        })
        .collect();
    if total > 0 {
        weighted.scale(1.0 / total as f64);
    }
    AggregateReport {
        per_category,
        weighted,
        total_questions: total,
    }
}

/// Calls plus combined in/out centitokens for one pipeline stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostCounters {
    pub calls: u64,
    pub centitokens: u64,
}

impl CostCounters {
    pub fn tokens(&self) -> f64 {
        self.centitokens as f64 / 100.0
    }

    pub fn add_call(&mut self, centitokens: u64) {
        self.calls += 1;
        self.centitokens += centitokens;
    }

    pub fn merge(&mut self, other: &CostCounters) {
        self.calls += other.calls;
        self.centitokens += other.centitokens;
    }
}

/// Cost accounting split by stage (memory construction vs. question
/// response) and by provider (main vs. auxiliary).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub memory_items: usize,
    pub questions: usize,
    pub main_memory: CostCounters,
    pub aux_memory: CostCounters,
    pub main_response: CostCounters,
    pub aux_response: CostCounters,
    pub mean_response_ms: f64,
}

impl CostSummary {
    pub fn mean_per_memory(c: &CostCounters, items: usize) -> (f64, f64) {
        if items == 0 {
            (0.0, 0.0)
        } else {
            (c.calls as f64 / items as f64, c.tokens() / items as f64)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EPS: f64 = 1e-12;

    fn close(a: f64, b: f64) {
        assert!((a - b).abs() < EPS, "{a} != {b}");
    }

    #[test]
    fn tokenize_counts_words_and_symbols() {
        let t = tokenize("a,b");
        assert_eq!(t.tokens, vec!["a", "b"]);
        assert_eq!(t.word_count, 2);
        assert_eq!(t.symbol_count, 1);

        let t = tokenize("Hello, World!");
        assert_eq!(t.tokens, vec!["hello", "world"]);
        assert_eq!(t.symbol_count, 2);

        let t = tokenize("");
        assert_eq!(t.word_count, 0);
        assert_eq!(t.symbol_count, 0);
    }

    #[test]
    fn f1_identity_is_one() {
        close(f1("blue bicycle", &["blue bicycle"]).unwrap(), 1.0);
    }

    #[test]
    fn f1_hand_example() {
        // P = 1/3, R = 1/2 -> F1 = 0.4
        close(f1("the blue car", &["blue bike"]).unwrap(), 0.4);
    }

    #[test]
    fn f1_takes_max_over_references() {
        close(f1("x", &["y", "x z"]).unwrap(), 2.0 / 3.0);
    }

    #[test]
    fn f1_empty_prediction_scores_zero() {
        close(f1("", &["blue bike"]).unwrap(), 0.0);
        close(f1("...", &["blue bike"]).unwrap(), 0.0);
    }

    #[test]
    fn f1_all_empty_references_is_undefined() {
        assert!(matches!(
            f1("x", &["", "  "]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn bleu1_identity_is_one() {
        close(bleu1("blue bicycle", &["blue bicycle"]).unwrap(), 1.0);
    }

    #[test]
    fn bleu1_clips_repeated_unigrams() {
        // clipped = min(2,1) + min(1,1) = 2, p1 = 2/3, BP = 1
        close(bleu1("a a b", &["a b c"]).unwrap(), 2.0 / 3.0);
    }

    #[test]
    fn bleu1_brevity_penalty() {
        // p1 = 1, c = 1, r = 2, BP = e^{-1}
        close(bleu1("a", &["a b"]).unwrap(), (-1.0f64).exp());
    }

    #[test]
    fn bleu1_effective_length_ties_toward_shorter() {
        // c = 2; refs of length 1 and 3 are equally distant; pick 1 -> BP = 1.
        close(bleu1("a b", &["a", "a b c"]).unwrap(), 1.0);
    }

    #[test]
    fn bleu1_empty_prediction_scores_zero() {
        close(bleu1("", &["a b"]).unwrap(), 0.0);
    }

    #[test]
    fn rouge_l_identity_is_one() {
        close(rouge_l("a b c", "a b c").unwrap(), 1.0);
    }

    #[test]
    fn rouge_l_hand_example() {
        // LCS = 2, R = 2/3, P = 1, beta = 1.2
        let expected = (1.0 + 1.44) * (2.0 / 3.0) / ((2.0 / 3.0) + 1.44);
        close(rouge_l("a c", "a b c").unwrap(), expected);
    }

    #[test]
    fn rouge_l_disjoint_is_zero() {
        close(rouge_l("x y", "a b").unwrap(), 0.0);
    }

    #[test]
    fn rouge_l_empty_reference_is_undefined() {
        assert!(matches!(
            rouge_l("a", ""),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn rouge_2_identity_is_one() {
        close(rouge_2("a b c", "a b c"), 1.0);
    }

    #[test]
    fn rouge_2_hand_example() {
        close(rouge_2("a b c", "a b d"), 0.5);
    }

    #[test]
    fn rouge_2_single_token_reference_is_zero() {
        close(rouge_2("a b", "a"), 0.0);
    }

    #[test]
    fn meteor_identity_keeps_penalty() {
        // m = 2 in one chunk: 1 - 0.5/8
        close(meteor("blue bike", "blue bike"), 0.9375);
    }

    #[test]
    fn meteor_no_overlap_is_zero() {
        close(meteor("x y", "a b"), 0.0);
    }

    #[test]
    fn meteor_crossed_alignment_counts_two_chunks() {
        close(meteor("b a", "a b"), 0.5);
    }

    #[test]
    fn estimate_tokens_formula() {
        close(estimate_tokens(""), 0.0);
        close(estimate_tokens("a,b"), 1.1 * 2.0 + 0.35 * 1.0);
        // 10 words, 2 symbols -> 11.7
        close(
            estimate_tokens("one two three four five six seven eight nine ten!?"),
            1.1 * 10.0 + 0.35 * 2.0,
        );
    }

    #[test]
    fn centitokens_matches_estimate() {
        for s in ["", "a,b", "Hello, World!", "x y z ..."] {
            let t = tokenize(s);
            assert_eq!(
                centitokens(s),
                110 * t.word_count as u64 + 35 * t.symbol_count as u64
            );
            close(centitokens(s) as f64 / 100.0, estimate_tokens(s));
        }
    }

    #[test]
    fn estimate_tokens_additive_over_space_concat() {
        let a = "blue bike, fast";
        let b = "red car!";
        let joined = format!("{a} {b}");
        close(
            estimate_tokens(&joined),
            estimate_tokens(a) + estimate_tokens(b),
        );
    }

    #[test]
    fn aggregate_weighted_mean() {
        let rows = vec![
            ("a".to_string(), MetricScores { f1: 0.4, ..Default::default() }),
            ("a".to_string(), MetricScores { f1: 0.4, ..Default::default() }),
            ("a".to_string(), MetricScores { f1: 0.4, ..Default::default() }),
            ("b".to_string(), MetricScores { f1: 0.8, ..Default::default() }),
        ];
        let report = aggregate(&rows);
        assert_eq!(report.total_questions, 4);
        assert_eq!(report.per_category.len(), 2);
        close(report.per_category[0].scores.f1, 0.4);
        close(report.per_category[1].scores.f1, 0.8);
        close(report.weighted.f1, 0.5);
    }

    #[test]
    fn aggregate_single_category_equals_mean() {
        let rows = vec![
            ("a".to_string(), MetricScores { bleu1: 0.2, ..Default::default() }),
            ("a".to_string(), MetricScores { bleu1: 0.6, ..Default::default() }),
        ];
        let report = aggregate(&rows);
        close(report.weighted.bleu1, 0.4);
        close(report.per_category[0].scores.bleu1, 0.4);
    }

    #[test]
    fn aggregate_empty_is_empty() {
        let report = aggregate(&[]);
        assert_eq!(report.total_questions, 0);
        assert!(report.per_category.is_empty());
    }

    #[test]
    fn bleu1_numerator_never_drops_when_adding_a_matching_token() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let alphabet = ["a", "b", "c", "d"];
        for _ in 0..200 {
            let ref_len = rng.random_range(1..=6);
            let reference: Vec<&str> = (0..ref_len)
                .map(|_| alphabet[rng.random_range(0..alphabet.len())])
                .collect();
            let pred_len = rng.random_range(1..=6);
            let mut pred: Vec<&str> = (0..pred_len)
                .map(|_| alphabet[rng.random_range(0..alphabet.len())])
                .collect();
            let reference_text = reference.join(" ");
            let before =
                bleu1(&pred.join(" "), &[&reference_text]).unwrap() * pred.len() as f64;
            // Recover the clipped numerator by dividing out BP.
            let c = pred.len();
            let r = reference.len();
            let bp = |c: usize| if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
            let numerator_before = before / bp(c);
            pred.push(reference[rng.random_range(0..reference.len())]);
            let after =
                bleu1(&pred.join(" "), &[&reference_text]).unwrap() * pred.len() as f64;
            let numerator_after = after / bp(c + 1);
            assert!(numerator_after + 1e-9 >= numerator_before);
        }
    }

    #[test]
    fn asymmetry_witnesses() {
        // f1 over sets is symmetric for equal-size texts; bleu1 and the
        // rouge family are not.
        let b_ab = bleu1("a", &["a b"]).unwrap();
        let b_ba = bleu1("a b", &["a"]).unwrap();
        assert!((b_ab - b_ba).abs() > 1e-6);
        let r_ab = rouge_2("a b c", "a b").abs();
        let r_ba = rouge_2("a b", "a b c").abs();
        assert!((r_ab - r_ba).abs() > 1e-6);
    }
}
