//! Keyword normalization and small string helpers shared by the
//! vocabulary, mapping, and ingestion paths.

/// Normalize a keyword: case-fold, trim, and collapse internal whitespace
/// runs to a single space. Every vocabulary lookup goes through this.
pub fn normalize_keyword(raw: &str) -> String {
    raw.to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Normalize a list of keywords, dropping empties and duplicates while
/// preserving first-seen order.
pub fn normalize_list(raw: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(raw.len());
    for kw in raw {
        let n = normalize_keyword(kw);
        if !n.is_empty() && !out.contains(&n) {
            out.push(n);
        }
    }
    out
}

/// Levenshtein edit distance over chars. Used to rank vocabulary entries
/// by closeness when the matching prompt has to be truncated.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Stable 64-bit FNV-1a hash. Used for scripted-response keys and bank
/// cache file names; must not change across runs or platforms.
pub fn fnv1a64(text: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in text.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
