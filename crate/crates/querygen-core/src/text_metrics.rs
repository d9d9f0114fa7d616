//! Lexical metrics behind rewards and offline evaluation: LCS-based ROUGE-L,
//! length checks, format validity and near-duplicate detection.
//!
//! All functions are pure and deterministic. ROUGE-L uses the β=1 harmonic
//! mean, so `f = 2PR / (P + R)` with `f = 0` when both components vanish.

use crate::prompt_codec::{OutputMode, OutputSegments};

/// ROUGE-L precision / recall / F score triple, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

impl RougeScore {
    pub const ZERO: RougeScore = RougeScore {
        precision: 0.0,
        recall: 0.0,
        f: 0.0,
    };
}

/// Length of the longest common subsequence between `a` and `b`.
///
/// Two-row dynamic programming, O(|a|·|b|) time, O(|b|) space.
pub fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let m = b.len();
    let mut prev = vec![0usize; m + 1];
    let mut curr = vec![0usize; m + 1];
    for item in a {
        for j in 1..=m {
            curr[j] = if *item == b[j - 1] {
                prev[j - 1] + 1
            } else {
                prev[j].max(curr[j - 1])
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[m]
}

/// ROUGE-L of a candidate sequence against a reference sequence.
///
/// `P = LCS/|candidate|`, `R = LCS/|reference|`; empty candidate or
/// reference yields the all-zero score.
pub fn rouge_l<T: PartialEq>(candidate: &[T], reference: &[T]) -> RougeScore {
    if candidate.is_empty() || reference.is_empty() {
        return RougeScore::ZERO;
    }
    let lcs = lcs_length(candidate, reference) as f64;
    let precision = lcs / candidate.len() as f64;
    let recall = lcs / reference.len() as f64;
    let f = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    RougeScore {
        precision,
        recall,
        f,
    }
}

/// Whitespace tokenization used when scoring plain query strings.
pub fn tokenize(s: &str) -> Vec<String> {
    s.split_whitespace().map(|t| t.to_lowercase()).collect()
}

/// ROUGE-L over whitespace tokens of two strings.
pub fn rouge_l_text(candidate: &str, reference: &str) -> RougeScore {
    rouge_l(&tokenize(candidate), &tokenize(reference))
}

/// 1 if the query's character count lies within `[len_min, len_max]`
/// (both inclusive), else 0.
pub fn length_reward(query: &str, len_min: usize, len_max: usize) -> f64 {
    let n = query.chars().count();
    if n >= len_min && n <= len_max {
        1.0
    } else {
        0.0
    }
}

/// 1 iff the output segmented cleanly, ended at the end token, and produced
/// exactly `instructed_k` query slots (direct mode) or at least one query
/// (think mode; an empty-but-parseable output earns nothing).
///
/// `segments` is `None` when segmentation failed on the raw output.
pub fn format_reward(
    segments: Option<&OutputSegments>,
    mode: OutputMode,
    instructed_k: usize,
) -> f64 {
    let Some(seg) = segments else { return 0.0 };
    if !seg.terminated {
        return 0.0;
    }
    match mode {
        OutputMode::Direct => {
            if seg.query_slot_count() == instructed_k {
                1.0
            } else {
                0.0
            }
        }
        OutputMode::Think => {
            if seg.query_slot_count() > 0 {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Repetition penalty: `-c_rep` per unordered pair of queries whose
/// ROUGE-L F is at least `dup_threshold`. Always ≤ 0.
pub fn repetition_penalty<T: PartialEq>(queries: &[Vec<T>], dup_threshold: f64, c_rep: f64) -> f64 {
    let mut dup_pairs = 0usize;
    for i in 0..queries.len() {
        for j in (i + 1)..queries.len() {
            if rouge_l(&queries[i], &queries[j]).f >= dup_threshold {
                dup_pairs += 1;
            }
        }
    }
    -c_rep * dup_pairs as f64
}

/// Token-set Jaccard similarity; both sets empty counts as 1.
pub fn jaccard(a: &[String], b: &[String]) -> f64 {
    use std::collections::BTreeSet;
    let sa: BTreeSet<&str> = a.iter().map(|s| s.as_str()).collect();
    let sb: BTreeSet<&str> = b.iter().map(|s| s.as_str()).collect();
    if sa.is_empty() && sb.is_empty() {
        return 1.0;
    }
    let inter = sa.intersection(&sb).count();
    let union = sa.union(&sb).count();
    inter as f64 / union as f64
}

/// Jaccard over whitespace tokens of two strings.
pub fn jaccard_text(a: &str, b: &str) -> f64 {
    jaccard(&tokenize(a), &tokenize(b))
}
