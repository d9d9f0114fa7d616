//! Reward computation for list-level policy optimization.
//!
//! Two reward levels per rollout, plus a third for reasoning outputs:
//!
//! - query level: per display slot j, the j-th generated query is aligned
//!   strictly with the j-th reference query; components are the γ-scaled
//!   clipped CTR prediction, ROUGE-L F, and a binary length check, combined
//!   by the weight vector `w`;
//! - sequence level: format validity plus the near-duplicate repetition
//!   penalty over the whole list;
//! - trigger level (think mode): ROUGE-L F between generated and reference
//!   trigger index sequences.
//!
//! Every total is clipped to ±`reward_clip` before entering group
//! statistics.

use crate::behavior_log::{BehaviorEvent, QueryCatalog, UserProfile};
use crate::ctr_model::{featurize, predict_ctr, CtrParams};
use crate::prompt_codec::{segment_output, OutputMode, OutputSegments, TokenId, Vocabulary};
use crate::text_metrics;

#[derive(Debug, Clone)]
pub struct RewardConfig {
    pub w_ctr: f64,
    pub w_rouge: f64,
    pub w_len: f64,
    /// CTR reward scale γ.
    pub gamma: f64,
    /// CTR reward ceiling β (named beta_ctr to keep it distinct from the
    /// entropy weight).
    pub beta_ctr: f64,
    /// Sequence-advantage weight λ.
    pub lambda: f64,
    /// Symmetric clip bound for reward totals.
    pub reward_clip: f64,
    pub len_min: usize,
    pub len_max: usize,
    pub dup_threshold: f64,
    pub c_rep: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            w_ctr: 1.0,
            w_rouge: 1.0,
            w_len: 0.2,
            gamma: 20.0,
            beta_ctr: 1.0,
            lambda: 0.5,
            reward_clip: 10.0,
            len_min: 2,
            len_max: 40,
            dup_threshold: 0.8,
            c_rep: 0.5,
        }
    }
}

impl RewardConfig {
    /// Highest attainable per-rollout scalar reward: perfect slots plus a
    /// valid format and no repetition. Normalizes difficulty filtering.
    pub fn max_attainable(&self) -> f64 {
        self.w_ctr * self.beta_ctr + self.w_rouge + self.w_len + 1.0
    }
}

fn clip(x: f64, bound: f64) -> f64 {
    x.clamp(-bound, bound)
}

/// Eq-style CTR shaping: `clip(γ·p̂, 0, β)`.
pub fn ctr_reward(p_hat: f64, config: &RewardConfig) -> f64 {
    (config.gamma * p_hat).clamp(0.0, config.beta_ctr)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRewardBreakdown {
    pub ctr: f64,
    pub rouge: f64,
    pub length: f64,
    pub total: f64,
}

/// Per-slot query rewards under strict positional alignment.
///
/// Slots beyond the reference list get `rouge = 0` but keep their CTR and
/// length components; reference slots with no generated counterpart
/// contribute no entries.
pub fn query_reward(
    gen: &[String],
    reference: &[String],
    profile: &UserProfile,
    history: &[BehaviorEvent],
    ctr: &CtrParams,
    catalog: &QueryCatalog,
    config: &RewardConfig,
) -> Vec<QueryRewardBreakdown> {
    gen.iter()
        .enumerate()
        .map(|(j, q)| {
            let p_hat = predict_ctr(ctr, &featurize(profile, history, q, catalog));
            let ctr_r = ctr_reward(p_hat, config);
            let rouge = reference
                .get(j)
                .map(|r| text_metrics::rouge_l_text(q, r).f)
                .unwrap_or(0.0);
            let length = text_metrics::length_reward(q, config.len_min, config.len_max);
            let total = clip(
                config.w_ctr * ctr_r + config.w_rouge * rouge + config.w_len * length,
                config.reward_clip,
            );
            QueryRewardBreakdown {
                ctr: ctr_r,
                rouge,
                length,
                total,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceReward {
    pub fmt: f64,
    pub rep: f64,
    pub total: f64,
}

/// Segmentation outcome reused by reward and advantage code: on grammar
/// errors the valid prefix still yields spans (and parseable queries), with
/// the unparsed tail treated as format tokens.
#[derive(Debug, Clone)]
pub struct SegmentedOutput {
    pub segments: Option<OutputSegments>,
    /// Spans extended to cover the full output even on parse errors.
    pub effective: OutputSegments,
}

pub fn segment_for_rewards(
    vocab: &Vocabulary,
    ids: &[TokenId],
    mode: OutputMode,
) -> SegmentedOutput {
    match segment_output(vocab, ids, mode) {
        Ok(seg) => SegmentedOutput {
            effective: seg.clone(),
            segments: Some(seg),
        },
        Err(e) => {
            let mut effective = e.valid_prefix.clone();
            let covered = effective.spans.last().map(|s| s.end).unwrap_or(0);
            if covered < ids.len() {
                effective.spans.push(crate::prompt_codec::Span {
                    start: covered,
                    end: ids.len(),
                    kind: crate::prompt_codec::SpanKind::Format,
                });
            }
            SegmentedOutput {
                segments: None,
                effective,
            }
        }
    }
}

/// Format reward plus repetition penalty over the parsed query list (the
/// parseable prefix when the grammar broke), clipped.
pub fn sequence_reward(
    vocab: &Vocabulary,
    output_ids: &[TokenId],
    mode: OutputMode,
    instructed_k: usize,
    config: &RewardConfig,
) -> (SequenceReward, SegmentedOutput) {
    let seg = segment_for_rewards(vocab, output_ids, mode);
    let fmt = text_metrics::format_reward(seg.segments.as_ref(), mode, instructed_k);
    let queries: Vec<Vec<TokenId>> = seg
        .effective
        .query_slices(output_ids)
        .into_iter()
        .map(|s| s.to_vec())
        .collect();
    let rep = text_metrics::repetition_penalty(&queries, config.dup_threshold, config.c_rep);
    let total = clip(fmt + rep, config.reward_clip);
    (SequenceReward { fmt, rep, total }, seg)
}

/// ROUGE-L F between generated and reference trigger index sequences.
pub fn trigger_reward(gen_triggers: &[usize], ref_triggers: &[usize]) -> f64 {
    text_metrics::rouge_l(gen_triggers, ref_triggers).f
}
