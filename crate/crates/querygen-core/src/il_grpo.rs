//! Interest-aware list training: the list-level SFT objective and the
//! IL-GRPO reinforcement loop.
//!
//! IL-GRPO differs from sequence-scalar GRPO in where it normalizes: query
//! rewards are normalized per display slot within the group of G rollouts,
//! and a λ-weighted sequence-level term is added on top, so each token's
//! advantage is
//!
//! ```text
//! A_{i,t} = (R_query(q_{i,j}) − μ_j^Q)/σ_j^Q + λ·(R_seq(o_i) − μ^S)/σ^S
//! ```
//!
//! for tokens of query slot j, while format tokens carry only the sequence
//! term. In think mode, trigger-segment tokens receive advantages derived
//! solely from the trigger reward normalized per interest ordinal — strict
//! signal separation between reasoning and recommendation.
//!
//! Stabilization follows the entropy machinery: a per-token clip width
//! chosen by comparing the token's entropy against the batch's 80th
//! percentile, a linearly decaying entropy-bonus weight β(s), difficulty
//! filtering of groups by normalized mean reward, and pure on-policy
//! updates (one gradient step per freshly sampled batch).

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;

use crate::behavior_log::{BehaviorEvent, QueryCatalog, UserProfile};
use crate::ctr_model::{
    featurize, train_daily, CtrParams, CtrTrainConfig, CtrTrainStats, InteractionRecord,
};
use crate::policy::{
    grad_objective, sample, sft_loss, Adam, GradItem, PolicyGrad, PolicyParams, Rollout,
    SampleConfig,
};
use crate::prompt_codec::{
    encode_prompt, render_direct_target, render_think_target, OutputMode, SpanKind, TokenId,
    Vocabulary,
};
use crate::reward_engine::{
    query_reward, sequence_reward, trigger_reward, QueryRewardBreakdown, RewardConfig,
    SegmentedOutput, SequenceReward,
};
use crate::sample_builder::{TrainingSampleDirect, TrainingSampleThink};
use crate::{Error, Result};

/// IL-GRPO hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Rollouts sampled per input (G).
    pub group_size: usize,
    /// Clip half-width for low-entropy (confident) tokens.
    pub eps_low: f64,
    /// Clip half-width for high-entropy (uncertain) tokens.
    pub eps_high: f64,
    /// Entropy-threshold percentile (fraction), nearest-rank.
    pub tau_percentile: f64,
    pub beta_entropy_start: f64,
    pub beta_entropy_end: f64,
    /// Steps over which β(s) decays linearly; constant afterwards.
    pub total_steps: u64,
    pub advantage_clip: f64,
    /// Stored for completeness: a critic-free setup has no value estimates
    /// to clip, so this bound is applied nowhere.
    pub value_clip: f64,
    pub difficulty_low: f64,
    pub difficulty_high: f64,
    /// ε added inside the group-std square root.
    pub eps_stab: f64,
    pub learning_rate: f64,
    /// Inputs per training step.
    pub rollout_batch: usize,
    /// Query count the prompt instructs (and the format reward checks).
    pub instructed_k: usize,
    pub sample: SampleConfig,
    /// Emit one reward-trace line per rollout into the step metrics.
    pub trace_rollouts: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            group_size: 8,
            eps_low: 0.20,
            eps_high: 0.28,
            tau_percentile: 0.80,
            beta_entropy_start: 0.01,
            beta_entropy_end: 0.0,
            total_steps: 200,
            advantage_clip: 2.0,
            value_clip: 0.5,
            difficulty_low: 0.1,
            difficulty_high: 0.95,
            eps_stab: 1e-12,
            learning_rate: 1.0,
            rollout_batch: 4,
            instructed_k: 10,
            sample: SampleConfig::default(),
            trace_rollouts: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::Config("group_size must be >= 2".into()));
        }
        if self.eps_high <= self.eps_low {
            return Err(Error::Config("eps_high must exceed eps_low".into()));
        }
        if self.eps_stab.is_nan() || self.eps_stab <= 0.0 {
            return Err(Error::Config("eps_stab must be positive".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Supervised fine-tuning
// ---------------------------------------------------------------------------

/// One encoded SFT example: prompt ids and target ids (ending in `<eos>`).
#[derive(Debug, Clone)]
pub struct SftExample {
    pub context_ids: Vec<TokenId>,
    pub target_ids: Vec<TokenId>,
}

impl SftExample {
    pub fn from_direct(vocab: &Vocabulary, sample: &TrainingSampleDirect, k: usize) -> Self {
        let prompt = encode_prompt(vocab, &sample.context.profile, &sample.context.events, k);
        let (target_ids, _) = vocab.encode_text(&render_direct_target(&sample.target.queries));
        SftExample {
            context_ids: prompt.token_ids,
            target_ids,
        }
    }

    pub fn from_think(vocab: &Vocabulary, sample: &TrainingSampleThink, k: usize) -> Self {
        let prompt = encode_prompt(vocab, &sample.context.profile, &sample.context.events, k);
        let points: Vec<(Vec<usize>, Vec<String>)> = sample
            .interest_points
            .iter()
            .map(|p| (p.trigger_indices.clone(), p.queries.clone()))
            .collect();
        let text = render_think_target(&sample.rationale, &points);
        let (target_ids, _) = vocab.encode_text(&text);
        SftExample {
            context_ids: prompt.token_ids,
            target_ids,
        }
    }
}

/// Mean NLL of one sample under teacher forcing (with gradient).
pub fn sft_sample_loss(params: &PolicyParams, example: &SftExample) -> (f64, PolicyGrad) {
    sft_loss(params, &example.context_ids, &example.target_ids)
}

#[derive(Debug, Clone)]
pub struct SftConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SftConfig {
    fn default() -> Self {
        SftConfig {
            epochs: 2,
            learning_rate: 2e-3,
            batch_size: 8,
            seed: 0,
        }
    }
}

/// Adam fine-tuning over the examples; returns the tuned parameters and the
/// mean loss per epoch. Deterministic for (params, examples, config).
pub fn train_sft(
    params: &PolicyParams,
    examples: &[SftExample],
    config: &SftConfig,
) -> (PolicyParams, Vec<f64>) {
    use rand::Rng;
    use rand::SeedableRng;
    let mut p = params.clone();
    if examples.is_empty() {
        return (p, Vec::new());
    }
    let mut adam = Adam::new(&p, config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size.max(1)) {
            let mut acc = PolicyGrad::zeros(&p);
            for &idx in chunk {
                let (loss, grad) = sft_sample_loss(&p, &examples[idx]);
                epoch_loss += loss;
                let scale = 1.0 / chunk.len() as f64;
                for (a, g) in acc
                    .embeddings
                    .iter_mut()
                    .chain(acc.ctx_proj.iter_mut())
                    .chain(acc.out_proj.iter_mut())
                    .zip(grad.iter())
                {
                    *a += scale * g;
                }
            }
            adam.step(&mut p, &acc);
        }
        epoch_losses.push(epoch_loss / examples.len() as f64);
    }
    (p, epoch_losses)
}

// ---------------------------------------------------------------------------
// Rollout scoring
// ---------------------------------------------------------------------------

/// One RL training input: encoded prompt plus everything reward computation
/// needs.
#[derive(Debug, Clone)]
pub struct RlInput {
    pub context_ids: Vec<TokenId>,
    pub profile: UserProfile,
    pub history: Vec<BehaviorEvent>,
    pub ref_queries: Vec<String>,
    /// Reference trigger sets per interest ordinal (think mode only).
    pub ref_triggers: Vec<Vec<usize>>,
}

impl RlInput {
    pub fn from_direct(vocab: &Vocabulary, sample: &TrainingSampleDirect, k: usize) -> Self {
        let prompt = encode_prompt(vocab, &sample.context.profile, &sample.context.events, k);
        RlInput {
            context_ids: prompt.token_ids,
            profile: sample.context.profile.clone(),
            history: sample.context.events.clone(),
            ref_queries: sample.target.queries.clone(),
            ref_triggers: Vec::new(),
        }
    }

    pub fn from_think(vocab: &Vocabulary, sample: &TrainingSampleThink, k: usize) -> Self {
        let prompt = encode_prompt(vocab, &sample.context.profile, &sample.context.events, k);
        RlInput {
            context_ids: prompt.token_ids,
            profile: sample.context.profile.clone(),
            history: sample.context.events.clone(),
            ref_queries: sample.flat_queries(),
            ref_triggers: sample
                .interest_points
                .iter()
                .map(|p| p.trigger_indices.clone())
                .collect(),
        }
    }
}

/// A rollout with all reward components attached.
#[derive(Debug, Clone)]
pub struct ScoredRollout {
    pub rollout: Rollout,
    pub seg: SegmentedOutput,
    pub queries: Vec<String>,
    pub query_rewards: Vec<QueryRewardBreakdown>,
    pub seq: SequenceReward,
    /// Trigger reward per generated interest ordinal (index k−1).
    pub trigger_rewards: Vec<f64>,
    /// Scalar summary: mean slot total + sequence total.
    pub scalar: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn score_rollout(
    rollout: Rollout,
    input: &RlInput,
    vocab: &Vocabulary,
    ctr: &CtrParams,
    catalog: &QueryCatalog,
    reward_cfg: &RewardConfig,
    mode: OutputMode,
    instructed_k: usize,
) -> ScoredRollout {
    let (seq, seg) = sequence_reward(vocab, &rollout.token_ids, mode, instructed_k, reward_cfg);
    let queries: Vec<String> = seg
        .effective
        .query_slices(&rollout.token_ids)
        .into_iter()
        .map(|ids| vocab.decode(ids))
        .collect();
    let query_rewards = query_reward(
        &queries,
        &input.ref_queries,
        &input.profile,
        &input.history,
        ctr,
        catalog,
        reward_cfg,
    );
    let trigger_rewards: Vec<f64> = seg
        .effective
        .trigger_sets(vocab, &rollout.token_ids)
        .iter()
        .map(|(k, gen)| {
            let reference = input
                .ref_triggers
                .get(k - 1)
                .map(|v| v.as_slice())
                .unwrap_or(&[]);
            trigger_reward(gen, reference)
        })
        .collect();
    let scalar = if query_rewards.is_empty() {
        seq.total
    } else {
        query_rewards.iter().map(|b| b.total).sum::<f64>() / query_rewards.len() as f64
            + seq.total
    };
    ScoredRollout {
        rollout,
        seg,
        queries,
        query_rewards,
        seq,
        trigger_rewards,
        scalar,
    }
}

// ---------------------------------------------------------------------------
// Group statistics and advantages
// ---------------------------------------------------------------------------

/// ε-stabilized population mean/std per query slot, for the sequence reward,
/// and per trigger ordinal. Slots a rollout never generated are excluded
/// from that slot's statistics.
#[derive(Debug, Clone)]
pub struct GroupStats {
    pub mu_q: Vec<f64>,
    pub sigma_q: Vec<f64>,
    pub slot_counts: Vec<usize>,
    pub mu_s: f64,
    pub sigma_s: f64,
    pub mu_t: Vec<f64>,
    pub sigma_t: Vec<f64>,
}

fn mean_std(values: &[f64], eps: f64) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, eps.sqrt());
    }
    // All-equal groups must come out exactly degenerate (μ = the value), so
    // identical rewards yield advantages of exactly zero.
    if values.windows(2).all(|w| w[0] == w[1]) {
        return (values[0], eps.sqrt());
    }
    let n = values.len() as f64;
    let mu = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    (mu, (var + eps).sqrt())
}

pub fn group_stats(group: &[ScoredRollout], eps_stab: f64) -> GroupStats {
    assert!(group.len() >= 2, "group statistics need G >= 2");
    let max_slots = group
        .iter()
        .map(|r| r.query_rewards.len())
        .max()
        .unwrap_or(0);
    let mut mu_q = Vec::with_capacity(max_slots);
    let mut sigma_q = Vec::with_capacity(max_slots);
    let mut slot_counts = Vec::with_capacity(max_slots);
    for j in 0..max_slots {
        let vals: Vec<f64> = group
            .iter()
            .filter_map(|r| r.query_rewards.get(j).map(|b| b.total))
            .collect();
        let (mu, sigma) = mean_std(&vals, eps_stab);
        mu_q.push(mu);
        sigma_q.push(sigma);
        slot_counts.push(vals.len());
    }
    let seq_vals: Vec<f64> = group.iter().map(|r| r.seq.total).collect();
    let (mu_s, sigma_s) = mean_std(&seq_vals, eps_stab);

    let max_triggers = group
        .iter()
        .map(|r| r.trigger_rewards.len())
        .max()
        .unwrap_or(0);
    let mut mu_t = Vec::with_capacity(max_triggers);
    let mut sigma_t = Vec::with_capacity(max_triggers);
    for k in 0..max_triggers {
        let vals: Vec<f64> = group
            .iter()
            .filter_map(|r| r.trigger_rewards.get(k).copied())
            .collect();
        let (mu, sigma) = mean_std(&vals, eps_stab);
        mu_t.push(mu);
        sigma_t.push(sigma);
    }
    GroupStats {
        mu_q,
        sigma_q,
        slot_counts,
        mu_s,
        sigma_s,
        mu_t,
        sigma_t,
    }
}

/// Per-rollout, per-token advantages. `map[i][t]` covers every output token
/// of rollout i exactly once.
pub type AdvantageMap = Vec<Vec<f64>>;

/// Dual-level advantages for query and format tokens: the per-slot
/// normalized query term plus λ times the normalized sequence term (format
/// tokens get the sequence term only). Trigger tokens are left untouched.
pub fn dual_advantage(
    group: &[ScoredRollout],
    stats: &GroupStats,
    lambda: f64,
    advantage_clip: f64,
    map: &mut AdvantageMap,
) {
    for (i, r) in group.iter().enumerate() {
        let seq_term = (r.seq.total - stats.mu_s) / stats.sigma_s;
        for span in &r.seg.effective.spans {
            match span.kind {
                SpanKind::Query { slot } => {
                    let j = slot - 1;
                    let qa = (r.query_rewards[j].total - stats.mu_q[j]) / stats.sigma_q[j];
                    let a = (qa + lambda * seq_term).clamp(-advantage_clip, advantage_clip);
                    map[i][span.start..span.end].fill(a);
                }
                SpanKind::Format => {
                    let a = (lambda * seq_term).clamp(-advantage_clip, advantage_clip);
                    map[i][span.start..span.end].fill(a);
                }
                SpanKind::Trigger { .. } => {}
            }
        }
    }
}

/// Trigger-token advantages: solely the per-ordinal normalized trigger
/// reward, with no query or sequence component.
pub fn trigger_advantage(
    group: &[ScoredRollout],
    stats: &GroupStats,
    advantage_clip: f64,
    map: &mut AdvantageMap,
) {
    for (i, r) in group.iter().enumerate() {
        for span in &r.seg.effective.spans {
            if let SpanKind::Trigger { interest } = span.kind {
                let k = interest - 1;
                let a = ((r.trigger_rewards[k] - stats.mu_t[k]) / stats.sigma_t[k])
                    .clamp(-advantage_clip, advantage_clip);
                map[i][span.start..span.end].fill(a);
            }
        }
    }
}

/// Full advantage routing for one group.
pub fn compute_advantages(
    group: &[ScoredRollout],
    stats: &GroupStats,
    lambda: f64,
    advantage_clip: f64,
) -> AdvantageMap {
    let mut map: AdvantageMap = group
        .iter()
        .map(|r| vec![0.0; r.rollout.token_ids.len()])
        .collect();
    dual_advantage(group, stats, lambda, advantage_clip, &mut map);
    trigger_advantage(group, stats, advantage_clip, &mut map);
    map
}

// ---------------------------------------------------------------------------
// Entropy machinery and difficulty filtering
// ---------------------------------------------------------------------------

/// Nearest-rank percentile: the ceil(p·n)-th order statistic.
pub fn entropy_threshold(entropies: &[f64], percentile: f64) -> f64 {
    assert!(!entropies.is_empty(), "entropy batch must be non-empty");
    let mut sorted = entropies.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = sorted.len();
    let rank = ((percentile * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

/// Entropy-adaptive clip width: wide for uncertain tokens (`e_t ≥ τ`),
/// narrow for confident ones.
pub fn adaptive_clip(e_t: f64, tau: f64, config: &TrainConfig) -> f64 {
    if e_t >= tau {
        config.eps_high
    } else {
        config.eps_low
    }
}

/// Linear decay of the entropy-bonus weight over `total_steps`, constant
/// afterwards.
pub fn beta_entropy(step: u64, config: &TrainConfig) -> f64 {
    if config.total_steps == 0 || step >= config.total_steps {
        return config.beta_entropy_end;
    }
    let f = step as f64 / config.total_steps as f64;
    config.beta_entropy_start + (config.beta_entropy_end - config.beta_entropy_start) * f
}

/// Group mean reward normalized into `[0,1]` by the attainable reward range.
pub fn normalized_group_reward(group: &[ScoredRollout], reward_cfg: &RewardConfig) -> f64 {
    let mean = group.iter().map(|r| r.scalar).sum::<f64>() / group.len() as f64;
    (mean / reward_cfg.max_attainable()).clamp(0.0, 1.0)
}

/// Keep groups with normalized mean reward inside the difficulty band
/// (both ends inclusive).
pub fn difficulty_filter(
    normalized_means: &[f64],
    config: &TrainConfig,
) -> Vec<bool> {
    normalized_means
        .iter()
        .map(|m| *m >= config.difficulty_low && *m <= config.difficulty_high)
        .collect()
}

// ---------------------------------------------------------------------------
// Training step and daily cycle
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct StepMetrics {
    pub step: u64,
    pub mean_reward: f64,
    pub mean_entropy: f64,
    pub tau: f64,
    pub filtered_fraction: f64,
    pub grad_norm: f64,
    pub beta_entropy: f64,
    pub groups: usize,
    pub retained_groups: usize,
    /// Largest |reward total| that entered group statistics this step.
    pub max_abs_reward: f64,
    /// Largest |advantage| routed to any token this step.
    pub max_abs_advantage: f64,
    /// Range of normalized mean rewards over retained groups (NaN when no
    /// group survived the difficulty filter).
    pub retained_norm_min: f64,
    pub retained_norm_max: f64,
    /// One line per rollout when tracing is enabled: every reward component
    /// plus pre-clip slot totals, for reward-hacking forensics.
    pub rollout_traces: Vec<String>,
}

pub fn write_metrics_file(path: &std::path::Path, metrics: &[StepMetrics]) -> Result<()> {
    use std::io::Write;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(
        f,
        "step\tmean_reward\tmean_entropy\ttau\tfiltered_fraction\tgrad_norm\tbeta_entropy"
    )
    .map_err(|e| Error::io(path, e))?;
    for m in metrics {
        writeln!(
            f,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            m.step,
            m.mean_reward,
            m.mean_entropy,
            m.tau,
            m.filtered_fraction,
            m.grad_norm,
            m.beta_entropy
        )
        .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Everything immutable an RL run needs.
pub struct RlTrainer<'a> {
    pub vocab: &'a Vocabulary,
    pub catalog: &'a QueryCatalog,
    pub reward_cfg: RewardConfig,
    pub cfg: TrainConfig,
    pub mode: OutputMode,
}

impl RlTrainer<'_> {
    /// Sample and score one group of G rollouts for an input against the
    /// frozen snapshot.
    pub fn sample_group(
        &self,
        policy: &PolicyParams,
        ctr: &CtrParams,
        input: &RlInput,
        rng: &mut ChaCha8Rng,
    ) -> Vec<ScoredRollout> {
        (0..self.cfg.group_size)
            .map(|_| {
                let rollout = sample(
                    policy,
                    &input.context_ids,
                    self.vocab.eos_id(),
                    &self.cfg.sample,
                    rng,
                );
                score_rollout(
                    rollout,
                    input,
                    self.vocab,
                    ctr,
                    self.catalog,
                    &self.reward_cfg,
                    self.mode,
                    self.cfg.instructed_k,
                )
            })
            .collect()
    }

    /// One on-policy update: sample G rollouts per input from the frozen
    /// snapshot, score rewards, normalize advantages (dual + trigger),
    /// difficulty-filter groups, then take a single ascent step with
    /// entropy-adaptive clipping and β(s) entropy bonus.
    pub fn train_step(
        &self,
        policy: &PolicyParams,
        ctr: &CtrParams,
        batch: &[&RlInput],
        rng: &mut ChaCha8Rng,
    ) -> Result<(PolicyParams, StepMetrics)> {
        self.cfg.validate()?;
        let step = policy.step;
        let beta = beta_entropy(step, &self.cfg);

        let groups: Vec<Vec<ScoredRollout>> = batch
            .iter()
            .map(|input| self.sample_group(policy, ctr, input, rng))
            .collect();

        let mut rollout_traces = Vec::new();
        if self.cfg.trace_rollouts {
            for (gi, g) in groups.iter().enumerate() {
                for (ri, r) in g.iter().enumerate() {
                    let slots: Vec<String> = r
                        .query_rewards
                        .iter()
                        .map(|b| format!("{}:{}:{}:{}", b.ctr, b.rouge, b.length, b.total))
                        .collect();
                    let triggers: Vec<String> =
                        r.trigger_rewards.iter().map(|t| t.to_string()).collect();
                    rollout_traces.push(format!(
                        "step={step} group={gi} rollout={ri} scalar={} fmt={} rep={} seq_total={} slots={} triggers={}",
                        r.scalar,
                        r.seq.fmt,
                        r.seq.rep,
                        r.seq.total,
                        slots.join(","),
                        triggers.join(",")
                    ));
                }
            }
        }

        let all_rollouts: Vec<&ScoredRollout> = groups.iter().flatten().collect();
        let mean_reward = all_rollouts.iter().map(|r| r.scalar).sum::<f64>()
            / all_rollouts.len().max(1) as f64;
        let all_entropies: Vec<f64> = all_rollouts
            .iter()
            .flat_map(|r| r.rollout.entropies.iter().copied())
            .collect();
        let mean_entropy =
            all_entropies.iter().sum::<f64>() / all_entropies.len().max(1) as f64;
        let tau = if all_entropies.is_empty() {
            0.0
        } else {
            entropy_threshold(&all_entropies, self.cfg.tau_percentile)
        };

        let mut max_abs_reward: f64 = 0.0;
        for r in &all_rollouts {
            for b in &r.query_rewards {
                max_abs_reward = max_abs_reward.max(b.total.abs());
            }
            max_abs_reward = max_abs_reward.max(r.seq.total.abs());
            for t in &r.trigger_rewards {
                max_abs_reward = max_abs_reward.max(t.abs());
            }
        }
        // Advantages for every group (filtered ones included) so the clip
        // bound is checkable on every token.
        let mut max_abs_advantage: f64 = 0.0;
        let all_advantages: Vec<AdvantageMap> = groups
            .iter()
            .map(|g| {
                let stats = group_stats(g, self.cfg.eps_stab);
                let map = compute_advantages(
                    g,
                    &stats,
                    self.reward_cfg.lambda,
                    self.cfg.advantage_clip,
                );
                for row in &map {
                    for a in row {
                        max_abs_advantage = max_abs_advantage.max(a.abs());
                    }
                }
                map
            })
            .collect();

        let normalized: Vec<f64> = groups
            .iter()
            .map(|g| normalized_group_reward(g, &self.reward_cfg))
            .collect();
        let keep = difficulty_filter(&normalized, &self.cfg);
        let retained: Vec<(&Vec<ScoredRollout>, &AdvantageMap)> = groups
            .iter()
            .zip(&all_advantages)
            .zip(&keep)
            .filter_map(|((g, adv), k)| k.then_some((g, adv)))
            .collect();
        let filtered_fraction =
            1.0 - retained.len() as f64 / groups.len().max(1) as f64;
        let retained_norms: Vec<f64> = normalized
            .iter()
            .zip(&keep)
            .filter_map(|(m, k)| k.then_some(*m))
            .collect();
        let retained_norm_min = retained_norms.iter().cloned().fold(f64::NAN, f64::min);
        let retained_norm_max = retained_norms.iter().cloned().fold(f64::NAN, f64::max);

        let mut next = policy.clone();
        next.step = step + 1;

        if retained.is_empty() {
            return Ok((
                next,
                StepMetrics {
                    step,
                    mean_reward,
                    mean_entropy,
                    tau,
                    filtered_fraction,
                    grad_norm: 0.0,
                    beta_entropy: beta,
                    groups: groups.len(),
                    retained_groups: 0,
                    max_abs_reward,
                    max_abs_advantage,
                    retained_norm_min,
                    retained_norm_max,
                    rollout_traces,
                },
            ));
        }

        // Per-token clip widths for retained groups.
        let eps_store: Vec<Vec<Vec<f64>>> = retained
            .iter()
            .map(|(g, _)| {
                g.iter()
                    .map(|r| {
                        r.rollout
                            .entropies
                            .iter()
                            .map(|e| adaptive_clip(*e, tau, &self.cfg))
                            .collect()
                    })
                    .collect()
            })
            .collect();

        let mut items = Vec::new();
        for ((g, adv), eps) in retained.iter().zip(&eps_store) {
            for (i, r) in g.iter().enumerate() {
                if r.rollout.token_ids.is_empty() {
                    continue;
                }
                items.push(GradItem {
                    context_ids: &r.rollout.context_ids,
                    output_ids: &r.rollout.token_ids,
                    frozen_logprobs: &r.rollout.logprobs,
                    advantages: &adv[i],
                    eps: &eps[i],
                });
            }
        }

        let (grad, _stats) = grad_objective(policy, &items, beta)?;
        let grad_norm = grad.norm();
        grad.apply(&mut next, self.cfg.learning_rate);

        Ok((
            next,
            StepMetrics {
                step,
                mean_reward,
                mean_entropy,
                tau,
                filtered_fraction,
                grad_norm,
                beta_entropy: beta,
                groups: groups.len(),
                retained_groups: retained.len(),
                max_abs_reward,
                max_abs_advantage,
                retained_norm_min,
                retained_norm_max,
                rollout_traces,
            },
        ))
    }

    /// Run `steps` training steps, cycling through `inputs` in order.
    pub fn run(
        &self,
        policy: &PolicyParams,
        ctr: &CtrParams,
        inputs: &[RlInput],
        steps: u64,
        rng: &mut ChaCha8Rng,
    ) -> Result<(PolicyParams, Vec<StepMetrics>)> {
        if inputs.is_empty() {
            return Err(Error::InvalidInput("no RL inputs".into()));
        }
        let mut p = policy.clone();
        let mut metrics = Vec::with_capacity(steps as usize);
        let b = self.cfg.rollout_batch.max(1);
        let mut cursor = 0usize;
        for _ in 0..steps {
            let batch: Vec<&RlInput> = (0..b.min(inputs.len()))
                .map(|i| &inputs[(cursor + i) % inputs.len()])
                .collect();
            cursor = (cursor + b) % inputs.len();
            let (next, m) = self.train_step(&p, ctr, &batch, rng)?;
            p = next;
            metrics.push(m);
        }
        Ok((p, metrics))
    }
}

/// Inputs for one simulated day of the continuous-training loop.
#[derive(Debug, Clone, Default)]
pub struct DayData {
    pub interactions: Vec<InteractionRecord>,
    pub rl_inputs: Vec<RlInput>,
    /// user_id → (profile, recent events) for CTR featurization.
    pub user_ctx: BTreeMap<String, (UserProfile, Vec<BehaviorEvent>)>,
}

#[derive(Debug)]
pub struct DayOutcome {
    pub policy: PolicyParams,
    pub ctr: CtrParams,
    /// Ordered event log; Train-then-RL ordering is asserted on this.
    pub events: Vec<String>,
    pub step_metrics: Vec<StepMetrics>,
    pub ctr_stats: CtrTrainStats,
}

/// One day of the continuous cycle: retrain the CTR model on the day's
/// interaction logs first, then run RL steps against the fresh snapshot.
#[allow(clippy::too_many_arguments)]
pub fn daily_cycle(
    trainer: &RlTrainer<'_>,
    day: i64,
    policy: &PolicyParams,
    ctr: &CtrParams,
    data: &DayData,
    rl_steps: u64,
    ctr_cfg: &CtrTrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<DayOutcome> {
    let mut events = Vec::new();
    let catalog = trainer.catalog;
    let feats = |user_id: &str, query: &str| match data.user_ctx.get(user_id) {
        Some((profile, history)) => featurize(profile, history, query, catalog),
        None => Vec::new(),
    };
    let (new_ctr, ctr_stats) = train_daily(ctr, &data.interactions, feats, ctr_cfg);
    events.push(format!(
        "day={day} ctr_train examples={} epochs={}",
        ctr_stats.examples, ctr_stats.epochs_run
    ));

    let (new_policy, step_metrics) = if data.rl_inputs.is_empty() {
        events.push(format!("day={day} rl skipped (no inputs)"));
        (policy.clone(), Vec::new())
    } else {
        let (p, m) = trainer.run(policy, &new_ctr, &data.rl_inputs, rl_steps, rng)?;
        events.push(format!("day={day} rl steps={rl_steps}"));
        (p, m)
    };

    Ok(DayOutcome {
        policy: new_policy,
        ctr: new_ctr,
        events,
        step_metrics,
        ctr_stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behavior_log::Taxonomy;
    use crate::prompt_codec::Span;
    use rand::SeedableRng;

    const EPS: f64 = 1e-12;

    fn mk_rollout(n_tokens: usize) -> Rollout {
        Rollout {
            context_ids: vec![0],
            token_ids: vec![0; n_tokens],
            logprobs: vec![-1.0; n_tokens],
            entropies: vec![1.0; n_tokens],
            snapshot_step: 0,
        }
    }

    /// Hand-built scored rollout: `slots` per-slot totals, `seq` total, and
    /// a span layout of one token per slot plus a trailing format token.
    fn mk_scored(slots: &[f64], seq_total: f64) -> ScoredRollout {
        let n = slots.len() + 1;
        let mut spans: Vec<Span> = (0..slots.len())
            .map(|j| Span {
                start: j,
                end: j + 1,
                kind: SpanKind::Query { slot: j + 1 },
            })
            .collect();
        spans.push(Span {
            start: slots.len(),
            end: n,
            kind: SpanKind::Format,
        });
        let seg = crate::prompt_codec::OutputSegments {
            spans,
            terminated: true,
        };
        ScoredRollout {
            rollout: mk_rollout(n),
            seg: SegmentedOutput {
                segments: Some(seg.clone()),
                effective: seg,
            },
            queries: slots.iter().map(|_| "q".to_string()).collect(),
            query_rewards: slots
                .iter()
                .map(|t| QueryRewardBreakdown {
                    ctr: 0.0,
                    rouge: 0.0,
                    length: 0.0,
                    total: *t,
                })
                .collect(),
            seq: SequenceReward {
                fmt: 0.0,
                rep: 0.0,
                total: seq_total,
            },
            trigger_rewards: Vec::new(),
            scalar: slots.iter().sum::<f64>() / slots.len().max(1) as f64 + seq_total,
        }
    }

    #[test]
    fn group_stats_hand_cases() {
        // All slot rewards equal → μ = value, σ = √ε.
        let g = vec![mk_scored(&[0.7], 0.0), mk_scored(&[0.7], 0.0)];
        let s = group_stats(&g, EPS);
        assert_eq!(s.mu_q[0], 0.7);
        assert!((s.sigma_q[0] - EPS.sqrt()).abs() < 1e-18);

        // Slot rewards {0, 1}, G = 2 → μ = 0.5, σ = √(0.25 + ε).
        let g = vec![mk_scored(&[0.0], 0.0), mk_scored(&[1.0], 0.0)];
        let s = group_stats(&g, EPS);
        assert_eq!(s.mu_q[0], 0.5);
        assert!((s.sigma_q[0] - (0.25f64 + EPS).sqrt()).abs() < 1e-15);

        // Sequence rewards {1, 1, −1, −1} → μ = 0, σ = √(1 + ε).
        let g = vec![
            mk_scored(&[0.0], 1.0),
            mk_scored(&[0.0], 1.0),
            mk_scored(&[0.0], -1.0),
            mk_scored(&[0.0], -1.0),
        ];
        let s = group_stats(&g, EPS);
        assert_eq!(s.mu_s, 0.0);
        assert!((s.sigma_s - (1.0f64 + EPS).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn group_stats_exclude_missing_slots() {
        // Second rollout generated only one slot; slot 2 statistics come
        // from the single present entry.
        let g = vec![mk_scored(&[1.0, 3.0], 0.0), mk_scored(&[2.0], 0.0)];
        let s = group_stats(&g, EPS);
        assert_eq!(s.slot_counts, vec![2, 1]);
        assert_eq!(s.mu_q[1], 3.0);
        assert!((s.sigma_q[1] - EPS.sqrt()).abs() < 1e-18);
    }

    #[test]
    fn dual_advantage_degenerate_group_is_zero() {
        let g = vec![mk_scored(&[0.5, 0.5], 1.0); 4];
        let s = group_stats(&g, EPS);
        let map = compute_advantages(&g, &s, 0.5, 2.0);
        for row in &map {
            for a in row {
                assert_eq!(*a, 0.0);
            }
        }
    }

    #[test]
    fn dual_advantage_isolates_the_deviant_slot() {
        // λ = 0, G = 4: rollout 0's slot-1 reward above the group mean →
        // its slot-1 token positive; every other token zero.
        let g = vec![
            mk_scored(&[1.0, 0.3], 0.0),
            mk_scored(&[0.2, 0.3], 0.0),
            mk_scored(&[0.2, 0.3], 0.0),
            mk_scored(&[0.2, 0.3], 0.0),
        ];
        let s = group_stats(&g, EPS);
        let map = compute_advantages(&g, &s, 0.0, 2.0);
        assert!(map[0][0] > 0.0);
        assert_eq!(map[0][1], 0.0); // slot 2 degenerate
        assert_eq!(map[0][2], 0.0); // format token, λ = 0
        for i in 1..4 {
            assert!(map[i][0] < 0.0);
            assert_eq!(map[i][1], 0.0);
        }
        // Hand-check: slot-1 rewards {1.0, 0.2, 0.2, 0.2}: μ = 0.4,
        // σ = √(0.12·... ) → pop var = (0.36 + 3·0.04)/4 = 0.12.
        let expect = (1.0 - 0.4) / (0.12f64 + EPS).sqrt();
        assert!((map[0][0] - expect).abs() < 1e-9);
    }

    #[test]
    fn advantages_clipped_at_bound() {
        // Construct a slot whose normalized value exceeds 2: values
        // {10, 0, 0, ..., 0} over G=8 → (10−1.25)/σ ≈ 2.6 → clipped to 2.
        let mut g = vec![mk_scored(&[0.0], 0.0); 7];
        g.insert(0, mk_scored(&[10.0], 0.0));
        let s = group_stats(&g, EPS);
        let raw = (10.0 - s.mu_q[0]) / s.sigma_q[0];
        assert!(raw > 2.0);
        let map = compute_advantages(&g, &s, 0.0, 2.0);
        assert_eq!(map[0][0], 2.0);
    }

    #[test]
    fn sequence_shift_invariance() {
        let base = vec![
            mk_scored(&[0.1], 1.0),
            mk_scored(&[0.9], 0.0),
            mk_scored(&[0.4], -1.0),
            mk_scored(&[0.6], 2.0),
        ];
        let shifted: Vec<ScoredRollout> = base
            .iter()
            .map(|r| {
                let mut r = r.clone();
                r.seq.total += 3.5;
                r
            })
            .collect();
        let a = compute_advantages(&base, &group_stats(&base, EPS), 0.7, 2.0);
        let b = compute_advantages(&shifted, &group_stats(&shifted, EPS), 0.7, 2.0);
        for (ra, rb) in a.iter().zip(&b) {
            for (x, y) in ra.iter().zip(rb) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn slot_scale_invariance_up_to_eps() {
        let base = vec![
            mk_scored(&[0.1], 0.0),
            mk_scored(&[0.9], 0.0),
            mk_scored(&[0.4], 0.0),
        ];
        let scaled: Vec<ScoredRollout> = base
            .iter()
            .map(|r| {
                let mut r = r.clone();
                r.query_rewards[0].total *= 4.0;
                r
            })
            .collect();
        let a = compute_advantages(&base, &group_stats(&base, EPS), 0.0, 2.0);
        let b = compute_advantages(&scaled, &group_stats(&scaled, EPS), 0.0, 2.0);
        for (ra, rb) in a.iter().zip(&b) {
            assert!((ra[0] - rb[0]).abs() < 1e-6);
        }
    }

    fn mk_think_scored(triggers: &[f64], seq_total: f64) -> ScoredRollout {
        // Layout per interest k: one trigger token then one query token;
        // final format token.
        let n = triggers.len() * 2 + 1;
        let mut spans = Vec::new();
        for (k, _) in triggers.iter().enumerate() {
            spans.push(Span {
                start: 2 * k,
                end: 2 * k + 1,
                kind: SpanKind::Trigger { interest: k + 1 },
            });
            spans.push(Span {
                start: 2 * k + 1,
                end: 2 * k + 2,
                kind: SpanKind::Query { slot: k + 1 },
            });
        }
        spans.push(Span {
            start: n - 1,
            end: n,
            kind: SpanKind::Format,
        });
        let seg = crate::prompt_codec::OutputSegments {
            spans,
            terminated: true,
        };
        ScoredRollout {
            rollout: mk_rollout(n),
            seg: SegmentedOutput {
                segments: Some(seg.clone()),
                effective: seg,
            },
            queries: triggers.iter().map(|_| "q".to_string()).collect(),
            query_rewards: triggers
                .iter()
                .map(|_| QueryRewardBreakdown {
                    ctr: 0.0,
                    rouge: 0.0,
                    length: 0.0,
                    total: 0.5,
                })
                .collect(),
            seq: SequenceReward {
                fmt: 0.0,
                rep: 0.0,
                total: seq_total,
            },
            trigger_rewards: triggers.to_vec(),
            scalar: 0.5 + seq_total,
        }
    }

    #[test]
    fn trigger_advantages_normalized_and_isolated() {
        // G = 2 with trigger rewards {1.0, 0.5} and a large sequence spread:
        // trigger tokens must carry only the trigger term.
        let g = vec![mk_think_scored(&[1.0], 5.0), mk_think_scored(&[0.5], -5.0)];
        let s = group_stats(&g, EPS);
        let map = compute_advantages(&g, &s, 1.0, 10.0);
        // Symmetric ± advantages on the trigger tokens.
        assert!((map[0][0] + map[1][0]).abs() < 1e-9);
        assert!(map[0][0] > 0.0);
        // Pure trigger term: (1.0 − 0.75)/√(0.0625+ε) = 1 (up to ε).
        assert!((map[0][0] - 1.0).abs() < 1e-6);
        // Identical triggers → zero advantage on trigger tokens even though
        // sequence rewards differ wildly.
        let g = vec![mk_think_scored(&[0.8], 5.0), mk_think_scored(&[0.8], -5.0)];
        let s = group_stats(&g, EPS);
        let map = compute_advantages(&g, &s, 1.0, 10.0);
        assert_eq!(map[0][0], 0.0);
        assert_eq!(map[1][0], 0.0);
        // ...while their format tokens do carry the sequence term.
        assert!(map[0][2].abs() > 0.0);
    }

    #[test]
    fn entropy_threshold_nearest_rank() {
        assert_eq!(entropy_threshold(&[2.5, 2.5, 2.5], 0.8), 2.5);
        let v: Vec<f64> = (1..=10).map(|x| x as f64).collect();
        assert_eq!(entropy_threshold(&v, 0.8), 8.0);
        assert_eq!(entropy_threshold(&[0.33], 0.8), 0.33);
    }

    #[test]
    fn adaptive_clip_boundary() {
        let cfg = TrainConfig::default();
        let tau = 1.5;
        assert_eq!(adaptive_clip(1.5, tau, &cfg), cfg.eps_high); // e_t = τ
        assert_eq!(adaptive_clip(1.5 - 1e-9, tau, &cfg), cfg.eps_low);
        assert_eq!(adaptive_clip(2.0, tau, &cfg), cfg.eps_high);
    }

    #[test]
    fn high_entropy_fraction_near_twenty_percent() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [10usize, 100, 1000] {
            let mut v: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v.dedup();
            let n = v.len();
            let tau = entropy_threshold(&v, 0.8);
            let frac = v.iter().filter(|e| **e >= tau).count() as f64 / n as f64;
            let slack = 1.0 / n as f64;
            assert!(
                frac >= 0.2 - slack && frac <= 0.2 + slack,
                "n={n} frac={frac}"
            );
        }
    }

    #[test]
    fn beta_entropy_linear_schedule() {
        let cfg = TrainConfig {
            beta_entropy_start: 0.01,
            beta_entropy_end: 0.0,
            total_steps: 200,
            ..Default::default()
        };
        assert_eq!(beta_entropy(0, &cfg), 0.01);
        assert_eq!(beta_entropy(200, &cfg), 0.0);
        assert_eq!(beta_entropy(400, &cfg), 0.0);
        assert!((beta_entropy(100, &cfg) - 0.005).abs() < 1e-12);
    }

    #[test]
    fn difficulty_filter_inclusive_bounds() {
        let cfg = TrainConfig::default();
        let keep = difficulty_filter(&[0.05, 0.5, 0.95, 0.1, 0.96], &cfg);
        assert_eq!(keep, vec![false, true, true, true, false]);
    }

    // -- end-to-end style fixtures on the real vocabulary ------------------

    fn mini_world() -> (
        Vocabulary,
        QueryCatalog,
        Vec<RlInput>,
        PolicyParams,
        CtrParams,
    ) {
        let vocab = Vocabulary::build();
        let catalog = QueryCatalog::from_taxonomy(&Taxonomy::new());
        let profile = UserProfile {
            user_id: "u0".into(),
            gender: "female".into(),
            age: 30,
            occupation: "teacher".into(),
            city: "wuhan".into(),
        };
        let events = vec![BehaviorEvent {
            index: 1,
            time_offset: 0,
            action: crate::behavior_log::Action::Search,
            content: "wool coat".into(),
            category_id: "c00".into(),
            timestamp: 86_400,
        }];
        let sample_d = TrainingSampleDirect {
            context: crate::sample_builder::SampleContext {
                profile: profile.clone(),
                events,
            },
            target: crate::sample_builder::LabelList {
                queries: vec!["wool coat".into(), "best wool coat".into()],
                sources: vec![
                    crate::sample_builder::LabelSource::HintQClick,
                    crate::sample_builder::LabelSource::RankTopK,
                ],
            },
        };
        let input = RlInput::from_direct(&vocab, &sample_d, 2);
        let policy = PolicyParams::init(&vocab, 8, 11);
        let ctr = CtrParams::zeros(0);
        (vocab, catalog, vec![input], policy, ctr)
    }

    #[test]
    fn train_step_deterministic_for_seed() {
        let (vocab, catalog, inputs, policy, ctr) = mini_world();
        let trainer = RlTrainer {
            vocab: &vocab,
            catalog: &catalog,
            reward_cfg: RewardConfig::default(),
            cfg: TrainConfig {
                group_size: 4,
                rollout_batch: 1,
                instructed_k: 2,
                sample: SampleConfig {
                    temperature: 1.0,
                    top_k: 50,
                    max_len: 12,
                },
                // Wide-open difficulty band so the update actually runs.
                difficulty_low: 0.0,
                difficulty_high: 1.0,
                ..Default::default()
            },
            mode: OutputMode::Direct,
        };
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let batch: Vec<&RlInput> = inputs.iter().collect();
            trainer.train_step(&policy, &ctr, &batch, &mut rng).unwrap()
        };
        let (pa, ma) = run();
        let (pb, mb) = run();
        assert_eq!(pa, pb);
        assert_eq!(ma.mean_reward.to_bits(), mb.mean_reward.to_bits());
        assert_eq!(ma.grad_norm.to_bits(), mb.grad_norm.to_bits());
        assert_eq!(pa.step, policy.step + 1);
    }

    #[test]
    fn constant_rewards_give_zero_policy_gradient() {
        // All reward weights zero and no repetition penalty → every reward
        // identical → advantages all zero → with β = 0 the gradient is zero.
        let (vocab, catalog, inputs, policy, ctr) = mini_world();
        let trainer = RlTrainer {
            vocab: &vocab,
            catalog: &catalog,
            reward_cfg: RewardConfig {
                w_ctr: 0.0,
                w_rouge: 0.0,
                w_len: 0.0,
                c_rep: 0.0,
                ..Default::default()
            },
            cfg: TrainConfig {
                group_size: 4,
                rollout_batch: 1,
                instructed_k: 2,
                beta_entropy_start: 0.0,
                beta_entropy_end: 0.0,
                difficulty_low: 0.0,
                difficulty_high: 1.0,
                sample: SampleConfig {
                    temperature: 1.0,
                    top_k: 50,
                    max_len: 10,
                },
                ..Default::default()
            },
            mode: OutputMode::Direct,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let batch: Vec<&RlInput> = inputs.iter().collect();
        // Format rewards may still differ (parse success vs failure), so
        // force the sequence side constant by checking the actual condition:
        // with fmt ∈ {0,1} varying the gradient need not vanish. Sample and
        // verify on a group where all sequence rewards match.
        let (_, metrics) = trainer.train_step(&policy, &ctr, &batch, &mut rng).unwrap();
        // The slot rewards are all zero regardless of output; if the
        // sequence rewards happened to be identical too, grad_norm is 0.
        let groups = {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            trainer.sample_group(&policy, &ctr, &inputs[0], &mut rng)
        };
        let all_seq_equal = groups
            .windows(2)
            .all(|w| w[0].seq.total == w[1].seq.total);
        if all_seq_equal {
            assert!(metrics.grad_norm < 1e-12, "grad_norm = {}", metrics.grad_norm);
        }
        // In every case the per-slot advantage terms are exactly zero.
        let stats = group_stats(&groups, EPS);
        let map = compute_advantages(&groups, &stats, 0.0, 2.0);
        for (i, r) in groups.iter().enumerate() {
            for span in &r.seg.effective.spans {
                if let SpanKind::Query { .. } = span.kind {
                    for t in span.start..span.end {
                        assert_eq!(map[i][t], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn sft_learns_probability_one_target() {
        // A policy driven to put probability ~1 on each target token has
        // loss ~0; verify the loss-0 limit by direct construction.
        let vocab = Vocabulary::build();
        let mut params = PolicyParams::zeros(vocab.len(), 4);
        // Make one token's logit huge regardless of input: bias via ctx
        // projection is zero; instead use out_proj of a hidden coordinate
        // fed by the context embedding of token 0.
        let target: TokenId = 5;
        params.embeddings[0 * 4 + 0] = 1.0; // context token 0, coordinate 0
        params.ctx_proj[0] = 1.0; // h_0 = ctx_0
        params.out_proj[0 * vocab.len() + target as usize] = 500.0;
        let (loss, _) = sft_loss(&params, &[0], &[target, target]);
        assert!(loss < 1e-6, "loss = {loss}");
    }

    #[test]
    fn daily_cycle_orders_train_then_rl_and_handles_empty_logs() {
        let (vocab, catalog, inputs, policy, ctr) = mini_world();
        let trainer = RlTrainer {
            vocab: &vocab,
            catalog: &catalog,
            reward_cfg: RewardConfig::default(),
            cfg: TrainConfig {
                group_size: 2,
                rollout_batch: 1,
                instructed_k: 2,
                difficulty_low: 0.0,
                difficulty_high: 1.0,
                sample: SampleConfig {
                    temperature: 1.0,
                    top_k: 50,
                    max_len: 8,
                },
                ..Default::default()
            },
            mode: OutputMode::Direct,
        };
        let data = DayData {
            interactions: Vec::new(),
            rl_inputs: inputs.clone(),
            user_ctx: BTreeMap::new(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = daily_cycle(
            &trainer,
            3,
            &policy,
            &ctr,
            &data,
            2,
            &CtrTrainConfig::default(),
            &mut rng,
        )
        .unwrap();
        // Empty logs: CTR weights unchanged, day advanced.
        assert_eq!(out.ctr.weights, ctr.weights);
        assert_eq!(out.ctr.day, ctr.day + 1);
        // Ordering: ctr_train strictly before rl.
        let ctr_pos = out.events.iter().position(|e| e.contains("ctr_train")).unwrap();
        let rl_pos = out.events.iter().position(|e| e.contains("rl ")).unwrap();
        assert!(ctr_pos < rl_pos);
        assert_eq!(out.step_metrics.len(), 2);
    }

    #[test]
    fn metrics_file_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.tsv");
        let m = StepMetrics {
            step: 0,
            mean_reward: 0.5,
            mean_entropy: 1.25,
            tau: 1.5,
            filtered_fraction: 0.25,
            grad_norm: 0.125,
            beta_entropy: 0.01,
            groups: 4,
            retained_groups: 3,
            max_abs_reward: 1.0,
            max_abs_advantage: 2.0,
            retained_norm_min: 0.2,
            retained_norm_max: 0.8,
            rollout_traces: Vec::new(),
        };
        write_metrics_file(&path, &[m]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "step\tmean_reward\tmean_entropy\ttau\tfiltered_fraction\tgrad_norm\tbeta_entropy\n\
             0\t0.5\t1.25\t1.5\t0.25\t0.125\t0.01\n"
        );
    }
}
