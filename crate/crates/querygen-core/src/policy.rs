//! The toy autoregressive generation policy.
//!
//! A log-linear conditional token distribution chosen for exact
//! differentiability rather than expressiveness:
//!
//! ```text
//! ctx  = mean(E[context ids])                (d)
//! pre_t = Σ_{s<t} ρ^{t-1-s} · E[output_s]    (d, exponentially decayed)
//! h_t  = W_c · ctx + pre_t                   (d)
//! logits_t = W_oᵀ · h_t                      (V)
//! ```
//!
//! Sampling truncates to the top-k logits and applies temperature, but the
//! recorded per-token log-probabilities and entropies always come from the
//! full untruncated temperature-1 softmax — the same measure teacher-forced
//! scoring reproduces, which keeps importance ratios exactly 1 at the frozen
//! snapshot.
//!
//! Every gradient here is analytic and is checked against central finite
//! differences in the tests and the acceptance suite.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::prompt_codec::{TokenId, Vocabulary};
use crate::{Error, Result};

/// Recency decay of the prefix summary.
pub const PREFIX_DECAY: f64 = 0.8;

/// Dense policy parameters. Layout is row-major: `embeddings[v*d + j]`,
/// `ctx_proj[a*d + b]` (`h_a = Σ_b W[a,b]·ctx_b`), `out_proj[a*V + v]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub vocab_size: usize,
    pub dim: usize,
    pub embeddings: Vec<f64>,
    pub ctx_proj: Vec<f64>,
    pub out_proj: Vec<f64>,
    /// Training step that produced this snapshot.
    pub step: u64,
}

impl PolicyParams {
    pub fn zeros(vocab_size: usize, dim: usize) -> Self {
        PolicyParams {
            vocab_size,
            dim,
            embeddings: vec![0.0; vocab_size * dim],
            ctx_proj: vec![0.0; dim * dim],
            out_proj: vec![0.0; dim * vocab_size],
            step: 0,
        }
    }

    /// Random init: base-token embeddings and projections drawn N(0, 0.1²);
    /// special-token embeddings initialized as the mean of their constituent
    /// subword embeddings (zero vector when a special has no constituents).
    pub fn init(vocab: &Vocabulary, dim: usize, seed: u64) -> Self {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let v = vocab.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.1).expect("valid normal");
        let mut params = PolicyParams::zeros(v, dim);
        for id in 0..v as TokenId {
            if vocab.is_base(id) {
                for j in 0..dim {
                    params.embeddings[id as usize * dim + j] = normal.sample(&mut rng);
                }
            }
        }
        for id in 0..v as TokenId {
            if !vocab.is_base(id) {
                let constituents = &vocab.info(id).constituents;
                let vecs: Vec<&[f64]> = constituents
                    .iter()
                    .map(|&c| &params.embeddings[c as usize * dim..(c as usize + 1) * dim])
                    .collect();
                let mean = crate::prompt_codec::init_special_embedding(&vecs, dim);
                let dst = id as usize * dim;
                params.embeddings[dst..dst + dim]
                    .copy_from_slice(&mean[..]);
            }
        }
        for w in params.ctx_proj.iter_mut() {
            *w = normal.sample(&mut rng);
        }
        for w in params.out_proj.iter_mut() {
            *w = normal.sample(&mut rng);
        }
        params
    }

    pub fn embedding(&self, id: TokenId) -> &[f64] {
        let i = id as usize * self.dim;
        &self.embeddings[i..i + self.dim]
    }

    /// Checkpoint: ASCII header `policy <V> <d> <step>`, then the dense
    /// little-endian f64 dump of embeddings, ctx_proj, out_proj.
    pub fn write_file(&self, path: &std::path::Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(
            format!("policy {} {} {}\n", self.vocab_size, self.dim, self.step).as_bytes(),
        );
        for w in self
            .embeddings
            .iter()
            .chain(self.ctx_proj.iter())
            .chain(self.out_proj.iter())
        {
            buf.extend_from_slice(&w.to_le_bytes());
        }
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn read_file(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Checkpoint("missing header".into()))?;
        let header = std::str::from_utf8(&bytes[..nl])
            .map_err(|_| Error::Checkpoint("bad header".into()))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "policy" {
            return Err(Error::Checkpoint(format!("bad policy header {header:?}")));
        }
        let vocab_size: usize = parts[1]
            .parse()
            .map_err(|_| Error::Checkpoint("bad vocab size".into()))?;
        let dim: usize = parts[2]
            .parse()
            .map_err(|_| Error::Checkpoint("bad dim".into()))?;
        let step: u64 = parts[3]
            .parse()
            .map_err(|_| Error::Checkpoint("bad step".into()))?;
        let expected = vocab_size * dim + dim * dim + dim * vocab_size;
        let body = &bytes[nl + 1..];
        if body.len() != expected * 8 {
            return Err(Error::Checkpoint(format!(
                "expected {} payload bytes, found {}",
                expected * 8,
                body.len()
            )));
        }
        let vals: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let (emb, rest) = vals.split_at(vocab_size * dim);
        let (ctx, out) = rest.split_at(dim * dim);
        Ok(PolicyParams {
            vocab_size,
            dim,
            embeddings: emb.to_vec(),
            ctx_proj: ctx.to_vec(),
            out_proj: out.to_vec(),
            step,
        })
    }
}

/// Gradient with the same layout as [`PolicyParams`].
#[derive(Debug, Clone)]
pub struct PolicyGrad {
    pub embeddings: Vec<f64>,
    pub ctx_proj: Vec<f64>,
    pub out_proj: Vec<f64>,
}

impl PolicyGrad {
    pub fn zeros(params: &PolicyParams) -> Self {
        PolicyGrad {
            embeddings: vec![0.0; params.embeddings.len()],
            ctx_proj: vec![0.0; params.ctx_proj.len()],
            out_proj: vec![0.0; params.out_proj.len()],
        }
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|x| x.is_finite())
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.embeddings
            .iter()
            .chain(self.ctx_proj.iter())
            .chain(self.out_proj.iter())
    }

    /// `params += scale · grad` (ascent for positive scale).
    pub fn apply(&self, params: &mut PolicyParams, scale: f64) {
        for (p, g) in params.embeddings.iter_mut().zip(&self.embeddings) {
            *p += scale * g;
        }
        for (p, g) in params.ctx_proj.iter_mut().zip(&self.ctx_proj) {
            *p += scale * g;
        }
        for (p, g) in params.out_proj.iter_mut().zip(&self.out_proj) {
            *p += scale * g;
        }
    }
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

fn context_embedding(params: &PolicyParams, context_ids: &[TokenId]) -> Vec<f64> {
    let d = params.dim;
    let mut ctx = vec![0.0; d];
    if context_ids.is_empty() {
        return ctx;
    }
    for &id in context_ids {
        let e = params.embedding(id);
        for j in 0..d {
            ctx[j] += e[j];
        }
    }
    let n = context_ids.len() as f64;
    for x in &mut ctx {
        *x /= n;
    }
    ctx
}

fn projected_context(params: &PolicyParams, ctx: &[f64]) -> Vec<f64> {
    let d = params.dim;
    let mut h = vec![0.0; d];
    for a in 0..d {
        let row = &params.ctx_proj[a * d..(a + 1) * d];
        h[a] = row.iter().zip(ctx).map(|(w, c)| w * c).sum();
    }
    h
}

fn logits_from_hidden(params: &PolicyParams, h: &[f64]) -> Vec<f64> {
    let v = params.vocab_size;
    let mut logits = vec![0.0; v];
    for (a, ha) in h.iter().enumerate() {
        if *ha == 0.0 {
            continue;
        }
        let row = &params.out_proj[a * v..(a + 1) * v];
        for (l, w) in logits.iter_mut().zip(row) {
            *l += ha * w;
        }
    }
    logits
}

/// Next-token logits for a context and an already-generated prefix.
pub fn next_token_logits(
    params: &PolicyParams,
    context_ids: &[TokenId],
    prefix_ids: &[TokenId],
) -> Vec<f64> {
    let ctx = context_embedding(params, context_ids);
    let mut h = projected_context(params, &ctx);
    // Incremental prefix summary: pre ← ρ·pre + E[token].
    let mut pre = vec![0.0; params.dim];
    for &id in prefix_ids {
        let e = params.embedding(id);
        for j in 0..params.dim {
            pre[j] = PREFIX_DECAY * pre[j] + e[j];
        }
    }
    for j in 0..params.dim {
        h[j] += pre[j];
    }
    logits_from_hidden(params, &h)
}

/// Log-softmax, probabilities and entropy of a logit vector (temperature 1).
fn softmax_stats(logits: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let log_z = z.ln();
    let logp: Vec<f64> = logits.iter().map(|l| l - max - log_z).collect();
    for e in &mut exps {
        *e /= z;
    }
    let entropy = -logp
        .iter()
        .zip(&exps)
        .map(|(lp, p)| if *p > 0.0 { p * lp } else { 0.0 })
        .sum::<f64>();
    (logp, exps, entropy)
}

/// One sampled output with the bookkeeping IL-GRPO needs.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub context_ids: Vec<TokenId>,
    pub token_ids: Vec<TokenId>,
    /// log π(z_t | z_<t, x) under the full temperature-1 softmax.
    pub logprobs: Vec<f64>,
    /// Entropy of the full temperature-1 softmax at each step.
    pub entropies: Vec<f64>,
    /// `step` of the parameter snapshot that produced this rollout.
    pub snapshot_step: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct SampleConfig {
    pub temperature: f64,
    pub top_k: usize,
    pub max_len: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            temperature: 1.0,
            top_k: 100,
            max_len: 160,
        }
    }
}

/// Sample a rollout: at each step keep the top-k logits, apply temperature,
/// draw a token; stop at the end token or `max_len`. Pure in
/// (params, context, rng state).
pub fn sample(
    params: &PolicyParams,
    context_ids: &[TokenId],
    eos: TokenId,
    cfg: &SampleConfig,
    rng: &mut ChaCha8Rng,
) -> Rollout {
    assert!(cfg.temperature > 0.0, "temperature must be positive");
    assert!(
        cfg.top_k >= 1 && cfg.top_k <= params.vocab_size,
        "top_k must lie in [1, V]"
    );
    let d = params.dim;
    let ctx = context_embedding(params, context_ids);
    let base_h = projected_context(params, &ctx);
    let mut pre = vec![0.0; d];
    let mut out = Rollout {
        context_ids: context_ids.to_vec(),
        token_ids: Vec::new(),
        logprobs: Vec::new(),
        entropies: Vec::new(),
        snapshot_step: params.step,
    };

    for _ in 0..cfg.max_len {
        let mut h = base_h.clone();
        for j in 0..d {
            h[j] += pre[j];
        }
        let logits = logits_from_hidden(params, &h);
        let (logp, _, entropy) = softmax_stats(&logits);

        // Top-k truncation with deterministic tie-breaking by token id.
        let mut order: Vec<usize> = (0..logits.len()).collect();
        order.sort_by(|&a, &b| {
            logits[b]
                .partial_cmp(&logits[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let kept = &order[..cfg.top_k];
        let max_kept = logits[kept[0]];
        let weights: Vec<f64> = kept
            .iter()
            .map(|&i| ((logits[i] - max_kept) / cfg.temperature).exp())
            .collect();
        let total: f64 = weights.iter().sum();
        let mut draw = rng.gen::<f64>() * total;
        let mut chosen = kept[kept.len() - 1];
        for (&i, w) in kept.iter().zip(&weights) {
            if draw < *w {
                chosen = i;
                break;
            }
            draw -= w;
        }

        let token = chosen as TokenId;
        out.token_ids.push(token);
        out.logprobs.push(logp[chosen]);
        out.entropies.push(entropy);
        if token == eos {
            break;
        }
        let e = params.embedding(token);
        for j in 0..d {
            pre[j] = PREFIX_DECAY * pre[j] + e[j];
        }
    }
    out
}

/// Teacher-forced per-token log-probabilities and entropies of `output_ids`
/// under the full temperature-1 softmax.
pub fn logprob_and_entropy(
    params: &PolicyParams,
    context_ids: &[TokenId],
    output_ids: &[TokenId],
) -> (Vec<f64>, Vec<f64>) {
    let d = params.dim;
    let ctx = context_embedding(params, context_ids);
    let base_h = projected_context(params, &ctx);
    let mut pre = vec![0.0; d];
    let mut logprobs = Vec::with_capacity(output_ids.len());
    let mut entropies = Vec::with_capacity(output_ids.len());
    for &token in output_ids {
        let mut h = base_h.clone();
        for j in 0..d {
            h[j] += pre[j];
        }
        let logits = logits_from_hidden(params, &h);
        let (logp, _, entropy) = softmax_stats(&logits);
        logprobs.push(logp[token as usize]);
        entropies.push(entropy);
        let e = params.embedding(token);
        for j in 0..d {
            pre[j] = PREFIX_DECAY * pre[j] + e[j];
        }
    }
    (logprobs, entropies)
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

/// Backpropagate per-step logit gradients of one sequence into `grad`.
///
/// `logit_grads[t]` is d(objective)/d(logits_t); the caller owns all
/// weighting. Hidden states are recomputed inside.
fn backprop_sequence(
    params: &PolicyParams,
    context_ids: &[TokenId],
    output_ids: &[TokenId],
    logit_grads: &[Vec<f64>],
    grad: &mut PolicyGrad,
) {
    let d = params.dim;
    let v = params.vocab_size;
    let t_len = output_ids.len();
    debug_assert_eq!(logit_grads.len(), t_len);

    let ctx = context_embedding(params, context_ids);
    let base_h = projected_context(params, &ctx);

    // Forward prefix summaries per step (pre_t before consuming output_t).
    let mut pres: Vec<Vec<f64>> = Vec::with_capacity(t_len);
    let mut pre = vec![0.0; d];
    for &token in output_ids {
        pres.push(pre.clone());
        let e = params.embedding(token);
        for j in 0..d {
            pre[j] = PREFIX_DECAY * pre[j] + e[j];
        }
    }

    let mut ctx_grad_total = vec![0.0; d];
    let mut gh_per_step: Vec<Vec<f64>> = Vec::with_capacity(t_len);

    for t in 0..t_len {
        let g = &logit_grads[t];
        let mut h = base_h.clone();
        for j in 0..d {
            h[j] += pres[t][j];
        }
        // dW_o[a,v] += g_v · h_a;  gh_a = Σ_v W_o[a,v] g_v
        let mut gh = vec![0.0; d];
        for a in 0..d {
            let row = &params.out_proj[a * v..(a + 1) * v];
            let grow = &mut grad.out_proj[a * v..(a + 1) * v];
            let ha = h[a];
            let mut acc = 0.0;
            for i in 0..v {
                grow[i] += g[i] * ha;
                acc += row[i] * g[i];
            }
            gh[a] = acc;
        }
        // dW_c[a,b] += gh_a · ctx_b;  dctx_b += Σ_a gh_a W_c[a,b]
        for a in 0..d {
            let gha = gh[a];
            let grow = &mut grad.ctx_proj[a * d..(a + 1) * d];
            let row = &params.ctx_proj[a * d..(a + 1) * d];
            for b in 0..d {
                grow[b] += gha * ctx[b];
                ctx_grad_total[b] += gha * row[b];
            }
        }
        gh_per_step.push(gh);
    }

    // Context embeddings: mean-pool spreads the gradient uniformly.
    if !context_ids.is_empty() {
        let scale = 1.0 / context_ids.len() as f64;
        for &id in context_ids {
            let dst = &mut grad.embeddings[id as usize * d..(id as usize + 1) * d];
            for b in 0..d {
                dst[b] += scale * ctx_grad_total[b];
            }
        }
    }

    // Output embeddings through the decayed prefix summary, reverse scan:
    // dE[z_s] += Σ_{t>s} ρ^{t-1-s} gh_t.
    let mut acc = vec![0.0; d];
    for t in (0..t_len).rev() {
        let id = output_ids[t] as usize;
        let dst = &mut grad.embeddings[id * d..(id + 1) * d];
        for j in 0..d {
            dst[j] += acc[j];
        }
        for j in 0..d {
            acc[j] = gh_per_step[t][j] + PREFIX_DECAY * acc[j];
        }
    }
}

/// Teacher-forced forward producing per-step softmax stats.
fn forward_steps(
    params: &PolicyParams,
    context_ids: &[TokenId],
    output_ids: &[TokenId],
) -> Vec<(Vec<f64>, Vec<f64>, f64)> {
    let d = params.dim;
    let ctx = context_embedding(params, context_ids);
    let base_h = projected_context(params, &ctx);
    let mut pre = vec![0.0; d];
    let mut steps = Vec::with_capacity(output_ids.len());
    for &token in output_ids {
        let mut h = base_h.clone();
        for j in 0..d {
            h[j] += pre[j];
        }
        let logits = logits_from_hidden(params, &h);
        steps.push(softmax_stats(&logits));
        let e = params.embedding(token);
        for j in 0..d {
            pre[j] = PREFIX_DECAY * pre[j] + e[j];
        }
    }
    steps
}

/// Mean negative log-likelihood of `target_ids` under teacher forcing, with
/// its analytic gradient.
pub fn sft_loss(
    params: &PolicyParams,
    context_ids: &[TokenId],
    target_ids: &[TokenId],
) -> (f64, PolicyGrad) {
    let mut grad = PolicyGrad::zeros(params);
    if target_ids.is_empty() {
        return (0.0, grad);
    }
    let steps = forward_steps(params, context_ids, target_ids);
    let t_len = target_ids.len() as f64;
    let mut loss = 0.0;
    let mut logit_grads = Vec::with_capacity(target_ids.len());
    for (t, (logp, p, _)) in steps.iter().enumerate() {
        let y = target_ids[t] as usize;
        loss -= logp[y];
        // d(mean NLL)/dlogits = (p − e_y)/T
        let mut g = p.clone();
        g[y] -= 1.0;
        for x in &mut g {
            *x /= t_len;
        }
        logit_grads.push(g);
    }
    backprop_sequence(params, context_ids, target_ids, &logit_grads, &mut grad);
    (loss / t_len, grad)
}

/// One rollout's contribution to a policy-gradient step.
#[derive(Debug)]
pub struct GradItem<'a> {
    pub context_ids: &'a [TokenId],
    pub output_ids: &'a [TokenId],
    /// log-probs recorded under the frozen snapshot that sampled the rollout.
    pub frozen_logprobs: &'a [f64],
    /// Per-token advantages (already clipped by the trainer).
    pub advantages: &'a [f64],
    /// Per-token clip half-widths ε(e_t).
    pub eps: &'a [f64],
}

#[derive(Debug, Clone, Default)]
pub struct ObjectiveStats {
    pub objective: f64,
    pub surrogate: f64,
    pub mean_entropy: f64,
    pub tokens: usize,
    /// Tokens where the clipped branch was active with a dead gradient.
    pub clipped_tokens: usize,
}

/// Value of the clipped-surrogate objective plus the entropy bonus, without
/// gradients. Shares its definition with [`grad_objective`]; the finite
/// difference oracle differentiates this.
pub fn objective_value(
    params: &PolicyParams,
    items: &[GradItem<'_>],
    beta_entropy: f64,
) -> f64 {
    let mut surrogate = 0.0;
    let mut entropy = 0.0;
    let mut n = 0usize;
    for item in items {
        let steps = forward_steps(params, item.context_ids, item.output_ids);
        for (t, (logp, _, ent)) in steps.iter().enumerate() {
            let y = item.output_ids[t] as usize;
            let r = (logp[y] - item.frozen_logprobs[t]).exp();
            let a = item.advantages[t];
            let eps = item.eps[t];
            let unclipped = r * a;
            let clipped = r.clamp(1.0 - eps, 1.0 + eps) * a;
            surrogate += unclipped.min(clipped);
            entropy += ent;
            n += 1;
        }
    }
    if n == 0 {
        return 0.0;
    }
    (surrogate + beta_entropy * entropy) / n as f64
}

/// Analytic gradient of the objective
/// `mean_t[ min(r_t·A_t, clip(r_t, 1−ε_t, 1+ε_t)·A_t) ] + β·mean_t[ H_t ]`
/// with `r_t = exp(logπ_θ − logπ_frozen)`.
///
/// Errors when any gradient entry is non-finite so the trainer can abort the
/// step with diagnostics.
pub fn grad_objective(
    params: &PolicyParams,
    items: &[GradItem<'_>],
    beta_entropy: f64,
) -> Result<(PolicyGrad, ObjectiveStats)> {
    let mut grad = PolicyGrad::zeros(params);
    let n_tokens: usize = items.iter().map(|i| i.output_ids.len()).sum();
    let mut stats = ObjectiveStats {
        tokens: n_tokens,
        ..Default::default()
    };
    if n_tokens == 0 {
        return Ok((grad, stats));
    }
    let inv_n = 1.0 / n_tokens as f64;

    for item in items {
        debug_assert_eq!(item.output_ids.len(), item.frozen_logprobs.len());
        debug_assert_eq!(item.output_ids.len(), item.advantages.len());
        debug_assert_eq!(item.output_ids.len(), item.eps.len());
        let steps = forward_steps(params, item.context_ids, item.output_ids);
        let mut logit_grads = Vec::with_capacity(item.output_ids.len());
        for (t, (logp, p, ent)) in steps.iter().enumerate() {
            let y = item.output_ids[t] as usize;
            let r = (logp[y] - item.frozen_logprobs[t]).exp();
            let a = item.advantages[t];
            let eps = item.eps[t];
            let unclipped = r * a;
            let clipped = r.clamp(1.0 - eps, 1.0 + eps) * a;
            // min(unclipped, clipped): gradient flows through r only when
            // the unclipped branch is active (the clipped branch is constant
            // wherever it differs from the unclipped one).
            let coef = if unclipped <= clipped {
                r * a
            } else {
                stats.clipped_tokens += 1;
                0.0
            };
            stats.surrogate += unclipped.min(clipped);
            stats.mean_entropy += ent;

            // d/dlogits of [coef·logπ(y)] = coef·(e_y − p);
            // d/dlogits of entropy      = −p_k (log p_k + H).
            let mut g = vec![0.0; p.len()];
            for k in 0..p.len() {
                let mut gk = -coef * p[k];
                if beta_entropy != 0.0 {
                    gk += beta_entropy * (-p[k] * (logp[k] + ent));
                }
                g[k] = gk * inv_n;
            }
            g[y] += coef * inv_n;
            logit_grads.push(g);
        }
        backprop_sequence(
            params,
            item.context_ids,
            item.output_ids,
            &logit_grads,
            &mut grad,
        );
    }

    stats.surrogate *= inv_n;
    stats.mean_entropy *= inv_n;
    stats.objective = stats.surrogate + beta_entropy * stats.mean_entropy;

    if !grad.is_finite() {
        return Err(Error::NonFiniteGradient(format!(
            "policy step {} over {} tokens",
            params.step, n_tokens
        )));
    }
    Ok((grad, stats))
}

/// Adam state for supervised fine-tuning (minimization).
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(params: &PolicyParams, lr: f64) -> Self {
        let n = params.embeddings.len() + params.ctx_proj.len() + params.out_proj.len();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// One minimization step on the flat parameter vector.
    pub fn step(&mut self, params: &mut PolicyParams, grad: &PolicyGrad) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        let flat_grad = grad.iter();
        let flat_params = params
            .embeddings
            .iter_mut()
            .chain(params.ctx_proj.iter_mut())
            .chain(params.out_proj.iter_mut());
        for ((i, g), p) in flat_grad.enumerate().zip(flat_params) {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / b1t;
            let vhat = self.v[i] / b2t;
            *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}
