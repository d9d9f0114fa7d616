//! Lightweight click predictor standing in for the production CTR ranker.
//!
//! Logistic regression over hashed sparse features (dimension 2^15). It
//! scores (user, query) pairs for reward shaping, is retrained daily on the
//! freshest simulated interaction logs, and the hidden-preference feedback
//! simulator closes the loop: clicks are drawn from each user's concealed
//! interest mixture, never shown to the model.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::behavior_log::{BehaviorEvent, QueryCatalog, UserProfile};
use crate::{Error, Result};

/// Feature space dimension: 2^15 hashed buckets.
pub const FEATURE_BITS: u32 = 15;
pub const FEATURE_DIM: usize = 1 << FEATURE_BITS;

/// Ground-truth interest mixture for one simulated user. Drives click
/// outcomes; hidden from every trained model.
#[derive(Debug, Clone)]
pub struct HiddenPreference {
    pub user_id: String,
    /// (category_id, affinity) pairs, affinities summing to 1.
    pub category_affinity: Vec<(String, f64)>,
    pub base_click_rate: f64,
}

impl HiddenPreference {
    pub fn affinity(&self, category_id: &str) -> f64 {
        self.category_affinity
            .iter()
            .find(|(c, _)| c == category_id)
            .map(|(_, w)| *w)
            .unwrap_or(0.0)
    }
}

/// One logged (user, query) outcome from serving.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionRecord {
    pub user_id: String,
    pub query: String,
    pub exposed: bool,
    pub clicked: bool,
    pub day: i64,
}

/// Snapshot of the click model on a given day.
#[derive(Debug, Clone, PartialEq)]
pub struct CtrParams {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub day: i64,
}

impl CtrParams {
    pub fn zeros(day: i64) -> Self {
        CtrParams {
            weights: vec![0.0; FEATURE_DIM],
            bias: 0.0,
            day,
        }
    }

    /// Checkpoint: one ASCII header line `ctr <day> <dim>`, then little-endian
    /// f64 weights followed by the bias. Round-trips bit-exactly.
    pub fn write_file(&self, path: &std::path::Path) -> Result<()> {
        let mut buf = Vec::with_capacity(32 + (self.weights.len() + 1) * 8);
        buf.extend_from_slice(format!("ctr {} {}\n", self.day, self.weights.len()).as_bytes());
        for w in self.weights.iter().chain(std::iter::once(&self.bias)) {
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
        if parts.len() != 3 || parts[0] != "ctr" {
            return Err(Error::Checkpoint(format!("bad ctr header {header:?}")));
        }
        let day: i64 = parts[1]
            .parse()
            .map_err(|_| Error::Checkpoint("bad day".into()))?;
        let dim: usize = parts[2]
            .parse()
            .map_err(|_| Error::Checkpoint("bad dim".into()))?;
        let body = &bytes[nl + 1..];
        if body.len() != (dim + 1) * 8 {
            return Err(Error::Checkpoint(format!(
                "expected {} payload bytes, found {}",
                (dim + 1) * 8,
                body.len()
            )));
        }
        let mut vals = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let weights: Vec<f64> = (&mut vals).take(dim).collect();
        let bias = vals.next().unwrap();
        Ok(CtrParams { weights, bias, day })
    }
}

pub type SparseFeatures = Vec<(u32, f64)>;

fn fnv1a(s: &str) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

fn bucket(name: &str) -> u32 {
    (fnv1a(name) & (FEATURE_DIM as u64 - 1)) as u32
}

/// Hashed sparse features for a (user, query) pair: query tokens, query
/// category, profile buckets, and a query-category × history-category match
/// indicator.
pub fn featurize(
    profile: &UserProfile,
    recent_history: &[BehaviorEvent],
    query: &str,
    catalog: &QueryCatalog,
) -> SparseFeatures {
    let mut acc: std::collections::BTreeMap<u32, f64> = std::collections::BTreeMap::new();
    let mut add = |name: String| {
        *acc.entry(bucket(&name)).or_insert(0.0) += 1.0;
    };
    for tok in query.split_whitespace() {
        add(format!("qtok:{}", tok.to_lowercase()));
    }
    let qcat = catalog.category_of(query);
    if let Some(cat) = qcat {
        add(format!("qcat:{cat}"));
    }
    add(format!("gender:{}", profile.gender));
    add(format!("agebucket:{}", profile.age / 10));
    add(format!("occ:{}", profile.occupation));
    add(format!("city:{}", profile.city));
    if let Some(cat) = qcat {
        if recent_history.iter().any(|e| e.category_id == cat) {
            add("catmatch:1".to_string());
        }
    }
    acc.into_iter().collect()
}

fn dot(params: &CtrParams, features: &[(u32, f64)]) -> f64 {
    features
        .iter()
        .map(|(i, v)| params.weights[*i as usize] * v)
        .sum::<f64>()
        + params.bias
}

/// Predicted click probability, strictly inside (0, 1).
pub fn predict_ctr(params: &CtrParams, features: &[(u32, f64)]) -> f64 {
    let z = dot(params, features);
    let p = 1.0 / (1.0 + (-z).exp());
    p.clamp(1e-12, 1.0 - 1e-12)
}

#[derive(Debug, Clone)]
pub struct CtrTrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Stop when an epoch fails to improve mean log loss by this much.
    pub plateau_tol: f64,
    pub seed: u64,
}

impl Default for CtrTrainConfig {
    fn default() -> Self {
        CtrTrainConfig {
            learning_rate: 0.5,
            max_epochs: 50,
            batch_size: 32,
            plateau_tol: 1e-5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CtrTrainStats {
    pub epochs_run: usize,
    pub final_loss: f64,
    pub examples: usize,
}

fn mean_log_loss(params: &CtrParams, examples: &[(SparseFeatures, bool)]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for (x, y) in examples {
        let p = predict_ctr(params, x);
        total += if *y { -p.ln() } else { -(1.0 - p).ln() };
    }
    total / examples.len() as f64
}

/// Daily retrain: mini-batch gradient descent on binary log loss over the
/// exposed records of `logs`, starting from yesterday's parameters. Stops
/// early when the epoch loss plateaus; empty logs return the parameters
/// unchanged. Deterministic for a fixed config seed.
pub fn train_daily(
    params: &CtrParams,
    logs: &[InteractionRecord],
    mut feats: impl FnMut(&str, &str) -> SparseFeatures,
    config: &CtrTrainConfig,
) -> (CtrParams, CtrTrainStats) {
    let examples: Vec<(SparseFeatures, bool)> = logs
        .iter()
        .filter(|r| r.exposed)
        .map(|r| (feats(&r.user_id, &r.query), r.clicked))
        .collect();

    let mut next = params.clone();
    next.day = params.day + 1;
    if examples.is_empty() {
        return (
            next,
            CtrTrainStats {
                epochs_run: 0,
                final_loss: 0.0,
                examples: 0,
            },
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (params.day as u64).wrapping_mul(1013));
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut prev_loss = mean_log_loss(&next, &examples);
    let mut epochs_run = 0;

    for _ in 0..config.max_epochs {
        // Fisher-Yates with the run's own rng keeps epochs deterministic.
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        for chunk in order.chunks(config.batch_size.max(1)) {
            let scale = config.learning_rate / chunk.len() as f64;
            let mut bias_grad = 0.0;
            let mut sparse_grad: Vec<(u32, f64)> = Vec::new();
            for &idx in chunk {
                let (x, y) = &examples[idx];
                let p = predict_ctr(&next, x);
                let err = p - f64::from(*y);
                bias_grad += err;
                for (i, v) in x {
                    sparse_grad.push((*i, err * v));
                }
            }
            next.bias -= scale * bias_grad;
            for (i, g) in sparse_grad {
                next.weights[i as usize] -= scale * g;
            }
        }
        epochs_run += 1;
        let loss = mean_log_loss(&next, &examples);
        if prev_loss - loss < config.plateau_tol {
            prev_loss = loss;
            break;
        }
        prev_loss = loss;
    }

    (
        next,
        CtrTrainStats {
            epochs_run,
            final_loss: prev_loss,
            examples: examples.len(),
        },
    )
}

/// Position decay for display slot `slot` (0-based).
pub fn position_decay(slot: usize, coeff: f64) -> f64 {
    1.0 / (1.0 + coeff * slot as f64)
}

/// Draw click outcomes for a displayed query list from the user's hidden
/// preference: each query clicks independently with probability
/// `base_click_rate × affinity(category) × position_decay(slot)`.
pub fn simulate_feedback(
    preference: &HiddenPreference,
    displayed: &[String],
    catalog: &QueryCatalog,
    decay_coeff: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<bool> {
    displayed
        .iter()
        .enumerate()
        .map(|(slot, q)| {
            let affinity = catalog
                .category_of(q)
                .map(|c| preference.affinity(c))
                .unwrap_or(0.0);
            let p = preference.base_click_rate * affinity * position_decay(slot, decay_coeff);
            rng.gen::<f64>() < p
        })
        .collect()
}
