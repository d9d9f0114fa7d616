//! Hybrid serving layer: event-triggered nearline u2q inference with a
//! bounded per-user cache, and the real-time x2q trigger-to-query index.
//!
//! u2q: a watcher follows each user's interaction stream and, debounced,
//! runs one direct inference over the user's current history; the newest M
//! runs are retained per user and concatenated (newest first, deduplicated)
//! at serve time.
//!
//! x2q: reasoning outputs map each trigger behavior's content text to the
//! interest's query set; candidates per trigger are ranked by
//! `S_final = α·S_rel + (1−α)·S_eff` where S_rel is min-max-scaled
//! co-occurrence frequency per trigger key and S_eff the equal-weight mean
//! of min-max-normalized page views and predicted CTR.
//!
//! Index file: `trigger_key \t query \t s_rel \t s_eff \t s_final`, sorted
//! by (trigger_key, −s_final). Cache snapshot file: `user_id \t
//! run_timestamp \t q1;;q2;;…`, newest run first per user.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::behavior_log::{
    contextualize, day_of, normalize_text, Action, BehaviorEvent, QueryCatalog, UserProfile,
};
use crate::ctr_model::{simulate_feedback, HiddenPreference, InteractionRecord};
use crate::policy::{sample, PolicyParams, SampleConfig};
use crate::prompt_codec::{encode_prompt, OutputMode, Vocabulary};
use crate::reward_engine::segment_for_rewards;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct ServeConfig {
    /// Inference runs retained per user.
    pub m: usize,
    /// Relevance/effectiveness trade-off in the composite score.
    pub alpha: f64,
    /// Seconds within which repeated triggers coalesce.
    pub debounce_window: i64,
    pub top_n: usize,
    /// History cap and instructed query count for nearline prompts.
    pub l_cap: usize,
    pub instructed_k: usize,
    pub sample: SampleConfig,
    /// Position decay coefficient for simulated clicks.
    pub position_decay: f64,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            m: 3,
            alpha: 0.7,
            debounce_window: 60,
            top_n: 10,
            l_cap: 50,
            instructed_k: 10,
            sample: SampleConfig::default(),
            position_decay: 0.3,
        }
    }
}

// ---------------------------------------------------------------------------
// u2q cache
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceRun {
    pub timestamp: i64,
    pub queries: Vec<String>,
    pub snapshot_step: u64,
}

/// Per-user ring buffer of the most recent `capacity` inference runs,
/// newest first.
#[derive(Debug, Clone, PartialEq)]
pub struct U2qCache {
    capacity: usize,
    runs: BTreeMap<String, VecDeque<InferenceRun>>,
}

impl U2qCache {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "cache capacity must be >= 1");
        U2qCache {
            capacity,
            runs: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, user_id: &str, run: InferenceRun) {
        let q = self.runs.entry(user_id.to_string()).or_default();
        q.push_front(run);
        while q.len() > self.capacity {
            q.pop_back();
        }
    }

    pub fn runs(&self, user_id: &str) -> impl Iterator<Item = &InferenceRun> {
        self.runs.get(user_id).into_iter().flatten()
    }

    pub fn len(&self, user_id: &str) -> usize {
        self.runs.get(user_id).map(|q| q.len()).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    pub fn users(&self) -> impl Iterator<Item = &str> {
        self.runs.keys().map(|s| s.as_str())
    }

    /// Snapshot file: `user_id \t run_timestamp \t q1;;q2;;…`, runs
    /// newest-first per user. The producing policy's snapshot id is runtime
    /// bookkeeping and is not persisted.
    pub fn write_file(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for (user, runs) in &self.runs {
            for run in runs {
                writeln!(f, "{user}\t{}\t{}", run.timestamp, run.queries.join(";;"))
                    .map_err(|e| Error::io(path, e))?;
            }
        }
        Ok(())
    }

    pub fn read_file(path: &Path, capacity: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cache = U2qCache::new(capacity);
        for (i, line) in text.lines().enumerate() {
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 3 {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: "expected 3 tab-separated fields".into(),
                });
            }
            let run = InferenceRun {
                timestamp: parts[1].parse().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: "bad timestamp".into(),
                })?,
                snapshot_step: 0,
                queries: parts[2]
                    .split(";;")
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect(),
            };
            // File order is newest-first; keep it.
            cache
                .runs
                .entry(parts[0].to_string())
                .or_default()
                .push_back(run);
        }
        Ok(cache)
    }
}

/// Serve-time u2q recall: runs newest-first, concatenated and deduplicated,
/// preserving within-run order.
pub fn u2q_lookup(cache: &U2qCache, user_id: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for run in cache.runs(user_id) {
        for q in &run.queries {
            let key = normalize_text(q);
            if seen.insert(key) {
                out.push(q.clone());
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Nearline watcher
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct StreamEvent {
    pub user_id: String,
    pub event: BehaviorEvent,
}

#[derive(Debug, Clone)]
pub struct InferenceLogEntry {
    pub user_id: String,
    pub timestamp: i64,
    pub queries: usize,
    pub skipped: bool,
}

/// Accumulating per-user view the watcher maintains while replaying a
/// stream.
pub struct NearlineState {
    profiles: BTreeMap<String, UserProfile>,
    history: BTreeMap<String, Vec<BehaviorEvent>>,
    last_trigger: BTreeMap<String, i64>,
}

impl NearlineState {
    pub fn new(profiles: BTreeMap<String, UserProfile>) -> Self {
        NearlineState {
            profiles,
            history: BTreeMap::new(),
            last_trigger: BTreeMap::new(),
        }
    }

    /// Seed a user's pre-stream history (events before the replay window).
    pub fn preload(&mut self, user_id: &str, events: Vec<BehaviorEvent>) {
        self.history.insert(user_id.to_string(), events);
    }

    fn observe(&mut self, ev: &StreamEvent, debounce: i64) -> bool {
        self.history
            .entry(ev.user_id.clone())
            .or_default()
            .push(ev.event.clone());
        if ev.event.action != Action::Search && ev.event.action != Action::Click {
            return false;
        }
        let trigger = match self.last_trigger.get(&ev.user_id) {
            Some(last) => ev.event.timestamp - last >= debounce,
            None => true,
        };
        if trigger {
            self.last_trigger
                .insert(ev.user_id.clone(), ev.event.timestamp);
        }
        trigger
    }

    pub fn history_of(&self, user_id: &str) -> &[BehaviorEvent] {
        self.history
            .get(user_id)
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }
}

/// Run one direct inference over a user's current history and parse the
/// generated list; `None` when the output yields no queries.
fn run_inference(
    policy: &PolicyParams,
    vocab: &Vocabulary,
    profile: &UserProfile,
    history: &[BehaviorEvent],
    now: i64,
    cfg: &ServeConfig,
    rng: &mut ChaCha8Rng,
) -> Option<InferenceRun> {
    let ctx = contextualize(history, day_of(now), cfg.l_cap);
    let prompt = encode_prompt(vocab, profile, &ctx, cfg.instructed_k);
    let rollout = sample(policy, &prompt.token_ids, vocab.eos_id(), &cfg.sample, rng);
    let seg = segment_for_rewards(vocab, &rollout.token_ids, OutputMode::Direct);
    let mut queries = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for slice in seg.effective.query_slices(&rollout.token_ids) {
        let q = vocab.decode(slice);
        if seen.insert(normalize_text(&q)) {
            queries.push(q);
        }
    }
    if queries.is_empty() {
        return None;
    }
    Some(InferenceRun {
        timestamp: now,
        queries,
        snapshot_step: rollout.snapshot_step,
    })
}

/// Replay a time-ordered event stream: each new search/click outside the
/// user's debounce window enqueues one direct inference whose result lands
/// in the ring buffer. Failed inferences (no parseable queries) are logged
/// and leave the cache untouched.
pub fn nearline_watch(
    stream: &[StreamEvent],
    state: &mut NearlineState,
    policy: &PolicyParams,
    vocab: &Vocabulary,
    cache: &mut U2qCache,
    cfg: &ServeConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<InferenceLogEntry> {
    let mut log = Vec::new();
    for ev in stream {
        if !state.observe(ev, cfg.debounce_window) {
            continue;
        }
        let profile = match state.profiles.get(&ev.user_id) {
            Some(p) => p.clone(),
            None => continue,
        };
        let history = state.history_of(&ev.user_id).to_vec();
        match run_inference(
            policy,
            vocab,
            &profile,
            &history,
            ev.event.timestamp,
            cfg,
            rng,
        ) {
            Some(run) => {
                log.push(InferenceLogEntry {
                    user_id: ev.user_id.clone(),
                    timestamp: ev.event.timestamp,
                    queries: run.queries.len(),
                    skipped: false,
                });
                cache.insert(&ev.user_id, run);
            }
            None => log.push(InferenceLogEntry {
                user_id: ev.user_id.clone(),
                timestamp: ev.event.timestamp,
                queries: 0,
                skipped: true,
            }),
        }
    }
    log
}

// ---------------------------------------------------------------------------
// x2q index
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct X2qCandidate {
    pub query: String,
    pub s_rel: f64,
    pub s_eff: f64,
    pub s_final: f64,
}

/// Trigger-content → ranked query candidates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct X2qIndex {
    entries: BTreeMap<String, Vec<X2qCandidate>>,
}

/// Business-signal source for the effectiveness score.
#[derive(Debug, Clone, Default)]
pub struct EffStats {
    pub page_views: BTreeMap<String, f64>,
    pub predicted_ctr: BTreeMap<String, f64>,
}

fn min_max_scale(values: &BTreeMap<String, f64>) -> BTreeMap<String, f64> {
    let lo = values.values().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.values().cloned().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .map(|(k, v)| {
            let scaled = if hi > lo { (v - lo) / (hi - lo) } else { 1.0 };
            (k.clone(), scaled)
        })
        .collect()
}

/// Build the index from reasoning outputs: every `(trigger content, query)`
/// pair observed across interest mappings counts toward S_rel (min-max
/// scaled per trigger key); S_eff blends page views and predicted CTR.
pub fn build_x2q_index(
    mappings: &[(String, Vec<String>)],
    stats: &EffStats,
    alpha: f64,
) -> X2qIndex {
    let mut cooccur: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    let mut index_queries: BTreeMap<String, f64> = BTreeMap::new();
    for (trigger, queries) in mappings {
        let key = normalize_text(trigger);
        if key.is_empty() {
            continue;
        }
        for q in queries {
            let qn = normalize_text(q);
            if qn.is_empty() {
                continue;
            }
            *cooccur.entry(key.clone()).or_default().entry(qn.clone()).or_insert(0.0) += 1.0;
            index_queries.entry(qn).or_insert(0.0);
        }
    }

    let pv: BTreeMap<String, f64> = index_queries
        .keys()
        .map(|q| (q.clone(), stats.page_views.get(q).copied().unwrap_or(0.0)))
        .collect();
    let ctr: BTreeMap<String, f64> = index_queries
        .keys()
        .map(|q| (q.clone(), stats.predicted_ctr.get(q).copied().unwrap_or(0.0)))
        .collect();
    let pv = min_max_scale(&pv);
    let ctr = min_max_scale(&ctr);

    let mut entries = BTreeMap::new();
    for (key, counts) in cooccur {
        let freq: BTreeMap<String, f64> = counts;
        let rel = min_max_scale(&freq);
        let mut candidates: Vec<X2qCandidate> = rel
            .into_iter()
            .map(|(q, s_rel)| {
                let s_eff = 0.5 * pv[&q] + 0.5 * ctr[&q];
                X2qCandidate {
                    s_final: alpha * s_rel + (1.0 - alpha) * s_eff,
                    query: q,
                    s_rel,
                    s_eff,
                }
            })
            .collect();
        candidates.sort_by(|a, b| {
            b.s_final
                .partial_cmp(&a.s_final)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.query.cmp(&b.query))
        });
        entries.insert(key, candidates);
    }
    X2qIndex { entries }
}

impl X2qIndex {
    pub fn entry(&self, trigger: &str) -> Option<&[X2qCandidate]> {
        self.entries
            .get(&normalize_text(trigger))
            .map(|v| v.as_slice())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for (key, candidates) in &self.entries {
            for c in candidates {
                writeln!(f, "{key}\t{}\t{}\t{}\t{}", c.query, c.s_rel, c.s_eff, c.s_final)
                    .map_err(|e| Error::io(path, e))?;
            }
        }
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries: BTreeMap<String, Vec<X2qCandidate>> = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 5 {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: "expected 5 tab-separated fields".into(),
                });
            }
            let parse_f = |s: &str| -> Result<f64> {
                s.parse().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: format!("bad float {s:?}"),
                })
            };
            entries.entry(parts[0].to_string()).or_default().push(X2qCandidate {
                query: parts[1].to_string(),
                s_rel: parse_f(parts[2])?,
                s_eff: parse_f(parts[3])?,
                s_final: parse_f(parts[4])?,
            });
        }
        Ok(X2qIndex { entries })
    }
}

/// Exact-key lookup on the normalized trigger; top-N by the composite
/// score, ties broken lexicographically. Unknown keys yield empty.
pub fn x2q_retrieve(index: &X2qIndex, trigger: &str, top_n: usize) -> Vec<String> {
    index
        .entry(trigger)
        .map(|cands| {
            cands
                .iter()
                .take(top_n)
                .map(|c| c.query.clone())
                .collect()
        })
        .unwrap_or_default()
}

/// Round-robin interleave of the two recall sources, first occurrence wins,
/// truncated to `budget`.
pub fn merge_recalls(u2q: &[String], x2q: &[String], budget: usize) -> Vec<String> {
    let mut out = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    let mut push = |q: &String, out: &mut Vec<String>| {
        if seen.insert(normalize_text(q)) {
            out.push(q.clone());
        }
    };
    let n = u2q.len().max(x2q.len());
    for i in 0..n {
        if out.len() >= budget {
            break;
        }
        if let Some(q) = u2q.get(i) {
            push(q, &mut out);
        }
        if out.len() >= budget {
            break;
        }
        if let Some(q) = x2q.get(i) {
            push(q, &mut out);
        }
    }
    out.truncate(budget);
    out
}

// ---------------------------------------------------------------------------
// Day simulation
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct DaySimOutcome {
    pub interactions: Vec<InteractionRecord>,
    pub inference_log: Vec<InferenceLogEntry>,
    pub exposures_served: usize,
    pub exposure_opportunities: usize,
}

/// Replay one calendar day: events stream through the nearline watcher; at
/// each exposure opportunity the top-3 merged recalls are displayed and
/// clicks drawn from the user's hidden preference.
#[allow(clippy::too_many_arguments)]
pub fn simulate_day(
    day: i64,
    histories: &[crate::behavior_log::UserHistory],
    preferences: &[HiddenPreference],
    policy: &PolicyParams,
    index: &X2qIndex,
    cache: &mut U2qCache,
    vocab: &Vocabulary,
    catalog: &QueryCatalog,
    cfg: &ServeConfig,
    rng: &mut ChaCha8Rng,
) -> DaySimOutcome {
    let prefs: BTreeMap<&str, &HiddenPreference> = preferences
        .iter()
        .map(|p| (p.user_id.as_str(), p))
        .collect();
    let profiles: BTreeMap<String, UserProfile> = histories
        .iter()
        .map(|h| (h.profile.user_id.clone(), h.profile.clone()))
        .collect();
    let mut state = NearlineState::new(profiles);

    // Pre-day history is context; the day's own events replay through the
    // watcher.
    #[derive(Debug)]
    enum Item<'a> {
        Event(StreamEvent),
        Exposure(&'a str, i64),
    }
    let mut items: Vec<(i64, usize, Item)> = Vec::new();
    for (ui, h) in histories.iter().enumerate() {
        let uid = &h.profile.user_id;
        let before: Vec<BehaviorEvent> = h
            .events
            .iter()
            .filter(|e| day_of(e.timestamp) < day)
            .cloned()
            .collect();
        state.preload(uid, before);
        for e in h.events.iter().filter(|e| day_of(e.timestamp) == day) {
            items.push((
                e.timestamp,
                ui,
                Item::Event(StreamEvent {
                    user_id: uid.clone(),
                    event: e.clone(),
                }),
            ));
        }
        for x in h.exposures.iter().filter(|x| day_of(x.timestamp) == day) {
            items.push((x.timestamp, ui, Item::Exposure(uid, x.timestamp)));
        }
    }
    items.sort_by_key(|(ts, ui, _)| (*ts, *ui));

    let mut interactions = Vec::new();
    let mut inference_log = Vec::new();
    let mut exposures_served = 0usize;
    let mut exposure_opportunities = 0usize;

    for (_, _, item) in items {
        match item {
            Item::Event(ev) => {
                let log = nearline_watch(
                    std::slice::from_ref(&ev),
                    &mut state,
                    policy,
                    vocab,
                    cache,
                    cfg,
                    rng,
                );
                inference_log.extend(log);
            }
            Item::Exposure(uid, _ts) => {
                exposure_opportunities += 1;
                let u2q = u2q_lookup(cache, uid);
                let trigger = state
                    .history_of(uid)
                    .last()
                    .map(|e| e.content.clone())
                    .unwrap_or_default();
                let x2q = x2q_retrieve(index, &trigger, cfg.top_n);
                let shown = merge_recalls(&u2q, &x2q, 3);
                if shown.is_empty() {
                    continue;
                }
                exposures_served += 1;
                let flags = match prefs.get(uid) {
                    Some(pref) => {
                        simulate_feedback(pref, &shown, catalog, cfg.position_decay, rng)
                    }
                    None => vec![false; shown.len()],
                };
                for (q, clicked) in shown.iter().zip(&flags) {
                    interactions.push(InteractionRecord {
                        user_id: uid.to_string(),
                        query: q.clone(),
                        exposed: true,
                        clicked: *clicked,
                        day,
                    });
                }
            }
        }
    }

    DaySimOutcome {
        interactions,
        inference_log,
        exposures_served,
        exposure_opportunities,
    }
}
