//! End-to-end orchestration over a workspace directory. The CLI commands
//! and the acceptance suite both drive these stage functions, so a full
//! pipeline run is reproducible in-process.
//!
//! Stage outputs (all inside the workspace directory):
//!
//! ```text
//! corpus.log, prefs.tsv, vocab.tsv          synth-data
//! direct.jsonl, think.jsonl                 build-samples
//! policy_<mode>_sft.ckpt                    train-sft
//! policy_<mode>_rl.ckpt, rl_metrics_<mode>.tsv [, reward_trace_<mode>.log]
//!                                           train-rl
//! x2q.tsv                                   build-index
//! interactions_day<D>.log, u2q_cache.tsv,
//! ctr.ckpt                                  simulate
//! predictions.tsv, truth.tsv, eval_report.tsv
//!                                           eval
//! ```
//!
//! The last synthesized day is held out: samples, the co-occurrence table,
//! index statistics and serving prompts only see earlier days, while eval
//! truth comes from the held-out day.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::behavior_log::{
    build_direct_sessions, build_think_sessions, contextualize, day_of, ingest_logs,
    normalize_text, synthesize_corpus, Action, BehaviorEvent, QueryCatalog, SessionDirect,
    SessionThink, Taxonomy, UserHistory, SECONDS_PER_DAY,
};
use crate::config::PipelineConfig;
use crate::ctr_model::{featurize, predict_ctr, CtrParams, InteractionRecord};
use crate::eval::{evaluate, write_predictions, write_report, write_truth, EvalReport, TruthEntry};
use crate::il_grpo::{
    daily_cycle, train_sft, write_metrics_file, DayData, RlInput, RlTrainer, SftExample,
    StepMetrics,
};
use crate::policy::{sample, PolicyParams};
use crate::prompt_codec::{encode_prompt, OutputMode, Vocabulary};
use crate::reward_engine::segment_for_rewards;
use crate::sample_builder::{
    build_direct_dataset, build_think_dataset, read_direct_dataset, read_think_dataset,
    CoOccurrenceTable, SampleBuilder,
};
use crate::serving::{
    build_x2q_index, simulate_day, EffStats, ServeConfig, U2qCache, X2qIndex,
};
use crate::{Error, Result};

/// Which training dataset / model variant a command addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Direct,
    Think,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Direct => "direct",
            Mode::Think => "think",
        }
    }

    pub fn output_mode(self) -> OutputMode {
        match self {
            Mode::Direct => OutputMode::Direct,
            Mode::Think => OutputMode::Think,
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(Mode::Direct),
            "think" => Ok(Mode::Think),
            other => Err(Error::Config(format!(
                "mode must be 'direct' or 'think', got {other:?}"
            ))),
        }
    }
}

/// Path layout of one pipeline workspace.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub dir: PathBuf,
}

impl Workspace {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Workspace { dir: dir.into() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn corpus_log(&self) -> PathBuf {
        self.path("corpus.log")
    }
    pub fn prefs(&self) -> PathBuf {
        self.path("prefs.tsv")
    }
    pub fn vocab(&self) -> PathBuf {
        self.path("vocab.tsv")
    }
    pub fn dataset(&self, mode: Mode) -> PathBuf {
        self.path(&format!("{}.jsonl", mode.as_str()))
    }
    pub fn policy_sft(&self, mode: Mode) -> PathBuf {
        self.path(&format!("policy_{}_sft.ckpt", mode.as_str()))
    }
    pub fn policy_rl(&self, mode: Mode) -> PathBuf {
        self.path(&format!("policy_{}_rl.ckpt", mode.as_str()))
    }
    pub fn rl_metrics(&self, mode: Mode) -> PathBuf {
        self.path(&format!("rl_metrics_{}.tsv", mode.as_str()))
    }
    pub fn reward_trace(&self, mode: Mode) -> PathBuf {
        self.path(&format!("reward_trace_{}.log", mode.as_str()))
    }
    pub fn ctr_ckpt(&self) -> PathBuf {
        self.path("ctr.ckpt")
    }
    pub fn x2q_index(&self) -> PathBuf {
        self.path("x2q.tsv")
    }
    pub fn u2q_cache(&self) -> PathBuf {
        self.path("u2q_cache.tsv")
    }
    pub fn interactions(&self, day: i64) -> PathBuf {
        self.path(&format!("interactions_day{day}.log"))
    }
    pub fn predictions(&self) -> PathBuf {
        self.path("predictions.tsv")
    }
    pub fn truth(&self) -> PathBuf {
        self.path("truth.tsv")
    }
    pub fn eval_report(&self) -> PathBuf {
        self.path("eval_report.tsv")
    }

    fn require(&self, path: &Path) -> Result<()> {
        if path.exists() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "missing input file {} (run the earlier pipeline stages first)",
                path.display()
            )))
        }
    }

    /// The live direct-model checkpoint: RL if present, else SFT.
    pub fn current_policy(&self, mode: Mode) -> Result<PathBuf> {
        let rl = self.policy_rl(mode);
        if rl.exists() {
            return Ok(rl);
        }
        let sft = self.policy_sft(mode);
        if sft.exists() {
            return Ok(sft);
        }
        Err(Error::Config(format!(
            "no {} policy checkpoint in {} (run train-sft first)",
            mode.as_str(),
            self.dir.display()
        )))
    }
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct SynthSummary {
    pub users: usize,
    pub lines: usize,
}

pub fn synth_data(ws: &Workspace, seed: u64, cfg: &PipelineConfig) -> Result<SynthSummary> {
    std::fs::create_dir_all(&ws.dir).map_err(|e| Error::io(&ws.dir, e))?;
    let corpus = synthesize_corpus(seed, &cfg.synth);
    corpus.write_log(&ws.corpus_log())?;
    corpus.write_preferences(&ws.prefs())?;
    Vocabulary::build().write_file(&ws.vocab())?;
    Ok(SynthSummary {
        users: cfg.synth.n_users,
        lines: corpus.lines.len(),
    })
}

/// Histories truncated to the training days (everything before the held-out
/// evaluation day).
fn train_histories(histories: &[UserHistory], test_day: i64) -> Vec<UserHistory> {
    histories
        .iter()
        .map(|h| UserHistory {
            profile: h.profile.clone(),
            events: h
                .events
                .iter()
                .filter(|e| day_of(e.timestamp) < test_day)
                .cloned()
                .collect(),
            exposures: h
                .exposures
                .iter()
                .filter(|x| day_of(x.timestamp) < test_day)
                .cloned()
                .collect(),
            global_search_times: h
                .global_search_times
                .iter()
                .filter(|t| day_of(**t) < test_day)
                .copied()
                .collect(),
        })
        .collect()
}

#[derive(Debug)]
pub struct SampleSummary {
    pub direct_sessions: usize,
    pub direct_samples: usize,
    pub dropped_no_click: usize,
    pub think_sessions: usize,
    pub think_samples: usize,
    pub think_dropped: usize,
    pub rejects: usize,
}

pub fn build_samples(ws: &Workspace, cfg: &PipelineConfig) -> Result<SampleSummary> {
    ws.require(&ws.corpus_log())?;
    let ingest = ingest_logs(&ws.corpus_log())?;
    let histories = train_histories(&ingest.histories, cfg.test_day());
    let catalog = QueryCatalog::from_taxonomy(&Taxonomy::new());
    let cooccur = CoOccurrenceTable::build(&histories, &catalog);
    let builder = SampleBuilder::new(&catalog, &cooccur, cfg.builder.clone());

    let l_cap = cfg.serve.l_cap;
    let mut direct: Vec<SessionDirect> = Vec::new();
    let mut dropped_no_click = 0usize;
    let mut think: Vec<SessionThink> = Vec::new();
    for h in &histories {
        let (sessions, dropped) = build_direct_sessions(h, l_cap);
        dropped_no_click += dropped;
        direct.extend(sessions);
        think.extend(build_think_sessions(h, l_cap));
    }

    let direct_samples = build_direct_dataset(&builder, &direct, &ws.dataset(Mode::Direct))?;
    let (think_samples, think_dropped) =
        build_think_dataset(&builder, &think, &ws.dataset(Mode::Think))?;

    Ok(SampleSummary {
        direct_sessions: direct.len(),
        direct_samples,
        dropped_no_click,
        think_sessions: think.len(),
        think_samples,
        think_dropped,
        rejects: ingest.rejects.len(),
    })
}

fn load_sft_examples(ws: &Workspace, vocab: &Vocabulary, cfg: &PipelineConfig, mode: Mode) -> Result<Vec<SftExample>> {
    let k = cfg.train.instructed_k;
    Ok(match mode {
        Mode::Direct => read_direct_dataset(&ws.dataset(mode))?
            .iter()
            .map(|s| SftExample::from_direct(vocab, s, k))
            .collect(),
        Mode::Think => read_think_dataset(&ws.dataset(mode))?
            .iter()
            .map(|s| SftExample::from_think(vocab, s, k))
            .collect(),
    })
}

pub fn train_sft_stage(
    ws: &Workspace,
    seed: u64,
    cfg: &PipelineConfig,
    mode: Mode,
) -> Result<Vec<f64>> {
    ws.require(&ws.dataset(mode))?;
    ws.require(&ws.vocab())?;
    let vocab = Vocabulary::read_file(&ws.vocab())?;
    let examples = load_sft_examples(ws, &vocab, cfg, mode)?;
    if examples.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} dataset has no samples",
            mode.as_str()
        )));
    }
    let init = PolicyParams::init(&vocab, cfg.policy_dim, seed);
    let mut sft_cfg = cfg.sft.clone();
    sft_cfg.seed = seed ^ 0x5f7;
    let (tuned, losses) = train_sft(&init, &examples, &sft_cfg);
    tuned.write_file(&ws.policy_sft(mode))?;
    Ok(losses)
}

fn load_rl_inputs(ws: &Workspace, vocab: &Vocabulary, cfg: &PipelineConfig, mode: Mode) -> Result<Vec<RlInput>> {
    let k = cfg.train.instructed_k;
    Ok(match mode {
        Mode::Direct => read_direct_dataset(&ws.dataset(mode))?
            .iter()
            .map(|s| RlInput::from_direct(vocab, s, k))
            .collect(),
        Mode::Think => read_think_dataset(&ws.dataset(mode))?
            .iter()
            .map(|s| RlInput::from_think(vocab, s, k))
            .collect(),
    })
}

pub fn train_rl_stage(
    ws: &Workspace,
    seed: u64,
    cfg: &PipelineConfig,
    mode: Mode,
) -> Result<Vec<StepMetrics>> {
    ws.require(&ws.dataset(mode))?;
    ws.require(&ws.policy_sft(mode))?;
    let vocab = Vocabulary::read_file(&ws.vocab())?;
    let catalog = QueryCatalog::from_taxonomy(&Taxonomy::new());
    let inputs = load_rl_inputs(ws, &vocab, cfg, mode)?;
    let policy = PolicyParams::read_file(&ws.policy_sft(mode))?;
    let ctr = if ws.ctr_ckpt().exists() {
        CtrParams::read_file(&ws.ctr_ckpt())?
    } else {
        CtrParams::zeros(0)
    };
    let mut train_cfg = cfg.train.clone();
    train_cfg.trace_rollouts = cfg.reward_trace;
    let trainer = RlTrainer {
        vocab: &vocab,
        catalog: &catalog,
        reward_cfg: cfg.reward.clone(),
        cfg: train_cfg,
        mode: mode.output_mode(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x11_22);
    let (tuned, metrics) = trainer.run(&policy, &ctr, &inputs, cfg.rl_steps, &mut rng)?;
    tuned.write_file(&ws.policy_rl(mode))?;
    write_metrics_file(&ws.rl_metrics(mode), &metrics)?;
    if cfg.reward_trace {
        let path = ws.reward_trace(mode);
        let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        for m in &metrics {
            for line in &m.rollout_traces {
                writeln!(f, "{line}").map_err(|e| Error::io(&path, e))?;
            }
        }
    }
    Ok(metrics)
}

/// Per-query display/search counts over the training days; the page-view
/// signal for the effectiveness score.
fn page_views(histories: &[UserHistory]) -> BTreeMap<String, f64> {
    let mut pv: BTreeMap<String, f64> = BTreeMap::new();
    for h in histories {
        for e in &h.events {
            if e.action == Action::Search {
                *pv.entry(normalize_text(&e.content)).or_insert(0.0) += 1.0;
            }
        }
        for x in &h.exposures {
            for q in &x.displayed {
                *pv.entry(normalize_text(q)).or_insert(0.0) += 1.0;
            }
        }
    }
    pv
}

fn mean_predicted_ctr(
    histories: &[UserHistory],
    ctr: &CtrParams,
    catalog: &QueryCatalog,
    queries: impl Iterator<Item = String>,
) -> BTreeMap<String, f64> {
    let sample_users: Vec<&UserHistory> = histories.iter().take(20).collect();
    queries
        .map(|q| {
            let mean = if sample_users.is_empty() {
                0.5
            } else {
                sample_users
                    .iter()
                    .map(|h| {
                        let recent = if h.events.len() > 10 {
                            &h.events[h.events.len() - 10..]
                        } else {
                            &h.events[..]
                        };
                        predict_ctr(ctr, &featurize(&h.profile, recent, &q, catalog))
                    })
                    .sum::<f64>()
                    / sample_users.len() as f64
            };
            (q, mean)
        })
        .collect()
}

#[derive(Debug)]
pub struct IndexSummary {
    pub users_processed: usize,
    pub parsed_outputs: usize,
    pub triggers: usize,
}

/// Distill think-model outputs into the x2q index: one reasoning inference
/// per user over their training-day history, trigger indices resolved to
/// the underlying behavior content.
pub fn build_index_stage(ws: &Workspace, seed: u64, cfg: &PipelineConfig) -> Result<IndexSummary> {
    ws.require(&ws.corpus_log())?;
    let vocab = Vocabulary::read_file(&ws.vocab())?;
    let catalog = QueryCatalog::from_taxonomy(&Taxonomy::new());
    let histories = train_histories(&ingest_logs(&ws.corpus_log())?.histories, cfg.test_day());
    let policy = PolicyParams::read_file(&ws.current_policy(Mode::Think)?)?;
    let ctr = if ws.ctr_ckpt().exists() {
        CtrParams::read_file(&ws.ctr_ckpt())?
    } else {
        CtrParams::zeros(0)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x3344);
    let mut mappings: Vec<(String, Vec<String>)> = Vec::new();
    let mut parsed_outputs = 0usize;
    for h in &histories {
        let ctx = contextualize(&h.events, cfg.test_day(), cfg.serve.l_cap);
        if ctx.is_empty() {
            continue;
        }
        let prompt = encode_prompt(&vocab, &h.profile, &ctx, cfg.train.instructed_k);
        let rollout = sample(
            &policy,
            &prompt.token_ids,
            vocab.eos_id(),
            &cfg.train.sample,
            &mut rng,
        );
        let seg = segment_for_rewards(&vocab, &rollout.token_ids, OutputMode::Think);
        let triggers = seg.effective.trigger_sets(&vocab, &rollout.token_ids);
        if triggers.is_empty() {
            continue;
        }
        parsed_outputs += 1;
        // Group this output's query slots back under their interest blocks:
        // queries between trigger span k and k+1 belong to interest k.
        let queries = seg.effective.query_slices(&rollout.token_ids);
        let spans = &seg.effective.spans;
        let mut block_queries: Vec<Vec<String>> = vec![Vec::new(); triggers.len()];
        let mut block = 0usize;
        let mut qi = 0usize;
        for span in spans {
            match span.kind {
                crate::prompt_codec::SpanKind::Trigger { interest } => block = interest,
                crate::prompt_codec::SpanKind::Query { .. } => {
                    if block >= 1 {
                        block_queries[block - 1].push(vocab.decode(queries[qi]));
                    }
                    qi += 1;
                }
                _ => {}
            }
        }
        for ((_, trigger_indices), qs) in triggers.iter().zip(block_queries) {
            if qs.is_empty() {
                continue;
            }
            for idx in trigger_indices {
                if let Some(ev) = ctx.iter().find(|e| e.index == *idx) {
                    mappings.push((ev.content.clone(), qs.clone()));
                }
            }
        }
    }

    let pv = page_views(&histories);
    let all_queries: std::collections::BTreeSet<String> = mappings
        .iter()
        .flat_map(|(_, qs)| qs.iter().map(|q| normalize_text(q)))
        .collect();
    let stats = EffStats {
        page_views: pv,
        predicted_ctr: mean_predicted_ctr(&histories, &ctr, &catalog, all_queries.into_iter()),
    };
    let index = build_x2q_index(&mappings, &stats, cfg.serve.alpha);
    index.write_file(&ws.x2q_index())?;
    Ok(IndexSummary {
        users_processed: histories.len(),
        parsed_outputs,
        triggers: index.keys().count(),
    })
}

/// Interaction log lines share the behavior-log format with
/// `record_kind=interaction`.
pub fn write_interactions(path: &Path, records: &[InteractionRecord]) -> Result<()> {
    let mut per_user: BTreeMap<&str, Vec<&InteractionRecord>> = BTreeMap::new();
    for r in records {
        per_user.entry(&r.user_id).or_default().push(r);
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for (user, rows) in per_user {
        for (i, r) in rows.iter().enumerate() {
            let ts = r.day * SECONDS_PER_DAY + i as i64;
            writeln!(
                f,
                "{user}\t{ts}\tinteraction\tquery={};exposed={};clicked={};day={};",
                r.query,
                u8::from(r.exposed),
                u8::from(r.clicked),
                r.day
            )
            .map_err(|e| Error::io(path, e))?;
        }
    }
    Ok(())
}

pub fn read_interactions(path: &Path) -> Result<Vec<InteractionRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 4 || parts[2] != "interaction" {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: "expected interaction record".into(),
            });
        }
        let pairs = crate::behavior_log::parse_payload(parts[3]);
        let get = |k: &str| {
            crate::behavior_log::payload_get(&pairs, k).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("missing payload key {k:?}"),
            })
        };
        out.push(InteractionRecord {
            user_id: parts[0].to_string(),
            query: get("query")?.to_string(),
            exposed: get("exposed")? == "1",
            clicked: get("clicked")? == "1",
            day: get("day")?.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: "bad day".into(),
            })?,
        });
    }
    Ok(out)
}

#[derive(Debug)]
pub struct SimulateSummary {
    pub day: i64,
    pub interactions: usize,
    pub exposures_served: usize,
    pub exposure_opportunities: usize,
    pub inference_runs: usize,
    /// Daily-cycle event log when retraining ran.
    pub cycle_events: Vec<String>,
}

/// Replay one day through the serving stack; with `retrain` the daily
/// continuous-training cycle (CTR first, then RL) runs on the day's logs.
pub fn simulate_stage(
    ws: &Workspace,
    seed: u64,
    cfg: &PipelineConfig,
    day: i64,
    retrain: bool,
) -> Result<SimulateSummary> {
    ws.require(&ws.corpus_log())?;
    ws.require(&ws.prefs())?;
    let vocab = Vocabulary::read_file(&ws.vocab())?;
    let catalog = QueryCatalog::from_taxonomy(&Taxonomy::new());
    let histories = ingest_logs(&ws.corpus_log())?.histories;
    let prefs = crate::behavior_log::read_preferences(&ws.prefs())?;
    let policy = PolicyParams::read_file(&ws.current_policy(Mode::Direct)?)?;
    let index = if ws.x2q_index().exists() {
        X2qIndex::read_file(&ws.x2q_index())?
    } else {
        X2qIndex::default()
    };
    let mut cache = if ws.u2q_cache().exists() {
        U2qCache::read_file(&ws.u2q_cache(), cfg.serve.m)?
    } else {
        U2qCache::new(cfg.serve.m)
    };
    let mut serve_cfg: ServeConfig = cfg.serve.clone();
    serve_cfg.instructed_k = cfg.train.instructed_k;
    serve_cfg.sample = cfg.train.sample;

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (day as u64).wrapping_mul(0x9e37));
    let outcome = simulate_day(
        day,
        &histories,
        &prefs,
        &policy,
        &index,
        &mut cache,
        &vocab,
        &catalog,
        &serve_cfg,
        &mut rng,
    );
    write_interactions(&ws.interactions(day), &outcome.interactions)?;
    cache.write_file(&ws.u2q_cache())?;

    let mut cycle_events = Vec::new();
    if retrain {
        let ctr = if ws.ctr_ckpt().exists() {
            CtrParams::read_file(&ws.ctr_ckpt())?
        } else {
            CtrParams::zeros(day - 1)
        };
        let rl_inputs = load_rl_inputs(ws, &vocab, cfg, Mode::Direct)?;
        let user_ctx: BTreeMap<String, (crate::behavior_log::UserProfile, Vec<BehaviorEvent>)> =
            histories
                .iter()
                .map(|h| {
                    let recent: Vec<BehaviorEvent> = h
                        .events
                        .iter()
                        .filter(|e| day_of(e.timestamp) <= day)
                        .cloned()
                        .collect();
                    (h.profile.user_id.clone(), (h.profile.clone(), recent))
                })
                .collect();
        let data = DayData {
            interactions: outcome.interactions.clone(),
            rl_inputs,
            user_ctx,
        };
        let mut train_cfg = cfg.train.clone();
        train_cfg.trace_rollouts = false;
        let trainer = RlTrainer {
            vocab: &vocab,
            catalog: &catalog,
            reward_cfg: cfg.reward.clone(),
            cfg: train_cfg,
            mode: OutputMode::Direct,
        };
        let mut ctr_cfg = cfg.ctr.clone();
        ctr_cfg.seed = seed ^ 0xC7;
        let day_out = daily_cycle(
            &trainer,
            day,
            &policy,
            &ctr,
            &data,
            cfg.rl_steps,
            &ctr_cfg,
            &mut rng,
        )?;
        day_out.ctr.write_file(&ws.ctr_ckpt())?;
        day_out.policy.write_file(&ws.policy_rl(Mode::Direct))?;
        cycle_events = day_out.events;
    }

    Ok(SimulateSummary {
        day,
        interactions: outcome.interactions.len(),
        exposures_served: outcome.exposures_served,
        exposure_opportunities: outcome.exposure_opportunities,
        inference_runs: outcome.inference_log.iter().filter(|l| !l.skipped).count(),
        cycle_events,
    })
}

/// Ground truth for the held-out day: every query a user searched plus its
/// category.
pub fn truth_for_day(histories: &[UserHistory], day: i64) -> BTreeMap<String, TruthEntry> {
    let mut truth = BTreeMap::new();
    for h in histories {
        let mut entry = TruthEntry::default();
        let mut cats = std::collections::BTreeSet::new();
        for e in &h.events {
            if day_of(e.timestamp) == day && e.action == Action::Search {
                entry.queries.push(e.content.clone());
                cats.insert(e.category_id.clone());
            }
        }
        entry.categories = cats.into_iter().collect();
        if !entry.queries.is_empty() {
            truth.insert(h.profile.user_id.clone(), entry);
        }
    }
    truth
}

/// Generate one top-k prediction list per user with the given policy,
/// conditioning on the history before the held-out day.
pub fn generate_predictions(
    histories: &[UserHistory],
    policy: &PolicyParams,
    vocab: &Vocabulary,
    cfg: &PipelineConfig,
    seed: u64,
) -> BTreeMap<String, Vec<String>> {
    let test_day = cfg.test_day();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xEE77);
    let mut predictions = BTreeMap::new();
    for h in histories {
        let before: Vec<BehaviorEvent> = h
            .events
            .iter()
            .filter(|e| day_of(e.timestamp) < test_day)
            .cloned()
            .collect();
        let ctx = contextualize(&before, test_day, cfg.serve.l_cap);
        let prompt = encode_prompt(vocab, &h.profile, &ctx, cfg.train.instructed_k);
        let rollout = sample(
            policy,
            &prompt.token_ids,
            vocab.eos_id(),
            &cfg.train.sample,
            &mut rng,
        );
        let seg = segment_for_rewards(vocab, &rollout.token_ids, OutputMode::Direct);
        let mut queries = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for slice in seg.effective.query_slices(&rollout.token_ids) {
            let q = vocab.decode(slice);
            if seen.insert(normalize_text(&q)) {
                queries.push(q);
            }
            if queries.len() == cfg.eval_k {
                break;
            }
        }
        predictions.insert(h.profile.user_id.clone(), queries);
    }
    predictions
}

/// Score a policy checkpoint (default: the live direct model) against the
/// held-out day, writing predictions, truth and the report.
pub fn eval_stage(
    ws: &Workspace,
    seed: u64,
    cfg: &PipelineConfig,
    policy_path: Option<&Path>,
) -> Result<EvalReport> {
    ws.require(&ws.corpus_log())?;
    let vocab = Vocabulary::read_file(&ws.vocab())?;
    let catalog = QueryCatalog::from_taxonomy(&Taxonomy::new());
    let histories = ingest_logs(&ws.corpus_log())?.histories;
    let policy = match policy_path {
        Some(p) => PolicyParams::read_file(p)?,
        None => PolicyParams::read_file(&ws.current_policy(Mode::Direct)?)?,
    };
    let truth = truth_for_day(&histories, cfg.test_day());
    let predictions = generate_predictions(&histories, &policy, &vocab, cfg, seed);
    write_predictions(&ws.predictions(), &predictions)?;
    write_truth(&ws.truth(), &truth)?;
    let report = evaluate(&predictions, &truth, cfg.eval_k, &catalog);
    write_report(&ws.eval_report(), &report)?;
    Ok(report)
}

/// The whole pipeline at the configured sizes: synthesize, build samples,
/// SFT both variants, RL on the direct variant, build the x2q index from
/// the think variant, replay the held-out day, evaluate.
pub fn run_full(ws: &Workspace, seed: u64, cfg: &PipelineConfig) -> Result<EvalReport> {
    synth_data(ws, seed, cfg)?;
    build_samples(ws, cfg)?;
    train_sft_stage(ws, seed, cfg, Mode::Direct)?;
    train_sft_stage(ws, seed, cfg, Mode::Think)?;
    train_rl_stage(ws, seed, cfg, Mode::Direct)?;
    build_index_stage(ws, seed, cfg)?;
    simulate_stage(ws, seed, cfg, cfg.test_day(), false)?;
    eval_stage(ws, seed, cfg, None)
}
