//! User behavior logs: ingestion, session aggregation and synthetic corpora.
//!
//! Two session granularities scope training instances:
//!
//! - direct sessions: one HintQ exposure (three displayed hint queries) kept
//!   only if at least one displayed query was clicked, with the user's
//!   history truncated to the events strictly before the exposure;
//! - think sessions: one per calendar day, spanning from the user's first
//!   search-action event of the day to their last event of the day, pooling
//!   in-domain and cross-domain signals.
//!
//! The log file is line-based UTF-8, one record per line, tab-separated
//! `user_id \t timestamp \t record_kind \t payload` where the payload is a
//! flat `key=value;` list and lines are sorted by `(user_id, timestamp)`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ctr_model::HiddenPreference;
use crate::{Error, Result};

pub const SECONDS_PER_DAY: i64 = 86_400;

/// Basic demographic profile attached to every user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    pub gender: String,
    pub age: u32,
    pub occupation: String,
    pub city: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Search,
    Click,
}

impl Action {
    pub fn as_str(self) -> &'static str {
        match self {
            Action::Search => "search",
            Action::Click => "click",
        }
    }
}

/// One timestamped behavior. `index` (1-based) and `time_offset` (days ago,
/// 0 = today) are relative to the session context the event appears in and
/// are assigned by [`contextualize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorEvent {
    pub index: usize,
    pub time_offset: u32,
    pub action: Action,
    pub content: String,
    pub category_id: String,
    pub timestamp: i64,
}

/// One HintQ exposure: exactly three displayed queries and their click flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureEvent {
    pub timestamp: i64,
    pub displayed: Vec<String>,
    pub clicked: Vec<bool>,
}

impl ExposureEvent {
    pub fn any_clicked(&self) -> bool {
        self.clicked.iter().any(|c| *c)
    }
}

/// Exposure-level session: context is the history strictly before the
/// exposure; valid only when at least one displayed query was clicked.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionDirect {
    pub user: UserProfile,
    pub history: Vec<BehaviorEvent>,
    pub exposure: ExposureEvent,
    /// Displayed queries with their production rank scores, display order.
    pub rank_candidates: Vec<(String, f64)>,
}

/// Day-level session `[t_first, t_exit]` where `t_first` is the first
/// search-action event of the day and `t_exit` the last event of the day.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionThink {
    pub user: UserProfile,
    pub window_start: i64,
    pub window_end: i64,
    pub events: Vec<BehaviorEvent>,
    pub exposures: Vec<ExposureEvent>,
    /// Query texts searched outside HintQ within the window, time order.
    pub global_searches: Vec<String>,
}

/// Everything the log holds for one user, events sorted by timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct UserHistory {
    pub profile: UserProfile,
    pub events: Vec<BehaviorEvent>,
    pub exposures: Vec<ExposureEvent>,
    /// Timestamps of events that came from `global_search` records.
    pub global_search_times: Vec<i64>,
}

impl UserHistory {
    pub fn is_global_search(&self, ev: &BehaviorEvent) -> bool {
        ev.action == Action::Search && self.global_search_times.binary_search(&ev.timestamp).is_ok()
    }
}

pub fn day_of(timestamp: i64) -> i64 {
    timestamp.div_euclid(SECONDS_PER_DAY)
}

/// Re-anchor a history slice for use as prompt context: keep the most recent
/// `cap` events, re-index them 1..n oldest-first, and compute day offsets
/// against `anchor_day`.
pub fn contextualize(events: &[BehaviorEvent], anchor_day: i64, cap: usize) -> Vec<BehaviorEvent> {
    let start = events.len().saturating_sub(cap);
    events[start..]
        .iter()
        .enumerate()
        .map(|(i, ev)| BehaviorEvent {
            index: i + 1,
            time_offset: (anchor_day - day_of(ev.timestamp)).max(0) as u32,
            ..ev.clone()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Log line format
// ---------------------------------------------------------------------------

pub(crate) fn parse_payload(payload: &str) -> Vec<(String, String)> {
    payload
        .split(';')
        .filter(|kv| !kv.is_empty())
        .filter_map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
        })
        .collect()
}

pub(crate) fn payload_get<'a>(pairs: &'a [(String, String)], key: &str) -> Option<&'a str> {
    pairs
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
}

#[derive(Debug, Clone)]
enum LogRecord {
    Profile(UserProfile),
    Behavior {
        event: BehaviorEvent,
        global: bool,
    },
    Exposure(ExposureEvent),
}

fn parse_line(line: &str) -> std::result::Result<(String, LogRecord), String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 4 {
        return Err(format!("expected 4 tab-separated fields, got {}", fields.len()));
    }
    let user_id = fields[0].trim();
    if user_id.is_empty() {
        return Err("empty user_id".into());
    }
    let timestamp: i64 = fields[1]
        .parse()
        .map_err(|_| format!("bad timestamp {:?}", fields[1]))?;
    let kind = fields[2];
    let pairs = parse_payload(fields[3]);
    let get = |key: &str| {
        payload_get(&pairs, key)
            .map(str::to_string)
            .ok_or_else(|| format!("missing payload key {key:?}"))
    };

    let record = match kind {
        "profile" => {
            let age: u32 = get("age")?
                .parse()
                .map_err(|_| "bad age".to_string())?;
            if age > 120 {
                return Err(format!("age {age} out of range"));
            }
            let profile = UserProfile {
                user_id: user_id.to_string(),
                gender: get("gender")?,
                age,
                occupation: get("occupation")?,
                city: get("city")?,
            };
            for (name, v) in [
                ("gender", &profile.gender),
                ("occupation", &profile.occupation),
                ("city", &profile.city),
            ] {
                if v.trim().is_empty() {
                    return Err(format!("empty profile field {name}"));
                }
            }
            LogRecord::Profile(profile)
        }
        "search" | "click" | "global_search" => {
            let content = get("content")?;
            if content.trim().is_empty() {
                return Err("empty content".into());
            }
            let action = if kind == "click" {
                Action::Click
            } else {
                Action::Search
            };
            LogRecord::Behavior {
                event: BehaviorEvent {
                    index: 0,
                    time_offset: 0,
                    action,
                    content,
                    category_id: get("category")?,
                    timestamp,
                },
                global: kind == "global_search",
            }
        }
        "exposure" => {
            let displayed = vec![get("q1")?, get("q2")?, get("q3")?];
            let mut clicked = Vec::with_capacity(3);
            for key in ["c1", "c2", "c3"] {
                clicked.push(match get(key)?.as_str() {
                    "1" => true,
                    "0" => false,
                    other => return Err(format!("bad click flag {other:?}")),
                });
            }
            LogRecord::Exposure(ExposureEvent {
                timestamp,
                displayed,
                clicked,
            })
        }
        other => return Err(format!("unknown record_kind {other:?}")),
    };
    Ok((user_id.to_string(), record))
}

/// Outcome of [`ingest_logs`]: per-user histories plus rejected line numbers.
#[derive(Debug)]
pub struct IngestResult {
    pub histories: Vec<UserHistory>,
    /// (1-based line number, reason) for every skipped record.
    pub rejects: Vec<(usize, String)>,
}

/// Read a behavior log file into per-user histories.
///
/// Malformed lines are skipped and reported; an unreadable file is fatal.
/// Events come back sorted by timestamp within each user and histories sorted
/// by user id.
pub fn ingest_logs(path: &Path) -> Result<IngestResult> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_from_reader(BufReader::new(file), path)
}

fn ingest_from_reader<R: BufRead>(reader: R, path: &Path) -> Result<IngestResult> {
    struct Partial {
        profile: Option<UserProfile>,
        events: Vec<BehaviorEvent>,
        exposures: Vec<ExposureEvent>,
        global_times: Vec<i64>,
        first_line: usize,
    }
    let mut users: BTreeMap<String, Partial> = BTreeMap::new();
    let mut rejects = Vec::new();

    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        match parse_line(&line) {
            Ok((user_id, record)) => {
                let entry = users.entry(user_id).or_insert_with(|| Partial {
                    profile: None,
                    events: Vec::new(),
                    exposures: Vec::new(),
                    global_times: Vec::new(),
                    first_line: line_no,
                });
                match record {
                    LogRecord::Profile(p) => entry.profile = Some(p),
                    LogRecord::Behavior { event, global } => {
                        if global {
                            entry.global_times.push(event.timestamp);
                        }
                        entry.events.push(event);
                    }
                    LogRecord::Exposure(e) => entry.exposures.push(e),
                }
            }
            Err(msg) => rejects.push((line_no, msg)),
        }
    }

    let mut histories = Vec::new();
    for (user_id, mut partial) in users {
        let Some(profile) = partial.profile else {
            rejects.push((
                partial.first_line,
                format!("user {user_id} has no profile record; all records dropped"),
            ));
            continue;
        };
        partial.events.sort_by_key(|e| e.timestamp);
        partial.exposures.sort_by_key(|e| e.timestamp);
        partial.global_times.sort_unstable();
        histories.push(UserHistory {
            profile,
            events: partial.events,
            exposures: partial.exposures,
            global_search_times: partial.global_times,
        });
    }
    Ok(IngestResult { histories, rejects })
}

// ---------------------------------------------------------------------------
// Session construction
// ---------------------------------------------------------------------------

/// Build one direct session per exposure that received at least one click.
///
/// Returns the sessions plus the count of exposures dropped for having no
/// click. History is truncated to the `l_cap` most recent events strictly
/// before the exposure.
pub fn build_direct_sessions(
    history: &UserHistory,
    l_cap: usize,
) -> (Vec<SessionDirect>, usize) {
    let mut sessions = Vec::new();
    let mut dropped = 0usize;
    for exposure in &history.exposures {
        if !exposure.any_clicked() {
            dropped += 1;
            continue;
        }
        let before: Vec<BehaviorEvent> = history
            .events
            .iter()
            .filter(|e| e.timestamp < exposure.timestamp)
            .cloned()
            .collect();
        let anchor_day = day_of(exposure.timestamp);
        let rank_candidates = exposure
            .displayed
            .iter()
            .enumerate()
            .map(|(slot, q)| (q.clone(), production_rank_score(slot)))
            .collect();
        sessions.push(SessionDirect {
            user: history.profile.clone(),
            history: contextualize(&before, anchor_day, l_cap),
            exposure: exposure.clone(),
            rank_candidates,
        });
    }
    (sessions, dropped)
}

/// Production rank score proxy for display slot `slot` (0-based): the
/// displayed order is the ranker's order, so scores decay with position.
pub fn production_rank_score(slot: usize) -> f64 {
    1.0 / (1.0 + slot as f64)
}

/// Build the think session for one calendar day, if the user interacted with
/// the search entry (issued any search-action event) that day.
pub fn build_think_session(
    history: &UserHistory,
    calendar_day: i64,
    l_cap: usize,
) -> Option<SessionThink> {
    let day_events: Vec<&BehaviorEvent> = history
        .events
        .iter()
        .filter(|e| day_of(e.timestamp) == calendar_day)
        .collect();
    let window_start = day_events
        .iter()
        .find(|e| e.action == Action::Search)
        .map(|e| e.timestamp)?;
    let window_end = day_events.last().map(|e| e.timestamp)?;

    let in_window: Vec<BehaviorEvent> = day_events
        .iter()
        .filter(|e| e.timestamp >= window_start && e.timestamp <= window_end)
        .map(|e| (*e).clone())
        .collect();
    let global_searches = in_window
        .iter()
        .filter(|e| history.is_global_search(e))
        .map(|e| e.content.clone())
        .collect();
    let exposures = history
        .exposures
        .iter()
        .filter(|x| x.timestamp >= window_start && x.timestamp <= window_end)
        .cloned()
        .collect();

    Some(SessionThink {
        user: history.profile.clone(),
        window_start,
        window_end,
        events: contextualize(&in_window, calendar_day, l_cap),
        exposures,
        global_searches,
    })
}

/// All think sessions for a user, one per qualifying day, ascending by day.
pub fn build_think_sessions(history: &UserHistory, l_cap: usize) -> Vec<SessionThink> {
    let mut days: Vec<i64> = history.events.iter().map(|e| day_of(e.timestamp)).collect();
    days.sort_unstable();
    days.dedup();
    days.into_iter()
        .filter_map(|d| build_think_session(history, d, l_cap))
        .collect()
}

// ---------------------------------------------------------------------------
// Fixed taxonomy and query catalog
// ---------------------------------------------------------------------------

const CATEGORY_NAMES: [&str; 40] = [
    "wool coat",
    "running shoes",
    "phone case",
    "laptop stand",
    "red dress",
    "flower cake",
    "woven sachet",
    "yoga mat",
    "coffee beans",
    "desk lamp",
    "winter gloves",
    "silk scarf",
    "gaming mouse",
    "ceramic mug",
    "leather wallet",
    "baby stroller",
    "electric kettle",
    "canvas bag",
    "wireless earbuds",
    "mountain bike",
    "lipstick set",
    "face cream",
    "protein powder",
    "camping tent",
    "fishing rod",
    "cat litter",
    "dog leash",
    "sun hat",
    "rain boots",
    "air fryer",
    "robot vacuum",
    "guitar strings",
    "oil painting",
    "jade bracelet",
    "green tea",
    "rice cooker",
    "car charger",
    "book shelf",
    "sewing kit",
    "badminton racket",
];

pub const MODIFIERS: [&str; 12] = [
    "cheap", "best", "new", "mini", "pro", "women", "men", "kids", "gift", "sale", "plus",
    "classic",
];

const ITEM_FILLERS: [&str; 10] = [
    "style", "edition", "series", "model", "design", "home", "travel", "sport", "light", "deluxe",
];

pub const GENDERS: [&str; 2] = ["female", "male"];
pub const OCCUPATIONS: [&str; 8] = [
    "teacher", "engineer", "nurse", "designer", "driver", "chef", "student", "farmer",
];
pub const CITIES: [&str; 8] = [
    "beijing", "shanghai", "hangzhou", "chengdu", "wuhan", "xian", "qingdao", "kunming",
];

pub const QUERIES_PER_CATEGORY: usize = 8;
pub const ITEMS_PER_CATEGORY: usize = 4;

/// The fixed leaf-category taxonomy driving synthesis: 40 categories, each
/// with a deterministic query pool and item-description pool. Depends only on
/// the constants above, never on the corpus seed.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    pub categories: Vec<CategoryInfo>,
}

#[derive(Debug, Clone)]
pub struct CategoryInfo {
    pub id: String,
    pub name: String,
    pub queries: Vec<String>,
    pub items: Vec<String>,
}

impl Taxonomy {
    pub fn new() -> Self {
        let categories = CATEGORY_NAMES
            .iter()
            .enumerate()
            .map(|(c, name)| {
                let mut queries = vec![name.to_string()];
                for i in 1..QUERIES_PER_CATEGORY {
                    // Stride 5 is coprime with the modifier pool size, so
                    // every category gets distinct modifiers.
                    let m = MODIFIERS[(c + i * 5) % MODIFIERS.len()];
                    queries.push(format!("{m} {name}"));
                }
                let items = (0..ITEMS_PER_CATEGORY)
                    .map(|i| {
                        let m = MODIFIERS[(c + 7 * i + 1) % MODIFIERS.len()];
                        let f = ITEM_FILLERS[(c + i) % ITEM_FILLERS.len()];
                        format!("{m} {name} {f}")
                    })
                    .collect();
                CategoryInfo {
                    id: category_id(c),
                    name: name.to_string(),
                    queries,
                    items,
                }
            })
            .collect();
        Taxonomy { categories }
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }
}

impl Default for Taxonomy {
    fn default() -> Self {
        Self::new()
    }
}

pub fn category_id(index: usize) -> String {
    format!("c{index:02}")
}

/// Normalized query text → leaf category id lookup, derived from the
/// taxonomy pools (queries and item descriptions).
#[derive(Debug, Clone)]
pub struct QueryCatalog {
    map: BTreeMap<String, String>,
    per_category: BTreeMap<String, Vec<String>>,
    names: BTreeMap<String, String>,
}

pub fn normalize_text(s: &str) -> String {
    s.split_whitespace()
        .map(|t| t.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

impl QueryCatalog {
    pub fn from_taxonomy(taxonomy: &Taxonomy) -> Self {
        let mut map = BTreeMap::new();
        let mut per_category = BTreeMap::new();
        let mut names = BTreeMap::new();
        for cat in &taxonomy.categories {
            for q in cat.queries.iter().chain(cat.items.iter()) {
                map.insert(normalize_text(q), cat.id.clone());
            }
            per_category.insert(cat.id.clone(), cat.queries.clone());
            names.insert(cat.id.clone(), cat.name.clone());
        }
        QueryCatalog {
            map,
            per_category,
            names,
        }
    }

    pub fn category_of(&self, query: &str) -> Option<&str> {
        self.map.get(&normalize_text(query)).map(|s| s.as_str())
    }

    pub fn category_name(&self, category_id: &str) -> Option<&str> {
        self.names.get(category_id).map(|s| s.as_str())
    }

    pub fn queries_of(&self, category_id: &str) -> &[String] {
        self.per_category
            .get(category_id)
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }

    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.per_category.keys().map(|s| s.as_str())
    }
}

// ---------------------------------------------------------------------------
// Corpus synthesis
// ---------------------------------------------------------------------------

/// Knobs for the synthetic corpus generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_users: usize,
    /// Calendar days generated, numbered 1..=days.
    pub days: i64,
    /// Behavior events (search/click/global_search) per user per day.
    pub events_per_day: (usize, usize),
    /// HintQ exposures per user per day.
    pub exposures_per_day: (usize, usize),
    /// Probability an event's category ignores the interest mixture.
    pub noise_category_prob: f64,
    /// Active interest categories per user.
    pub interests_per_user: (usize, usize),
    pub base_click_rate: (f64, f64),
    /// Position decay coefficient shared with the feedback simulator.
    pub position_decay: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 100,
            days: 8,
            events_per_day: (4, 10),
            exposures_per_day: (1, 3),
            noise_category_prob: 0.15,
            interests_per_user: (2, 4),
            base_click_rate: (0.35, 0.8),
            position_decay: 0.3,
        }
    }
}

/// In-memory synthesized corpus: log lines (already sorted), hidden
/// preferences, and the taxonomy used to generate everything.
#[derive(Debug)]
pub struct SyntheticCorpus {
    pub lines: Vec<String>,
    pub preferences: Vec<HiddenPreference>,
    pub taxonomy: Taxonomy,
}

impl SyntheticCorpus {
    pub fn write_log(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for line in &self.lines {
            out.push_str(line);
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn write_preferences(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for pref in &self.preferences {
            let affinities = pref
                .category_affinity
                .iter()
                .map(|(c, w)| format!("{c}:{w}"))
                .collect::<Vec<_>>()
                .join(";");
            writeln!(f, "{}\t{}\t{}", pref.user_id, pref.base_click_rate, affinities)
                .map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

pub fn read_preferences(path: &Path) -> Result<Vec<HiddenPreference>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut prefs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 3 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: "expected 3 tab-separated fields".into(),
            });
        }
        let base_click_rate: f64 = parts[1].parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: "bad base_click_rate".into(),
        })?;
        let mut category_affinity = Vec::new();
        for kv in parts[2].split(';').filter(|s| !s.is_empty()) {
            let (c, w) = kv.split_once(':').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: "bad affinity entry".into(),
            })?;
            category_affinity.push((
                c.to_string(),
                w.parse().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: "bad affinity weight".into(),
                })?,
            ));
        }
        prefs.push(HiddenPreference {
            user_id: parts[0].to_string(),
            category_affinity,
            base_click_rate,
        });
    }
    Ok(prefs)
}

fn user_id(i: usize) -> String {
    format!("u{i:04}")
}

/// Deterministically synthesize a behavior corpus for `(seed, config)`.
///
/// Every user gets a hidden interest mixture over the fixed taxonomy; the
/// mixture drives searched queries, clicked items, the displayed hint
/// queries and their click outcomes (via the same preference model the
/// feedback simulator uses). The hidden mixtures are returned so the
/// feedback loop can keep using them.
pub fn synthesize_corpus(seed: u64, config: &SynthConfig) -> SyntheticCorpus {
    assert!(config.n_users >= 1, "n_users must be >= 1");
    let taxonomy = Taxonomy::new();
    let n_cats = taxonomy.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lines = Vec::new();
    let mut preferences = Vec::new();

    for u in 0..config.n_users {
        let uid = user_id(u);
        let profile_payload = format!(
            "gender={};age={};occupation={};city={};",
            GENDERS[rng.gen_range(0..GENDERS.len())],
            rng.gen_range(18..=70),
            OCCUPATIONS[rng.gen_range(0..OCCUPATIONS.len())],
            CITIES[rng.gen_range(0..CITIES.len())],
        );

        // Hidden interest mixture.
        let k = rng.gen_range(config.interests_per_user.0..=config.interests_per_user.1);
        let mut cats: Vec<usize> = Vec::new();
        while cats.len() < k {
            let c = rng.gen_range(0..n_cats);
            if !cats.contains(&c) {
                cats.push(c);
            }
        }
        let mut weights: Vec<f64> = (0..k).map(|_| rng.gen_range(0.5..1.5)).collect();
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        let pref = HiddenPreference {
            user_id: uid.clone(),
            category_affinity: cats
                .iter()
                .zip(&weights)
                .map(|(c, w)| (category_id(*c), *w))
                .collect(),
            base_click_rate: rng
                .gen_range(config.base_click_rate.0..config.base_click_rate.1),
        };

        let mut user_lines: Vec<(i64, String)> = Vec::new();
        user_lines.push((
            SECONDS_PER_DAY,
            format!("{uid}\t{}\tprofile\t{profile_payload}", SECONDS_PER_DAY),
        ));

        for day in 1..=config.days {
            let day_base = day * SECONDS_PER_DAY;
            let n_events =
                rng.gen_range(config.events_per_day.0..=config.events_per_day.1);
            let n_exposures =
                rng.gen_range(config.exposures_per_day.0..=config.exposures_per_day.1);
            let mut minute = 1i64;

            for e in 0..n_events {
                let ts = day_base + 60 * minute;
                minute += rng.gen_range(1..=5);
                let cat_idx = pick_category(&mut rng, &cats, &weights, n_cats, config);
                let cat = &taxonomy.categories[cat_idx];
                // First event of the day is a search so the day always has a
                // search-entry interaction.
                let kind = if e == 0 {
                    0
                } else {
                    let r: f64 = rng.gen();
                    if r < 0.35 {
                        0 // search
                    } else if r < 0.70 {
                        1 // click
                    } else {
                        2 // global_search
                    }
                };
                let line = match kind {
                    0 | 2 => {
                        let q = &cat.queries[rng.gen_range(0..cat.queries.len())];
                        let rk = if kind == 0 { "search" } else { "global_search" };
                        format!("{uid}\t{ts}\t{rk}\tcontent={q};category={};", cat.id)
                    }
                    _ => {
                        let item = &cat.items[rng.gen_range(0..cat.items.len())];
                        format!("{uid}\t{ts}\tclick\tcontent={item};category={};", cat.id)
                    }
                };
                user_lines.push((ts, line));
            }

            for _ in 0..n_exposures {
                let ts = day_base + 60 * minute;
                minute += rng.gen_range(1..=5);
                let mut displayed: Vec<(String, String)> = Vec::new();
                while displayed.len() < 3 {
                    let cat_idx = pick_category(&mut rng, &cats, &weights, n_cats, config);
                    let cat = &taxonomy.categories[cat_idx];
                    let q = cat.queries[rng.gen_range(0..cat.queries.len())].clone();
                    if !displayed.iter().any(|(dq, _)| *dq == q) {
                        displayed.push((q, cat.id.clone()));
                    }
                }
                let mut payload = String::new();
                for (i, (q, _)) in displayed.iter().enumerate() {
                    let _ = write!(payload, "q{}={};", i + 1, q);
                }
                for (slot, (_, cat)) in displayed.iter().enumerate() {
                    let affinity = pref
                        .category_affinity
                        .iter()
                        .find(|(c, _)| c == cat)
                        .map(|(_, w)| *w)
                        .unwrap_or(0.0);
                    let p = pref.base_click_rate * affinity
                        / (1.0 + config.position_decay * slot as f64);
                    let clicked = rng.gen::<f64>() < p;
                    let _ = write!(payload, "c{}={};", slot + 1, u8::from(clicked));
                }
                user_lines.push((ts, format!("{uid}\t{ts}\texposure\t{payload}")));
            }
        }

        user_lines.sort_by_key(|(ts, _)| *ts);
        lines.extend(user_lines.into_iter().map(|(_, l)| l));
        preferences.push(pref);
    }

    SyntheticCorpus {
        lines,
        preferences,
        taxonomy,
    }
}

fn pick_category(
    rng: &mut ChaCha8Rng,
    cats: &[usize],
    weights: &[f64],
    n_cats: usize,
    config: &SynthConfig,
) -> usize {
    if rng.gen::<f64>() < config.noise_category_prob {
        return rng.gen_range(0..n_cats);
    }
    let r: f64 = rng.gen();
    let mut acc = 0.0;
    for (c, w) in cats.iter().zip(weights) {
        acc += w;
        if r < acc {
            return *c;
        }
    }
    cats[cats.len() - 1]
}
