//! Training-sample construction: interest-guided label re-ranking over
//! sessions, interest-point induction, rationale templating, and the direct
//! / think dataset files.
//!
//! Label lists concatenate candidate blocks in fixed priority order —
//! clicked hint queries, global searches, production-rank candidates,
//! generated candidates — with each block relevance-filtered against the
//! session history, first-occurrence dedup, and truncation to `k_max`.
//!
//! Dataset files are line-based: one `#`-prefixed header line, then one JSON
//! record per line, ordered by (user_id, session timestamp).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::behavior_log::{
    BehaviorEvent, QueryCatalog, SessionDirect, SessionThink, UserHistory, UserProfile,
};
use crate::text_metrics::jaccard_text;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelSource {
    HintQClick,
    GlobalSearch,
    RankTopK,
    LlmGen,
}

impl LabelSource {
    /// Priority rank; lower comes earlier in the label list.
    pub fn priority(self) -> usize {
        match self {
            LabelSource::HintQClick => 0,
            LabelSource::GlobalSearch => 1,
            LabelSource::RankTopK => 2,
            LabelSource::LlmGen => 3,
        }
    }
}

/// Ordered supervision target: deduplicated queries with their sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelList {
    pub queries: Vec<String>,
    pub sources: Vec<LabelSource>,
}

impl LabelList {
    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }
}

/// One induced interest: the behavior indices that evidence it and the
/// queries it recommends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterestPoint {
    pub trigger_indices: Vec<usize>,
    pub queries: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleContext {
    pub profile: UserProfile,
    pub events: Vec<BehaviorEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSampleDirect {
    pub context: SampleContext,
    pub target: LabelList,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSampleThink {
    pub context: SampleContext,
    pub rationale: String,
    pub interest_points: Vec<InterestPoint>,
    pub interest_count: usize,
}

impl TrainingSampleThink {
    /// Flat label list: interest-point queries in point order.
    pub fn flat_queries(&self) -> Vec<String> {
        self.interest_points
            .iter()
            .flat_map(|p| p.queries.iter().cloned())
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SampleBuilderConfig {
    /// Token-Jaccard threshold for the relevance filter.
    pub theta_rel: f64,
    /// Maximum labels per sample.
    pub k_max: usize,
    /// Generated-candidate queries taken per window category.
    pub llm_gen_per_category: usize,
}

impl Default for SampleBuilderConfig {
    fn default() -> Self {
        SampleBuilderConfig {
            theta_rel: 0.2,
            k_max: 10,
            llm_gen_per_category: 2,
        }
    }
}

/// Category → queries ranked by corpus frequency; the desk-scale stand-in
/// for an external candidate generator feeding the LlmGen block.
#[derive(Debug, Clone, Default)]
pub struct CoOccurrenceTable {
    ranked: BTreeMap<String, Vec<String>>,
}

impl CoOccurrenceTable {
    /// Count query occurrences (searches, global searches, exposure
    /// displays) per category across all histories; ties break
    /// lexicographically for determinism.
    pub fn build(histories: &[UserHistory], catalog: &QueryCatalog) -> Self {
        let mut counts: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
        let mut bump = |cat: &str, q: &str| {
            *counts
                .entry(cat.to_string())
                .or_default()
                .entry(q.to_string())
                .or_insert(0) += 1;
        };
        for h in histories {
            for e in &h.events {
                if e.action == crate::behavior_log::Action::Search {
                    bump(&e.category_id, &e.content);
                }
            }
            for x in &h.exposures {
                for q in &x.displayed {
                    if let Some(cat) = catalog.category_of(q) {
                        let cat = cat.to_string();
                        bump(&cat, q);
                    }
                }
            }
        }
        let ranked = counts
            .into_iter()
            .map(|(cat, qs)| {
                let mut v: Vec<(String, usize)> = qs.into_iter().collect();
                v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
                (cat, v.into_iter().map(|(q, _)| q).collect())
            })
            .collect();
        CoOccurrenceTable { ranked }
    }

    pub fn top_queries(&self, category_id: &str, n: usize) -> &[String] {
        let qs = self
            .ranked
            .get(category_id)
            .map(|v| v.as_slice())
            .unwrap_or(&[]);
        &qs[..qs.len().min(n)]
    }
}

pub struct SampleBuilder<'a> {
    pub catalog: &'a QueryCatalog,
    pub cooccur: &'a CoOccurrenceTable,
    pub config: SampleBuilderConfig,
}

fn dedup_truncate(entries: Vec<(String, LabelSource)>, k: usize) -> LabelList {
    let mut queries = Vec::new();
    let mut sources = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (q, s) in entries {
        let key = crate::behavior_log::normalize_text(&q);
        if seen.insert(key) {
            queries.push(q);
            sources.push(s);
            if queries.len() == k {
                break;
            }
        }
    }
    LabelList { queries, sources }
}

impl<'a> SampleBuilder<'a> {
    pub fn new(
        catalog: &'a QueryCatalog,
        cooccur: &'a CoOccurrenceTable,
        config: SampleBuilderConfig,
    ) -> Self {
        SampleBuilder {
            catalog,
            cooccur,
            config,
        }
    }

    /// Direct labels: clicked hint queries in display order, then rank
    /// candidates by production score descending; dedup; truncate to `k`.
    pub fn rerank_labels_direct(&self, session: &SessionDirect, k: usize) -> LabelList {
        assert!(
            session.exposure.any_clicked(),
            "direct session invariant: at least one click"
        );
        let mut entries: Vec<(String, LabelSource)> = Vec::new();
        for (q, clicked) in session.exposure.displayed.iter().zip(&session.exposure.clicked) {
            if *clicked {
                entries.push((q.clone(), LabelSource::HintQClick));
            }
        }
        let mut ranked = session.rank_candidates.clone();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
        entries.extend(ranked.into_iter().map(|(q, _)| (q, LabelSource::RankTopK)));
        dedup_truncate(entries, k)
    }

    /// Retain candidates with token-Jaccard ≥ θ against some history
    /// content, or whose category matches a history event category.
    pub fn relevance_filter(&self, candidates: &[String], history: &[BehaviorEvent]) -> Vec<String> {
        candidates
            .iter()
            .filter(|q| {
                let jaccard_hit = history
                    .iter()
                    .any(|e| jaccard_text(q, &e.content) >= self.config.theta_rel);
                let category_hit = self
                    .catalog
                    .category_of(q)
                    .map(|c| history.iter().any(|e| e.category_id == c))
                    .unwrap_or(false);
                jaccard_hit || category_hit
            })
            .cloned()
            .collect()
    }

    /// Think labels: HintQClick ‖ GlobalSearch ‖ RankTopK ‖ LlmGen, each
    /// block relevance-filtered before concatenation; dedup; truncate to
    /// `k`. Returns `None` when every block filtered to empty.
    pub fn rerank_labels_think(&self, session: &SessionThink, k: usize) -> Option<LabelList> {
        let clicked: Vec<String> = session
            .exposures
            .iter()
            .flat_map(|x| {
                x.displayed
                    .iter()
                    .zip(&x.clicked)
                    .filter(|(_, c)| **c)
                    .map(|(q, _)| q.clone())
            })
            .collect();
        let global: Vec<String> = session.global_searches.clone();
        let mut rank_pool: Vec<(String, f64)> = session
            .exposures
            .iter()
            .flat_map(|x| {
                x.displayed.iter().enumerate().map(|(slot, q)| {
                    (q.clone(), crate::behavior_log::production_rank_score(slot))
                })
            })
            .collect();
        rank_pool.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
        let ranked: Vec<String> = rank_pool.into_iter().map(|(q, _)| q).collect();

        // Generated candidates: top co-occurring queries of the categories
        // seen in the window, in first-appearance order.
        let mut cats_seen: Vec<&str> = Vec::new();
        for e in &session.events {
            if !cats_seen.contains(&e.category_id.as_str()) {
                cats_seen.push(&e.category_id);
            }
        }
        let llm_gen: Vec<String> = cats_seen
            .iter()
            .flat_map(|c| {
                self.cooccur
                    .top_queries(c, self.config.llm_gen_per_category)
                    .iter()
                    .cloned()
            })
            .collect();

        let mut entries: Vec<(String, LabelSource)> = Vec::new();
        for (block, source) in [
            (clicked, LabelSource::HintQClick),
            (global, LabelSource::GlobalSearch),
            (ranked, LabelSource::RankTopK),
            (llm_gen, LabelSource::LlmGen),
        ] {
            for q in self.relevance_filter(&block, &session.events) {
                entries.push((q, source));
            }
        }
        let labels = dedup_truncate(entries, k);
        (!labels.is_empty()).then_some(labels)
    }

    /// Cluster labels by leaf category into interest points. Triggers are
    /// the history events sharing the cluster category, or the single
    /// highest-Jaccard event when none match. Clusters keep the order of
    /// their earliest label.
    pub fn build_interest_points(
        &self,
        session: &SessionThink,
        labels: &LabelList,
    ) -> Vec<InterestPoint> {
        assert!(!labels.is_empty(), "labels must be non-empty");
        // Cluster key: category id, or a unique per-label key for queries
        // outside the catalog.
        let mut order: Vec<String> = Vec::new();
        let mut clusters: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (i, q) in labels.queries.iter().enumerate() {
            let key = match self.catalog.category_of(q) {
                Some(c) => c.to_string(),
                None => format!("~uncat{i}"),
            };
            if !clusters.contains_key(&key) {
                order.push(key.clone());
            }
            clusters.entry(key).or_default().push(q.clone());
        }

        order
            .into_iter()
            .map(|key| {
                let queries = clusters.remove(&key).unwrap();
                let mut trigger_indices: Vec<usize> = session
                    .events
                    .iter()
                    .filter(|e| e.category_id == key)
                    .map(|e| e.index)
                    .collect();
                trigger_indices.sort_unstable();
                if trigger_indices.is_empty() {
                    // Fall back to the most lexically similar event.
                    let probe = &queries[0];
                    let best = session
                        .events
                        .iter()
                        .map(|e| (jaccard_text(probe, &e.content), e.index))
                        .fold((f64::NEG_INFINITY, 0), |acc, (j, idx)| {
                            if j > acc.0 {
                                (j, idx)
                            } else {
                                acc
                            }
                        });
                    trigger_indices.push(best.1);
                }
                InterestPoint {
                    trigger_indices,
                    queries,
                }
            })
            .collect()
    }

    /// Deterministic rationale: one template segment per interest point,
    /// `behaviors <i> .. indicate interest in <category> therefore recommend
    /// q ;; q`, segments joined by single spaces.
    pub fn render_rationale(&self, points: &[InterestPoint]) -> String {
        points
            .iter()
            .map(|p| {
                let idx = p
                    .trigger_indices
                    .iter()
                    .map(|i| format!("<{i}>"))
                    .collect::<Vec<_>>()
                    .join(" ");
                let category = self
                    .catalog
                    .category_of(&p.queries[0])
                    .and_then(|c| self.catalog.category_name(c))
                    .unwrap_or(&p.queries[0]);
                format!(
                    "behaviors {idx} indicate interest in {category} therefore recommend {}",
                    p.queries.join(" ;; ")
                )
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn build_direct_sample(&self, session: &SessionDirect) -> TrainingSampleDirect {
        TrainingSampleDirect {
            context: SampleContext {
                profile: session.user.clone(),
                events: session.history.clone(),
            },
            target: self.rerank_labels_direct(session, self.config.k_max),
        }
    }

    pub fn build_think_sample(&self, session: &SessionThink) -> Option<TrainingSampleThink> {
        let labels = self.rerank_labels_think(session, self.config.k_max)?;
        let interest_points = self.build_interest_points(session, &labels);
        let rationale = self.render_rationale(&interest_points);
        Some(TrainingSampleThink {
            context: SampleContext {
                profile: session.user.clone(),
                events: session.events.clone(),
            },
            interest_count: interest_points.len(),
            interest_points,
            rationale,
        })
    }
}

// ---------------------------------------------------------------------------
// Dataset files
// ---------------------------------------------------------------------------

const DIRECT_HEADER: &str = "# querygen direct dataset v1";
const THINK_HEADER: &str = "# querygen think dataset v1";

/// Serialize direct samples, ordered by (user_id, exposure timestamp).
pub fn build_direct_dataset(
    builder: &SampleBuilder,
    sessions: &[SessionDirect],
    path: &Path,
) -> Result<usize> {
    let mut keyed: Vec<(String, i64, TrainingSampleDirect)> = sessions
        .iter()
        .map(|s| {
            (
                s.user.user_id.clone(),
                s.exposure.timestamp,
                builder.build_direct_sample(s),
            )
        })
        .collect();
    keyed.sort_by(|a, b| (&a.0, a.1).cmp(&(&b.0, b.1)));
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(f, "{DIRECT_HEADER}").map_err(|e| Error::io(path, e))?;
    for (_, _, sample) in &keyed {
        let line = serde_json::to_string(sample)
            .map_err(|e| Error::Config(format!("serialize: {e}")))?;
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(keyed.len())
}

/// Serialize think samples; sessions whose label blocks all filtered empty
/// are dropped and counted. Ordered by (user_id, window_start).
pub fn build_think_dataset(
    builder: &SampleBuilder,
    sessions: &[SessionThink],
    path: &Path,
) -> Result<(usize, usize)> {
    let mut keyed: Vec<(String, i64, TrainingSampleThink)> = Vec::new();
    let mut dropped = 0usize;
    for s in sessions {
        match builder.build_think_sample(s) {
            Some(sample) => keyed.push((s.user.user_id.clone(), s.window_start, sample)),
            None => dropped += 1,
        }
    }
    keyed.sort_by(|a, b| (&a.0, a.1).cmp(&(&b.0, b.1)));
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(f, "{THINK_HEADER}").map_err(|e| Error::io(path, e))?;
    for (_, _, sample) in &keyed {
        let line = serde_json::to_string(sample)
            .map_err(|e| Error::Config(format!("serialize: {e}")))?;
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok((keyed.len(), dropped))
}

fn read_dataset_lines(path: &Path, header: &str) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(first) if first == header => {}
        other => {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                msg: format!("expected header {header:?}, found {other:?}"),
            })
        }
    }
    Ok(lines.map(str::to_string).collect())
}

pub fn read_direct_dataset(path: &Path) -> Result<Vec<TrainingSampleDirect>> {
    read_dataset_lines(path, DIRECT_HEADER)?
        .iter()
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                msg: e.to_string(),
            })
        })
        .collect()
}

pub fn read_think_dataset(path: &Path) -> Result<Vec<TrainingSampleThink>> {
    read_dataset_lines(path, THINK_HEADER)?
        .iter()
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                msg: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behavior_log::{Action, ExposureEvent, Taxonomy};

    fn catalog() -> QueryCatalog {
        QueryCatalog::from_taxonomy(&Taxonomy::new())
    }

    fn profile() -> UserProfile {
        UserProfile {
            user_id: "u0".into(),
            gender: "female".into(),
            age: 30,
            occupation: "teacher".into(),
            city: "hangzhou".into(),
        }
    }

    fn event(index: usize, action: Action, content: &str, cat: &str) -> BehaviorEvent {
        BehaviorEvent {
            index,
            time_offset: 0,
            action,
            content: content.into(),
            category_id: cat.into(),
            timestamp: 86_400 + index as i64 * 60,
        }
    }

    fn builder_fixture<'a>(
        catalog: &'a QueryCatalog,
        cooccur: &'a CoOccurrenceTable,
    ) -> SampleBuilder<'a> {
        SampleBuilder::new(catalog, cooccur, SampleBuilderConfig::default())
    }

    fn direct_session(
        displayed: [&str; 3],
        clicked: [bool; 3],
        rank: Vec<(&str, f64)>,
    ) -> SessionDirect {
        SessionDirect {
            user: profile(),
            history: vec![event(1, Action::Search, "wool coat", "c00")],
            exposure: ExposureEvent {
                timestamp: 90_000,
                displayed: displayed.iter().map(|s| s.to_string()).collect(),
                clicked: clicked.to_vec(),
            },
            rank_candidates: rank.into_iter().map(|(q, s)| (q.to_string(), s)).collect(),
        }
    }

    #[test]
    fn direct_rerank_click_then_rank_dedup() {
        let cat = catalog();
        let co = CoOccurrenceTable::default();
        let b = builder_fixture(&cat, &co);
        let s = direct_session(
            ["red dress", "x", "y"],
            [true, false, false],
            vec![("red dress", 0.9), ("heels", 0.7)],
        );
        let labels = b.rerank_labels_direct(&s, 10);
        assert_eq!(labels.queries, vec!["red dress", "heels"]);
        assert_eq!(
            labels.sources,
            vec![LabelSource::HintQClick, LabelSource::RankTopK]
        );
    }

    #[test]
    fn direct_rerank_truncates_after_dedup() {
        // 2 clicks + 5 rank candidates, k = 4 → first 4 after dedup:
        // [a, b] ++ [a(dup), c, d, e, f] → [a, b, c, d].
        let cat = catalog();
        let co = CoOccurrenceTable::default();
        let b = builder_fixture(&cat, &co);
        let s = direct_session(
            ["a", "b", "z"],
            [true, true, false],
            vec![
                ("a", 0.9),
                ("c", 0.8),
                ("d", 0.7),
                ("e", 0.6),
                ("f", 0.5),
            ],
        );
        let labels = b.rerank_labels_direct(&s, 4);
        assert_eq!(labels.queries, vec!["a", "b", "c", "d"]);
    }

    #[test]
    #[should_panic(expected = "at least one click")]
    fn direct_rerank_rejects_clickless_session() {
        let cat = catalog();
        let co = CoOccurrenceTable::default();
        let b = builder_fixture(&cat, &co);
        let s = direct_session(["a", "b", "c"], [false, false, false], vec![]);
        let _ = b.rerank_labels_direct(&s, 10);
    }

    #[test]
    fn relevance_filter_rules() {
        let cat = catalog();
        let co = CoOccurrenceTable::default();
        let b = builder_fixture(&cat, &co);
        let history = vec![
            event(1, Action::Search, "wool coat", "c00"),
            event(2, Action::Click, "best green tea home", "c34"),
        ];
        // Identical to a history query → Jaccard 1 → retained.
        let kept = b.relevance_filter(&["wool coat".to_string()], &history);
        assert_eq!(kept.len(), 1);
        // Zero token overlap, category absent from history → dropped.
        let kept = b.relevance_filter(&["laptop stand".to_string()], &history);
        assert!(kept.is_empty());

        // Mixed batch, hand-computed Jaccard against the two contents:
        //  "wool coat"        J=1.0 vs e1            → keep
        //  "winter wool coat" J=2/3 vs e1            → keep
        //  "green tea"        J=2/4 vs e2            → keep (also category)
        //  "cheap green tea"  cat c34 in history     → keep (J=2/5 ≥ 0.2 too)
        //  "laptop stand"     J=0, no category match → drop
        let batch: Vec<String> = [
            "wool coat",
            "winter wool coat",
            "green tea",
            "cheap green tea",
            "laptop stand",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let kept = b.relevance_filter(&batch, &history);
        assert_eq!(
            kept,
            vec!["wool coat", "winter wool coat", "green tea", "cheap green tea"]
        );
    }

    #[test]
    fn relevance_filter_is_projection() {
        let cat = catalog();
        let co = CoOccurrenceTable::default();
        let b = builder_fixture(&cat, &co);
        let history = vec![event(1, Action::Search, "wool coat", "c00")];
        let batch: Vec<String> = ["wool coat", "phone case", "coat", "green tea"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let once = b.relevance_filter(&batch, &history);
        let twice = b.relevance_filter(&once, &history);
        assert_eq!(once, twice);
    }

    fn think_session(
        events: Vec<BehaviorEvent>,
        exposures: Vec<ExposureEvent>,
        global: Vec<&str>,
    ) -> SessionThink {
        SessionThink {
            user: profile(),
            window_start: 86_400,
            window_end: 200_000,
            events,
            exposures,
            global_searches: global.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn think_rerank_single_block() {
        let cat = catalog();
        let co = CoOccurrenceTable::default();
        let b = builder_fixture(&cat, &co);
        let s = think_session(
            vec![event(1, Action::Search, "wool coat", "c00")],
            vec![],
            vec!["wool coat"],
        );
        let labels = b.rerank_labels_think(&s, 10).unwrap();
        assert_eq!(labels.queries, vec!["wool coat"]);
        assert_eq!(labels.sources, vec![LabelSource::GlobalSearch]);
    }

    #[test]
    fn think_rerank_priority_and_dedup() {
        // Click block [sachet-query] + global [same, flower cake] →
        // click first, duplicate dropped, then the new global query.
        let cat = catalog();
        let co = CoOccurrenceTable::default();
        let b = builder_fixture(&cat, &co);
        let s = think_session(
            vec![
                event(1, Action::Click, "woven sachet", "c06"),
                event(2, Action::Search, "flower cake", "c05"),
            ],
            vec![ExposureEvent {
                timestamp: 87_000,
                displayed: vec![
                    "woven sachet".into(),
                    "laptop stand".into(),
                    "mountain bike".into(),
                ],
                clicked: vec![true, false, false],
            }],
            vec!["woven sachet", "flower cake"],
        );
        let labels = b.rerank_labels_think(&s, 10).unwrap();
        assert_eq!(labels.queries[0], "woven sachet");
        assert_eq!(labels.sources[0], LabelSource::HintQClick);
        assert_eq!(labels.queries[1], "flower cake");
        assert_eq!(labels.sources[1], LabelSource::GlobalSearch);
        // Priority ordering holds across the whole list.
        for w in labels.sources.windows(2) {
            assert!(w[0].priority() <= w[1].priority());
        }
    }

    #[test]
    fn think_rerank_empty_when_all_blocks_filtered() {
        let cat = catalog();
        let co = CoOccurrenceTable::default();
        let b = builder_fixture(&cat, &co);
        // Global search shares no tokens or category with the history.
        let s = think_session(
            vec![event(1, Action::Search, "wool coat", "c00")],
            vec![],
            vec!["laptop stand"],
        );
        assert!(b.rerank_labels_think(&s, 10).is_none());
    }

    #[test]
    fn think_rerank_four_blocks_bounded() {
        let cat = catalog();
        let co = {
            let h = UserHistory {
                profile: profile(),
                events: vec![
                    event(1, Action::Search, "wool coat", "c00"),
                    event(2, Action::Search, "mini wool coat", "c00"),
                    event(3, Action::Search, "green tea", "c34"),
                ],
                exposures: vec![],
                global_search_times: vec![],
            };
            CoOccurrenceTable::build(&[h], &cat)
        };
        let b = builder_fixture(&cat, &co);
        let s = think_session(
            vec![
                event(1, Action::Search, "wool coat", "c00"),
                event(2, Action::Search, "green tea", "c34"),
            ],
            vec![ExposureEvent {
                timestamp: 87_000,
                displayed: vec![
                    "best wool coat".into(),
                    "best green tea".into(),
                    "laptop stand".into(),
                ],
                clicked: vec![true, false, false],
            }],
            vec!["gift wool coat"],
        );
        let labels = b.rerank_labels_think(&s, 10).unwrap();
        assert!(labels.len() <= 10);
        for w in labels.sources.windows(2) {
            assert!(w[0].priority() <= w[1].priority());
        }
        // All four sources appear.
        for src in [
            LabelSource::HintQClick,
            LabelSource::GlobalSearch,
            LabelSource::RankTopK,
            LabelSource::LlmGen,
        ] {
            assert!(labels.sources.contains(&src), "missing {src:?}");
        }
    }

    #[test]
    fn interest_points_single_cluster() {
        let cat = catalog();
        let co = CoOccurrenceTable::default();
        let b = builder_fixture(&cat, &co);
        let s = think_session(
            vec![event(1, Action::Search, "wool coat", "c00")],
            vec![],
            vec![],
        );
        let labels = LabelList {
            queries: vec!["wool coat".into(), "mini wool coat".into()],
            sources: vec![LabelSource::GlobalSearch, LabelSource::GlobalSearch],
        };
        let points = b.build_interest_points(&s, &labels);
        assert_eq!(points.len(), 1);
        assert_eq!(points[0].trigger_indices, vec![1]);
        assert_eq!(points[0].queries.len(), 2);
    }

    #[test]
    fn interest_points_ordered_by_first_label_position() {
        let cat = catalog();
        let co = CoOccurrenceTable::default();
        let b = builder_fixture(&cat, &co);
        let s = think_session(
            vec![
                event(1, Action::Search, "green tea", "c34"),
                event(2, Action::Search, "wool coat", "c00"),
                event(3, Action::Click, "red dress", "c04"),
                event(4, Action::Search, "mini wool coat", "c00"),
            ],
            vec![],
            vec![],
        );
        // 6 labels over 3 categories; first label positions order the
        // clusters c04 < c00 < c34.
        let labels = LabelList {
            queries: vec![
                "red dress".into(),
                "wool coat".into(),
                "cheap red dress".into(),
                "green tea".into(),
                "mini wool coat".into(),
                "best green tea".into(),
            ],
            sources: vec![LabelSource::GlobalSearch; 6],
        };
        let points = b.build_interest_points(&s, &labels);
        assert_eq!(points.len(), 3);
        assert_eq!(points[0].queries[0], "red dress");
        assert_eq!(points[0].trigger_indices, vec![3]);
        assert_eq!(points[1].queries[0], "wool coat");
        assert_eq!(points[1].trigger_indices, vec![2, 4]);
        assert_eq!(points[2].queries[0], "green tea");
        assert_eq!(points[2].trigger_indices, vec![1]);
    }

    #[test]
    fn interest_points_fall_back_to_best_jaccard_event() {
        let cat = catalog();
        let co = CoOccurrenceTable::default();
        let b = builder_fixture(&cat, &co);
        // 4 events; the label "gold coat gift" is in no catalog category;
        // highest token overlap is event 2 ("cheap wool coat" shares "coat").
        let s = think_session(
            vec![
                event(1, Action::Search, "green tea", "c34"),
                event(2, Action::Search, "cheap wool coat", "c00"),
                event(3, Action::Search, "phone case", "c02"),
                event(4, Action::Search, "yoga mat", "c07"),
            ],
            vec![],
            vec![],
        );
        let labels = LabelList {
            queries: vec!["gold coat gift".into()],
            sources: vec![LabelSource::GlobalSearch],
        };
        let points = b.build_interest_points(&s, &labels);
        assert_eq!(points.len(), 1);
        assert_eq!(points[0].trigger_indices, vec![2]);
    }

    #[test]
    fn trigger_indices_resolve_to_context_events() {
        let cat = catalog();
        let co = CoOccurrenceTable::default();
        let b = builder_fixture(&cat, &co);
        let s = think_session(
            vec![
                event(1, Action::Search, "wool coat", "c00"),
                event(2, Action::Search, "green tea", "c34"),
            ],
            vec![],
            vec!["wool coat", "green tea"],
        );
        let labels = b.rerank_labels_think(&s, 10).unwrap();
        let points = b.build_interest_points(&s, &labels);
        let valid: std::collections::BTreeSet<usize> =
            s.events.iter().map(|e| e.index).collect();
        for p in &points {
            for i in &p.trigger_indices {
                assert!(valid.contains(i));
            }
        }
    }

    #[test]
    fn rationale_segment_counts() {
        let cat = catalog();
        let co = CoOccurrenceTable::default();
        let b = builder_fixture(&cat, &co);
        assert_eq!(b.render_rationale(&[]), "");

        let one = vec![InterestPoint {
            trigger_indices: vec![1, 3],
            queries: vec!["wool coat".into(), "cheap wool coat".into()],
        }];
        let r1 = b.render_rationale(&one);
        assert_eq!(r1.matches("behaviors").count(), 1);
        assert_eq!(
            r1,
            "behaviors <1> <3> indicate interest in wool coat therefore recommend wool coat ;; cheap wool coat"
        );

        let three = vec![
            InterestPoint {
                trigger_indices: vec![1],
                queries: vec!["wool coat".into()],
            },
            InterestPoint {
                trigger_indices: vec![2],
                queries: vec!["green tea".into()],
            },
            InterestPoint {
                trigger_indices: vec![3],
                queries: vec!["red dress".into()],
            },
        ];
        assert_eq!(b.render_rationale(&three).matches("behaviors").count(), 3);
    }

    #[test]
    fn datasets_roundtrip_and_count_drops() {
        let cat = catalog();
        let co = CoOccurrenceTable::default();
        let b = builder_fixture(&cat, &co);
        let dir = tempfile::tempdir().unwrap();

        // Empty input → header-only file.
        let p0 = dir.path().join("empty.jsonl");
        let n = build_direct_dataset(&b, &[], &p0).unwrap();
        assert_eq!(n, 0);
        assert_eq!(
            std::fs::read_to_string(&p0).unwrap(),
            "# querygen direct dataset v1\n"
        );
        assert!(read_direct_dataset(&p0).unwrap().is_empty());

        // One direct session → one record.
        let s = direct_session(
            ["wool coat", "x", "y"],
            [true, false, false],
            vec![("wool coat", 0.9), ("green tea", 0.7)],
        );
        let p1 = dir.path().join("direct.jsonl");
        let n = build_direct_dataset(&b, &[s.clone()], &p1).unwrap();
        assert_eq!(n, 1);
        let back = read_direct_dataset(&p1).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].target.queries[0], "wool coat");

        // Think: 2 sessions, 1 droppable → 1 record, 1 dropped.
        let good = think_session(
            vec![event(1, Action::Search, "wool coat", "c00")],
            vec![],
            vec!["wool coat"],
        );
        let bad = think_session(
            vec![event(1, Action::Search, "wool coat", "c00")],
            vec![],
            vec!["laptop stand"],
        );
        let p2 = dir.path().join("think.jsonl");
        let (n, dropped) = build_think_dataset(&b, &[good, bad], &p2).unwrap();
        assert_eq!((n, dropped), (1, 1));
        let back = read_think_dataset(&p2).unwrap();
        assert_eq!(back[0].interest_count, back[0].interest_points.len());
        assert_eq!(
            back[0].rationale.matches("behaviors").count(),
            back[0].interest_count
        );
    }

    #[test]
    fn dataset_builds_deterministic() {
        let cat = catalog();
        let co = CoOccurrenceTable::default();
        let b = builder_fixture(&cat, &co);
        let dir = tempfile::tempdir().unwrap();
        let sessions = vec![
            direct_session(
                ["wool coat", "x", "y"],
                [true, false, false],
                vec![("green tea", 0.7)],
            ),
            direct_session(
                ["red dress", "x", "y"],
                [true, false, false],
                vec![("phone case", 0.8)],
            ),
        ];
        let pa = dir.path().join("a.jsonl");
        let pb = dir.path().join("b.jsonl");
        build_direct_dataset(&b, &sessions, &pa).unwrap();
        build_direct_dataset(&b, &sessions, &pb).unwrap();
        assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
    }
}
