//! Prompt encoding and output segmentation.
//!
//! Behavior events are compressed into a special-token schema instead of a
//! verbose natural-language rendering:
//!
//! ```text
//! "1 | 1 day ago | search | wool coat"  =>  <1><1_day_ago><search> wool coat
//! ```
//!
//! Each special token records its constituent subword ids so its embedding
//! can be initialized as the mean of the constituent embeddings.
//!
//! Model outputs follow a fixed surface grammar, segmented into
//! trigger/query/format spans for advantage routing:
//!
//! - direct mode: `q1 ;; q2 ;; ... <eos>`
//! - think mode: free-text rationale, then one block per interest point,
//!   `[ <i> <j> ] -> q1 ;; q2`, blocks starting at each `[`, then `<eos>`.
//!
//! The vocabulary file is line-based: `id \t surface \t kind \t
//! constituent_ids` (comma-separated, possibly empty).

use std::collections::BTreeMap;
use std::path::Path;

use crate::behavior_log::{BehaviorEvent, UserProfile};
use crate::{Error, Result};

pub type TokenId = u32;

/// Highest behavior index with a dedicated `<i>` token; also the default
/// history cap.
pub const MAX_INDEX_TOKEN: usize = 50;
/// Day offsets 1..=MAX_DAY_TOKEN get dedicated tokens; older events fall
/// into the `<long_ago>` bucket.
pub const MAX_DAY_TOKEN: u32 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Base,
    Special,
}

#[derive(Debug, Clone)]
pub struct TokenInfo {
    pub surface: String,
    pub kind: TokenKind,
    pub constituents: Vec<TokenId>,
}

/// Immutable token vocabulary: base word tokens plus schema special tokens
/// with ids above the base range.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<TokenInfo>,
    by_surface: BTreeMap<String, TokenId>,
    base_len: usize,
    eos: TokenId,
    unk: TokenId,
    delim: TokenId,
    arrow: TokenId,
    bracket_open: TokenId,
    bracket_close: TokenId,
    index_base: TokenId,
}

fn number_words() -> Vec<String> {
    (0..=120).map(|n| n.to_string()).collect()
}

fn base_word_pool() -> Vec<String> {
    use crate::behavior_log::{CITIES, GENDERS, MODIFIERS, OCCUPATIONS};
    let mut words: Vec<String> = Vec::new();
    let mut push = |w: &str| {
        for part in w.split_whitespace() {
            words.push(part.to_lowercase());
        }
    };
    for c in crate::behavior_log::Taxonomy::new().categories {
        push(&c.name);
        for q in &c.queries {
            push(q);
        }
        for it in &c.items {
            push(it);
        }
    }
    for m in MODIFIERS {
        push(m);
    }
    for g in GENDERS {
        push(g);
    }
    for o in OCCUPATIONS {
        push(o);
    }
    for city in CITIES {
        push(city);
    }
    // Instruction, profile line, rationale template and special-token
    // constituent words.
    for w in [
        "please",
        "recommend",
        "the",
        "next",
        "queries",
        "profile",
        "gender",
        "age",
        "occupation",
        "city",
        "behaviors",
        "indicate",
        "interest",
        "in",
        "therefore",
        "today",
        "day",
        "days",
        "ago",
        "long",
        "search",
        "click",
    ] {
        push(w);
    }
    words.extend(number_words());
    words.sort();
    words.dedup();
    words
}

impl Vocabulary {
    /// Build the deterministic vocabulary over the synthetic word pools.
    pub fn build() -> Self {
        let mut tokens: Vec<TokenInfo> = base_word_pool()
            .into_iter()
            .map(|surface| TokenInfo {
                surface,
                kind: TokenKind::Base,
                constituents: Vec::new(),
            })
            .collect();
        let base_len = tokens.len();
        let mut by_surface: BTreeMap<String, TokenId> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.surface.clone(), i as TokenId))
            .collect();

        let word_id = |by: &BTreeMap<String, TokenId>, w: &str| -> Vec<TokenId> {
            w.split('_')
                .filter_map(|p| by.get(&p.to_lowercase()).copied())
                .collect()
        };

        let push_special = |tokens: &mut Vec<TokenInfo>,
                                by: &mut BTreeMap<String, TokenId>,
                                surface: String,
                                constituent_words: &str| {
            let id = tokens.len() as TokenId;
            let constituents = word_id(by, constituent_words);
            by.insert(surface.clone(), id);
            tokens.push(TokenInfo {
                surface,
                kind: TokenKind::Special,
                constituents,
            });
            id
        };

        let index_base = tokens.len() as TokenId;
        for i in 1..=MAX_INDEX_TOKEN {
            push_special(&mut tokens, &mut by_surface, format!("<{i}>"), &i.to_string());
        }
        push_special(&mut tokens, &mut by_surface, "<Today>".into(), "today");
        push_special(&mut tokens, &mut by_surface, "<1_day_ago>".into(), "1_day_ago");
        for d in 2..=MAX_DAY_TOKEN {
            push_special(
                &mut tokens,
                &mut by_surface,
                format!("<{d}_days_ago>"),
                &format!("{d}_days_ago"),
            );
        }
        push_special(&mut tokens, &mut by_surface, "<long_ago>".into(), "long_ago");
        push_special(&mut tokens, &mut by_surface, "<search>".into(), "search");
        push_special(&mut tokens, &mut by_surface, "<click>".into(), "click");
        let delim = push_special(&mut tokens, &mut by_surface, ";;".into(), "");
        let arrow = push_special(&mut tokens, &mut by_surface, "->".into(), "");
        let bracket_open = push_special(&mut tokens, &mut by_surface, "[".into(), "");
        let bracket_close = push_special(&mut tokens, &mut by_surface, "]".into(), "");
        let eos = push_special(&mut tokens, &mut by_surface, "<eos>".into(), "");
        let unk = push_special(&mut tokens, &mut by_surface, "<unk>".into(), "");

        Vocabulary {
            tokens,
            by_surface,
            base_len,
            eos,
            unk,
            delim,
            arrow,
            bracket_open,
            bracket_close,
            index_base,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn base_len(&self) -> usize {
        self.base_len
    }

    pub fn eos_id(&self) -> TokenId {
        self.eos
    }

    pub fn unk_id(&self) -> TokenId {
        self.unk
    }

    pub fn delim_id(&self) -> TokenId {
        self.delim
    }

    pub fn info(&self, id: TokenId) -> &TokenInfo {
        &self.tokens[id as usize]
    }

    pub fn surface(&self, id: TokenId) -> &str {
        &self.tokens[id as usize].surface
    }

    pub fn is_base(&self, id: TokenId) -> bool {
        self.tokens[id as usize].kind == TokenKind::Base
    }

    pub fn lookup(&self, surface: &str) -> Option<TokenId> {
        self.by_surface.get(surface).copied()
    }

    /// `<i>` behavior-index token, clamped to the registered range.
    pub fn index_token(&self, index: usize) -> TokenId {
        debug_assert!(index >= 1);
        let i = index.clamp(1, MAX_INDEX_TOKEN);
        self.index_base + (i - 1) as TokenId
    }

    /// Behavior index for an `<i>` token, if `id` is one.
    pub fn index_of_token(&self, id: TokenId) -> Option<usize> {
        let lo = self.index_base;
        let hi = self.index_base + MAX_INDEX_TOKEN as TokenId;
        (lo..hi).contains(&id).then(|| (id - lo) as usize + 1)
    }

    /// Time-offset bucket token: `<Today>`, `<k_day(s)_ago>` or `<long_ago>`.
    pub fn time_token(&self, days_ago: u32) -> TokenId {
        let surface = match days_ago {
            0 => "<Today>".to_string(),
            1 => "<1_day_ago>".to_string(),
            d if d <= MAX_DAY_TOKEN => format!("<{d}_days_ago>"),
            _ => "<long_ago>".to_string(),
        };
        self.by_surface[&surface]
    }

    pub fn action_token(&self, action: crate::behavior_log::Action) -> TokenId {
        match action {
            crate::behavior_log::Action::Search => self.by_surface["<search>"],
            crate::behavior_log::Action::Click => self.by_surface["<click>"],
        }
    }

    /// Tokenize plain text: each whitespace-separated piece resolves to its
    /// exact surface (specials) or lowercased word, else `<unk>`.
    pub fn encode_text(&self, text: &str) -> (Vec<TokenId>, usize) {
        let mut ids = Vec::new();
        let mut unknown = 0usize;
        for piece in text.split_whitespace() {
            let id = self
                .lookup(piece)
                .or_else(|| self.lookup(&piece.to_lowercase()))
                .unwrap_or_else(|| {
                    unknown += 1;
                    self.unk
                });
            ids.push(id);
        }
        (ids, unknown)
    }

    /// Canonical text form: token surfaces joined by single spaces.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&id| self.surface(id))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (id, t) in self.tokens.iter().enumerate() {
            let kind = match t.kind {
                TokenKind::Base => "base",
                TokenKind::Special => "special",
            };
            let constituents = t
                .constituents
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(",");
            out.push_str(&format!("{id}\t{}\t{kind}\t{constituents}\n", t.surface));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut tokens = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() != 4 {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: "expected 4 tab-separated fields".into(),
                });
            }
            let kind = match parts[2] {
                "base" => TokenKind::Base,
                "special" => TokenKind::Special,
                other => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: i + 1,
                        msg: format!("unknown token kind {other:?}"),
                    })
                }
            };
            let constituents = parts[3]
                .split(',')
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse().map_err(|_| Error::Parse {
                        path: path.to_path_buf(),
                        line: i + 1,
                        msg: "bad constituent id".into(),
                    })
                })
                .collect::<Result<Vec<TokenId>>>()?;
            tokens.push(TokenInfo {
                surface: parts[1].to_string(),
                kind,
                constituents,
            });
        }
        let by_surface: BTreeMap<String, TokenId> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.surface.clone(), i as TokenId))
            .collect();
        let base_len = tokens
            .iter()
            .filter(|t| t.kind == TokenKind::Base)
            .count();
        let need = |s: &str| -> Result<TokenId> {
            by_surface
                .get(s)
                .copied()
                .ok_or_else(|| Error::Checkpoint(format!("vocabulary missing token {s:?}")))
        };
        Ok(Vocabulary {
            base_len,
            eos: need("<eos>")?,
            unk: need("<unk>")?,
            delim: need(";;")?,
            arrow: need("->")?,
            bracket_open: need("[")?,
            bracket_close: need("]")?,
            index_base: need("<1>")?,
            tokens,
            by_surface,
        })
    }
}

/// Mean of the constituent subword embedding vectors; no constituents yields
/// the zero vector.
pub fn init_special_embedding(constituent_vecs: &[&[f64]], dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    if constituent_vecs.is_empty() {
        return v;
    }
    for c in constituent_vecs {
        for (acc, x) in v.iter_mut().zip(c.iter()) {
            *acc += x;
        }
    }
    let n = constituent_vecs.len() as f64;
    for x in &mut v {
        *x /= n;
    }
    v
}

// ---------------------------------------------------------------------------
// Prompt rendering and encoding
// ---------------------------------------------------------------------------

/// `<index><time><action>` specials followed by the tokenized content.
pub fn compress_event(vocab: &Vocabulary, event: &BehaviorEvent) -> Vec<TokenId> {
    let mut ids = vec![
        vocab.index_token(event.index),
        vocab.time_token(event.time_offset),
        vocab.action_token(event.action),
    ];
    let (content, _) = vocab.encode_text(&event.content);
    ids.extend(content);
    ids
}

/// Canonical prompt text: one instruction sentence, the profile line, then
/// compressed behavior events joined by `;;`.
pub fn render_prompt_text(
    vocab: &Vocabulary,
    profile: &UserProfile,
    history: &[BehaviorEvent],
    instructed_k: usize,
) -> String {
    let mut parts: Vec<String> = Vec::new();
    parts.push(format!("please recommend the next {instructed_k} queries"));
    parts.push(format!(
        "profile gender {} age {} occupation {} city {}",
        profile.gender.to_lowercase(),
        profile.age,
        profile.occupation.to_lowercase(),
        profile.city.to_lowercase()
    ));
    let events: Vec<String> = history
        .iter()
        .map(|e| vocab.decode(&compress_event(vocab, e)))
        .collect();
    if !events.is_empty() {
        parts.push(events.join(" ;; "));
    }
    parts.join(" ")
}

/// Encoded prompt: token ids plus the boundary where generation begins.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedPrompt {
    pub token_ids: Vec<TokenId>,
    pub boundary: usize,
    pub unknown_count: usize,
}

pub fn encode_prompt(
    vocab: &Vocabulary,
    profile: &UserProfile,
    history: &[BehaviorEvent],
    instructed_k: usize,
) -> EncodedPrompt {
    let text = render_prompt_text(vocab, profile, history, instructed_k);
    let (token_ids, unknown_count) = vocab.encode_text(&text);
    EncodedPrompt {
        boundary: token_ids.len(),
        token_ids,
        unknown_count,
    }
}

/// Canonical direct-mode target: queries joined by `;;`, ending in `<eos>`.
pub fn render_direct_target(queries: &[String]) -> String {
    let mut s = queries.join(" ;; ");
    if !s.is_empty() {
        s.push(' ');
    }
    s.push_str("<eos>");
    s
}

/// Canonical think-mode target: rationale, then `[ <i> .. ] -> q ;; q` per
/// interest point, ending in `<eos>`.
pub fn render_think_target(rationale: &str, points: &[(Vec<usize>, Vec<String>)]) -> String {
    let mut parts = Vec::new();
    if !rationale.is_empty() {
        parts.push(rationale.to_string());
    }
    for (triggers, queries) in points {
        let idx = triggers
            .iter()
            .map(|i| format!("<{i}>"))
            .collect::<Vec<_>>()
            .join(" ");
        parts.push(format!("[ {idx} ] -> {}", queries.join(" ;; ")));
    }
    parts.push("<eos>".to_string());
    parts.join(" ")
}

// ---------------------------------------------------------------------------
// Output segmentation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputMode {
    Direct,
    Think,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpanKind {
    /// Trigger index tokens of interest point `k` (1-based).
    Trigger { interest: usize },
    /// Query tokens for global slot `j` (1-based across the whole output).
    Query { slot: usize },
    /// Delimiters, brackets, arrows, rationale text, end token.
    Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub kind: SpanKind,
}

/// Full segmentation of one output: disjoint ordered spans covering every
/// token exactly once.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputSegments {
    pub spans: Vec<Span>,
    /// True iff the output ended with `<eos>`.
    pub terminated: bool,
}

impl OutputSegments {
    pub fn query_slot_count(&self) -> usize {
        self.spans
            .iter()
            .filter(|s| matches!(s.kind, SpanKind::Query { .. }))
            .count()
    }

    /// Token-id slices of each query, ordered by slot.
    pub fn query_slices<'a>(&self, ids: &'a [TokenId]) -> Vec<&'a [TokenId]> {
        self.spans
            .iter()
            .filter(|s| matches!(s.kind, SpanKind::Query { .. }))
            .map(|s| &ids[s.start..s.end])
            .collect()
    }

    /// (interest k, trigger behavior indices) per interest point, ordered.
    pub fn trigger_sets(&self, vocab: &Vocabulary, ids: &[TokenId]) -> Vec<(usize, Vec<usize>)> {
        self.spans
            .iter()
            .filter_map(|s| match s.kind {
                SpanKind::Trigger { interest } => Some((
                    interest,
                    ids[s.start..s.end]
                        .iter()
                        .filter_map(|&t| vocab.index_of_token(t))
                        .collect(),
                )),
                _ => None,
            })
            .collect()
    }
}

/// Segmentation failure: the longest valid prefix plus the offending
/// position.
#[derive(Debug, Clone)]
pub struct SegmentError {
    pub valid_prefix: OutputSegments,
    pub position: usize,
    pub msg: String,
}

struct SpanBuilder {
    spans: Vec<Span>,
}

impl SpanBuilder {
    fn new() -> Self {
        SpanBuilder { spans: Vec::new() }
    }

    fn push(&mut self, pos: usize, kind: SpanKind) {
        // Merge consecutive format tokens into one span.
        if kind == SpanKind::Format {
            if let Some(last) = self.spans.last_mut() {
                if last.kind == SpanKind::Format && last.end == pos {
                    last.end = pos + 1;
                    return;
                }
            }
        } else if let Some(last) = self.spans.last_mut() {
            if last.kind == kind && last.end == pos {
                last.end = pos + 1;
                return;
            }
        }
        self.spans.push(Span {
            start: pos,
            end: pos + 1,
            kind,
        });
    }
}

/// Assign every output token to a trigger/query/format span.
///
/// Direct mode expects `q ;; q ;; ... <eos>`; think mode allows a free-text
/// rationale before the first `[` and then trigger→query blocks. A grammar
/// violation yields [`SegmentError`] with the longest valid prefix, which the
/// format reward maps to zero.
pub fn segment_output(
    vocab: &Vocabulary,
    ids: &[TokenId],
    mode: OutputMode,
) -> std::result::Result<OutputSegments, SegmentError> {
    match mode {
        OutputMode::Direct => segment_direct(vocab, ids),
        OutputMode::Think => segment_think(vocab, ids),
    }
}

fn err_at(
    spans: SpanBuilder,
    pos: usize,
    msg: String,
) -> std::result::Result<OutputSegments, SegmentError> {
    let mut prefix_spans = spans.spans;
    while let Some(last) = prefix_spans.last() {
        if last.end > pos {
            prefix_spans.pop();
        } else {
            break;
        }
    }
    Err(SegmentError {
        valid_prefix: OutputSegments {
            spans: prefix_spans,
            terminated: false,
        },
        position: pos,
        msg,
    })
}

fn segment_direct(
    vocab: &Vocabulary,
    ids: &[TokenId],
) -> std::result::Result<OutputSegments, SegmentError> {
    let mut spans = SpanBuilder::new();
    let mut slot = 0usize;
    let mut in_query = false;
    let mut terminated = false;

    for (pos, &id) in ids.iter().enumerate() {
        if terminated {
            return err_at(spans, pos, "token after <eos>".into());
        }
        if id == vocab.eos {
            if in_query || slot == 0 && pos == 0 {
                // `<eos>` directly after a query, or an entirely empty output.
            } else if !in_query {
                return err_at(spans, pos, "<eos> after delimiter".into());
            }
            spans.push(pos, SpanKind::Format);
            in_query = false;
            terminated = true;
        } else if id == vocab.delim {
            if !in_query {
                return err_at(spans, pos, "empty query before ';;'".into());
            }
            spans.push(pos, SpanKind::Format);
            in_query = false;
        } else if vocab.is_base(id) {
            if !in_query {
                slot += 1;
                in_query = true;
            }
            spans.push(pos, SpanKind::Query { slot });
        } else {
            return err_at(spans, pos, format!("unexpected token {:?}", vocab.surface(id)));
        }
    }
    Ok(OutputSegments {
        spans: spans.spans,
        terminated,
    })
}

fn segment_think(
    vocab: &Vocabulary,
    ids: &[TokenId],
) -> std::result::Result<OutputSegments, SegmentError> {
    #[derive(PartialEq)]
    enum State {
        Rationale,
        Triggers,
        Arrow,
        QueryStart,
        InQuery,
        AfterDelim,
    }
    let mut spans = SpanBuilder::new();
    let mut state = State::Rationale;
    let mut interest = 0usize;
    let mut slot = 0usize;
    let mut terminated = false;

    for (pos, &id) in ids.iter().enumerate() {
        if terminated {
            return err_at(spans, pos, "token after <eos>".into());
        }
        match state {
            State::Rationale => {
                if id == vocab.bracket_open {
                    interest += 1;
                    spans.push(pos, SpanKind::Format);
                    state = State::Triggers;
                } else if id == vocab.eos {
                    spans.push(pos, SpanKind::Format);
                    terminated = true;
                } else if id == vocab.bracket_close || id == vocab.arrow {
                    return err_at(spans, pos, "structure token in rationale".into());
                } else {
                    spans.push(pos, SpanKind::Format);
                }
            }
            State::Triggers => {
                if vocab.index_of_token(id).is_some() {
                    spans.push(pos, SpanKind::Trigger { interest });
                } else if id == vocab.bracket_close {
                    if !matches!(
                        spans.spans.last(),
                        Some(Span {
                            kind: SpanKind::Trigger { .. },
                            ..
                        })
                    ) {
                        return err_at(spans, pos, "empty trigger set".into());
                    }
                    spans.push(pos, SpanKind::Format);
                    state = State::Arrow;
                } else {
                    return err_at(spans, pos, "expected trigger index or ']'".into());
                }
            }
            State::Arrow => {
                if id == vocab.arrow {
                    spans.push(pos, SpanKind::Format);
                    state = State::QueryStart;
                } else {
                    return err_at(spans, pos, "expected '->'".into());
                }
            }
            State::QueryStart | State::AfterDelim => {
                if vocab.is_base(id) {
                    slot += 1;
                    spans.push(pos, SpanKind::Query { slot });
                    state = State::InQuery;
                } else {
                    return err_at(spans, pos, "expected query token".into());
                }
            }
            State::InQuery => {
                if vocab.is_base(id) {
                    spans.push(pos, SpanKind::Query { slot });
                } else if id == vocab.delim {
                    spans.push(pos, SpanKind::Format);
                    state = State::AfterDelim;
                } else if id == vocab.bracket_open {
                    interest += 1;
                    spans.push(pos, SpanKind::Format);
                    state = State::Triggers;
                } else if id == vocab.eos {
                    spans.push(pos, SpanKind::Format);
                    terminated = true;
                } else {
                    return err_at(spans, pos, format!("unexpected token {:?}", vocab.surface(id)));
                }
            }
        }
    }
    Ok(OutputSegments {
        spans: spans.spans,
        terminated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behavior_log::Action;

    fn vocab() -> Vocabulary {
        Vocabulary::build()
    }

    fn ids(v: &Vocabulary, text: &str) -> Vec<TokenId> {
        let (ids, unk) = v.encode_text(text);
        assert_eq!(unk, 0, "fixture text must be fully in-vocabulary: {text}");
        ids
    }

    #[test]
    fn compress_event_matches_schema() {
        let v = vocab();
        let ev = BehaviorEvent {
            index: 1,
            time_offset: 1,
            action: Action::Search,
            content: "wool coat".into(),
            category_id: "c00".into(),
            timestamp: 0,
        };
        let out = compress_event(&v, &ev);
        assert_eq!(v.decode(&out), "<1> <1_day_ago> <search> wool coat");

        let ev2 = BehaviorEvent {
            index: 2,
            time_offset: 0,
            action: Action::Click,
            content: "woven sachet".into(),
            category_id: "c06".into(),
            timestamp: 0,
        };
        assert_eq!(
            v.decode(&compress_event(&v, &ev2)),
            "<2> <Today> <click> woven sachet"
        );
    }

    #[test]
    fn long_ago_bucket_for_old_events() {
        let v = vocab();
        let ev = BehaviorEvent {
            index: 3,
            time_offset: 400,
            action: Action::Search,
            content: "green tea".into(),
            category_id: "c34".into(),
            timestamp: 0,
        };
        assert_eq!(v.decode(&compress_event(&v, &ev)), "<3> <long_ago> <search> green tea");
    }

    #[test]
    fn special_embedding_mean_rule() {
        // Two constituents v1, v2 → (v1+v2)/2.
        let v1 = [1.0, 3.0];
        let v2 = [2.0, 5.0];
        assert_eq!(init_special_embedding(&[&v1, &v2], 2), vec![1.5, 4.0]);
        // Identical constituents → the vector itself.
        assert_eq!(init_special_embedding(&[&v1, &v1, &v1], 2), vec![1.0, 3.0]);
        // Three hand-set vectors.
        let a = [3.0, 0.0];
        let b = [0.0, 3.0];
        let c = [3.0, 3.0];
        let mean = init_special_embedding(&[&a, &b, &c], 2);
        assert!((mean[0] - 2.0).abs() < 1e-12 && (mean[1] - 2.0).abs() < 1e-12);
        // No constituents → zero vector.
        assert_eq!(init_special_embedding(&[], 2), vec![0.0, 0.0]);
    }

    #[test]
    fn special_embedding_permutation_invariant() {
        let a = [1.0, 2.0];
        let b = [5.0, -1.0];
        let c = [0.5, 0.25];
        let m1 = init_special_embedding(&[&a, &b, &c], 2);
        let m2 = init_special_embedding(&[&c, &a, &b], 2);
        assert_eq!(m1, m2);
    }

    fn sample_profile() -> UserProfile {
        UserProfile {
            user_id: "u0001".into(),
            gender: "female".into(),
            age: 44,
            occupation: "nurse".into(),
            city: "beijing".into(),
        }
    }

    #[test]
    fn prompt_roundtrip_empty_history() {
        let v = vocab();
        let p = sample_profile();
        let enc = encode_prompt(&v, &p, &[], 10);
        assert_eq!(enc.unknown_count, 0);
        assert_eq!(enc.boundary, enc.token_ids.len());
        assert_eq!(
            v.decode(&enc.token_ids),
            "please recommend the next 10 queries profile gender female age 44 occupation nurse city beijing"
        );
    }

    #[test]
    fn prompt_roundtrip_with_history() {
        let v = vocab();
        let p = sample_profile();
        let history = vec![
            BehaviorEvent {
                index: 1,
                time_offset: 0,
                action: Action::Click,
                content: "woven sachet".into(),
                category_id: "c06".into(),
                timestamp: 0,
            },
            BehaviorEvent {
                index: 2,
                time_offset: 0,
                action: Action::Search,
                content: "flower cake".into(),
                category_id: "c05".into(),
                timestamp: 0,
            },
        ];
        let canonical = render_prompt_text(&v, &p, &history, 10);
        let enc = encode_prompt(&v, &p, &history, 10);
        assert_eq!(enc.unknown_count, 0);
        assert_eq!(v.decode(&enc.token_ids), canonical);
        assert!(canonical.contains("<1> <Today> <click> woven sachet ;; <2> <Today> <search> flower cake"));
    }

    #[test]
    fn prompt_roundtrip_on_synthesized_histories() {
        use crate::behavior_log::{build_direct_sessions, synthesize_corpus, SynthConfig};
        let v = vocab();
        let cfg = SynthConfig {
            n_users: 6,
            days: 3,
            ..Default::default()
        };
        let corpus = synthesize_corpus(23, &cfg);
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("c.log");
        corpus.write_log(&log).unwrap();
        let ingest = crate::behavior_log::ingest_logs(&log).unwrap();
        for h in &ingest.histories {
            let (sessions, _) = build_direct_sessions(h, 50);
            for s in sessions {
                let canonical = render_prompt_text(&v, &s.user, &s.history, 10);
                let enc = encode_prompt(&v, &s.user, &s.history, 10);
                assert_eq!(enc.unknown_count, 0, "vocabulary must cover the corpus");
                assert_eq!(v.decode(&enc.token_ids), canonical);
            }
        }
    }

    #[test]
    fn compression_never_expands() {
        // Verbose rendering "index | time | action | content" always has at
        // least as many whitespace tokens as the compressed form.
        let v = vocab();
        for (offset, content) in [
            (0u32, "wool coat"),
            (1, "green tea"),
            (7, "cheap running shoes"),
            (400, "mini desk lamp style"),
        ] {
            let ev = BehaviorEvent {
                index: 5,
                time_offset: offset,
                action: Action::Search,
                content: content.into(),
                category_id: "c00".into(),
                timestamp: 0,
            };
            let time_words = match offset {
                0 => "today".to_string(),
                1 => "1 day ago".to_string(),
                d if d <= 30 => format!("{d} days ago"),
                _ => "long ago".to_string(),
            };
            let verbose = format!("5 | {time_words} | search | {content}");
            let verbose_len = verbose.split_whitespace().count();
            assert!(compress_event(&v, &ev).len() <= verbose_len);
        }
    }

    #[test]
    fn vocabulary_file_roundtrip() {
        let v = vocab();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.tsv");
        v.write_file(&path).unwrap();
        let v2 = Vocabulary::read_file(&path).unwrap();
        assert_eq!(v.len(), v2.len());
        for id in 0..v.len() as TokenId {
            assert_eq!(v.surface(id), v2.surface(id));
            assert_eq!(v.info(id).constituents, v2.info(id).constituents);
        }
        // Writing again must be byte-identical.
        let path2 = dir.path().join("vocab2.tsv");
        v2.write_file(&path2).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&path2).unwrap()
        );
    }

    #[test]
    fn vocabulary_ids_dense_and_unique() {
        let v = vocab();
        let mut surfaces = std::collections::BTreeSet::new();
        for id in 0..v.len() as TokenId {
            assert!(surfaces.insert(v.surface(id).to_string()), "duplicate surface");
            for &c in &v.info(id).constituents {
                assert!((c as usize) < v.base_len(), "constituents must be base ids");
            }
        }
    }

    #[test]
    fn segment_direct_three_queries() {
        let v = vocab();
        let out = ids(&v, "tea ;; coat ;; dress");
        let seg = segment_output(&v, &out, OutputMode::Direct).unwrap();
        let kinds: Vec<SpanKind> = seg.spans.iter().map(|s| s.kind).collect();
        assert_eq!(
            kinds,
            vec![
                SpanKind::Query { slot: 1 },
                SpanKind::Format,
                SpanKind::Query { slot: 2 },
                SpanKind::Format,
                SpanKind::Query { slot: 3 },
            ]
        );
        assert!(!seg.terminated);

        let out = ids(&v, "wool coat ;; red dress <eos>");
        let seg = segment_output(&v, &out, OutputMode::Direct).unwrap();
        assert!(seg.terminated);
        assert_eq!(seg.query_slot_count(), 2);
        let qs = seg.query_slices(&out);
        assert_eq!(v.decode(qs[0]), "wool coat");
        assert_eq!(v.decode(qs[1]), "red dress");
    }

    #[test]
    fn segment_empty_output() {
        let v = vocab();
        let seg = segment_output(&v, &[], OutputMode::Direct).unwrap();
        assert!(seg.spans.is_empty());
        assert!(!seg.terminated);
    }

    #[test]
    fn segment_think_block() {
        let v = vocab();
        let out = ids(&v, "[ <1> <3> ] -> tea ;; coat <eos>");
        let seg = segment_output(&v, &out, OutputMode::Think).unwrap();
        let triggers = seg.trigger_sets(&v, &out);
        assert_eq!(triggers, vec![(1, vec![1, 3])]);
        assert_eq!(seg.query_slot_count(), 2);
        assert!(seg.terminated);
        // Exactly one trigger span, two query spans, rest format.
        let n_trigger = seg
            .spans
            .iter()
            .filter(|s| matches!(s.kind, SpanKind::Trigger { .. }))
            .count();
        assert_eq!(n_trigger, 1);
    }

    #[test]
    fn segment_think_rationale_and_multiple_blocks() {
        let v = vocab();
        let text = "behaviors <1> indicate interest in green tea therefore recommend green tea \
                    [ <1> ] -> green tea ;; new green tea [ <2> <3> ] -> wool coat <eos>";
        let out = ids(&v, text);
        let seg = segment_output(&v, &out, OutputMode::Think).unwrap();
        let triggers = seg.trigger_sets(&v, &out);
        assert_eq!(triggers, vec![(1, vec![1]), (2, vec![2, 3])]);
        // Global slots continue across blocks.
        let slots: Vec<usize> = seg
            .spans
            .iter()
            .filter_map(|s| match s.kind {
                SpanKind::Query { slot } => Some(slot),
                _ => None,
            })
            .collect();
        assert_eq!(slots, vec![1, 2, 3]);
        assert!(seg.terminated);
    }

    #[test]
    fn segment_error_keeps_longest_valid_prefix() {
        let v = vocab();
        // Double delimiter → empty query is a grammar violation.
        let mut out = ids(&v, "tea ;;");
        out.push(v.delim_id());
        out.extend(ids(&v, "coat"));
        let err = segment_output(&v, &out, OutputMode::Direct).unwrap_err();
        assert_eq!(err.position, 2);
        assert_eq!(err.valid_prefix.query_slot_count(), 1);
        assert!(!err.valid_prefix.terminated);
    }

    #[test]
    fn segment_spans_cover_output_disjointly() {
        use rand::{Rng, SeedableRng};
        let v = vocab();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        // Random token soup: segmentation either succeeds with full disjoint
        // coverage or fails with a covered prefix.
        for _ in 0..300 {
            let len = rng.gen_range(0..24);
            let out: Vec<TokenId> = (0..len)
                .map(|_| rng.gen_range(0..v.len() as TokenId))
                .collect();
            for mode in [OutputMode::Direct, OutputMode::Think] {
                let (spans, upto) = match segment_output(&v, &out, mode) {
                    Ok(seg) => (seg.spans, out.len()),
                    Err(e) => (e.valid_prefix.spans, e.position),
                };
                let mut cursor = 0;
                for s in &spans {
                    assert_eq!(s.start, cursor, "spans must be contiguous");
                    assert!(s.end > s.start);
                    cursor = s.end;
                }
                assert!(cursor <= upto);
                if upto == out.len() {
                    assert_eq!(cursor, out.len(), "full coverage on success");
                }
            }
        }
    }
}
