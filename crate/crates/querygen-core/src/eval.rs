//! Offline evaluation: user-level hit rates, category diversity, and a
//! lexical semantic-similarity proxy.
//!
//! Hit rates are user-level: a user counts as a hit when at least one of
//! their top-k predictions matches (exact normalized string for Query HR,
//! leaf category for Cate HR). The semantic-similarity metric reported here
//! is a ROUGE-L-F proxy (mean over predicted queries of the best F against
//! any truth query), labeled as such wherever it is printed.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use crate::behavior_log::{normalize_text, QueryCatalog};
use crate::text_metrics::rouge_l_text;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub query_hr_at_k: f64,
    pub cate_hr_at_k: f64,
    /// Mean distinct leaf categories among each user's top-k predictions.
    pub unique_cates: f64,
    /// ROUGE-L-F proxy for semantic similarity.
    pub sem_sim_proxy: f64,
    pub k: usize,
    pub users: usize,
}

/// Next-day ground truth for one user.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TruthEntry {
    pub queries: Vec<String>,
    pub categories: Vec<String>,
}

/// Score per-user top-k prediction lists against next-day ground truth.
///
/// Users present in `truth` form the denominator; a user with no
/// predictions simply misses. A prediction matching a truth query exactly
/// counts as a category hit as well, so Query HR ≤ Cate HR by construction.
pub fn evaluate(
    predictions: &BTreeMap<String, Vec<String>>,
    truth: &BTreeMap<String, TruthEntry>,
    k: usize,
    catalog: &QueryCatalog,
) -> EvalReport {
    let mut query_hits = 0usize;
    let mut cate_hits = 0usize;
    let mut unique_sum = 0.0;
    let mut sem_sum = 0.0;

    for (user, entry) in truth {
        let top_k: Vec<&String> = predictions
            .get(user)
            .map(|qs| qs.iter().take(k).collect())
            .unwrap_or_default();
        let truth_queries: BTreeSet<String> =
            entry.queries.iter().map(|q| normalize_text(q)).collect();
        let mut truth_cats: BTreeSet<&str> =
            entry.categories.iter().map(|c| c.as_str()).collect();
        for q in &entry.queries {
            if let Some(c) = catalog.category_of(q) {
                truth_cats.insert(c);
            }
        }

        let query_hit = top_k
            .iter()
            .any(|q| truth_queries.contains(&normalize_text(q)));
        let pred_cats: BTreeSet<&str> = top_k
            .iter()
            .filter_map(|q| catalog.category_of(q))
            .collect();
        let cate_hit = query_hit || pred_cats.iter().any(|c| truth_cats.contains(*c));

        query_hits += usize::from(query_hit);
        cate_hits += usize::from(cate_hit);
        unique_sum += pred_cats.len() as f64;

        if !top_k.is_empty() && !entry.queries.is_empty() {
            let mean_best: f64 = top_k
                .iter()
                .map(|q| {
                    entry
                        .queries
                        .iter()
                        .map(|t| rouge_l_text(q, t).f)
                        .fold(0.0, f64::max)
                })
                .sum::<f64>()
                / top_k.len() as f64;
            sem_sum += mean_best;
        }
    }

    let n = truth.len();
    let denom = n.max(1) as f64;
    EvalReport {
        query_hr_at_k: query_hits as f64 / denom,
        cate_hr_at_k: cate_hits as f64 / denom,
        unique_cates: unique_sum / denom,
        sem_sim_proxy: sem_sum / denom,
        k,
        users: n,
    }
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

/// Predictions file: `user_id \t q1;;q2;;…`, sorted by user id.
pub fn write_predictions(path: &Path, predictions: &BTreeMap<String, Vec<String>>) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for (user, qs) in predictions {
        writeln!(f, "{user}\t{}", qs.join(";;")).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let (user, rest) = line.split_once('\t').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: "expected 2 tab-separated fields".into(),
        })?;
        let qs: Vec<String> = rest
            .split(";;")
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        out.insert(user.to_string(), qs);
    }
    Ok(out)
}

/// Truth file: `user_id \t q1;;q2 \t c1;;c2`, sorted by user id.
pub fn write_truth(path: &Path, truth: &BTreeMap<String, TruthEntry>) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for (user, t) in truth {
        writeln!(
            f,
            "{user}\t{}\t{}",
            t.queries.join(";;"),
            t.categories.join(";;")
        )
        .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_truth(path: &Path) -> Result<BTreeMap<String, TruthEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 3 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: "expected 3 tab-separated fields".into(),
            });
        }
        let split = |s: &str| -> Vec<String> {
            s.split(";;")
                .filter(|x| !x.is_empty())
                .map(str::to_string)
                .collect()
        };
        out.insert(
            parts[0].to_string(),
            TruthEntry {
                queries: split(parts[1]),
                categories: split(parts[2]),
            },
        );
    }
    Ok(out)
}

/// Report file: `key \t value` lines in fixed order.
pub fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let rows = [
        ("k", report.k.to_string()),
        ("users", report.users.to_string()),
        ("query_hr_at_k", report.query_hr_at_k.to_string()),
        ("cate_hr_at_k", report.cate_hr_at_k.to_string()),
        ("unique_cates", report.unique_cates.to_string()),
        ("sem_sim_proxy_rouge_l_f", report.sem_sim_proxy.to_string()),
    ];
    for (k, v) in rows {
        writeln!(f, "{k}\t{v}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behavior_log::Taxonomy;

    fn catalog() -> QueryCatalog {
        QueryCatalog::from_taxonomy(&Taxonomy::new())
    }

    fn preds(rows: &[(&str, &[&str])]) -> BTreeMap<String, Vec<String>> {
        rows.iter()
            .map(|(u, qs)| {
                (
                    u.to_string(),
                    qs.iter().map(|q| q.to_string()).collect(),
                )
            })
            .collect()
    }

    fn truth_of(rows: &[(&str, &[&str], &[&str])]) -> BTreeMap<String, TruthEntry> {
        rows.iter()
            .map(|(u, qs, cs)| {
                (
                    u.to_string(),
                    TruthEntry {
                        queries: qs.iter().map(|q| q.to_string()).collect(),
                        categories: cs.iter().map(|c| c.to_string()).collect(),
                    },
                )
            })
            .collect()
    }

    #[test]
    fn exact_predictions_hit_everything() {
        let cat = catalog();
        let p = preds(&[("u0", &["wool coat", "green tea"])]);
        let t = truth_of(&[("u0", &["wool coat", "green tea"], &["c00", "c34"])]);
        let r = evaluate(&p, &t, 10, &cat);
        assert_eq!(r.query_hr_at_k, 1.0);
        assert_eq!(r.cate_hr_at_k, 1.0);
        assert!((r.sem_sim_proxy - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_categories_miss() {
        let cat = catalog();
        let p = preds(&[("u0", &["wool coat"])]);
        let t = truth_of(&[("u0", &["green tea"], &["c34"])]);
        let r = evaluate(&p, &t, 10, &cat);
        assert_eq!(r.query_hr_at_k, 0.0);
        assert_eq!(r.cate_hr_at_k, 0.0);
    }

    #[test]
    fn hand_counted_three_user_fixture() {
        let cat = catalog();
        // u0: exact query hit; u1: category-only hit ("best green tea" is
        // c34, truth category c34); u2: full miss.
        let p = preds(&[
            ("u0", &["wool coat"]),
            ("u1", &["best green tea"]),
            ("u2", &["phone case"]),
        ]);
        let t = truth_of(&[
            ("u0", &["wool coat"], &["c00"]),
            ("u1", &["green tea"], &["c34"]),
            ("u2", &["red dress"], &["c04"]),
        ]);
        let r = evaluate(&p, &t, 10, &cat);
        assert!((r.query_hr_at_k - 1.0 / 3.0).abs() < 1e-12);
        assert!((r.cate_hr_at_k - 2.0 / 3.0).abs() < 1e-12);
        // Each user predicted 1 catalog query → unique cates mean = 1.
        assert!((r.unique_cates - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_predictions_all_zero() {
        let cat = catalog();
        let p = BTreeMap::new();
        let t = truth_of(&[("u0", &["wool coat"], &["c00"])]);
        let r = evaluate(&p, &t, 10, &cat);
        assert_eq!(r.query_hr_at_k, 0.0);
        assert_eq!(r.cate_hr_at_k, 0.0);
        assert_eq!(r.unique_cates, 0.0);
        assert_eq!(r.sem_sim_proxy, 0.0);
    }

    #[test]
    fn query_hr_never_exceeds_cate_hr() {
        use rand::{Rng, SeedableRng};
        let cat = catalog();
        let tax = Taxonomy::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(44);
        for _ in 0..30 {
            let mut p = BTreeMap::new();
            let mut t = BTreeMap::new();
            for u in 0..10 {
                let uid = format!("u{u}");
                let qs: Vec<String> = (0..rng.gen_range(0..4))
                    .map(|_| {
                        let c = rng.gen_range(0..40);
                        tax.categories[c].queries[rng.gen_range(0..8)].clone()
                    })
                    .collect();
                let ts: Vec<String> = (0..rng.gen_range(1..4))
                    .map(|_| {
                        let c = rng.gen_range(0..40);
                        tax.categories[c].queries[rng.gen_range(0..8)].clone()
                    })
                    .collect();
                let cats: Vec<String> = ts
                    .iter()
                    .filter_map(|q| cat.category_of(q).map(str::to_string))
                    .collect();
                p.insert(uid.clone(), qs);
                t.insert(
                    uid,
                    TruthEntry {
                        queries: ts,
                        categories: cats,
                    },
                );
            }
            let r = evaluate(&p, &t, 5, &cat);
            assert!(r.query_hr_at_k <= r.cate_hr_at_k + 1e-12);
        }
    }

    #[test]
    fn permutation_invariant_over_users() {
        // BTreeMap keying already canonicalizes order; verify scoring is
        // insensitive to insertion order.
        let cat = catalog();
        let rows = [
            ("u2", vec!["wool coat"]),
            ("u0", vec!["green tea"]),
            ("u1", vec!["red dress"]),
        ];
        let mut p1 = BTreeMap::new();
        for (u, qs) in rows.iter() {
            p1.insert(u.to_string(), qs.iter().map(|s| s.to_string()).collect());
        }
        let mut p2 = BTreeMap::new();
        for (u, qs) in rows.iter().rev() {
            p2.insert(u.to_string(), qs.iter().map(|s| s.to_string()).collect());
        }
        let t = truth_of(&[
            ("u0", &["green tea"], &["c34"]),
            ("u1", &["wool coat"], &["c00"]),
            ("u2", &["wool coat"], &["c00"]),
        ]);
        assert_eq!(evaluate(&p1, &t, 3, &cat), evaluate(&p2, &t, 3, &cat));
    }

    #[test]
    fn files_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = preds(&[("u0", &["wool coat", "green tea"]), ("u1", &[])]);
        let path = dir.path().join("preds.tsv");
        write_predictions(&path, &p).unwrap();
        assert_eq!(read_predictions(&path).unwrap(), p);

        let t = truth_of(&[("u0", &["wool coat"], &["c00"])]);
        let path = dir.path().join("truth.tsv");
        write_truth(&path, &t).unwrap();
        assert_eq!(read_truth(&path).unwrap(), t);
    }
}
