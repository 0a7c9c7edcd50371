//! Ranking metrics and publication-age diagnostics.
//!
//! All per-query metrics take a full ranking (best first) and the set of
//! relevant ids that are actually rankable. Ranks are 1-based.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::TOPIC_SEPARATOR;
use crate::encoder::tokenize;
use crate::error::{PcrError, Result};

fn need_relevant(relevant: &BTreeSet<String>) -> Result<()> {
    if relevant.is_empty() {
        Err(PcrError::Precondition("relevant set is empty".into()))
    } else {
        Ok(())
    }
}

fn hits_in_top(ranking: &[String], relevant: &BTreeSet<String>, k: usize) -> usize {
    ranking.iter().take(k).filter(|id| relevant.contains(*id)).count()
}

/// Fraction of the top-R ranks that are relevant, R = |relevant|.
pub fn r_precision(ranking: &[String], relevant: &BTreeSet<String>) -> Result<f64> {
    need_relevant(relevant)?;
    let r = relevant.len();
    Ok(hits_in_top(ranking, relevant, r) as f64 / r as f64)
}

pub fn recall_at_k(ranking: &[String], relevant: &BTreeSet<String>, k: usize) -> Result<f64> {
    need_relevant(relevant)?;
    if k == 0 {
        return Err(PcrError::Precondition("k must be at least 1".into()));
    }
    Ok(hits_in_top(ranking, relevant, k) as f64 / relevant.len() as f64)
}

/// Reciprocal rank of the first relevant item, 0 when none is ranked.
pub fn mrr(ranking: &[String], relevant: &BTreeSet<String>) -> Result<f64> {
    need_relevant(relevant)?;
    Ok(ranking
        .iter()
        .position(|id| relevant.contains(id))
        .map_or(0.0, |i| 1.0 / (i + 1) as f64))
}

/// One query's full ranking together with its gold citations. Gold ids
/// that are not in the ranking are out of pool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedQuery {
    pub query_id: String,
    pub year: i32,
    pub ranking: Vec<String>,
    pub gold: BTreeSet<String>,
}

impl RankedQuery {
    pub fn relevant_in_pool(&self) -> BTreeSet<String> {
        let ranked: std::collections::HashSet<&str> = self.ranking.iter().map(String::as_str).collect();
        self.gold
            .iter()
            .filter(|id| ranked.contains(id.as_str()))
            .cloned()
            .collect()
    }

    /// 1-based rank of each in-pool gold id.
    pub fn gold_ranks(&self) -> Vec<(&str, usize)> {
        self.ranking
            .iter()
            .enumerate()
            .filter(|(_, id)| self.gold.contains(*id))
            .map(|(i, id)| (id.as_str(), i + 1))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub r_precision: f64,
    pub r_at_5: f64,
    pub r_at_10: f64,
    pub mrr: f64,
}

pub fn query_metrics(ranking: &[String], relevant: &BTreeSet<String>) -> Result<QueryMetrics> {
    Ok(QueryMetrics {
        r_precision: r_precision(ranking, relevant)?,
        r_at_5: recall_at_k(ranking, relevant, 5)?,
        r_at_10: recall_at_k(ranking, relevant, 10)?,
        mrr: mrr(ranking, relevant)?,
    })
}

/// Mean metrics over queries, all in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub r_precision: f64,
    pub r_at_5: f64,
    pub r_at_10: f64,
    pub mrr: f64,
    pub n_queries: usize,
    /// Fraction of gold citations that were rankable.
    pub pool_coverage: f64,
}

impl MetricReport {
    /// `key=value` lines, metrics scaled to 0-100 with two decimals.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        for (k, v) in [
            ("r_precision", self.r_precision),
            ("r_at_5", self.r_at_5),
            ("r_at_10", self.r_at_10),
            ("mrr", self.mrr),
        ] {
            let _ = writeln!(s, "{k}={:.2}", v * 100.0);
        }
        let _ = writeln!(s, "n_queries={}", self.n_queries);
        let _ = writeln!(s, "pool_coverage={:.4}", self.pool_coverage);
        s
    }
}

/// Unweighted mean over queries with at least one in-pool gold id; the rest
/// only count towards `pool_coverage`.
pub fn evaluate_run(run: &[RankedQuery]) -> Result<MetricReport> {
    let mut order: Vec<&RankedQuery> = run.iter().collect();
    order.sort_by(|a, b| a.query_id.cmp(&b.query_id));

    let (mut gold_total, mut gold_in_pool) = (0usize, 0usize);
    let mut sum = [0.0f64; 4];
    let mut n = 0usize;
    for q in order {
        let relevant = q.relevant_in_pool();
        gold_total += q.gold.len();
        gold_in_pool += relevant.len();
        if relevant.is_empty() {
            continue;
        }
        let m = query_metrics(&q.ranking, &relevant)?;
        for (s, v) in sum.iter_mut().zip([m.r_precision, m.r_at_5, m.r_at_10, m.mrr]) {
            *s += v;
        }
        n += 1;
    }
    if n == 0 {
        return Err(PcrError::Empty("no query has an in-pool relevant article".into()));
    }
    let mean = |s: f64| s / n as f64;
    Ok(MetricReport {
        r_precision: mean(sum[0]),
        r_at_5: mean(sum[1]),
        r_at_10: mean(sum[2]),
        mrr: mean(sum[3]),
        n_queries: n,
        pool_coverage: if gold_total == 0 {
            0.0
        } else {
            gold_in_pool as f64 / gold_total as f64
        },
    })
}

/// Mean rank of cited articles grouped by the cited article's year.
/// Articles with unknown year are skipped.
pub fn rank_by_year(run: &[RankedQuery], years: &HashMap<String, i32>) -> BTreeMap<i32, f64> {
    let mut acc: BTreeMap<i32, (f64, usize)> = BTreeMap::new();
    for q in run {
        for (id, rank) in q.gold_ranks() {
            if let Some(&y) = years.get(id) {
                let e = acc.entry(y).or_default();
                e.0 += rank as f64;
                e.1 += 1;
            }
        }
    }
    acc.into_iter().map(|(y, (s, c))| (y, s / c as f64)).collect()
}

/// Sample Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(PcrError::DimensionMismatch {
            expected: xs.len(),
            actual: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(PcrError::Precondition("pearson needs at least two points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(PcrError::Precondition("zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> Result<f64> {
    if a.is_empty() && b.is_empty() {
        return Err(PcrError::Precondition("jaccard of two empty sets".into()));
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    Ok(inter as f64 / union as f64)
}

pub fn token_set(text: &str) -> BTreeSet<String> {
    tokenize(text).into_iter().collect()
}

/// Token set of a query text without the separator token.
pub fn query_token_set(text: &str) -> BTreeSet<String> {
    let separator = TOPIC_SEPARATOR.to_lowercase();
    tokenize(text).into_iter().filter(|t| *t != separator).collect()
}

/// Citing year minus cited year.
pub fn year_gap(citing_year: i32, cited_year: i32) -> i32 {
    citing_year - cited_year
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeAnalysis {
    pub rank_by_year: BTreeMap<i32, f64>,
    pub n_pairs: usize,
    /// Correlation of year gap with the cited article's rank.
    pub pearson_gap_rank: Option<f64>,
    /// Correlation of year gap with query/cited-article token overlap.
    pub pearson_gap_jaccard: Option<f64>,
}

/// Year-gap diagnostics over every (query, in-pool cited article) pair.
/// `query_texts` maps query id to query text; `articles` maps article id to
/// (year, text).
pub fn age_analysis(
    run: &[RankedQuery],
    query_texts: &HashMap<String, String>,
    articles: &HashMap<String, (i32, String)>,
) -> AgeAnalysis {
    let years: HashMap<String, i32> = articles.iter().map(|(k, (y, _))| (k.clone(), *y)).collect();
    let mut gaps = Vec::new();
    let mut ranks = Vec::new();
    let mut overlaps = Vec::new();
    for q in run {
        let q_tokens = query_texts.get(&q.query_id).map(|t| query_token_set(t));
        for (id, rank) in q.gold_ranks() {
            let Some((year, text)) = articles.get(id) else { continue };
            let Some(q_tokens) = &q_tokens else { continue };
            let Ok(j) = jaccard(q_tokens, &token_set(text)) else { continue };
            gaps.push(f64::from(year_gap(q.year, *year)));
            ranks.push(rank as f64);
            overlaps.push(j);
        }
    }
    AgeAnalysis {
        rank_by_year: rank_by_year(run, &years),
        n_pairs: gaps.len(),
        pearson_gap_rank: pearson(&gaps, &ranks).ok(),
        pearson_gap_jaccard: pearson(&gaps, &overlaps).ok(),
    }
}

/// Run file: `query_id<TAB>id1,id2,...` per line.
pub fn write_run(path: impl AsRef<Path>, rows: &[(String, Vec<String>)]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| PcrError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (qid, ids) in rows {
        writeln!(w, "{qid}\t{}", ids.join(",")).map_err(|e| PcrError::io(path, e))?;
    }
    w.flush().map_err(|e| PcrError::io(path, e))
}

pub fn read_run(path: impl AsRef<Path>) -> Result<Vec<(String, Vec<String>)>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| PcrError::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| PcrError::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let (qid, ids) = line.split_once('\t').ok_or_else(|| PcrError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: "expected query_id<TAB>ranked ids".into(),
        })?;
        let ids = if ids.is_empty() {
            Vec::new()
        } else {
            ids.split(',').map(str::to_owned).collect()
        };
        rows.push((qid.to_owned(), ids));
    }
    Ok(rows)
}
