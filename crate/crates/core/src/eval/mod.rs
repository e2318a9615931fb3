//! Retrieval metrics over graded relevance judgments.
//!
//! * `DCG@k  = sum_{i<=k} (2^rel_i - 1) / log2(i + 1)`, `nDCG = DCG / IDCG`
//! * `Recall@k = |relevant ∩ top-k| / |relevant|`
//! * `AP@k = sum over relevant hits at rank r of P@r, / min(|relevant|, k)`
//!
//! Unjudged retrieved documents have relevance 0. A document is relevant
//! when its grade is positive.

mod drift_report;
mod matrix;

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::index::RankedList;

pub use drift_report::{drift_report, BucketDrift, DriftLengthReport, LengthBuckets};
pub use matrix::{performance_drop, PdReport, ScoreMatrix};

/// `query id -> (doc id -> grade)`.
pub type Qrels = BTreeMap<String, BTreeMap<String, u32>>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct QueryMetrics {
    pub ndcg: f64,
    pub recall: f64,
    pub map: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub k: usize,
    pub per_query: BTreeMap<String, QueryMetrics>,
    pub mean: QueryMetrics,
}

fn gain(grade: u32) -> f64 {
    (2f64).powi(grade as i32) - 1.0
}

fn discount(rank: usize) -> f64 {
    ((rank + 1) as f64).log2()
}

/// Metrics of one ranked list against one query's judgments.
pub fn query_metrics(ranked: &RankedList, judged: &BTreeMap<String, u32>, k: usize) -> QueryMetrics {
    let relevant = judged.values().filter(|&&g| g > 0).count();
    if relevant == 0 || k == 0 {
        return QueryMetrics::default();
    }
    let mut dcg = 0.0;
    let mut hits = 0usize;
    let mut precision_sum = 0.0;
    for (i, doc) in ranked.doc_ids().take(k).enumerate() {
        let grade = judged.get(doc).copied().unwrap_or(0);
        if grade > 0 {
            dcg += gain(grade) / discount(i + 1);
            hits += 1;
            precision_sum += hits as f64 / (i + 1) as f64;
        }
    }
    let mut ideal: Vec<u32> = judged.values().copied().filter(|&g| g > 0).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain(g) / discount(i + 1))
        .sum();
    QueryMetrics {
        ndcg: dcg / idcg,
        recall: hits as f64 / relevant as f64,
        map: precision_sum / relevant.min(k) as f64,
    }
}

/// Per-query and mean metrics for a run (`query id -> ranked list`).
/// Means are reduced in query-id order.
pub fn compute_metrics(
    run: &BTreeMap<String, RankedList>,
    qrels: &Qrels,
    k: usize,
) -> Result<MetricReport> {
    let mut per_query = BTreeMap::new();
    for (qid, ranked) in run {
        let judged = qrels
            .get(qid)
            .filter(|j| !j.is_empty())
            .ok_or_else(|| Error::MissingQrels(qid.clone()))?;
        per_query.insert(qid.clone(), query_metrics(ranked, judged, k));
    }
    let n = per_query.len().max(1) as f64;
    let mut mean = QueryMetrics::default();
    for m in per_query.values() {
        mean.ndcg += m.ndcg;
        mean.recall += m.recall;
        mean.map += m.map;
    }
    mean.ndcg /= n;
    mean.recall /= n;
    mean.map /= n;
    Ok(MetricReport { k, per_query, mean })
}

#[cfg(test)]
mod tests;
