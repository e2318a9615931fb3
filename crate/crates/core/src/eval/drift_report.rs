use rayon::prelude::*;
use serde::Serialize;

use crate::embedding::dot;
use crate::encoder::{tokenize, EncoderParams};
use crate::error::{Error, Result};
use crate::index::DocRecord;

/// Token-count tercile boundaries. A text of length `n` is short when
/// `n <= short_max`, medium when `n <= medium_max`, long otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LengthBuckets {
    pub short_max: usize,
    pub medium_max: usize,
}

impl LengthBuckets {
    /// Nearest-rank terciles of the given lengths.
    pub fn terciles(lengths: &[usize]) -> Option<Self> {
        if lengths.is_empty() {
            return None;
        }
        let mut sorted = lengths.to_vec();
        sorted.sort_unstable();
        let n = sorted.len();
        Some(Self {
            short_max: sorted[(n - 1) / 3],
            medium_max: sorted[2 * (n - 1) / 3],
        })
    }

    pub fn bucket(&self, len: usize) -> usize {
        if len <= self.short_max {
            0
        } else if len <= self.medium_max {
            1
        } else {
            2
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketDrift {
    pub buckets: LengthBuckets,
    /// Mean cosine distance per bucket (short, medium, long); `None` when
    /// the bucket holds no text.
    pub mean_drift: [Option<f64>; 3],
    pub counts: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftLengthReport {
    pub query: BucketDrift,
    pub corpus: BucketDrift,
}

impl DriftLengthReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("population,bucket,min_tokens,max_tokens,count,mean_drift\n");
        for (name, pop) in [("query", &self.query), ("corpus", &self.corpus)] {
            let b = pop.buckets;
            let ranges = [
                (0, b.short_max.to_string()),
                (b.short_max + 1, b.medium_max.to_string()),
                (b.medium_max + 1, "inf".to_string()),
            ];
            for (i, label) in ["short", "medium", "long"].iter().enumerate() {
                let mean = pop.mean_drift[i].map_or(String::from("absent"), |m| format!("{m}"));
                out.push_str(&format!(
                    "{name},{label},{},{},{},{mean}\n",
                    ranges[i].0, ranges[i].1, pop.counts[i]
                ));
            }
        }
        out
    }
}

fn population(
    params_new: &EncoderParams,
    params_old: &EncoderParams,
    texts: &[String],
) -> Result<BucketDrift> {
    let lengths: Vec<usize> = texts.iter().map(|t| t.split_whitespace().count()).collect();
    let buckets = LengthBuckets::terciles(&lengths).expect("non-empty population");
    let drifts = texts
        .par_iter()
        .map(|t| {
            let feats = tokenize(t, params_new.vocab());
            let a = params_new.encode(&feats)?;
            let b = params_old.encode(&feats)?;
            Ok(1.0 - dot(a.values(), b.values()))
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut sums = [0.0; 3];
    let mut counts = [0usize; 3];
    for (&len, d) in lengths.iter().zip(&drifts) {
        let b = buckets.bucket(len);
        sums[b] += d;
        counts[b] += 1;
    }
    let mean_drift = [0, 1, 2].map(|b| (counts[b] > 0).then(|| sums[b] / counts[b] as f64));
    Ok(BucketDrift {
        buckets,
        mean_drift,
        counts,
    })
}

/// Mean cosine drift `1 - cos(f_new(x), f_old(x))` of queries and documents,
/// split into short/medium/long by whitespace token count.
pub fn drift_report(
    params_new: &EncoderParams,
    params_old: &EncoderParams,
    queries: &[String],
    corpus: &[DocRecord],
) -> Result<DriftLengthReport> {
    params_new.same_shape(params_old)?;
    if queries.is_empty() {
        return Err(Error::EmptyPopulation("queries"));
    }
    if corpus.is_empty() {
        return Err(Error::EmptyPopulation("corpus"));
    }
    let docs: Vec<String> = corpus.iter().map(DocRecord::full_text).collect();
    Ok(DriftLengthReport {
        query: population(params_new, params_old, queries)?,
        corpus: population(params_new, params_old, &docs)?,
    })
}
