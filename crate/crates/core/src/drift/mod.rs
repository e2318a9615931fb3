//! Query drift estimation and compensation.
//!
//! After training task `t`, the mean change of the current task's training
//! query embeddings between `f_{t-1}` and `f_t` is stored as the drift of
//! transition `t-1 -> t`. At retrieval time an old task `t'` is queried
//! with `f_t(q) - sum_{j=t'}^{t-1} drift(j -> j+1)`, which lands the query
//! back in the space of the `f_{t'}` index; the corpus is never re-encoded.

pub mod kmeans;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{check_dims, cosine_slices, dot, norm, Embedding, ZERO_NORM};
use crate::encoder::{EncoderParams, TokenFeatures};
use crate::error::{Error, Result};

/// Mean embedding change over one model transition. Not unit-norm.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftVector {
    pub values: Vec<f64>,
    pub from_task: u32,
    pub to_task: u32,
}

impl DriftVector {
    pub fn zeros(dim: usize, from_task: u32, to_task: u32) -> Self {
        Self {
            values: vec![0.0; dim],
            from_task,
            to_task,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }
}

/// Cluster-wise drift: `k` centroids in the `to_task` space, each with the
/// mean drift of the training queries assigned to it.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiDriftRecord {
    pub from_task: u32,
    pub to_task: u32,
    pub centroids: Vec<Vec<f64>>,
    pub vectors: Vec<Vec<f64>>,
}

impl MultiDriftRecord {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    /// Centroid with the highest cosine to `q`; ties go to the lowest index.
    pub fn nearest_cluster(&self, q: &[f64]) -> Result<usize> {
        let mut best = (0, f64::NEG_INFINITY);
        for (j, c) in self.centroids.iter().enumerate() {
            let s = cosine_slices(q, c)?;
            if s > best.1 {
                best = (j, s);
            }
        }
        Ok(best.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RecordFile", into = "RecordFile")]
pub enum DriftRecord {
    Single(DriftVector),
    Multi(MultiDriftRecord),
}

impl DriftRecord {
    pub fn from_task(&self) -> u32 {
        match self {
            DriftRecord::Single(v) => v.from_task,
            DriftRecord::Multi(m) => m.from_task,
        }
    }

    pub fn to_task(&self) -> u32 {
        match self {
            DriftRecord::Single(v) => v.to_task,
            DriftRecord::Multi(m) => m.to_task,
        }
    }

    /// Compensates one hop: `q - drift` for the cluster `q` falls into.
    pub fn compensate(&self, q: &Embedding) -> Result<Embedding> {
        match self {
            DriftRecord::Single(v) => compensate_query(q, v),
            DriftRecord::Multi(m) => compensate_query_multi(q, m),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum RecordKind {
    Single,
    Multi,
}

/// On-disk shape of a ledger record.
#[derive(Serialize, Deserialize)]
struct RecordFile {
    from: u32,
    to: u32,
    kind: RecordKind,
    vectors: Vec<Vec<f64>>,
    #[serde(default)]
    centroids: Vec<Vec<f64>>,
}

impl From<DriftRecord> for RecordFile {
    fn from(r: DriftRecord) -> Self {
        match r {
            DriftRecord::Single(v) => RecordFile {
                from: v.from_task,
                to: v.to_task,
                kind: RecordKind::Single,
                vectors: vec![v.values],
                centroids: Vec::new(),
            },
            DriftRecord::Multi(m) => RecordFile {
                from: m.from_task,
                to: m.to_task,
                kind: RecordKind::Multi,
                vectors: m.vectors,
                centroids: m.centroids,
            },
        }
    }
}

impl TryFrom<RecordFile> for DriftRecord {
    type Error = String;

    fn try_from(f: RecordFile) -> std::result::Result<Self, String> {
        match f.kind {
            RecordKind::Single => {
                let [values]: [Vec<f64>; 1] = f
                    .vectors
                    .try_into()
                    .map_err(|_| "single record must hold exactly one vector")?;
                Ok(DriftRecord::Single(DriftVector {
                    values,
                    from_task: f.from,
                    to_task: f.to,
                }))
            }
            RecordKind::Multi => {
                if f.vectors.is_empty() || f.vectors.len() != f.centroids.len() {
                    return Err("multi record needs one vector per centroid".into());
                }
                Ok(DriftRecord::Multi(MultiDriftRecord {
                    from_task: f.from,
                    to_task: f.to,
                    centroids: f.centroids,
                    vectors: f.vectors,
                }))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskCentroid {
    pub task: u32,
    pub values: Vec<f64>,
}

/// Append-only history of per-transition drift plus task centroids kept in
/// the newest model's space.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DriftLedger {
    records: Vec<DriftRecord>,
    task_centroids: Vec<TaskCentroid>,
}

impl DriftLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[DriftRecord] {
        &self.records
    }

    pub fn task_centroids(&self) -> &[TaskCentroid] {
        &self.task_centroids
    }

    /// Appends the next transition; transitions must be contiguous single hops.
    pub fn push(&mut self, record: DriftRecord) -> Result<()> {
        let (from, to) = (record.from_task(), record.to_task());
        if to != from + 1 {
            return Err(Error::DataMismatch(format!(
                "drift record {from}->{to} is not a single transition"
            )));
        }
        if let Some(last) = self.records.last() {
            if last.to_task() != from {
                return Err(Error::DataMismatch(format!(
                    "drift record {from}->{to} does not follow {}->{}",
                    last.from_task(),
                    last.to_task()
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn record(&self, from: u32) -> Option<&DriftRecord> {
        self.records.iter().find(|r| r.from_task() == from)
    }

    fn hop(&self, from: u32) -> Result<&DriftRecord> {
        self.record(from).ok_or(Error::MissingTransition {
            from,
            to: from + 1,
        })
    }

    /// Maps a `t`-space query back into the `t_prime` space.
    ///
    /// With single-vector records this is `q - accumulate_drift(t', t)`.
    /// With any multi-vector record, hops are applied from `t-1 -> t` down
    /// to `t' -> t'+1`, each choosing its cluster from the partially
    /// compensated query.
    pub fn compensate(&self, q: &Embedding, t_prime: u32, t: u32) -> Result<Embedding> {
        let all_single = (t_prime..t).all(|z| matches!(self.record(z), Some(DriftRecord::Single(_))));
        if all_single {
            let delta = accumulate_drift(self, t_prime, t)?;
            return compensate_query(q, &delta);
        }
        let mut current = q.clone();
        for z in (t_prime..t).rev() {
            current = self.hop(z)?.compensate(&current)?;
        }
        Ok(current)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::corrupt(path, e.to_string()))
    }

    /// Stores (or replaces) the centroid of `task`.
    pub fn set_task_centroid(&mut self, task: u32, values: Vec<f64>) {
        match self.task_centroids.iter_mut().find(|c| c.task == task) {
            Some(c) => c.values = values,
            None => self.task_centroids.push(TaskCentroid { task, values }),
        }
    }
}

fn encode_all(params: &EncoderParams, queries: &[TokenFeatures]) -> Result<Vec<Embedding>> {
    queries.par_iter().map(|q| params.encode(q)).collect()
}

fn per_query_drift(
    params_new: &EncoderParams,
    params_old: &EncoderParams,
    queries: &[TokenFeatures],
) -> Result<(Vec<Embedding>, Vec<Vec<f64>>)> {
    params_new.same_shape(params_old)?;
    let new = encode_all(params_new, queries)?;
    let old = encode_all(params_old, queries)?;
    let drifts = new
        .iter()
        .zip(&old)
        .map(|(a, b)| a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect())
        .collect();
    Ok((new, drifts))
}

fn mean_rows<'a>(rows: impl Iterator<Item = &'a Vec<f64>>, dim: usize) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    let mut n = 0usize;
    for r in rows {
        n += 1;
        for (a, x) in acc.iter_mut().zip(r) {
            *a += x;
        }
    }
    acc.iter_mut().for_each(|a| *a /= n as f64);
    acc
}

/// Mean of `encode_new(q) - encode_old(q)` over `queries`, tagged
/// `old.version -> new.version`.
pub fn estimate_drift(
    params_new: &EncoderParams,
    params_old: &EncoderParams,
    queries: &[TokenFeatures],
) -> Result<DriftVector> {
    if queries.is_empty() {
        return Err(Error::EmptyQuerySet);
    }
    let (_, drifts) = per_query_drift(params_new, params_old, queries)?;
    Ok(DriftVector {
        values: mean_rows(drifts.iter(), params_new.dim()),
        from_task: params_old.version(),
        to_task: params_new.version(),
    })
}

/// Sum of single-vector drifts over transitions `t_prime .. t`, ascending.
pub fn accumulate_drift(ledger: &DriftLedger, t_prime: u32, t: u32) -> Result<DriftVector> {
    if t_prime > t {
        return Err(Error::DataMismatch(format!(
            "cannot accumulate drift from {t_prime} back to {t}"
        )));
    }
    let mut acc: Option<Vec<f64>> = None;
    for z in t_prime..t {
        let values = match ledger.hop(z)? {
            DriftRecord::Single(v) => &v.values,
            DriftRecord::Multi(_) => return Err(Error::MixedRecordKind { from: z, to: z + 1 }),
        };
        match acc.as_mut() {
            None => acc = Some(values.clone()),
            Some(a) => {
                check_dims(a.len(), values.len())?;
                a.iter_mut().zip(values).for_each(|(x, y)| *x += y);
            }
        }
    }
    let dim = match (&acc, ledger.records.first()) {
        (Some(a), _) => a.len(),
        (None, Some(DriftRecord::Single(v))) => v.dim(),
        (None, Some(DriftRecord::Multi(m))) => m.vectors[0].len(),
        (None, None) => ledger.task_centroids.first().map_or(0, |c| c.values.len()),
    };
    Ok(DriftVector {
        values: acc.unwrap_or_else(|| vec![0.0; dim]),
        from_task: t_prime,
        to_task: t,
    })
}

/// `q - delta`, deliberately not re-normalized.
pub fn compensate_query(q: &Embedding, delta: &DriftVector) -> Result<Embedding> {
    if delta.dim() == 0 {
        return Ok(q.clone());
    }
    check_dims(q.dim(), delta.dim())?;
    let out: Vec<f64> = q.values().iter().zip(&delta.values).map(|(a, b)| a - b).collect();
    if norm(&out) < ZERO_NORM {
        return Err(Error::ZeroVector);
    }
    Embedding::new(out)
}

/// Drift per k-means cluster of the new-model query embeddings.
pub fn estimate_multi_drift(
    params_new: &EncoderParams,
    params_old: &EncoderParams,
    queries: &[TokenFeatures],
    k: usize,
    seed: u64,
) -> Result<MultiDriftRecord> {
    if k == 0 || k > queries.len() {
        return Err(Error::TooFewQueries { k, n: queries.len() });
    }
    let (new, drifts) = per_query_drift(params_new, params_old, queries)?;
    let points: Vec<Vec<f64>> = new.into_iter().map(Embedding::into_values).collect();
    let clustering = kmeans::kmeans(&points, k, seed)?;
    let dim = params_new.dim();
    let vectors = (0..k)
        .map(|j| {
            let members = drifts
                .iter()
                .zip(&clustering.assignments)
                .filter(|(_, &a)| a == j)
                .map(|(d, _)| d);
            mean_rows(members, dim)
        })
        .collect();
    Ok(MultiDriftRecord {
        from_task: params_old.version(),
        to_task: params_new.version(),
        centroids: clustering.centroids,
        vectors,
    })
}

/// Subtracts the drift of the centroid closest (by cosine) to `q`.
pub fn compensate_query_multi(q: &Embedding, record: &MultiDriftRecord) -> Result<Embedding> {
    if let Some(c) = record.centroids.first() {
        check_dims(c.len(), q.dim())?;
    }
    let j = record.nearest_cluster(q.values())?;
    let delta = DriftVector {
        values: record.vectors[j].clone(),
        from_task: record.from_task,
        to_task: record.to_task,
    };
    compensate_query(q, &delta)
}

/// Task whose stored centroid is closest in cosine distance; ties go to the
/// lower task id.
pub fn predict_task_id(q: &Embedding, ledger: &DriftLedger) -> Result<u32> {
    let qn = q.norm();
    if qn < ZERO_NORM {
        return Err(Error::ZeroVector);
    }
    let mut best: Option<(u32, f64)> = None;
    let mut ordered: Vec<&TaskCentroid> = ledger.task_centroids.iter().collect();
    ordered.sort_by_key(|c| c.task);
    for c in ordered {
        check_dims(q.dim(), c.values.len())?;
        let cn = norm(&c.values);
        let sim = if cn < ZERO_NORM {
            f64::NEG_INFINITY
        } else {
            dot(q.values(), &c.values) / (qn * cn)
        };
        if best.is_none_or(|(_, s)| sim > s) {
            best = Some((c.task, sim));
        }
    }
    best.map(|(t, _)| t).ok_or(Error::NoCentroids)
}

/// Moves every stored task centroid into the next model's space: `c + delta`.
pub fn update_task_centroids(ledger: &DriftLedger, delta: &DriftVector) -> Result<DriftLedger> {
    let mut next = ledger.clone();
    for c in &mut next.task_centroids {
        check_dims(c.values.len(), delta.dim())?;
        c.values.iter_mut().zip(&delta.values).for_each(|(x, d)| *x += d);
    }
    Ok(next)
}

/// Mean new-model embedding of a task's training queries.
pub fn task_centroid(params: &EncoderParams, queries: &[TokenFeatures]) -> Result<Vec<f64>> {
    if queries.is_empty() {
        return Err(Error::EmptyQuerySet);
    }
    let embs = encode_all(params, queries)?;
    let rows: Vec<Vec<f64>> = embs.into_iter().map(Embedding::into_values).collect();
    Ok(mean_rows(rows.iter(), params.dim()))
}
