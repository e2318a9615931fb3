//! Per-task corpus indexes: built once with the model of their task,
//! persisted, and searched exactly by cosine similarity.
//!
//! File layout (little-endian):
//!
//! | field            | type                       |
//! |------------------|----------------------------|
//! | magic            | `b"QDCIDX01"`              |
//! | task id          | u32                        |
//! | encoder version  | u32                        |
//! | rows `N`         | u32                        |
//! | dim `d`          | u32                        |
//! | payload CRC32    | u32                        |
//! | rows             | `N*d` f32, row-major       |
//! | doc ids          | `N` x (u32 length, UTF-8)  |

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{check_dims, l2_normalize, Embedding, SimilarityScore, ZERO_NORM};
use crate::encoder::{tokenize, EncoderParams, TokenFeatures};
use crate::error::{Error, Result};

pub const INDEX_MAGIC: &[u8; 8] = b"QDCIDX01";
const HEADER_LEN: usize = 8 + 5 * 4;

/// One corpus document, BEIR layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocRecord {
    #[serde(rename = "_id")]
    pub doc_id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
}

impl DocRecord {
    pub fn new(doc_id: impl Into<String>, title: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            title: title.into(),
            text: text.into(),
        }
    }

    /// Title and body joined by a space; what the encoder sees.
    pub fn full_text(&self) -> String {
        format!("{} {}", self.title, self.text)
    }

    pub fn features(&self, vocab: usize) -> TokenFeatures {
        tokenize(&self.full_text(), vocab)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub score: SimilarityScore,
}

/// Search output, best first; equal scores ordered by ascending doc id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankedList {
    pub entries: Vec<ScoredDoc>,
}

impl RankedList {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }
}

/// Immutable `N x d` matrix of unit rows plus the aligned id table.
#[derive(Debug, Clone)]
pub struct CorpusIndex {
    task_id: u32,
    encoder_version: u32,
    dim: usize,
    rows: Vec<f32>,
    doc_ids: Vec<String>,
    norms: Vec<f64>,
}

impl PartialEq for CorpusIndex {
    fn eq(&self, other: &Self) -> bool {
        self.task_id == other.task_id
            && self.encoder_version == other.encoder_version
            && self.dim == other.dim
            && self.doc_ids == other.doc_ids
            && self.rows.len() == other.rows.len()
            && self
                .rows
                .iter()
                .zip(&other.rows)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

fn row_norms(rows: &[f32], dim: usize) -> Vec<f64> {
    rows.chunks_exact(dim)
        .map(|r| r.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt())
        .collect()
}

fn compare_hits(a: &(f64, usize), b: &(f64, usize), ids: &[String]) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| ids[a.1].cmp(&ids[b.1]))
}

impl CorpusIndex {
    /// Assembles an index from precomputed rows (normalized on the way in).
    pub fn from_embeddings(
        task_id: u32,
        encoder_version: u32,
        doc_ids: Vec<String>,
        embeddings: &[Embedding],
    ) -> Result<Self> {
        let first = embeddings.first().ok_or(Error::EmptyCorpus)?;
        if doc_ids.len() != embeddings.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} ids for {} rows",
                doc_ids.len(),
                embeddings.len()
            )));
        }
        let mut seen = HashSet::with_capacity(doc_ids.len());
        for id in &doc_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateDocId(id.clone()));
            }
        }
        let dim = first.dim();
        let mut rows = Vec::with_capacity(dim * embeddings.len());
        for e in embeddings {
            check_dims(dim, e.dim())?;
            let unit;
            let values = if e.is_normalized() {
                e.values()
            } else {
                unit = l2_normalize(e)?;
                unit.values()
            };
            rows.extend(values.iter().map(|&x| x as f32));
        }
        let norms = row_norms(&rows, dim);
        Ok(Self {
            task_id,
            encoder_version,
            dim,
            rows,
            doc_ids,
            norms,
        })
    }

    pub fn task_id(&self) -> u32 {
        self.task_id
    }

    pub fn encoder_version(&self) -> u32 {
        self.encoder_version
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    /// Exact top-`k` by cosine. `k` larger than the corpus returns everything.
    pub fn search_topk(&self, query: &Embedding, k: usize) -> Result<RankedList> {
        check_dims(self.dim, query.dim())?;
        let qn = query.norm();
        if qn < ZERO_NORM {
            return Err(Error::ZeroVector);
        }
        let q = query.values();
        let mut hits: Vec<(f64, usize)> = self
            .rows
            .chunks_exact(self.dim)
            .zip(&self.norms)
            .enumerate()
            .map(|(i, (row, &rn))| {
                let d: f64 = row.iter().zip(q).map(|(&r, &x)| f64::from(r) * x).sum();
                (d / (qn * rn), i)
            })
            .collect();
        let k = k.min(hits.len());
        if k == 0 {
            return Ok(RankedList::default());
        }
        let cmp = |a: &(f64, usize), b: &(f64, usize)| compare_hits(a, b, &self.doc_ids);
        if k < hits.len() {
            hits.select_nth_unstable_by(k - 1, cmp);
            hits.truncate(k);
        }
        hits.sort_unstable_by(cmp);
        Ok(RankedList {
            entries: hits
                .into_iter()
                .map(|(score, i)| ScoredDoc {
                    doc_id: self.doc_ids[i].clone(),
                    score,
                })
                .collect(),
        })
    }

    /// Searches many queries in parallel; output order follows input order.
    pub fn search_batch(&self, queries: &[Embedding], k: usize) -> Result<Vec<RankedList>> {
        queries.par_iter().map(|q| self.search_topk(q, k)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut payload = Vec::with_capacity(self.rows.len() * 4 + self.doc_ids.len() * 16);
        for x in &self.rows {
            payload.extend_from_slice(&x.to_le_bytes());
        }
        for id in &self.doc_ids {
            payload.extend_from_slice(&(id.len() as u32).to_le_bytes());
            payload.extend_from_slice(id.as_bytes());
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        w.write_all(INDEX_MAGIC).map_err(io)?;
        for field in [
            self.task_id,
            self.encoder_version,
            self.doc_ids.len() as u32,
            self.dim as u32,
            crc32fast::hash(&payload),
        ] {
            w.write_all(&field.to_le_bytes()).map_err(io)?;
        }
        w.write_all(&payload).map_err(io)?;
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|reason| Error::corrupt(path, reason))
    }

    fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < HEADER_LEN {
            return Err("truncated header".into());
        }
        if &bytes[..8] != INDEX_MAGIC {
            return Err("bad magic".into());
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let task_id = u32_at(8);
        let encoder_version = u32_at(12);
        let n = u32_at(16) as usize;
        let dim = u32_at(20) as usize;
        let crc = u32_at(24);
        let payload = &bytes[HEADER_LEN..];
        if crc32fast::hash(payload) != crc {
            return Err("payload CRC mismatch".into());
        }
        if n == 0 || dim == 0 {
            return Err("empty index".into());
        }
        let row_bytes = n
            .checked_mul(dim)
            .and_then(|x| x.checked_mul(4))
            .ok_or("header overflow")?;
        if payload.len() < row_bytes {
            return Err(format!(
                "row data is {} bytes, header implies {row_bytes}",
                payload.len()
            ));
        }
        let rows: Vec<f32> = payload[..row_bytes]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut doc_ids = Vec::with_capacity(n);
        let mut off = row_bytes;
        for _ in 0..n {
            let len_bytes = payload.get(off..off + 4).ok_or("truncated id table")?;
            let len = u32::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
            off += 4;
            let raw = payload.get(off..off + len).ok_or("truncated id table")?;
            off += len;
            doc_ids.push(String::from_utf8(raw.to_vec()).map_err(|_| "doc id is not UTF-8")?);
        }
        if off != payload.len() {
            return Err(format!("{} trailing bytes", payload.len() - off));
        }
        if rows.iter().any(|x| !x.is_finite()) {
            return Err("non-finite row entry".into());
        }
        if doc_ids.iter().collect::<HashSet<_>>().len() != n {
            return Err("duplicate doc ids".into());
        }
        let norms = row_norms(&rows, dim);
        Ok(Self {
            task_id,
            encoder_version,
            dim,
            rows,
            doc_ids,
            norms,
        })
    }
}

/// Encodes `title ⊕ " " ⊕ text` for every document with `params`.
pub fn build_index(params: &EncoderParams, corpus: &[DocRecord], task_id: u32) -> Result<CorpusIndex> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut seen = HashSet::with_capacity(corpus.len());
    for doc in corpus {
        if !seen.insert(doc.doc_id.as_str()) {
            return Err(Error::DuplicateDocId(doc.doc_id.clone()));
        }
    }
    let embeddings = corpus
        .par_iter()
        .map(|doc| params.encode(&doc.features(params.vocab())))
        .collect::<Result<Vec<_>>>()?;
    let ids = corpus.iter().map(|d| d.doc_id.clone()).collect();
    CorpusIndex::from_embeddings(task_id, params.version(), ids, &embeddings)
}
