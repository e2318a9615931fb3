//! Dense vector primitives shared by the encoder, index, and drift code.
//!
//! All arithmetic is `f64`. Zero vectors are rejected rather than silently
//! normalized: in this system they only arise from upstream bugs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norms below this are treated as exactly zero.
pub const ZERO_NORM: f64 = 1e-12;

/// Cosine similarity; lies in `[-1, 1]` up to rounding.
pub type SimilarityScore = f64;

/// A fixed-dimension real vector, optionally flagged as unit-norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    values: Vec<f64>,
    #[serde(default)]
    normalized: bool,
}

impl Embedding {
    /// Wraps raw values. Fails on an empty vector or non-finite entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyList);
        }
        if let Some(bad) = values.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("embedding entry {bad}")));
        }
        Ok(Self {
            values,
            normalized: false,
        })
    }

    /// Caller guarantees the values are finite and unit-norm.
    pub(crate) fn from_unit(values: Vec<f64>) -> Self {
        debug_assert!((norm(&values) - 1.0).abs() < 1e-9);
        Self {
            values,
            normalized: true,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub(crate) fn check_dims(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimMismatch { expected, actual });
    }
    Ok(())
}

/// Scales `v` to unit L2 norm.
pub fn l2_normalize(v: &Embedding) -> Result<Embedding> {
    normalize_slice(v.values()).map(Embedding::from_unit)
}

pub(crate) fn normalize_slice(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if n < ZERO_NORM {
        return Err(Error::ZeroVector);
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// `a·b / (‖a‖‖b‖)`.
pub fn cosine_sim(a: &Embedding, b: &Embedding) -> Result<SimilarityScore> {
    cosine_slices(a.values(), b.values())
}

pub(crate) fn cosine_slices(a: &[f64], b: &[f64]) -> Result<SimilarityScore> {
    check_dims(a.len(), b.len())?;
    let na = norm(a);
    let nb = norm(b);
    if na < ZERO_NORM || nb < ZERO_NORM {
        return Err(Error::ZeroVector);
    }
    Ok(dot(a, b) / (na * nb))
}

/// Component-wise arithmetic mean, summed left to right. Not re-normalized.
pub fn mean_embedding(vs: &[Embedding]) -> Result<Embedding> {
    let first = vs.first().ok_or(Error::EmptyList)?;
    let dim = first.dim();
    let mut acc = vec![0.0; dim];
    for v in vs {
        check_dims(dim, v.dim())?;
        for (a, x) in acc.iter_mut().zip(v.values()) {
            *a += x;
        }
    }
    let n = vs.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Embedding::new(acc)
}
