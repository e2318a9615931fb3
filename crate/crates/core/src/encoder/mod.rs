//! Hashed bag-of-tokens encoder with a single trainable `V x d` projection.
//!
//! `encode(text) = normalize(sum_j count_j * W[id_j] / total)`. Small enough
//! to differentiate by hand, expressive enough that contrastive training
//! changes retrieval quality.

mod gradcheck;
mod loss;
mod tokenize;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::embedding::{dot, Embedding, ZERO_NORM};
use crate::error::{Error, Result};

pub use gradcheck::{grad_check, grad_check_degenerate, GradCheckStats, LossKind};
pub use loss::{contrastive_loss, distill_loss};
pub(crate) use loss::{accumulate_contrastive, accumulate_distill};
pub use tokenize::{fnv1a64, tokenize, words, TokenFeatures, EMPTY_TOKEN_ID};

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"QDCENC01";

/// What `encode` returns after mean pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputMode {
    /// L2-normalized output. The only mode that is persisted.
    #[default]
    Normalized,
    /// Raw mean-pooled output; used to build exact translation fixtures.
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    weights: Vec<f64>,
    vocab: usize,
    dim: usize,
    temperature: f64,
    version: u32,
    mode: OutputMode,
}

impl EncoderParams {
    pub fn from_weights(
        vocab: usize,
        dim: usize,
        temperature: f64,
        version: u32,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if vocab == 0 || dim == 0 {
            return Err(Error::ShapeMismatch("vocab and dim must be positive".into()));
        }
        if weights.len() != vocab * dim {
            return Err(Error::ShapeMismatch(format!(
                "expected {} weights for {vocab}x{dim}, got {}",
                vocab * dim,
                weights.len()
            )));
        }
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::ShapeMismatch(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("encoder weights".into()));
        }
        Ok(Self {
            weights,
            vocab,
            dim,
            temperature,
            version,
            mode: OutputMode::Normalized,
        })
    }

    /// Gaussian init, entries `N(0, 1/d)`, tagged version 0.
    pub fn random(vocab: usize, dim: usize, temperature: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (dim as f64).sqrt();
        let weights = (0..vocab * dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                scale * z
            })
            .collect();
        Self::from_weights(vocab, dim, temperature, 0, weights)
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mode(&self) -> OutputMode {
        self.mode
    }

    pub fn row(&self, id: u32) -> &[f64] {
        let start = id as usize * self.dim;
        &self.weights[start..start + self.dim]
    }

    pub fn with_version(mut self, version: u32) -> Self {
        self.version = version;
        self
    }

    pub fn with_mode(mut self, mode: OutputMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Result<Self> {
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::ShapeMismatch(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        self.temperature = temperature;
        Ok(self)
    }

    /// Mutable access for tests and fixtures that plant specific weights.
    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub(crate) fn same_shape(&self, other: &EncoderParams) -> Result<()> {
        if self.vocab != other.vocab || self.dim != other.dim {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} vs {}x{}",
                self.vocab, self.dim, other.vocab, other.dim
            )));
        }
        Ok(())
    }

    fn check_features(&self, feats: &TokenFeatures) -> Result<()> {
        match feats.indices().last() {
            Some(&id) if id as usize >= self.vocab => Err(Error::TokenOutOfRange {
                id,
                vocab: self.vocab,
            }),
            _ => Ok(()),
        }
    }

    fn pooled(&self, feats: &TokenFeatures) -> Result<Vec<f64>> {
        self.check_features(feats)?;
        let mut raw = vec![0.0; self.dim];
        for (id, w) in feats.weights() {
            for (r, x) in raw.iter_mut().zip(self.row(id)) {
                *r += w * x;
            }
        }
        Ok(raw)
    }

    /// Forward pass keeping what the backward pass needs.
    pub(crate) fn forward(&self, feats: &TokenFeatures) -> Result<Forward> {
        let raw = self.pooled(feats)?;
        let norm = dot(&raw, &raw).sqrt();
        if norm < ZERO_NORM {
            return Err(Error::ZeroVector);
        }
        let out = match self.mode {
            OutputMode::Normalized => raw.iter().map(|x| x / norm).collect(),
            OutputMode::Linear => raw,
        };
        Ok(Forward { out, norm })
    }

    /// Pushes `d loss / d output` back into `grads` for this input.
    pub(crate) fn backward(
        &self,
        feats: &TokenFeatures,
        fwd: &Forward,
        grad_out: &[f64],
        grads: &mut GradientSet,
    ) {
        let grad_raw: Vec<f64> = match self.mode {
            OutputMode::Normalized => {
                let along = dot(grad_out, &fwd.out);
                grad_out
                    .iter()
                    .zip(&fwd.out)
                    .map(|(g, u)| (g - along * u) / fwd.norm)
                    .collect()
            }
            OutputMode::Linear => grad_out.to_vec(),
        };
        for (id, w) in feats.weights() {
            let row = grads.row_mut(id);
            for (r, g) in row.iter_mut().zip(&grad_raw) {
                *r += w * g;
            }
        }
    }

    /// Embeds one tokenized text.
    pub fn encode(&self, feats: &TokenFeatures) -> Result<Embedding> {
        let fwd = self.forward(feats)?;
        Ok(match self.mode {
            OutputMode::Normalized => Embedding::from_unit(fwd.out),
            OutputMode::Linear => Embedding::new(fwd.out)?,
        })
    }

    pub fn encode_text(&self, text: &str) -> Result<Embedding> {
        self.encode(&tokenize(text, self.vocab))
    }

    /// Writes the little-endian snapshot format.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        w.write_all(SNAPSHOT_MAGIC).map_err(io)?;
        w.write_all(&(self.vocab as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&(self.dim as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&self.temperature.to_le_bytes()).map_err(io)?;
        w.write_all(&self.version.to_le_bytes()).map_err(io)?;
        for x in &self.weights {
            w.write_all(&x.to_le_bytes()).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut bytes = Vec::new();
        BufReader::new(file)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
        Self::from_snapshot_bytes(&bytes).map_err(|reason| Error::corrupt(path, reason))
    }

    fn from_snapshot_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        const HEADER: usize = 8 + 4 + 4 + 8 + 4;
        if bytes.len() < HEADER {
            return Err("truncated header".into());
        }
        if &bytes[..8] != SNAPSHOT_MAGIC {
            return Err("bad magic".into());
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let vocab = u32_at(8) as usize;
        let dim = u32_at(12) as usize;
        let temperature = f64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let version = u32_at(24);
        let expected = vocab
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(8))
            .ok_or("header overflow")?;
        if bytes.len() - HEADER != expected {
            return Err(format!(
                "payload is {} bytes, header implies {expected}",
                bytes.len() - HEADER
            ));
        }
        let weights = bytes[HEADER..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_weights(vocab, dim, temperature, version, weights).map_err(|e| e.to_string())
    }
}

pub(crate) struct Forward {
    pub(crate) out: Vec<f64>,
    norm: f64,
}

/// Dense gradient with respect to the projection matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    d_weights: Vec<f64>,
    vocab: usize,
    dim: usize,
}

impl GradientSet {
    pub fn zeros_like(params: &EncoderParams) -> Self {
        Self {
            d_weights: vec![0.0; params.vocab * params.dim],
            vocab: params.vocab,
            dim: params.dim,
        }
    }

    pub fn from_values(vocab: usize, dim: usize, d_weights: Vec<f64>) -> Result<Self> {
        if d_weights.len() != vocab * dim {
            return Err(Error::ShapeMismatch(format!(
                "gradient has {} entries, expected {}",
                d_weights.len(),
                vocab * dim
            )));
        }
        Ok(Self {
            d_weights,
            vocab,
            dim,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.d_weights
    }

    fn row_mut(&mut self, id: u32) -> &mut [f64] {
        let start = id as usize * self.dim;
        &mut self.d_weights[start..start + self.dim]
    }

    pub fn add_assign(&mut self, other: &GradientSet) -> Result<()> {
        if self.vocab != other.vocab || self.dim != other.dim {
            return Err(Error::ShapeMismatch("gradient shapes differ".into()));
        }
        for (a, b) in self.d_weights.iter_mut().zip(&other.d_weights) {
            *a += b;
        }
        Ok(())
    }
}

/// One SGD step with decoupled weight decay: `W - lr*dW - lr*wd*W`.
pub fn sgd_step(params: &EncoderParams, grads: &GradientSet, lr: f64, wd: f64) -> Result<EncoderParams> {
    if grads.vocab != params.vocab || grads.dim != params.dim {
        return Err(Error::ShapeMismatch(format!(
            "gradient {}x{} vs params {}x{}",
            grads.vocab, grads.dim, params.vocab, params.dim
        )));
    }
    let mut next = params.clone();
    for (w, g) in next.weights.iter_mut().zip(&grads.d_weights) {
        *w = *w - lr * g - lr * wd * *w;
    }
    if next.weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFinite("sgd update".into()));
    }
    Ok(next)
}
