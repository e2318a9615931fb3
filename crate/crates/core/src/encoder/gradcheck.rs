//! Finite-difference verification of the analytic gradients.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{contrastive_loss, distill_loss, EncoderParams, GradientSet, TokenFeatures};
use crate::error::Result;

const VOCAB: usize = 64;
const DIM: usize = 8;
const BATCH: usize = 4;
const HARD: usize = 2;
// Low temperatures saturate the softmax and leave coordinates whose true
// gradient sits below the central-difference noise floor.
const TEMPERATURE: f64 = 0.2;
const EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Contrastive,
    Distill,
}

struct Instance {
    new: EncoderParams,
    old: EncoderParams,
    pairs: Vec<(TokenFeatures, TokenFeatures)>,
    hards: Vec<Vec<TokenFeatures>>,
}

fn random_text(rng: &mut ChaCha8Rng, min: usize, max: usize) -> TokenFeatures {
    let len = rng.gen_range(min..=max);
    TokenFeatures::from_ids((0..len).map(|_| rng.gen_range(1..VOCAB as u32)))
}

fn instance(seed: u64, degenerate: bool) -> Result<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let new = EncoderParams::random(VOCAB, DIM, TEMPERATURE, rng.gen())?;
    let old = if degenerate {
        new.clone()
    } else {
        EncoderParams::random(VOCAB, DIM, TEMPERATURE, rng.gen())?
    };
    let pairs = (0..BATCH)
        .map(|_| (random_text(&mut rng, 2, 5), random_text(&mut rng, 4, 10)))
        .collect();
    let hards = (0..BATCH)
        .map(|_| (0..HARD).map(|_| random_text(&mut rng, 4, 10)).collect())
        .collect();
    Ok(Instance {
        new,
        old,
        pairs,
        hards,
    })
}

impl Instance {
    fn eval(&self, kind: LossKind, params: &EncoderParams) -> Result<(f64, GradientSet)> {
        let batch: Vec<_> = self.pairs.iter().map(|(q, d)| (q, d)).collect();
        match kind {
            LossKind::Contrastive => {
                let hards: Vec<Vec<_>> = self.hards.iter().map(|l| l.iter().collect()).collect();
                contrastive_loss(params, &batch, &hards)
            }
            LossKind::Distill => distill_loss(params, &self.old, &batch),
        }
    }

    /// Every coordinate of every row the batch touches.
    fn coordinates(&self) -> Vec<usize> {
        let rows: BTreeSet<u32> = self
            .pairs
            .iter()
            .flat_map(|(q, d)| [q, d])
            .chain(self.hards.iter().flatten())
            .flat_map(|f| f.indices().iter().copied())
            .collect();
        rows.into_iter()
            .flat_map(|r| (0..DIM).map(move |k| r as usize * DIM + k))
            .collect()
    }

    fn compare(&self, kind: LossKind) -> Result<GradCheckStats> {
        let (_, analytic) = self.eval(kind, &self.new)?;
        let mut stats = GradCheckStats::default();
        let mut probe = self.new.clone();
        for idx in self.coordinates() {
            let orig = probe.weights()[idx];
            probe.weights_mut()[idx] = orig + EPS;
            let (plus, _) = self.eval(kind, &probe)?;
            probe.weights_mut()[idx] = orig - EPS;
            let (minus, _) = self.eval(kind, &probe)?;
            probe.weights_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * EPS);
            let a = analytic.values()[idx];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            stats.max_rel_error = stats.max_rel_error.max(rel);
            stats.max_abs_analytic = stats.max_abs_analytic.max(a.abs());
            stats.max_abs_numeric = stats.max_abs_numeric.max(numeric.abs());
        }
        Ok(stats)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GradCheckStats {
    /// `max |a - n| / max(1e-8, |a| + |n|)` over the checked coordinates.
    pub max_rel_error: f64,
    pub max_abs_analytic: f64,
    pub max_abs_numeric: f64,
}

/// Max relative error between analytic and central-difference gradients
/// on a random `V=64, d=8, n=4, H=2` instance built from `seed`.
pub fn grad_check(kind: LossKind, seed: u64) -> Result<f64> {
    Ok(instance(seed, false)?.compare(kind)?.max_rel_error)
}

/// Distillation check with `params_new == params_old`. The analytic gradient
/// is exactly zero there; the central difference is `O(eps^2)`.
pub fn grad_check_degenerate(seed: u64) -> Result<GradCheckStats> {
    instance(seed, true)?.compare(LossKind::Distill)
}
