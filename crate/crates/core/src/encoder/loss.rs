//! Training objectives and their exact gradients.

use super::{EncoderParams, Forward, GradientSet, TokenFeatures};
use crate::embedding::dot;
use crate::error::{Error, Result};

/// InfoNCE over in-batch and hard negatives.
///
/// For query `i` the candidates are every batch document `d_1..d_n`
/// (`d_i` is the positive) followed by that query's hard negatives;
/// logits are `cos / tau`. The loss is the batch mean of
/// `logsumexp(logits) - logit_pos`.
///
/// `hard_negs` is either empty or holds one (possibly empty) list per pair.
pub fn contrastive_loss(
    params: &EncoderParams,
    batch: &[(&TokenFeatures, &TokenFeatures)],
    hard_negs: &[Vec<&TokenFeatures>],
) -> Result<(f64, GradientSet)> {
    let mut grads = GradientSet::zeros_like(params);
    let loss = accumulate_contrastive(params, batch, hard_negs, &mut grads)?;
    Ok((loss, grads))
}

pub(crate) fn accumulate_contrastive(
    params: &EncoderParams,
    batch: &[(&TokenFeatures, &TokenFeatures)],
    hard_negs: &[Vec<&TokenFeatures>],
    grads: &mut GradientSet,
) -> Result<f64> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    if !hard_negs.is_empty() && hard_negs.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} hard-negative lists for a batch of {n}",
            hard_negs.len()
        )));
    }
    let inv_tau = 1.0 / params.temperature();
    let dim = params.dim();

    let queries = batch
        .iter()
        .map(|(q, _)| params.forward(q))
        .collect::<Result<Vec<_>>>()?;
    let docs = batch
        .iter()
        .map(|(_, d)| params.forward(d))
        .collect::<Result<Vec<_>>>()?;
    let hards = hard_negs
        .iter()
        .map(|list| list.iter().map(|h| params.forward(h)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;

    let mut g_queries = vec![vec![0.0; dim]; n];
    let mut g_docs = vec![vec![0.0; dim]; n];
    let mut g_hards: Vec<Vec<Vec<f64>>> = hards
        .iter()
        .map(|list| vec![vec![0.0; dim]; list.len()])
        .collect();

    let scale = inv_tau / n as f64;
    let mut total = 0.0;
    for i in 0..n {
        let q = &queries[i].out;
        let no_hards = Vec::new();
        let hard_i = hards.get(i).unwrap_or(&no_hards);
        let cands: Vec<&Forward> = docs.iter().chain(hard_i.iter()).collect();
        let logits: Vec<f64> = cands.iter().map(|c| dot(q, &c.out) * inv_tau).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - logits[i];

        for (c, (cand, logit)) in cands.iter().zip(&logits).enumerate() {
            let p = (logit - lse).exp();
            let coeff = p - if c == i { 1.0 } else { 0.0 };
            if coeff == 0.0 {
                continue;
            }
            let w = coeff * scale;
            for k in 0..dim {
                g_queries[i][k] += w * cand.out[k];
            }
            let target = if c < n {
                &mut g_docs[c]
            } else {
                &mut g_hards[i][c - n]
            };
            for k in 0..dim {
                target[k] += w * q[k];
            }
        }
    }

    for (((q, _), fwd), g) in batch.iter().zip(&queries).zip(&g_queries) {
        params.backward(q, fwd, g, grads);
    }
    for (((_, d), fwd), g) in batch.iter().zip(&docs).zip(&g_docs) {
        params.backward(d, fwd, g, grads);
    }
    for ((list, fwds), gs) in hard_negs.iter().zip(&hards).zip(&g_hards) {
        for ((h, fwd), g) in list.iter().zip(fwds).zip(gs) {
            params.backward(h, fwd, g, grads);
        }
    }
    Ok(total / n as f64)
}

/// Cosine-distance distillation of queries and documents toward a frozen
/// encoder: `(1/n) sum_i [D(q_i) + D(d_i)]` with `D(x) = 1 - cos(new(x), old(x))`.
///
/// `D` is evaluated in chordal form `|u - v|^2 / 2`, identical for unit vectors
/// and accurate near zero. Gradients flow only into `params_new`.
pub fn distill_loss(
    params_new: &EncoderParams,
    params_old: &EncoderParams,
    batch: &[(&TokenFeatures, &TokenFeatures)],
) -> Result<(f64, GradientSet)> {
    let mut grads = GradientSet::zeros_like(params_new);
    let loss = accumulate_distill(params_new, params_old, batch, &mut grads)?;
    Ok((loss, grads))
}

pub(crate) fn accumulate_distill(
    params_new: &EncoderParams,
    params_old: &EncoderParams,
    batch: &[(&TokenFeatures, &TokenFeatures)],
    grads: &mut GradientSet,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    params_new.same_shape(params_old)?;
    let n = batch.len() as f64;
    let mut total = 0.0;
    for (q, d) in batch {
        for feats in [*q, *d] {
            let new = params_new.forward(feats)?;
            let old = params_old.forward(feats)?;
            let diff: Vec<f64> = new.out.iter().zip(&old.out).map(|(a, b)| a - b).collect();
            total += 0.5 * dot(&diff, &diff);
            let g: Vec<f64> = diff.iter().map(|x| x / n).collect();
            params_new.backward(feats, &new, &g, grads);
        }
    }
    Ok(total / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::tokenize;

    fn feats(ids: &[u32]) -> TokenFeatures {
        TokenFeatures::from_ids(ids.iter().copied())
    }

    fn identity(v: usize) -> EncoderParams {
        let mut w = vec![0.0; v * v];
        for i in 0..v {
            w[i * v + i] = 1.0;
        }
        EncoderParams::from_weights(v, v, 0.05, 0, w).unwrap()
    }

    #[test]
    fn single_pair_has_zero_loss() {
        let p = EncoderParams::random(32, 4, 0.05, 0).unwrap();
        let (q, d) = (feats(&[1, 2]), feats(&[3]));
        let (loss, _) = contrastive_loss(&p, &[(&q, &d)], &[]).unwrap();
        assert!(loss.abs() < 1e-15);
    }

    #[test]
    fn equal_similarities_give_ln2() {
        // all four query-doc cosines are zero
        let p = identity(4);
        let (q1, q2, d1, d2) = (feats(&[0]), feats(&[1]), feats(&[2]), feats(&[3]));
        let (loss, _) = contrastive_loss(&p, &[(&q1, &d1), (&q2, &d2)], &[]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_rejected() {
        let p = identity(4);
        assert!(matches!(contrastive_loss(&p, &[], &[]), Err(Error::EmptyBatch)));
        assert!(matches!(distill_loss(&p, &p, &[]), Err(Error::EmptyBatch)));
    }

    #[test]
    fn distill_identical_and_orthogonal() {
        let p = EncoderParams::random(32, 4, 0.05, 1).unwrap();
        let (q, d) = (tokenize("alpha beta", 32), tokenize("gamma delta eps", 32));
        let (loss, g) = distill_loss(&p, &p, &[(&q, &d)]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.values().iter().all(|x| *x == 0.0));

        // new maps every token to e0, old to e1
        let mut new_w = vec![0.0; 8 * 2];
        let mut old_w = vec![0.0; 8 * 2];
        for v in 0..8 {
            new_w[v * 2] = 1.0;
            old_w[v * 2 + 1] = 1.0;
        }
        let new = EncoderParams::from_weights(8, 2, 0.05, 1, new_w).unwrap();
        let old = EncoderParams::from_weights(8, 2, 0.05, 0, old_w).unwrap();
        let (a, b, c) = (feats(&[1]), feats(&[2, 3]), feats(&[7]));
        let (loss, _) = distill_loss(&new, &old, &[(&a, &b), (&c, &a)]).unwrap();
        assert!((loss - 2.0).abs() < 1e-15);

        let wrong = identity(4);
        assert!(matches!(
            distill_loss(&new, &wrong, &[(&a, &b)]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    fn random_batch(seed: u64, n: usize) -> Vec<(TokenFeatures, TokenFeatures)> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let q: Vec<u32> = (0..3).map(|_| rng.gen_range(0..64)).collect();
                let d: Vec<u32> = (0..6).map(|_| rng.gen_range(0..64)).collect();
                (feats(&q), feats(&d))
            })
            .collect()
    }

    #[test]
    fn duplicate_pair_increases_loss() {
        let p = EncoderParams::random(64, 8, 0.05, 42).unwrap();
        let batch = random_batch(42, 6);
        let refs: Vec<_> = batch.iter().map(|(q, d)| (q, d)).collect();
        let (base, _) = contrastive_loss(&p, &refs, &[]).unwrap();
        let mut dup = refs.clone();
        dup.push(refs[2]);
        let (with_dup, _) = contrastive_loss(&p, &dup, &[]).unwrap();
        // compared as sums: the batch mean also changes its divisor
        let (base, with_dup) = (base * refs.len() as f64, with_dup * dup.len() as f64);
        assert!(with_dup > base, "{with_dup} <= {base}");
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]
        #[test]
        fn loss_is_permutation_invariant(seed in 0u64..1000, rot in 1usize..7) {
            let p = EncoderParams::random(64, 8, 0.05, seed).unwrap();
            let batch = random_batch(seed, 7);
            let negs: Vec<Vec<&TokenFeatures>> =
                (0..7).map(|i| vec![&batch[(i + 3) % 7].1]).collect();
            let refs: Vec<_> = batch.iter().map(|(q, d)| (q, d)).collect();
            let (a, _) = contrastive_loss(&p, &refs, &negs).unwrap();
            let mut r2 = refs.clone();
            let mut n2 = negs.clone();
            r2.rotate_left(rot);
            n2.rotate_left(rot);
            r2.swap(0, 4);
            n2.swap(0, 4);
            let (b, _) = contrastive_loss(&p, &r2, &n2).unwrap();
            proptest::prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
