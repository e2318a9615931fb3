//! Lloyd's k-means with k-means++ seeding, deterministic given a seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 100;
pub const SHIFT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Mean of each cluster's members.
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub iterations: usize,
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid by squared distance; ties go to the lower index.
fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// k-means++ seeding: first center uniform, then proportional to `D^2`.
pub fn kmeans_pp_init(points: &[Vec<f64>], k: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if k == 0 || k > points.len() {
        return Err(Error::TooFewQueries { k, n: points.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![points[rng.gen_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    chosen = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            chosen.expect("positive total weight")
        } else {
            // every point coincides with a center already
            rng.gen_range(0..points.len())
        };
        let c = points[pick].clone();
        for (w, p) in d2.iter_mut().zip(points) {
            *w = w.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    Ok(centroids)
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<usize> {
    points.iter().map(|p| nearest(p, centroids).0).collect()
}

/// Gives every empty cluster the point farthest from its current centroid.
fn reseed_empty(points: &[Vec<f64>], centroids: &[Vec<f64>], assignments: &mut [usize]) {
    let k = centroids.len();
    loop {
        let mut sizes = vec![0usize; k];
        for &a in assignments.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let far = points
            .iter()
            .enumerate()
            .filter(|(i, _)| sizes[assignments[*i]] > 1)
            .map(|(i, p)| (i, sq_dist(p, &centroids[assignments[i]])))
            .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                Some((_, bd)) if bd >= d => best,
                _ => Some((i, d)),
            });
        match far {
            Some((i, _)) => assignments[i] = empty,
            None => return,
        }
    }
}

fn means(points: &[Vec<f64>], assignments: &[usize], k: usize) -> Vec<Vec<f64>> {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        for (s, x) in sums[a].iter_mut().zip(p) {
            *s += x;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        s.iter_mut().for_each(|x| *x /= c as f64);
    }
    sums
}

/// Runs Lloyd iterations from the given centers until no centroid moves
/// more than [`SHIFT_TOLERANCE`] or [`MAX_ITERATIONS`] is reached.
pub fn lloyd(points: &[Vec<f64>], init: Vec<Vec<f64>>) -> Clustering {
    let k = init.len();
    let mut centroids = init;
    let mut assignments = Vec::new();
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        assignments = assign(points, &centroids);
        reseed_empty(points, &centroids, &mut assignments);
        let next = means(points, &assignments, k);
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if shift <= SHIFT_TOLERANCE {
            break;
        }
    }
    Clustering {
        centroids,
        assignments,
        iterations,
    }
}

pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<Clustering> {
    let init = kmeans_pp_init(points, k, seed)?;
    Ok(lloyd(points, init))
}
