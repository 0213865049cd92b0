use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::InitMethod;
use crate::element::Element;
use crate::error::{KMeansError, Result};
use crate::matrix::{Centroids, DataMatrix};

/// Generator for batch element `b`: one stream per element of the same seed.
pub(crate) fn batch_rng(seed: u64, b: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b as u64);
    rng
}

/// Seeds `K` centroids per batch element.
pub fn init_centroids<T: Element>(
    x: &DataMatrix<T>,
    clusters: usize,
    seed: u64,
    method: InitMethod,
) -> Result<Centroids<T>> {
    let (n, d) = (x.points(), x.dims());
    if clusters == 0 || clusters > n {
        return Err(KMeansError::invalid(format!(
            "cannot seed K={clusters} centroids from N={n} points"
        )));
    }
    let mut data = Vec::with_capacity(x.batch() * clusters * d);
    for b in 0..x.batch() {
        let mut rng = batch_rng(seed, b);
        let picks = match method {
            InitMethod::RandomDistinct => random_distinct(&mut rng, n, clusters),
            InitMethod::KMeansPlusPlus => kmeanspp(x.batch_slice(b), d, clusters, &mut rng),
        };
        for i in picks {
            data.extend_from_slice(x.row(b, i));
        }
    }
    Centroids::new(x.batch(), clusters, d, data)
}

pub(crate) fn random_distinct(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    index::sample(rng, n, k).into_vec()
}

fn sq_dist_f64<T: Element>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&p, &q)| {
            let diff = p.as_f64() - q.as_f64();
            diff * diff
        })
        .sum()
}

fn kmeanspp<T: Element>(points: &[T], d: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = points.len() / d;
    let row = |i: usize| &points[i * d..(i + 1) * d];
    let first = rng.random_range(0..n);
    let mut picks = vec![first];
    let mut chosen = vec![false; n];
    chosen[first] = true;
    let mut best: Vec<f64> = (0..n).map(|i| sq_dist_f64(row(i), row(first))).collect();
    while picks.len() < k {
        let total: f64 = best.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in best.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                acc += w;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive total implies a positive weight")
        } else {
            // Every remaining point coincides with a chosen one.
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[next] = true;
        picks.push(next);
        for (i, w) in best.iter_mut().enumerate() {
            *w = w.min(sq_dist_f64(row(i), row(next)));
        }
    }
    picks
}
