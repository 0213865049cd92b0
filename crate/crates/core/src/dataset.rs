use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::element::Element;
use crate::error::{KMeansError, Result};
use crate::init::batch_rng;
use crate::matrix::DataMatrix;

/// Half-width of the cube blob centers are drawn from.
pub const CENTER_RANGE: f64 = 10.0;

/// Parameters of a synthetic Gaussian-blob dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub batch: usize,
    pub points: usize,
    pub true_clusters: usize,
    pub dims: usize,
    /// Standard deviation of every blob.
    pub spread: f64,
    pub seed: u64,
}

/// Isotropic Gaussian blobs around `true_clusters` uniformly drawn centers.
///
/// Batch element `b` draws from its own stream of `seed`, so elements are
/// independent and the whole batch is reproducible.
pub fn generate_dataset<T: Element>(spec: &DatasetSpec) -> Result<DataMatrix<T>> {
    if spec.batch == 0 || spec.points == 0 || spec.true_clusters == 0 || spec.dims == 0 {
        return Err(KMeansError::invalid("dataset counts must all be at least 1"));
    }
    if !(spec.spread >= 0.0 && spec.spread.is_finite()) {
        return Err(KMeansError::invalid("spread must be a finite non-negative value"));
    }
    let d = spec.dims;
    let mut data = Vec::with_capacity(spec.batch * spec.points * d);
    for b in 0..spec.batch {
        let mut rng = batch_rng(spec.seed, b);
        let centers: Vec<f64> = (0..spec.true_clusters * d)
            .map(|_| rng.random_range(-CENTER_RANGE..CENTER_RANGE))
            .collect();
        for _ in 0..spec.points {
            let k = rng.random_range(0..spec.true_clusters);
            for j in 0..d {
                let noise: f64 = StandardNormal.sample(&mut rng);
                data.push(T::from_f64(centers[k * d + j] + spec.spread * noise));
            }
        }
    }
    DataMatrix::new(spec.batch, spec.points, d, data)
}
