use crate::element::Element;
use crate::error::{KMeansError, Result};
use crate::matrix::{Assignments, Centroids, DataMatrix};

/// Within-cluster sum of squares per batch element, accumulated in `f64`.
pub fn kmeans_objective<T: Element>(
    x: &DataMatrix<T>,
    c: &Centroids<T>,
    a: &Assignments,
) -> Result<Vec<f64>> {
    c.check_compatible(x)?;
    a.check_compatible(x)?;
    if a.clusters() > c.clusters() {
        return Err(KMeansError::contract(format!(
            "assignments reference K={} but only {} centroids exist",
            a.clusters(),
            c.clusters()
        )));
    }
    Ok((0..x.batch())
        .map(|b| {
            block_objective(
                x.batch_slice(b),
                c.batch_slice(b),
                a.batch_slice(b),
                x.dims(),
                0.0,
            )
        })
        .collect())
}

/// Adds the squared distances of `points` to their assigned centroids onto
/// `acc`, in ascending point order.
pub(crate) fn block_objective<T: Element>(
    points: &[T],
    centroids: &[T],
    assign: &[u32],
    dims: usize,
    acc: f64,
) -> f64 {
    points
        .chunks_exact(dims)
        .zip(assign)
        .fold(acc, |acc, (x, &k)| {
            let k = k as usize;
            let c = &centroids[k * dims..(k + 1) * dims];
            acc + x
                .iter()
                .zip(c)
                .map(|(&p, &q)| {
                    let diff = p.as_f64() - q.as_f64();
                    diff * diff
                })
                .sum::<f64>()
        })
}
