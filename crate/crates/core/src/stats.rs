//! Per-cluster sums and counts.
//!
//! Sums are accumulated on a fixed-point grid rather than in floating point.
//! Each coordinate is rounded once onto a grid whose step is derived from the
//! largest magnitude in the batch element (`step = 2^(E - 62)` for
//! `max|x| < 2^E`), and the grid integers are added in `i128`. Integer addition
//! is associative, so the scatter update, the segmented update, and any
//! chunking of a streamed pass produce bitwise-identical sums regardless of
//! merge order. The per-element rounding error is below `2^-62 * 2^E`, finer
//! than one double-precision ulp of the largest coordinate.

use crate::element::Element;
use crate::error::{KMeansError, Result};

/// Fixed-point grid shared by every accumulator of one batch element.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccumGrid {
    /// `q = trunc(v * 2^shift)`.
    shift: i32,
}

/// Exact multiplication by `2^e`, split in two steps so the factor never
/// overflows the exponent range.
fn scale_pow2(v: f64, e: i32) -> f64 {
    let a = e / 2;
    let b = e - a;
    v * pow2(a) * pow2(b)
}

fn pow2(e: i32) -> f64 {
    debug_assert!((-1022..=1023).contains(&e));
    f64::from_bits(((e + 1023) as u64) << 52)
}

impl AccumGrid {
    /// Grid fitting values with `|v| <= max_abs`.
    pub fn from_max_abs(max_abs: f64) -> Self {
        assert!(max_abs.is_finite() && max_abs >= 0.0);
        // Smallest E with max_abs < 2^E.
        let exp = if max_abs == 0.0 {
            0
        } else {
            let biased = ((max_abs.to_bits() >> 52) & 0x7ff) as i32;
            if biased == 0 {
                -1022
            } else {
                biased - 1022
            }
        };
        Self { shift: 62 - exp }
    }

    pub fn for_values<T: Element>(values: &[T]) -> Self {
        Self::from_max_abs(max_abs(values))
    }

    #[inline]
    pub fn quantize(self, v: f64) -> i64 {
        scale_pow2(v, self.shift) as i64
    }

    #[inline]
    pub fn dequantize(self, q: i128) -> f64 {
        scale_pow2(q as f64, -self.shift)
    }

    /// Adds one point row into a grid accumulator row.
    #[inline]
    pub fn accumulate<T: Element>(self, acc: &mut [i128], row: &[T]) {
        debug_assert_eq!(acc.len(), row.len());
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += self.quantize(v.as_f64()) as i128;
        }
    }
}

pub(crate) fn max_abs<T: Element>(values: &[T]) -> f64 {
    values
        .iter()
        .fold(0.0f64, |m, v| m.max(v.as_f64().abs()))
}

/// Per-batch `K x d` sums and `K` counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterStats {
    batch: usize,
    clusters: usize,
    dims: usize,
    grids: Vec<AccumGrid>,
    sums: Vec<i128>,
    counts: Vec<u64>,
}

impl ClusterStats {
    pub fn zeros(clusters: usize, dims: usize, grids: Vec<AccumGrid>) -> Self {
        let batch = grids.len();
        Self {
            batch,
            clusters,
            dims,
            grids,
            sums: vec![0; batch * clusters * dims],
            counts: vec![0; batch * clusters],
        }
    }

    /// Empty stats on the grids implied by `x`.
    pub fn zeros_for<T: Element>(x: &crate::DataMatrix<T>, clusters: usize) -> Self {
        let grids = (0..x.batch())
            .map(|b| AccumGrid::for_values(x.batch_slice(b)))
            .collect();
        Self::zeros(clusters, x.dims(), grids)
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn clusters(&self) -> usize {
        self.clusters
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn grid(&self, b: usize) -> AccumGrid {
        self.grids[b]
    }

    pub fn count(&self, b: usize, k: usize) -> u64 {
        self.counts[b * self.clusters + k]
    }

    pub fn counts(&self, b: usize) -> &[u64] {
        &self.counts[b * self.clusters..(b + 1) * self.clusters]
    }

    pub fn sum(&self, b: usize, k: usize, j: usize) -> f64 {
        let q = self.sums[(b * self.clusters + k) * self.dims + j];
        self.grids[b].dequantize(q)
    }

    /// Sum row of cluster `k` in batch element `b`, converted to `f64`.
    pub fn sum_row(&self, b: usize, k: usize) -> Vec<f64> {
        (0..self.dims).map(|j| self.sum(b, k, j)).collect()
    }

    /// `K x d` row-major sums of batch element `b`.
    pub fn sums_f64(&self, b: usize) -> Vec<f64> {
        (0..self.clusters).flat_map(|k| self.sum_row(b, k)).collect()
    }

    pub(crate) fn batch_parts_mut(&mut self, b: usize) -> (&mut [i128], &mut [u64]) {
        let kd = self.clusters * self.dims;
        (
            &mut self.sums[b * kd..(b + 1) * kd],
            &mut self.counts[b * self.clusters..(b + 1) * self.clusters],
        )
    }

    /// Field-wise sum. Both operands must share shape and grids.
    pub fn combine(&mut self, other: &ClusterStats) -> Result<()> {
        if self.batch != other.batch
            || self.clusters != other.clusters
            || self.dims != other.dims
            || self.grids != other.grids
        {
            return Err(KMeansError::contract(
                "cannot combine cluster stats with different shapes or grids",
            ));
        }
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            *a += b;
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }
}
