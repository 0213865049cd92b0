//! Reference Lloyd iteration with a materialized distance matrix.
//!
//! Four kernels run back to back. The distance kernel works like a GEMM
//! followed by an elementwise epilogue: the `N x K` gram matrix `X C^T` is
//! written to a main-memory buffer, then read back and overwritten in place
//! with squared distances. The argmin kernel reads that matrix once more,
//! points are merged one by one into shared per-cluster accumulators, and sums
//! are divided by counts. The counters record the intermediate traffic and
//! merge events this dataflow incurs.

use std::sync::Mutex;

use rayon::prelude::*;

use crate::config::{EmptyClusterPolicy, KMeansConfig, KMeansResult};
use crate::counters::Counters;
use crate::distance::{dot, expanded_distance, row_norms};
use crate::element::Element;
use crate::error::{KMeansError, Result};
use crate::matrix::{Assignments, Centroids, DataMatrix};
use crate::pipeline::{self, LloydEngine};
use crate::stats::{AccumGrid, ClusterStats};

/// Materialized per-batch `N x K` squared distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix<T> {
    batch: usize,
    points: usize,
    clusters: usize,
    data: Vec<T>,
}

impl<T: Element> DistanceMatrix<T> {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn clusters(&self) -> usize {
        self.clusters
    }

    pub fn get(&self, b: usize, i: usize, k: usize) -> T {
        self.data[(b * self.points + i) * self.clusters + k]
    }

    pub fn row(&self, b: usize, i: usize) -> &[T] {
        let start = (b * self.points + i) * self.clusters;
        &self.data[start..start + self.clusters]
    }

    pub fn size_bytes(&self) -> u64 {
        (self.data.len() * T::BYTES) as u64
    }

    /// Wraps an explicit matrix, e.g. one produced outside this module.
    pub fn from_vec(batch: usize, points: usize, clusters: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != batch * points * clusters || clusters == 0 {
            return Err(KMeansError::contract("distance matrix shape mismatch"));
        }
        Ok(Self {
            batch,
            points,
            clusters,
            data,
        })
    }
}

/// Tries to allocate `len` elements, honoring an optional byte budget.
pub(crate) fn try_alloc<T: Element>(len: usize, mem_limit: Option<u64>) -> Result<Vec<T>> {
    let bytes = (len as u64).saturating_mul(T::BYTES as u64);
    if let Some(limit) = mem_limit {
        if bytes > limit {
            return Err(KMeansError::Resource(format!(
                "distance matrix needs {bytes} bytes, limit is {limit}"
            )));
        }
    }
    let mut v = Vec::new();
    v.try_reserve_exact(len).map_err(|e| {
        KMeansError::Resource(format!("cannot allocate {bytes} bytes for distance matrix: {e}"))
    })?;
    v.resize(len, T::zero());
    Ok(v)
}

pub(crate) fn distance_block<T: Element>(
    points: &[T],
    centroids: &[T],
    dims: usize,
    out: &mut [T],
) {
    let k = centroids.len() / dims;
    out.par_chunks_mut(k)
        .zip(points.par_chunks_exact(dims))
        .for_each(|(row, x)| {
            for (slot, c) in row.iter_mut().zip(centroids.chunks_exact(dims)) {
                *slot = dot(x, c);
            }
        });
    let x_norms = row_norms(points, dims);
    let c_norms = row_norms(centroids, dims);
    out.par_chunks_mut(k)
        .zip(x_norms.par_iter())
        .for_each(|(row, &xn)| {
            for (slot, &cn) in row.iter_mut().zip(&c_norms) {
                *slot = expanded_distance(xn, cn, *slot);
            }
        });
}

/// Traffic of one [`distance_block`] over `entries` matrix entries: the gram
/// write, its read-back and the distance write.
fn count_distance_pass<T: Element>(entries: usize, counters: &Counters) {
    let bytes = (entries * T::BYTES) as u64;
    counters.add_intermediate_written(2 * bytes);
    counters.add_intermediate_read(bytes);
}

/// Kernel 1: materializes the gram matrix, then the distance matrix in its place.
pub fn compute_distance_matrix<T: Element>(
    x: &DataMatrix<T>,
    c: &Centroids<T>,
    counters: &Counters,
) -> Result<DistanceMatrix<T>> {
    compute_distance_matrix_limited(x, c, None, counters)
}

/// [`compute_distance_matrix`] refusing to allocate more than `mem_limit` bytes.
pub fn compute_distance_matrix_limited<T: Element>(
    x: &DataMatrix<T>,
    c: &Centroids<T>,
    mem_limit: Option<u64>,
    counters: &Counters,
) -> Result<DistanceMatrix<T>> {
    c.check_compatible(x)?;
    let (bsz, n, k, d) = (x.batch(), x.points(), c.clusters(), x.dims());
    let mut data = try_alloc::<T>(bsz * n * k, mem_limit)?;
    for (b, out) in data.chunks_exact_mut(n * k).enumerate() {
        distance_block(x.batch_slice(b), c.batch_slice(b), d, out);
    }
    count_distance_pass::<T>(bsz * n * k, counters);
    Ok(DistanceMatrix {
        batch: bsz,
        points: n,
        clusters: k,
        data,
    })
}

pub(crate) fn argmin_block<T: Element>(dist: &[T], clusters: usize, out: &mut [u32]) {
    out.par_iter_mut()
        .zip(dist.par_chunks_exact(clusters))
        .for_each(|(a, row)| {
            let mut best = 0;
            for (kk, &v) in row.iter().enumerate().skip(1) {
                if v < row[best] {
                    best = kk;
                }
            }
            *a = best as u32;
        });
}

/// Kernel 2: row-wise argmin, lowest index on ties.
pub fn argmin_rows<T: Element>(dist: &DistanceMatrix<T>, counters: &Counters) -> Assignments {
    let (bsz, n, k) = (dist.batch, dist.points, dist.clusters);
    let mut values = vec![0u32; bsz * n];
    for (b, out) in values.chunks_exact_mut(n).enumerate() {
        argmin_block(&dist.data[b * n * k..(b + 1) * n * k], k, out);
    }
    counters.add_intermediate_read(dist.size_bytes());
    Assignments::from_parts_unchecked(bsz, n, k, values)
}

struct SharedRow {
    sums: Vec<i128>,
    count: u64,
}

/// Points per work item in the scatter kernel.
const SCATTER_BLOCK: usize = 1024;

/// Per-point merges into lock-protected shared accumulators. Returns the
/// number of merge events.
pub(crate) fn scatter_block<T: Element>(
    points: &[T],
    assign: &[u32],
    dims: usize,
    grid: AccumGrid,
    sums: &mut [i128],
    counts: &mut [u64],
) -> u64 {
    let k = counts.len();
    let shared: Vec<Mutex<SharedRow>> = (0..k)
        .map(|_| {
            Mutex::new(SharedRow {
                sums: vec![0; dims],
                count: 0,
            })
        })
        .collect();
    points
        .par_chunks(SCATTER_BLOCK * dims)
        .zip(assign.par_chunks(SCATTER_BLOCK))
        .for_each(|(xs, ids)| {
            for (x, &id) in xs.chunks_exact(dims).zip(ids) {
                let mut row = shared[id as usize].lock().expect("poisoned accumulator");
                grid.accumulate(&mut row.sums, x);
                row.count += 1;
            }
        });
    for (kk, row) in shared.into_iter().enumerate() {
        let row = row.into_inner().expect("poisoned accumulator");
        sums[kk * dims..(kk + 1) * dims].copy_from_slice(&row.sums);
        counts[kk] = row.count;
    }
    assign.len() as u64
}

/// Kernel 3: token-granularity scatter into shared sums and counts.
///
/// Every point is one synchronized merge covering its sum row and its count,
/// so `synchronized_merges` grows by exactly `B * N`. Counted per scalar, the
/// same traffic is `B * N * d` read-modify-writes.
pub fn scatter_update<T: Element>(
    x: &DataMatrix<T>,
    a: &Assignments,
    clusters: usize,
    counters: &Counters,
) -> Result<ClusterStats> {
    a.check_compatible(x)?;
    if a.clusters() > clusters {
        return Err(KMeansError::contract("assignments reference more clusters than K"));
    }
    let mut stats = ClusterStats::zeros_for(x, clusters);
    for b in 0..x.batch() {
        let grid = stats.grid(b);
        let (sums, counts) = stats.batch_parts_mut(b);
        let merges = scatter_block(x.batch_slice(b), a.batch_slice(b), x.dims(), grid, sums, counts);
        counters.add_merges(merges);
    }
    Ok(stats)
}

/// Output of [`normalize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized<T> {
    pub centroids: Centroids<T>,
    /// Per batch element, ids of clusters that received no points.
    pub empty: Vec<Vec<usize>>,
}

pub(crate) fn normalize_block<T: Element>(
    stats: &ClusterStats,
    b: usize,
    prev: &[T],
    out: &mut [T],
) -> Vec<usize> {
    let d = stats.dims();
    let mut empty = Vec::new();
    for k in 0..stats.clusters() {
        let n = stats.count(b, k);
        let dst = &mut out[k * d..(k + 1) * d];
        if n == 0 {
            dst.copy_from_slice(&prev[k * d..(k + 1) * d]);
            empty.push(k);
        } else {
            for (j, v) in dst.iter_mut().enumerate() {
                *v = T::from_f64(stats.sum(b, k, j) / n as f64);
            }
        }
    }
    empty
}

/// Kernel 4: `c_k = s_k / n_k`.
///
/// Empty clusters keep their previous row under both policies and are
/// reported in [`Normalized::empty`]; reseeding needs the point distances and
/// is done by the Lloyd driver.
pub fn normalize<T: Element>(
    stats: &ClusterStats,
    prev: &Centroids<T>,
    _policy: EmptyClusterPolicy,
) -> Result<Normalized<T>> {
    if stats.batch() != prev.batch()
        || stats.clusters() != prev.clusters()
        || stats.dims() != prev.dims()
    {
        return Err(KMeansError::contract("stats shape does not match centroids"));
    }
    let mut next = prev.clone();
    let empty = (0..stats.batch())
        .map(|b| {
            let mut out = prev.batch_slice(b).to_vec();
            let e = normalize_block(stats, b, prev.batch_slice(b), &mut out);
            next.batch_slice_mut(b).copy_from_slice(&out);
            e
        })
        .collect();
    Ok(Normalized {
        centroids: next,
        empty,
    })
}

/// Output of one [`baseline_iteration`].
#[derive(Debug, Clone)]
pub struct IterationOutput<T> {
    pub assignments: Assignments,
    pub centroids: Centroids<T>,
    pub empty: Vec<Vec<usize>>,
}

/// One full standard iteration: distance, argmin, scatter, normalize.
pub fn baseline_iteration<T: Element>(
    x: &DataMatrix<T>,
    c: &Centroids<T>,
    counters: &Counters,
) -> Result<IterationOutput<T>> {
    let dist = compute_distance_matrix(x, c, counters)?;
    let assignments = argmin_rows(&dist, counters);
    drop(dist);
    let stats = scatter_update(x, &assignments, c.clusters(), counters)?;
    let Normalized { centroids, empty } = normalize(&stats, c, EmptyClusterPolicy::Keep)?;
    Ok(IterationOutput {
        assignments,
        centroids,
        empty,
    })
}

/// The baseline kernels as a Lloyd engine.
#[derive(Debug, Clone, Copy, Default)]
pub struct BaselineEngine {
    /// Byte budget for the distance matrix.
    pub mem_limit: Option<u64>,
}

impl<T: Element> LloydEngine<T> for BaselineEngine {
    fn assign(
        &self,
        points: &[T],
        centroids: &[T],
        dims: usize,
        counters: &Counters,
    ) -> Result<(Vec<u32>, Vec<T>)> {
        let n = points.len() / dims;
        let k = centroids.len() / dims;
        let mut dist = try_alloc::<T>(n * k, self.mem_limit)?;
        distance_block(points, centroids, dims, &mut dist);
        count_distance_pass::<T>(n * k, counters);
        let mut assign = vec![0u32; n];
        argmin_block(&dist, k, &mut assign);
        counters.add_intermediate_read((n * k * T::BYTES) as u64);
        let min_dists = assign
            .iter()
            .enumerate()
            .map(|(i, &a)| dist[i * k + a as usize])
            .collect();
        Ok((assign, min_dists))
    }

    fn update(
        &self,
        points: &[T],
        assign: &[u32],
        dims: usize,
        grid: AccumGrid,
        sums: &mut [i128],
        counts: &mut [u64],
        counters: &Counters,
    ) -> Result<()> {
        counters.add_merges(scatter_block(points, assign, dims, grid, sums, counts));
        Ok(())
    }
}

/// Full Lloyd run driven by the baseline kernels.
pub fn baseline_lloyd_run<T: Element>(
    x: &DataMatrix<T>,
    cfg: &KMeansConfig,
) -> Result<KMeansResult<T>> {
    pipeline::lloyd_run_with(x, cfg, &BaselineEngine::default())
}
