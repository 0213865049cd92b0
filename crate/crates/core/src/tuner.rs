//! Cache-model tiling heuristic and the exhaustive tuner it is compared with.

use std::io::Write;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::config::MergeMode;
use crate::element::Element;
use crate::error::{KMeansError, Result};
use crate::flash_assign::{assign_block, working_set_bytes, TilingConfig};
use crate::matrix::{Centroids, DataMatrix};
use crate::sort_inverse::update_block;
use crate::stats::AccumGrid;

pub const DEFAULT_L1_BYTES: usize = 32 * 1024;
pub const DEFAULT_L2_BYTES_PER_WORKER: usize = 1024 * 1024;

/// Problem dimensions the tiling is chosen for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemShape {
    pub points: usize,
    pub clusters: usize,
    pub dims: usize,
    pub batch: usize,
}

impl ProblemShape {
    pub fn of<T: Element>(x: &DataMatrix<T>, clusters: usize) -> Self {
        Self {
            points: x.points(),
            clusters,
            dims: x.dims(),
            batch: x.batch(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheModel {
    /// Per-worker fast tier.
    pub l1_bytes: usize,
    /// Shared mid tier.
    pub l2_bytes: usize,
    pub elem_bytes: usize,
    pub workers: usize,
}

impl Default for CacheModel {
    fn default() -> Self {
        Self::for_workers(rayon::current_num_threads())
    }
}

impl CacheModel {
    pub fn for_workers(workers: usize) -> Self {
        let workers = workers.max(1);
        Self {
            l1_bytes: DEFAULT_L1_BYTES,
            l2_bytes: DEFAULT_L2_BYTES_PER_WORKER * workers,
            elem_bytes: 4,
            workers,
        }
    }

    pub fn with_elem_bytes(mut self, elem_bytes: usize) -> Self {
        self.elem_bytes = elem_bytes;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.l1_bytes == 0 || self.l2_bytes == 0 || self.workers == 0 {
            return Err(KMeansError::invalid(
                "cache sizes and worker count must be positive",
            ));
        }
        if self.elem_bytes != 4 && self.elem_bytes != 8 {
            return Err(KMeansError::invalid(format!(
                "element size must be 4 or 8 bytes, got {}",
                self.elem_bytes
            )));
        }
        Ok(())
    }

    pub fn l1_budget(&self) -> usize {
        self.l1_bytes / 2
    }

    pub fn l2_budget(&self) -> usize {
        self.l2_bytes / 2
    }

    /// Bytes one worker's tiles may occupy.
    pub fn worker_budget(&self) -> usize {
        self.l1_budget() + self.l2_budget() / self.workers
    }
}

/// Largest power of two `<= v`, or 0 for 0.
pub fn pow2_floor(v: usize) -> usize {
    if v == 0 {
        0
    } else {
        1 << (usize::BITS - 1 - v.leading_zeros())
    }
}

fn clamp(v: usize, lo: usize, hi: usize) -> usize {
    v.max(lo).min(hi)
}

/// Closed-form tiling from cache sizes and shape.
///
/// Tiles from the formula are halved (centroid tile first) until the
/// kernel's actual per-worker footprint, which includes the padded
/// second centroid slot, fits the worker budget.
pub fn heuristic_config(shape: &ProblemShape, cache: &CacheModel) -> TilingConfig {
    let (n, k, d, e) = (
        shape.points.max(1),
        shape.clusters.max(1),
        shape.dims.max(1),
        cache.elem_bytes.max(1),
    );
    let w = cache.workers.max(1);
    let mut point_tile = clamp(pow2_floor(cache.l1_budget() / (d * e)), 8, n);
    let mut centroid_tile = clamp(pow2_floor(cache.l2_budget() / (w * d * e)), 8, k);
    let update_chunk = clamp(pow2_floor(n / (4 * w)), 256, n);
    let floor_n = 8.min(n);
    let floor_k = 8.min(k);
    let fits = |bn: usize, bk: usize| {
        let t = TilingConfig {
            point_tile: bn,
            centroid_tile: bk,
            update_chunk,
        };
        working_set_bytes(&t, d, e) <= cache.worker_budget()
    };
    while !fits(point_tile, centroid_tile) {
        if centroid_tile > floor_k {
            centroid_tile = (centroid_tile / 2).max(floor_k);
        } else if point_tile > floor_n {
            point_tile = (point_tile / 2).max(floor_n);
        } else {
            break;
        }
    }
    TilingConfig {
        point_tile,
        centroid_tile,
        update_chunk,
    }
}

/// Search-space limits for [`enumerate_candidates`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CandidateBounds {
    pub max_point_tile: usize,
    pub max_centroid_tile: usize,
    pub min_update_chunk: usize,
    pub max_update_chunk: usize,
}

impl Default for CandidateBounds {
    fn default() -> Self {
        Self {
            max_point_tile: 1024,
            max_centroid_tile: 1024,
            min_update_chunk: 256,
            max_update_chunk: 65536,
        }
    }
}

impl CandidateBounds {
    pub fn validate(&self) -> Result<()> {
        if self.max_point_tile < 8
            || self.max_centroid_tile < 8
            || self.min_update_chunk == 0
            || self.min_update_chunk > self.max_update_chunk
        {
            return Err(KMeansError::invalid("invalid candidate bounds"));
        }
        Ok(())
    }
}

/// Powers of two from `lo` to `hi`, each clamped to `cap`, deduplicated.
fn pow2_range(lo: usize, hi: usize, cap: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut v = lo;
    loop {
        let c = v.min(cap);
        if out.last() != Some(&c) {
            out.push(c);
        }
        if v >= hi || v >= cap {
            break;
        }
        v *= 2;
    }
    out
}

/// Cartesian product of power-of-two tile sizes within `bounds`.
pub fn enumerate_candidates(shape: &ProblemShape, bounds: &CandidateBounds) -> Result<Vec<TilingConfig>> {
    bounds.validate()?;
    let (n, k) = (shape.points.max(1), shape.clusters.max(1));
    let bns = pow2_range(8, bounds.max_point_tile.min(n), n);
    let bks = pow2_range(8, bounds.max_centroid_tile.min(k), k);
    let chunks = pow2_range(bounds.min_update_chunk, bounds.max_update_chunk.min(n), n);
    let mut out = Vec::with_capacity(bns.len() * bks.len() * chunks.len());
    for &point_tile in &bns {
        for &centroid_tile in &bks {
            for &update_chunk in &chunks {
                out.push(TilingConfig {
                    point_tile,
                    centroid_tile,
                    update_chunk,
                });
            }
        }
    }
    Ok(out)
}

/// Median wall time of `reps` calls after one discarded warm-up call.
pub fn median_latency<F: FnMut() -> Result<()>>(reps: usize, mut f: F) -> Result<Duration> {
    f()?;
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps.max(1) {
        let start = Instant::now();
        f()?;
        times.push(start.elapsed());
    }
    times.sort();
    Ok(times[times.len() / 2])
}

/// One assignment plus segmented update pass over every batch element.
pub fn flash_iteration<T: Element>(
    x: &DataMatrix<T>,
    c: &Centroids<T>,
    tiling: &TilingConfig,
) -> Result<u64> {
    c.check_compatible(x)?;
    let (k, d) = (c.clusters(), x.dims());
    let mut merges = 0;
    for b in 0..x.batch() {
        let points = x.batch_slice(b);
        let (assign, _) = assign_block(points, c.batch_slice(b), d, tiling);
        let mut sums = vec![0i128; k * d];
        let mut counts = vec![0u64; k];
        merges += update_block(
            points,
            &assign,
            d,
            tiling.update_chunk,
            AccumGrid::for_values(points),
            MergeMode::Deterministic,
            &mut sums,
            &mut counts,
        );
    }
    Ok(merges)
}

/// Median latencies of two tilings timed in alternation, one warm-up each.
pub fn interleaved_medians<T: Element>(
    x: &DataMatrix<T>,
    c: &Centroids<T>,
    a: &TilingConfig,
    b: &TilingConfig,
    reps: usize,
) -> Result<(Duration, Duration)> {
    flash_iteration(x, c, a)?;
    flash_iteration(x, c, b)?;
    let mut ta = Vec::with_capacity(reps);
    let mut tb = Vec::with_capacity(reps);
    for r in 0..reps.max(1) {
        // Alternate which goes first so neither always runs on a warm cache.
        let order = if r % 2 == 0 { [(a, &mut ta), (b, &mut tb)] } else { [(b, &mut tb), (a, &mut ta)] };
        for (t, out) in order {
            let start = Instant::now();
            flash_iteration(x, c, t)?;
            out.push(start.elapsed());
        }
    }
    ta.sort();
    tb.sort();
    Ok((ta[ta.len() / 2], tb[tb.len() / 2]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CandidateTiming {
    pub tiling: TilingConfig,
    pub median_latency: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TuneReport {
    pub timings: Vec<CandidateTiming>,
    pub chosen: TilingConfig,
    pub tuning_wall_time: Duration,
    pub heuristic: TilingConfig,
    pub heuristic_wall_time: Duration,
}

impl TuneReport {
    pub fn candidates_tried(&self) -> usize {
        self.timings.len()
    }

    pub fn chosen_latency(&self) -> Duration {
        self.timings
            .iter()
            .find(|t| t.tiling == self.chosen)
            .map(|t| t.median_latency)
            .expect("chosen candidate was timed")
    }

    /// Writes `b_n,b_k,update_chunk,median_latency_ns` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(["b_n", "b_k", "update_chunk", "median_latency_ns"])?;
        for t in &self.timings {
            w.write_record([
                t.tiling.point_tile.to_string(),
                t.tiling.centroid_tile.to_string(),
                t.tiling.update_chunk.to_string(),
                t.median_latency.as_nanos().to_string(),
            ])?;
        }
        w.flush()
            .map_err(|e| KMeansError::Csv(csv::Error::from(e)))?;
        Ok(())
    }
}

/// Benchmarks every candidate on the sample, one after another, and keeps
/// the fastest (first on ties). Also times [`heuristic_config`] on the same
/// shape for comparison.
pub fn exhaustive_tune<T: Element>(
    sample: &DataMatrix<T>,
    centroids: &Centroids<T>,
    candidates: &[TilingConfig],
    reps: usize,
    cache: &CacheModel,
) -> Result<TuneReport> {
    if reps < 3 {
        return Err(KMeansError::invalid("tuning needs at least 3 repetitions"));
    }
    if candidates.is_empty() {
        return Err(KMeansError::invalid("no tuning candidates"));
    }
    centroids.check_compatible(sample)?;
    let start = Instant::now();
    let mut timings = Vec::with_capacity(candidates.len());
    for t in candidates {
        t.validate()?;
        let median = median_latency(reps, || flash_iteration(sample, centroids, t).map(|_| ()))?;
        timings.push(CandidateTiming {
            tiling: *t,
            median_latency: median,
        });
    }
    let tuning_wall_time = start.elapsed();
    let chosen = timings
        .iter()
        .min_by_key(|t| t.median_latency)
        .expect("non-empty")
        .tiling;
    let shape = ProblemShape::of(sample, centroids.clusters());
    let start = Instant::now();
    let heuristic = heuristic_config(&shape, cache);
    let heuristic_wall_time = start.elapsed();
    Ok(TuneReport {
        timings,
        chosen,
        tuning_wall_time,
        heuristic,
        heuristic_wall_time,
    })
}
