//! Materialization-free assignment.
//!
//! Points are split into tiles of `point_tile` rows and processed by
//! independent workers. Each worker scans the centroids in tiles of
//! `centroid_tile` rows, computes the tile's distance block in a small
//! worker-private scratch, reduces it to per-row minima, and folds those into
//! a running (min distance, index) state. Centroid tiles go through a two-slot
//! buffer: tile `t + 1` is loaded into the alternate slot before tile `t` is
//! consumed. No buffer proportional to `N x K` is ever allocated.
//!
//! Centroid tiles are stored transposed (`d x W`, `W` rounded up to the lane
//! width) so the inner loop vectorizes across centroids. Each lane then sums
//! its own pair in ascending coordinate order, which keeps every distance
//! bitwise equal to [`crate::distance::dot`]-based evaluation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counters::Counters;
use crate::distance::{expanded_distance, row_norms};
use crate::element::Element;
use crate::error::{KMeansError, Result};
use crate::matrix::{Assignments, Centroids, DataMatrix};

/// Tile sizes for the assignment kernel plus the update chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TilingConfig {
    pub point_tile: usize,
    pub centroid_tile: usize,
    /// Chunk of the sorted assignment sequence handled per update work item.
    pub update_chunk: usize,
}

impl TilingConfig {
    pub fn new(point_tile: usize, centroid_tile: usize, update_chunk: usize) -> Result<Self> {
        let t = Self {
            point_tile,
            centroid_tile,
            update_chunk,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.point_tile == 0 || self.centroid_tile == 0 || self.update_chunk == 0 {
            return Err(KMeansError::invalid(format!(
                "tile sizes must be at least 1, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Clamps tiles to a problem with `n` points and `k` centroids.
    pub fn clamped(&self, n: usize, k: usize) -> Self {
        Self {
            point_tile: self.point_tile.clamp(1, n.max(1)),
            centroid_tile: self.centroid_tile.clamp(1, k.max(1)),
            update_chunk: self.update_chunk.clamp(1, n.max(1)),
        }
    }
}

impl Default for TilingConfig {
    fn default() -> Self {
        Self {
            point_tile: 128,
            centroid_tile: 256,
            update_chunk: 4096,
        }
    }
}

/// Lanes of the centroid-parallel inner loop.
pub(crate) const LANES: usize = 8;
/// Points sharing each centroid load in the inner loop.
const POINT_BLOCK: usize = 4;

pub(crate) fn padded_width(centroid_tile: usize) -> usize {
    centroid_tile.div_ceil(LANES) * LANES
}

/// Peak bytes of per-worker scratch for a tiling: the point tile, both
/// centroid slots, and the tile distance block.
pub fn working_set_bytes(tiling: &TilingConfig, dims: usize, elem_bytes: usize) -> usize {
    let w = padded_width(tiling.centroid_tile);
    (tiling.point_tile * dims + 2 * w * dims + tiling.point_tile * w) * elem_bytes
}

/// Running per-point minimum over the centroid tiles scanned so far.
#[derive(Debug, Clone, PartialEq)]
pub struct ArgminState<T> {
    pub min_dist: Vec<T>,
    /// `-1` until the first tile has been merged.
    pub min_index: Vec<i64>,
}

impl<T: Element> ArgminState<T> {
    pub fn new(len: usize) -> Self {
        Self {
            min_dist: vec![T::infinity(); len],
            min_index: vec![-1; len],
        }
    }

    fn reset(&mut self, len: usize) {
        self.min_dist.clear();
        self.min_dist.resize(len, T::infinity());
        self.min_index.clear();
        self.min_index.resize(len, -1);
    }

    /// Folds one tile's minima in. Ties keep the existing entry, which always
    /// has the lower global index because tiles are scanned in order.
    pub fn merge(&mut self, tile_min: &[T], tile_argmin: &[u32], k_offset: usize) {
        debug_assert_eq!(tile_min.len(), self.min_dist.len());
        for (((m, a), &tm), &ta) in self
            .min_dist
            .iter_mut()
            .zip(self.min_index.iter_mut())
            .zip(tile_min)
            .zip(tile_argmin)
        {
            // The sentinel check admits a first tile whose minimum is +inf.
            if tm < *m || *a < 0 {
                *m = tm;
                *a = (k_offset + ta as usize) as i64;
            }
        }
    }
}

/// Functional form of [`ArgminState::merge`].
pub fn online_argmin_merge<T: Element>(
    mut state: ArgminState<T>,
    tile_min: &[T],
    tile_argmin: &[u32],
    k_offset: usize,
) -> Result<ArgminState<T>> {
    if tile_min.len() != state.min_dist.len() || tile_argmin.len() != state.min_dist.len() {
        return Err(KMeansError::contract("tile minima length differs from the state"));
    }
    state.merge(tile_min, tile_argmin, k_offset);
    Ok(state)
}

/// Distance block of one tile pair and its per-row minima.
#[derive(Debug, Clone, PartialEq)]
pub struct TileDistances<T> {
    /// `B_N x B_K`, row-major.
    pub block: Vec<T>,
    pub tile_min: Vec<T>,
    /// Local index within the centroid tile, lowest on ties.
    pub tile_argmin: Vec<u32>,
}

/// Distances between a point tile and a centroid tile.
pub fn tile_distances<T: Element>(
    x_tile: &[T],
    c_tile: &[T],
    dims: usize,
    x_norms: &[T],
    c_norms: &[T],
) -> Result<TileDistances<T>> {
    if dims == 0 || !x_tile.len().is_multiple_of(dims) || !c_tile.len().is_multiple_of(dims) {
        return Err(KMeansError::contract("tiles are not whole rows"));
    }
    let (bn, bk) = (x_tile.len() / dims, c_tile.len() / dims);
    if x_norms.len() != bn || c_norms.len() != bk || bk == 0 {
        return Err(KMeansError::contract("norm vectors do not match tile sizes"));
    }
    let w = padded_width(bk);
    let mut ct = vec![T::zero(); dims * w];
    transpose_into(c_tile, dims, w, &mut ct);
    let mut cn = vec![T::zero(); w];
    cn[..bk].copy_from_slice(c_norms);
    let mut padded = vec![T::zero(); bn * w];
    compute_block(x_tile, x_norms, &ct, &cn, dims, w, &mut padded);
    let mut tile_min = vec![T::zero(); bn];
    let mut tile_argmin = vec![0u32; bn];
    row_minima(&padded, w, bk, &mut tile_min, &mut tile_argmin);
    let block = padded
        .chunks_exact(w)
        .flat_map(|r| r[..bk].iter().copied())
        .collect();
    Ok(TileDistances {
        block,
        tile_min,
        tile_argmin,
    })
}

fn transpose_into<T: Element>(rows: &[T], dims: usize, width: usize, dst: &mut [T]) {
    let len = rows.len() / dims;
    for (kk, r) in rows.chunks_exact(dims).enumerate() {
        for (j, &v) in r.iter().enumerate() {
            dst[j * width + kk] = v;
        }
    }
    for j in 0..dims {
        dst[j * width + len..(j + 1) * width].fill(T::zero());
    }
}

/// Fills `out` (`rows x w`) with expanded distances; lanes past the real
/// centroid count hold padding and must be masked by the caller.
fn compute_block<T: Element>(
    x: &[T],
    x_norms: &[T],
    ct: &[T],
    c_norms: &[T],
    dims: usize,
    w: usize,
    out: &mut [T],
) {
    let rows = x_norms.len();
    let mut i0 = 0;
    while i0 + POINT_BLOCK <= rows {
        for kb in (0..w).step_by(LANES) {
            let mut acc = [[T::zero(); LANES]; POINT_BLOCK];
            for j in 0..dims {
                let cv: &[T; LANES] = ct[j * w + kb..j * w + kb + LANES].try_into().unwrap();
                for (p, accp) in acc.iter_mut().enumerate() {
                    let xv = x[(i0 + p) * dims + j];
                    for l in 0..LANES {
                        accp[l] = accp[l] + xv * cv[l];
                    }
                }
            }
            for (p, accp) in acc.iter().enumerate() {
                let xn = x_norms[i0 + p];
                let dst = &mut out[(i0 + p) * w + kb..(i0 + p) * w + kb + LANES];
                for l in 0..LANES {
                    dst[l] = expanded_distance(xn, c_norms[kb + l], accp[l]);
                }
            }
        }
        i0 += POINT_BLOCK;
    }
    for i in i0..rows {
        for kb in (0..w).step_by(LANES) {
            let mut acc = [T::zero(); LANES];
            for j in 0..dims {
                let cv: &[T; LANES] = ct[j * w + kb..j * w + kb + LANES].try_into().unwrap();
                let xv = x[i * dims + j];
                for l in 0..LANES {
                    acc[l] = acc[l] + xv * cv[l];
                }
            }
            let dst = &mut out[i * w + kb..i * w + kb + LANES];
            for l in 0..LANES {
                dst[l] = expanded_distance(x_norms[i], c_norms[kb + l], acc[l]);
            }
        }
    }
}

fn row_minima<T: Element>(block: &[T], w: usize, valid: usize, mins: &mut [T], args: &mut [u32]) {
    for ((row, m), a) in block.chunks_exact(w).zip(mins.iter_mut()).zip(args.iter_mut()) {
        let mut best = 0;
        for l in 1..valid {
            if row[l] < row[best] {
                best = l;
            }
        }
        *m = row[best];
        *a = best as u32;
    }
}

/// Source of point and centroid tiles. Tests swap in a counting loader to
/// check how often each input element is fetched.
pub(crate) trait TileLoader<T>: Sync {
    fn load_points(&self, start: usize, rows: usize, dst: &mut [T]);
    /// Loads centroid rows `start..start + rows` transposed into a
    /// `dims x width` buffer, zero-filling the padding lanes.
    fn load_centroids(&self, start: usize, rows: usize, width: usize, dst: &mut [T]);
}

pub(crate) struct SliceLoader<'a, T> {
    pub points: &'a [T],
    pub centroids: &'a [T],
    pub dims: usize,
}

impl<T: Element> TileLoader<T> for SliceLoader<'_, T> {
    fn load_points(&self, start: usize, rows: usize, dst: &mut [T]) {
        let d = self.dims;
        dst[..rows * d].copy_from_slice(&self.points[start * d..(start + rows) * d]);
    }

    fn load_centroids(&self, start: usize, rows: usize, width: usize, dst: &mut [T]) {
        let d = self.dims;
        transpose_into(&self.centroids[start * d..(start + rows) * d], d, width, dst);
    }
}

struct Workspace<T> {
    x_tile: Vec<T>,
    slots: [Vec<T>; 2],
    slot_norms: [Vec<T>; 2],
    block: Vec<T>,
    tile_min: Vec<T>,
    tile_arg: Vec<u32>,
    state: ArgminState<T>,
}

impl<T: Element> Workspace<T> {
    fn new(bn: usize, w: usize, dims: usize) -> Self {
        Self {
            x_tile: vec![T::zero(); bn * dims],
            slots: [vec![T::zero(); dims * w], vec![T::zero(); dims * w]],
            slot_norms: [vec![T::zero(); w], vec![T::zero(); w]],
            block: vec![T::zero(); bn * w],
            tile_min: vec![T::zero(); bn],
            tile_arg: vec![0; bn],
            state: ArgminState::new(bn),
        }
    }
}

/// Assignment of one batch element through `loader`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn assign_block_with<T: Element, L: TileLoader<T>>(
    loader: &L,
    dims: usize,
    x_norms: &[T],
    c_norms: &[T],
    tiling: &TilingConfig,
    assign_out: &mut [u32],
    min_out: &mut [T],
) {
    let n = x_norms.len();
    let k = c_norms.len();
    let tiling = tiling.clamped(n, k);
    let (bn, bk) = (tiling.point_tile, tiling.centroid_tile);
    let w = padded_width(bk);
    let tiles = k.div_ceil(bk);
    let tile_rows = |t: usize| bk.min(k - t * bk);

    assign_out
        .par_chunks_mut(bn)
        .zip(min_out.par_chunks_mut(bn))
        .enumerate()
        .for_each_init(
            || Workspace::new(bn, w, dims),
            |ws, (pt, (a_out, m_out))| {
                let start = pt * bn;
                let rows = a_out.len();
                let xn = &x_norms[start..start + rows];
                loader.load_points(start, rows, &mut ws.x_tile);
                ws.state.reset(rows);

                let load = |slot: &mut Vec<T>, norms: &mut Vec<T>, t: usize| {
                    let r = tile_rows(t);
                    loader.load_centroids(t * bk, r, w, slot);
                    norms[..r].copy_from_slice(&c_norms[t * bk..t * bk + r]);
                    norms[r..].fill(T::zero());
                };
                {
                    let (s0, _) = ws.slots.split_at_mut(1);
                    let (n0, _) = ws.slot_norms.split_at_mut(1);
                    load(&mut s0[0], &mut n0[0], 0);
                }
                for t in 0..tiles {
                    let cur = t & 1;
                    let (cur_slot, next_slot) = split_pair(&mut ws.slots, cur);
                    let (cur_norms, next_norms) = split_pair(&mut ws.slot_norms, cur);
                    if t + 1 < tiles {
                        load(next_slot, next_norms, t + 1);
                    }
                    let block = &mut ws.block[..rows * w];
                    compute_block(&ws.x_tile[..rows * dims], xn, cur_slot, cur_norms, dims, w, block);
                    row_minima(
                        block,
                        w,
                        tile_rows(t),
                        &mut ws.tile_min[..rows],
                        &mut ws.tile_arg[..rows],
                    );
                    ws.state
                        .merge(&ws.tile_min[..rows], &ws.tile_arg[..rows], t * bk);
                }
                for (i, (a, m)) in a_out.iter_mut().zip(m_out.iter_mut()).enumerate() {
                    *a = ws.state.min_index[i] as u32;
                    *m = ws.state.min_dist[i];
                }
            },
        );
}

/// Returns (`pair[cur]`, `pair[1 - cur]`).
fn split_pair<V>(pair: &mut [V; 2], cur: usize) -> (&mut V, &mut V) {
    let (a, b) = pair.split_at_mut(1);
    if cur == 0 {
        (&mut a[0], &mut b[0])
    } else {
        (&mut b[0], &mut a[0])
    }
}

/// Assignment of one batch element held in memory.
pub(crate) fn assign_block<T: Element>(
    points: &[T],
    centroids: &[T],
    dims: usize,
    tiling: &TilingConfig,
) -> (Vec<u32>, Vec<T>) {
    let x_norms = row_norms(points, dims);
    let c_norms = row_norms(centroids, dims);
    let n = x_norms.len();
    let mut assign = vec![0u32; n];
    let mut mins = vec![T::zero(); n];
    let loader = SliceLoader {
        points,
        centroids,
        dims,
    };
    assign_block_with(&loader, dims, &x_norms, &c_norms, tiling, &mut assign, &mut mins);
    (assign, mins)
}

#[derive(Debug, Clone)]
pub struct FlashAssignOutput<T> {
    pub assignments: Assignments,
    /// Per batch element, each point's squared distance to its centroid.
    pub min_dists: Vec<Vec<T>>,
}

/// Nearest-centroid assignment without materializing the distance matrix.
///
/// Leaves the intermediate-traffic counters untouched: nothing is written to
/// or read from a buffer that outlives a tile step.
pub fn flash_assign<T: Element>(
    x: &DataMatrix<T>,
    c: &Centroids<T>,
    tiling: &TilingConfig,
    _counters: &Counters,
) -> Result<FlashAssignOutput<T>> {
    c.check_compatible(x)?;
    tiling.validate()?;
    let mut values = Vec::with_capacity(x.batch() * x.points());
    let mut min_dists = Vec::with_capacity(x.batch());
    for b in 0..x.batch() {
        let (a, m) = assign_block(x.batch_slice(b), c.batch_slice(b), x.dims(), tiling);
        values.extend_from_slice(&a);
        min_dists.push(m);
    }
    Ok(FlashAssignOutput {
        assignments: Assignments::from_parts_unchecked(
            x.batch(),
            x.points(),
            c.clusters(),
            values,
        ),
        min_dists,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baseline::{argmin_rows, compute_distance_matrix};
    use crate::distance::squared_distance;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::atomic::{AtomicU64, Ordering};

    fn random<T: Element>(rng: &mut ChaCha8Rng, len: usize) -> Vec<T> {
        (0..len).map(|_| T::from_f64(rng.random_range(-3.0..3.0))).collect()
    }

    #[test]
    fn merge_examples() {
        let s = ArgminState::<f64>::new(1);
        let s = online_argmin_merge(s, &[5.0], &[2], 0).unwrap();
        assert_eq!((s.min_dist[0], s.min_index[0]), (5.0, 2));
        let tie = online_argmin_merge(s.clone(), &[5.0], &[0], 8).unwrap();
        assert_eq!((tie.min_dist[0], tie.min_index[0]), (5.0, 2));
        let better = online_argmin_merge(s, &[3.0], &[1], 8).unwrap();
        assert_eq!((better.min_dist[0], better.min_index[0]), (3.0, 9));
    }

    #[test]
    fn merge_rejects_length_mismatch() {
        let s = ArgminState::<f32>::new(2);
        assert!(online_argmin_merge(s, &[1.0], &[0], 0).is_err());
    }

    #[test]
    fn tile_examples() {
        let t = tile_distances(&[0.0f64, 0.0], &[0.0, 0.0, 1.0, 1.0], 2, &[0.0], &[0.0, 2.0]).unwrap();
        assert_eq!((t.tile_min[0], t.tile_argmin[0]), (0.0, 0));
        assert_eq!(t.block, vec![0.0, 2.0]);

        // (1,0) and (-1,0) are both at distance 1 from the origin.
        let t = tile_distances(&[0.0f64, 0.0], &[1.0, 0.0, -1.0, 0.0], 2, &[0.0], &[1.0, 1.0]).unwrap();
        assert_eq!((t.tile_min[0], t.tile_argmin[0]), (1.0, 0));
    }

    #[test]
    fn tile_block_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (bn, bk, d) = (13, 11, 7);
        let x: Vec<f64> = random(&mut rng, bn * d);
        let c: Vec<f64> = random(&mut rng, bk * d);
        let t = tile_distances(&x, &c, d, &row_norms(&x, d), &row_norms(&c, d)).unwrap();
        for i in 0..bn {
            for k in 0..bk {
                let oracle = squared_distance(&x[i * d..(i + 1) * d], &c[k * d..(k + 1) * d]).unwrap();
                let got = t.block[i * bk + k];
                assert!((got - oracle).abs() <= 1e-9 * (1.0 + oracle), "{i},{k}");
            }
        }
    }

    #[test]
    fn points_on_centroids_give_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rows: Vec<f64> = random(&mut rng, 20 * 3);
        let x = DataMatrix::new(1, 20, 3, rows.clone()).unwrap();
        let c = Centroids::new(1, 20, 3, rows).unwrap();
        let tiling = TilingConfig::new(8, 4, 16).unwrap();
        let out = flash_assign(&x, &c, &tiling, &Counters::new()).unwrap();
        assert_eq!(out.assignments.as_slice(), (0..20).collect::<Vec<u32>>().as_slice());
        assert!(out.min_dists[0].iter().all(|&m| m == 0.0));
    }

    #[test]
    fn equidistant_centroids_pick_lowest_index() {
        let x = DataMatrix::from_rows(&[vec![5.0f64, 5.0], vec![5.0, 5.0]]).unwrap();
        let c = Centroids::from_rows(&[vec![0.0f64, 0.0], vec![10.0, 10.0]]).unwrap();
        for bk in [1, 2] {
            let tiling = TilingConfig::new(1, bk, 1).unwrap();
            let out = flash_assign(&x, &c, &tiling, &Counters::new()).unwrap();
            assert_eq!(out.assignments.as_slice(), &[0, 0]);
            assert_eq!(out.min_dists[0], vec![50.0, 50.0]);
        }
    }

    fn check_against_baseline<T: Element>(seed: u64, b: usize, n: usize, k: usize, d: usize, tiling: TilingConfig) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DataMatrix::new(b, n, d, random::<T>(&mut rng, b * n * d)).unwrap();
        let c = Centroids::new(b, k, d, random::<T>(&mut rng, b * k * d)).unwrap();
        let counters = Counters::new();
        let dm = compute_distance_matrix(&x, &c, &counters).unwrap();
        let want = argmin_rows(&dm, &counters);
        let before = counters.snapshot();
        let got = flash_assign(&x, &c, &tiling, &counters).unwrap();
        assert_eq!(counters.snapshot(), before);
        assert_eq!(got.assignments, want, "seed {seed} n {n} k {k} d {d} {tiling:?}");
        for bb in 0..b {
            for i in 0..n {
                assert_eq!(got.min_dists[bb][i], dm.get(bb, i, want.batch_slice(bb)[i] as usize));
            }
        }
    }

    #[test]
    fn ragged_tiles_match_baseline() {
        check_against_baseline::<f64>(1, 1, 33, 7, 5, TilingConfig::new(8, 4, 8).unwrap());
        check_against_baseline::<f32>(2, 2, 33, 7, 3, TilingConfig::new(8, 4, 8).unwrap());
        check_against_baseline::<f32>(3, 1, 100, 29, 17, TilingConfig::new(16, 9, 8).unwrap());
        check_against_baseline::<f64>(4, 1, 1, 1, 1, TilingConfig::new(8, 8, 8).unwrap());
        check_against_baseline::<f32>(5, 1, 257, 64, 32, TilingConfig::new(64, 64, 8).unwrap());
    }

    #[test]
    fn tile_size_invariance_is_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let (n, k, d) = (300, 45, 19);
        let x = DataMatrix::new(1, n, d, random::<f32>(&mut rng, n * d)).unwrap();
        let c = Centroids::new(1, k, d, random::<f32>(&mut rng, k * d)).unwrap();
        let counters = Counters::new();
        let reference = flash_assign(&x, &c, &TilingConfig::new(1, 1, 1).unwrap(), &counters).unwrap();
        for (bn, bk) in [(8, 8), (7, 13), (64, 45), (300, 64), (3, 2)] {
            let out = flash_assign(&x, &c, &TilingConfig::new(bn, bk, 1).unwrap(), &counters).unwrap();
            assert_eq!(out.assignments, reference.assignments);
            let same_bits = out.min_dists[0]
                .iter()
                .zip(&reference.min_dists[0])
                .all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same_bits, "({bn}, {bk})");
        }
    }

    struct CountingLoader<'a> {
        inner: SliceLoader<'a, f64>,
        point_elems: AtomicU64,
        centroid_elems: AtomicU64,
    }

    impl TileLoader<f64> for CountingLoader<'_> {
        fn load_points(&self, start: usize, rows: usize, dst: &mut [f64]) {
            self.point_elems
                .fetch_add((rows * self.inner.dims) as u64, Ordering::Relaxed);
            self.inner.load_points(start, rows, dst);
        }

        fn load_centroids(&self, start: usize, rows: usize, width: usize, dst: &mut [f64]) {
            self.centroid_elems
                .fetch_add((rows * self.inner.dims) as u64, Ordering::Relaxed);
            self.inner.load_centroids(start, rows, width, dst);
        }
    }

    #[test]
    fn io_model_reads_points_once_and_centroids_once_per_point_tile() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (n, k, d) = (101, 23, 6);
        let points: Vec<f64> = random(&mut rng, n * d);
        let centroids: Vec<f64> = random(&mut rng, k * d);
        for (bn, bk) in [(8, 4), (101, 23), (10, 5)] {
            let loader = CountingLoader {
                inner: SliceLoader {
                    points: &points,
                    centroids: &centroids,
                    dims: d,
                },
                point_elems: AtomicU64::new(0),
                centroid_elems: AtomicU64::new(0),
            };
            let tiling = TilingConfig::new(bn, bk, 1).unwrap();
            let mut a = vec![0; n];
            let mut m = vec![0.0; n];
            assign_block_with(
                &loader,
                d,
                &row_norms(&points, d),
                &row_norms(&centroids, d),
                &tiling,
                &mut a,
                &mut m,
            );
            assert_eq!(loader.point_elems.into_inner(), (n * d) as u64);
            assert_eq!(
                loader.centroid_elems.into_inner(),
                (n.div_ceil(bn) * k * d) as u64
            );
        }
    }

    #[test]
    fn working_set_formula() {
        let t = TilingConfig::new(64, 16, 256).unwrap();
        assert_eq!(working_set_bytes(&t, 8, 4), (64 * 8 + 2 * 16 * 8 + 64 * 16) * 4);
        // Ragged centroid tiles are padded to the lane width.
        let t = TilingConfig::new(4, 5, 1).unwrap();
        assert_eq!(working_set_bytes(&t, 2, 8), (4 * 2 + 2 * 8 * 2 + 4 * 8) * 8);
    }
}
