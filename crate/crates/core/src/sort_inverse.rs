//! Segment-level centroid aggregation.
//!
//! The assignment vector is argsorted (stably) so equal cluster ids form
//! contiguous runs. The sorted sequence is cut into fixed-size chunks handled
//! by independent workers; each worker finds the runs inside its chunk,
//! gathers the corresponding rows of `X` through the permutation, accumulates
//! them in private storage, and issues exactly one synchronized merge per run.
//! `X` itself is never reordered.

use std::sync::Mutex;

use rayon::prelude::*;

use crate::config::MergeMode;
use crate::counters::Counters;
use crate::element::Element;
use crate::error::{KMeansError, Result};
use crate::matrix::{Assignments, DataMatrix};
use crate::stats::{AccumGrid, ClusterStats};

/// Stable argsort of one batch element's assignments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SortedIndex {
    pub sorted_idx: Vec<u32>,
    pub a_sorted: Vec<u32>,
}

/// Maximal run of one cluster id, `[start, end)` in sorted positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub cluster: u32,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

/// Stable argsort of `ids` (all `< clusters`).
///
/// Counting sort when `clusters <= ids.len()`, otherwise a stable comparison
/// sort so the histogram never dominates.
pub fn argsort_assignments(ids: &[u32], clusters: usize) -> SortedIndex {
    let n = ids.len();
    let sorted_idx: Vec<u32> = if clusters <= n {
        let mut offsets = vec![0usize; clusters + 1];
        for &id in ids {
            offsets[id as usize + 1] += 1;
        }
        for k in 0..clusters {
            offsets[k + 1] += offsets[k];
        }
        let mut out = vec![0u32; n];
        for (i, &id) in ids.iter().enumerate() {
            let slot = &mut offsets[id as usize];
            out[*slot] = i as u32;
            *slot += 1;
        }
        out
    } else {
        let mut idx: Vec<u32> = (0..n as u32).collect();
        idx.sort_by_key(|&i| ids[i as usize]);
        idx
    };
    let a_sorted = sorted_idx.iter().map(|&i| ids[i as usize]).collect();
    SortedIndex {
        sorted_idx,
        a_sorted,
    }
}

/// Maximal runs of `chunk`, with positions offset by `chunk_offset`.
pub fn detect_segments(chunk: &[u32], chunk_offset: usize) -> Result<Vec<Segment>> {
    if let Some(pos) = chunk.windows(2).position(|w| w[0] > w[1]) {
        return Err(KMeansError::contract(format!(
            "sorted ids decrease at position {}",
            chunk_offset + pos + 1
        )));
    }
    Ok(segments_unchecked(chunk, chunk_offset))
}

fn segments_unchecked(chunk: &[u32], chunk_offset: usize) -> Vec<Segment> {
    let mut segs = Vec::new();
    let mut start = 0;
    for i in 1..=chunk.len() {
        if i == chunk.len() || chunk[i] != chunk[start] {
            segs.push(Segment {
                start: chunk_offset + start,
                end: chunk_offset + i,
                cluster: chunk[start],
            });
            start = i;
        }
    }
    segs
}

/// Private partial of one segment.
struct Partial {
    cluster: u32,
    sums: Vec<i128>,
    count: u64,
}

fn gather_segment<T: Element>(
    points: &[T],
    dims: usize,
    grid: AccumGrid,
    idx: &[u32],
    acc: &mut [i128],
) {
    acc.fill(0);
    for &i in idx {
        let i = i as usize;
        grid.accumulate(acc, &points[i * dims..(i + 1) * dims]);
    }
}

/// Segmented update of one batch element into `sums`/`counts`. Returns the
/// number of synchronized merges.
#[allow(clippy::too_many_arguments)]
pub(crate) fn update_block<T: Element>(
    points: &[T],
    assign: &[u32],
    dims: usize,
    chunk: usize,
    grid: AccumGrid,
    mode: MergeMode,
    sums: &mut [i128],
    counts: &mut [u64],
) -> u64 {
    let k = counts.len();
    let sorted = argsort_assignments(assign, k);
    let chunk = chunk.max(1);
    match mode {
        MergeMode::Deterministic => {
            let per_chunk: Vec<Vec<Partial>> = sorted
                .a_sorted
                .par_chunks(chunk)
                .zip(sorted.sorted_idx.par_chunks(chunk))
                .map(|(ids, idx)| {
                    segments_unchecked(ids, 0)
                        .into_iter()
                        .map(|seg| {
                            let mut acc = vec![0i128; dims];
                            gather_segment(points, dims, grid, &idx[seg.start..seg.end], &mut acc);
                            Partial {
                                cluster: seg.cluster,
                                sums: acc,
                                count: seg.len() as u64,
                            }
                        })
                        .collect()
                })
                .collect();
            let mut merges = 0;
            for p in per_chunk.iter().flatten() {
                let c = p.cluster as usize;
                for (a, s) in sums[c * dims..(c + 1) * dims].iter_mut().zip(&p.sums) {
                    *a += s;
                }
                counts[c] += p.count;
                merges += 1;
            }
            merges
        }
        MergeMode::Relaxed => {
            let shared: Vec<Mutex<(&mut [i128], &mut u64)>> = sums
                .chunks_exact_mut(dims)
                .zip(counts.iter_mut())
                .map(Mutex::new)
                .collect();
            sorted
                .a_sorted
                .par_chunks(chunk)
                .zip(sorted.sorted_idx.par_chunks(chunk))
                .map_init(
                    || vec![0i128; dims],
                    |acc, (ids, idx)| {
                        let segs = segments_unchecked(ids, 0);
                        for seg in &segs {
                            gather_segment(points, dims, grid, &idx[seg.start..seg.end], acc);
                            let mut row = shared[seg.cluster as usize]
                                .lock()
                                .expect("poisoned accumulator");
                            for (a, s) in row.0.iter_mut().zip(acc.iter()) {
                                *a += s;
                            }
                            *row.1 += seg.len() as u64;
                        }
                        segs.len() as u64
                    },
                )
                .sum()
        }
    }
}

/// Per-cluster sums and counts via argsort and per-segment merges.
///
/// `synchronized_merges` grows by the number of segments over all chunks,
/// which is at most `K' + ceil(N / chunk) - 1` per batch element for `K'`
/// distinct ids.
pub fn sort_inverse_update<T: Element>(
    x: &DataMatrix<T>,
    a: &Assignments,
    clusters: usize,
    chunk: usize,
    counters: &Counters,
) -> Result<ClusterStats> {
    sort_inverse_update_with(x, a, clusters, chunk, MergeMode::Deterministic, counters)
}

pub fn sort_inverse_update_with<T: Element>(
    x: &DataMatrix<T>,
    a: &Assignments,
    clusters: usize,
    chunk: usize,
    mode: MergeMode,
    counters: &Counters,
) -> Result<ClusterStats> {
    a.check_compatible(x)?;
    if chunk == 0 {
        return Err(KMeansError::invalid("update chunk must be at least 1"));
    }
    if a.clusters() > clusters {
        return Err(KMeansError::contract("assignments reference more clusters than K"));
    }
    let mut stats = ClusterStats::zeros_for(x, clusters);
    for b in 0..x.batch() {
        let grid = stats.grid(b);
        let (sums, counts) = stats.batch_parts_mut(b);
        let merges = update_block(
            x.batch_slice(b),
            a.batch_slice(b),
            x.dims(),
            chunk,
            grid,
            mode,
            sums,
            counts,
        );
        counters.add_merges(merges);
    }
    Ok(stats)
}

/// Upper bound on merges for one batch element.
pub fn merge_bound(distinct_ids: usize, points: usize, chunk: usize) -> usize {
    distinct_ids + points.div_ceil(chunk) - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baseline::scatter_update;
    use proptest::prelude::*;

    #[test]
    fn argsort_examples() {
        let s = argsort_assignments(&[2, 0, 1, 0], 3);
        assert_eq!(s.sorted_idx, vec![1, 3, 2, 0]);
        assert_eq!(s.a_sorted, vec![0, 0, 1, 2]);
        assert_eq!(argsort_assignments(&[0, 1, 1, 4], 5).sorted_idx, vec![0, 1, 2, 3]);
        assert_eq!(argsort_assignments(&[3, 3, 3], 4).sorted_idx, vec![0, 1, 2]);
    }

    #[test]
    fn comparison_path_matches_counting_path() {
        let ids = [5u32, 1, 5, 0, 1, 5];
        // K = 9 > N = 6 takes the comparison path.
        assert_eq!(argsort_assignments(&ids, 9), argsort_assignments(&ids, 6));
    }

    #[test]
    fn segment_examples() {
        let seg = |start, end, cluster| Segment { start, end, cluster };
        assert_eq!(
            detect_segments(&[0, 0, 1, 2, 2], 0).unwrap(),
            vec![seg(0, 2, 0), seg(2, 3, 1), seg(3, 5, 2)]
        );
        assert_eq!(detect_segments(&[7], 0).unwrap(), vec![seg(0, 1, 7)]);
        assert_eq!(detect_segments(&[3, 3, 3, 3], 0).unwrap(), vec![seg(0, 4, 3)]);
        assert_eq!(detect_segments(&[1, 2], 10).unwrap(), vec![seg(10, 11, 1), seg(11, 12, 2)]);
    }

    #[test]
    fn unsorted_segments_are_rejected() {
        assert!(matches!(detect_segments(&[0, 2, 1], 0), Err(KMeansError::Contract(_))));
    }

    #[test]
    fn update_by_hand() {
        let x = DataMatrix::from_rows(&[
            vec![1.0f64, 0.0],
            vec![2.0, 0.0],
            vec![3.0, 0.0],
            vec![4.0, 0.0],
        ])
        .unwrap();
        let a = Assignments::single(2, vec![1, 0, 1, 0]).unwrap();
        let counters = Counters::new();
        let s = sort_inverse_update(&x, &a, 2, 4, &counters).unwrap();
        assert_eq!(s.sum_row(0, 0), vec![6.0, 0.0]);
        assert_eq!(s.sum_row(0, 1), vec![4.0, 0.0]);
        assert_eq!(s.counts(0), &[2, 2]);
        assert_eq!(counters.snapshot().synchronized_merges, 2);
    }

    #[test]
    fn chunk_boundaries_split_segments() {
        let x = DataMatrix::new(1, 5, 1, vec![1.0f64, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let a = Assignments::single(3, vec![0, 0, 1, 2, 2]).unwrap();
        for mode in [MergeMode::Deterministic, MergeMode::Relaxed] {
            let counters = Counters::new();
            let s = sort_inverse_update_with(&x, &a, 3, 2, mode, &counters).unwrap();
            let merges = counters.snapshot().synchronized_merges;
            assert_eq!(merges, 4);
            assert!(merges as usize <= merge_bound(3, 5, 2));
            assert_eq!(s.counts(0), &[2, 1, 2]);
            assert_eq!(s.sum(0, 2, 0), 9.0);
        }
    }

    #[test]
    fn single_cluster_single_chunk_is_one_merge() {
        let x = DataMatrix::new(1, 50, 2, vec![0.5f32; 100]).unwrap();
        let a = Assignments::single(4, vec![3; 50]).unwrap();
        let counters = Counters::new();
        let s = sort_inverse_update(&x, &a, 4, 50, &counters).unwrap();
        assert_eq!(counters.snapshot().synchronized_merges, 1);
        assert_eq!(s.sum_row(0, 3), vec![25.0, 25.0]);
    }

    #[test]
    fn non_multiple_chunk_growth_can_add_a_merge() {
        // Boundary at 2 falls between runs; boundary at 3 splits the run of 1s.
        let x = DataMatrix::new(1, 4, 1, vec![1.0f64; 4]).unwrap();
        let a = Assignments::single(2, vec![0, 0, 1, 1]).unwrap();
        let (c2, c3) = (Counters::new(), Counters::new());
        sort_inverse_update(&x, &a, 2, 2, &c2).unwrap();
        sort_inverse_update(&x, &a, 2, 3, &c3).unwrap();
        assert_eq!(c2.snapshot().synchronized_merges, 2);
        assert_eq!(c3.snapshot().synchronized_merges, 3);
    }

    fn skewed_ids(seed: u64, n: usize, k: usize) -> Vec<u32> {
        // Roughly half the points land in cluster 0.
        let mut state = seed | 1;
        (0..n)
            .map(|_| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                if state.is_multiple_of(2) {
                    0
                } else {
                    (state % k as u64) as u32
                }
            })
            .collect()
    }

    proptest! {
        #[test]
        fn matches_scatter_and_respects_bound(
            n in 1usize..400,
            k in 1usize..20,
            d in 1usize..6,
            chunk in 1usize..64,
            seed in any::<u64>(),
        ) {
            let ids = skewed_ids(seed, n, k);
            let vals: Vec<f64> = (0..n * d).map(|i| ((i as u64 ^ seed) % 1000) as f64 / 7.0 - 50.0).collect();
            let x = DataMatrix::new(1, n, d, vals).unwrap();
            let a = Assignments::single(k, ids.clone()).unwrap();
            let c1 = Counters::new();
            let c2 = Counters::new();
            let scatter = scatter_update(&x, &a, k, &c1).unwrap();
            let det = sort_inverse_update_with(&x, &a, k, chunk, MergeMode::Deterministic, &c2).unwrap();
            let relaxed = sort_inverse_update_with(&x, &a, k, chunk, MergeMode::Relaxed, &Counters::new()).unwrap();
            prop_assert_eq!(&det, &scatter);
            prop_assert_eq!(&relaxed, &scatter);
            let mut distinct = ids.clone();
            distinct.sort_unstable();
            distinct.dedup();
            let merges = c2.snapshot().synchronized_merges as usize;
            prop_assert!(merges <= merge_bound(distinct.len(), n, chunk));
            prop_assert_eq!(c1.snapshot().synchronized_merges as usize, n);
        }

        #[test]
        fn multiplying_the_chunk_never_adds_merges(
            ids in prop::collection::vec(0u32..8, 1..300),
            chunk in 1usize..50,
            factor in 2usize..5,
        ) {
            let n = ids.len();
            let x = DataMatrix::new(1, n, 1, vec![1.0f64; n]).unwrap();
            let a = Assignments::single(8, ids).unwrap();
            let small = Counters::new();
            let big = Counters::new();
            sort_inverse_update(&x, &a, 8, chunk, &small).unwrap();
            sort_inverse_update(&x, &a, 8, chunk * factor, &big).unwrap();
            prop_assert!(big.snapshot().synchronized_merges <= small.snapshot().synchronized_merges);
        }

        #[test]
        fn argsort_is_stable(ids in prop::collection::vec(0u32..6, 0..200)) {
            let s = argsort_assignments(&ids, 6);
            prop_assert!(s.a_sorted.windows(2).all(|w| w[0] <= w[1]));
            for w in s.sorted_idx.windows(2) {
                if ids[w[0] as usize] == ids[w[1] as usize] {
                    prop_assert!(w[0] < w[1]);
                }
            }
            for (j, &i) in s.sorted_idx.iter().enumerate() {
                prop_assert_eq!(s.a_sorted[j], ids[i as usize]);
            }
        }
    }
}
