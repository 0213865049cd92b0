//! Lloyd drivers: in-core over a resident [`DataMatrix`], and out-of-core over
//! a chunked stream (see [`stream`]).

pub mod stream;

use crate::baseline::normalize_block;
use crate::config::{EmptyClusterPolicy, KMeansConfig, KMeansResult, MergeMode};
use crate::counters::Counters;
use crate::element::Element;
use crate::error::Result;
use crate::flash_assign::{assign_block, TilingConfig};
use crate::init::init_centroids;
use crate::matrix::{Assignments, Centroids, DataMatrix};
use crate::objective::block_objective;
use crate::sort_inverse::update_block;
use crate::stats::{AccumGrid, ClusterStats};
use crate::tuner::{heuristic_config, ProblemShape};

/// Assignment and update kernels for one batch element.
pub trait LloydEngine<T: Element>: Sync {
    /// Nearest centroid and its squared distance for every point.
    fn assign(
        &self,
        points: &[T],
        centroids: &[T],
        dims: usize,
        counters: &Counters,
    ) -> Result<(Vec<u32>, Vec<T>)>;

    /// Adds the points' contributions into zeroed `sums` / `counts`.
    #[allow(clippy::too_many_arguments)]
    fn update(
        &self,
        points: &[T],
        assign: &[u32],
        dims: usize,
        grid: AccumGrid,
        sums: &mut [i128],
        counts: &mut [u64],
        counters: &Counters,
    ) -> Result<()>;
}

/// Fused assignment plus segmented update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlashEngine {
    pub tiling: TilingConfig,
    pub merge_mode: MergeMode,
}

impl<T: Element> LloydEngine<T> for FlashEngine {
    fn assign(
        &self,
        points: &[T],
        centroids: &[T],
        dims: usize,
        _counters: &Counters,
    ) -> Result<(Vec<u32>, Vec<T>)> {
        Ok(assign_block(points, centroids, dims, &self.tiling))
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
        let merges = update_block(
            points,
            assign,
            dims,
            self.tiling.update_chunk,
            grid,
            self.merge_mode,
            sums,
            counts,
        );
        counters.add_merges(merges);
        Ok(())
    }
}

/// Tiling used when the config sets none.
pub fn resolve_tiling<T: Element>(cfg: &KMeansConfig, points: usize, dims: usize, batch: usize) -> TilingConfig {
    cfg.tiling.unwrap_or_else(|| {
        let shape = ProblemShape {
            points,
            clusters: cfg.clusters,
            dims,
            batch,
        };
        heuristic_config(&shape, &cfg.cache.with_elem_bytes(T::BYTES))
    })
}

/// Lloyd's algorithm with the fused assignment and segmented update kernels.
pub fn lloyd_run<T: Element>(x: &DataMatrix<T>, cfg: &KMeansConfig) -> Result<KMeansResult<T>> {
    cfg.validate(x.points())?;
    let engine = FlashEngine {
        tiling: resolve_tiling::<T>(cfg, x.points(), x.dims(), x.batch()),
        merge_mode: cfg.merge_mode,
    };
    lloyd_run_with(x, cfg, &engine)
}

/// Points to move empty centroids onto: the `count` points farthest from
/// their assigned centroid, ties to the lowest index.
pub(crate) fn farthest_points<T: Element>(min_dists: &[T], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..min_dists.len()).collect();
    order.sort_by(|&a, &b| {
        min_dists[b]
            .as_f64()
            .total_cmp(&min_dists[a].as_f64())
            .then(a.cmp(&b))
    });
    order.truncate(count);
    order
}

/// Largest L2 displacement between two `K x d` blocks.
pub(crate) fn max_shift<T: Element>(old: &[T], new: &[T], dims: usize) -> f64 {
    old.chunks_exact(dims)
        .zip(new.chunks_exact(dims))
        .map(|(a, b)| {
            a.iter()
                .zip(b)
                .map(|(&p, &q)| {
                    let diff = p.as_f64() - q.as_f64();
                    diff * diff
                })
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max)
}

struct ElementRun<T> {
    centroids: Vec<T>,
    assign: Vec<u32>,
    history: Vec<f64>,
}

fn run_element<T: Element, E: LloydEngine<T> + ?Sized>(
    points: &[T],
    init: &[T],
    dims: usize,
    cfg: &KMeansConfig,
    engine: &E,
    counters: &Counters,
) -> Result<ElementRun<T>> {
    let k = cfg.clusters;
    let grid = AccumGrid::for_values(points);
    let mut centroids = init.to_vec();
    let mut next = centroids.clone();
    let mut history = Vec::new();
    let mut prev: Option<Vec<u32>> = None;
    loop {
        let (assign, min_dists) = engine.assign(points, &centroids, dims, counters)?;
        history.push(block_objective(points, &centroids, &assign, dims, 0.0));
        let mut stats = ClusterStats::zeros(k, dims, vec![grid]);
        {
            let (sums, counts) = stats.batch_parts_mut(0);
            engine.update(points, &assign, dims, grid, sums, counts, counters)?;
        }
        let empty = normalize_block(&stats, 0, &centroids, &mut next);
        if cfg.empty_cluster_policy == EmptyClusterPolicy::ReseedFarthest && !empty.is_empty() {
            for (kk, i) in empty.iter().zip(farthest_points(&min_dists, empty.len())) {
                next[kk * dims..(kk + 1) * dims].copy_from_slice(&points[i * dims..(i + 1) * dims]);
            }
        }
        let shift = max_shift(&centroids, &next, dims);
        let unchanged = prev.as_deref() == Some(assign.as_slice());
        std::mem::swap(&mut centroids, &mut next);
        let done = unchanged || shift <= cfg.shift_tol || history.len() >= cfg.max_iters;
        prev = Some(assign);
        if done {
            break;
        }
    }
    Ok(ElementRun {
        centroids,
        assign: prev.expect("at least one iteration"),
        history,
    })
}

/// Lloyd's algorithm over any engine. Batch elements run independently.
pub fn lloyd_run_with<T: Element, E: LloydEngine<T> + ?Sized>(
    x: &DataMatrix<T>,
    cfg: &KMeansConfig,
    engine: &E,
) -> Result<KMeansResult<T>> {
    cfg.validate(x.points())?;
    let init = init_centroids(x, cfg.clusters, cfg.seed, cfg.init)?;
    lloyd_run_from(x, &init, cfg, engine)
}

/// Lloyd's algorithm from explicit starting centroids.
pub fn lloyd_run_from<T: Element, E: LloydEngine<T> + ?Sized>(
    x: &DataMatrix<T>,
    init: &Centroids<T>,
    cfg: &KMeansConfig,
    engine: &E,
) -> Result<KMeansResult<T>> {
    cfg.validate(x.points())?;
    init.check_compatible(x)?;
    let counters = Counters::new();
    let (d, k) = (x.dims(), init.clusters());
    let cfg = KMeansConfig {
        clusters: k,
        ..cfg.clone()
    };
    let mut centroids = Vec::with_capacity(x.batch() * k * d);
    let mut assign = Vec::with_capacity(x.batch() * x.points());
    let mut history = Vec::with_capacity(x.batch());
    for b in 0..x.batch() {
        let run = run_element(x.batch_slice(b), init.batch_slice(b), d, &cfg, engine, &counters)?;
        centroids.extend_from_slice(&run.centroids);
        assign.extend_from_slice(&run.assign);
        history.push(run.history);
    }
    Ok(KMeansResult {
        centroids: Centroids::new(x.batch(), k, d, centroids)?,
        assignments: Assignments::from_parts_unchecked(x.batch(), x.points(), k, assign),
        iterations_run: history.iter().map(Vec::len).max().unwrap_or(0),
        objective_history: history,
        counters: counters.snapshot(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baseline::baseline_lloyd_run;
    use crate::config::InitMethod;
    use crate::dataset::{generate_dataset, DatasetSpec};

    #[test]
    fn k_equals_n_converges_immediately() {
        let x = DataMatrix::from_rows(&[vec![0.0f64, 1.0], vec![4.0, 4.0], vec![-2.0, 3.0]]).unwrap();
        let res = lloyd_run(&x, &KMeansConfig::new(3).with_seed(5)).unwrap();
        assert_eq!(res.iterations_run, 1);
        assert_eq!(res.final_objective(), vec![0.0]);
    }

    #[test]
    fn two_blobs() {
        let x = DataMatrix::from_rows(&[vec![0.0f64], vec![0.1], vec![10.0], vec![10.1]]).unwrap();
        for seed in 0..10 {
            let res = lloyd_run(&x, &KMeansConfig::new(2).with_seed(seed)).unwrap();
            let mut c = res.centroids.as_slice().to_vec();
            c.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert!((c[0] - 0.05).abs() < 1e-12 && (c[1] - 10.05).abs() < 1e-12, "{c:?}");
            assert!((res.final_objective()[0] - 0.01).abs() <= 1e-9);
        }
    }

    #[test]
    fn matches_baseline_driver() {
        let spec = DatasetSpec {
            batch: 2,
            points: 500,
            true_clusters: 6,
            dims: 5,
            spread: 1.5,
            seed: 3,
        };
        let x: DataMatrix<f64> = generate_dataset(&spec).unwrap();
        let cfg = KMeansConfig::new(8).with_seed(11).with_max_iters(50);
        let flash = lloyd_run(&x, &cfg).unwrap();
        let base = baseline_lloyd_run(&x, &cfg).unwrap();
        assert_eq!(flash.centroids, base.centroids);
        assert_eq!(flash.assignments, base.assignments);
        assert_eq!(flash.objective_history, base.objective_history);
        for h in &flash.objective_history {
            assert!(h.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9)));
        }
    }

    #[test]
    fn reseed_moves_empty_cluster_onto_farthest_point() {
        // Centroid 2 starts far away and captures nothing.
        let x = DataMatrix::from_rows(&[vec![0.0f64], vec![1.0], vec![2.0], vec![9.0]]).unwrap();
        let init = Centroids::from_rows(&[vec![0.5f64], vec![1.5], vec![100.0]]).unwrap();
        let engine = FlashEngine {
            tiling: TilingConfig::default(),
            merge_mode: MergeMode::Deterministic,
        };
        let keep = KMeansConfig::new(3).with_max_iters(1);
        let res = lloyd_run_from(&x, &init, &keep, &engine).unwrap();
        assert_eq!(res.centroids.row(0, 2), &[100.0]);

        let reseed = keep.with_empty_cluster_policy(EmptyClusterPolicy::ReseedFarthest);
        let res = lloyd_run_from(&x, &init, &reseed, &engine).unwrap();
        // Point 9.0 is 7.5 away from centroid 1.5, the largest residual.
        assert_eq!(res.centroids.row(0, 2), &[9.0]);
    }

    #[test]
    fn farthest_ties_go_to_lowest_index() {
        assert_eq!(farthest_points(&[1.0f64, 3.0, 3.0, 2.0], 2), vec![1, 2]);
        assert_eq!(farthest_points(&[0.0f32, 0.0], 1), vec![0]);
    }

    #[test]
    fn kmeanspp_init_runs() {
        let spec = DatasetSpec {
            batch: 1,
            points: 300,
            true_clusters: 4,
            dims: 3,
            spread: 0.3,
            seed: 1,
        };
        let x: DataMatrix<f32> = generate_dataset(&spec).unwrap();
        let cfg = KMeansConfig::new(4)
            .with_seed(2)
            .with_init(InitMethod::KMeansPlusPlus)
            .with_max_iters(30);
        let res = lloyd_run(&x, &cfg).unwrap();
        let h = &res.objective_history[0];
        assert!(h.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-4)));
    }

    #[test]
    fn k_above_n_is_invalid() {
        let x = DataMatrix::from_rows(&[vec![0.0f64]]).unwrap();
        assert!(matches!(
            lloyd_run(&x, &KMeansConfig::new(2)),
            Err(crate::KMeansError::InvalidArgument(_))
        ));
    }
}
