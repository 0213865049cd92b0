use flashmeans::baseline::{baseline_lloyd_run, scatter_update};
use flashmeans::dataset::{generate_dataset, DatasetSpec};
use flashmeans::sort_inverse::sort_inverse_update;
use flashmeans::{
    lloyd_run, Counters, DataMatrix, Element, KMeansConfig, MergeMode,
    TilingConfig,
};
use proptest::prelude::*;

fn instance<T: Element>(batch: usize, points: usize, dims: usize, seed: u64) -> DataMatrix<T> {
    generate_dataset(&DatasetSpec {
        batch,
        points,
        true_clusters: 5,
        dims,
        spread: 2.5,
        seed,
    })
    .unwrap()
}

fn non_increasing(h: &[f64], slack: f64) -> bool {
    h.windows(2).all(|w| w[1] <= w[0] * (1.0 + slack))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn flash_driver_equals_baseline_driver(
        batch in 1usize..3,
        points in 1usize..400,
        k in 1usize..20,
        dims in 1usize..9,
        bn in 1usize..70,
        bk in 1usize..40,
        chunk in 1usize..300,
        seed in any::<u64>(),
        relaxed in any::<bool>(),
    ) {
        let k = k.min(points);
        let x: DataMatrix<f64> = instance(batch, points, dims, seed);
        let mode = if relaxed { MergeMode::Relaxed } else { MergeMode::Deterministic };
        let cfg = KMeansConfig::new(k)
            .with_seed(seed ^ 1)
            .with_max_iters(30)
            .with_tiling(TilingConfig::new(bn, bk, chunk).unwrap())
            .with_merge_mode(mode);
        let flash = lloyd_run(&x, &cfg).unwrap();
        let base = baseline_lloyd_run(&x, &cfg).unwrap();
        prop_assert_eq!(&flash.centroids, &base.centroids);
        prop_assert_eq!(&flash.assignments, &base.assignments);
        prop_assert_eq!(&flash.objective_history, &base.objective_history);
        for h in &flash.objective_history {
            prop_assert!(non_increasing(h, 1e-9));
        }
    }

    #[test]
    fn single_precision_objective_is_monotone(
        points in 10usize..600,
        k in 1usize..12,
        dims in 1usize..6,
        seed in any::<u64>(),
    ) {
        let x: DataMatrix<f32> = instance(1, points, dims, seed);
        let res = lloyd_run(&x, &KMeansConfig::new(k).with_seed(seed).with_max_iters(40)).unwrap();
        prop_assert!(non_increasing(&res.objective_history[0], 1e-4));
    }

    #[test]
    fn tiling_never_changes_the_result(
        points in 1usize..300,
        k in 1usize..16,
        seed in any::<u64>(),
        a in (1usize..64, 1usize..64, 1usize..128),
        b in (1usize..64, 1usize..64, 1usize..128),
    ) {
        let k = k.min(points);
        let x: DataMatrix<f32> = instance(2, points, 3, seed);
        let run = |t: (usize, usize, usize)| {
            let cfg = KMeansConfig::new(k)
                .with_seed(seed)
                .with_max_iters(15)
                .with_tiling(TilingConfig::new(t.0, t.1, t.2).unwrap());
            lloyd_run(&x, &cfg).unwrap()
        };
        let (ra, rb) = (run(a), run(b));
        prop_assert_eq!(ra.centroids, rb.centroids);
        prop_assert_eq!(ra.assignments, rb.assignments);
    }

    #[test]
    fn stats_conserve_points_and_column_sums(
        points in 1usize..500,
        k in 1usize..30,
        dims in 1usize..6,
        chunk in 1usize..200,
        seed in any::<u64>(),
    ) {
        let k = k.min(points);
        let x: DataMatrix<f64> = instance(1, points, dims, seed);
        let res = lloyd_run(&x, &KMeansConfig::new(k).with_seed(seed).with_max_iters(1)).unwrap();
        let stats = sort_inverse_update(&x, &res.assignments, k, chunk, &Counters::new()).unwrap();
        prop_assert_eq!(stats.counts(0).iter().sum::<u64>(), points as u64);
        let scatter = scatter_update(&x, &res.assignments, k, &Counters::new()).unwrap();
        prop_assert_eq!(&stats, &scatter);
        for j in 0..dims {
            let column: f64 = x.as_slice().iter().skip(j).step_by(dims).sum();
            let abs: f64 = x.as_slice().iter().skip(j).step_by(dims).map(|v| v.abs()).sum();
            let total: f64 = (0..k).map(|c| stats.sum(0, c, j)).sum();
            prop_assert!((total - column).abs() <= 1e-10 * abs.max(1.0));
        }
    }
}
