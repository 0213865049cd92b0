use std::io::Write;
use std::path::PathBuf;
use std::time::Duration;

use clap::Args;
use flashmeans::dataset::{generate_dataset, DatasetSpec};
use flashmeans::init::init_centroids;
use flashmeans::tuner::{
    enumerate_candidates, exhaustive_tune, interleaved_medians, CandidateBounds,
    DEFAULT_L1_BYTES, DEFAULT_L2_BYTES_PER_WORKER,
};
use flashmeans::{CacheModel, DataMatrix, Element, InitMethod, ProblemShape, TilingConfig};

use crate::{CliError, Dtype};

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub points: usize,
    #[arg(long)]
    pub clusters: usize,
    #[arg(long)]
    pub dims: usize,
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    #[arg(long, default_value_t = DEFAULT_L1_BYTES)]
    pub l1_bytes: usize,
    /// Defaults to 1 MiB per worker.
    #[arg(long)]
    pub l2_bytes: Option<usize>,
    /// Defaults to the worker pool size.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Dtype::Single)]
    pub dtype: Dtype,
    #[arg(long)]
    pub out: PathBuf,
}

/// Heuristic versus exhaustive-search comparison for one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct TuneSummary {
    pub candidates: usize,
    pub heuristic: TilingConfig,
    pub tuned: TilingConfig,
    pub heuristic_latency: Duration,
    pub tuned_latency: Duration,
    pub heuristic_wall_time: Duration,
    pub tuning_wall_time: Duration,
}

impl TuneSummary {
    pub fn latency_ratio(&self) -> f64 {
        self.heuristic_latency.as_secs_f64() / self.tuned_latency.as_secs_f64().max(1e-12)
    }

    pub fn time_ratio(&self) -> f64 {
        self.tuning_wall_time.as_secs_f64() / self.heuristic_wall_time.as_secs_f64().max(1e-9)
    }

    pub fn line(&self) -> String {
        let fmt = |t: &TilingConfig| format!("b_n={} b_k={} update_chunk={}", t.point_tile, t.centroid_tile, t.update_chunk);
        format!(
            "candidates={} heuristic=[{}] tuned=[{}] latency_ratio={:.3} time_ratio={:.1}",
            self.candidates,
            fmt(&self.heuristic),
            fmt(&self.tuned),
            self.latency_ratio(),
            self.time_ratio()
        )
    }
}

fn cache_of(a: &TuneArgs, elem_bytes: usize) -> CacheModel {
    let workers = a.workers.unwrap_or_else(rayon::current_num_threads).max(1);
    CacheModel {
        l1_bytes: a.l1_bytes,
        l2_bytes: a.l2_bytes.unwrap_or(DEFAULT_L2_BYTES_PER_WORKER * workers),
        elem_bytes,
        workers,
    }
}

fn tune_typed<T: Element>(a: &TuneArgs) -> Result<(TuneSummary, Vec<u8>), CliError> {
    let cache = cache_of(a, T::BYTES);
    cache.validate()?;
    let x: DataMatrix<T> = generate_dataset(&DatasetSpec {
        batch: a.batch,
        points: a.points,
        true_clusters: a.clusters,
        dims: a.dims,
        spread: 1.0,
        seed: a.seed,
    })?;
    let c = init_centroids(&x, a.clusters, a.seed, InitMethod::RandomDistinct)?;
    let shape = ProblemShape::of(&x, a.clusters);
    let candidates = enumerate_candidates(&shape, &CandidateBounds::default())?;
    let report = exhaustive_tune(&x, &c, &candidates, a.reps, &cache)?;
    let (heuristic_latency, tuned_latency) = if report.heuristic == report.chosen {
        let t = report.chosen_latency();
        (t, t)
    } else {
        interleaved_medians(&x, &c, &report.heuristic, &report.chosen, a.reps.max(5))?
    };
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    Ok((
        TuneSummary {
            candidates: report.candidates_tried(),
            heuristic: report.heuristic,
            tuned: report.chosen,
            heuristic_latency,
            tuned_latency,
            heuristic_wall_time: report.heuristic_wall_time,
            tuning_wall_time: report.tuning_wall_time,
        },
        csv,
    ))
}

pub fn run_tune(a: &TuneArgs) -> Result<(TuneSummary, Vec<u8>), CliError> {
    if a.points == 0 || a.clusters == 0 || a.dims == 0 || a.batch == 0 {
        return Err(CliError::Usage("shape values must be positive".into()));
    }
    if a.clusters > a.points {
        return Err(CliError::Usage("--clusters must not exceed --points".into()));
    }
    if a.reps < 3 {
        return Err(CliError::Usage("--reps must be at least 3".into()));
    }
    match a.dtype {
        Dtype::Single => tune_typed::<f32>(a),
        Dtype::Double => tune_typed::<f64>(a),
    }
}

pub fn cmd_tune(a: &TuneArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (summary, csv) = run_tune(a)?;
    flashmeans::format::write_atomic(&a.out, |w| w.write_all(&csv))?;
    writeln!(out, "{}", summary.line())?;
    Ok(())
}
