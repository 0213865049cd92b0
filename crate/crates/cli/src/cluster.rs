use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, ValueEnum};
use flashmeans::baseline::BaselineEngine;
use flashmeans::format::{
    read_dataset, read_header, write_assignments, write_atomic, DatasetFile,
};
use flashmeans::pipeline::stream::{
    chunked_stream_run, ChunkStream, FileAssignmentStore, MemoryAssignmentStore,
};
use flashmeans::pipeline::{lloyd_run_with, resolve_tiling, FlashEngine};
use flashmeans::{
    Centroids, CounterSnapshot, Element, EmptyClusterPolicy, InitMethod, KMeansConfig, MergeMode,
    Precision, TilingConfig,
};
use serde::Serialize;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Baseline,
    Flash,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Random,
    Kmeanspp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Keep,
    ReseedFarthest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MergeArg {
    Deterministic,
    Relaxed,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(short = 'k', long)]
    pub clusters: usize,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    /// Stop once no centroid moves farther than this.
    #[arg(long, default_value_t = 0.0)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = InitArg::Random)]
    pub init: InitArg,
    #[arg(long, value_enum, default_value_t = PolicyArg::Keep)]
    pub empty_policy: PolicyArg,
    #[arg(long, value_enum, default_value_t = Engine::Flash)]
    pub engine: Engine,
    #[arg(long, value_enum, default_value_t = MergeArg::Deterministic)]
    pub merge_mode: MergeArg,
    /// Stream the dataset from disk instead of loading it.
    #[arg(long)]
    pub out_of_core: bool,
    #[arg(long, default_value_t = 65536)]
    pub chunk_points: usize,
    #[arg(long)]
    pub assignments_out: Option<PathBuf>,
    #[arg(long)]
    pub report_out: Option<PathBuf>,
    /// Byte cap on the baseline's distance matrix.
    #[arg(long)]
    pub mem_limit: Option<u64>,
}

#[derive(Debug, Serialize)]
pub struct ClusterReport {
    pub engine: Engine,
    pub precision: Precision,
    pub batch: usize,
    pub points: usize,
    pub dims: usize,
    pub clusters: usize,
    pub seed: u64,
    pub init: InitMethod,
    pub empty_cluster_policy: EmptyClusterPolicy,
    pub merge_mode: MergeMode,
    pub tiling: Option<TilingConfig>,
    pub iterations_run: usize,
    pub objective_history: Vec<Vec<f64>>,
    pub final_objective: Vec<f64>,
    /// `[batch][cluster][dim]`.
    pub centroids: Vec<Vec<Vec<f64>>>,
    pub wall_time_ns: u64,
    pub counters: CounterSnapshot,
}

fn config(a: &ClusterArgs) -> KMeansConfig {
    KMeansConfig::new(a.clusters)
        .with_max_iters(a.max_iters)
        .with_shift_tol(a.tol)
        .with_seed(a.seed)
        .with_init(match a.init {
            InitArg::Random => InitMethod::RandomDistinct,
            InitArg::Kmeanspp => InitMethod::KMeansPlusPlus,
        })
        .with_empty_cluster_policy(match a.empty_policy {
            PolicyArg::Keep => EmptyClusterPolicy::Keep,
            PolicyArg::ReseedFarthest => EmptyClusterPolicy::ReseedFarthest,
        })
        .with_merge_mode(match a.merge_mode {
            MergeArg::Deterministic => MergeMode::Deterministic,
            MergeArg::Relaxed => MergeMode::Relaxed,
        })
}

fn nested<T: Element>(c: &Centroids<T>) -> Vec<Vec<Vec<f64>>> {
    (0..c.batch())
        .map(|b| {
            (0..c.clusters())
                .map(|k| c.row(b, k).iter().map(|v| v.as_f64()).collect())
                .collect()
        })
        .collect()
}

struct Outcome<T> {
    centroids: Centroids<T>,
    objective_history: Vec<Vec<f64>>,
    iterations_run: usize,
    counters: CounterSnapshot,
    tiling: Option<TilingConfig>,
    wall_time_ns: u64,
}

fn in_core<T: Element>(a: &ClusterArgs, cfg: &KMeansConfig, path: &Path) -> Result<Outcome<T>, CliError> {
    let x = read_dataset::<T>(path)?;
    cfg.validate(x.points())?;
    let start = Instant::now();
    let (res, tiling) = match a.engine {
        Engine::Baseline => {
            let engine = BaselineEngine {
                mem_limit: a.mem_limit,
            };
            (lloyd_run_with(&x, cfg, &engine)?, None)
        }
        Engine::Flash => {
            let engine = FlashEngine {
                tiling: resolve_tiling::<T>(cfg, x.points(), x.dims(), x.batch()),
                merge_mode: cfg.merge_mode,
            };
            (lloyd_run_with(&x, cfg, &engine)?, Some(engine.tiling))
        }
    };
    let wall_time_ns = start.elapsed().as_nanos() as u64;
    if let Some(p) = &a.assignments_out {
        write_assignments(p, &res.assignments)?;
    }
    Ok(Outcome {
        centroids: res.centroids,
        objective_history: res.objective_history,
        iterations_run: res.iterations_run,
        counters: res.counters,
        tiling,
        wall_time_ns,
    })
}

fn out_of_core<T: Element>(a: &ClusterArgs, cfg: &KMeansConfig, path: &Path) -> Result<Outcome<T>, CliError> {
    if a.engine != Engine::Flash {
        return Err(CliError::Usage("--out-of-core requires --engine flash".into()));
    }
    if a.chunk_points == 0 {
        return Err(CliError::Usage("--chunk-points must be at least 1".into()));
    }
    let src = DatasetFile::<T>::open(path)?;
    let h = src.header();
    cfg.validate(h.points)?;
    let tiling = resolve_tiling::<T>(cfg, h.points, h.dims, h.batch);
    let cfg = cfg.clone().with_tiling(tiling);
    let mut stream = ChunkStream::new(src, a.chunk_points)?;
    let start = Instant::now();
    let res = match &a.assignments_out {
        Some(p) => {
            let mut store = FileAssignmentStore::create(p, h.batch, h.points)?;
            let res = chunked_stream_run(&mut stream, &cfg, &mut store)?;
            store.finish()?;
            res
        }
        None => {
            let mut store = MemoryAssignmentStore::new(h.batch, h.points);
            chunked_stream_run(&mut stream, &cfg, &mut store)?
        }
    };
    Ok(Outcome {
        centroids: res.centroids,
        objective_history: res.objective_history,
        iterations_run: res.iterations_run,
        counters: res.counters,
        tiling: Some(tiling),
        wall_time_ns: start.elapsed().as_nanos() as u64,
    })
}

fn run_typed<T: Element>(a: &ClusterArgs, cfg: &KMeansConfig) -> Result<ClusterReport, CliError> {
    let o = if a.out_of_core {
        out_of_core::<T>(a, cfg, &a.input)?
    } else {
        in_core::<T>(a, cfg, &a.input)?
    };
    Ok(ClusterReport {
        engine: a.engine,
        precision: T::PRECISION,
        batch: o.centroids.batch(),
        points: 0,
        dims: o.centroids.dims(),
        clusters: o.centroids.clusters(),
        seed: cfg.seed,
        init: cfg.init,
        empty_cluster_policy: cfg.empty_cluster_policy,
        merge_mode: cfg.merge_mode,
        tiling: o.tiling,
        iterations_run: o.iterations_run,
        final_objective: o
            .objective_history
            .iter()
            .map(|h| *h.last().expect("at least one iteration"))
            .collect(),
        objective_history: o.objective_history,
        centroids: nested(&o.centroids),
        wall_time_ns: o.wall_time_ns,
        counters: o.counters,
    })
}

pub fn cmd_cluster(a: &ClusterArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let header = read_header(&a.input)?;
    if a.clusters == 0 || a.clusters > header.points {
        return Err(CliError::Usage(format!(
            "-k must be between 1 and the number of points ({}), got {}",
            header.points, a.clusters
        )));
    }
    let cfg = config(a);
    let mut report = match header.precision {
        Precision::Single => run_typed::<f32>(a, &cfg)?,
        Precision::Double => run_typed::<f64>(a, &cfg)?,
    };
    report.points = header.points;
    if let Some(p) = &a.report_out {
        let json = serde_json::to_vec_pretty(&report)?;
        write_atomic(p, |w| {
            w.write_all(&json)?;
            w.write_all(b"\n")
        })?;
    }
    writeln!(
        out,
        "iterations: {}  final objective: {}  wall time: {:.3} ms",
        report.iterations_run,
        report
            .final_objective
            .iter()
            .map(|v| format!("{v}"))
            .collect::<Vec<_>>()
            .join(","),
        report.wall_time_ns as f64 / 1e6
    )?;
    Ok(())
}
