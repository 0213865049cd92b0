//! Kernel sweep. Output columns:
//!
//! `engine,stage,n,k,d,b,dtype,reps,median_latency_ns,intermediate_bytes_written,
//! intermediate_bytes_read,synchronized_merges,elements_streamed,status`
//!
//! One row per engine, stage (`assign`, `update`, `e2e`) and sweep cell.
//! Counters are those of a single call of the stage. `status` is `ok`, or
//! `oom` when the distance matrix does not fit `--mem-limit`, in which case
//! the latency and counter columns are empty.

use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use flashmeans::baseline::{
    argmin_rows, compute_distance_matrix_limited, normalize, scatter_update,
};
use flashmeans::dataset::{generate_dataset, DatasetSpec};
use flashmeans::flash_assign::flash_assign;
use flashmeans::init::init_centroids;
use flashmeans::sort_inverse::sort_inverse_update_with;
use flashmeans::tuner::{heuristic_config, median_latency};
use flashmeans::{
    Assignments, CacheModel, Centroids, CounterSnapshot, Counters, DataMatrix, Element,
    EmptyClusterPolicy, InitMethod, KMeansError, MergeMode, Precision, ProblemShape, TilingConfig,
};

use crate::cluster::Engine;
use crate::{write_csv_atomic, CliError, Dtype};

pub const COLUMNS: [&str; 14] = [
    "engine",
    "stage",
    "n",
    "k",
    "d",
    "b",
    "dtype",
    "reps",
    "median_latency_ns",
    "intermediate_bytes_written",
    "intermediate_bytes_read",
    "synchronized_merges",
    "elements_streamed",
    "status",
];

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub points: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub clusters: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub dims: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub batch: Vec<usize>,
    /// Timed repetitions per cell, after one warm-up.
    #[arg(long, default_value_t = 5)]
    pub iters: usize,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "baseline,flash")]
    pub engines: Vec<Engine>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Dtype::Single)]
    pub dtype: Dtype,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub mem_limit: Option<u64>,
}

/// One emitted row.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub engine: Engine,
    pub stage: &'static str,
    pub n: usize,
    pub k: usize,
    pub d: usize,
    pub b: usize,
    pub precision: Precision,
    pub reps: usize,
    /// `None` when the stage ran out of memory.
    pub result: Option<(u128, CounterSnapshot)>,
}

impl BenchRow {
    fn record(&self) -> Vec<String> {
        let engine = match self.engine {
            Engine::Baseline => "baseline",
            Engine::Flash => "flash",
        };
        let mut r = vec![
            engine.to_string(),
            self.stage.to_string(),
            self.n.to_string(),
            self.k.to_string(),
            self.d.to_string(),
            self.b.to_string(),
            self.precision.to_string(),
            self.reps.to_string(),
        ];
        match &self.result {
            Some((ns, c)) => {
                r.extend(
                    [
                        *ns,
                        c.intermediate_bytes_written as u128,
                        c.intermediate_bytes_read as u128,
                        c.synchronized_merges as u128,
                        c.elements_streamed as u128,
                    ]
                    .map(|v| v.to_string()),
                );
                r.push("ok".into());
            }
            None => {
                r.extend(std::iter::repeat_n(String::new(), 5));
                r.push("oom".into());
            }
        }
        r
    }
}

fn validate(a: &BenchArgs) -> Result<(), CliError> {
    for (name, list) in [
        ("points", &a.points),
        ("clusters", &a.clusters),
        ("dims", &a.dims),
        ("batch", &a.batch),
    ] {
        if list.is_empty() || list.contains(&0) {
            return Err(CliError::Usage(format!("--{name} needs positive values")));
        }
    }
    let (min_n, max_k) = (a.points.iter().min(), a.clusters.iter().max());
    if max_k > min_n {
        return Err(CliError::Usage("every K must be at most every N".into()));
    }
    if a.iters == 0 || a.engines.is_empty() {
        return Err(CliError::Usage("--iters and --engines must be non-empty".into()));
    }
    Ok(())
}

/// Times `stage`, keeping the counters of the warm-up call.
fn measure<F>(reps: usize, mut stage: F) -> Result<Option<(u128, CounterSnapshot)>, CliError>
where
    F: FnMut(&Counters) -> flashmeans::Result<()>,
{
    let counters = Counters::new();
    match stage(&counters) {
        Ok(()) => {}
        Err(KMeansError::Resource(_)) => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let snap = counters.snapshot();
    let scratch = Counters::new();
    let t = median_latency(reps, || stage(&scratch))?;
    Ok(Some((t.as_nanos(), snap)))
}

struct Cell<T> {
    x: DataMatrix<T>,
    c: Centroids<T>,
    tiling: TilingConfig,
    mem_limit: Option<u64>,
}

impl<T: Element> Cell<T> {
    fn assign(&self, engine: Engine, counters: &Counters) -> flashmeans::Result<Assignments> {
        match engine {
            Engine::Baseline => {
                let dm = compute_distance_matrix_limited(&self.x, &self.c, self.mem_limit, counters)?;
                Ok(argmin_rows(&dm, counters))
            }
            Engine::Flash => Ok(flash_assign(&self.x, &self.c, &self.tiling, counters)?.assignments),
        }
    }

    fn update(&self, engine: Engine, a: &Assignments, counters: &Counters) -> flashmeans::Result<flashmeans::ClusterStats> {
        let k = self.c.clusters();
        match engine {
            Engine::Baseline => scatter_update(&self.x, a, k, counters),
            Engine::Flash => sort_inverse_update_with(
                &self.x,
                a,
                k,
                self.tiling.update_chunk,
                MergeMode::Deterministic,
                counters,
            ),
        }
    }

    fn e2e(&self, engine: Engine, counters: &Counters) -> flashmeans::Result<()> {
        let a = self.assign(engine, counters)?;
        let stats = self.update(engine, &a, counters)?;
        normalize(&stats, &self.c, EmptyClusterPolicy::Keep)?;
        Ok(())
    }
}

fn bench_cell<T: Element>(
    a: &BenchArgs,
    (n, k, d, b): (usize, usize, usize, usize),
    rows: &mut Vec<BenchRow>,
) -> Result<(), CliError> {
    let x: DataMatrix<T> = generate_dataset(&DatasetSpec {
        batch: b,
        points: n,
        true_clusters: k,
        dims: d,
        spread: 1.0,
        seed: a.seed,
    })?;
    let c = init_centroids(&x, k, a.seed, InitMethod::RandomDistinct)?;
    let shape = ProblemShape {
        points: n,
        clusters: k,
        dims: d,
        batch: b,
    };
    let tiling = heuristic_config(&shape, &CacheModel::default().with_elem_bytes(T::BYTES));
    let cell = Cell {
        x,
        c,
        tiling,
        mem_limit: a.mem_limit,
    };
    for &engine in &a.engines {
        let row = |stage, result| BenchRow {
            engine,
            stage,
            n,
            k,
            d,
            b,
            precision: T::PRECISION,
            reps: a.iters,
            result,
        };
        let assign = measure(a.iters, |ctr| cell.assign(engine, ctr).map(|_| ()))?;
        rows.push(row("assign", assign));
        // The update stage needs assignments; take them from the flash
        // kernel so it runs even when the baseline's matrix does not fit.
        let ids = cell.assign(Engine::Flash, &Counters::new())?;
        let update = measure(a.iters, |ctr| cell.update(engine, &ids, ctr).map(|_| ()))?;
        rows.push(row("update", update));
        let e2e = measure(a.iters, |ctr| cell.e2e(engine, ctr))?;
        rows.push(row("e2e", e2e));
    }
    Ok(())
}

/// Runs the sweep and returns the rows in emission order.
pub fn run_sweep(a: &BenchArgs) -> Result<Vec<BenchRow>, CliError> {
    validate(a)?;
    let mut rows = Vec::new();
    for &n in &a.points {
        for &k in &a.clusters {
            for &d in &a.dims {
                for &b in &a.batch {
                    match a.dtype {
                        Dtype::Single => bench_cell::<f32>(a, (n, k, d, b), &mut rows)?,
                        Dtype::Double => bench_cell::<f64>(a, (n, k, d, b), &mut rows)?,
                    }
                }
            }
        }
    }
    Ok(rows)
}

pub fn cmd_bench(a: &BenchArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let rows = run_sweep(a)?;
    write_csv_atomic(&a.out, |w| {
        w.write_record(COLUMNS)?;
        for r in &rows {
            w.write_record(r.record())?;
        }
        Ok(())
    })?;
    writeln!(out, "wrote {} rows to {}", rows.len(), a.out.display())?;
    Ok(())
}
