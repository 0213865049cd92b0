//! `flashmeans` command-line front end.

pub mod bench;
pub mod cluster;
pub mod error;
pub mod tune;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use flashmeans::dataset::{generate_dataset, DatasetSpec};
use flashmeans::format::{read_header, write_atomic, write_dataset};
use flashmeans::{DataMatrix, Element, Precision};

pub use error::{exit_code, CliError};

/// Environment variable that sets the worker count.
pub const WORKERS_ENV: &str = "FLASHMEANS_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "flashmeans", version, about = "Exact Lloyd's k-means engine")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic Gaussian-blob dataset.
    Gen(GenArgs),
    /// Print a dataset header.
    Info(InfoArgs),
    /// Cluster a dataset.
    Cluster(cluster::ClusterArgs),
    /// Time the assignment, update and full-iteration stages over a sweep.
    Bench(bench::BenchArgs),
    /// Compare the tiling heuristic with exhaustive tuning.
    Tune(tune::TuneArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Dtype {
    Single,
    Double,
}

impl From<Dtype> for Precision {
    fn from(d: Dtype) -> Self {
        match d {
            Dtype::Single => Precision::Single,
            Dtype::Double => Precision::Double,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    #[arg(long)]
    pub points: usize,
    /// Number of blobs the points are drawn around.
    #[arg(long)]
    pub true_clusters: usize,
    #[arg(long)]
    pub dims: usize,
    /// Standard deviation of each blob.
    #[arg(long, default_value_t = 1.0)]
    pub spread: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Dtype::Single)]
    pub dtype: Dtype,
}

#[derive(Debug, Args)]
pub struct InfoArgs {
    pub path: PathBuf,
}

/// Runs one parsed command, writing human-readable output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Gen(a) => cmd_gen(&a),
        Command::Info(a) => cmd_info(&a, out),
        Command::Cluster(a) => cluster::cmd_cluster(&a, out),
        Command::Bench(a) => bench::cmd_bench(&a, out),
        Command::Tune(a) => tune::cmd_tune(&a, out),
    }
}

fn gen_typed<T: Element>(spec: &DatasetSpec, out: &Path) -> Result<(), CliError> {
    let x: DataMatrix<T> = generate_dataset(spec)?;
    write_dataset(out, &x)?;
    Ok(())
}

pub fn cmd_gen(a: &GenArgs) -> Result<(), CliError> {
    for (name, v) in [
        ("batch", a.batch),
        ("points", a.points),
        ("true-clusters", a.true_clusters),
        ("dims", a.dims),
    ] {
        if v == 0 {
            return Err(CliError::Usage(format!("--{name} must be at least 1")));
        }
    }
    if !(a.spread.is_finite() && a.spread >= 0.0) {
        return Err(CliError::Usage("--spread must be a finite non-negative number".into()));
    }
    let spec = DatasetSpec {
        batch: a.batch,
        points: a.points,
        true_clusters: a.true_clusters,
        dims: a.dims,
        spread: a.spread,
        seed: a.seed,
    };
    match a.dtype {
        Dtype::Single => gen_typed::<f32>(&spec, &a.out),
        Dtype::Double => gen_typed::<f64>(&spec, &a.out),
    }
}

pub fn cmd_info(a: &InfoArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let h = read_header(&a.path)?;
    writeln!(out, "format: FKM1 v1")?;
    writeln!(out, "dtype: {}", h.precision)?;
    writeln!(out, "batch: {}", h.batch)?;
    writeln!(out, "points: {}", h.points)?;
    writeln!(out, "dims: {}", h.dims)?;
    writeln!(out, "payload_bytes: {}", h.payload_bytes())?;
    writeln!(out, "file_bytes: {}", h.file_bytes())?;
    Ok(())
}

/// Writes CSV rows built by `fill` to `path` atomically, LF-terminated.
pub(crate) fn write_csv_atomic<F>(path: &Path, fill: F) -> Result<(), CliError>
where
    F: FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> Result<(), CliError>,
{
    let mut buf = Vec::new();
    {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(&mut buf);
        fill(&mut w)?;
        w.flush()?;
    }
    write_atomic(path, |f| f.write_all(&buf))?;
    Ok(())
}

/// Builds the global worker pool, honouring [`WORKERS_ENV`].
pub fn init_workers() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let workers: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&w| w > 0)
        .ok_or_else(|| CliError::Usage(format!("{WORKERS_ENV} must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .map_err(|e| CliError::Internal(e.to_string()))
}
