//! Exact Lloyd's k-means with a fused, tiled assignment kernel and a
//! sort-based centroid update.
//!
//! The [`baseline`] module holds the textbook kernels (materialized distance
//! matrix, scatter update) and doubles as a correctness oracle. The fused
//! kernels live in [`flash_assign`] and [`sort_inverse`], and the drivers in
//! [`pipeline`] compose them in-core or over a chunked stream. Both drivers
//! produce bitwise-identical results for the same seed and configuration.

pub mod baseline;
pub mod config;
pub mod counters;
pub mod dataset;
pub mod distance;
pub mod element;
pub mod error;
pub mod flash_assign;
pub mod format;
pub mod init;
pub mod matrix;
pub mod objective;
pub mod pipeline;
pub mod sort_inverse;
pub mod stats;
pub mod tuner;

pub use config::{EmptyClusterPolicy, InitMethod, KMeansConfig, KMeansResult, MergeMode};
pub use counters::{CounterSnapshot, Counters};
pub use element::{Element, Precision};
pub use error::{KMeansError, Result};
pub use flash_assign::TilingConfig;
pub use matrix::{Assignments, Centroids, DataMatrix};
pub use pipeline::{lloyd_run, lloyd_run_with};
pub use stats::{AccumGrid, ClusterStats};
pub use tuner::{CacheModel, ProblemShape};
