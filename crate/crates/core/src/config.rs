use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::counters::CounterSnapshot;
use crate::error::{KMeansError, Result};
use crate::flash_assign::TilingConfig;
use crate::matrix::{Assignments, Centroids};
use crate::tuner::CacheModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMethod {
    /// K distinct rows sampled without replacement.
    #[default]
    RandomDistinct,
    KMeansPlusPlus,
}

impl FromStr for InitMethod {
    type Err = KMeansError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" | "random_distinct" | "random-distinct" => Ok(Self::RandomDistinct),
            "kmeanspp" | "kmeans++" | "k-means++" => Ok(Self::KMeansPlusPlus),
            other => Err(KMeansError::invalid(format!("unknown init method `{other}`"))),
        }
    }
}

impl fmt::Display for InitMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitMethod::RandomDistinct => f.write_str("random_distinct"),
            InitMethod::KMeansPlusPlus => f.write_str("kmeanspp"),
        }
    }
}

/// What to do with a centroid that received no points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyClusterPolicy {
    /// Keep the previous centroid row.
    #[default]
    Keep,
    /// Move the centroid onto the point farthest from its assigned centroid.
    ReseedFarthest,
}

impl FromStr for EmptyClusterPolicy {
    type Err = KMeansError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "keep" => Ok(Self::Keep),
            "reseed_farthest" | "reseed-farthest" => Ok(Self::ReseedFarthest),
            other => Err(KMeansError::invalid(format!(
                "unknown empty-cluster policy `{other}`"
            ))),
        }
    }
}

/// Order in which segment partials reach the shared accumulators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeMode {
    /// Ascending (chunk, segment) order, applied after all chunks finish.
    #[default]
    Deterministic,
    /// Each worker merges under a per-cluster lock as soon as a segment ends.
    Relaxed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub clusters: usize,
    pub max_iters: usize,
    /// Converged once no centroid moves farther than this (L2).
    pub shift_tol: f64,
    pub seed: u64,
    pub init: InitMethod,
    pub empty_cluster_policy: EmptyClusterPolicy,
    /// Overrides the cache-derived tiling.
    pub tiling: Option<TilingConfig>,
    pub merge_mode: MergeMode,
    pub cache: CacheModel,
}

impl KMeansConfig {
    pub fn new(clusters: usize) -> Self {
        Self {
            clusters,
            max_iters: 100,
            shift_tol: 0.0,
            seed: 0,
            init: InitMethod::default(),
            empty_cluster_policy: EmptyClusterPolicy::default(),
            tiling: None,
            merge_mode: MergeMode::default(),
            cache: CacheModel::default(),
        }
    }

    pub fn with_max_iters(mut self, iters: usize) -> Self {
        self.max_iters = iters;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_shift_tol(mut self, tol: f64) -> Self {
        self.shift_tol = tol;
        self
    }

    pub fn with_init(mut self, init: InitMethod) -> Self {
        self.init = init;
        self
    }

    pub fn with_tiling(mut self, tiling: TilingConfig) -> Self {
        self.tiling = Some(tiling);
        self
    }

    pub fn with_empty_cluster_policy(mut self, policy: EmptyClusterPolicy) -> Self {
        self.empty_cluster_policy = policy;
        self
    }

    pub fn with_merge_mode(mut self, mode: MergeMode) -> Self {
        self.merge_mode = mode;
        self
    }

    pub fn with_cache(mut self, cache: CacheModel) -> Self {
        self.cache = cache;
        self
    }

    pub fn validate(&self, points: usize) -> Result<()> {
        if self.clusters == 0 {
            return Err(KMeansError::invalid("K must be at least 1"));
        }
        if self.clusters > points {
            return Err(KMeansError::invalid(format!(
                "K={} exceeds the number of points N={points}",
                self.clusters
            )));
        }
        if self.max_iters == 0 {
            return Err(KMeansError::invalid("max_iters must be at least 1"));
        }
        if self.shift_tol.is_nan() || self.shift_tol < 0.0 {
            return Err(KMeansError::invalid("shift_tol must be non-negative"));
        }
        if let Some(t) = &self.tiling {
            t.validate()?;
        }
        self.cache.validate()
    }
}

#[derive(Debug, Clone)]
pub struct KMeansResult<T> {
    pub centroids: Centroids<T>,
    pub assignments: Assignments,
    /// `objective_history[b][t]`: objective of batch element `b` after the
    /// assignment step of iteration `t`.
    pub objective_history: Vec<Vec<f64>>,
    /// Largest iteration count over the batch.
    pub iterations_run: usize,
    pub counters: CounterSnapshot,
}

impl<T> KMeansResult<T> {
    pub fn final_objective(&self) -> Vec<f64> {
        self.objective_history
            .iter()
            .map(|h| h.last().copied().unwrap_or(f64::NAN))
            .collect()
    }
}
