//! Batched dense containers shared by every engine.
//!
//! All three containers are batch-major: batch element `b` occupies one
//! contiguous block, and rows within a block are row-major. Batch elements are
//! independent problems that share their shape.

use crate::element::Element;
use crate::error::{KMeansError, Result};

fn check_finite<T: Element>(what: &str, data: &[T]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(pos) => Err(KMeansError::invalid(format!(
            "{what} contains a non-finite value at flat index {pos}"
        ))),
        None => Ok(()),
    }
}

/// A batch of `B` point sets, each `N x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix<T> {
    batch: usize,
    points: usize,
    dims: usize,
    data: Vec<T>,
}

impl<T: Element> DataMatrix<T> {
    pub fn new(batch: usize, points: usize, dims: usize, data: Vec<T>) -> Result<Self> {
        if batch == 0 || points == 0 || dims == 0 {
            return Err(KMeansError::invalid(format!(
                "data shape must be positive, got B={batch} N={points} d={dims}"
            )));
        }
        let expected = batch
            .checked_mul(points)
            .and_then(|v| v.checked_mul(dims))
            .ok_or_else(|| KMeansError::invalid("data shape overflows usize"))?;
        if data.len() != expected {
            return Err(KMeansError::invalid(format!(
                "data length {} does not match B*N*d = {expected}",
                data.len()
            )));
        }
        check_finite("data matrix", &data)?;
        Ok(Self {
            batch,
            points,
            dims,
            data,
        })
    }

    /// Single batch element built from rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let dims = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dims) {
            return Err(KMeansError::invalid("ragged rows"));
        }
        Self::new(1, rows.len(), dims, rows.concat())
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// The `N x d` block of batch element `b`.
    pub fn batch_slice(&self, b: usize) -> &[T] {
        let len = self.points * self.dims;
        &self.data[b * len..(b + 1) * len]
    }

    pub fn row(&self, b: usize, i: usize) -> &[T] {
        let start = (b * self.points + i) * self.dims;
        &self.data[start..start + self.dims]
    }
}

/// Per-batch `K x d` centroid matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Centroids<T> {
    batch: usize,
    clusters: usize,
    dims: usize,
    data: Vec<T>,
}

impl<T: Element> Centroids<T> {
    pub fn new(batch: usize, clusters: usize, dims: usize, data: Vec<T>) -> Result<Self> {
        if batch == 0 || clusters == 0 || dims == 0 {
            return Err(KMeansError::invalid(format!(
                "centroid shape must be positive, got B={batch} K={clusters} d={dims}"
            )));
        }
        if data.len() != batch * clusters * dims {
            return Err(KMeansError::invalid(format!(
                "centroid length {} does not match B*K*d = {}",
                data.len(),
                batch * clusters * dims
            )));
        }
        check_finite("centroids", &data)?;
        Ok(Self {
            batch,
            clusters,
            dims,
            data,
        })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let dims = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dims) {
            return Err(KMeansError::invalid("ragged rows"));
        }
        Self::new(1, rows.len(), dims, rows.concat())
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn clusters(&self) -> usize {
        self.clusters
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn batch_slice(&self, b: usize) -> &[T] {
        let len = self.clusters * self.dims;
        &self.data[b * len..(b + 1) * len]
    }

    pub(crate) fn batch_slice_mut(&mut self, b: usize) -> &mut [T] {
        let len = self.clusters * self.dims;
        &mut self.data[b * len..(b + 1) * len]
    }

    pub fn row(&self, b: usize, k: usize) -> &[T] {
        let start = (b * self.clusters + k) * self.dims;
        &self.data[start..start + self.dims]
    }

    /// Checks that these centroids can be paired with `x`.
    pub fn check_compatible(&self, x: &DataMatrix<T>) -> Result<()> {
        if self.batch != x.batch() || self.dims != x.dims() {
            return Err(KMeansError::contract(format!(
                "centroids (B={}, d={}) incompatible with data (B={}, d={})",
                self.batch,
                self.dims,
                x.batch(),
                x.dims()
            )));
        }
        if self.clusters > x.points() {
            return Err(KMeansError::contract(format!(
                "K={} exceeds N={}",
                self.clusters,
                x.points()
            )));
        }
        Ok(())
    }
}

/// Per-batch cluster id for every point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignments {
    batch: usize,
    points: usize,
    clusters: usize,
    values: Vec<u32>,
}

impl Assignments {
    pub fn new(batch: usize, points: usize, clusters: usize, values: Vec<u32>) -> Result<Self> {
        if values.len() != batch * points {
            return Err(KMeansError::contract(format!(
                "assignment length {} does not match B*N = {}",
                values.len(),
                batch * points
            )));
        }
        if let Some(pos) = values.iter().position(|&v| v as usize >= clusters) {
            return Err(KMeansError::contract(format!(
                "assignment {} at index {pos} is not below K={clusters}",
                values[pos]
            )));
        }
        Ok(Self {
            batch,
            points,
            clusters,
            values,
        })
    }

    /// Single batch element.
    pub fn single(clusters: usize, values: Vec<u32>) -> Result<Self> {
        let n = values.len();
        Self::new(1, n, clusters, values)
    }

    pub(crate) fn from_parts_unchecked(
        batch: usize,
        points: usize,
        clusters: usize,
        values: Vec<u32>,
    ) -> Self {
        debug_assert_eq!(values.len(), batch * points);
        debug_assert!(values.iter().all(|&v| (v as usize) < clusters));
        Self {
            batch,
            points,
            clusters,
            values,
        }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn clusters(&self) -> usize {
        self.clusters
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<u32> {
        self.values
    }

    pub fn batch_slice(&self, b: usize) -> &[u32] {
        &self.values[b * self.points..(b + 1) * self.points]
    }

    pub fn check_compatible<T: Element>(&self, x: &DataMatrix<T>) -> Result<()> {
        if self.batch != x.batch() || self.points != x.points() {
            return Err(KMeansError::contract(format!(
                "assignments (B={}, N={}) incompatible with data (B={}, N={})",
                self.batch,
                self.points,
                x.batch(),
                x.points()
            )));
        }
        Ok(())
    }
}
