//! Squared Euclidean distance and its norm expansion.
//!
//! Every engine computes dot products and norms through [`dot`] and
//! [`row_norms`], which sum in ascending coordinate order. Kernels that
//! vectorize must do so across independent pairs, never across coordinates of
//! one pair, so that all engines produce bitwise-identical distances.

use crate::element::Element;
use crate::error::{KMeansError, Result};

/// `sum_j (x_j - c_j)^2`.
pub fn squared_distance<T: Element>(x: &[T], c: &[T]) -> Result<T> {
    if x.len() != c.len() {
        return Err(KMeansError::contract(format!(
            "dimension mismatch: {} vs {}",
            x.len(),
            c.len()
        )));
    }
    Ok(squared_distance_unchecked(x, c))
}

#[inline]
pub(crate) fn squared_distance_unchecked<T: Element>(x: &[T], c: &[T]) -> T {
    x.iter().zip(c).fold(T::zero(), |acc, (&a, &b)| {
        let diff = a - b;
        acc + diff * diff
    })
}

/// Canonical dot product, accumulated in ascending coordinate order.
#[inline]
pub fn dot<T: Element>(x: &[T], c: &[T]) -> T {
    debug_assert_eq!(x.len(), c.len());
    x.iter()
        .zip(c)
        .fold(T::zero(), |acc, (&a, &b)| acc + a * b)
}

/// `||x||^2 + ||c||^2 - 2 x.c`, clamped at zero.
#[inline]
pub fn expanded_distance<T: Element>(x_norm: T, c_norm: T, dot: T) -> T {
    let two = T::one() + T::one();
    let d = (x_norm + c_norm) - two * dot;
    if d < T::zero() {
        T::zero()
    } else {
        d
    }
}

/// Squared L2 norm of every `dims`-wide row of a row-major block.
pub fn row_norms<T: Element>(rows: &[T], dims: usize) -> Vec<T> {
    assert!(dims > 0 && rows.len().is_multiple_of(dims), "block is not a whole number of rows");
    rows.chunks_exact(dims).map(|r| dot(r, r)).collect()
}
