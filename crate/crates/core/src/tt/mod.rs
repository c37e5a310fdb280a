//! Tensor trains.
//!
//! A tensor `v(i_1, ..., i_k)` is stored as a chain of order-3 carriages
//! `M_t` of shape `r_t x n_t x r_{t+1}` with `r_1 = r_{k+1} = 1`, so that
//! each entry is the product of the matrix slices `M_1(i_1) M_2(i_2) ... M_k(i_k)`.
//!
//! Operators are stored the same way with a fused mode `(row, col)` of size
//! `m_t * n_t`, row index fastest. Dense expansions use the Kronecker index
//! convention: the last mode varies fastest.

mod carriage;
mod matrix;
mod product;
mod vector;

pub use carriage::Carriage;
pub use matrix::TtMatrix;
pub use vector::{RoundingOutcome, TtVector};

/// Largest number of entries a dense expansion may have.
pub const DEFAULT_DENSE_CAP: usize = 10_000_000;

/// Controls TT truncation.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RoundingPolicy {
    /// Relative Frobenius tolerance of the whole truncation.
    pub rel_tolerance: f64,
    /// Optional cap on every bond rank.
    pub max_rank: Option<usize>,
}

impl RoundingPolicy {
    pub fn new(rel_tolerance: f64, max_rank: Option<usize>) -> crate::Result<Self> {
        if !(rel_tolerance >= 0.0) || !rel_tolerance.is_finite() {
            return Err(crate::Error::InvalidInput(format!(
                "rounding tolerance must be a nonnegative number, got {rel_tolerance}"
            )));
        }
        if max_rank == Some(0) {
            return Err(crate::Error::InvalidInput("max_rank must be positive".into()));
        }
        Ok(Self {
            rel_tolerance,
            max_rank,
        })
    }

    /// No truncation beyond exact rank deficiency.
    pub fn exact() -> Self {
        Self {
            rel_tolerance: 0.0,
            max_rank: None,
        }
    }

    pub fn with_tolerance(rel_tolerance: f64) -> Self {
        Self {
            rel_tolerance,
            max_rank: None,
        }
    }
}

impl Default for RoundingPolicy {
    fn default() -> Self {
        Self {
            rel_tolerance: 1e-8,
            max_rank: None,
        }
    }
}

pub(crate) fn check_dense_size(modes: &[usize], cap: usize) -> crate::Result<usize> {
    let mut size: usize = 1;
    for &n in modes {
        size = match size.checked_mul(n) {
            Some(s) if s <= cap => s,
            _ => {
                return Err(crate::Error::SizeCap {
                    size: modes.iter().fold(1usize, |a, &n| a.saturating_mul(n)),
                    cap,
                })
            }
        };
    }
    Ok(size)
}
