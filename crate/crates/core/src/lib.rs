//! Mean time to absorption of Markov chains given as stochastic automata
//! networks, computed with tensor trains, exponential-sum inverses of
//! Kronecker sums and Neumann series.

pub mod case_study;
pub mod error;
pub mod kron;
pub mod model;
pub mod oracle;
pub mod solver;
pub mod tt;

pub use error::{Error, Result};
