//! Benchmark family: `k` components, each with a hardware part that can fail
//! and a software part whose failure propagates to dependent components.
//!
//! Local states: 0 = working, 1 = software failed, 2 = failed.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{SanModel, SyncTransition, Topology};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseStudyParams {
    pub k: usize,
    pub seed: u64,
    /// Off-diagonal edge probability, `1/(2k)` when absent.
    pub density: Option<f64>,
}

impl CaseStudyParams {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            density: None,
        }
    }

    pub fn density(&self) -> f64 {
        self.density.unwrap_or(1.0 / (2.0 * self.k as f64))
    }
}

/// Unit diagonal, every off-diagonal entry independently 1 with probability `density`.
pub fn random_topology(k: usize, seed: u64, density: f64) -> Result<Topology> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&density) {
        return Err(Error::InvalidInput(format!("density {density} is not in [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Topology::identity(k);
    for i in 0..k {
        for j in 0..k {
            if i != j {
                let u: f64 = rng.random();
                t.set(i, j, u < density);
            }
        }
    }
    Ok(t)
}

/// Four components: 0 affects 1 and 2, 1 and 2 affect 3.
pub fn figure_topology() -> Topology {
    Topology::from_rows(&[
        vec![1, 1, 1, 0],
        vec![0, 1, 0, 1],
        vec![0, 0, 1, 1],
        vec![0, 0, 0, 1],
    ])
    .expect("valid topology")
}

/// Model for a given topology; component `i` (1-based) has hardware failure
/// rates `i/10` and `i` from the working and software-failed states and
/// software failure rate `i`.
pub fn case_study_model(topology: &Topology) -> Result<SanModel> {
    let k = topology.size();
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let local = (1..=k)
        .map(|i| {
            let i = i as f64;
            DMatrix::from_row_slice(3, 3, &[0.0, 0.0, i / 10.0, 0.0, 0.0, i, 0.0, 0.0, 0.0])
        })
        .collect();
    let own = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    let dependent = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    let syncs = (0..k)
        .map(|j| SyncTransition {
            rate: (j + 1) as f64,
            factors: (0..k)
                .map(|i| {
                    if i == j {
                        own.clone()
                    } else if topology.get(j, i) {
                        dependent.clone()
                    } else {
                        DMatrix::identity(3, 3)
                    }
                })
                .collect(),
        })
        .collect();
    let pi0 = vec![vec![1.0, 0.0, 0.0]; k];
    SanModel::new(local, syncs, pi0, Some(topology.clone()))
}

pub fn generate_case_study(params: &CaseStudyParams) -> Result<SanModel> {
    let t = random_topology(params.k, params.seed, params.density())?;
    case_study_model(&t)
}
