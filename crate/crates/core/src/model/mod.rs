//! Stochastic automata networks: the model, its file format, the descriptor
//! `Q = R + W + Δ` and the splitting used by the Neumann solvers.

mod descriptor;
mod file;
mod rcm;

pub use descriptor::{build_descriptor, build_splitting, default_gamma, Descriptor, GammaMode, Splitting};
pub use file::{ModelFile, SyncSpec};
pub use rcm::{bandwidth, rcm_order};

use nalgebra::DMatrix;

use crate::{Error, Result};

/// Square 0/1 interaction matrix between automata.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Topology {
    k: usize,
    entries: Vec<bool>,
}

impl Topology {
    pub fn identity(k: usize) -> Self {
        let mut entries = vec![false; k * k];
        for i in 0..k {
            entries[i * k + i] = true;
        }
        Self { k, entries }
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let k = rows.len();
        let mut entries = Vec::with_capacity(k * k);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::Model(format!("topology row {i} has {} entries, expected {k}", row.len())));
            }
            for &x in row {
                match x {
                    0 => entries.push(false),
                    1 => entries.push(true),
                    _ => return Err(Error::Model(format!("topology row {i} has a non-0/1 entry {x}"))),
                }
            }
        }
        Ok(Self { k, entries })
    }

    pub fn size(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.entries[i * self.k + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        self.entries[i * self.k + j] = value;
    }

    pub fn rows(&self) -> Vec<Vec<u8>> {
        (0..self.k)
            .map(|i| (0..self.k).map(|j| self.get(i, j) as u8).collect())
            .collect()
    }

    /// `T'[p][q] = T[perm[p]][perm[q]]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let k = self.k;
        let mut entries = vec![false; k * k];
        for p in 0..k {
            for q in 0..k {
                entries[p * k + q] = self.get(perm[p], perm[q]);
            }
        }
        Self { k, entries }
    }

    pub fn off_diagonal_count(&self) -> usize {
        (0..self.k)
            .flat_map(|i| (0..self.k).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j && self.get(i, j))
            .count()
    }
}

/// A transition firing jointly in several automata with rate `rate`.
/// `factors[i]` is the 0/1 matrix of its effect on automaton `i`
/// (the identity when automaton `i` is not involved).
#[derive(Clone, Debug, PartialEq)]
pub struct SyncTransition {
    pub rate: f64,
    pub factors: Vec<DMatrix<f64>>,
}

/// A network of `k` automata. The global absorbing state is the product
/// state with every automaton in its last local state.
#[derive(Clone, Debug, PartialEq)]
pub struct SanModel {
    local: Vec<DMatrix<f64>>,
    syncs: Vec<SyncTransition>,
    pi0_factors: Vec<Vec<f64>>,
    topology: Topology,
}

const PROBABILITY_TOL: f64 = 1e-12;

impl SanModel {
    pub fn new(
        local: Vec<DMatrix<f64>>,
        syncs: Vec<SyncTransition>,
        pi0_factors: Vec<Vec<f64>>,
        topology: Option<Topology>,
    ) -> Result<Self> {
        let k = local.len();
        let topology = topology.unwrap_or_else(|| Topology::identity(k));
        let model = Self {
            local,
            syncs,
            pi0_factors,
            topology,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        let k = self.local.len();
        if k == 0 {
            return Err(Error::Model("a model needs at least one automaton".into()));
        }
        for (i, r) in self.local.iter().enumerate() {
            let n = r.nrows();
            if !r.is_square() || n == 0 {
                return Err(Error::Model(format!("local[{i}] must be a non-empty square matrix")));
            }
            for a in 0..n {
                for b in 0..n {
                    let x = r[(a, b)];
                    if !x.is_finite() {
                        return Err(Error::Model(format!("local[{i}][{a}][{b}] is not finite")));
                    }
                    if a == b && x != 0.0 {
                        return Err(Error::Model(format!("local[{i}] must have a zero diagonal")));
                    }
                    if x < 0.0 {
                        return Err(Error::Model(format!("local[{i}][{a}][{b}] is negative")));
                    }
                }
            }
            if r.row(n - 1).iter().any(|&x| x != 0.0) {
                return Err(Error::Model(format!(
                    "local[{i}]: the last state must have no outgoing local transitions"
                )));
            }
        }
        let sizes = self.state_counts();
        for (t, s) in self.syncs.iter().enumerate() {
            if !(s.rate > 0.0) || !s.rate.is_finite() {
                return Err(Error::Model(format!("syncs[{t}].rate must be a positive number")));
            }
            if s.factors.len() != k {
                return Err(Error::Model(format!(
                    "syncs[{t}] has {} factors, expected {k}",
                    s.factors.len()
                )));
            }
            for (i, f) in s.factors.iter().enumerate() {
                if f.nrows() != sizes[i] || f.ncols() != sizes[i] {
                    return Err(Error::Model(format!(
                        "syncs[{t}].factors[{i}] must be {0}x{0}",
                        sizes[i]
                    )));
                }
                if f.iter().any(|&x| x != 0.0 && x != 1.0) {
                    return Err(Error::Model(format!(
                        "syncs[{t}].factors[{i}] must have entries in {{0, 1}}"
                    )));
                }
            }
            // the absorbing state may not be left: either some factor is
            // disabled in its last state, or every factor stays put there
            let disabled = s.factors.iter().any(|f| f.row(f.nrows() - 1).iter().all(|&x| x == 0.0));
            let stays = s.factors.iter().all(|f| {
                let n = f.nrows();
                (0..n - 1).all(|j| f[(n - 1, j)] == 0.0)
            });
            if !disabled && !stays {
                return Err(Error::Model(format!(
                    "syncs[{t}] leaves the absorbing state"
                )));
            }
        }
        if self.pi0_factors.len() != k {
            return Err(Error::Model(format!(
                "pi0_factors has {} entries, expected {k}",
                self.pi0_factors.len()
            )));
        }
        for (i, p) in self.pi0_factors.iter().enumerate() {
            if p.len() != sizes[i] {
                return Err(Error::Model(format!("pi0_factors[{i}] must have {} entries", sizes[i])));
            }
            if p.iter().any(|&x| !x.is_finite() || x < 0.0) {
                return Err(Error::Model(format!("pi0_factors[{i}] must be nonnegative")));
            }
            let s: f64 = p.iter().sum();
            if (s - 1.0).abs() > PROBABILITY_TOL {
                return Err(Error::Model(format!("pi0_factors[{i}] sums to {s}, not 1")));
            }
        }
        let absorbing_mass: f64 = self.pi0_factors.iter().map(|p| p[p.len() - 1]).product();
        if absorbing_mass != 0.0 {
            return Err(Error::Model(
                "the initial distribution must put no mass on the absorbing state".into(),
            ));
        }
        if self.topology.size() != k {
            return Err(Error::Model(format!("topology must be {k}x{k}")));
        }
        if (0..k).any(|i| !self.topology.get(i, i)) {
            return Err(Error::Model("topology must have a unit diagonal".into()));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.local.len()
    }

    pub fn state_counts(&self) -> Vec<usize> {
        self.local.iter().map(|r| r.nrows()).collect()
    }

    /// `|PS|`, saturating.
    pub fn state_space_size(&self) -> usize {
        self.state_counts().iter().fold(1usize, |a, &n| a.saturating_mul(n))
    }

    pub fn local(&self) -> &[DMatrix<f64>] {
        &self.local
    }

    pub fn syncs(&self) -> &[SyncTransition] {
        &self.syncs
    }

    pub fn pi0_factors(&self) -> &[Vec<f64>] {
        &self.pi0_factors
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    /// Multi-index of the absorbing state.
    pub fn absorbing_index(&self) -> Vec<usize> {
        self.state_counts().iter().map(|n| n - 1).collect()
    }

    /// Reorders the automata: position `p` of the result holds automaton `perm[p]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let k = self.k();
        let mut seen = vec![false; k];
        if perm.len() != k || perm.iter().any(|&p| p >= k || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidInput(format!("{perm:?} is not a permutation of 0..{k}")));
        }
        Ok(Self {
            local: perm.iter().map(|&p| self.local[p].clone()).collect(),
            syncs: self
                .syncs
                .iter()
                .map(|s| SyncTransition {
                    rate: s.rate,
                    factors: perm.iter().map(|&p| s.factors[p].clone()).collect(),
                })
                .collect(),
            pi0_factors: perm.iter().map(|&p| self.pi0_factors[p].clone()).collect(),
            topology: self.topology.permuted(perm),
        })
    }
}
