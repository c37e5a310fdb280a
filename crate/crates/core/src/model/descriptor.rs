use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::SanModel;
use crate::kron::KronSumOperator;
use crate::tt::{RoundingPolicy, TtMatrix, TtVector};
use crate::{Error, Result};

/// `Q = R + W + Δ` in train format.
#[derive(Clone, Debug)]
pub struct Descriptor {
    pub local: KronSumOperator,
    pub sync_terms: Vec<(f64, Vec<DMatrix<f64>>)>,
    /// Exit rates `d = (R + W) e`; `Δ = -diag(d)`.
    pub exit_rates: TtVector,
    pub generator: TtMatrix,
    pub absorbing: Vec<usize>,
    exit_rate_bound: f64,
}

impl Descriptor {
    pub fn modes(&self) -> Vec<usize> {
        self.local.sizes()
    }

    /// `R + W` without the diagonal correction.
    pub fn transitions(&self) -> Result<TtMatrix> {
        let r = self.local.to_ttm();
        if self.sync_terms.is_empty() {
            Ok(r)
        } else {
            r.add(&TtMatrix::from_kron_terms(&self.sync_terms)?)
        }
    }

    /// Upper bound on `‖Δ‖_∞ = max d`.
    pub fn exit_rate_bound(&self) -> f64 {
        self.exit_rate_bound
    }
}

pub fn build_descriptor(model: &SanModel, policy: &RoundingPolicy) -> Result<Descriptor> {
    let local = KronSumOperator::new(model.local().to_vec())?;
    let sync_terms: Vec<(f64, Vec<DMatrix<f64>>)> = model
        .syncs()
        .iter()
        .map(|s| (s.rate, s.factors.clone()))
        .collect();
    let mut desc = Descriptor {
        local,
        sync_terms,
        exit_rates: TtVector::ones(&model.state_counts())?,
        generator: TtMatrix::identity(&model.state_counts())?,
        absorbing: model.absorbing_index(),
        exit_rate_bound: exit_rate_bound(model),
    };
    let rw = desc.transitions()?.round(policy);
    desc.exit_rates = rw.apply(&TtVector::ones(&model.state_counts())?)?.round(policy);
    desc.generator = rw.sub(&TtMatrix::diag(&desc.exit_rates))?.round(policy);
    Ok(desc)
}

fn row_sums(f: &DMatrix<f64>) -> Vec<f64> {
    (0..f.nrows()).map(|i| f.row(i).sum()).collect()
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|&x| x == v[0])
}

/// `max d` bounded automaton by automaton. A synchronized term whose row
/// sums are constant in all but one automaton is folded into that
/// automaton's exit-rate profile, which makes the bound exact for models
/// where every term is of this form.
fn exit_rate_bound(model: &SanModel) -> f64 {
    let mut profiles: Vec<Vec<f64>> = model.local().iter().map(row_sums).collect();
    let mut constant = 0.0;
    for s in model.syncs() {
        let sums: Vec<Vec<f64>> = s.factors.iter().map(row_sums).collect();
        let varying: Vec<usize> = (0..sums.len()).filter(|&i| !is_constant(&sums[i])).collect();
        match varying.as_slice() {
            [] => constant += s.rate * sums.iter().map(|v| v[0]).product::<f64>(),
            [j] => {
                let c: f64 = sums
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != *j)
                    .map(|(_, v)| v[0])
                    .product();
                for (p, w) in profiles[*j].iter_mut().zip(&sums[*j]) {
                    *p += s.rate * c * w;
                }
            }
            _ => {
                constant += s.rate
                    * sums
                        .iter()
                        .map(|v| v.iter().copied().fold(0.0, f64::max))
                        .product::<f64>()
            }
        }
    }
    constant
        + profiles
            .iter()
            .map(|p| p.iter().copied().fold(0.0, f64::max))
            .sum::<f64>()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum GammaMode {
    /// The exit-rate bound itself.
    #[default]
    Minimal,
    /// `c` times the bound, `c > 1`.
    Scaled(f64),
    /// A fixed value, checked against the bound.
    Value(f64),
}


pub fn default_gamma(descriptor: &Descriptor, mode: GammaMode) -> Result<f64> {
    let bound = descriptor.exit_rate_bound();
    match mode {
        GammaMode::Minimal => Ok(bound),
        GammaMode::Scaled(c) if c > 1.0 && c.is_finite() => Ok(c * bound),
        GammaMode::Scaled(c) => Err(Error::InvalidInput(format!(
            "gamma scale factor must be greater than 1, got {c}"
        ))),
        GammaMode::Value(v) if v.is_finite() && v >= bound => Ok(v),
        GammaMode::Value(v) => Err(Error::GammaTooSmall { gamma: v, bound }),
    }
}

/// `Q = D + A_1 + A_2` with `D = -γI`,
/// `D + A_1 = (R^{(1)} - γ/k I) ⊕ ... ⊕ (R^{(k)} - γ/k I)` and
/// `A_2 = W + Δ + γI`.
#[derive(Clone, Debug)]
pub struct Splitting {
    pub gamma: f64,
    /// `D + A_1` as a Kronecker sum.
    pub q1: KronSumOperator,
    pub a2: TtMatrix,
    /// `(A_1 + A_2) e_N`.
    pub q: TtVector,
    pub e_n: TtVector,
}

impl Splitting {
    /// `-(D + A_1)`, the operator whose spectrum is positive.
    pub fn neg_q1(&self) -> KronSumOperator {
        self.q1.negate()
    }

    /// `(A_2 - q e_N^T) v`.
    pub fn apply_q2(&self, v: &TtVector, policy: &RoundingPolicy) -> Result<TtVector> {
        let c = self.e_n.dot(v)?;
        let av = self.a2.apply(v)?;
        Ok(if c == 0.0 {
            av.round(policy)
        } else {
            av.sub(&self.q.scale(c))?.round(policy)
        })
    }

    /// `(A_2 - q e_N^T)^T w`.
    pub fn apply_q2_left(&self, w: &TtVector, policy: &RoundingPolicy) -> Result<TtVector> {
        let c = self.q.dot(w)?;
        let aw = self.a2.apply_left(w)?;
        Ok(if c == 0.0 {
            aw.round(policy)
        } else {
            aw.sub(&self.e_n.scale(c))?.round(policy)
        })
    }

    /// `A_2 - q e_N^T` as an operator.
    pub fn q2(&self, policy: &RoundingPolicy) -> Result<TtMatrix> {
        Ok(self
            .a2
            .sub(&TtMatrix::outer(&self.q, &self.e_n)?)?
            .round(policy))
    }
}

pub fn build_splitting(
    model: &SanModel,
    descriptor: &Descriptor,
    gamma: f64,
    policy: &RoundingPolicy,
) -> Result<Splitting> {
    let bound = descriptor.exit_rate_bound();
    if !gamma.is_finite() || gamma < bound {
        return Err(Error::GammaTooSmall { gamma, bound });
    }
    let modes = model.state_counts();
    let shift = gamma / model.k() as f64;
    let q1 = KronSumOperator::new(
        model
            .local()
            .iter()
            .map(|r| r - DMatrix::identity(r.nrows(), r.ncols()) * shift)
            .collect(),
    )?;
    // γ·1 - d is the diagonal of Δ + γI
    let diag = TtVector::ones(&modes)?
        .scale(gamma)
        .sub(&descriptor.exit_rates)?
        .round(policy);
    let mut a2 = TtMatrix::diag(&diag);
    if !descriptor.sync_terms.is_empty() {
        a2 = a2.add(&TtMatrix::from_kron_terms(&descriptor.sync_terms)?)?;
    }
    let a2 = a2.round(policy);
    let e_n = TtVector::basis(&modes, &descriptor.absorbing)?;
    // A_1 = R
    let a1 = descriptor.local.to_ttm();
    let q = a1.add(&a2)?.apply(&e_n)?.round(policy);
    Ok(Splitting {
        gamma,
        q1,
        a2,
        q,
        e_n,
    })
}
