//! Matrix exponentials of small factors and exponential-sum inverses of
//! Kronecker sums.
//!
//! For `x > 0`, `1/x = ∫ exp(-x e^t + t) dt` over the real line. The
//! trapezoidal rule with step `h` turns this into `1/x ≈ Σ α_j exp(-β_j x)`
//! with `α_j = h e^{jh}` and `β_j = e^{jh}`. Because
//! `exp(A_1 ⊕ ... ⊕ A_k) = exp(A_1) ⊗ ... ⊗ exp(A_k)`, every term of the sum
//! applied to a Kronecker sum is a rank-1 Kronecker product.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::tt::{RoundingPolicy, TtMatrix, TtVector};
use crate::{Error, Result};

/// Largest factor dimension accepted by [`expm_dense`].
pub const DEFAULT_EXPM_CAP: usize = 512;

/// Smallest accuracy [`exp_sum_coeffs`] will promise.
pub const EXP_SUM_EPS_FLOOR: f64 = 1e-13;

/// Half-width of the strip of analyticity used to pick the quadrature step.
/// Less than the `π/2` available for real arguments, so the sum stays
/// accurate on a complex neighbourhood of the interval.
const STRIP_HALF_WIDTH: f64 = PI / 4.0;

/// Factor by which the lower end of a spectrum enclosure is pushed above 1.
pub const SPECTRAL_MARGIN: f64 = 4.0;

pub fn expm_dense(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    expm_dense_capped(a, DEFAULT_EXPM_CAP)
}

/// Scaling and squaring with Padé approximants (nalgebra's implementation).
pub fn expm_dense_capped(a: &DMatrix<f64>, cap: usize) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::InvalidInput(format!(
            "matrix exponential of a non-square {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.nrows() > cap {
        return Err(Error::SizeCap {
            size: a.nrows(),
            cap,
        });
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("matrix exponential argument"));
    }
    if a.nrows() == 0 {
        return Ok(a.clone());
    }
    let e = a.exp();
    if e.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("matrix exponential result"));
    }
    Ok(e)
}

/// `1/x ≈ Σ_j α_j exp(-β_j x)` on `[1, r_cond]`.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ExponentialSum {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub r_cond: f64,
    /// Bound on `sup |1/x - Σ α_j exp(-β_j x)|` over the interval.
    pub accuracy: f64,
}

impl ExponentialSum {
    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.alphas
            .iter()
            .zip(&self.betas)
            .map(|(a, b)| a * (-b * x).exp())
            .sum()
    }

    /// Largest `|1/x - sum(x)|` over the given points.
    pub fn max_error<I: IntoIterator<Item = f64>>(&self, points: I) -> f64 {
        points
            .into_iter()
            .map(|x| (1.0 / x - self.eval(x)).abs())
            .fold(0.0, f64::max)
    }
}

/// Raw trapezoidal sum with nodes `t_j = j h`, `j = lo..=hi`.
pub fn sinc_exp_sum(step: f64, lo: i64, hi: i64) -> ExponentialSum {
    let (alphas, betas) = (lo..=hi)
        .map(|j| {
            let t = j as f64 * step;
            (step * t.exp(), t.exp())
        })
        .unzip();
    ExponentialSum {
        alphas,
        betas,
        r_cond: 1.0,
        accuracy: f64::NAN,
    }
}

/// Exponential sum with accuracy `eps` on `[1, r_cond]`.
///
/// Half of the budget goes to the discretization error, a quarter to each
/// truncated tail. Terms negligible over the whole interval are dropped.
pub fn exp_sum_coeffs(r_cond: f64, eps: f64) -> Result<ExponentialSum> {
    if !(r_cond >= 1.0) || !r_cond.is_finite() {
        return Err(Error::InvalidInput(format!("r_cond must be >= 1, got {r_cond}")));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidInput(format!("eps must lie in (0, 1), got {eps}")));
    }
    if eps < EXP_SUM_EPS_FLOOR {
        return Err(Error::AccuracyFloor {
            requested: eps,
            attainable: EXP_SUM_EPS_FLOOR,
        });
    }
    let d = STRIP_HALF_WIDTH;
    // |f(t ± i d)| integrates to 1/(x cos d) <= 1/cos d for x >= 1
    let strip_mass = 1.0 / d.cos();
    let disc_budget = eps / 2.0;
    let h = 2.0 * PI * d / (1.0 + 2.0 * strip_mass / disc_budget).ln();
    let disc = 2.0 * strip_mass / ((2.0 * PI * d / h).exp() - 1.0);

    // left tail: Σ_{j < lo} h e^{jh} <= (1 + h) e^{lo h}
    let tail_budget = eps / 4.0;
    let lo = -((((1.0 + h) / tail_budget).ln() / h).ceil() as i64);
    let left = (1.0 + h) * (lo as f64 * h).exp();
    // right tail for x >= 1: Σ_{j > hi} h g(jh) <= exp(-e^{hi h})
    let hi = ((1.0 / tail_budget).ln().ln() / h).ceil().max(0.0) as i64;
    let right = (-(hi as f64 * h).exp()).exp();

    let mut sum = sinc_exp_sum(h, lo, hi);
    // the right end of the node range decays double-exponentially; anything
    // below this level at x = 1 cannot matter anywhere on the interval
    let negligible = eps * 1e-6;
    let mut trimmed = 0.0;
    while sum.alphas.len() > 1 {
        let (a, b) = (*sum.alphas.last().unwrap(), *sum.betas.last().unwrap());
        let c = a * (-b).exp();
        if trimmed + c > negligible {
            break;
        }
        trimmed += c;
        sum.alphas.pop();
        sum.betas.pop();
    }
    sum.r_cond = r_cond;
    sum.accuracy = disc + left + right + trimmed;
    debug_assert!(sum.accuracy <= eps);
    Ok(sum)
}

/// `A_1 ⊕ ... ⊕ A_k` kept as its small dense factors.
#[derive(Clone, Debug, PartialEq)]
pub struct KronSumOperator {
    factors: Vec<DMatrix<f64>>,
}

impl KronSumOperator {
    pub fn new(factors: Vec<DMatrix<f64>>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidInput("Kronecker sum needs at least one factor".into()));
        }
        for (i, f) in factors.iter().enumerate() {
            if !f.is_square() || f.nrows() == 0 {
                return Err(Error::InvalidInput(format!("factor {i} is not a non-empty square matrix")));
            }
            if f.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("Kronecker sum factor"));
            }
        }
        Ok(Self { factors })
    }

    pub fn factors(&self) -> &[DMatrix<f64>] {
        &self.factors
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.nrows()).collect()
    }

    pub fn transpose(&self) -> Self {
        Self {
            factors: self.factors.iter().map(|f| f.transpose()).collect(),
        }
    }

    pub fn negate(&self) -> Self {
        Self {
            factors: self.factors.iter().map(|f| -f).collect(),
        }
    }

    pub fn to_ttm(&self) -> TtMatrix {
        TtMatrix::kron_sum(&self.factors).expect("validated factors")
    }

    pub fn to_dense(&self) -> Result<DMatrix<f64>> {
        self.to_ttm().to_dense()
    }
}

/// Enclosure `[a, b]` of the real parts of the spectrum of a Kronecker sum.
///
/// The spectrum of `A_1 ⊕ ... ⊕ A_k` is the set of sums of factor
/// eigenvalues. `a` adds the smallest real part of each factor's
/// eigenvalues, `b` adds each factor's Gershgorin upper bound
/// `max_i (a_ii + Σ_{j≠i} |a_ij|)`.
pub fn spectrum_interval(op: &KronSumOperator) -> Result<(f64, f64)> {
    let mut lower = 0.0;
    let mut upper = 0.0;
    for f in op.factors() {
        let n = f.nrows();
        let gershgorin = (0..n)
            .map(|i| f[(i, i)] + (0..n).filter(|&j| j != i).map(|j| f[(i, j)].abs()).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max);
        let min_re = if n == 1 {
            f[(0, 0)]
        } else {
            f.clone()
                .complex_eigenvalues()
                .iter()
                .map(|z| z.re)
                .fold(f64::INFINITY, f64::min)
        };
        lower += min_re;
        upper += gershgorin.max(min_re);
    }
    let scale = upper.abs().max(1.0);
    if !(lower > 1e-12 * scale) {
        return Err(Error::SpectrumNotPositive { lower, upper });
    }
    Ok((lower, upper))
}

/// Per-term factor exponentials `exp(-β_j s A_i)`.
fn term_factors(op: &KronSumOperator, es: &ExponentialSum, scale: f64) -> Result<Vec<Vec<DMatrix<f64>>>> {
    es.betas
        .iter()
        .map(|&beta| {
            op.factors()
                .iter()
                .map(|f| expm_dense(&(f * (-beta * scale))))
                .collect()
        })
        .collect()
}

fn check_scaled_interval(op: &KronSumOperator, es: &ExponentialSum, scale: f64) -> Result<()> {
    let (a, b) = spectrum_interval(op)?;
    let (lo, hi) = (a * scale, b * scale);
    let slack = 1e-12;
    if lo < 1.0 - slack || hi > es.r_cond * (1.0 + slack) {
        return Err(Error::IntervalViolation {
            lower: lo,
            upper: hi,
            r_cond: es.r_cond,
        });
    }
    Ok(())
}

/// `op^{-1} v ≈ s Σ_j α_j (exp(-β_j s A_1) ⊗ ... ⊗ exp(-β_j s A_k)) v`.
pub fn kron_sum_inverse_apply(
    op: &KronSumOperator,
    es: &ExponentialSum,
    scale: f64,
    v: &TtVector,
    policy: &RoundingPolicy,
) -> Result<TtVector> {
    check_scaled_interval(op, es, scale)?;
    let terms = term_factors(op, es, scale)?;
    apply_terms(&terms, &es.alphas, scale, v, policy)
}

/// The same approximation materialized as a rounded TT operator.
pub fn kron_sum_inverse_as_ttm(
    op: &KronSumOperator,
    es: &ExponentialSum,
    scale: f64,
    policy: &RoundingPolicy,
) -> Result<TtMatrix> {
    check_scaled_interval(op, es, scale)?;
    let terms = term_factors(op, es, scale)?;
    assemble_terms(&terms, &es.alphas, scale, policy)
}

/// Number of terms summed before each intermediate rounding.
const APPLY_CHUNK: usize = 8;

fn apply_terms(
    terms: &[Vec<DMatrix<f64>>],
    alphas: &[f64],
    scale: f64,
    v: &TtVector,
    policy: &RoundingPolicy,
) -> Result<TtVector> {
    let sizes: Vec<usize> = terms[0].iter().map(|f| f.nrows()).collect();
    if v.mode_sizes() != sizes {
        return Err(Error::ModeMismatch {
            expected: sizes,
            found: v.mode_sizes(),
        });
    }
    let mut acc: Option<TtVector> = None;
    for (chunk_terms, chunk_alphas) in terms.chunks(APPLY_CHUNK).zip(alphas.chunks(APPLY_CHUNK)) {
        let parts: Vec<TtVector> = chunk_terms
            .iter()
            .zip(chunk_alphas)
            .map(|(fs, &alpha)| TtMatrix::kron(alpha * scale, fs).and_then(|op| op.apply(v)))
            .collect::<Result<_>>()?;
        let chunk = TtVector::sum(&parts)?.round(policy);
        acc = Some(match acc {
            None => chunk,
            Some(a) => a.add(&chunk)?.round(policy),
        });
    }
    Ok(acc.expect("at least one term"))
}

fn assemble_terms(
    terms: &[Vec<DMatrix<f64>>],
    alphas: &[f64],
    scale: f64,
    policy: &RoundingPolicy,
) -> Result<TtMatrix> {
    let kron_terms: Vec<(f64, Vec<DMatrix<f64>>)> = terms
        .iter()
        .zip(alphas)
        .map(|(fs, &alpha)| (alpha * scale, fs.clone()))
        .collect();
    Ok(TtMatrix::from_kron_terms(&kron_terms)?.round(policy))
}

/// Approximate inverse of a Kronecker sum with positive spectrum, with the
/// scaling and the factor exponentials computed once.
#[derive(Clone, Debug)]
pub struct KronSumInverse {
    op: KronSumOperator,
    sum: ExponentialSum,
    scale: f64,
    interval: (f64, f64),
    terms: Vec<Vec<DMatrix<f64>>>,
}

impl KronSumInverse {
    /// Encloses the spectrum in `[a, b]`, maps `a` to [`SPECTRAL_MARGIN`] and
    /// builds a sum accurate to `eps` on the image of `[a/SPECTRAL_MARGIN, b]`.
    pub fn new(op: KronSumOperator, eps: f64) -> Result<Self> {
        let interval = spectrum_interval(&op)?;
        let scale = SPECTRAL_MARGIN / interval.0;
        let sum = exp_sum_coeffs(interval.1 * scale, eps)?;
        let terms = term_factors(&op, &sum, scale)?;
        Ok(Self {
            op,
            sum,
            scale,
            interval,
            terms,
        })
    }

    pub fn operator(&self) -> &KronSumOperator {
        &self.op
    }

    pub fn exp_sum(&self) -> &ExponentialSum {
        &self.sum
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn interval(&self) -> (f64, f64) {
        self.interval
    }

    pub fn apply(&self, v: &TtVector, policy: &RoundingPolicy) -> Result<TtVector> {
        apply_terms(&self.terms, &self.sum.alphas, self.scale, v, policy)
    }

    /// Inverse of the transposed operator applied to `v`.
    pub fn apply_transpose(&self, v: &TtVector, policy: &RoundingPolicy) -> Result<TtVector> {
        let transposed: Vec<Vec<DMatrix<f64>>> = self
            .terms
            .iter()
            .map(|fs| fs.iter().map(|f| f.transpose()).collect())
            .collect();
        apply_terms(&transposed, &self.sum.alphas, self.scale, v, policy)
    }

    pub fn to_ttm(&self, policy: &RoundingPolicy) -> Result<TtMatrix> {
        assemble_terms(&self.terms, &self.sum.alphas, self.scale, policy)
    }
}
