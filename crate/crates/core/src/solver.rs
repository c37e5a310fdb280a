//! Neumann-series solvers for the mean time to absorption.
//!
//! With `Q_1 = D + A_1`, `Q_2 = A_2` and `M = -Q_1^{-1}(Q_2 - S)`,
//! `(Q - S)^{-1} = Σ_j M^j Q_1^{-1}` and `MTTA = -π_0^T (Q - S)^{-1} b`
//! for `b = e + γ_v e_N`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::kron::KronSumInverse;
use crate::model::{
    build_descriptor, build_splitting, default_gamma, rcm_order, GammaMode, SanModel, Splitting,
};
use crate::tt::{RoundingPolicy, TtMatrix, TtVector};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Linear,
    Squared,
    Transpose,
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "squared" => Ok(Self::Squared),
            "transpose" => Ok(Self::Transpose),
            _ => Err(Error::InvalidInput(format!(
                "unknown algorithm {s:?} (expected linear, squared or transpose)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    pub gamma_mode: GammaMode,
    pub exp_sum_eps: f64,
    pub rounding: RoundingPolicy,
    pub max_iter: usize,
    pub stop_tol: f64,
    /// `γ_v` in `b = e + γ_v e_N`.
    pub reward_shift: f64,
    pub use_rcm: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Squared,
            gamma_mode: GammaMode::Minimal,
            exp_sum_eps: 1e-10,
            rounding: RoundingPolicy::default(),
            max_iter: 10_000,
            stop_tol: 1e-8,
            reward_shift: -1.0,
            use_rcm: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.stop_tol > 0.0) || !self.stop_tol.is_finite() {
            return Err(Error::InvalidInput("stop_tol must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidInput("max_iter must be at least 1".into()));
        }
        if !self.reward_shift.is_finite() {
            return Err(Error::InvalidInput("reward_shift must be finite".into()));
        }
        RoundingPolicy::new(self.rounding.rel_tolerance, self.rounding.max_rank)?;
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub mtta: f64,
    pub iterations: usize,
    /// Lower-bound estimate of the measure after every iteration.
    pub measure_history: Vec<f64>,
    /// Largest bond rank of the iterated object (vector, or `M` when squaring).
    pub max_rank_history: Vec<usize>,
    pub residual_estimate: f64,
    pub wall_time: f64,
    pub gamma: f64,
    pub exp_sum_terms: usize,
    /// Largest number of reals held in trains at once.
    pub peak_storage: usize,
    /// Automaton order used, `permutation[p]` is the original index at position `p`.
    pub permutation: Vec<usize>,
}

impl SolveReport {
    pub fn peak_memory_bytes(&self) -> usize {
        self.peak_storage * std::mem::size_of::<f64>()
    }
}

/// Relative slack on the a priori iterate bounds, absorbs rounding noise.
const BOUND_SLACK: f64 = 1e-3;

/// Truncation tolerance for the model operators. They have small exact ranks,
/// and truncating them relative to their Frobenius norm over the whole
/// product space leaves errors in single rows that grow with the state count.
pub const OPERATOR_TOLERANCE: f64 = 1e-13;

/// Policy used to assemble operators: at most [`OPERATOR_TOLERANCE`], no rank cap.
pub fn operator_policy(policy: &RoundingPolicy) -> RoundingPolicy {
    RoundingPolicy::with_tolerance(policy.rel_tolerance.min(OPERATOR_TOLERANCE))
}

/// Splitting together with train operators for `-Q_1^{-1}` and `Q_2 - S`.
#[derive(Clone, Debug)]
pub struct NeumannSystem {
    pub splitting: Splitting,
    pub inverse: KronSumInverse,
    /// `-Q_1^{-1}`, entrywise nonnegative.
    pub neg_q1_inv: TtMatrix,
    /// `A_2 - q e_N^T`.
    pub q2: TtMatrix,
    neg_q1_inv_t: TtMatrix,
    q2_t: TtMatrix,
    pub policy: RoundingPolicy,
}

impl NeumannSystem {
    pub fn new(splitting: Splitting, exp_sum_eps: f64, policy: RoundingPolicy) -> Result<Self> {
        let inverse = KronSumInverse::new(splitting.neg_q1(), exp_sum_eps)?;
        let exact = operator_policy(&policy);
        let neg_q1_inv = inverse.to_ttm(&exact)?;
        let q2 = splitting.q2(&exact)?;
        Ok(Self {
            neg_q1_inv_t: neg_q1_inv.transpose(),
            q2_t: q2.transpose(),
            splitting,
            inverse,
            neg_q1_inv,
            q2,
            policy,
        })
    }

    /// `Q_1^{-1} v`.
    pub fn q1_solve(&self, v: &TtVector) -> Result<TtVector> {
        Ok(self.neg_q1_inv.apply_rounded(v, &self.policy)?.scale(-1.0))
    }

    /// `Q_1^{-T} v`.
    pub fn q1_solve_transpose(&self, v: &TtVector) -> Result<TtVector> {
        Ok(self.neg_q1_inv_t.apply_rounded(v, &self.policy)?.scale(-1.0))
    }

    /// `M v = -Q_1^{-1}(A_2 v - q (e_N^T v))`.
    pub fn apply_m(&self, v: &TtVector) -> Result<TtVector> {
        let w = self.q2.apply_rounded(v, &self.policy)?;
        self.neg_q1_inv.apply_rounded(&w, &self.policy)
    }

    /// `M^T w`.
    pub fn apply_m_left(&self, w: &TtVector) -> Result<TtVector> {
        let z = self.neg_q1_inv_t.apply_rounded(w, &self.policy)?;
        self.q2_t.apply_rounded(&z, &self.policy)
    }

    /// `M` as a rounded train operator.
    pub fn iteration_matrix(&self) -> Result<TtMatrix> {
        Ok(self.neg_q1_inv.multiply_rounded(&self.q2, &self.policy)?.0)
    }
}

/// A rank-capped product that still lost more than `tol` is a rank explosion.
fn check_cap(m: &TtMatrix, err: f64, policy: &RoundingPolicy, tol: Option<f64>) -> Result<()> {
    match policy.max_rank {
        Some(cap) if m.max_rank() >= cap && !(err <= tol.unwrap_or(0.0)) => {
            Err(Error::RankExplosion { max_rank: cap, error: err })
        }
        _ => Ok(()),
    }
}

fn add_round(x: &TtVector, y: &TtVector, policy: &RoundingPolicy) -> Result<TtVector> {
    Ok(x.add(y)?.round(policy))
}

struct Tracker {
    report: SolveReport,
}

impl Tracker {
    fn new() -> Self {
        Self {
            report: SolveReport::default(),
        }
    }

    fn record(&mut self, measure: f64, rank: usize, storage: usize) {
        self.report.measure_history.push(measure);
        self.report.max_rank_history.push(rank);
        self.report.peak_storage = self.report.peak_storage.max(storage);
    }

    /// A nonnegative splitting with `‖M‖_∞ <= 1` keeps the iterates below
    /// `bound`; exceeding it means the splitting is not contractive.
    fn check_bound(&self, value: f64, bound: f64, step: usize) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::NonFinite("iterate"));
        }
        if value > bound * (1.0 + BOUND_SLACK) {
            return Err(Error::Divergence(step));
        }
        Ok(())
    }
}

/// Stopping rule of the vector iterations: `None` runs exactly `max_iter` steps.
fn stop(tol: Option<f64>, y_norm: f64, x_norm: f64) -> bool {
    match tol {
        Some(t) => x_norm == 0.0 || y_norm <= t * x_norm,
        None => false,
    }
}

fn linear_impl(
    sys: &NeumannSystem,
    b: &TtVector,
    pi0: &TtVector,
    max_iter: usize,
    stop_tol: Option<f64>,
) -> Result<(TtVector, SolveReport)> {
    let mut tr = Tracker::new();
    let mut y = sys.q1_solve(b)?;
    let mut x = y.clone();
    let mut measure = -pi0.dot(&x)?;
    tr.record(measure, x.max_rank(), x.storage());
    // ‖y_j‖_F <= √N ‖y_j‖_∞ <= √N ‖y_0‖_∞
    let size: f64 = b.mode_sizes().iter().map(|&n| n as f64).product();
    let bound = size.sqrt() * y.norm();
    let mut residual = 1.0;
    for it in 1..=max_iter {
        y = sys.apply_m(&y)?;
        x = add_round(&x, &y, &sys.policy)?;
        measure -= pi0.dot(&y)?;
        let (yn, xn) = (y.norm(), x.norm());
        tr.check_bound(yn, bound, it)?;
        residual = if xn > 0.0 { yn / xn } else { 0.0 };
        tr.report.iterations = it;
        tr.record(measure, x.max_rank().max(y.max_rank()), x.storage() + y.storage());
        if stop(stop_tol, yn, xn) {
            break;
        }
    }
    tr.report.residual_estimate = residual;
    tr.report.mtta = *tr.report.measure_history.last().unwrap();
    Ok((x, tr.report))
}

/// Neumann series applied term by term until `‖y‖/‖x‖ < stop_tol`.
pub fn neumann_linear(
    sys: &NeumannSystem,
    b: &TtVector,
    pi0: &TtVector,
    cfg: &SolverConfig,
) -> Result<(TtVector, SolveReport)> {
    linear_impl(sys, b, pi0, cfg.max_iter, Some(cfg.stop_tol))
}

/// Exactly `iterations` applications of `M`, i.e. the partial sum `x_iterations`.
pub fn neumann_linear_fixed(
    sys: &NeumannSystem,
    b: &TtVector,
    pi0: &TtVector,
    iterations: usize,
) -> Result<(TtVector, SolveReport)> {
    linear_impl(sys, b, pi0, iterations, None)
}

fn squared_impl(
    sys: &NeumannSystem,
    b: &TtVector,
    pi0: &TtVector,
    max_steps: usize,
    stop_tol: Option<f64>,
) -> Result<(TtVector, SolveReport)> {
    let mut tr = Tracker::new();
    let (mut m, err) = sys.neg_q1_inv.multiply_rounded(&sys.q2, &sys.policy)?;
    check_cap(&m, err, &sys.policy, stop_tol)?;
    let y = sys.q1_solve(b)?;
    let my = m.apply_rounded(&y, &sys.policy)?;
    let mut x = add_round(&y, &my, &sys.policy)?;
    // x_j holds j + 1 terms, each at most √N ‖y_0‖ in norm
    let size: f64 = b.mode_sizes().iter().map(|&n| n as f64).product();
    let term_bound = size.sqrt() * y.norm();
    tr.check_bound(x.norm(), 2.0 * term_bound, 0)?;
    let mut measure = -pi0.dot(&y)? - pi0.dot(&my)?;
    tr.record(measure, m.max_rank(), m.storage() + x.storage() + my.storage());
    let mut increment = f64::INFINITY;
    for step in 1..=max_steps {
        if let Some(t) = stop_tol {
            if increment.abs() <= t * measure.abs() {
                break;
            }
        }
        let (squared, err) = m.multiply_rounded(&m, &sys.policy)?;
        check_cap(&squared, err, &sys.policy, stop_tol)?;
        let peak = m.storage() + squared.storage() + x.storage();
        m = squared;
        let mx = m.apply_rounded(&x, &sys.policy)?;
        x = add_round(&x, &mx, &sys.policy)?;
        tr.check_bound(x.norm(), 2f64.powi(step as i32 + 1) * term_bound, step)?;
        increment = -pi0.dot(&mx)?;
        if !increment.is_finite() {
            return Err(Error::NonFinite("iterate"));
        }
        measure += increment;
        tr.report.iterations = step;
        tr.record(measure, m.max_rank(), peak.max(m.storage() + x.storage() + mx.storage()));
    }
    tr.report.residual_estimate = if measure != 0.0 {
        (increment / measure).abs()
    } else {
        0.0
    };
    if !tr.report.residual_estimate.is_finite() {
        tr.report.residual_estimate = 1.0;
    }
    tr.report.mtta = measure;
    Ok((x, tr.report))
}

/// `(I + M)(I + M^2)(I + M^4)...` applied to `Q_1^{-1} b`; after `ℓ` squarings
/// the iterate equals `x_{2^{ℓ+1}-1}` of the linear series.
pub fn neumann_squared(
    sys: &NeumannSystem,
    b: &TtVector,
    pi0: &TtVector,
    cfg: &SolverConfig,
) -> Result<(TtVector, SolveReport)> {
    squared_impl(sys, b, pi0, cfg.max_iter, Some(cfg.stop_tol))
}

/// Exactly `squarings` squaring steps.
pub fn neumann_squared_fixed(
    sys: &NeumannSystem,
    b: &TtVector,
    pi0: &TtVector,
    squarings: usize,
) -> Result<(TtVector, SolveReport)> {
    squared_impl(sys, b, pi0, squarings, None)
}

/// Row-vector series `π_0^T Σ_j M^j`, followed by one solve with `Q_1^T`.
/// Returns `x^T ≈ π_0^T (Q - S)^{-1}`.
pub fn neumann_transpose(
    sys: &NeumannSystem,
    b: &TtVector,
    pi0: &TtVector,
    cfg: &SolverConfig,
) -> Result<(TtVector, SolveReport)> {
    let mut tr = Tracker::new();
    // partial measures: y_j^T (-Q_1^{-1} b)
    let w = sys.neg_q1_inv.apply_rounded(b, &sys.policy)?;
    let ones = TtVector::ones(&pi0.mode_sizes())?;
    let mut y = pi0.clone();
    let mut x = y.clone();
    let mut measure = y.dot(&w)?;
    let mass = y.dot(&ones)?;
    tr.record(measure, x.max_rank(), x.storage() + w.storage());
    let mut residual = 1.0;
    for it in 1..=cfg.max_iter {
        y = sys.apply_m_left(&y)?;
        x = add_round(&x, &y, &sys.policy)?;
        measure += y.dot(&w)?;
        let (yn, xn) = (y.norm(), x.norm());
        // y >= 0 and Me <= e make y·e nonincreasing
        tr.check_bound(y.dot(&ones)?.abs(), mass, it)?;
        residual = if xn > 0.0 { yn / xn } else { 0.0 };
        tr.report.iterations = it;
        tr.record(
            measure,
            x.max_rank().max(y.max_rank()),
            x.storage() + y.storage() + w.storage(),
        );
        if stop(Some(cfg.stop_tol), yn, xn) {
            break;
        }
    }
    let xt = sys.q1_solve_transpose(&x)?;
    tr.report.residual_estimate = residual;
    tr.report.mtta = -xt.dot(b)?;
    Ok((xt, tr.report))
}

/// `e + γ_v e_N`.
pub fn reward_vector(modes: &[usize], absorbing: &[usize], shift: f64) -> Result<TtVector> {
    let e = TtVector::ones(modes)?;
    if shift == 0.0 {
        return Ok(e);
    }
    Ok(e.add(&TtVector::basis(modes, absorbing)?.scale(shift))?
        .round(&RoundingPolicy::exact()))
}

/// Reorders the model, assembles the splitting and runs the configured algorithm.
pub fn compute_mtta(model: &SanModel, cfg: &SolverConfig) -> Result<SolveReport> {
    let start = Instant::now();
    cfg.validate()?;
    let permutation = if cfg.use_rcm {
        rcm_order(model.topology())
    } else {
        (0..model.k()).collect()
    };
    let model = model.permuted(&permutation)?;
    let exact = operator_policy(&cfg.rounding);
    let desc = build_descriptor(&model, &exact).map_err(|e| e.at("descriptor"))?;
    let gamma = default_gamma(&desc, cfg.gamma_mode).map_err(|e| e.at("gamma"))?;
    let split =
        build_splitting(&model, &desc, gamma, &exact).map_err(|e| e.at("splitting"))?;
    let sys = NeumannSystem::new(split, cfg.exp_sum_eps, cfg.rounding)
        .map_err(|e| e.at("exponential sum"))?;
    let modes = model.state_counts();
    let b = reward_vector(&modes, &desc.absorbing, cfg.reward_shift)?;
    let pi0 = TtVector::rank_one(model.pi0_factors())?;
    let (_, mut report) = match cfg.algorithm {
        Algorithm::Linear => neumann_linear(&sys, &b, &pi0, cfg),
        Algorithm::Squared => neumann_squared(&sys, &b, &pi0, cfg),
        Algorithm::Transpose => neumann_transpose(&sys, &b, &pi0, cfg),
    }
    .map_err(|e| e.at("iteration"))?;
    report.gamma = gamma;
    report.exp_sum_terms = sys.inverse.exp_sum().len();
    report.permutation = permutation;
    report.wall_time = start.elapsed().as_secs_f64();
    Ok(report)
}
