//! Dense reference computations by explicit enumeration of the product
//! state space. Independent of the train code paths; meant for small models.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::model::SanModel;
use crate::{Error, Result};

/// Default largest state space the oracle will enumerate.
pub const DEFAULT_ORACLE_CAP: usize = 6561;

#[derive(Clone, Debug)]
pub struct DenseChain {
    pub generator: DMatrix<f64>,
    /// Local transitions only, the Kronecker sum of the local matrices.
    pub local: DMatrix<f64>,
    pub pi0: DVector<f64>,
    pub absorbing_index: usize,
}

/// Mixed-radix index with the last automaton fastest.
fn linear_index(state: &[usize], sizes: &[usize]) -> usize {
    state.iter().zip(sizes).fold(0, |acc, (&s, &n)| acc * n + s)
}

fn states(sizes: &[usize]) -> impl Iterator<Item = Vec<usize>> + '_ {
    let total: usize = sizes.iter().product();
    (0..total).map(move |mut idx| {
        let mut s = vec![0; sizes.len()];
        for t in (0..sizes.len()).rev() {
            s[t] = idx % sizes[t];
            idx /= sizes[t];
        }
        s
    })
}

pub fn dense_generator(model: &SanModel) -> Result<DenseChain> {
    dense_generator_capped(model, DEFAULT_ORACLE_CAP)
}

pub fn dense_generator_capped(model: &SanModel, cap: usize) -> Result<DenseChain> {
    let sizes = model.state_counts();
    let n = model.state_space_size();
    if n > cap {
        return Err(Error::SizeCap { size: n, cap });
    }
    let mut q = DMatrix::zeros(n, n);
    let mut local = DMatrix::zeros(n, n);
    let mut pi0 = DVector::zeros(n);
    for s in states(&sizes) {
        let from = linear_index(&s, &sizes);
        pi0[from] = s
            .iter()
            .zip(model.pi0_factors())
            .map(|(&si, p)| p[si])
            .product();
        for (i, r) in model.local().iter().enumerate() {
            for target in 0..sizes[i] {
                let rate = r[(s[i], target)];
                if target != s[i] && rate != 0.0 {
                    let mut t = s.clone();
                    t[i] = target;
                    let to = linear_index(&t, &sizes);
                    q[(from, to)] += rate;
                    local[(from, to)] += rate;
                }
            }
        }
        for sync in model.syncs() {
            // every combination of enabled local moves
            let choices: Vec<Vec<usize>> = sync
                .factors
                .iter()
                .zip(&s)
                .map(|(f, &si)| (0..f.ncols()).filter(|&j| f[(si, j)] != 0.0).collect())
                .collect();
            if choices.iter().any(Vec::is_empty) {
                continue;
            }
            let mut pick = vec![0usize; choices.len()];
            'combos: loop {
                let t: Vec<usize> = pick.iter().zip(&choices).map(|(&p, c)| c[p]).collect();
                let weight: f64 = sync
                    .factors
                    .iter()
                    .zip(s.iter().zip(&t))
                    .map(|(f, (&a, &b))| f[(a, b)])
                    .product();
                if t != s {
                    q[(from, linear_index(&t, &sizes))] += sync.rate * weight;
                }
                let mut pos = choices.len();
                loop {
                    if pos == 0 {
                        break 'combos;
                    }
                    pos -= 1;
                    pick[pos] += 1;
                    if pick[pos] < choices[pos].len() {
                        break;
                    }
                    pick[pos] = 0;
                }
            }
        }
    }
    for i in 0..n {
        let out: f64 = (0..n).filter(|&j| j != i).map(|j| q[(i, j)]).sum();
        q[(i, i)] = -out;
    }
    Ok(DenseChain {
        generator: q,
        local,
        pi0,
        absorbing_index: linear_index(&model.absorbing_index(), &sizes),
    })
}

/// `-π̂_0^T Q̂^{-1} e` over the transient states.
pub fn dense_mtta(chain: &DenseChain) -> Result<f64> {
    let n = chain.generator.nrows();
    let keep: Vec<usize> = (0..n).filter(|&i| i != chain.absorbing_index).collect();
    let m = keep.len();
    if m == 0 {
        return Ok(0.0);
    }
    let qh = DMatrix::from_fn(m, m, |a, b| chain.generator[(keep[a], keep[b])]);
    let x = qh
        .lu()
        .solve(&DVector::from_element(m, 1.0))
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| {
            Error::Singular("transient block of the generator (absorption is not certain)".into())
        })?;
    Ok(-keep.iter().zip(x.iter()).map(|(&i, &xi)| chain.pi0[i] * xi).sum::<f64>())
}

/// Hypotheses of the contraction theorem for the splitting with shift `γ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Premises {
    pub d_nonpositive: bool,
    pub a1_nonnegative: bool,
    pub a2_nonnegative: bool,
    /// `e_N^T (D + A_1 + A_2) = 0`.
    pub last_row_zero: bool,
    pub a1_last_row_zero: bool,
    pub row_sums_zero: bool,
    /// `min_i A_{iN} > 0` for `A = A_1 + A_2` excluding `i = N`.
    pub min_a_in_positive: bool,
    /// The same condition on `A_2` alone.
    pub min_a2_in_positive: bool,
    /// `(D + A_1)^{-1} <= 0` entrywise.
    pub q1_inverse_nonpositive: bool,
}

impl Premises {
    /// All hypotheses of the theorem including `min_i A_{iN} > 0`.
    pub fn all(&self) -> bool {
        self.d_nonpositive
            && self.a1_nonnegative
            && self.a2_nonnegative
            && self.last_row_zero
            && self.a1_last_row_zero
            && self.row_sums_zero
            && self.min_a_in_positive
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContractionReport {
    pub gamma: f64,
    pub rho: f64,
    pub norm_inf: f64,
    pub premises: Premises,
}

/// Dense iteration matrix `M = -(D + A_1)^{-1}(A_2 - S)` with `S = (A_1 + A_2) e_N e_N^T`.
pub fn dense_iteration_matrix(chain: &DenseChain, gamma: f64) -> Result<DMatrix<f64>> {
    let (d, a1, a2) = dense_splitting(chain, gamma);
    let q1 = &d + &a1;
    let s = s_matrix(chain, &a1, &a2);
    let inv = q1
        .try_inverse()
        .ok_or_else(|| Error::Singular("D + A_1".into()))?;
    Ok(-(inv * (a2 - s)))
}

fn dense_splitting(chain: &DenseChain, gamma: f64) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n = chain.generator.nrows();
    let d = DMatrix::identity(n, n) * -gamma;
    let a1 = chain.local.clone();
    let a2 = &chain.generator - &d - &a1;
    (d, a1, a2)
}

fn s_matrix(chain: &DenseChain, a1: &DMatrix<f64>, a2: &DMatrix<f64>) -> DMatrix<f64> {
    let n = chain.generator.nrows();
    let nn = chain.absorbing_index;
    let mut s = DMatrix::zeros(n, n);
    for i in 0..n {
        s[(i, nn)] = a1[(i, nn)] + a2[(i, nn)];
    }
    s
}

pub fn dense_contraction_checks(model: &SanModel, gamma: f64) -> Result<ContractionReport> {
    let chain = dense_generator(model)?;
    let n = chain.generator.nrows();
    let nn = chain.absorbing_index;
    let (d, a1, a2) = dense_splitting(&chain, gamma);
    let tol = 1e-12 * gamma.max(1.0);
    let q1 = &d + &a1;
    let inv = q1
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("D + A_1".into()))?;
    let m = &inv * (&a2 - s_matrix(&chain, &a1, &a2));
    let norm_inf = (0..n).map(|i| m.row(i).iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
    let rho = m
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    let a = &a1 + &a2;
    let sum = &d + &a;
    let premises = Premises {
        d_nonpositive: (0..n).all(|i| d[(i, i)] <= 0.0),
        a1_nonnegative: a1.iter().all(|&x| x >= 0.0),
        a2_nonnegative: a2.iter().all(|&x| x >= -tol),
        last_row_zero: sum.row(nn).iter().all(|x| x.abs() <= tol),
        a1_last_row_zero: a1.row(nn).iter().all(|&x| x == 0.0),
        row_sums_zero: (0..n).all(|i| sum.row(i).sum().abs() <= tol * n as f64),
        min_a_in_positive: (0..n).filter(|&i| i != nn).all(|i| a[(i, nn)] > 0.0),
        min_a2_in_positive: (0..n).filter(|&i| i != nn).all(|i| a2[(i, nn)] > 0.0),
        q1_inverse_nonpositive: inv.iter().all(|&x| x <= tol),
    };
    Ok(ContractionReport {
        gamma,
        rho,
        norm_inf,
        premises,
    })
}

/// States reachable from the support of `π_0`.
pub fn reachable_states(chain: &DenseChain) -> Vec<bool> {
    let n = chain.generator.nrows();
    let mut seen: Vec<bool> = chain.pi0.iter().map(|&p| p > 0.0).collect();
    let mut stack: Vec<usize> = (0..n).filter(|&i| seen[i]).collect();
    while let Some(u) = stack.pop() {
        for v in 0..n {
            if v != u && chain.generator[(u, v)] > 0.0 && !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    seen
}

/// Default largest state space for [`acyclic_mtta`], one `f64` per state.
pub const DEFAULT_SWEEP_CAP: usize = 100_000_000;

/// Exact MTTA without forming the generator, for models whose local matrices
/// and synchronization factors are all upper triangular.
///
/// Every transition of such a model increases the mixed-radix state index,
/// so a single backward sweep solves `t(s) = (1 + Σ_{s'} q(s, s') t(s')) / q(s)`.
pub fn acyclic_mtta(model: &SanModel, cap: usize) -> Result<f64> {
    let sizes = model.state_counts();
    let k = sizes.len();
    let n = model.state_space_size();
    if n > cap {
        return Err(Error::SizeCap { size: n, cap });
    }
    let lower_free = |m: &DMatrix<f64>| (0..m.nrows()).all(|a| (0..a).all(|b| m[(a, b)] == 0.0));
    if !model.local().iter().all(lower_free)
        || !model.syncs().iter().all(|s| s.factors.iter().all(lower_free))
    {
        return Err(Error::InvalidInput(
            "the sweep oracle needs upper triangular local matrices and factors".into(),
        ));
    }
    let mut stride = vec![1usize; k];
    for i in (0..k.saturating_sub(1)).rev() {
        stride[i] = stride[i + 1] * sizes[i + 1];
    }
    // per sync: (automaton, row -> [(target, weight)]) for the non-identity factors
    type Rows = Vec<Vec<(usize, f64)>>;
    let syncs: Vec<(f64, Vec<(usize, Rows)>)> = model
        .syncs()
        .iter()
        .map(|sync| {
            let moving = sync
                .factors
                .iter()
                .enumerate()
                .filter(|(_, f)| **f != DMatrix::identity(f.nrows(), f.ncols()))
                .map(|(i, f)| {
                    let rows = (0..f.nrows())
                        .map(|a| (0..f.ncols()).filter(|&b| f[(a, b)] != 0.0).map(|b| (b, f[(a, b)])).collect())
                        .collect();
                    (i, rows)
                })
                .collect();
            (sync.rate, moving)
        })
        .collect();
    let absorbing = linear_index(&model.absorbing_index(), &sizes);
    let mut t = vec![0.0; n];
    let mut s = vec![0usize; k];
    let mut pick: Vec<usize> = Vec::new();
    let mut mtta = 0.0;
    for from in (0..n).rev() {
        let mut idx = from;
        for i in (0..k).rev() {
            s[i] = idx % sizes[i];
            idx /= sizes[i];
        }
        if from == absorbing {
            continue;
        }
        let mut out = 0.0;
        let mut acc = 0.0;
        for (i, r) in model.local().iter().enumerate() {
            for b in s[i] + 1..sizes[i] {
                let rate = r[(s[i], b)];
                if rate != 0.0 {
                    out += rate;
                    acc += rate * t[from + (b - s[i]) * stride[i]];
                }
            }
        }
        for (rate, moving) in &syncs {
            if moving.iter().any(|(i, rows)| rows[s[*i]].is_empty()) {
                continue;
            }
            pick.clear();
            pick.resize(moving.len(), 0);
            'combos: loop {
                let mut to = from;
                let mut w = *rate;
                for (&(i, ref rows), &p) in moving.iter().zip(&pick) {
                    let (b, wb) = rows[s[i]][p];
                    to = to + b * stride[i] - s[i] * stride[i];
                    w *= wb;
                }
                if to != from {
                    out += w;
                    acc += w * t[to];
                }
                let mut pos = moving.len();
                loop {
                    if pos == 0 {
                        break 'combos;
                    }
                    pos -= 1;
                    pick[pos] += 1;
                    if pick[pos] < moving[pos].1[s[moving[pos].0]].len() {
                        break;
                    }
                    pick[pos] = 0;
                }
            }
        }
        t[from] = if out > 0.0 { (1.0 + acc) / out } else { f64::INFINITY };
        let p: f64 = s.iter().zip(model.pi0_factors()).map(|(&si, f)| f[si]).product();
        if p != 0.0 {
            mtta += p * t[from];
        }
    }
    if !mtta.is_finite() {
        return Err(Error::Singular(
            "a transient state reachable from the initial distribution has no exit".into(),
        ));
    }
    Ok(mtta)
}
