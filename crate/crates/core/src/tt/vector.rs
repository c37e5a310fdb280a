use nalgebra::DMatrix;

use super::{check_dense_size, Carriage, RoundingPolicy, DEFAULT_DENSE_CAP};
use crate::{Error, Result};

/// A tensor in train format.
#[derive(Clone, Debug, PartialEq)]
pub struct TtVector {
    carriages: Vec<Carriage>,
}

/// Result of a truncation together with the relative Frobenius error it made.
#[derive(Clone, Debug)]
pub struct RoundingOutcome {
    pub vector: TtVector,
    pub rel_error: f64,
}

impl TtVector {
    pub fn new(carriages: Vec<Carriage>) -> Result<Self> {
        if carriages.is_empty() {
            return Err(Error::InvalidInput("a tensor train needs at least one carriage".into()));
        }
        if carriages[0].left() != 1 || carriages[carriages.len() - 1].right() != 1 {
            return Err(Error::InvalidInput("boundary ranks must be 1".into()));
        }
        for (t, pair) in carriages.windows(2).enumerate() {
            if pair[0].right() != pair[1].left() {
                return Err(Error::InvalidInput(format!(
                    "rank mismatch between carriages {} and {}: {} vs {}",
                    t,
                    t + 1,
                    pair[0].right(),
                    pair[1].left()
                )));
            }
        }
        if carriages.iter().any(|c| c.mode() == 0) {
            return Err(Error::InvalidInput("mode sizes must be positive".into()));
        }
        Ok(Self { carriages })
    }

    pub(crate) fn from_carriages_unchecked(carriages: Vec<Carriage>) -> Self {
        debug_assert!(Self::new(carriages.clone()).is_ok());
        Self { carriages }
    }

    /// `f_1 ⊗ f_2 ⊗ ... ⊗ f_k`.
    pub fn rank_one<V: AsRef<[f64]>>(factors: &[V]) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidInput("rank_one needs at least one factor".into()));
        }
        Self::new(
            factors
                .iter()
                .map(|f| Carriage::from_vector(f.as_ref()))
                .collect(),
        )
    }

    pub fn zeros(modes: &[usize]) -> Result<Self> {
        let factors: Vec<Vec<f64>> = modes.iter().map(|&n| vec![0.0; n]).collect();
        Self::rank_one(&factors)
    }

    pub fn ones(modes: &[usize]) -> Result<Self> {
        let factors: Vec<Vec<f64>> = modes.iter().map(|&n| vec![1.0; n]).collect();
        Self::rank_one(&factors)
    }

    /// Kronecker basis vector with a single 1 at `index`.
    pub fn basis(modes: &[usize], index: &[usize]) -> Result<Self> {
        if modes.len() != index.len() || index.iter().zip(modes).any(|(&i, &n)| i >= n) {
            return Err(Error::InvalidInput(format!(
                "index {index:?} out of range for modes {modes:?}"
            )));
        }
        let factors: Vec<Vec<f64>> = modes
            .iter()
            .zip(index)
            .map(|(&n, &i)| {
                let mut f = vec![0.0; n];
                f[i] = 1.0;
                f
            })
            .collect();
        Self::rank_one(&factors)
    }

    pub fn carriages(&self) -> &[Carriage] {
        &self.carriages
    }

    pub fn into_carriages(self) -> Vec<Carriage> {
        self.carriages
    }

    pub fn order(&self) -> usize {
        self.carriages.len()
    }

    pub fn mode_sizes(&self) -> Vec<usize> {
        self.carriages.iter().map(Carriage::mode).collect()
    }

    /// Bond ranks `r_1, ..., r_{k+1}` including the unit boundary ranks.
    pub fn ranks(&self) -> Vec<usize> {
        std::iter::once(1)
            .chain(self.carriages.iter().map(Carriage::right))
            .collect()
    }

    pub fn max_rank(&self) -> usize {
        self.carriages.iter().map(Carriage::right).max().unwrap_or(1).max(1)
    }

    /// Number of stored reals.
    pub fn storage(&self) -> usize {
        self.carriages.iter().map(Carriage::len).sum()
    }

    fn check_same_modes(&self, other: &Self) -> Result<()> {
        let (a, b) = (self.mode_sizes(), other.mode_sizes());
        if a != b {
            return Err(Error::ModeMismatch {
                expected: a,
                found: b,
            });
        }
        Ok(())
    }

    /// Single entry of the represented tensor.
    pub fn entry(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.order());
        let mut row = vec![1.0];
        for (c, &i) in self.carriages.iter().zip(index) {
            let mut next = vec![0.0; c.right()];
            for (b, slot) in next.iter_mut().enumerate() {
                *slot = (0..c.left()).map(|a| row[a] * c.get(a, i, b)).sum();
            }
            row = next;
        }
        row[0]
    }

    pub fn to_dense(&self) -> Result<Vec<f64>> {
        self.to_dense_capped(DEFAULT_DENSE_CAP)
    }

    /// Dense expansion, last mode fastest.
    pub fn to_dense_capped(&self, cap: usize) -> Result<Vec<f64>> {
        check_dense_size(&self.mode_sizes(), cap)?;
        // acc holds rows (multi-index prefix) x current right rank, row-major
        let mut acc = vec![1.0];
        let mut rows = 1usize;
        for c in &self.carriages {
            let (l, n, r) = (c.left(), c.mode(), c.right());
            let mut next = vec![0.0; rows * n * r];
            for p in 0..rows {
                let src = &acc[p * l..(p + 1) * l];
                for i in 0..n {
                    let dst = &mut next[(p * n + i) * r..(p * n + i + 1) * r];
                    for (b, d) in dst.iter_mut().enumerate() {
                        let mut s = 0.0;
                        for (a, &x) in src.iter().enumerate() {
                            s += x * c.get(a, i, b);
                        }
                        *d = s;
                    }
                }
            }
            acc = next;
            rows *= n;
        }
        Ok(acc)
    }

    pub fn from_dense(data: &[f64], modes: &[usize], policy: &RoundingPolicy) -> Result<Self> {
        Self::from_dense_capped(data, modes, policy, DEFAULT_DENSE_CAP)
    }

    /// TT-SVD of a dense tensor stored with the last mode fastest.
    pub fn from_dense_capped(
        data: &[f64],
        modes: &[usize],
        policy: &RoundingPolicy,
        cap: usize,
    ) -> Result<Self> {
        if modes.is_empty() || modes.contains(&0) {
            return Err(Error::InvalidInput(format!("invalid mode sizes {modes:?}")));
        }
        let total = check_dense_size(modes, cap)?;
        if data.len() != total {
            return Err(Error::InvalidInput(format!(
                "dense data has {} entries, modes {:?} need {}",
                data.len(),
                modes,
                total
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("dense tensor"));
        }
        let k = modes.len();
        let norm = data.iter().map(|x| x * x).sum::<f64>().sqrt();
        let delta = bond_threshold(policy.rel_tolerance, norm, k);

        let mut carriages = Vec::with_capacity(k);
        // current: (rank * n_t) x rest, rows ordered rank-fastest
        let mut rest = total;
        let mut current = DMatrix::from_fn(modes[0], total / modes[0], |i, j| {
            data[i * (total / modes[0]) + j]
        });
        for t in 0..k - 1 {
            let n = modes[t];
            rest /= n;
            let (u, sigma, v_t) = thin_svd(&current);
            let keep = truncation_rank(&sigma, delta, policy.max_rank).0;
            let u = u.columns(0, keep).into_owned();
            let sv = DMatrix::from_fn(keep, v_t.ncols(), |i, j| sigma[i] * v_t[(i, j)]);
            carriages.push(Carriage::from_left_unfolding(n, u));
            let rank = keep;
            let n_next = modes[t + 1];
            let rest_next = rest / n_next;
            // row b + rank*i, column j of the remaining multi-index
            current = DMatrix::from_fn(rank * n_next, rest_next, |row, col| {
                let (b, i) = (row % rank, row / rank);
                sv[(b, i * rest_next + col)]
            });
        }
        carriages.push(Carriage::from_left_unfolding(modes[k - 1], current));
        Self::new(carriages)
    }

    /// Elementwise sum; ranks add.
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_modes(other)?;
        Ok(Self::from_carriages_unchecked(block_sum(&[
            &self.carriages,
            &other.carriages,
        ])))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(-1.0))
    }

    /// Sum of many trains in one block construction.
    pub fn sum(terms: &[TtVector]) -> Result<Self> {
        let first = terms
            .first()
            .ok_or_else(|| Error::InvalidInput("empty sum".into()))?;
        for t in &terms[1..] {
            first.check_same_modes(t)?;
        }
        let parts: Vec<&[Carriage]> = terms.iter().map(|t| t.carriages.as_slice()).collect();
        Ok(Self::from_carriages_unchecked(block_sum(&parts)))
    }

    pub fn scale(&self, c: f64) -> Self {
        let mut carriages = self.carriages.clone();
        carriages[0] = carriages[0].scaled(c);
        Self { carriages }
    }

    /// `sum_i u_i v_i` over all multi-indices.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.check_same_modes(other)?;
        let mut g = DMatrix::from_element(1, 1, 1.0);
        for (u, v) in self.carriages.iter().zip(&other.carriages) {
            // w(a, i, b') = sum_a' g(a, a') v(a', i, b')
            let w = &g * v.right_unfolding();
            let w = DMatrix::from_column_slice(u.left() * u.mode(), v.right(), w.as_slice());
            g = u.left_unfolding().transpose() * w;
        }
        Ok(g[(0, 0)])
    }

    /// Frobenius norm from a left-to-right QR sweep, which avoids the
    /// cancellation of `sqrt(v·v)` when `v` is a difference of close trains.
    pub fn norm(&self) -> f64 {
        let mut r = DMatrix::from_element(1, 1, 1.0);
        for c in &self.carriages {
            let w = &r * c.right_unfolding();
            let w = DMatrix::from_column_slice(r.nrows() * c.mode(), c.right(), w.as_slice());
            r = if w.nrows() >= w.ncols() { w.qr().r() } else { w };
        }
        r.norm()
    }

    pub fn is_finite(&self) -> bool {
        self.carriages.iter().all(Carriage::is_finite)
    }

    pub fn round(&self, policy: &RoundingPolicy) -> Self {
        self.round_with_outcome(policy).vector
    }

    /// Right-to-left orthogonalization, then left-to-right SVD truncation with
    /// the tolerance split evenly over the `k-1` bonds.
    pub fn round_with_outcome(&self, policy: &RoundingPolicy) -> RoundingOutcome {
        let k = self.order();
        if k == 1 {
            return RoundingOutcome {
                vector: self.clone(),
                rel_error: 0.0,
            };
        }
        let mut cs = self.carriages.clone();
        for t in (1..k).rev() {
            let c = &cs[t];
            let n = c.mode();
            let qr = c.right_unfolding().transpose().qr();
            let (q, r) = (qr.q(), qr.r());
            cs[t] = Carriage::from_right_unfolding(n, q.transpose());
            let prev = &cs[t - 1];
            let merged = prev.left_unfolding() * r.transpose();
            cs[t - 1] = Carriage::from_left_unfolding(prev.mode(), merged);
        }
        let norm = cs[0].data().iter().map(|x| x * x).sum::<f64>().sqrt();
        let delta = bond_threshold(policy.rel_tolerance, norm, k);
        let mut discarded = 0.0;
        for t in 0..k - 1 {
            let n = cs[t].mode();
            let (u, sigma, v_t) = thin_svd(&cs[t].left_unfolding());
            let (keep, tail) = truncation_rank(&sigma, delta, policy.max_rank);
            discarded += tail;
            let u = u.columns(0, keep).into_owned();
            let sv = DMatrix::from_fn(keep, v_t.ncols(), |i, j| sigma[i] * v_t[(i, j)]);
            cs[t] = Carriage::from_left_unfolding(n, u);
            let next = &cs[t + 1];
            let merged = sv * next.right_unfolding();
            cs[t + 1] = Carriage::from_right_unfolding(next.mode(), merged);
        }
        let rel_error = if norm > 0.0 {
            discarded.sqrt() / norm
        } else {
            0.0
        };
        RoundingOutcome {
            vector: Self::from_carriages_unchecked(cs),
            rel_error,
        }
    }
}

/// Thin SVD `a = u diag(sigma) v_t`, singular values descending.
///
/// Backed by faer; nalgebra's own SVD loses accuracy on some rank-deficient
/// unfoldings.
pub(crate) fn thin_svd(a: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let (m, n) = a.shape();
    let k = m.min(n);
    if k == 0 {
        return (DMatrix::zeros(m, 0), Vec::new(), DMatrix::zeros(0, n));
    }
    let fa = faer::MatRef::from_column_major_slice(a.as_slice(), m, n);
    let svd = fa.thin_svd().expect("svd did not converge");
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    (
        DMatrix::from_fn(m, k, |i, j| u[(i, j)]),
        (0..k).map(|i| s[i]).collect(),
        DMatrix::from_fn(k, n, |i, j| v[(j, i)]),
    )
}

/// Per-bond absolute threshold for a global relative tolerance.
fn bond_threshold(rel_tolerance: f64, norm: f64, k: usize) -> f64 {
    if k <= 1 {
        return 0.0;
    }
    rel_tolerance * norm / ((k - 1) as f64).sqrt()
}

/// Smallest rank whose discarded tail is at most `delta` in 2-norm, capped.
/// Returns the rank and the squared discarded mass.
fn truncation_rank(sigma: &[f64], delta: f64, max_rank: Option<usize>) -> (usize, f64) {
    let n = sigma.len();
    let delta2 = delta * delta;
    let mut tail = 0.0;
    let mut keep = n;
    while keep > 1 {
        let s = sigma[keep - 1];
        if tail + s * s > delta2 {
            break;
        }
        tail += s * s;
        keep -= 1;
    }
    // numerically zero directions go even at zero tolerance
    let floor = sigma.first().copied().unwrap_or(0.0) * n as f64 * f64::EPSILON;
    while keep > 1 && sigma[keep - 1] <= floor {
        tail += sigma[keep - 1] * sigma[keep - 1];
        keep -= 1;
    }
    if let Some(cap) = max_rank {
        while keep > cap {
            tail += sigma[keep - 1] * sigma[keep - 1];
            keep -= 1;
        }
    }
    (keep.max(1), tail)
}

/// Block construction of a sum of trains with equal modes.
pub(crate) fn block_sum(parts: &[&[Carriage]]) -> Vec<Carriage> {
    let k = parts[0].len();
    if parts.len() == 1 {
        return parts[0].to_vec();
    }
    let mut out = Vec::with_capacity(k);
    for t in 0..k {
        let n = parts[0][t].mode();
        let lefts: Vec<usize> = parts.iter().map(|p| if t == 0 { 1 } else { p[t].left() }).collect();
        let rights: Vec<usize> = parts
            .iter()
            .map(|p| if t == k - 1 { 1 } else { p[t].right() })
            .collect();
        let (l, r) = (lefts.iter().sum::<usize>(), rights.iter().sum::<usize>());
        let l = if t == 0 { 1 } else { l };
        let r = if t == k - 1 { 1 } else { r };
        let mut c = Carriage::zeros(l, n, r);
        let (mut lo, mut ro) = (0usize, 0usize);
        for p in parts {
            let src = &p[t];
            for b in 0..src.right() {
                for i in 0..n {
                    for a in 0..src.left() {
                        let (aa, bb) = (if t == 0 { a } else { lo + a }, if t == k - 1 { b } else { ro + b });
                        let v = c.get(aa, i, bb) + src.get(a, i, b);
                        c.set(aa, i, bb, v);
                    }
                }
            }
            if t != 0 {
                lo += src.left();
            }
            if t != k - 1 {
                ro += src.right();
            }
        }
        out.push(c);
    }
    out
}
