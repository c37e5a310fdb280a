use nalgebra::DMatrix;

use super::vector::block_sum;
use super::{check_dense_size, Carriage, RoundingOutcome, RoundingPolicy, TtVector, DEFAULT_DENSE_CAP};
use crate::{Error, Result};

/// Linear operator in train format. Carriage `t` has shape
/// `r_t x (m_t * n_t) x r_{t+1}` with fused index `row + m_t * col`.
#[derive(Clone, Debug, PartialEq)]
pub struct TtMatrix {
    cores: TtVector,
    rows: Vec<usize>,
    cols: Vec<usize>,
}

impl TtMatrix {
    pub fn from_cores(cores: TtVector, rows: Vec<usize>, cols: Vec<usize>) -> Result<Self> {
        if rows.len() != cores.order() || cols.len() != cores.order() {
            return Err(Error::InvalidInput("row/col size lists must match the order".into()));
        }
        for (t, c) in cores.carriages().iter().enumerate() {
            if c.mode() != rows[t] * cols[t] {
                return Err(Error::InvalidInput(format!(
                    "carriage {t} has fused mode {} but {}x{} was requested",
                    c.mode(),
                    rows[t],
                    cols[t]
                )));
            }
        }
        Ok(Self { cores, rows, cols })
    }

    fn with_carriages(carriages: Vec<Carriage>, rows: Vec<usize>, cols: Vec<usize>) -> Self {
        Self {
            cores: TtVector::from_carriages_unchecked(carriages),
            rows,
            cols,
        }
    }

    pub fn identity(modes: &[usize]) -> Result<Self> {
        let mats: Vec<DMatrix<f64>> = modes.iter().map(|&n| DMatrix::identity(n, n)).collect();
        Self::kron(1.0, &mats)
    }

    /// `c * (F_1 ⊗ ... ⊗ F_k)`.
    pub fn kron(coefficient: f64, factors: &[DMatrix<f64>]) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidInput("Kronecker product of zero factors".into()));
        }
        let mut carriages: Vec<Carriage> = factors
            .iter()
            .map(|f| Carriage::from_data(1, f.nrows() * f.ncols(), 1, f.as_slice().to_vec()))
            .collect();
        carriages[0] = carriages[0].scaled(coefficient);
        Ok(Self::with_carriages(
            carriages,
            factors.iter().map(|f| f.nrows()).collect(),
            factors.iter().map(|f| f.ncols()).collect(),
        ))
    }

    /// `sum_t c_t (F_t1 ⊗ ... ⊗ F_tk)`; bond ranks are at most the number of terms.
    pub fn from_kron_terms(terms: &[(f64, Vec<DMatrix<f64>>)]) -> Result<Self> {
        let parts = terms
            .iter()
            .map(|(c, fs)| Self::kron(*c, fs))
            .collect::<Result<Vec<_>>>()?;
        Self::sum(&parts)
    }

    /// `A_1 ⊕ ... ⊕ A_k` with bond ranks 2.
    pub fn kron_sum(factors: &[DMatrix<f64>]) -> Result<Self> {
        let k = factors.len();
        if k == 0 {
            return Err(Error::InvalidInput("Kronecker sum of zero factors".into()));
        }
        if factors.iter().any(|f| !f.is_square()) {
            return Err(Error::InvalidInput("Kronecker sum factors must be square".into()));
        }
        if k == 1 {
            return Self::kron(1.0, factors);
        }
        let mut carriages = Vec::with_capacity(k);
        for (t, f) in factors.iter().enumerate() {
            let n = f.nrows();
            let eye = DMatrix::<f64>::identity(n, n);
            let (l, r) = (if t == 0 { 1 } else { 2 }, if t == k - 1 { 1 } else { 2 });
            let mut c = Carriage::zeros(l, n * n, r);
            // bond state 0: no factor placed yet, 1: factor placed
            let mut put = |a: usize, b: usize, m: &DMatrix<f64>| {
                for j in 0..n {
                    for i in 0..n {
                        c.set(a, i + n * j, b, m[(i, j)]);
                    }
                }
            };
            if t == 0 {
                put(0, 0, &eye);
                put(0, 1, f);
            } else if t == k - 1 {
                put(0, 0, f);
                put(1, 0, &eye);
            } else {
                put(0, 0, &eye);
                put(0, 1, f);
                put(1, 1, &eye);
            }
            carriages.push(c);
        }
        let sizes: Vec<usize> = factors.iter().map(|f| f.nrows()).collect();
        Ok(Self::with_carriages(carriages, sizes.clone(), sizes))
    }

    /// Diagonal matrix with the entries of `v`; ranks equal those of `v`.
    pub fn diag(v: &TtVector) -> Self {
        let carriages = v
            .carriages()
            .iter()
            .map(|c| {
                let n = c.mode();
                let mut d = Carriage::zeros(c.left(), n * n, c.right());
                for b in 0..c.right() {
                    for i in 0..n {
                        for a in 0..c.left() {
                            d.set(a, i + n * i, b, c.get(a, i, b));
                        }
                    }
                }
                d
            })
            .collect();
        let modes = v.mode_sizes();
        Self::with_carriages(carriages, modes.clone(), modes)
    }

    /// Outer product `u w^T`.
    pub fn outer(u: &TtVector, w: &TtVector) -> Result<Self> {
        if u.order() != w.order() {
            return Err(Error::ModeMismatch {
                expected: u.mode_sizes(),
                found: w.mode_sizes(),
            });
        }
        let carriages = u
            .carriages()
            .iter()
            .zip(w.carriages())
            .map(|(cu, cw)| {
                let (m, n) = (cu.mode(), cw.mode());
                let (lu, lw) = (cu.left(), cw.left());
                let mut c = Carriage::zeros(lu * lw, m * n, cu.right() * cw.right());
                for bw in 0..cw.right() {
                    for bu in 0..cu.right() {
                        for j in 0..n {
                            for i in 0..m {
                                for aw in 0..lw {
                                    for au in 0..lu {
                                        c.set(
                                            au + lu * aw,
                                            i + m * j,
                                            bu + cu.right() * bw,
                                            cu.get(au, i, bu) * cw.get(aw, j, bw),
                                        );
                                    }
                                }
                            }
                        }
                    }
                }
                c
            })
            .collect();
        Ok(Self::with_carriages(carriages, u.mode_sizes(), w.mode_sizes()))
    }

    pub fn order(&self) -> usize {
        self.rows.len()
    }

    pub fn row_sizes(&self) -> &[usize] {
        &self.rows
    }

    pub fn col_sizes(&self) -> &[usize] {
        &self.cols
    }

    pub fn cores(&self) -> &TtVector {
        &self.cores
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.cores.ranks()
    }

    pub fn max_rank(&self) -> usize {
        self.cores.max_rank()
    }

    pub fn storage(&self) -> usize {
        self.cores.storage()
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::ModeMismatch {
                expected: self.rows.iter().zip(&self.cols).map(|(m, n)| m * n).collect(),
                found: other.rows.iter().zip(&other.cols).map(|(m, n)| m * n).collect(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self {
            cores: self.cores.add(&other.cores)?,
            rows: self.rows.clone(),
            cols: self.cols.clone(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(-1.0))
    }

    pub fn sum(terms: &[TtMatrix]) -> Result<Self> {
        let first = terms
            .first()
            .ok_or_else(|| Error::InvalidInput("empty sum".into()))?;
        for t in &terms[1..] {
            first.check_same_shape(t)?;
        }
        let parts: Vec<&[Carriage]> = terms.iter().map(|t| t.cores.carriages()).collect();
        Ok(Self::with_carriages(
            block_sum(&parts),
            first.rows.clone(),
            first.cols.clone(),
        ))
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            cores: self.cores.scale(c),
            rows: self.rows.clone(),
            cols: self.cols.clone(),
        }
    }

    pub fn transpose(&self) -> Self {
        let carriages = self
            .cores
            .carriages()
            .iter()
            .zip(self.rows.iter().zip(&self.cols))
            .map(|(c, (&m, &n))| {
                let mut out = Carriage::zeros(c.left(), m * n, c.right());
                for b in 0..c.right() {
                    for j in 0..n {
                        for i in 0..m {
                            for a in 0..c.left() {
                                out.set(a, j + n * i, b, c.get(a, i + m * j, b));
                            }
                        }
                    }
                }
                out
            })
            .collect();
        Self::with_carriages(carriages, self.cols.clone(), self.rows.clone())
    }

    pub fn round(&self, policy: &RoundingPolicy) -> Self {
        self.round_with_outcome(policy).0
    }

    pub fn round_with_outcome(&self, policy: &RoundingPolicy) -> (Self, f64) {
        let RoundingOutcome { vector, rel_error } = self.cores.round_with_outcome(policy);
        (
            Self {
                cores: vector,
                rows: self.rows.clone(),
                cols: self.cols.clone(),
            },
            rel_error,
        )
    }

    /// `A v`; ranks multiply.
    pub fn apply(&self, v: &TtVector) -> Result<TtVector> {
        if v.mode_sizes() != self.cols {
            return Err(Error::ModeMismatch {
                expected: self.cols.clone(),
                found: v.mode_sizes(),
            });
        }
        let carriages = self
            .cores
            .carriages()
            .iter()
            .zip(v.carriages())
            .zip(self.rows.iter().zip(&self.cols))
            .map(|((ca, cv), (&m, &n))| contract_matrix_vector(ca, m, n, cv))
            .collect();
        Ok(TtVector::from_carriages_unchecked(carriages))
    }

    /// `(w^T A)^T`, i.e. `A^T w`.
    pub fn apply_left(&self, w: &TtVector) -> Result<TtVector> {
        if w.mode_sizes() != self.rows {
            return Err(Error::ModeMismatch {
                expected: self.rows.clone(),
                found: w.mode_sizes(),
            });
        }
        self.transpose().apply(w)
    }

    /// `A B`; ranks multiply.
    pub fn multiply(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::ModeMismatch {
                expected: self.cols.clone(),
                found: other.rows.clone(),
            });
        }
        let carriages = self
            .cores
            .carriages()
            .iter()
            .zip(other.cores.carriages())
            .enumerate()
            .map(|(t, (ca, cb))| {
                contract_matrix_matrix(ca, self.rows[t], self.cols[t], cb, other.cols[t])
            })
            .collect();
        Ok(Self::with_carriages(
            carriages,
            self.rows.clone(),
            other.cols.clone(),
        ))
    }

    pub fn to_dense(&self) -> Result<DMatrix<f64>> {
        self.to_dense_capped(DEFAULT_DENSE_CAP)
    }

    pub fn to_dense_capped(&self, cap: usize) -> Result<DMatrix<f64>> {
        let fused: Vec<usize> = self.rows.iter().zip(&self.cols).map(|(m, n)| m * n).collect();
        check_dense_size(&fused, cap)?;
        let flat = self.cores.to_dense_capped(cap)?;
        let nr: usize = self.rows.iter().product();
        let nc: usize = self.cols.iter().product();
        let mut out = DMatrix::zeros(nr, nc);
        let k = self.order();
        let mut digits = vec![0usize; k];
        for value in flat {
            let (mut r, mut c) = (0usize, 0usize);
            for t in 0..k {
                r = r * self.rows[t] + digits[t] % self.rows[t];
                c = c * self.cols[t] + digits[t] / self.rows[t];
            }
            out[(r, c)] = value;
            for t in (0..k).rev() {
                digits[t] += 1;
                if digits[t] < fused[t] {
                    break;
                }
                digits[t] = 0;
            }
        }
        Ok(out)
    }
}

/// Carriage of `A v`: `(a + la*a', i, b + ra*b') <- sum_j A(a, i, j, b) V(a', j, b')`.
fn contract_matrix_vector(ca: &Carriage, m: usize, n: usize, cv: &Carriage) -> Carriage {
    let (la, ra) = (ca.left(), ca.right());
    let (lv, rv) = (cv.left(), cv.right());
    // A as (a, i, b) x j
    let mut ap = DMatrix::zeros(la * m * ra, n);
    let ad = ca.data();
    for b in 0..ra {
        for j in 0..n {
            for i in 0..m {
                let src = la * (i + m * (j + n * b));
                let dst = la * (i + m * b);
                for a in 0..la {
                    ap[(dst + a, j)] = ad[src + a];
                }
            }
        }
    }
    // V as j x (a', b')
    let mut vp = DMatrix::zeros(n, lv * rv);
    let vd = cv.data();
    for bv in 0..rv {
        for j in 0..n {
            for av in 0..lv {
                vp[(j, av + lv * bv)] = vd[av + lv * (j + n * bv)];
            }
        }
    }
    let p = ap * vp;
    let mut out = Carriage::zeros(la * lv, m, ra * rv);
    let od = out.data_mut();
    let (l, r_stride) = (la * lv, la * lv * m);
    for bv in 0..rv {
        for av in 0..lv {
            let col = av + lv * bv;
            for b in 0..ra {
                for i in 0..m {
                    let row0 = la * (i + m * b);
                    let dst0 = la * av + l * i + r_stride * (b + ra * bv);
                    for a in 0..la {
                        od[dst0 + a] = p[(row0 + a, col)];
                    }
                }
            }
        }
    }
    out
}

/// Carriage of `A B` with fused output index `i + m*q`.
fn contract_matrix_matrix(
    ca: &Carriage,
    m: usize,
    n: usize,
    cb: &Carriage,
    p_cols: usize,
) -> Carriage {
    let (la, ra) = (ca.left(), ca.right());
    let (lb, rb) = (cb.left(), cb.right());
    let mut ap = DMatrix::zeros(la * m * ra, n);
    let ad = ca.data();
    for b in 0..ra {
        for j in 0..n {
            for i in 0..m {
                let src = la * (i + m * (j + n * b));
                let dst = la * (i + m * b);
                for a in 0..la {
                    ap[(dst + a, j)] = ad[src + a];
                }
            }
        }
    }
    // B as j x (a', q, b')
    let mut bp = DMatrix::zeros(n, lb * p_cols * rb);
    let bd = cb.data();
    for bb in 0..rb {
        for q in 0..p_cols {
            for j in 0..n {
                for ab in 0..lb {
                    bp[(j, ab + lb * (q + p_cols * bb))] = bd[ab + lb * (j + n * (q + p_cols * bb))];
                }
            }
        }
    }
    let prod = ap * bp;
    let fused = m * p_cols;
    let mut out = Carriage::zeros(la * lb, fused, ra * rb);
    let od = out.data_mut();
    let l = la * lb;
    for bb in 0..rb {
        for q in 0..p_cols {
            for ab in 0..lb {
                let col = ab + lb * (q + p_cols * bb);
                for b in 0..ra {
                    for i in 0..m {
                        let row0 = la * (i + m * b);
                        let dst0 = la * ab + l * ((i + m * q) + fused * (b + ra * bb));
                        for a in 0..la {
                            od[dst0 + a] = prod[(row0 + a, col)];
                        }
                    }
                }
            }
        }
    }
    out
}
