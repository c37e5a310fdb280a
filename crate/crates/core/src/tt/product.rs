//! Rounded products `A B` of train operators computed without forming the
//! product ranks `r_A r_B`: the range of every bond is found with a random
//! Gaussian train contracted against the factored product, then the
//! orthonormalized result is truncated as usual.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Carriage, RoundingPolicy, TtMatrix, TtVector};
use crate::{Error, Result};

/// Extra sketch columns beyond the expected rank.
const OVERSAMPLING: usize = 10;
/// Fixed so that repeated runs give identical results.
const SKETCH_SEED: u64 = 0x5eed_1234;
/// Products with at most this many bond states are rounded directly.
const DIRECT_LIMIT: usize = 48;

struct Factor<'a> {
    c: &'a Carriage,
    rows: usize,
    cols: usize,
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// `W_t` from `W_{t+1}` for the bond left of carriage `t`.
/// `w` is `(ra1*rb1) x l1`, `g` is `(l0*m*n) x l1`, result `(ra0*rb0) x l0`.
fn sketch_step(a: &Factor, b: &Factor, g: &DMatrix<f64>, l0: usize, w: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, sd, n) = (a.rows, a.cols, b.cols);
    let (ra0, ra1) = (a.c.left(), a.c.right());
    let (rb0, rb1) = (b.c.left(), b.c.right());
    let bd = b.c.data();
    // Q1[(b, s), (c, i, a')], accumulated one column index `j` at a time
    let mut q1 = DMatrix::zeros(rb0 * sd, l0 * m * ra1);
    for j in 0..n {
        // P[(c, i), (a', b')]
        let p = g.rows(l0 * m * j, l0 * m) * w.transpose();
        // Pm[b', (c, i, a')]
        let mut pm = DMatrix::zeros(rb1, l0 * m * ra1);
        for bp in 0..rb1 {
            for ap in 0..ra1 {
                let col = ap + ra1 * bp;
                for ci in 0..l0 * m {
                    pm[(bp, ci + l0 * m * ap)] = p[(ci, col)];
                }
            }
        }
        // Bm[(b, s), b']
        let bm = DMatrix::from_fn(rb0 * sd, rb1, |row, bp| bd[row + rb0 * sd * (j + n * bp)]);
        q1.gemm(1.0, &bm, &pm, 1.0);
    }
    // Qm[(i, s, a'), (b, c)]
    let mut qm = DMatrix::zeros(m * sd * ra1, rb0 * l0);
    for ap in 0..ra1 {
        for i in 0..m {
            for c in 0..l0 {
                let col = c + l0 * (i + m * ap);
                for s in 0..sd {
                    for bb in 0..rb0 {
                        qm[(i + m * s + m * sd * ap, bb + rb0 * c)] = q1[(bb + rb0 * s, col)];
                    }
                }
            }
        }
    }
    let am = a.c.right_unfolding();
    // [a, (b, c)] -> W[(a, b), c]
    let wm = am * qm;
    DMatrix::from_column_slice(ra0 * rb0, l0, wm.as_slice())
}

/// `X[(p, i, j), (a', b')] = Σ H[p, (a, b)] A[a, (i, s), a'] B[b, (s, j), b']`.
fn project(a: &Factor, b: &Factor, h: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, sd, n) = (a.rows, a.cols, b.cols);
    let (ra0, ra1) = (a.c.left(), a.c.right());
    let (rb0, rb1) = (b.c.left(), b.c.right());
    let l = h.nrows();
    // Hm[(p, a), b]
    let hm = DMatrix::from_fn(l * ra0, rb0, |row, bb| h[(row % l, row / l + ra0 * bb)]);
    // Aa[(i, a'), (a, s)]
    let ad = a.c.data();
    let mut aa_m = DMatrix::zeros(m * ra1, ra0 * sd);
    for ap in 0..ra1 {
        for s in 0..sd {
            for i in 0..m {
                for aa in 0..ra0 {
                    aa_m[(i + m * ap, aa + ra0 * s)] = ad[aa + ra0 * (i + m * s + m * sd * ap)];
                }
            }
        }
    }
    let bd = b.c.data();
    // Xr[(p, i, j), (a', b')]
    let mut xr = DMatrix::zeros(l * m * n, ra1 * rb1);
    for j in 0..n {
        // Bj[b, (s, b')]
        let bj = DMatrix::from_fn(rb0, sd * rb1, |bb, col| {
            let (s, bp) = (col % sd, col / sd);
            bd[bb + rb0 * (s + sd * (j + n * bp))]
        });
        // T[(p, a), (s, b')]
        let t = &hm * bj;
        // Tt[(a, s), (p, b')]
        let mut tt = DMatrix::zeros(ra0 * sd, l * rb1);
        for bp in 0..rb1 {
            for s in 0..sd {
                let col = s + sd * bp;
                for aa in 0..ra0 {
                    for p in 0..l {
                        tt[(aa + ra0 * s, p + l * bp)] = t[(p + l * aa, col)];
                    }
                }
            }
        }
        // Xm[(i, a'), (p, b')]
        let xm = &aa_m * tt;
        for bp in 0..rb1 {
            for p in 0..l {
                let col = p + l * bp;
                for ap in 0..ra1 {
                    for i in 0..m {
                        xr[(p + l * (i + m * j), ap + ra1 * bp)] = xm[(i + m * ap, col)];
                    }
                }
            }
        }
    }
    xr
}

/// Orthonormal train spanning the product with sketch ranks `l` (capped by the product ranks).
fn sketched_product(a: &TtMatrix, b: &TtMatrix, l: usize) -> Vec<Carriage> {
    let k = a.order();
    let fa: Vec<Factor> = a
        .cores()
        .carriages()
        .iter()
        .zip(a.row_sizes().iter().zip(a.col_sizes()))
        .map(|(c, (&rows, &cols))| Factor { c, rows, cols })
        .collect();
    let fb: Vec<Factor> = b
        .cores()
        .carriages()
        .iter()
        .zip(b.row_sizes().iter().zip(b.col_sizes()))
        .map(|(c, (&rows, &cols))| Factor { c, rows, cols })
        .collect();
    // sketch rank of bond t (between carriages t-1 and t)
    let mut ls = vec![1usize; k + 1];
    for t in 1..k {
        ls[t] = l.min(fa[t].c.left() * fb[t].c.left());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(SKETCH_SEED);
    let mut ws: Vec<DMatrix<f64>> = vec![DMatrix::zeros(0, 0); k + 1];
    ws[k] = DMatrix::from_element(1, 1, 1.0);
    for t in (1..k).rev() {
        let mn = fa[t].rows * fb[t].cols;
        let g = gaussian(&mut rng, ls[t] * mn, ls[t + 1]);
        ws[t] = sketch_step(&fa[t], &fb[t], &g, ls[t], &ws[t + 1]);
    }
    let mut out = Vec::with_capacity(k);
    let mut h = DMatrix::from_element(1, 1, 1.0);
    for t in 0..k {
        let mn = fa[t].rows * fb[t].cols;
        let xr = project(&fa[t], &fb[t], &h);
        if t == k - 1 {
            out.push(Carriage::from_left_unfolding(mn, xr));
            break;
        }
        let z = &xr * &ws[t + 1];
        let q = z.qr().q();
        h = q.transpose() * &xr;
        out.push(Carriage::from_left_unfolding(mn, q));
    }
    out
}

fn check_product(a: &TtMatrix, b: &TtMatrix) -> Result<()> {
    if a.col_sizes() != b.row_sizes() {
        return Err(Error::ModeMismatch {
            expected: a.col_sizes().to_vec(),
            found: b.row_sizes().to_vec(),
        });
    }
    Ok(())
}

impl TtMatrix {
    /// `round(A B)` together with the relative truncation error of the final
    /// rounding step.
    pub fn multiply_rounded(&self, other: &Self, policy: &RoundingPolicy) -> Result<(Self, f64)> {
        check_product(self, other)?;
        let k = self.order();
        let product_rank = (1..k)
            .map(|t| self.ranks()[t] * other.ranks()[t])
            .max()
            .unwrap_or(1);
        let mut l = self.max_rank().max(other.max_rank()) + OVERSAMPLING;
        if let Some(cap) = policy.max_rank {
            l = l.min(cap + OVERSAMPLING);
        }
        if product_rank <= DIRECT_LIMIT.max(l) || k == 1 {
            return Ok(self.multiply(other)?.round_with_outcome(policy));
        }
        loop {
            let cs = sketched_product(self, other, l);
            let sketched = Self::from_cores(
                TtVector::from_carriages_unchecked(cs),
                self.row_sizes().to_vec(),
                other.col_sizes().to_vec(),
            )?;
            let sketch_ranks = sketched.ranks();
            let (rounded, err) = sketched.round_with_outcome(policy);
            let saturated = rounded
                .ranks()
                .iter()
                .zip(&sketch_ranks)
                .enumerate()
                .any(|(t, (&r, &s))| {
                    // only bonds whose size was set by the sketch can be too small
                    let exact = self.ranks()[t] * other.ranks()[t];
                    s == l && l < exact && r + OVERSAMPLING / 2 > s
                });
            let capped = policy.max_rank.is_some_and(|cap| l >= cap + OVERSAMPLING);
            if !saturated || capped || l >= product_rank {
                return Ok((rounded, err));
            }
            l *= 2;
            if let Some(cap) = policy.max_rank {
                l = l.min(cap + OVERSAMPLING);
            }
        }
    }

    /// `round(A v)`.
    pub fn apply_rounded(&self, v: &TtVector, policy: &RoundingPolicy) -> Result<TtVector> {
        let ones = vec![1; v.order()];
        let vm = Self::from_cores(v.clone(), v.mode_sizes(), ones)?;
        let (p, _) = self.multiply_rounded(&vm, policy)?;
        Ok(p.cores().clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_ttm(rng: &mut ChaCha8Rng, n: usize, k: usize, r: usize) -> TtMatrix {
        let mut cs = Vec::new();
        for t in 0..k {
            let (l, rr) = (if t == 0 { 1 } else { r }, if t == k - 1 { 1 } else { r });
            let data = (0..l * n * n * rr).map(|_| rng.random::<f64>() - 0.5).collect();
            cs.push(Carriage::from_data(l, n * n, rr, data));
        }
        TtMatrix::from_cores(TtVector::new(cs).unwrap(), vec![n; k], vec![n; k]).unwrap()
    }

    #[test]
    fn sketched_product_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_ttm(&mut rng, 2, 5, 8);
        let b = random_ttm(&mut rng, 2, 5, 9);
        let exact = a.to_dense().unwrap() * b.to_dense().unwrap();
        let (p, _) = a.multiply_rounded(&b, &RoundingPolicy::with_tolerance(1e-12)).unwrap();
        let err = (p.to_dense().unwrap() - &exact).norm() / exact.norm();
        assert!(err < 1e-10, "relative error {err}");
    }

    #[test]
    fn low_rank_product_is_compressed() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_ttm(&mut rng, 3, 4, 7);
        let id = TtMatrix::identity(&[3; 4]).unwrap();
        // stored product rank 6*7*2 = 84, true rank 7
        let six_a = TtMatrix::sum(&vec![a.clone(); 6]).unwrap();
        let two_id = id.add(&id).unwrap();
        let (p, _) = six_a.multiply_rounded(&two_id, &RoundingPolicy::default()).unwrap();
        assert!(p.max_rank() <= 7);
        let exact = a.to_dense().unwrap() * 12.0;
        let err = (p.to_dense().unwrap() - &exact).norm();
        assert!(err < 1e-7 * exact.norm(), "{err}");
    }

    #[test]
    fn apply_rounded_matches_apply() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_ttm(&mut rng, 3, 4, 8);
        let v = random_ttm(&mut rng, 3, 4, 8);
        let v = TtVector::new(
            v.cores()
                .carriages()
                .iter()
                .map(|c| {
                    let d: Vec<f64> = (0..c.left() * 3 * c.right()).map(|_| rng.random::<f64>()).collect();
                    Carriage::from_data(c.left(), 3, c.right(), d)
                })
                .collect(),
        )
        .unwrap();
        let exact = a.apply(&v).unwrap().to_dense().unwrap();
        let got = a.apply_rounded(&v, &RoundingPolicy::with_tolerance(1e-12)).unwrap().to_dense().unwrap();
        let err: f64 = exact.iter().zip(&got).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = exact.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(err < 1e-10 * norm, "{err}");
    }
}
