//! Real Schur decomposition with block reordering.
//!
//! The factorization itself comes from `nalgebra`; this module adds block
//! bookkeeping and swapping of adjacent diagonal blocks (direct swapping via a
//! small Sylvester solve followed by an orthogonal QR basis), which is what the
//! Riccati solver needs to gather the stable eigenvalues in the leading block.

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const MODULE: &str = "matrix_algebra";

/// `A = Z T Z^T` with `T` upper quasi-triangular.
#[derive(Debug, Clone)]
pub struct RealSchur {
    pub z: DMatrix<f64>,
    pub t: DMatrix<f64>,
    /// Diagonal blocks as `(start, size)`, size 1 or 2.
    blocks: Vec<(usize, usize)>,
}

impl RealSchur {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch {
                context: "real Schur decomposition",
                expected: a.nrows(),
                got: a.ncols(),
            });
        }
        if a.iter().any(|x| !x.is_finite()) {
            return Err(Error::numerical(MODULE, "non-finite entry in Schur input"));
        }
        let n = a.nrows();
        let max_iter = 200 * n.max(1);
        let (z, t) = match nalgebra::Schur::try_new(a.clone(), f64::EPSILON, max_iter) {
            Some(s) => s.unpack(),
            None => {
                // The double-shift sweep has no exceptional shifts and can stall on
                // highly structured inputs; a random orthogonal similarity breaks the
                // structure without changing the spectrum.
                let mut rng = ChaCha8Rng::seed_from_u64(0x5c4u64 + n as u64);
                let g = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
                let q0 = g.qr().q();
                let b = q0.transpose() * a * &q0;
                let s = nalgebra::Schur::try_new(b, f64::EPSILON, 4 * max_iter).ok_or_else(
                    || Error::numerical(MODULE, "Schur iteration did not converge"),
                )?;
                let (z1, t) = s.unpack();
                (q0 * z1, t)
            }
        };
        let mut out = Self {
            z,
            t,
            blocks: Vec::new(),
        };
        out.detect_blocks();
        Ok(out)
    }

    fn detect_blocks(&mut self) {
        let n = self.t.nrows();
        self.blocks.clear();
        let mut i = 0;
        while i < n {
            if i + 1 < n && self.t[(i + 1, i)] != 0.0 {
                self.blocks.push((i, 2));
                i += 2;
            } else {
                self.blocks.push((i, 1));
                i += 1;
            }
        }
        // Everything below the block diagonal is structurally zero.
        for &(s, size) in &self.blocks {
            for r in s + size..n {
                for c in s..s + size {
                    self.t[(r, c)] = 0.0;
                }
            }
        }
    }

    pub fn blocks(&self) -> &[(usize, usize)] {
        &self.blocks
    }

    pub fn block_eigenvalues(&self, start: usize, size: usize) -> [Complex<f64>; 2] {
        let t = &self.t;
        if size == 1 {
            let l = Complex::new(t[(start, start)], 0.0);
            return [l, l];
        }
        let (a, b) = (t[(start, start)], t[(start, start + 1)]);
        let (c, d) = (t[(start + 1, start)], t[(start + 1, start + 1)]);
        let half_tr = 0.5 * (a + d);
        let disc = 0.25 * (a - d) * (a - d) + b * c;
        if disc >= 0.0 {
            let s = disc.sqrt();
            [Complex::new(half_tr + s, 0.0), Complex::new(half_tr - s, 0.0)]
        } else {
            let s = (-disc).sqrt();
            [Complex::new(half_tr, s), Complex::new(half_tr, -s)]
        }
    }

    pub fn eigenvalues(&self) -> Vec<Complex<f64>> {
        let mut out = Vec::with_capacity(self.t.nrows());
        for &(s, size) in &self.blocks {
            let ev = self.block_eigenvalues(s, size);
            out.extend_from_slice(&ev[..size]);
        }
        out
    }

    /// Move every block whose eigenvalues satisfy `select` to the leading
    /// position. Returns the dimension of the selected invariant subspace,
    /// spanned by the first columns of `z`.
    pub fn reorder(&mut self, select: impl Fn(Complex<f64>) -> bool) -> Result<usize> {
        let flags: Vec<bool> = self
            .blocks
            .iter()
            .map(|&(s, size)| select(self.block_eigenvalues(s, size)[0]))
            .collect();
        let mut order: Vec<(usize, bool)> = self
            .blocks
            .iter()
            .zip(&flags)
            .map(|(&(_, size), &f)| (size, f))
            .collect();

        let mut placed = 0; // number of leading blocks already selected
        for idx in 0..order.len() {
            if !order[idx].1 {
                continue;
            }
            let mut pos = idx;
            while pos > placed {
                let start: usize = order[..pos - 1].iter().map(|b| b.0).sum();
                let p = order[pos - 1].0;
                let q = order[pos].0;
                self.swap_adjacent(start, p, q)?;
                order.swap(pos - 1, pos);
                pos -= 1;
            }
            placed += 1;
        }
        let mut start = 0;
        self.blocks = order
            .iter()
            .map(|&(size, _)| {
                let b = (start, size);
                start += size;
                b
            })
            .collect();
        Ok(order.iter().filter(|b| b.1).map(|b| b.0).sum())
    }

    /// Swap the `p x p` block at `k` with the following `q x q` block.
    fn swap_adjacent(&mut self, k: usize, p: usize, q: usize) -> Result<()> {
        let w = p + q;
        let a11 = self.t.view((k, k), (p, p)).into_owned();
        let a12 = self.t.view((k, k + p), (p, q)).into_owned();
        let a22 = self.t.view((k + p, k + p), (q, q)).into_owned();

        // A11 X - X A22 = -A12, so that [X; I] spans the A22 invariant subspace.
        let x = solve_small_sylvester(&a11, &(-&a22), &(-&a12))?;
        let mut basis = DMatrix::zeros(w, q + w);
        basis.view_mut((0, 0), (p, q)).copy_from(&x);
        basis.view_mut((p, 0), (q, q)).fill_with_identity();
        basis.view_mut((0, q), (w, w)).fill_with_identity();
        let qm = basis.qr().q(); // w x w, leading q columns span [X; I]

        let rows = self.t.rows(k, w).into_owned();
        self.t.rows_mut(k, w).copy_from(&(qm.transpose() * rows));
        let cols = self.t.columns(k, w).into_owned();
        self.t.columns_mut(k, w).copy_from(&(cols * &qm));
        let zc = self.z.columns(k, w).into_owned();
        self.z.columns_mut(k, w).copy_from(&(zc * &qm));

        let lower = self.t.view((k + q, k), (p, q)).norm();
        let scale = self.t.view((k, k), (w, w)).norm().max(f64::MIN_POSITIVE);
        if lower > 1e-10 * scale {
            return Err(Error::numerical(
                MODULE,
                format!("Schur block swap lost accuracy (residual {:.3e})", lower / scale),
            ));
        }
        self.t.view_mut((k + q, k), (p, q)).fill(0.0);
        Ok(())
    }
}

/// Solve `A X + X B = C` for blocks of size at most 2 via the Kronecker form.
pub(crate) fn solve_small_sylvester(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let (p, q) = (a.nrows(), b.nrows());
    let k = kron(&DMatrix::identity(q, q), a) + kron(&b.transpose(), &DMatrix::identity(p, p));
    let rhs = DVector::from_column_slice(c.as_slice());
    let sol = k
        .full_piv_lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular {
            module: MODULE,
            detail: "small Sylvester system (blocks share an eigenvalue)".into(),
        })?;
    Ok(DMatrix::from_column_slice(p, q, sol.as_slice()))
}

pub(crate) fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_matrix(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn reordering_preserves_similarity_and_selects_stable_first() {
        for seed in 0..20 {
            let n = 3 + (seed as usize % 8);
            let a = random_matrix(n, seed);
            let mut s = RealSchur::new(&a).unwrap();
            let before: Vec<_> = s.eigenvalues();
            let k = s.reorder(|l| l.re < 0.0).unwrap();
            let recon = &s.z * &s.t * s.z.transpose();
            assert!((recon - &a).norm() < 1e-10 * a.norm());
            assert!((s.z.transpose() * &s.z - DMatrix::identity(n, n)).norm() < 1e-12);
            let after = s.eigenvalues();
            let stable = before.iter().filter(|l| l.re < 0.0).count();
            assert_eq!(k, stable);
            assert!(after[..k].iter().all(|l| l.re < 0.0));
            assert!(after[k..].iter().all(|l| l.re >= 0.0));
            // Leading columns span an invariant subspace.
            if k > 0 {
                let zk = s.z.columns(0, k).into_owned();
                let az = &a * &zk;
                let proj = &zk * (zk.transpose() * &az);
                assert!((az - proj).norm() < 1e-9 * a.norm());
            }
        }
    }

    #[test]
    fn eigenvalues_of_rotation_generator() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -2.0, 2.0, 0.0]);
        let s = RealSchur::new(&a).unwrap();
        let ev = s.eigenvalues();
        assert_eq!(ev.len(), 2);
        assert!(ev.iter().all(|l| l.re.abs() < 1e-14 && (l.im.abs() - 2.0).abs() < 1e-14));
    }
}
