//! Dense solvers: Lyapunov and H-infinity Riccati equations, H-infinity norms,
//! spectra and definiteness tests.

mod definite;
mod hinf;
mod lyapunov;
mod riccati;
mod schur;

pub use definite::{
    is_positive_definite, is_positive_semidefinite, is_positive_semidefinite_wrt, sqrtm_psd,
    symmetric_eigenvalues, symmetrize_checked,
};
pub use hinf::{hinf_norm, resolvent_sup, sigma_max_at};
pub use lyapunov::solve_lyapunov;
pub use riccati::{solve_hinf_are, solve_hinf_are_boundary, AreSolution, BOUNDARY_ZERO_TOL};
pub use schur::RealSchur;

use nalgebra::{Complex, DMatrix};

use crate::error::{Error, Result};

pub(crate) const MODULE: &str = "matrix_algebra";

/// Largest singular value.
pub fn norm2(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Diagonal similarity scaling `D^{-1} A D` with power-of-two factors.
///
/// Returns the scaled matrix and the diagonal of `D`.
pub fn balance(a: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    const RADIX: f64 = 2.0;
    let n = a.nrows();
    let mut b = a.clone();
    let mut d = vec![1.0; n];
    let mut done = false;
    let mut sweeps = 0;
    while !done && sweeps < 100 {
        done = true;
        sweeps += 1;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += b[(j, i)].abs();
                    r += b[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut g = r / RADIX;
            while c < g {
                f *= RADIX;
                c *= RADIX * RADIX;
            }
            g = r * RADIX;
            while c > g {
                f /= RADIX;
                c /= RADIX * RADIX;
            }
            if (c + r) / f < 0.95 * s {
                done = false;
                d[i] *= f;
                for j in 0..n {
                    b[(i, j)] /= f;
                    b[(j, i)] *= f;
                }
            }
        }
    }
    (b, d)
}

/// Eigenvalues of a general real matrix, computed on the balanced matrix.
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    if a.is_empty() {
        return Ok(Vec::new());
    }
    let (b, _) = balance(a);
    Ok(RealSchur::new(&b)?.eigenvalues())
}

/// `max Re(lambda)` over the spectrum.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> Result<f64> {
    Ok(eigenvalues(a)?
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

pub fn is_hurwitz(a: &DMatrix<f64>) -> Result<bool> {
    Ok(spectral_abscissa(a)? < 0.0)
}

pub(crate) fn require_hurwitz(a: &DMatrix<f64>) -> Result<()> {
    let abscissa = spectral_abscissa(a)?;
    if abscissa < 0.0 {
        Ok(())
    } else {
        Err(Error::NotHurwitz {
            module: MODULE,
            abscissa,
        })
    }
}

pub(crate) fn require_square(a: &DMatrix<f64>, context: &'static str) -> Result<()> {
    if a.is_square() {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected: a.nrows(),
            got: a.ncols(),
        })
    }
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

#[cfg(test)]
pub(crate) mod test_support {
    use nalgebra::DMatrix;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    /// Random dense matrix shifted so its spectral abscissa lies in [-1, -0.05].
    pub(crate) fn random_hurwitz(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let g = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let shift = super::spectral_abscissa(&g).unwrap() + rng.gen_range(0.05..1.0);
        g - DMatrix::identity(n, n) * shift
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balancing_is_a_similarity() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 1e6, 0.0, 1e-6, 2.0, 1e4, 0.0, 1e-3, -1.0]);
        let (b, d) = balance(&a);
        for i in 0..3 {
            for j in 0..3 {
                assert!((b[(i, j)] - a[(i, j)] * d[j] / d[i]).abs() <= 1e-15 * a[(i, j)].abs());
            }
        }
        assert!(b.norm() < a.norm());
        let mut ea: Vec<f64> = eigenvalues(&a).unwrap().iter().map(|l| l.re).collect();
        let mut eb: Vec<f64> = RealSchur::new(&a).unwrap().eigenvalues().iter().map(|l| l.re).collect();
        ea.sort_by(f64::total_cmp);
        eb.sort_by(f64::total_cmp);
        for (x, y) in ea.iter().zip(&eb) {
            assert!((x - y).abs() < 1e-8 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn hurwitz_classification() {
        let stable = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.1]);
        let marginal = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!(is_hurwitz(&stable).unwrap());
        assert!(!is_hurwitz(&DMatrix::from_diagonal_element(3, 3, 1e-9)).unwrap());
        assert!(spectral_abscissa(&marginal).unwrap().abs() < 1e-14);
    }
}
