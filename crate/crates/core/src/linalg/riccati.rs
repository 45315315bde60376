use nalgebra::DMatrix;

use super::schur::RealSchur;
use super::{require_hurwitz, require_square, spectral_abscissa, symmetrize, MODULE};
use crate::error::{Error, Result};

/// Solution of `P F + F^T P + P B B^T P + C^T C = 0`.
#[derive(Debug, Clone)]
pub struct AreSolution {
    pub p2: DMatrix<f64>,
    pub residual: f64,
    /// `max Re eig(F + B B^T P2)`.
    pub closed_loop_spectral_abscissa: f64,
}

impl AreSolution {
    pub fn is_stabilizing(&self) -> bool {
        self.closed_loop_spectral_abscissa < 0.0
    }
}

/// Relative distance from the imaginary axis below which a Hamiltonian
/// eigenvalue is treated as lying on it.
pub(crate) const AXIS_MARGIN: f64 = 1e-8;

pub fn solve_hinf_are(f: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<AreSolution> {
    require_square(f, "solve_hinf_are: f")?;
    let n = f.nrows();
    if b.nrows() != n {
        return Err(Error::DimensionMismatch {
            context: "solve_hinf_are: b rows",
            expected: n,
            got: b.nrows(),
        });
    }
    if c.ncols() != n {
        return Err(Error::DimensionMismatch {
            context: "solve_hinf_are: c columns",
            expected: n,
            got: c.ncols(),
        });
    }
    if n == 0 {
        return Ok(AreSolution {
            p2: DMatrix::zeros(0, 0),
            residual: 0.0,
            closed_loop_spectral_abscissa: f64::NEG_INFINITY,
        });
    }
    require_hurwitz(f)?;

    let (h, bbt, ctc) = hamiltonian(f, b, c);
    let margin = AXIS_MARGIN * h.norm().max(1.0);
    let mut schur = RealSchur::new(&h)?;
    if let Some(l) = schur
        .eigenvalues()
        .into_iter()
        .filter(|l| l.re.abs() <= margin)
        .min_by(|a, b| a.re.abs().total_cmp(&b.re.abs()))
    {
        return Err(Error::ImaginaryAxisEigenvalue {
            real_part: l.re,
            margin,
        });
    }
    let k = schur.reorder(|l| l.re < 0.0)?;
    if k != n {
        return Err(Error::numerical(
            MODULE,
            format!("Hamiltonian has {k} stable eigenvalues, expected {n}"),
        ));
    }
    finish(f, &bbt, &ctc, schur.z.columns(0, n).into_owned())
}

/// Relative size below which a Hamiltonian eigenvalue counts as zero in
/// [`solve_hinf_are_boundary`]. A defective double zero splits by about
/// `sqrt(eps) ||H||`, so this is looser than [`AXIS_MARGIN`].
pub const BOUNDARY_ZERO_TOL: f64 = 1e-5;

/// Maximal solution when the Hamiltonian has a double eigenvalue at the origin
/// and no other eigenvalue on the imaginary axis, i.e. `||c (sI - f)^{-1} b||_inf = 1`
/// attained only at `s = 0`.
///
/// The invariant subspace is the stable subspace plus the null vector of the
/// Hamiltonian; it is Lagrangian, so `P2` is symmetric. The closed loop
/// `f + b b^T P2` keeps one eigenvalue at zero.
pub fn solve_hinf_are_boundary(
    f: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
) -> Result<AreSolution> {
    require_square(f, "solve_hinf_are_boundary: f")?;
    let n = f.nrows();
    if b.nrows() != n || c.ncols() != n || n == 0 {
        return Err(Error::DimensionMismatch {
            context: "solve_hinf_are_boundary: b rows / c columns",
            expected: n,
            got: if b.nrows() != n { b.nrows() } else { c.ncols() },
        });
    }
    require_hurwitz(f)?;
    let (h, bbt, ctc) = hamiltonian(f, b, c);
    let tol = BOUNDARY_ZERO_TOL * h.norm().max(1.0);
    let mut schur = RealSchur::new(&h)?;
    let eig = schur.eigenvalues();
    let zeros = eig.iter().filter(|l| l.norm() <= tol).count();
    let margin = AXIS_MARGIN * h.norm().max(1.0);
    let axis = eig
        .iter()
        .filter(|l| l.norm() > tol && l.re.abs() <= margin)
        .count();
    if zeros != 2 || axis != 0 {
        return Err(Error::numerical(
            MODULE,
            format!(
                "boundary Riccati needs exactly two zero Hamiltonian eigenvalues and no other axis eigenvalue, found {zeros} and {axis}"
            ),
        ));
    }
    let k = schur.reorder(|l| l.norm() > tol && l.re < 0.0)?;
    if k != n - 1 {
        return Err(Error::numerical(
            MODULE,
            format!("Hamiltonian has {k} stable eigenvalues, expected {}", n - 1),
        ));
    }
    let svd = h.clone().svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::numerical(MODULE, "SVD of the Hamiltonian failed"))?;
    let null = v_t.row(svd.singular_values.imin()).transpose();
    let mut basis = DMatrix::zeros(2 * n, n);
    basis
        .columns_mut(0, n - 1)
        .copy_from(&schur.z.columns(0, n - 1));
    basis.column_mut(n - 1).copy_from(&null);
    finish(f, &bbt, &ctc, basis)
}

fn hamiltonian(
    f: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n = f.nrows();
    let bbt = b * b.transpose();
    let ctc = c.transpose() * c;
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(f);
    h.view_mut((0, n), (n, n)).copy_from(&bbt);
    h.view_mut((n, 0), (n, n)).copy_from(&(-&ctc));
    h.view_mut((n, n), (n, n)).copy_from(&(-f.transpose()));
    (h, bbt, ctc)
}

/// `P2 = X2 X1^{-1}` from a basis `[X1; X2]` of the invariant subspace.
fn finish(
    f: &DMatrix<f64>,
    bbt: &DMatrix<f64>,
    ctc: &DMatrix<f64>,
    basis: DMatrix<f64>,
) -> Result<AreSolution> {
    let n = f.nrows();
    let x1 = basis.view((0, 0), (n, n)).into_owned();
    let x2 = basis.view((n, 0), (n, n)).into_owned();
    let sv = x1.singular_values();
    let rcond = sv.min() / sv.max();
    if !(rcond > 1e-12) {
        return Err(Error::SubspaceDegenerate { rcond });
    }
    // P2 X1 = X2  <=>  X1^T P2^T = X2^T
    let p_t = x1
        .transpose()
        .lu()
        .solve(&x2.transpose())
        .ok_or(Error::SubspaceDegenerate { rcond })?;
    let p2 = symmetrize(&p_t.transpose());

    let residual = (&p2 * f + f.transpose() * &p2 + &p2 * bbt * &p2 + ctc).norm();
    let closed_loop_spectral_abscissa = spectral_abscissa(&(f + bbt * &p2))?;
    Ok(AreSolution {
        p2,
        residual,
        closed_loop_spectral_abscissa,
    })
}
