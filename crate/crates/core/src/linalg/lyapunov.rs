use nalgebra::DMatrix;

use super::schur::{solve_small_sylvester, RealSchur};
use super::{require_hurwitz, require_square, symmetrize, symmetrize_checked, MODULE};
use crate::error::{Error, Result};

/// Solve `P a + a^T P = -q` for Hurwitz `a` (Bartels-Stewart on the real Schur form).
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    require_square(a, "solve_lyapunov: a")?;
    if q.shape() != a.shape() {
        return Err(Error::DimensionMismatch {
            context: "solve_lyapunov: q",
            expected: a.nrows(),
            got: q.nrows(),
        });
    }
    let q = symmetrize_checked(q)?;
    if a.is_empty() {
        return Ok(DMatrix::zeros(0, 0));
    }
    require_hurwitz(a)?;

    let schur = RealSchur::new(a)?;
    let (z, t) = (&schur.z, &schur.t);
    let c = -(z.transpose() * &q * z);
    let n = a.nrows();
    let mut x = DMatrix::zeros(n, n);

    // X T + T^T X = C, block by block in increasing (row, column) order.
    for &(ri, p) in schur.blocks() {
        for &(rj, s) in schur.blocks() {
            let mut rhs = c.view((ri, rj), (p, s)).into_owned();
            if ri > 0 {
                rhs -= t.view((0, ri), (ri, p)).transpose() * x.view((0, rj), (ri, s));
            }
            if rj > 0 {
                rhs -= x.view((ri, 0), (p, rj)) * t.view((0, rj), (rj, s));
            }
            let tii_t = t.view((ri, ri), (p, p)).transpose();
            let tjj = t.view((rj, rj), (s, s)).into_owned();
            let blk = solve_small_sylvester(&tii_t, &tjj, &rhs)?;
            x.view_mut((ri, rj), (p, s)).copy_from(&blk);
        }
    }

    let p = symmetrize(&(z * x * z.transpose()));
    let residual = (&p * a + a.transpose() * &p + &q).norm();
    let bound = 1e-8 * (a.norm() * p.norm() + q.norm());
    if !(residual <= bound) {
        return Err(Error::numerical(
            MODULE,
            format!("Lyapunov residual {residual:.3e} exceeds {bound:.3e}"),
        ));
    }
    Ok(p)
}
