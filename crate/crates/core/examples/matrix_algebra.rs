//! Lyapunov, H-infinity Riccati and H-infinity norm solvers on small problems.

use convsync::linalg::{hinf_norm, sigma_max_at, solve_hinf_are, solve_lyapunov};
use nalgebra::DMatrix;

fn main() -> convsync::Result<()> {
    let a = DMatrix::from_row_slice(3, 3, &[-2.0, 1.0, 0.0, -1.0, -3.0, 0.5, 0.0, 0.2, -1.0]);
    let q = DMatrix::identity(3, 3);
    let p = solve_lyapunov(&a, &q)?;
    println!("Lyapunov residual {:.3e}", (&p * &a + a.transpose() * &p + &q).norm());

    let b = DMatrix::from_column_slice(3, 1, &[0.3, 0.0, 0.2]);
    let c = DMatrix::from_row_slice(1, 3, &[0.0, 0.4, 0.1]);
    let g = hinf_norm(&a, &b, &c)?;
    let grid = (0..100_000)
        .map(|k| 1e-3 * 1e7f64.powf(k as f64 / 99_999.0))
        .map(|w| sigma_max_at(&a, &b, &c, w).unwrap())
        .fold(sigma_max_at(&a, &b, &c, 0.0)?, f64::max);
    println!("H-inf norm {g:.6e}, frequency grid {grid:.6e}");

    let are = solve_hinf_are(&a, &b, &c)?;
    println!(
        "ARE residual {:.3e}, closed-loop abscissa {:.4e}",
        are.residual, are.closed_loop_spectral_abscissa
    );
    Ok(())
}
