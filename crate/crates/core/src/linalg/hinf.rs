use nalgebra::{Complex, DMatrix};

use super::schur::RealSchur;
use super::{eigenvalues, require_hurwitz, require_square, MODULE};
use crate::error::{Error, Result};

/// Largest singular value of `c (j omega I - f)^{-1} b`.
pub fn sigma_max_at(f: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>, omega: f64) -> Result<f64> {
    let n = f.nrows();
    let mut m: DMatrix<Complex<f64>> = f.map(|x| Complex::new(-x, 0.0));
    for i in 0..n {
        m[(i, i)] += Complex::new(0.0, omega);
    }
    let bc = b.map(|x| Complex::new(x, 0.0));
    let x = m
        .lu()
        .solve(&bc)
        .ok_or_else(|| Error::Singular {
            module: MODULE,
            detail: format!("j*{omega:.6e} I - F"),
        })?;
    let g = c.map(|x| Complex::new(x, 0.0)) * x;
    if g.is_empty() {
        return Ok(0.0);
    }
    Ok(g.singular_values().max())
}

fn check_dims(f: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<()> {
    require_square(f, "hinf_norm: f")?;
    if b.nrows() != f.nrows() {
        return Err(Error::DimensionMismatch {
            context: "hinf_norm: b rows",
            expected: f.nrows(),
            got: b.nrows(),
        });
    }
    if c.ncols() != f.nrows() {
        return Err(Error::DimensionMismatch {
            context: "hinf_norm: c columns",
            expected: f.nrows(),
            got: c.ncols(),
        });
    }
    Ok(())
}

/// Frequencies at which the gamma-scaled Hamiltonian has (nearly) imaginary eigenvalues.
fn axis_frequencies(
    f: &DMatrix<f64>,
    bbt: &DMatrix<f64>,
    ctc: &DMatrix<f64>,
    gamma: f64,
) -> Result<Vec<f64>> {
    let n = f.nrows();
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(f);
    h.view_mut((0, n), (n, n)).copy_from(&(bbt / gamma));
    h.view_mut((n, 0), (n, n)).copy_from(&(-ctc / gamma));
    h.view_mut((n, n), (n, n)).copy_from(&(-f.transpose()));
    let scale = h.norm().max(f64::MIN_POSITIVE);
    let mut out: Vec<f64> = RealSchur::new(&h)?
        .eigenvalues()
        .into_iter()
        .filter(|l| l.im >= 0.0 && l.re.abs() <= (1e-6 * scale).max(1e-3 * l.norm()))
        .map(|l| l.im)
        .collect();
    out.sort_by(f64::total_cmp);
    out.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
    Ok(out)
}

/// Largest transfer gain over the candidate frequencies.
fn peak_over(
    f: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    freqs: &[f64],
) -> Result<f64> {
    let mut best: f64 = 0.0;
    for &w in freqs {
        best = best.max(sigma_max_at(f, b, c, w)?);
    }
    Ok(best)
}

/// `sup_omega sigma_max(c (j omega I - f)^{-1} b)` by Hamiltonian bisection.
///
/// A level `gamma` is an upper bound iff the scaled Hamiltonian has no
/// eigenvalue on the imaginary axis. Candidate axis eigenvalues are confirmed
/// by evaluating the gain at their frequency, so every lower bound is attained
/// by an actual frequency.
pub fn hinf_norm(f: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<f64> {
    check_dims(f, b, c)?;
    if f.is_empty() || b.norm() == 0.0 || c.norm() == 0.0 {
        return Ok(0.0);
    }
    require_hurwitz(f)?;
    let bbt = b * b.transpose();
    let ctc = c.transpose() * c;

    let mut seeds = vec![0.0];
    for l in eigenvalues(f)? {
        seeds.push(l.im.abs());
        seeds.push(l.norm());
    }
    let mut lower = peak_over(f, b, c, &seeds)?;
    let mut upper = if lower > 0.0 { 2.0 * lower } else { 1.0 };

    let mut iter = 0;
    loop {
        let freqs = axis_frequencies(f, &bbt, &ctc, upper)?;
        let peak = peak_over(f, b, c, &freqs)?;
        lower = lower.max(peak);
        if peak < upper {
            break;
        }
        upper *= 2.0;
        iter += 1;
        if iter > 1100 {
            return Err(Error::numerical(MODULE, "H-infinity bracket did not close"));
        }
    }
    if lower >= upper {
        return Ok(upper);
    }

    let mut iter = 0;
    while upper - lower > 1e-6 * upper && iter < 200 {
        let mid = 0.5 * (lower + upper);
        let freqs = axis_frequencies(f, &bbt, &ctc, mid)?;
        let peak = peak_over(f, b, c, &freqs)?;
        if peak >= mid * (1.0 - 1e-12) {
            lower = lower.max(peak).min(upper);
            if peak >= upper {
                upper = peak * (1.0 + 1e-9);
            }
        } else {
            upper = mid;
        }
        iter += 1;
    }
    Ok(0.5 * (lower + upper))
}

/// `sup_zeta || (j zeta I - f)^{-1} ||_2`.
pub fn resolvent_sup(f: &DMatrix<f64>) -> Result<f64> {
    let eye = DMatrix::identity(f.nrows(), f.ncols());
    hinf_norm(f, &eye, &eye)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::test_support::random_hurwitz;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn grid_oracle(f: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>, points: usize) -> f64 {
        let mut best = sigma_max_at(f, b, c, 0.0).unwrap();
        let (lo, hi) = (-4.0f64, 4.0f64);
        for k in 0..points {
            let w = 10f64.powf(lo + (hi - lo) * k as f64 / (points - 1) as f64);
            best = best.max(sigma_max_at(f, b, c, w).unwrap());
        }
        best
    }

    #[test]
    fn first_order_lag() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let g = hinf_norm(&DMatrix::from_element(1, 1, -1.0), &one, &one).unwrap();
        assert!((g - 1.0).abs() < 1e-6);
    }

    #[test]
    fn scaled_resolvent() {
        for alpha in [0.01, 0.5, 3.0, 250.0] {
            let f = DMatrix::identity(3, 3) * -alpha;
            let g = resolvent_sup(&f).unwrap();
            assert!((g * alpha - 1.0).abs() < 1e-6, "alpha {alpha}: {g}");
        }
    }

    #[test]
    fn lightly_damped_oscillator_matches_grid() {
        let f = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.1]);
        let eye = DMatrix::identity(2, 2);
        let g = hinf_norm(&f, &eye, &eye).unwrap();
        let oracle = grid_oracle(&f, &eye, &eye, 100_000);
        assert!((g - oracle).abs() <= 0.01 * oracle, "{g} vs {oracle}");
        assert!(g >= oracle * (1.0 - 1e-6));
    }

    #[test]
    fn random_systems_match_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = rng.gen_range(2..7);
            let f = random_hurwitz(n, &mut rng);
            let b = DMatrix::from_fn(n, 2, |_, _| rng.gen_range(-1.0..1.0));
            let c = DMatrix::from_fn(2, n, |_, _| rng.gen_range(-1.0..1.0));
            let g = hinf_norm(&f, &b, &c).unwrap();
            let oracle = grid_oracle(&f, &b, &c, 20_000);
            assert!((g - oracle).abs() <= 0.01 * oracle, "{g} vs {oracle}");
        }
    }

    #[test]
    fn unstable_input_is_rejected() {
        let one = DMatrix::from_element(1, 1, 1.0);
        assert!(matches!(
            hinf_norm(&one, &one, &one),
            Err(Error::NotHurwitz { .. })
        ));
    }
}
