//! Separable quadratic Lyapunov certificate for the linearization.
//!
//! `P = diag(P1, P2)` with
//!
//! ```text
//! P1 A11 + A11^T P1 = -I
//! P2 F + F^T P2 + P2 A21 A21^T P2 + C^T C = 0,   F = A22 + A21 P1 A12
//! C = (A12^T P1 P1 A12 + Q2)^{1/2},               Q2 = I - p2 p2^T / p2^T p2
//! ```
//!
//! where `p = (p1, p2)` is the unit kernel vector. With `H = A12^T P1 + P2 A21`,
//!
//! ```text
//! P J + J^T P = -Q,   Q = [[I, -H^T], [-H, H H^T + Q2]] >= 0,   ker Q = span{p}
//! ```
//!
//! and `V(x) = x^T (P - P p p^T P / p^T P p) x` satisfies `V' = -x^T Q x`.
//!
//! With `x = P1 A11 p1` the input `d = p1 + x` gives `G(0) d = C p2` and
//! `|d| = |C p2| = |x|`, so `||G||_inf >= 1` whenever `p1 != 0`. A strict small
//! gain is therefore out of reach for a network kernel; when the peak gain is
//! one and attained at `w = 0` the maximal (boundary) Riccati solution is used.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Assumption, Error, Result};
use crate::linalg::{
    self, hinf_norm, is_positive_definite, is_positive_semidefinite_wrt, norm2, sigma_max_at, solve_hinf_are, solve_hinf_are_boundary,
    solve_lyapunov, sqrtm_psd, symmetric_eigenvalues,
};
use crate::linearize::LinearizedSystem;
use crate::report::matrix_rows;

const MODULE: &str = "certificate";

/// Tolerance on `|sigma_max(G(0)) - 1|` for the boundary case.
pub const ZERO_FREQUENCY_GAIN_TOL: f64 = 1e-8;
/// Allowed excess of the computed peak gain over one in the boundary case
/// (bisection accuracy).
pub const PEAK_GAIN_TOL: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct Certificate {
    pub p: DMatrix<f64>,
    pub p1: DMatrix<f64>,
    pub p2: DMatrix<f64>,
    pub q_of_p: DMatrix<f64>,
    pub h_of_p: DMatrix<f64>,
    /// Unit-norm kernel vector `p`.
    pub kernel: DVector<f64>,
    /// `||P J + J^T P + Q(P)||_F`.
    pub lyapunov_residual: f64,
    /// `lyapunov_residual / (||J||_2 ||P||_2)`.
    pub relative_residual: f64,
    pub f_matrix: DMatrix<f64>,
    pub coupling_c: DMatrix<f64>,
    /// `||C (sI - F)^{-1} A21||_inf`.
    pub coupling_gain: f64,
    /// `sigma_max(G(0))`; exactly one whenever the kernel has a nonzero angle/DC part.
    pub coupling_gain_at_zero: f64,
    /// Riccati solution taken at the unit-gain boundary (see [`build_certificate`]).
    pub boundary: bool,
    pub are_residual: f64,
    pub are_closed_loop_abscissa: f64,
    pub checks: CertificateChecks,
    /// `V(x) = x^T v_form x`.
    v_form: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CertificateChecks {
    pub p_min_eigenvalue: f64,
    pub p_positive_definite: bool,
    pub q_min_eigenvalue: f64,
    pub q_max_eigenvalue: f64,
    /// Second smallest eigenvalue of `Q(P)`: positive iff the kernel is one-dimensional.
    pub q_second_eigenvalue: f64,
    pub q_kernel_residual: f64,
    pub q_semidefinite_with_kernel: bool,
    pub residual_ok: bool,
    pub are_stabilizing: bool,
    /// Closed loop `F + A21 A21^T P2` has exactly the expected zero mode.
    pub are_boundary: bool,
}

impl CertificateChecks {
    pub fn all(&self) -> bool {
        self.p_positive_definite
            && self.q_semidefinite_with_kernel
            && self.residual_ok
            && (self.are_stabilizing || self.are_boundary)
    }
}

fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (na, nb) = (a.nrows(), b.nrows());
    let mut m = DMatrix::zeros(na + nb, na + nb);
    m.view_mut((0, 0), (na, na)).copy_from(a);
    m.view_mut((na, na), (nb, nb)).copy_from(b);
    m
}

/// Unit kernel vector and its AC projector `Q2`.
fn kernel_and_q2(lin: &LinearizedSystem) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let norm = lin.kernel_vector.norm();
    if !(norm > 0.0) {
        return Err(Error::numerical(MODULE, "zero kernel vector"));
    }
    let p = &lin.kernel_vector / norm;
    let p2 = p.rows_range(lin.a11.nrows()..).into_owned();
    let s = p2.dot(&p2);
    let dim = p2.len();
    let q2 = if s > 0.0 {
        DMatrix::identity(dim, dim) - &p2 * p2.transpose() / s
    } else {
        DMatrix::identity(dim, dim)
    };
    Ok((p, q2))
}

/// `F = A22 + A21 P1 A12` for the given `P1`.
pub fn reduced_ac_matrix(lin: &LinearizedSystem, p1: &DMatrix<f64>) -> DMatrix<f64> {
    &lin.a22 + &lin.a21 * p1 * &lin.a12
}

pub fn build_certificate(lin: &LinearizedSystem) -> Result<Certificate> {
    let a11_abscissa = linalg::spectral_abscissa(&lin.a11)?;
    if a11_abscissa >= 0.0 {
        return Err(Error::violated(
            MODULE,
            Assumption::AngleDcBlockHurwitz,
            format!("max Re eig(A11) = {a11_abscissa:.6e}"),
            Some(a11_abscissa),
        ));
    }
    let s = lin.a11.nrows();
    let p1 = solve_lyapunov(&lin.a11, &DMatrix::identity(s, s))?;
    let f = reduced_ac_matrix(lin, &p1);
    let f_abscissa = linalg::spectral_abscissa(&f)?;
    if f_abscissa >= 0.0 {
        return Err(Error::violated(
            MODULE,
            Assumption::SmallGain,
            format!("F is not Hurwitz (max Re eig = {f_abscissa:.6e})"),
            Some(f_abscissa),
        ));
    }
    let (p, q2) = kernel_and_q2(lin)?;
    let n12 = &p1 * &lin.a12;
    let coupling_c = sqrtm_psd(&(n12.transpose() * &n12 + &q2))?;
    let coupling_gain = hinf_norm(&f, &lin.a21, &coupling_c)?;
    let coupling_gain_at_zero = sigma_max_at(&f, &lin.a21, &coupling_c, 0.0)?;
    let boundary = !(coupling_gain < 1.0)
        && (coupling_gain_at_zero - 1.0).abs() <= ZERO_FREQUENCY_GAIN_TOL
        && coupling_gain <= 1.0 + PEAK_GAIN_TOL;
    if !(coupling_gain < 1.0) && !boundary {
        return Err(Error::violated(
            MODULE,
            Assumption::SmallGain,
            format!(
                "||G||_inf = {coupling_gain:.6e} exceeds the unit bound (gain at w = 0 is {coupling_gain_at_zero:.6e})"
            ),
            Some(coupling_gain),
        ));
    }
    let solved = if boundary {
        solve_hinf_are_boundary(&f, &lin.a21, &coupling_c)
    } else {
        solve_hinf_are(&f, &lin.a21, &coupling_c)
    };
    let are = match solved {
        Ok(sol) => sol,
        Err(Error::ImaginaryAxisEigenvalue { real_part, margin }) => {
            return Err(Error::violated(
                MODULE,
                Assumption::SmallGain,
                format!(
                    "Hamiltonian eigenvalue on the imaginary axis (re = {real_part:.3e}, margin {margin:.1e}) although ||G||_inf = {coupling_gain:.6e}"
                ),
                Some(coupling_gain),
            ))
        }
        Err(e) => return Err(e),
    };
    let p2 = are.p2.clone();

    let pm = block_diag(&p1, &p2);
    let h = lin.a12.transpose() * &p1 + &p2 * &lin.a21;
    let dim = pm.nrows();
    let mut q = DMatrix::zeros(dim, dim);
    q.view_mut((0, 0), (s, s)).fill_with_identity();
    q.view_mut((0, s), (s, dim - s)).copy_from(&(-h.transpose()));
    q.view_mut((s, 0), (dim - s, s)).copy_from(&(-&h));
    q.view_mut((s, s), (dim - s, dim - s))
        .copy_from(&(&h * h.transpose() + &q2));
    let q = (&q + q.transpose()) * 0.5;

    let j = &lin.jacobian;
    let lyapunov_residual = (&pm * j + j.transpose() * &pm + &q).norm();
    let relative_residual = lyapunov_residual / (norm2(j) * norm2(&pm));

    let pev = symmetric_eigenvalues(&pm)?;
    let qev = symmetric_eigenvalues(&q)?;
    let q_scale = qev.last().copied().unwrap_or(0.0).abs().max(1.0);
    let q_kernel_residual = (&q * &p).norm();
    let kernel_basis = DMatrix::from_columns(&[p.clone()]);
    let checks = CertificateChecks {
        p_min_eigenvalue: pev[0],
        p_positive_definite: is_positive_definite(&pm, 0.0)?,
        q_min_eigenvalue: qev[0],
        q_max_eigenvalue: *qev.last().unwrap(),
        q_second_eigenvalue: qev.get(1).copied().unwrap_or(f64::NAN),
        q_kernel_residual,
        q_semidefinite_with_kernel: is_positive_semidefinite_wrt(&q, &kernel_basis, 1e-8 * q_scale)?,
        residual_ok: relative_residual <= 1e-6,
        are_stabilizing: are.is_stabilizing(),
        are_boundary: boundary && are.closed_loop_spectral_abscissa.abs() <= 1e-6 * norm2(&f).max(1.0),
    };

    let pp = &pm * &p;
    let v_form = &pm - &pp * pp.transpose() / p.dot(&pp);
    Ok(Certificate {
        p: pm,
        p1,
        p2,
        q_of_p: q,
        h_of_p: h,
        kernel: p,
        lyapunov_residual,
        relative_residual,
        f_matrix: f,
        coupling_c,
        coupling_gain,
        coupling_gain_at_zero,
        boundary,
        are_residual: are.residual,
        are_closed_loop_abscissa: are.closed_loop_spectral_abscissa,
        checks,
        v_form: (&v_form + v_form.transpose()) * 0.5,
    })
}

/// `P1` from its closed form, valid when every diagonal entry of the potential Hessian is positive.
pub fn closed_form_p1(lin: &LinearizedSystem) -> Result<DMatrix<f64>> {
    let n = lin.layout.n;
    let c = &lin.params;
    let mut p1 = DMatrix::zeros(2 * n, 2 * n);
    for k in 0..n {
        let h = lin.hessian_u[(k, k)];
        if !(h > 0.0) {
            return Err(Error::violated(
                MODULE,
                Assumption::AcPowerFactor,
                format!("potential Hessian entry {} is {h:.6e}; Q_x must be positive", k + 1),
                Some(h),
            ));
        }
        let boost = 1.0 + c.eta * c.c_dc / h;
        p1[(k, k)] = (c.k_p / (2.0 * h) + h / (2.0 * c.k_p) * boost) / c.eta;
        p1[(k, n + k)] = c.c_dc / (2.0 * h);
        p1[(n + k, k)] = c.c_dc / (2.0 * h);
        p1[(n + k, n + k)] = c.c_dc / (2.0 * c.k_p) * boost;
    }
    Ok(p1)
}

impl Certificate {
    pub fn lyapunov_value(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.v_form * x))
    }

    pub fn lyapunov_derivative(&self, x: &DVector<f64>) -> f64 {
        -x.dot(&(&self.q_of_p * x))
    }

    /// `V(x)` evaluated as `y^T (I - w w^T / w^T w) y` with `y = P^{1/2} x`, `w = P^{1/2} p`.
    pub fn lyapunov_value_projector(&self, x: &DVector<f64>) -> Result<f64> {
        let root = sqrtm_psd(&self.p)?;
        let y = &root * x;
        let w = &root * &self.kernel;
        let proj = y.dot(&w);
        Ok(y.dot(&y) - proj * proj / w.dot(&w))
    }

    pub fn report(&self) -> CertificateReport {
        let pev = symmetric_eigenvalues(&self.p).unwrap_or_default();
        CertificateReport {
            p_min_eigenvalue: self.checks.p_min_eigenvalue,
            p_max_eigenvalue: pev.last().copied().unwrap_or(f64::NAN),
            q_min_eigenvalue: self.checks.q_min_eigenvalue,
            q_second_eigenvalue: self.checks.q_second_eigenvalue,
            q_max_eigenvalue: self.checks.q_max_eigenvalue,
            q_kernel_residual: self.checks.q_kernel_residual,
            lyapunov_residual: self.lyapunov_residual,
            relative_residual: self.relative_residual,
            coupling_gain: self.coupling_gain,
            coupling_gain_at_zero: self.coupling_gain_at_zero,
            boundary: self.boundary,
            are_residual: self.are_residual,
            are_closed_loop_abscissa: self.are_closed_loop_abscissa,
            checks_passed: self.checks.all(),
            checks: self.checks,
            kernel: self.kernel.iter().copied().collect(),
            p1: matrix_rows(&self.p1),
            p2: matrix_rows(&self.p2),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateReport {
    pub p_min_eigenvalue: f64,
    pub p_max_eigenvalue: f64,
    pub q_min_eigenvalue: f64,
    pub q_second_eigenvalue: f64,
    pub q_max_eigenvalue: f64,
    pub q_kernel_residual: f64,
    pub lyapunov_residual: f64,
    pub relative_residual: f64,
    pub coupling_gain: f64,
    pub coupling_gain_at_zero: f64,
    pub boundary: bool,
    pub are_residual: f64,
    pub are_closed_loop_abscissa: f64,
    pub checks_passed: bool,
    pub checks: CertificateChecks,
    pub kernel: Vec<f64>,
    pub p1: Vec<Vec<f64>>,
    pub p2: Vec<Vec<f64>>,
}

/// Block-diagonal candidate `P_F = diag(L I, C I, L_line I)` for `F`.
#[derive(Debug, Clone, Serialize)]
pub struct GammaDiagnostic {
    /// Minimum eigenvalue of the filter-current block `Gamma` of `-(P_F F + F^T P_F)`.
    pub gamma_min_eigenvalue: f64,
    pub gamma_positive_definite: bool,
    /// Minimum eigenvalue of the whole `Q_F = -(P_F F + F^T P_F)`.
    pub q_f_min_eigenvalue: f64,
    /// Largest off-block-diagonal entry of `Q_F`; zero up to roundoff.
    pub q_f_off_block: f64,
}

/// Informational check of the `P_F` candidate; not required by the certificate.
pub fn gamma_diagnostic(lin: &LinearizedSystem, p1: &DMatrix<f64>) -> Result<GammaDiagnostic> {
    let layout = lin.layout;
    let f = reduced_ac_matrix(lin, p1);
    let c = &lin.params;
    let two_n = 2 * layout.n;
    let mut diag = vec![c.l_f; two_n];
    diag.extend(std::iter::repeat(c.c_f).take(two_n));
    diag.extend(std::iter::repeat(lin.line.l_line).take(f.nrows() - 2 * two_n));
    let pf = DMatrix::from_diagonal(&DVector::from_vec(diag));
    let qf = -(&pf * &f + f.transpose() * &pf);
    let qf = (&qf + qf.transpose()) * 0.5;
    let gamma = qf.view((0, 0), (two_n, two_n)).into_owned();
    let gev = symmetric_eigenvalues(&gamma)?;
    let qev = symmetric_eigenvalues(&qf)?;
    let mut off: f64 = 0.0;
    let bounds = [0, two_n, 2 * two_n, f.nrows()];
    let group = |i: usize| bounds.windows(2).position(|w| i >= w[0] && i < w[1]).unwrap();
    for i in 0..f.nrows() {
        for j in 0..f.nrows() {
            if group(i) != group(j) {
                off = off.max(qf[(i, j)].abs());
            }
        }
    }
    Ok(GammaDiagnostic {
        gamma_min_eigenvalue: gev[0],
        gamma_positive_definite: gev[0] > 0.0,
        q_f_min_eigenvalue: qev[0],
        q_f_off_block: off,
    })
}
