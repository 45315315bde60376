//! Linearization at a synchronous steady state.
//!
//! With `K = diag(I, C_dc I, L I, C I, L_line I)` the Jacobian is `K^{-1}` times
//!
//! ```text
//! [ 0       eta I   0      0      0      ]
//! [ -H      -K_p I  -Lam^T 0      0      ]
//! [ Xi      Lam     -Z_R   -I     0      ]
//! [ 0       0       I      -Z_C   -B     ]
//! [ 0       0       0      B^T    -Z_line]
//! ```
//!
//! where `H = mu/2 diag((J r_k)^T i_k*)` is the Hessian of the angle potential,
//! `Lam = mu/2 Rot(gamma*)` and `Xi = mu/2 v_dc* J Rot(gamma*)`. The steady state
//! orbit makes `v = [1; 0; J x*]` a kernel vector.

use nalgebra::{Complex, DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, norm2};
use crate::network::{j_blocks, rot_matrix, ConverterParams, LineParams, NetworkSpec, StateLayout};
use crate::steady_state::SteadyState;

const MODULE: &str = "linearize";

#[derive(Debug, Clone)]
pub struct LinearizedSystem {
    pub jacobian: DMatrix<f64>,
    /// Angle/DC-voltage block, `2n x 2n`.
    pub a11: DMatrix<f64>,
    pub a12: DMatrix<f64>,
    pub a21: DMatrix<f64>,
    /// AC block, `(4n + 2m) x (4n + 2m)`.
    pub a22: DMatrix<f64>,
    pub kernel_vector: DVector<f64>,
    pub hessian_u: DMatrix<f64>,
    pub xi_mat: DMatrix<f64>,
    pub lambda_mat: DMatrix<f64>,
    pub layout: StateLayout,
    pub params: ConverterParams,
    pub line: LineParams,
}

impl LinearizedSystem {
    /// Part of the kernel vector on the AC slots.
    pub fn kernel_ac(&self) -> DVector<f64> {
        self.kernel_vector
            .rows_range(self.layout.ac())
            .into_owned()
    }
}

/// Diagonal Hessian of the angle potential, `mu/2 diag((J r(gamma_k))^T i_k*)`.
///
/// Also evaluated as `mu^2 v_dc*/4 diag(Rot^T J^T Y Rot 1)`; the two forms must agree.
pub fn hessian_u(ss: &SteadyState, spec: &NetworkSpec) -> Result<DMatrix<f64>> {
    let c = spec.converter();
    let n = ss.n();
    let rot = rot_matrix(&ss.gamma_star);
    let j = j_blocks(n);
    let i_star = DVector::from_vec(ss.z_star.i_f.clone());
    let direct = (&j * &rot).transpose() * &i_star * (0.5 * c.mu);
    let ones = DVector::from_element(n, 1.0);
    let via_y = rot.transpose() * j.transpose() * &ss.admittance_y * (&rot * ones)
        * (0.25 * c.mu * c.mu * c.v_dc_star);
    let scale = direct.amax().max(via_y.amax()).max(f64::MIN_POSITIVE);
    let gap = (&direct - &via_y).amax();
    if gap > 1e-9 * scale {
        return Err(Error::numerical(
            MODULE,
            format!("Hessian forms disagree (relative gap {:.3e})", gap / scale),
        ));
    }
    Ok(DMatrix::from_diagonal(&direct))
}

pub fn jacobian(ss: &SteadyState, spec: &NetworkSpec) -> Result<LinearizedSystem> {
    let c = *spec.converter();
    let line = spec.line();
    let layout = spec.layout();
    if ss.z_star.layout() != layout {
        return Err(Error::DimensionMismatch {
            context: "jacobian steady state",
            expected: layout.dim(),
            got: ss.z_star.layout().dim(),
        });
    }
    let n = layout.n;
    let dim = layout.dim();
    let z = spec.impedances();
    let b = spec.incidence_expanded();
    let hess = hessian_u(ss, spec)?;
    let rot = rot_matrix(&ss.gamma_star);
    let lambda_mat = &rot * (0.5 * c.mu);
    let xi_mat = j_blocks(n) * &rot * (0.5 * c.mu * c.v_dc_star);

    let (g, v, i, vc, il) = (
        layout.gamma(),
        layout.v_dc(),
        layout.i_f(),
        layout.v_c(),
        layout.i_line(),
    );
    let mut jm = DMatrix::zeros(dim, dim);
    let mut put = |rows: &std::ops::Range<usize>, cols: &std::ops::Range<usize>, blk: &DMatrix<f64>, s: f64| {
        jm.view_mut((rows.start, cols.start), (rows.len(), cols.len()))
            .copy_from(&(blk * s));
    };
    let eye_n = DMatrix::identity(n, n);
    let eye_2n = DMatrix::identity(2 * n, 2 * n);

    put(&g, &v, &eye_n, c.eta);

    put(&v, &g, &hess, -1.0 / c.c_dc);
    put(&v, &v, &eye_n, -c.k_p / c.c_dc);
    put(&v, &i, &lambda_mat.transpose(), -1.0 / c.c_dc);

    put(&i, &g, &xi_mat, 1.0 / c.l_f);
    put(&i, &v, &lambda_mat, 1.0 / c.l_f);
    put(&i, &i, &z.z_r, -1.0 / c.l_f);
    put(&i, &vc, &eye_2n, -1.0 / c.l_f);

    put(&vc, &i, &eye_2n, 1.0 / c.c_f);
    put(&vc, &vc, &z.z_c, -1.0 / c.c_f);
    if layout.m > 0 {
        put(&vc, &il, &b, -1.0 / c.c_f);
        put(&il, &vc, &b.transpose(), 1.0 / line.l_line);
        put(&il, &il, &z.z_ell, -1.0 / line.l_line);
    }

    let slow = layout.slow();
    let ac = layout.ac();
    let block = |r: &std::ops::Range<usize>, cl: &std::ops::Range<usize>| {
        jm.view((r.start, cl.start), (r.len(), cl.len())).into_owned()
    };
    let (a11, a12, a21, a22) = (
        block(&slow, &slow),
        block(&slow, &ac),
        block(&ac, &slow),
        block(&ac, &ac),
    );

    let mut kernel_vector = DVector::zeros(dim);
    kernel_vector.rows_range_mut(g.clone()).fill(1.0);
    let jx = j_blocks(ac.len() / 2) * ss.x_star();
    kernel_vector.rows_range_mut(ac.clone()).copy_from(&jx);

    Ok(LinearizedSystem {
        jacobian: jm,
        a11,
        a12,
        a21,
        a22,
        kernel_vector,
        hessian_u: hess,
        xi_mat,
        lambda_mat,
        layout,
        params: c,
        line: *line,
    })
}

/// Eigenvalue classification against a zero tolerance.
#[derive(Debug, Clone, Serialize)]
pub struct EigenSplit {
    pub zero_modes: usize,
    /// Unit vectors spanning the numerical null space (right singular vectors).
    #[serde(skip)]
    pub zero_vectors: Vec<DVector<f64>>,
    pub stable_count: usize,
    pub unstable_count: usize,
    /// `-max Re(lambda)` over the modes that are not zero modes.
    pub spectral_gap: f64,
    pub tol_zero: f64,
    #[serde(skip)]
    pub eigenvalues: Vec<Complex<f64>>,
}

impl EigenSplit {
    /// One zero eigenvalue, all others strictly stable.
    pub fn single_zero_and_stable(&self) -> bool {
        self.zero_modes == 1 && self.unstable_count == 0
    }
}

/// Classify the spectrum of `j`. The default tolerance is `1e-7 ||j||_2`.
pub fn eigen_split_matrix(j: &DMatrix<f64>, tol_zero: Option<f64>) -> Result<EigenSplit> {
    linalg::require_square(j, "eigen_split")?;
    let tol = tol_zero.unwrap_or_else(|| 1e-7 * norm2(j));
    let mut eigenvalues = linalg::eigenvalues(j)?;
    eigenvalues.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    let mut zero_modes = 0;
    let mut stable_count = 0;
    let mut unstable_count = 0;
    let mut gap = f64::INFINITY;
    for l in &eigenvalues {
        if l.norm() <= tol {
            zero_modes += 1;
            continue;
        }
        gap = gap.min(-l.re);
        if l.re < -tol {
            stable_count += 1;
        } else {
            unstable_count += 1;
        }
    }
    let zero_vectors = if zero_modes > 0 {
        let svd = j.clone().svd(false, true);
        let v_t = svd
            .v_t
            .ok_or_else(|| Error::numerical(MODULE, "SVD did not return singular vectors"))?;
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
        order
            .iter()
            .take(zero_modes)
            .map(|&k| v_t.row(k).transpose().into_owned())
            .collect()
    } else {
        Vec::new()
    };
    Ok(EigenSplit {
        zero_modes,
        zero_vectors,
        stable_count,
        unstable_count,
        spectral_gap: gap,
        tol_zero: tol,
        eigenvalues,
    })
}

pub fn eigen_split(lin: &LinearizedSystem, tol_zero: Option<f64>) -> Result<EigenSplit> {
    eigen_split_matrix(&lin.jacobian, tol_zero)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkModel;
    use crate::steady_state::{orbit_point, recover_steady_state, solve_gamma_from_input};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn fd_jacobian(spec: &NetworkSpec, ss: &SteadyState) -> DMatrix<f64> {
        let model = NetworkModel::new(spec);
        let z = ss.z_star.pack();
        let dim = z.len();
        let mut out = DMatrix::zeros(dim, dim);
        let mut fp = vec![0.0; dim];
        let mut fm = vec![0.0; dim];
        for j in 0..dim {
            let h = 1e-6 * (1.0 + z[j].abs());
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[j] += h;
            zm[j] -= h;
            model.eval_packed(zp.as_slice(), &ss.u_star, &mut fp).unwrap();
            model.eval_packed(zm.as_slice(), &ss.u_star, &mut fm).unwrap();
            for i in 0..dim {
                out[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        out
    }

    /// Entrywise relative error, with entries below 1e-6 of their row maximum
    /// compared against that floor instead.
    fn max_relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..a.nrows() {
            let row_max = a.row(i).amax();
            for j in 0..a.ncols() {
                let denom = a[(i, j)].abs().max(1e-6 * row_max).max(f64::MIN_POSITIVE);
                worst = worst.max((a[(i, j)] - b[(i, j)]).abs() / denom);
            }
        }
        worst
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        let spec = NetworkSpec::table1_ring();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..10 {
            let g: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let ss = recover_steady_state(&g, &spec).unwrap();
            let lin = jacobian(&ss, &spec).unwrap();
            let fd = fd_jacobian(&spec, &ss);
            let err = max_relative_error(&lin.jacobian, &fd);
            assert!(err <= 1e-5, "relative error {err:.3e}");
        }
    }

    #[test]
    fn kernel_vector_is_annihilated_and_tangent_to_orbit() {
        let spec = NetworkSpec::table1_ring();
        let sol = solve_gamma_from_input(&spec.nominal_input(), &spec).unwrap();
        let ss = recover_steady_state(&sol.gamma, &spec).unwrap();
        let lin = jacobian(&ss, &spec).unwrap();
        let v = &lin.kernel_vector;
        let res = (&lin.jacobian * v).norm();
        assert!(res <= 1e-8 * norm2(&lin.jacobian) * v.norm(), "{res:.3e}");

        let h = 1e-6;
        let tangent = (orbit_point(&ss, h).pack() - orbit_point(&ss, -h).pack()) / (2.0 * h);
        assert!((&tangent - v).norm() <= 1e-6 * v.norm());
    }

    #[test]
    fn blocks_reassemble_and_a11_has_the_expected_form() {
        let spec = NetworkSpec::table1_ring();
        let ss = recover_steady_state(&[0.0, 0.3, -0.2], &spec).unwrap();
        let lin = jacobian(&ss, &spec).unwrap();
        let n = 3;
        let s = 2 * n;
        let dim = lin.jacobian.nrows();
        let mut re = DMatrix::zeros(dim, dim);
        re.view_mut((0, 0), (s, s)).copy_from(&lin.a11);
        re.view_mut((0, s), (s, dim - s)).copy_from(&lin.a12);
        re.view_mut((s, 0), (dim - s, s)).copy_from(&lin.a21);
        re.view_mut((s, s), (dim - s, dim - s)).copy_from(&lin.a22);
        assert_eq!(re, lin.jacobian);

        let c = spec.converter();
        let mut a11 = DMatrix::zeros(s, s);
        for k in 0..n {
            a11[(k, n + k)] = c.eta;
            a11[(n + k, k)] = -lin.hessian_u[(k, k)] / c.c_dc;
            a11[(n + k, n + k)] = -c.k_p / c.c_dc;
        }
        assert_eq!(a11, lin.a11);
    }

    #[test]
    fn hessian_forms_agree() {
        let spec = NetworkSpec::table1_ring();
        let ss = recover_steady_state(&[0.1, 0.2, -0.05], &spec).unwrap();
        let h = hessian_u(&ss, &spec).unwrap();
        let c = spec.converter();
        let rot = rot_matrix(&ss.gamma_star);
        let alt = rot.transpose()
            * j_blocks(3).transpose()
            * &ss.admittance_y
            * (&rot * DVector::from_element(3, 1.0))
            * (0.25 * c.mu * c.mu * c.v_dc_star);
        for k in 0..3 {
            assert!((h[(k, k)] - alt[k]).abs() <= 1e-12 * alt.amax());
        }
    }

    #[test]
    fn single_converter_hessian_by_hand() {
        let spec = NetworkSpec::new(1, vec![], ConverterParams::table1(), LineParams::table1()).unwrap();
        let ss = recover_steady_state(&[0.0], &spec).unwrap();
        let h = hessian_u(&ss, &spec).unwrap();
        // J r(0) = [-1, 0], so H = -mu/2 i_d*
        let expect = -0.5 * spec.converter().mu * ss.z_star.i_f[0];
        assert!((h[(0, 0)] - expect).abs() <= 1e-14 * expect.abs());
    }

    #[test]
    fn diagonal_spectrum_classification() {
        let j = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, -1.0, -2.0]));
        let split = eigen_split_matrix(&j, None).unwrap();
        assert_eq!((split.zero_modes, split.stable_count, split.unstable_count), (1, 2, 0));
        assert!(split.single_zero_and_stable());
        assert!((split.spectral_gap - 1.0).abs() < 1e-14);
        assert!((split.zero_vectors[0][0].abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn decoupled_converter_with_strong_damping_has_stable_ac_modes() {
        let mut p = ConverterParams::table1();
        p.k_p = 10.0;
        let spec = NetworkSpec::new(1, vec![], p, LineParams::table1()).unwrap();
        let ss = recover_steady_state(&[0.0], &spec).unwrap();
        let lin = jacobian(&ss, &spec).unwrap();
        let ac = linalg::eigenvalues(&lin.a22).unwrap();
        assert!(ac.iter().all(|l| l.re < 0.0));
        let split = eigen_split(&lin, None).unwrap();
        assert_eq!(split.zero_modes + split.stable_count + split.unstable_count, 6);
        assert!(split.zero_modes >= 1);
    }

    #[test]
    fn counts_partition_the_spectrum() {
        let spec = NetworkSpec::table1_ring();
        let ss = recover_steady_state(&[0.0, 0.3, -0.2], &spec).unwrap();
        let split = eigen_split(&jacobian(&ss, &spec).unwrap(), None).unwrap();
        assert_eq!(
            split.zero_modes + split.stable_count + split.unstable_count,
            ss.z_star.layout().dim()
        );
    }
}
