//! Synchronous steady states and their rotational orbit.
//!
//! For steady-state angles `gamma*` the equilibrium is explicit:
//!
//! ```text
//! Y   = (Z_R + (Z_C + B Z_line^{-1} B^T)^{-1})^{-1}
//! u   = xi Rot^T Y Rot 1,           xi = mu^2 v_dc* / 4
//! i*  = mu/2 v_dc* Y Rot 1
//! v*  = (Z_C + B Z_line^{-1} B^T)^{-1} i*
//! il* = Z_line^{-1} B^T v*
//! ```
//!
//! Shifting all angles by `theta` and rotating the AC part by `R(theta)` gives
//! another equilibrium for the same input.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::{rot_matrix, wrap_angle, NetworkSpec, SystemState};

const MODULE: &str = "steady_state";

#[derive(Debug, Clone)]
pub struct SteadyState {
    pub gamma_star: Vec<f64>,
    /// Equilibrium with `v_dc = v_dc* 1`.
    pub z_star: SystemState,
    pub u_star: Vec<f64>,
    pub xi: f64,
    pub admittance_y: DMatrix<f64>,
}

impl SteadyState {
    pub fn n(&self) -> usize {
        self.gamma_star.len()
    }

    /// Stacked AC part `x* = (i*, v*, il*)`.
    pub fn x_star(&self) -> DVector<f64> {
        let z = &self.z_star;
        DVector::from_iterator(
            z.i_f.len() + z.v_c.len() + z.i_line.len(),
            z.i_f.iter().chain(&z.v_c).chain(&z.i_line).copied(),
        )
    }

    /// Electrical power drawn from each DC source, `v_dc* u`.
    pub fn electrical_power(&self) -> Vec<f64> {
        let v = self.z_star.v_dc.first().copied().unwrap_or(0.0);
        self.u_star.iter().map(|u| v * u).collect()
    }
}

fn singular(detail: &str) -> Error {
    Error::Singular {
        module: MODULE,
        detail: detail.into(),
    }
}

/// `Z_C + B Z_line^{-1} B^T`, the load-side impedance seen by the filters.
fn shunt_impedance(spec: &NetworkSpec) -> Result<DMatrix<f64>> {
    let z = spec.impedances();
    if spec.m() == 0 {
        return Ok(z.z_c);
    }
    let b = spec.incidence_expanded();
    let zl_inv_bt = z
        .z_ell
        .clone()
        .lu()
        .solve(&b.transpose())
        .ok_or_else(|| singular("line impedance Z_line"))?;
    Ok(z.z_c + b * zl_inv_bt)
}

/// Network admittance `Y` seen from the converter bridges.
pub fn admittance(spec: &NetworkSpec) -> Result<DMatrix<f64>> {
    let inner = shunt_impedance(spec)?;
    let inner_inv = inner
        .try_inverse()
        .ok_or_else(|| singular("Z_C + B Z_line^-1 B^T"))?;
    (spec.impedances().z_r + inner_inv)
        .try_inverse()
        .ok_or_else(|| singular("Z_R + (Z_C + B Z_line^-1 B^T)^-1"))
}

fn check_angles(gamma: &[f64], spec: &NetworkSpec) -> Result<()> {
    if gamma.len() != spec.n() {
        return Err(Error::DimensionMismatch {
            context: "steady-state angles",
            expected: spec.n(),
            got: gamma.len(),
        });
    }
    Ok(())
}

fn input_with(gamma: &[f64], y: &DMatrix<f64>, xi: f64) -> Vec<f64> {
    let rot = rot_matrix(gamma);
    let ones = DVector::from_element(gamma.len(), 1.0);
    let u = rot.transpose() * y * (&rot * ones) * xi;
    u.iter().copied().collect()
}

/// DC input that makes `gamma*` a steady state.
pub fn feasible_input(gamma: &[f64], spec: &NetworkSpec) -> Result<Vec<f64>> {
    check_angles(gamma, spec)?;
    let y = admittance(spec)?;
    Ok(input_with(gamma, &y, spec.converter().xi()))
}

/// Electrical power `v_dc* u` for a given input.
pub fn electrical_power(u: &[f64], spec: &NetworkSpec) -> Vec<f64> {
    u.iter().map(|x| spec.converter().v_dc_star * x).collect()
}

pub fn recover_steady_state(gamma: &[f64], spec: &NetworkSpec) -> Result<SteadyState> {
    check_angles(gamma, spec)?;
    let c = spec.converter();
    let n = spec.n();
    let y = admittance(spec)?;
    let rot = rot_matrix(gamma);
    let ones = DVector::from_element(n, 1.0);
    let i_star = &y * (&rot * ones) * (0.5 * c.mu * c.v_dc_star);
    let v_star = shunt_impedance(spec)?
        .lu()
        .solve(&i_star)
        .ok_or_else(|| singular("Z_C + B Z_line^-1 B^T"))?;
    let il_star = if spec.m() == 0 {
        DVector::zeros(0)
    } else {
        spec.impedances()
            .z_ell
            .lu()
            .solve(&(spec.incidence_expanded().transpose() * &v_star))
            .ok_or_else(|| singular("line impedance Z_line"))?
    };
    let z_star = SystemState {
        gamma: gamma.to_vec(),
        v_dc: vec![c.v_dc_star; n],
        i_f: i_star.iter().copied().collect(),
        v_c: v_star.iter().copied().collect(),
        i_line: il_star.iter().copied().collect(),
    };
    Ok(SteadyState {
        gamma_star: gamma.to_vec(),
        z_star,
        u_star: input_with(gamma, &y, c.xi()),
        xi: c.xi(),
        admittance_y: y,
    })
}

/// The orbit point `(gamma* + theta 1, v_dc* 1, R(theta) x*)`.
pub fn orbit_point(ss: &SteadyState, theta: f64) -> SystemState {
    ss.z_star.apply_symmetry(theta)
}

fn orbit_gap_sq(z: &SystemState, ss: &SteadyState, theta: f64, w: Option<&[f64]>) -> f64 {
    let target = orbit_point(ss, theta);
    let n = ss.n();
    let weight = |i: usize| w.map_or(1.0, |w| w[i]);
    let mut acc = 0.0;
    for k in 0..n {
        let d = wrap_angle(z.gamma[k] - target.gamma[k]);
        acc += weight(k) * d * d;
    }
    let rest = z.v_dc.iter().chain(&z.i_f).chain(&z.v_c).chain(&z.i_line);
    let rest_t = target
        .v_dc
        .iter()
        .chain(&target.i_f)
        .chain(&target.v_c)
        .chain(&target.i_line);
    for (i, (a, b)) in rest.zip(rest_t).enumerate() {
        let d = a - b;
        acc += weight(n + i) * d * d;
    }
    acc
}

fn minimize_over_orbit(z: &SystemState, ss: &SteadyState, w: Option<&[f64]>) -> (f64, f64) {
    const GRID: usize = 64;
    let step = 2.0 * PI / GRID as f64;
    let f = |t: f64| orbit_gap_sq(z, ss, t, w);
    let (mut best_t, mut best_f) = (0.0, f(0.0));
    for k in 1..GRID {
        let t = k as f64 * step;
        let v = f(t);
        if v < best_f {
            best_t = t;
            best_f = v;
        }
    }
    // Golden-section refinement inside the neighbouring grid cells.
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (best_t - step, best_t + step);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-10 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let t = 0.5 * (a + b);
    let ft = f(t);
    let (t, v) = if ft <= best_f { (t, ft) } else { (best_t, best_f) };
    (v.max(0.0).sqrt(), t.rem_euclid(2.0 * PI))
}

/// Euclidean distance from `z` to the orbit, with angle differences wrapped.
///
/// Returns `(distance, theta_min)` with `theta_min` in `[0, 2 pi)`.
pub fn distance_to_orbit(z: &SystemState, ss: &SteadyState) -> (f64, f64) {
    minimize_over_orbit(z, ss, None)
}

/// As [`distance_to_orbit`] with a positive diagonal weight per packed slot.
pub fn distance_to_orbit_weighted(
    z: &SystemState,
    ss: &SteadyState,
    weights: &[f64],
) -> Result<(f64, f64)> {
    let dim = ss.z_star.layout().dim();
    if weights.len() != dim {
        return Err(Error::DimensionMismatch {
            context: "orbit distance weights",
            expected: dim,
            got: weights.len(),
        });
    }
    if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
        return Err(Error::InvalidSpec(
            "orbit distance weights must be positive and finite".into(),
        ));
    }
    Ok(minimize_over_orbit(z, ss, Some(weights)))
}

/// Result of inverting the input map with node 1 as slack.
#[derive(Debug, Clone, Serialize)]
pub struct AngleSolution {
    /// Angles with `gamma_1 = 0`.
    pub gamma: Vec<f64>,
    /// Input that makes `gamma` an equilibrium; equals the target on nodes `2..n`.
    pub input: Vec<f64>,
    /// `max_k |input_k - target_k|` over the non-slack nodes.
    pub residual: f64,
    /// `input_1 - target_1`; nonzero when the target is not in the range of the input map.
    pub slack_mismatch: f64,
    pub iterations: usize,
}

/// Find angles whose feasible input matches `target` on every node but the first.
///
/// The input map is invariant under a common angle shift, so `gamma_1` is
/// pinned to zero. Its range has one dimension less than `n`, so in general
/// only `n - 1` entries can be prescribed and node 1 absorbs the mismatch.
/// Newton iteration from `gamma = 0` with a central-difference Jacobian and
/// backtracking; tolerance 1e-10 on the residual, at most 50 iterations.
pub fn solve_gamma_from_input(target: &[f64], spec: &NetworkSpec) -> Result<AngleSolution> {
    solve_gamma_from_input_with_guess(target, spec, &vec![0.0; spec.n()])
}

/// As [`solve_gamma_from_input`] starting from `guess` (its first entry is ignored).
///
/// The input map is not injective, so different starting points can reach
/// different steady states.
pub fn solve_gamma_from_input_with_guess(
    target: &[f64],
    spec: &NetworkSpec,
    guess: &[f64],
) -> Result<AngleSolution> {
    let n = spec.n();
    check_angles(guess, spec)?;
    if target.len() != n {
        return Err(Error::DimensionMismatch {
            context: "target input",
            expected: n,
            got: target.len(),
        });
    }
    let y = admittance(spec)?;
    let xi = spec.converter().xi();
    let input_of = |free: &[f64]| -> Vec<f64> {
        let mut g = Vec::with_capacity(n);
        g.push(0.0);
        g.extend_from_slice(free);
        input_with(&g, &y, xi)
    };
    let residual_of = |free: &[f64]| -> DVector<f64> {
        let u = input_of(free);
        DVector::from_iterator(n - 1, (1..n).map(|k| u[k] - target[k]))
    };

    let mut x: Vec<f64> = guess[1..].iter().map(|g| g - guess[0]).collect();
    let mut r = residual_of(&x);
    let tol = 1e-10;
    let mut iterations = 0;
    while r.amax() > tol {
        if iterations == 50 {
            return Err(Error::numerical(
                MODULE,
                format!("angle Newton iteration stalled at residual {:.3e}", r.amax()),
            ));
        }
        iterations += 1;
        let h = 1e-6;
        let mut jac = DMatrix::zeros(n - 1, n - 1);
        for j in 0..n - 1 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let col = (residual_of(&xp) - residual_of(&xm)) / (2.0 * h);
            jac.set_column(j, &col);
        }
        let dx = jac
            .lu()
            .solve(&(-&r))
            .ok_or_else(|| singular("angle Newton Jacobian (target outside the reachable set?)"))?;
        let mut step = 1.0;
        loop {
            let trial: Vec<f64> = x.iter().zip(dx.iter()).map(|(a, d)| a + step * d).collect();
            let rt = residual_of(&trial);
            if rt.norm() < r.norm() || step < 1e-8 {
                x = trial;
                r = rt;
                break;
            }
            step *= 0.5;
        }
    }
    let mut gamma = vec![0.0];
    gamma.extend(x.iter().map(|&g| wrap_angle(g)));
    let input = input_with(&gamma, &y, xi);
    let residual = (1..n)
        .map(|k| (input[k] - target[k]).abs())
        .fold(0.0, f64::max);
    Ok(AngleSolution {
        slack_mismatch: input[0] - target[0],
        gamma,
        input,
        residual,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{block_rotation, ConverterParams, LineParams, NetworkModel};
    use nalgebra::Complex;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn residual_norm(spec: &NetworkSpec, z: &SystemState, u: &[f64]) -> f64 {
        NetworkModel::new(spec).vector_field(z, u).unwrap().norm()
    }

    fn single() -> NetworkSpec {
        NetworkSpec::new(1, vec![], ConverterParams::table1(), LineParams::table1()).unwrap()
    }

    /// Y for one isolated converter via complex scalar arithmetic.
    fn single_admittance_complex(c: &ConverterParams) -> Complex<f64> {
        let w = c.omega_star;
        let zr = Complex::new(c.r_f, c.l_f * w);
        let zc = Complex::new(c.g_load, c.c_f * w);
        Complex::new(1.0, 0.0) / (zr + Complex::new(1.0, 0.0) / zc)
    }

    #[test]
    fn single_converter_admittance_matches_complex_arithmetic() {
        let spec = single();
        let y = admittance(&spec).unwrap();
        let yc = single_admittance_complex(spec.converter());
        let expect = DMatrix::from_row_slice(2, 2, &[yc.re, -yc.im, yc.im, yc.re]);
        assert!((y - expect).norm() < 1e-14);
    }

    #[test]
    fn single_converter_input_by_hand() {
        let spec = single();
        let c = spec.converter();
        let u = feasible_input(&[0.0], &spec).unwrap();
        // r(0) = [0, 1], so u = xi * Y_qq = xi * Re(y)
        let yc = single_admittance_complex(c);
        assert!((u[0] - c.xi() * yc.re).abs() < 1e-12 * u[0].abs());
    }

    #[test]
    fn ring_admittance_commutes_with_rotation() {
        let spec = NetworkSpec::table1_ring();
        let y = admittance(&spec).unwrap();
        for theta in [0.3, 1.7, -2.9] {
            let r = block_rotation(3, theta);
            assert!((&y * &r - &r * &y).norm() <= 1e-12 * y.norm());
        }
    }

    #[test]
    fn decoupled_nodes_give_identical_blocks() {
        let spec =
            NetworkSpec::new(4, vec![], ConverterParams::table1(), LineParams::table1()).unwrap();
        let y = admittance(&spec).unwrap();
        let block = y.view((0, 0), (2, 2)).into_owned();
        for i in 0..4 {
            for j in 0..4 {
                let b = y.view((2 * i, 2 * j), (2, 2));
                if i == j {
                    assert!((b - &block).norm() == 0.0);
                } else {
                    assert!(b.norm() == 0.0);
                }
            }
        }
    }

    #[test]
    fn equal_angles_on_ring_give_equal_inputs() {
        let spec = NetworkSpec::table1_ring();
        let u = feasible_input(&[0.4, 0.4, 0.4], &spec).unwrap();
        assert!((u[0] - u[1]).abs() < 1e-12 * u[0].abs());
        assert!((u[1] - u[2]).abs() < 1e-12 * u[0].abs());
    }

    #[test]
    fn recovered_state_is_an_equilibrium() {
        let spec = NetworkSpec::table1_ring();
        let ss = recover_steady_state(&[0.1, 0.2, -0.05], &spec).unwrap();
        let scale = 1.0 + ss.z_star.norm();
        assert!(residual_norm(&spec, &ss.z_star, &ss.u_star) <= 1e-9 * scale);
        for k in 0..32 {
            let theta = 2.0 * PI * k as f64 / 32.0;
            let z = orbit_point(&ss, theta);
            assert!(residual_norm(&spec, &z, &ss.u_star) <= 1e-9 * scale);
        }
    }

    #[test]
    fn without_lines_capacitor_voltage_is_zc_inverse_current() {
        let spec =
            NetworkSpec::new(2, vec![], ConverterParams::table1(), LineParams::table1()).unwrap();
        let ss = recover_steady_state(&[0.3, -0.2], &spec).unwrap();
        assert!(ss.z_star.i_line.is_empty());
        let i = DVector::from_vec(ss.z_star.i_f.clone());
        let v = spec.impedances().z_c.try_inverse().unwrap() * i;
        for (a, b) in v.iter().zip(&ss.z_star.v_c) {
            assert!((a - b).abs() <= 1e-12 * v.norm());
        }
    }

    #[test]
    fn shifted_angles_give_rotated_equilibrium() {
        let spec = NetworkSpec::table1_ring();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let base = recover_steady_state(&g, &spec).unwrap();
        for _ in 0..10 {
            let theta = rng.gen_range(-PI..PI);
            let shifted: Vec<f64> = g.iter().map(|x| x + theta).collect();
            let a = recover_steady_state(&shifted, &spec).unwrap().z_star.pack();
            let b = base.z_star.apply_symmetry(theta).pack();
            assert!((a - &b).norm() <= 1e-12 * (1.0 + b.norm()));
        }
    }

    #[test]
    fn orbit_periodicity() {
        let spec = NetworkSpec::table1_ring();
        let ss = recover_steady_state(&[0.0, 0.5, 0.3], &spec).unwrap();
        assert_eq!(orbit_point(&ss, 0.0), ss.z_star);
        let a = orbit_point(&ss, 0.8);
        let b = orbit_point(&ss, 0.8 + 2.0 * PI);
        for (x, y) in a.i_f.iter().zip(&b.i_f) {
            assert!((x - y).abs() < 1e-9);
        }
        for (x, y) in a.gamma.iter().zip(&b.gamma) {
            assert!((y - x - 2.0 * PI).abs() < 1e-12);
        }
    }

    #[test]
    fn distance_on_and_near_the_orbit() {
        let spec = NetworkSpec::table1_ring();
        let ss = recover_steady_state(&[0.0, 0.5, 0.3], &spec).unwrap();
        let (d, t) = distance_to_orbit(&orbit_point(&ss, 1.3), &ss);
        assert!(d <= 1e-8, "{d}");
        assert!((t - 1.3).abs() < 1e-6);

        let delta = 0.05;
        let mut z = ss.z_star.clone();
        z.gamma[0] += delta;
        let (d, _) = distance_to_orbit(&z, &ss);
        assert!(d <= delta + 1e-12);
        assert!(d > 0.0);
    }

    #[test]
    fn distance_is_positive_off_the_tangent() {
        let spec = NetworkSpec::table1_ring();
        let ss = recover_steady_state(&[0.0, 0.5, 0.3], &spec).unwrap();
        let z0 = ss.z_star.pack();
        let dim = z0.len();
        let mut tangent = DVector::zeros(dim);
        let eps_t = 1e-7;
        tangent.copy_from(&((orbit_point(&ss, eps_t).pack() - orbit_point(&ss, -eps_t).pack()) / (2.0 * eps_t)));
        tangent /= tangent.norm();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let mut e = DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0));
            e -= &tangent * tangent.dot(&e);
            e /= e.norm();
            let z = SystemState::unpack(ss.z_star.layout(), (&z0 + e * 1e-3).as_slice()).unwrap();
            let (d, _) = distance_to_orbit(&z, &ss);
            assert!(d > 5e-4, "{d}");
        }
    }

    #[test]
    fn golden_section_matches_dense_grid() {
        let spec = NetworkSpec::table1_ring();
        let ss = recover_steady_state(&[0.0, 0.5, 0.3], &spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let mut z = orbit_point(&ss, rng.gen_range(0.0..2.0 * PI));
            for g in &mut z.gamma {
                *g += rng.gen_range(-0.5..0.5);
            }
            for x in z.i_f.iter_mut().chain(z.v_c.iter_mut()) {
                *x += rng.gen_range(-5.0..5.0);
            }
            let (d, _) = distance_to_orbit(&z, &ss);
            let grid = (0..100_000)
                .map(|k| orbit_gap_sq(&z, &ss, 2.0 * PI * k as f64 / 100_000.0, None))
                .fold(f64::INFINITY, f64::min)
                .sqrt();
            assert!(d <= grid + 1e-9);
            assert!((d - grid).abs() <= 1e-6 * (1.0 + grid), "{d} vs {grid}");
        }
    }

    #[test]
    fn weighted_distance_reduces_to_unweighted() {
        let spec = NetworkSpec::table1_ring();
        let ss = recover_steady_state(&[0.0, 0.5, 0.3], &spec).unwrap();
        let mut z = ss.z_star.clone();
        z.gamma[1] += 0.2;
        z.v_dc[0] += 3.0;
        let w = vec![1.0; ss.z_star.layout().dim()];
        let (a, _) = distance_to_orbit(&z, &ss);
        let (b, _) = distance_to_orbit_weighted(&z, &ss, &w).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(distance_to_orbit_weighted(&z, &ss, &w[1..]).is_err());
    }

    #[test]
    fn angle_newton_recovers_reachable_inputs() {
        let spec = NetworkSpec::table1_ring();
        let g0 = [0.05, 0.12, -0.08];
        let target = feasible_input(&g0, &spec).unwrap();
        let sol = solve_gamma_from_input(&target, &spec).unwrap();
        assert!(sol.residual <= 1e-10);
        assert!(sol.slack_mismatch.abs() <= 1e-8, "{}", sol.slack_mismatch);
        for k in 0..3 {
            assert!(wrap_angle(sol.gamma[k] - (g0[k] - g0[0])).abs() < 1e-8);
        }

        // Far from zero the iteration may land on another branch; a nearby guess recovers g0.
        let g1 = [0.2, 0.7, -0.4];
        let target = feasible_input(&g1, &spec).unwrap();
        let sol = solve_gamma_from_input_with_guess(&target, &spec, &[0.0, 0.45, -0.55]).unwrap();
        assert!(sol.slack_mismatch.abs() <= 1e-8, "{}", sol.slack_mismatch);
        for k in 0..3 {
            assert!(wrap_angle(sol.gamma[k] - (g1[k] - g1[0])).abs() < 1e-8);
        }
    }

    #[test]
    fn angle_newton_with_default_input_uses_the_slack() {
        let spec = NetworkSpec::table1_ring();
        let sol = solve_gamma_from_input(&spec.nominal_input(), &spec).unwrap();
        assert!(sol.residual <= 1e-10);
        assert!(sol.iterations <= 50);
        let ss = recover_steady_state(&sol.gamma, &spec).unwrap();
        for (a, b) in ss.u_star.iter().zip(&sol.input) {
            assert!((a - b).abs() < 1e-12 * b.abs().max(1.0));
        }
        assert!((ss.u_star[1] - 16.5).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn input_is_shift_invariant(
            g in prop::collection::vec(-PI..PI, 3),
            theta in -10.0f64..10.0,
        ) {
            let spec = NetworkSpec::table1_ring();
            let a = feasible_input(&g, &spec).unwrap();
            let shifted: Vec<f64> = g.iter().map(|x| x + theta).collect();
            let b = feasible_input(&shifted, &spec).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-10 * (1.0 + x.abs()));
            }
        }
    }
}
