//! Time integration of the network dynamics, convergence to the steady-state
//! orbit, region-of-attraction sampling and dq/abc conversion.
//!
//! The integrator is the Dormand–Prince 5(4) pair with its fourth-order
//! continuous extension, so samples land exactly on the requested times.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::{wrap_angle, NetworkModel, NetworkSpec, SystemState};
use crate::report::{csv_error, csv_writer, Metadata};
use crate::steady_state::{distance_to_orbit, SteadyState};

const MODULE: &str = "simulate";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimSettings {
    pub t_end: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Spacing of the dense-output samples.
    pub sample_dt: f64,
    pub max_steps: usize,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            t_end: 2.0,
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            sample_dt: 1e-3,
            max_steps: 20_000_000,
        }
    }
}

impl SimSettings {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("t_end", self.t_end),
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("sample_dt", self.sample_dt),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidSpec(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidSpec("max_steps must be positive".into()));
        }
        Ok(())
    }

    /// `0, dt, 2 dt, ..., t_end` with `t_end` always last.
    pub fn sample_times(&self) -> Vec<f64> {
        let count = (self.t_end / self.sample_dt).floor() as usize;
        let mut t: Vec<f64> = (0..=count).map(|k| k as f64 * self.sample_dt).collect();
        if t.last().is_some_and(|&l| self.t_end - l > 1e-12 * self.t_end) {
            t.push(self.t_end);
        } else if let Some(l) = t.last_mut() {
            *l = self.t_end;
        }
        t
    }
}

#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<SystemState>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    /// Set when `||z|| > 1e6 (1 + ||z0||)` or a non-finite value appeared; integration stops there.
    pub diverged: bool,
    /// Filled by [`Trajectory::classify`].
    pub final_orbit_distance: Option<f64>,
    pub converged: bool,
    pub limit_theta: Option<f64>,
}

impl Trajectory {
    pub fn final_state(&self) -> Option<&SystemState> {
        self.states.last()
    }

    pub fn classify(&mut self, ss: &SteadyState, conv: &ConvergenceSettings) {
        self.final_orbit_distance = self.final_state().map(|z| distance_to_orbit(z, ss).0);
        let (ok, theta) = converges_to_orbit(self, ss, conv.eps(ss), conv.window);
        self.converged = ok;
        self.limit_theta = theta;
    }

    pub fn write_csv(&self, path: &Path, meta: &Metadata) -> Result<()> {
        let first = match self.states.first() {
            Some(s) => s,
            None => return Err(Error::numerical(MODULE, "empty trajectory")),
        };
        let layout = first.layout();
        let mut w = csv_writer(path, meta)?;
        w.write_record(state_header(layout.n, layout.m))
            .map_err(csv_error)?;
        for (t, s) in self.times.iter().zip(&self.states) {
            let packed = s.pack();
            let row = std::iter::once(*t)
                .chain(packed.iter().copied())
                .map(crate::report::format_float);
            w.write_record(row).map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Capacitor voltages in the abc frame, one `(a, b, c)` triple per converter.
    pub fn write_abc_csv(&self, path: &Path, meta: &Metadata, omega_star: f64) -> Result<()> {
        let n = self.states.first().map_or(0, |s| s.gamma.len());
        let mut w = csv_writer(path, meta)?;
        let mut header = vec!["t".to_string()];
        for k in 1..=n {
            for p in ["a", "b", "c"] {
                header.push(format!("v_{p}_{k}"));
            }
        }
        w.write_record(&header).map_err(csv_error)?;
        for (t, s) in self.times.iter().zip(&self.states) {
            let mut row = vec![*t];
            for k in 0..n {
                row.extend(dq_to_abc_point([s.v_c[2 * k], s.v_c[2 * k + 1]], omega_star * t));
            }
            w.write_record(row.into_iter().map(crate::report::format_float))
                .map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Column names in packed-state order, preceded by `t`.
pub fn state_header(n: usize, m: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=n).map(|k| format!("gamma_{k}")));
    h.extend((1..=n).map(|k| format!("v_dc_{k}")));
    for k in 1..=n {
        h.push(format!("i_d_{k}"));
        h.push(format!("i_q_{k}"));
    }
    for k in 1..=n {
        h.push(format!("v_d_{k}"));
        h.push(format!("v_q_{k}"));
    }
    for e in 1..=m {
        h.push(format!("il_d_{e}"));
        h.push(format!("il_q_{e}"));
    }
    h
}

// Dormand–Prince coefficients.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

fn axpy_into(out: &mut [f64], y: &[f64], h: f64, terms: &[(f64, &[f64])]) {
    for i in 0..out.len() {
        let mut acc = 0.0;
        for (c, k) in terms {
            acc += c * k[i];
        }
        out[i] = y[i] + h * acc;
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Integrate from `z0` under constant input `u`, sampling every `settings.sample_dt`.
pub fn integrate(
    spec: &NetworkSpec,
    u: &[f64],
    z0: &SystemState,
    settings: &SimSettings,
) -> Result<Trajectory> {
    settings.validate()?;
    integrate_at(spec, u, z0, &settings.sample_times(), settings)
}

/// Integrate up to the last entry of `sample_times` (strictly increasing, starting at or after 0).
pub fn integrate_at(
    spec: &NetworkSpec,
    u: &[f64],
    z0: &SystemState,
    sample_times: &[f64],
    settings: &SimSettings,
) -> Result<Trajectory> {
    let model = NetworkModel::new(spec);
    let layout = model.layout();
    let y0 = z0.pack();
    let mut probe = vec![0.0; y0.len()];
    model.eval_packed(y0.as_slice(), u, &mut probe)?;
    if sample_times.is_empty()
        || sample_times[0] < 0.0
        || sample_times.windows(2).any(|w| !(w[1] > w[0]))
    {
        return Err(Error::InvalidSpec(
            "sample times must be non-empty, non-negative and strictly increasing".into(),
        ));
    }
    for (name, v) in [("rel_tol", settings.rel_tol), ("abs_tol", settings.abs_tol)] {
        if !(v > 0.0) {
            return Err(Error::InvalidSpec(format!("{name} must be positive, got {v}")));
        }
    }
    let t_end = *sample_times.last().unwrap();
    if !(t_end > 0.0) {
        return Err(Error::InvalidSpec("t_end must be positive".into()));
    }
    let dim = y0.len();
    let f = |y: &[f64], dy: &mut [f64]| model.eval_unchecked(y, u, dy);
    let limit = 1e6 * (1.0 + norm(y0.as_slice()));

    let mut traj = Trajectory::default();
    let mut next_sample = 0;
    let push = |traj: &mut Trajectory, t: f64, y: &[f64]| {
        traj.times.push(t);
        traj.states
            .push(SystemState::unpack(layout, y).expect("packed length matches layout"));
    };
    if sample_times[0] == 0.0 {
        push(&mut traj, 0.0, y0.as_slice());
        next_sample = 1;
    }

    let mut y: Vec<f64> = y0.iter().copied().collect();
    let mut k1 = vec![0.0; dim];
    let (mut k2, mut k3, mut k4, mut k5, mut k6, mut k7) = (
        vec![0.0; dim],
        vec![0.0; dim],
        vec![0.0; dim],
        vec![0.0; dim],
        vec![0.0; dim],
        vec![0.0; dim],
    );
    let mut tmp = vec![0.0; dim];
    let mut y_new = vec![0.0; dim];
    f(&y, &mut k1);

    let scale = |a: f64, b: f64| settings.abs_tol + settings.rel_tol * a.abs().max(b.abs());
    let mut h = initial_step(&f, &y, &k1, t_end, settings);
    let mut t = 0.0;
    let mut last_reject = false;
    while t < t_end {
        if traj.accepted_steps + traj.rejected_steps >= settings.max_steps {
            return Err(Error::numerical(
                MODULE,
                format!("step budget {} exhausted at t = {t:.6e}", settings.max_steps),
            ));
        }
        if h < 1e-14 * t_end {
            return Err(Error::Stiffness {
                t,
                h,
                partial: Box::new(traj),
            });
        }
        let h_step = h.min(t_end - t);
        axpy_into(&mut tmp, &y, h_step, &[(A21, &k1)]);
        f(&tmp, &mut k2);
        axpy_into(&mut tmp, &y, h_step, &[(A31, &k1), (A32, &k2)]);
        f(&tmp, &mut k3);
        axpy_into(&mut tmp, &y, h_step, &[(A41, &k1), (A42, &k2), (A43, &k3)]);
        f(&tmp, &mut k4);
        axpy_into(&mut tmp, &y, h_step, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]);
        f(&tmp, &mut k5);
        axpy_into(
            &mut tmp,
            &y,
            h_step,
            &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
        );
        f(&tmp, &mut k6);
        axpy_into(
            &mut y_new,
            &y,
            h_step,
            &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)],
        );
        f(&y_new, &mut k7);

        let mut err = 0.0;
        for i in 0..dim {
            let e = h_step
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let s = scale(y[i], y_new[i]);
            err += (e / s) * (e / s);
        }
        let err = (err / dim as f64).sqrt();
        if !err.is_finite() {
            traj.rejected_steps += 1;
            h = h_step * 0.2;
            last_reject = true;
            continue;
        }
        if err <= 1.0 {
            traj.accepted_steps += 1;
            let t_new = if h_step == t_end - t { t_end } else { t + h_step };
            // Dense output between t and t_new.
            while next_sample < sample_times.len() && sample_times[next_sample] <= t_new {
                let ts = sample_times[next_sample];
                if ts <= t {
                    next_sample += 1;
                    continue;
                }
                let theta = (ts - t) / h_step;
                let th1 = 1.0 - theta;
                for i in 0..dim {
                    let diff = y_new[i] - y[i];
                    let bspl = h_step * k1[i] - diff;
                    let r4 = diff - h_step * k7[i] - bspl;
                    let r5 = h_step
                        * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i]
                            + D7 * k7[i]);
                    tmp[i] = y[i] + theta * (diff + th1 * (bspl + theta * (r4 + th1 * r5)));
                }
                if ts == t_new {
                    push(&mut traj, ts, &y_new);
                } else {
                    push(&mut traj, ts, &tmp);
                }
                next_sample += 1;
            }
            std::mem::swap(&mut y, &mut y_new);
            std::mem::swap(&mut k1, &mut k7);
            t = t_new;
            let size = norm(&y);
            if !(size <= limit) {
                traj.diverged = true;
                if traj.times.last().is_none_or(|&l| t > l) && y.iter().all(|v| v.is_finite()) {
                    push(&mut traj, t, &y);
                }
                return Ok(traj);
            }
            let mut fac = 0.9 * err.max(1e-10).powf(-0.2);
            fac = fac.clamp(0.2, 10.0);
            if last_reject {
                fac = fac.min(1.0);
            }
            h = h_step * fac;
            last_reject = false;
        } else {
            traj.rejected_steps += 1;
            h = h_step * (0.9 * err.powf(-0.2)).max(0.2);
            last_reject = true;
        }
    }
    Ok(traj)
}

fn initial_step(
    f: &impl Fn(&[f64], &mut [f64]),
    y: &[f64],
    f0: &[f64],
    t_end: f64,
    s: &SimSettings,
) -> f64 {
    let dim = y.len() as f64;
    let sc: Vec<f64> = y.iter().map(|v| s.abs_tol + s.rel_tol * v.abs()).collect();
    let rms = |v: &[f64]| {
        (v.iter().zip(&sc).map(|(a, b)| (a / b).powi(2)).sum::<f64>() / dim).sqrt()
    };
    let d0 = rms(y);
    let d1 = rms(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let h0 = h0.min(t_end);
    let y1: Vec<f64> = y.iter().zip(f0).map(|(a, b)| a + h0 * b).collect();
    let mut f1 = vec![0.0; y.len()];
    f(&y1, &mut f1);
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = rms(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(t_end)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceSettings {
    /// Absolute orbit-distance threshold; `None` means `1e-4 (1 + ||z*||)`.
    pub eps: Option<f64>,
    pub window: f64,
}

impl Default for ConvergenceSettings {
    fn default() -> Self {
        Self {
            eps: None,
            window: 0.2,
        }
    }
}

impl ConvergenceSettings {
    pub fn eps(&self, ss: &SteadyState) -> f64 {
        self.eps.unwrap_or(1e-4 * (1.0 + ss.z_star.norm()))
    }
}

/// Allowed spread of the nearest orbit angle over the trailing window.
pub const THETA_DRIFT_TOL: f64 = 1e-4;

/// Orbit distances and nearest-orbit angles over the trailing `window`.
pub fn trailing_orbit_track(traj: &Trajectory, ss: &SteadyState, window: f64) -> Vec<(f64, f64, f64)> {
    let Some(&t_last) = traj.times.last() else {
        return Vec::new();
    };
    traj.times
        .iter()
        .zip(&traj.states)
        .filter(|(t, _)| **t >= t_last - window - 1e-12)
        .map(|(t, z)| {
            let (d, th) = distance_to_orbit(z, ss);
            (*t, d, th)
        })
        .collect()
}

/// `(converged, limit_theta)`: distance below `eps` over the trailing window and
/// the nearest orbit angle drifting by less than [`THETA_DRIFT_TOL`].
pub fn converges_to_orbit(
    traj: &Trajectory,
    ss: &SteadyState,
    eps: f64,
    window: f64,
) -> (bool, Option<f64>) {
    if traj.diverged || traj.times.is_empty() {
        return (false, None);
    }
    let t_first = traj.times[0];
    let t_last = *traj.times.last().unwrap();
    if t_last - t_first < window {
        return (false, None);
    }
    let track = trailing_orbit_track(traj, ss, window);
    let theta_ref = track.last().map(|x| x.2).unwrap();
    let close = track.iter().all(|x| x.1 < eps);
    let drift = theta_spread(track.iter().map(|x| x.2), theta_ref);
    (close && drift < THETA_DRIFT_TOL, Some(theta_ref))
}

/// Spread of angles around a reference, with wrapping.
pub fn theta_spread(thetas: impl Iterator<Item = f64>, reference: f64) -> f64 {
    let (lo, hi) = thetas.fold((0.0f64, 0.0f64), |(lo, hi), th| {
        let d = wrap_angle(th - reference);
        (lo.min(d), hi.max(d))
    });
    hi - lo
}

/// Integrate from `z0` and classify against the orbit of `ss`.
pub fn simulate(
    spec: &NetworkSpec,
    ss: &SteadyState,
    z0: &SystemState,
    settings: &SimSettings,
    conv: &ConvergenceSettings,
) -> Result<Trajectory> {
    let mut traj = integrate(spec, &ss.u_star, z0, settings)?;
    traj.classify(ss, conv);
    Ok(traj)
}

/// `z*` with the angles replaced by `gamma0`.
pub fn angle_initial_state(ss: &SteadyState, gamma0: &[f64]) -> Result<SystemState> {
    if gamma0.len() != ss.n() {
        return Err(Error::DimensionMismatch {
            context: "initial angles",
            expected: ss.n(),
            got: gamma0.len(),
        });
    }
    let mut z = ss.z_star.clone();
    z.gamma = gamma0.to_vec();
    Ok(z)
}

// ---------------------------------------------------------------------------
// Region of attraction

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Converged,
    NotConverged,
    Diverged,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct RoaSample {
    pub direction: usize,
    pub radius: f64,
    pub initial_gamma: Vec<f64>,
    pub verdict: Verdict,
    pub final_distance: Option<f64>,
    pub limit_theta: Option<f64>,
    pub detail: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RoaEstimate {
    pub directions: Vec<Vec<f64>>,
    pub radii: Vec<f64>,
    /// Sorted by radius, then direction.
    pub samples: Vec<RoaSample>,
    /// Largest tested radius such that every sample at that radius and all smaller ones converged.
    pub largest_all_converge_radius: f64,
    pub divergent_witnesses: Vec<RoaSample>,
    /// Euclidean norm of the angle deviation.
    pub metric: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RoaSettings {
    pub sim: SimSettings,
    pub conv: ConvergenceSettings,
}

impl Default for RoaSettings {
    fn default() -> Self {
        Self {
            sim: SimSettings {
                sample_dt: 5e-3,
                ..SimSettings::default()
            },
            conv: ConvergenceSettings::default(),
        }
    }
}

/// `+-e_k` for every angle plus `random` seeded unit vectors orthogonal to `1_n`.
pub fn default_directions(n: usize, random: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut dirs = Vec::with_capacity(2 * n + random);
    for k in 0..n {
        for s in [1.0, -1.0] {
            let mut d = vec![0.0; n];
            d[k] = s;
            dirs.push(d);
        }
    }
    if n < 2 {
        return dirs;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while dirs.len() < 2 * n + random {
        let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mean = v.iter().sum::<f64>() / n as f64;
        v.iter_mut().for_each(|x| *x -= mean);
        let len = norm(&v);
        if len > 1e-8 {
            dirs.push(v.into_iter().map(|x| x / len).collect());
        }
    }
    dirs
}

pub fn roa_sample(
    ss: &SteadyState,
    spec: &NetworkSpec,
    directions: &[Vec<f64>],
    radii: &[f64],
    settings: &RoaSettings,
) -> Result<RoaEstimate> {
    settings.sim.validate()?;
    let n = ss.n();
    for (i, d) in directions.iter().enumerate() {
        if d.len() != n {
            return Err(Error::DimensionMismatch {
                context: "ROA direction",
                expected: n,
                got: d.len(),
            });
        }
        if (norm(d) - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSpec(format!("direction {i} is not a unit vector")));
        }
    }
    if radii.is_empty() || radii[0] <= 0.0 || radii.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidSpec(
            "radii must be positive and strictly increasing".into(),
        ));
    }
    let jobs: Vec<(usize, usize)> = (0..radii.len())
        .flat_map(|r| (0..directions.len()).map(move |d| (r, d)))
        .collect();
    let mut samples: Vec<RoaSample> = jobs
        .par_iter()
        .map(|&(ri, di)| {
            let radius = radii[ri];
            let gamma: Vec<f64> = ss
                .gamma_star
                .iter()
                .zip(&directions[di])
                .map(|(g, d)| g + radius * d)
                .collect();
            let mut sample = RoaSample {
                direction: di,
                radius,
                initial_gamma: gamma.clone(),
                verdict: Verdict::Failed,
                final_distance: None,
                limit_theta: None,
                detail: None,
            };
            let z0 = angle_initial_state(ss, &gamma).expect("direction length checked");
            match simulate(spec, ss, &z0, &settings.sim, &settings.conv) {
                Ok(t) => {
                    sample.verdict = if t.diverged {
                        Verdict::Diverged
                    } else if t.converged {
                        Verdict::Converged
                    } else {
                        Verdict::NotConverged
                    };
                    sample.final_distance = t.final_orbit_distance;
                    sample.limit_theta = t.limit_theta;
                }
                Err(e) => sample.detail = Some(e.to_string()),
            }
            sample
        })
        .collect();
    samples.sort_by(|a, b| a.radius.total_cmp(&b.radius).then(a.direction.cmp(&b.direction)));

    let largest = all_converge_radius(radii, &samples);
    let divergent_witnesses = samples
        .iter()
        .filter(|s| s.verdict != Verdict::Converged)
        .cloned()
        .collect();
    Ok(RoaEstimate {
        directions: directions.to_vec(),
        radii: radii.to_vec(),
        samples,
        largest_all_converge_radius: largest,
        divergent_witnesses,
        metric: "euclidean norm of the angle deviation (rad)".into(),
    })
}

/// Largest radius `r` such that every sample at every tested radius `<= r` converged.
pub fn all_converge_radius(radii: &[f64], samples: &[RoaSample]) -> f64 {
    let mut largest = 0.0;
    for &r in radii {
        if samples
            .iter()
            .filter(|s| s.radius == r)
            .all(|s| s.verdict == Verdict::Converged)
        {
            largest = r;
        } else {
            break;
        }
    }
    largest
}

impl RoaEstimate {
    pub fn write_samples_csv(&self, path: &Path, meta: &Metadata) -> Result<()> {
        let mut w = csv_writer(path, meta)?;
        let n = self.directions.first().map_or(0, Vec::len);
        let mut header = vec![
            "direction".to_string(),
            "radius".into(),
            "verdict".into(),
            "final_distance".into(),
            "limit_theta".into(),
        ];
        header.extend((1..=n).map(|k| format!("gamma0_{k}")));
        w.write_record(&header).map_err(csv_error)?;
        for s in &self.samples {
            let verdict = match s.verdict {
                Verdict::Converged => "converged",
                Verdict::NotConverged => "not_converged",
                Verdict::Diverged => "diverged",
                Verdict::Failed => "failed",
            };
            let opt = |x: Option<f64>| x.map(crate::report::format_float).unwrap_or_default();
            let mut row = vec![
                s.direction.to_string(),
                crate::report::format_float(s.radius),
                verdict.to_string(),
                opt(s.final_distance),
                opt(s.limit_theta),
            ];
            row.extend(s.initial_gamma.iter().map(|g| crate::report::format_float(*g)));
            w.write_record(&row).map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// dq <-> abc, amplitude-invariant: a constant dq vector of length A maps to
// phase amplitudes A, and the a-phase equals Re((d + jq) e^{j theta}).

const PHASES: [f64; 3] = [0.0, -2.0 * PI / 3.0, 2.0 * PI / 3.0];

pub fn dq_to_abc_point(dq: [f64; 2], theta: f64) -> [f64; 3] {
    PHASES.map(|p| dq[0] * (theta + p).cos() - dq[1] * (theta + p).sin())
}

pub fn abc_to_dq_point(abc: [f64; 3], theta: f64) -> [f64; 2] {
    let mut d = 0.0;
    let mut q = 0.0;
    for (x, p) in abc.iter().zip(PHASES) {
        d += x * (theta + p).cos();
        q -= x * (theta + p).sin();
    }
    [2.0 / 3.0 * d, 2.0 / 3.0 * q]
}

/// Inverse dq transform with `theta(t) = omega_star t`.
pub fn dq_to_abc(signal: &[[f64; 2]], omega_star: f64, times: &[f64]) -> Result<Vec<[f64; 3]>> {
    if signal.len() != times.len() {
        return Err(Error::DimensionMismatch {
            context: "dq_to_abc samples",
            expected: times.len(),
            got: signal.len(),
        });
    }
    Ok(signal
        .iter()
        .zip(times)
        .map(|(dq, t)| dq_to_abc_point(*dq, omega_star * t))
        .collect())
}

pub fn abc_to_dq(signal: &[[f64; 3]], omega_star: f64, times: &[f64]) -> Result<Vec<[f64; 2]>> {
    if signal.len() != times.len() {
        return Err(Error::DimensionMismatch {
            context: "abc_to_dq samples",
            expected: times.len(),
            got: signal.len(),
        });
    }
    Ok(signal
        .iter()
        .zip(times)
        .map(|(abc, t)| abc_to_dq_point(*abc, omega_star * t))
        .collect())
}

/// Packed-state distance between two trajectories sampled on the same grid.
pub fn max_sample_gap(a: &Trajectory, b: &Trajectory) -> f64 {
    a.states
        .iter()
        .zip(&b.states)
        .map(|(x, y)| (x.pack() - y.pack()).norm())
        .fold(0.0, f64::max)
}

/// `z* + dz` for a packed perturbation.
pub fn perturbed(z: &SystemState, dz: &DVector<f64>) -> Result<SystemState> {
    let packed = z.pack() + dz;
    SystemState::unpack(z.layout(), packed.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linearize::jacobian;
    use crate::steady_state::{orbit_point, recover_steady_state};
    use rand::Rng;

    fn sync_ring() -> (NetworkSpec, SteadyState) {
        let spec = NetworkSpec::table1_ring();
        let ss = recover_steady_state(&[0.0, 0.0, 0.0], &spec).unwrap();
        (spec, ss)
    }

    fn short(t_end: f64) -> SimSettings {
        SimSettings {
            t_end,
            ..SimSettings::default()
        }
    }

    #[test]
    fn samples_land_on_the_requested_grid() {
        let (spec, ss) = sync_ring();
        let traj = integrate(&spec, &ss.u_star, &ss.z_star, &short(0.05)).unwrap();
        assert_eq!(traj.times.len(), 51);
        assert!(traj.times.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(*traj.times.last().unwrap(), 0.05);
    }

    #[test]
    fn equilibrium_persists() {
        let (spec, ss) = sync_ring();
        let traj = integrate(&spec, &ss.u_star, &ss.z_star, &short(1.0)).unwrap();
        let z = ss.z_star.pack();
        let worst = traj
            .states
            .iter()
            .map(|s| (s.pack() - &z).norm())
            .fold(0.0, f64::max);
        assert!(worst < 1e-7, "drift {worst}");

        let p = orbit_point(&ss, 0.5);
        let traj = integrate(&spec, &ss.u_star, &p, &short(1.0)).unwrap();
        let zp = p.pack();
        let worst = traj
            .states
            .iter()
            .map(|s| (s.pack() - &zp).norm())
            .fold(0.0, f64::max);
        assert!(worst < 1e-7, "drift {worst}");
    }

    #[test]
    fn small_perturbation_follows_the_linearization() {
        let (spec, ss) = sync_ring();
        let lin = jacobian(&ss, &spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dim = lin.jacobian.nrows();
        let dz = DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0)).normalize() * 1e-6;
        let z0 = perturbed(&ss.z_star, &dz).unwrap();
        let settings = SimSettings {
            t_end: 0.1,
            rel_tol: 1e-11,
            abs_tol: 1e-13,
            sample_dt: 0.01,
            ..SimSettings::default()
        };
        let traj = integrate(&spec, &ss.u_star, &z0, &settings).unwrap();
        let z = ss.z_star.pack();
        for (t, s) in traj.times.iter().zip(&traj.states) {
            let lin_dz = (&lin.jacobian * *t).exp() * &dz;
            let gap = (s.pack() - &z - lin_dz).norm();
            assert!(gap < 1e-9, "t {t}: gap {gap:e}");
        }
    }

    #[test]
    fn flow_commutes_with_the_symmetry() {
        let (spec, ss) = sync_ring();
        let z0 = angle_initial_state(&ss, &[0.3, -0.2, 0.1]).unwrap();
        let s = short(0.2);
        let a = integrate(&spec, &ss.u_star, &z0, &s).unwrap();
        let b = integrate(&spec, &ss.u_star, &z0.apply_symmetry(1.1), &s).unwrap();
        let mut worst: f64 = 0.0;
        for (x, y) in a.states.iter().zip(&b.states) {
            let scale = 1.0 + x.norm();
            worst = worst.max((x.apply_symmetry(1.1).pack() - y.pack()).norm() / scale);
        }
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn constant_trajectory_converges_to_its_orbit_point() {
        let (_, ss) = sync_ring();
        let p = orbit_point(&ss, 0.7);
        let traj = Trajectory {
            times: (0..=300).map(|k| k as f64 * 1e-3).collect(),
            states: vec![p; 301],
            ..Trajectory::default()
        };
        let (ok, theta) = converges_to_orbit(&traj, &ss, 1e-6, 0.2);
        assert!(ok);
        assert!((theta.unwrap() - 0.7).abs() < 1e-8);
    }

    #[test]
    fn drifting_angle_is_not_point_convergence() {
        let (_, ss) = sync_ring();
        let times: Vec<f64> = (0..=300).map(|k| k as f64 * 1e-3).collect();
        let states = times.iter().map(|t| orbit_point(&ss, 0.1 + 0.01 * t)).collect();
        let traj = Trajectory {
            times,
            states,
            ..Trajectory::default()
        };
        let (ok, theta) = converges_to_orbit(&traj, &ss, 1e-6, 0.2);
        assert!(!ok && theta.is_some());
    }

    #[test]
    fn divergence_is_flagged() {
        // Unstable scalar growth through a huge input offset on the DC side.
        let (spec, ss) = sync_ring();
        let mut u = ss.u_star.clone();
        u[0] += 1e12;
        let traj = integrate(&spec, &u, &ss.z_star, &short(1.0)).unwrap();
        assert!(traj.diverged);
        assert!(traj.states.iter().all(|s| s.pack().iter().all(|v| v.is_finite())));
        assert!(traj.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn invalid_settings_are_rejected() {
        let (spec, ss) = sync_ring();
        let mut s = short(1.0);
        s.rel_tol = 0.0;
        assert!(integrate(&spec, &ss.u_star, &ss.z_star, &s).is_err());
        assert!(integrate(&spec, &ss.u_star, &ss.z_star, &short(-1.0)).is_err());
    }

    #[test]
    fn tiny_step_budget_reports_stiffness_or_budget() {
        let (spec, ss) = sync_ring();
        let z0 = angle_initial_state(&ss, &[0.5, 0.0, 0.0]).unwrap();
        let s = SimSettings {
            max_steps: 10,
            ..short(1.0)
        };
        assert!(matches!(
            integrate(&spec, &ss.u_star, &z0, &s),
            Err(Error::Numerical { .. })
        ));
    }

    #[test]
    fn direction_set_is_seeded_and_orthogonal_to_the_orbit() {
        let a = default_directions(3, 20, 7);
        let b = default_directions(3, 20, 7);
        assert_eq!(a, b);
        assert_eq!(a.len(), 26);
        for d in &a[6..] {
            assert!((norm(d) - 1.0).abs() < 1e-12);
            assert!(d.iter().sum::<f64>().abs() < 1e-12);
        }
        assert_ne!(default_directions(3, 20, 8)[6], a[6]);
    }

    #[test]
    fn orbit_points_converge_to_their_own_angle() {
        let (spec, ss) = sync_ring();
        let conv = ConvergenceSettings {
            eps: Some(1e-6),
            window: 0.2,
        };
        for theta in [0.5, 3.0, 10.0] {
            let z0 = orbit_point(&ss, theta);
            let t = simulate(&spec, &ss, &z0, &short(0.3), &conv).unwrap();
            assert!(t.converged);
            let expect = theta.rem_euclid(2.0 * PI);
            assert!(wrap_angle(t.limit_theta.unwrap() - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn roa_samples_are_sorted_and_reproducible() {
        let (spec, ss) = sync_ring();
        let dirs = default_directions(3, 2, 11);
        let settings = RoaSettings {
            sim: SimSettings {
                t_end: 0.25,
                sample_dt: 5e-3,
                ..SimSettings::default()
            },
            conv: ConvergenceSettings::default(),
        };
        let a = roa_sample(&ss, &spec, &dirs, &[0.01, 0.5], &settings).unwrap();
        let b = roa_sample(&ss, &spec, &dirs, &[0.01, 0.5], &settings).unwrap();
        assert_eq!(a.samples.len(), 16);
        assert!(a
            .samples
            .windows(2)
            .all(|w| (w[0].radius, w[0].direction) < (w[1].radius, w[1].direction)));
        let fa: Vec<_> = a.samples.iter().map(|s| (s.verdict, s.final_distance)).collect();
        let fb: Vec<_> = b.samples.iter().map(|s| (s.verdict, s.final_distance)).collect();
        assert_eq!(fa, fb);
        assert!(roa_sample(&ss, &spec, &[vec![1.0, 1.0, 0.0]], &[0.1], &settings).is_err());
        assert!(roa_sample(&ss, &spec, &dirs, &[0.5, 0.1], &settings).is_err());
    }

    #[test]
    fn all_converge_radius_is_a_prefix() {
        let radius = |verdicts: &[(f64, Verdict)]| {
            let samples: Vec<RoaSample> = verdicts
                .iter()
                .map(|&(radius, verdict)| RoaSample {
                    direction: 0,
                    radius,
                    initial_gamma: vec![],
                    verdict,
                    final_distance: None,
                    limit_theta: None,
                    detail: None,
                })
                .collect();
            let mut radii: Vec<f64> = verdicts.iter().map(|v| v.0).collect();
            radii.dedup();
            all_converge_radius(&radii, &samples)
        };
        use Verdict::*;
        assert_eq!(radius(&[(1.0, Converged), (2.0, Diverged), (3.0, Converged)]), 1.0);
        assert_eq!(radius(&[(1.0, NotConverged), (2.0, Converged)]), 0.0);
        assert_eq!(radius(&[(1.0, Converged), (1.0, Failed), (2.0, Converged)]), 0.0);
        assert_eq!(radius(&[(1.0, Converged), (2.0, Converged)]), 2.0);
    }

    #[test]
    fn abc_transform_pair() {
        let w = 2.0 * PI * 50.0;
        let abc = dq_to_abc_point([2.0, 0.0], 0.0);
        assert!((abc[0] - 2.0).abs() < 1e-15);
        assert!((abc[1] + 1.0).abs() < 1e-12 && (abc[2] + 1.0).abs() < 1e-12);
        assert_eq!(dq_to_abc_point([0.0, 0.0], 1.3), [0.0, 0.0, 0.0]);
        let times: Vec<f64> = (0..500).map(|k| k as f64 * 1e-4).collect();
        let dq: Vec<[f64; 2]> = times.iter().map(|_| [1.5, -0.4]).collect();
        let abc = dq_to_abc(&dq, w, &times).unwrap();
        for (x, t) in abc.iter().zip(&times) {
            assert!((x[0] + x[1] + x[2]).abs() < 1e-12);
            let amp = (1.5f64.powi(2) + 0.4f64.powi(2)).sqrt();
            let phase = (-0.4f64).atan2(1.5);
            assert!((x[0] - amp * (w * t + phase).cos()).abs() < 1e-12);
            assert!((x[1] - amp * (w * t + phase - 2.0 * PI / 3.0).cos()).abs() < 1e-12);
        }
        // balanced synthetic signal -> dq -> abc
        let sig: Vec<[f64; 3]> = times
            .iter()
            .map(|t| PHASES.map(|p| 3.0 * (w * t + 0.3 + p).cos()))
            .collect();
        let back = dq_to_abc(&abc_to_dq(&sig, w, &times).unwrap(), w, &times).unwrap();
        for (a, b) in sig.iter().zip(&back) {
            for i in 0..3 {
                assert!((a[i] - b[i]).abs() < 1e-12);
            }
        }
        assert!(dq_to_abc(&dq[..3], w, &times).is_err());
    }

    #[test]
    fn csv_export_has_the_documented_header() {
        let (spec, ss) = sync_ring();
        let traj = integrate(&spec, &ss.u_star, &ss.z_star, &short(0.01)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.csv");
        traj.write_csv(&path, &Metadata::new(b"x")).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let header = text.lines().find(|l| !l.starts_with('#')).unwrap();
        assert!(header.starts_with("t,gamma_1,gamma_2,gamma_3,v_dc_1"));
        assert!(header.ends_with("il_d_3,il_q_3"));
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 1 + 11);
        traj.write_abc_csv(&dir.path().join("abc.csv"), &Metadata::new(b"x"), spec.converter().omega_star)
            .unwrap();
    }
}
