//! Explicit parametric synchronization conditions with margins.
//!
//! Per converter `P_x,k = 1/2 v_dc* mu r(gamma_k)^T i_k` and
//! `Q_x,k = 1/2 v_dc* mu r(gamma_k)^T J^T i_k`. With
//!
//! ```text
//! Y     = mu v_dc* / (2 L) sup_w ||(jw I - F)^{-1}||_2          (needs Y < 1)
//! alpha = max{ mu^2 v_dc*^2 / (16 R),  mu v_dc*^2 / (4 sqrt(Y^-2 - 1)) }
//! ```
//!
//! the AC condition is `cos(phi_k) < sqrt(1 - alpha^2 / (P_x,k^2 + alpha^2))`,
//! equivalently `Q_x,k > alpha`, and the DC condition is
//!
//! ```text
//! max_k  mu/2 (1 + eta C_dc v_dc* / Q_x,k) / sqrt(4/v_dc*^2 (Y^-2 - 1) - mu^2 v_dc*^2 / (4 Q_x,k^2))  <  K_p
//! ```
//!
//! Failures are reported in the [`ConditionReport`], not raised.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::certificate::reduced_ac_matrix;
use crate::error::{Assumption, Error, Result};
use crate::linalg::{self, resolvent_sup, solve_lyapunov};
use crate::linearize::LinearizedSystem;
use crate::network::{j2, rotation_vector, ConverterParams, NetworkSpec};
use crate::steady_state::SteadyState;

const MODULE: &str = "conditions";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerQuantities {
    pub p_x: f64,
    pub q_x: f64,
    pub power_factor: f64,
}

/// `(P_x,k, Q_x,k, cos phi_k)` for converter `k` (zero-based).
pub fn power_quantities(ss: &SteadyState, spec: &NetworkSpec, k: usize) -> Result<PowerQuantities> {
    if k >= ss.n() {
        return Err(Error::InvalidSpec(format!(
            "converter index {k} out of range for {} converters",
            ss.n()
        )));
    }
    let c = spec.converter();
    let r = rotation_vector(ss.gamma_star[k]);
    let i = nalgebra::Vector2::new(ss.z_star.i_f[2 * k], ss.z_star.i_f[2 * k + 1]);
    let scale = 0.5 * c.v_dc_star * c.mu;
    let p_x = scale * r.dot(&i);
    let q_x = scale * r.dot(&(j2().transpose() * i));
    Ok(PowerQuantities {
        p_x,
        q_x,
        power_factor: power_factor(p_x, q_x),
    })
}

fn power_factor(p: f64, q: f64) -> f64 {
    p / (p * p + q * q).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GainAlpha {
    /// `sup_w ||(jw I - F)^{-1}||_2`.
    pub resolvent_sup: f64,
    pub gain_y: f64,
    pub y_feasible: bool,
    pub alpha_resistive: f64,
    /// Second branch, defined only when `gain_y < 1`.
    pub alpha_gain: Option<f64>,
    pub alpha: Option<f64>,
}

/// `Y` and `alpha` from the reduced AC matrix `F`.
pub fn gain_and_alpha(lin: &LinearizedSystem, spec: &NetworkSpec) -> Result<GainAlpha> {
    let s = lin.a11.nrows();
    let a11_abscissa = linalg::spectral_abscissa(&lin.a11)?;
    if a11_abscissa >= 0.0 {
        return Err(Error::violated(
            MODULE,
            Assumption::AngleDcBlockHurwitz,
            format!("max Re eig(A11) = {a11_abscissa:.6e}; F is undefined"),
            Some(a11_abscissa),
        ));
    }
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
    Ok(gain_alpha_from_resolvent(resolvent_sup(&f)?, spec.converter()))
}

pub fn gain_alpha_from_resolvent(resolvent: f64, c: &ConverterParams) -> GainAlpha {
    let gain_y = 0.5 * c.mu * c.v_dc_star / c.l_f * resolvent;
    let alpha_resistive = c.mu * c.mu * c.v_dc_star * c.v_dc_star / (16.0 * c.r_f);
    let y_feasible = gain_y < 1.0;
    let alpha_gain = y_feasible
        .then(|| c.mu * c.v_dc_star * c.v_dc_star / (4.0 * (gain_y.powi(-2) - 1.0).sqrt()));
    GainAlpha {
        resolvent_sup: resolvent,
        gain_y,
        y_feasible,
        alpha_resistive,
        alpha_gain,
        alpha: alpha_gain.map(|a| a.max(alpha_resistive)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AcVerdict {
    /// `sqrt(1 - alpha^2/(P^2 + alpha^2)) - cos(phi)`.
    pub margin: f64,
    pub ok: bool,
    /// `Q_x,k - alpha`.
    pub q_margin: f64,
    pub q_ok: bool,
    pub forms_agree: bool,
    pub powers_positive: bool,
}

pub fn check_ac(pq: &PowerQuantities, alpha: f64) -> AcVerdict {
    let powers_positive = pq.p_x > 0.0 && pq.q_x > 0.0;
    // sqrt(1 - a^2/(P^2 + a^2)) = P / sqrt(P^2 + a^2) for P > 0
    let rhs = if pq.p_x > 0.0 {
        power_factor(pq.p_x, alpha)
    } else {
        (1.0 - alpha * alpha / (pq.p_x * pq.p_x + alpha * alpha)).max(0.0).sqrt()
    };
    let margin = rhs - pq.power_factor;
    let q_margin = pq.q_x - alpha;
    let ok = powers_positive && margin > 0.0;
    let q_ok = powers_positive && q_margin > 0.0;
    AcVerdict {
        margin,
        ok,
        q_margin,
        q_ok,
        forms_agree: ok == q_ok,
        powers_positive,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DcVerdict {
    pub ok: bool,
    /// `K_p - LHS`, absent when the radicand is not positive.
    pub margin: Option<f64>,
    pub lhs: Option<f64>,
    /// Converter attaining the maximum (smallest radicand when infeasible).
    pub worst_converter: usize,
    pub radicand: f64,
    /// Lower bound on every `Q_x,k` that makes the radicand positive.
    pub q_bound: Option<f64>,
    pub detail: Option<String>,
}

/// Max-over-converters form of the DC condition.
pub fn check_dc(q_x: &[f64], gain_y: f64, c: &ConverterParams) -> DcVerdict {
    let v = c.v_dc_star;
    let fail = |worst, radicand, q_bound, detail: String| DcVerdict {
        ok: false,
        margin: None,
        lhs: None,
        worst_converter: worst,
        radicand,
        q_bound,
        detail: Some(detail),
    };
    if !(gain_y < 1.0) {
        return fail(
            0,
            f64::NAN,
            None,
            format!("Y = {gain_y:.6e} >= 1; requires ||G_ac||_inf < 2L/(mu v_dc*)"),
        );
    }
    let y_term = 4.0 / (v * v) * (gain_y.powi(-2) - 1.0);
    let q_bound = c.mu * v * v / (4.0 * (gain_y.powi(-2) - 1.0).sqrt());
    if let Some((k, q)) = q_x.iter().enumerate().find(|(_, q)| !(**q > 0.0)) {
        return fail(
            k,
            f64::NAN,
            Some(q_bound),
            format!("Q_x,{} = {q:.6e} is not positive", k + 1),
        );
    }
    let mut worst = (0, f64::NEG_INFINITY, f64::INFINITY);
    for (k, &q) in q_x.iter().enumerate() {
        let radicand = y_term - c.mu * c.mu * v * v / (4.0 * q * q);
        // relative guard so the exact boundary Q_x,k = q_bound is not decided by roundoff
        if !(radicand > 1e-12 * y_term) {
            return fail(
                k,
                radicand,
                Some(q_bound),
                format!(
                    "radicand {radicand:.6e} at converter {} is not positive; needs Q_x,k > {q_bound:.6e}",
                    k + 1
                ),
            );
        }
        let lhs = 0.5 * c.mu * (1.0 + c.eta * c.c_dc * v / q) / radicand.sqrt();
        if lhs > worst.1 {
            worst = (k, lhs, radicand);
        }
    }
    let margin = c.k_p - worst.1;
    DcVerdict {
        ok: margin > 0.0,
        margin: Some(margin),
        lhs: Some(worst.1),
        worst_converter: worst.0,
        radicand: worst.2,
        q_bound: Some(q_bound),
        detail: None,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConverterCondition {
    #[serde(flatten)]
    pub power: PowerQuantities,
    /// Absent when `alpha` is undefined.
    pub ac: Option<AcVerdict>,
    pub ac_ok: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionReport {
    pub converters: Vec<ConverterCondition>,
    pub gain: Option<GainAlpha>,
    pub alpha: Option<f64>,
    pub gain_y: Option<f64>,
    pub y_feasible: bool,
    pub dc: DcVerdict,
    pub dc_ok: bool,
    pub all_satisfied: bool,
    /// Converters where the power-factor form and the `Q_x,k > alpha` form disagree.
    pub form_disagreements: Vec<usize>,
    pub notes: Vec<String>,
}

/// Evaluates every condition; assumption failures end up in the report.
pub fn evaluate(ss: &SteadyState, lin: &LinearizedSystem, spec: &NetworkSpec) -> Result<ConditionReport> {
    let n = ss.n();
    let powers = (0..n)
        .map(|k| power_quantities(ss, spec, k))
        .collect::<Result<Vec<_>>>()?;
    let mut notes = Vec::new();
    for (k, pq) in powers.iter().enumerate() {
        if !(pq.p_x > 0.0) {
            notes.push(format!("P_x,{} = {:.6e} is not positive", k + 1, pq.p_x));
        }
        if !(pq.q_x > 0.0) {
            notes.push(format!("Q_x,{} = {:.6e} is not positive", k + 1, pq.q_x));
        }
    }
    let gain = match gain_and_alpha(lin, spec) {
        Ok(g) => Some(g),
        Err(e @ Error::AssumptionViolated { .. }) => {
            notes.push(e.to_string());
            None
        }
        Err(e) => return Err(e),
    };
    let alpha = gain.and_then(|g| g.alpha);
    if let Some(g) = gain.filter(|g| !g.y_feasible) {
        notes.push(format!(
            "Y = {:.6e} >= 1; requires ||G_ac||_inf < 2L/(mu v_dc*) = {:.6e}",
            g.gain_y,
            2.0 * spec.converter().l_f / (spec.converter().mu * spec.converter().v_dc_star)
        ));
    }
    let converters: Vec<ConverterCondition> = powers
        .iter()
        .map(|pq| {
            let ac = alpha.map(|a| check_ac(pq, a));
            ConverterCondition {
                power: *pq,
                ac_ok: ac.is_some_and(|v| v.ok),
                ac,
            }
        })
        .collect();
    let form_disagreements: Vec<usize> = converters
        .iter()
        .enumerate()
        .filter(|(_, c)| c.ac.is_some_and(|v| !v.forms_agree))
        .map(|(k, _)| k)
        .collect();
    for &k in &form_disagreements {
        notes.push(format!(
            "converter {}: power-factor form and Q_x > alpha form disagree",
            k + 1
        ));
    }
    let q_x: Vec<f64> = powers.iter().map(|p| p.q_x).collect();
    let dc = match gain {
        Some(g) => check_dc(&q_x, g.gain_y, spec.converter()),
        None => DcVerdict {
            ok: false,
            margin: None,
            lhs: None,
            worst_converter: 0,
            radicand: f64::NAN,
            q_bound: None,
            detail: Some("Y undefined: F could not be formed or is not Hurwitz".into()),
        },
    };
    let y_feasible = gain.is_some_and(|g| g.y_feasible);
    let dc_ok = dc.ok;
    let all_satisfied = y_feasible && converters.iter().all(|c| c.ac_ok) && dc_ok;
    Ok(ConditionReport {
        converters,
        gain,
        alpha,
        gain_y: gain.map(|g| g.gain_y),
        y_feasible,
        dc,
        dc_ok,
        all_satisfied,
        form_disagreements,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linearize::jacobian;
    use crate::steady_state::recover_steady_state;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pq(p_x: f64, q_x: f64) -> PowerQuantities {
        PowerQuantities {
            p_x,
            q_x,
            power_factor: power_factor(p_x, q_x),
        }
    }

    #[test]
    fn degenerate_alignments() {
        let spec = NetworkSpec::table1_pair();
        let c = spec.converter();
        let ss = recover_steady_state(&[0.0, 0.0], &spec).unwrap();
        let q = power_quantities(&ss, &spec, 0).unwrap();
        // i aligned with r: no reactive part
        let mut ss2 = ss.clone();
        let r = rotation_vector(0.3);
        ss2.gamma_star[0] = 0.3;
        ss2.z_star.i_f[0] = 2.0 * r[0];
        ss2.z_star.i_f[1] = 2.0 * r[1];
        let a = power_quantities(&ss2, &spec, 0).unwrap();
        assert!(a.q_x.abs() < 1e-12 && (a.power_factor - 1.0).abs() < 1e-15);
        assert!(!check_ac(&a, 1.0).ok);
        // i aligned with J r: no active part
        let jr = j2() * r;
        ss2.z_star.i_f[0] = 2.0 * jr[0];
        ss2.z_star.i_f[1] = 2.0 * jr[1];
        let b = power_quantities(&ss2, &spec, 0).unwrap();
        assert!(b.p_x.abs() < 1e-12 && b.power_factor.abs() < 1e-15);
        assert!(b.q_x > 0.0 || b.q_x < 0.0);
        assert!(q.q_x.is_finite());
        assert!(power_quantities(&ss, &spec, 2).is_err());
        let _ = c;
    }

    #[test]
    fn reactive_power_matches_potential_hessian() {
        let spec = NetworkSpec::table1_ring();
        let ss = recover_steady_state(&[0.0, 0.3, -0.2], &spec).unwrap();
        let lin = jacobian(&ss, &spec).unwrap();
        let v = spec.converter().v_dc_star;
        for k in 0..3 {
            let q = power_quantities(&ss, &spec, k).unwrap().q_x;
            let h = v * lin.hessian_u[(k, k)];
            assert!((q - h).abs() <= 1e-10 * q.abs().max(1.0), "{q} vs {h}");
        }
    }

    #[test]
    fn alpha_algebra_checkpoint() {
        let c = ConverterParams::table1();
        let res = (1.0 / 2f64.sqrt()) * 2.0 * c.l_f / (c.mu * c.v_dc_star);
        let g = gain_alpha_from_resolvent(res, &c);
        assert!((g.gain_y - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        let expect = c.mu * c.v_dc_star * c.v_dc_star / 4.0;
        assert!((g.alpha_gain.unwrap() - expect).abs() <= 1e-12 * expect);
        assert_eq!(g.alpha.unwrap(), g.alpha_gain.unwrap().max(g.alpha_resistive));

        let g = gain_alpha_from_resolvent(2.0 * c.l_f / (c.mu * c.v_dc_star), &c);
        assert!(!g.y_feasible && g.alpha.is_none());
        let dc = check_dc(&[1.0], g.gain_y, &c);
        assert!(!dc.ok && dc.detail.unwrap().contains("2L/(mu v_dc*)"));
    }

    #[test]
    fn ac_forms_at_reference_points() {
        let alpha = 3.0;
        let v = check_ac(&pq(5.0, 2.0 * alpha), alpha);
        assert!(v.ok && v.q_ok && v.margin > 0.0 && v.q_margin > 0.0);
        let v = check_ac(&pq(5.0, alpha), alpha);
        assert!(!v.ok && !v.q_ok && v.forms_agree);
        let v = check_ac(&pq(5.0, -1.0), 0.0);
        assert!(!v.ok && !v.powers_positive);
    }

    #[test]
    fn ac_forms_agree_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..50 {
            let p = 10f64.powf(rng.gen_range(-3.0..4.0));
            let q = 10f64.powf(rng.gen_range(-3.0..4.0));
            let alpha = q * rng.gen_range(0.2..2.0);
            let v = check_ac(&pq(p, q), alpha);
            assert!(v.forms_agree, "p {p} q {q} alpha {alpha}");
            assert_eq!(v.q_ok, q > alpha);
        }
    }

    proptest! {
        #[test]
        fn resistive_branch_is_monotone_in_r(r in 1e-3f64..10.0, dr in 0.0f64..10.0) {
            let mut c = ConverterParams::table1();
            c.r_f = r;
            let a = gain_alpha_from_resolvent(0.0, &c).alpha_resistive;
            c.r_f = r + dr;
            let b = gain_alpha_from_resolvent(0.0, &c).alpha_resistive;
            prop_assert!(b <= a);
        }

        #[test]
        fn ac_forms_agree(p in 1e-3f64..1e4, q in 1e-3f64..1e4, ratio in 0.1f64..3.0) {
            prop_assert!(check_ac(&pq(p, q), q * ratio).forms_agree);
        }
    }

    #[test]
    fn dc_lhs_decreases_with_eta() {
        let mut c = ConverterParams::table1();
        let q = [2000.0, 3000.0];
        let y = 0.01;
        let mut prev = f64::INFINITY;
        for e in [1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-6, 0.0] {
            c.eta = e;
            let lhs = check_dc(&q, y, &c).lhs.unwrap();
            assert!(lhs < prev);
            prev = lhs;
        }
        c.eta = 0.0;
        let v = c.v_dc_star;
        let rad = 4.0 / (v * v) * (y.powi(-2) - 1.0) - c.mu * c.mu * v * v / (4.0 * 2000.0 * 2000.0);
        assert!((prev - 0.5 * c.mu / rad.sqrt()).abs() <= 1e-14 * prev);
    }

    #[test]
    fn dc_radicand_boundary_is_infeasible() {
        let c = ConverterParams::table1();
        let y = 0.5f64;
        let v = c.v_dc_star;
        let q_bound = c.mu * v * v / (4.0 * (y.powi(-2) - 1.0).sqrt());
        let at = check_dc(&[q_bound * 2.0, q_bound], y, &c);
        assert!(!at.ok && at.margin.is_none());
        assert_eq!(at.worst_converter, 1);
        assert!((at.q_bound.unwrap() - q_bound).abs() <= 1e-12 * q_bound);
        let above = check_dc(&[q_bound * 2.0, q_bound * 1.001], y, &c);
        assert!(above.lhs.is_some());
        assert_eq!(above.worst_converter, 1);
    }

    #[test]
    fn dc_verdict_flips_with_kp() {
        let mut c = ConverterParams::table1();
        c.k_p = 1e3;
        let good = check_dc(&[1e6], 0.01, &c);
        assert!(good.ok && good.margin.unwrap() > 0.0);
        c.k_p = 1e-4;
        assert!(!check_dc(&[1e6], 0.01, &c).ok);
    }

    #[test]
    fn report_invariant_holds_on_the_default_ring() {
        let spec = NetworkSpec::table1_ring();
        let ss = recover_steady_state(&[0.0, 0.1, -0.1], &spec).unwrap();
        let lin = jacobian(&ss, &spec).unwrap();
        let r = evaluate(&ss, &lin, &spec).unwrap();
        let expect = r.y_feasible && r.converters.iter().all(|c| c.ac_ok) && r.dc_ok;
        assert_eq!(r.all_satisfied, expect);
        assert!(r.form_disagreements.is_empty());
        let json = crate::report::to_json_string(&r).unwrap();
        assert!(json.contains("power_factor"));
    }
}
