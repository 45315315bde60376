//! Command-line front end: scenario dispatch and report files.
//!
//! Exit status 0 on success, 2 for configuration errors, 3 when a stability
//! hypothesis fails and 4 for numerical failures. On failure `error.json` is
//! written next to whatever partial output exists.

use std::path::PathBuf;

use clap::Parser;
use serde::Serialize;

use crate::certificate::build_certificate;
use crate::conditions;
use crate::config::{parse_config, Overrides, RunConfig, Scenario};
use crate::error::{Assumption, Error, Result};
use crate::linearize::{eigen_split, jacobian};
use crate::network::{NetworkModel, SystemState};
use crate::report::{csv_error, csv_writer, format_float, write_json, Metadata};
use crate::simulate::{self, angle_initial_state, default_directions, roa_sample};
use crate::steady_state::{recover_steady_state, solve_gamma_from_input_with_guess, SteadyState};

#[derive(Debug, Parser)]
#[command(name = "convsync", version, about = "Converter network steady states, certificates and simulation")]
pub struct Args {
    /// steady-state | linearize | certify | conditions | simulate | roa
    pub scenario: String,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "t-end")]
    pub t_end: Option<f64>,
}

/// Parse arguments, run, print a one-line summary and return the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let scenario = match args.scenario.parse::<Scenario>() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let mut cfg = match parse_config(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let overrides = Overrides {
        out_dir: args.out,
        seed: args.seed,
        t_end: args.t_end,
    };
    if let Err(e) = cfg.apply(&overrides) {
        eprintln!("error: {e}");
        return e.exit_code();
    }
    match run(scenario, &cfg) {
        Ok(out) => {
            for f in &out.files {
                println!("wrote {}", f.display());
            }
            println!("{}", out.summary);
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub files: Vec<PathBuf>,
    pub summary: String,
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    scenario: &'a str,
    message: String,
    exit_code: i32,
    assumption: Option<Assumption>,
    measured: Option<f64>,
}

/// Run one scenario, writing its artifacts under `cfg.out_dir`.
pub fn run(scenario: Scenario, cfg: &RunConfig) -> Result<RunOutput> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    let meta = Metadata::new(&cfg.source);
    let mut files = Vec::new();
    let result = dispatch(scenario, cfg, &meta, &mut files);
    if let Err(e) = &result {
        let (assumption, measured) = match e {
            Error::AssumptionViolated {
                assumption,
                measured,
                ..
            } => (Some(*assumption), *measured),
            _ => (None, None),
        };
        let path = cfg.out_dir.join("error.json");
        let report = ErrorReport {
            scenario: scenario.name(),
            message: e.to_string(),
            exit_code: e.exit_code(),
            assumption,
            measured,
        };
        if write_json(&path, &meta, &report).is_ok() {
            files.push(path);
        }
    }
    result.map(|summary| RunOutput { files, summary })
}

fn dispatch(
    scenario: Scenario,
    cfg: &RunConfig,
    meta: &Metadata,
    files: &mut Vec<PathBuf>,
) -> Result<String> {
    let out = |name: &str| cfg.out_dir.join(name);
    let (ss, origin) = operating_point(cfg)?;
    match scenario {
        Scenario::SteadyState => {
            let model = NetworkModel::new(&cfg.spec);
            let f = model.vector_field(&ss.z_star, &ss.u_star)?;
            let report = SteadyStateReport {
                origin,
                gamma_star: ss.gamma_star.clone(),
                u_star: ss.u_star.clone(),
                electrical_power: ss.electrical_power(),
                xi: ss.xi,
                residual_norm: f.norm(),
                residual_bound: 1e-9 * (1.0 + ss.z_star.norm()),
                z_star: ss.z_star.clone(),
            };
            let path = out("steady_state.json");
            write_json(&path, meta, &report)?;
            files.push(path);
            Ok(format!(
                "steady state: gamma* = {:?}, residual {:.3e}",
                report.gamma_star, report.residual_norm
            ))
        }
        Scenario::Linearize => {
            let lin = jacobian(&ss, &cfg.spec)?;
            let split = eigen_split(&lin, None)?;
            let path = out("eigenvalues.csv");
            let mut w = csv_writer(&path, meta)?;
            w.write_record(["index", "re", "im", "class"]).map_err(csv_error)?;
            for (k, l) in split.eigenvalues.iter().enumerate() {
                let class = if l.norm() <= split.tol_zero {
                    "zero"
                } else if l.re < -split.tol_zero {
                    "stable"
                } else {
                    "unstable"
                };
                w.write_record([
                    k.to_string(),
                    format_float(l.re),
                    format_float(l.im),
                    class.to_string(),
                ])
                .map_err(csv_error)?;
            }
            w.flush()?;
            files.push(path);
            let kernel_residual = (&lin.jacobian * &lin.kernel_vector).norm();
            let verdict = LinearizeReport {
                origin,
                single_zero_and_stable: split.single_zero_and_stable(),
                split: split.clone(),
                kernel_vector: lin.kernel_vector.iter().copied().collect(),
                kernel_residual,
                a11_abscissa: crate::linalg::spectral_abscissa(&lin.a11)?,
            };
            let path = out("linearize.json");
            write_json(&path, meta, &verdict)?;
            files.push(path);
            if !verdict.single_zero_and_stable {
                return Err(Error::violated(
                    "linearize",
                    Assumption::SingleZeroEigenvalue,
                    format!(
                        "{} zero mode(s), {} unstable eigenvalue(s)",
                        split.zero_modes, split.unstable_count
                    ),
                    Some(split.zero_modes as f64),
                ));
            }
            Ok(format!(
                "linearize: one zero eigenvalue, spectral gap {:.6e}",
                split.spectral_gap
            ))
        }
        Scenario::Certify => {
            let lin = jacobian(&ss, &cfg.spec)?;
            let cert = build_certificate(&lin)?;
            let path = out("certificate.json");
            write_json(&path, meta, &cert.report())?;
            files.push(path);
            if !cert.checks.all() {
                return Err(Error::numerical(
                    "certificate",
                    format!("certificate checks failed: {:?}", cert.checks),
                ));
            }
            Ok(format!(
                "certificate: P min eigenvalue {:.6e}, residual {:.3e}",
                cert.report().p_min_eigenvalue,
                cert.relative_residual
            ))
        }
        Scenario::Conditions => {
            let lin = jacobian(&ss, &cfg.spec)?;
            let report = conditions::evaluate(&ss, &lin, &cfg.spec)?;
            let path = out("conditions.json");
            write_json(&path, meta, &report)?;
            files.push(path);
            if let Some(k) = report.converters.iter().position(|c| !c.ac_ok) {
                let c = &report.converters[k];
                return Err(Error::violated(
                    "conditions",
                    Assumption::AcPowerFactor,
                    match (c.ac, report.alpha) {
                        (Some(v), Some(a)) => format!(
                            "converter {}: Q_x = {:.6e}, alpha = {:.6e}, margin {:.6e}",
                            k + 1,
                            c.power.q_x,
                            a,
                            v.margin
                        ),
                        _ => format!(
                            "converter {}: alpha undefined ({})",
                            k + 1,
                            report.notes.join("; ")
                        ),
                    },
                    c.ac.map(|v| v.margin),
                ));
            }
            if !report.dc_ok {
                return Err(Error::violated(
                    "conditions",
                    Assumption::DcDamping,
                    report
                        .dc
                        .detail
                        .clone()
                        .unwrap_or_else(|| format!("margin {:?}", report.dc.margin)),
                    report.dc.margin,
                ));
            }
            Ok("conditions: all satisfied".into())
        }
        Scenario::Simulate => {
            let z0 = match &cfg.simulate.initial_gamma {
                Some(g) => angle_initial_state(&ss, g)?,
                None => ss.z_star.clone(),
            };
            let settings = cfg.simulate.settings();
            let conv = cfg.simulate.convergence();
            let traj = match simulate::simulate(&cfg.spec, &ss, &z0, &settings, &conv) {
                Ok(t) => t,
                Err(Error::Stiffness { t, h, partial }) => {
                    let path = out("trajectory_partial.csv");
                    if !partial.states.is_empty() {
                        partial.write_csv(&path, meta)?;
                        files.push(path);
                    }
                    return Err(Error::Stiffness { t, h, partial });
                }
                Err(e) => return Err(e),
            };
            let path = out("trajectory.csv");
            traj.write_csv(&path, meta)?;
            files.push(path);
            if cfg.simulate.abc {
                let path = out("trajectory_abc.csv");
                traj.write_abc_csv(&path, meta, cfg.spec.converter().omega_star)?;
                files.push(path);
            }
            let last = traj.final_state().cloned().unwrap_or_else(|| z0.clone());
            let v_star = cfg.spec.converter().v_dc_star;
            let report = SimulateReport {
                initial_gamma: z0.gamma.clone(),
                settings,
                eps: conv.eps(&ss),
                window: conv.window,
                t_final: traj.times.last().copied().unwrap_or(0.0),
                accepted_steps: traj.accepted_steps,
                rejected_steps: traj.rejected_steps,
                diverged: traj.diverged,
                converged: traj.converged,
                final_orbit_distance: traj.final_orbit_distance,
                limit_theta: traj.limit_theta,
                final_v_dc: last.v_dc.clone(),
                max_v_dc_relative_error: last
                    .v_dc
                    .iter()
                    .map(|v| (v - v_star).abs() / v_star)
                    .fold(0.0, f64::max),
            };
            let path = out("simulate.json");
            write_json(&path, meta, &report)?;
            files.push(path);
            Ok(format!(
                "simulate: converged {}, final orbit distance {:.6e}",
                report.converged,
                report.final_orbit_distance.unwrap_or(f64::NAN)
            ))
        }
        Scenario::Roa => {
            let dirs = default_directions(ss.n(), cfg.roa.random_directions, cfg.seed);
            let est = roa_sample(&ss, &cfg.spec, &dirs, &cfg.roa.radii, &cfg.roa.settings())?;
            let path = out("roa.json");
            write_json(&path, meta, &RoaReport { seed: cfg.seed, estimate: &est })?;
            files.push(path);
            let path = out("roa_samples.csv");
            est.write_samples_csv(&path, meta)?;
            files.push(path);
            Ok(format!(
                "roa: all-converge radius {}, {} non-converging sample(s)",
                est.largest_all_converge_radius,
                est.divergent_witnesses.len()
            ))
        }
    }
}

/// How the operating point was obtained.
#[derive(Debug, Clone, Serialize)]
pub struct OperatingPointOrigin {
    pub source: &'static str,
    pub target_input: Option<Vec<f64>>,
    pub slack_mismatch: Option<f64>,
    pub newton_iterations: Option<usize>,
}

/// Steady state from the `[steady_state]` table.
pub fn operating_point(cfg: &RunConfig) -> Result<(SteadyState, OperatingPointOrigin)> {
    if let Some(g) = &cfg.steady_state.gamma {
        let ss = recover_steady_state(g, &cfg.spec)?;
        return Ok((
            ss,
            OperatingPointOrigin {
                source: "angles",
                target_input: None,
                slack_mismatch: None,
                newton_iterations: None,
            },
        ));
    }
    let target = cfg
        .steady_state
        .input
        .clone()
        .unwrap_or_else(|| cfg.spec.nominal_input());
    let guess = cfg
        .steady_state
        .guess
        .clone()
        .unwrap_or_else(|| vec![0.0; cfg.spec.n()]);
    let sol = solve_gamma_from_input_with_guess(&target, &cfg.spec, &guess)?;
    let ss = recover_steady_state(&sol.gamma, &cfg.spec)?;
    Ok((
        ss,
        OperatingPointOrigin {
            source: "input",
            target_input: Some(target),
            slack_mismatch: Some(sol.slack_mismatch),
            newton_iterations: Some(sol.iterations),
        },
    ))
}

#[derive(Serialize)]
struct SteadyStateReport {
    origin: OperatingPointOrigin,
    gamma_star: Vec<f64>,
    u_star: Vec<f64>,
    electrical_power: Vec<f64>,
    xi: f64,
    residual_norm: f64,
    residual_bound: f64,
    z_star: SystemState,
}

#[derive(Serialize)]
struct LinearizeReport {
    origin: OperatingPointOrigin,
    single_zero_and_stable: bool,
    split: crate::linearize::EigenSplit,
    kernel_vector: Vec<f64>,
    kernel_residual: f64,
    a11_abscissa: f64,
}

#[derive(Serialize)]
struct SimulateReport {
    initial_gamma: Vec<f64>,
    settings: simulate::SimSettings,
    eps: f64,
    window: f64,
    t_final: f64,
    accepted_steps: usize,
    rejected_steps: usize,
    diverged: bool,
    converged: bool,
    final_orbit_distance: Option<f64>,
    limit_theta: Option<f64>,
    final_v_dc: Vec<f64>,
    max_v_dc_relative_error: f64,
}

#[derive(Serialize)]
struct RoaReport<'a> {
    seed: u64,
    estimate: &'a simulate::RoaEstimate,
}

/// Remove the timestamp line/field so two runs can be compared byte for byte.
pub fn strip_timestamp(text: &str) -> String {
    text.lines()
        .filter(|l| !l.contains("timestamp"))
        .collect::<Vec<_>>()
        .join("\n")
}
