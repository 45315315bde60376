//! Integrate from perturbed angles and classify convergence to the orbit.
//!
//! `cargo run --release --example simulate -- 100` sets the horizon in seconds.

use convsync::network::NetworkSpec;
use convsync::simulate::{angle_initial_state, simulate, ConvergenceSettings, SimSettings};
use convsync::steady_state::{recover_steady_state, solve_gamma_from_input};

fn main() -> convsync::Result<()> {
    let t_end: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2.0);
    let spec = NetworkSpec::table1_ring();
    let sol = solve_gamma_from_input(&spec.nominal_input(), &spec)?;
    let ss = recover_steady_state(&sol.gamma, &spec)?;
    let z0 = angle_initial_state(&ss, &[-6.0, -2.0, -13.15])?;
    let settings = SimSettings {
        t_end,
        sample_dt: (t_end / 2000.0).max(1e-3),
        ..SimSettings::default()
    };
    let traj = simulate(&spec, &ss, &z0, &settings, &ConvergenceSettings::default())?;
    let step = (traj.times.len() / 10).max(1);
    for (t, z) in traj.times.iter().zip(&traj.states).step_by(step) {
        println!("t {t:8.3}  v_dc {:?}", z.v_dc.iter().map(|v| v.round()).collect::<Vec<_>>());
    }
    println!(
        "converged {}, final orbit distance {:.4e}, steps {} accepted / {} rejected",
        traj.converged,
        traj.final_orbit_distance.unwrap_or(f64::NAN),
        traj.accepted_steps,
        traj.rejected_steps
    );
    Ok(())
}
