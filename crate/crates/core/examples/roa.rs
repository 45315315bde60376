//! Region-of-attraction sweep over angle directions and radii.
//!
//! Arguments: horizon in seconds (default 2) and seed (default 1).

use convsync::network::NetworkSpec;
use convsync::simulate::{default_directions, roa_sample, RoaSettings, SimSettings};
use convsync::steady_state::{recover_steady_state, solve_gamma_from_input};

fn main() -> convsync::Result<()> {
    let mut args = std::env::args().skip(1);
    let t_end: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(2.0);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1);
    let spec = NetworkSpec::table1_ring();
    let sol = solve_gamma_from_input(&spec.nominal_input(), &spec)?;
    let ss = recover_steady_state(&sol.gamma, &spec)?;
    let dirs = default_directions(3, 20, seed);
    let radii: Vec<f64> = (1..=8).map(|k| 0.5 * k as f64).collect();
    let settings = RoaSettings {
        sim: SimSettings {
            t_end,
            sample_dt: 5e-3,
            ..SimSettings::default()
        },
        ..RoaSettings::default()
    };
    let est = roa_sample(&ss, &spec, &dirs, &radii, &settings)?;
    for r in &radii {
        let ok = est
            .samples
            .iter()
            .filter(|s| s.radius == *r && s.verdict == convsync::simulate::Verdict::Converged)
            .count();
        println!("radius {r:.1}: {ok}/{} converged", dirs.len());
    }
    println!("all-converge radius {}", est.largest_all_converge_radius);
    Ok(())
}
