//! Jacobian at the steady state, its eigenvalue split and the orbit kernel.

use convsync::linalg::spectral_abscissa;
use convsync::linearize::{eigen_split, jacobian};
use convsync::network::NetworkSpec;
use convsync::steady_state::{recover_steady_state, solve_gamma_from_input};

fn main() -> convsync::Result<()> {
    for (name, spec) in [
        ("ring", NetworkSpec::table1_ring()),
        ("pair", NetworkSpec::table1_pair()),
    ] {
        let sol = solve_gamma_from_input(&spec.nominal_input(), &spec)?;
        let ss = recover_steady_state(&sol.gamma, &spec)?;
        let lin = jacobian(&ss, &spec)?;
        let split = eigen_split(&lin, None)?;
        println!("{name}: gamma* = {:?}", ss.gamma_star);
        println!(
            "  zero modes {}, stable {}, unstable {}, gap {:.4e}",
            split.zero_modes, split.stable_count, split.unstable_count, split.spectral_gap
        );
        println!("  A11 abscissa {:.4e}", spectral_abscissa(&lin.a11)?);
        let v = lin.kernel_vector.normalize();
        let n = ss.n();
        let head: Vec<String> = v.iter().take(2 * n).map(|x| format!("{x:.4}")).collect();
        println!("  normalized kernel (gamma, v_dc) block: [{}]", head.join(", "));
        println!("  |J v| = {:.3e}", (&lin.jacobian * &v).norm());
    }
    Ok(())
}
