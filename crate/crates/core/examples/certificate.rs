//! Attempt the separable Lyapunov certificate at two operating points of the ring.
//!
//! Both fail: at the input-derived point the angle/DC block is not Hurwitz,
//! and at the synchronous point the coupling gain is far above one.

use convsync::certificate::build_certificate;
use convsync::linearize::jacobian;
use convsync::network::NetworkSpec;
use convsync::steady_state::{recover_steady_state, solve_gamma_from_input};

fn main() -> convsync::Result<()> {
    let spec = NetworkSpec::table1_ring();
    let sol = solve_gamma_from_input(&spec.nominal_input(), &spec)?;
    for gamma in [sol.gamma.clone(), vec![0.0; 3]] {
        let ss = recover_steady_state(&gamma, &spec)?;
        let lin = jacobian(&ss, &spec)?;
        match build_certificate(&lin) {
            Ok(cert) => {
                let r = cert.report();
                println!("gamma* {gamma:?}: certificate found, P min eig {:.4e}", r.p_min_eigenvalue);
                println!("  checks {:?}", r.checks);
            }
            Err(e) => println!("gamma* {gamma:?}: {e} (exit code {})", e.exit_code()),
        }
    }
    Ok(())
}
