//! Per-converter power quantities and the AC/DC sufficient conditions.

use convsync::conditions::evaluate;
use convsync::linearize::jacobian;
use convsync::network::NetworkSpec;
use convsync::steady_state::recover_steady_state;

fn main() -> convsync::Result<()> {
    let spec = NetworkSpec::table1_ring();
    let ss = recover_steady_state(&[0.0, 0.0, 0.0], &spec)?;
    let lin = jacobian(&ss, &spec)?;
    let report = evaluate(&ss, &lin, &spec)?;
    for (k, c) in report.converters.iter().enumerate() {
        println!(
            "converter {}: P_x {:.4e}  Q_x {:.4e}  pf {:.4}  ac_ok {}",
            k + 1,
            c.power.p_x,
            c.power.q_x,
            c.power.power_factor,
            c.ac_ok
        );
    }
    println!("Y = {:?}, alpha = {:?}", report.gain_y, report.alpha);
    println!("dc_ok {}, all satisfied {}", report.dc_ok, report.all_satisfied);
    for note in &report.notes {
        println!("note: {note}");
    }
    Ok(())
}
