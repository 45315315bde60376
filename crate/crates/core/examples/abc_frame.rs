//! dq to abc conversion of a constant rotating-frame vector and back.

use convsync::simulate::{abc_to_dq, dq_to_abc};

fn main() -> convsync::Result<()> {
    let w = 2.0 * std::f64::consts::PI * 50.0;
    let times: Vec<f64> = (0..=8).map(|k| k as f64 * 2.5e-3).collect();
    let dq = vec![[325.0, -40.0]; times.len()];
    let abc = dq_to_abc(&dq, w, &times)?;
    let back = abc_to_dq(&abc, w, &times)?;
    for ((t, x), y) in times.iter().zip(&abc).zip(&back) {
        println!(
            "t {t:.4}  abc [{:8.2}, {:8.2}, {:8.2}]  dq [{:.6}, {:.6}]",
            x[0], x[1], x[2], y[0], y[1]
        );
    }
    Ok(())
}
