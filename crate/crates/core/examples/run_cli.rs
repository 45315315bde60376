//! Drive the command-line pipeline on the bundled configuration.

use convsync::cli::run;
use convsync::config::{parse_config_str, Scenario, TABLE1_CONFIG};

fn main() {
    let mut cfg = parse_config_str(TABLE1_CONFIG).expect("bundled config parses");
    cfg.out_dir = std::env::temp_dir().join("convsync-example");
    for s in [Scenario::SteadyState, Scenario::Linearize, Scenario::Conditions] {
        match run(s, &cfg) {
            Ok(out) => println!("{s}: {}", out.summary),
            Err(e) => println!("{s}: exit {} ({e})", e.exit_code()),
        }
    }
    println!("outputs in {}", cfg.out_dir.display());
}
