//! TOML run configuration.
//!
//! ```toml
//! scenario = "simulate"       # optional; the command line wins
//! seed = 1
//!
//! [network]
//! n = 3
//! edges = [[1, 2], [2, 3], [3, 1]]
//!
//! [network.converter]
//! mu = 0.33
//! # ... every field of ConverterParams
//!
//! [network.line]
//! r_line = 0.2
//! l_line = 5e-5
//!
//! [steady_state]              # optional
//! input = [16.5, 16.5, 16.5]  # or `gamma = [...]`
//!
//! [simulate]                  # optional
//! t_end = 2.0
//! initial_gamma = [-6.0, -2.0, -13.15]
//! abc = true
//!
//! [roa]                       # optional
//! radii = [0.5, 1.0, 1.5]
//! random_directions = 20
//!
//! [output]
//! dir = "out"
//! ```
//!
//! Unknown keys are rejected. Relative output directories resolve against the
//! current working directory.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{ConverterParams, LineParams, NetworkSpec};
use crate::simulate::{ConvergenceSettings, RoaSettings, SimSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    SteadyState,
    Linearize,
    Certify,
    Conditions,
    Simulate,
    Roa,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::SteadyState,
        Scenario::Linearize,
        Scenario::Certify,
        Scenario::Conditions,
        Scenario::Simulate,
        Scenario::Roa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::SteadyState => "steady-state",
            Scenario::Linearize => "linearize",
            Scenario::Certify => "certify",
            Scenario::Conditions => "conditions",
            Scenario::Simulate => "simulate",
            Scenario::Roa => "roa",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Scenario::ALL.iter().map(|s| s.name()).collect();
                Error::Config(format!(
                    "unknown scenario `{s}`, expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    scenario: Option<Scenario>,
    seed: Option<u64>,
    network: RawNetwork,
    #[serde(default)]
    steady_state: SteadyStateConfig,
    #[serde(default)]
    simulate: SimulateConfig,
    #[serde(default)]
    roa: RoaConfig,
    #[serde(default)]
    output: OutputConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNetwork {
    n: usize,
    edges: Vec<[usize; 2]>,
    converter: ConverterParams,
    line: LineParams,
}

/// How the operating point is chosen. With neither field set the input is
/// `i_dc*` on every node.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteadyStateConfig {
    /// Target input per node; node 1 acts as slack.
    pub input: Option<Vec<f64>>,
    /// Equilibrium angles given directly.
    pub gamma: Option<Vec<f64>>,
    /// Starting angles for the input inversion.
    pub guess: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub t_end: Option<f64>,
    pub rel_tol: Option<f64>,
    pub abs_tol: Option<f64>,
    pub sample_dt: Option<f64>,
    pub max_steps: Option<usize>,
    /// Absolute initial angles; other states start at the steady state.
    pub initial_gamma: Option<Vec<f64>>,
    /// Also write the capacitor voltages in the abc frame.
    #[serde(default)]
    pub abc: bool,
    pub eps: Option<f64>,
    pub window: Option<f64>,
}

impl SimulateConfig {
    pub fn settings(&self) -> SimSettings {
        let d = SimSettings::default();
        SimSettings {
            t_end: self.t_end.unwrap_or(d.t_end),
            rel_tol: self.rel_tol.unwrap_or(d.rel_tol),
            abs_tol: self.abs_tol.unwrap_or(d.abs_tol),
            sample_dt: self.sample_dt.unwrap_or(d.sample_dt),
            max_steps: self.max_steps.unwrap_or(d.max_steps),
        }
    }

    pub fn convergence(&self) -> ConvergenceSettings {
        ConvergenceSettings {
            eps: self.eps,
            window: self.window.unwrap_or(ConvergenceSettings::default().window),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoaConfig {
    #[serde(default = "default_radii")]
    pub radii: Vec<f64>,
    #[serde(default = "default_random_directions")]
    pub random_directions: usize,
    pub t_end: Option<f64>,
    pub rel_tol: Option<f64>,
    pub abs_tol: Option<f64>,
    pub sample_dt: Option<f64>,
    pub eps: Option<f64>,
    pub window: Option<f64>,
}

fn default_radii() -> Vec<f64> {
    (1..=8).map(|k| 0.5 * k as f64).collect()
}

fn default_random_directions() -> usize {
    20
}

impl Default for RoaConfig {
    fn default() -> Self {
        Self {
            radii: default_radii(),
            random_directions: default_random_directions(),
            t_end: None,
            rel_tol: None,
            abs_tol: None,
            sample_dt: None,
            eps: None,
            window: None,
        }
    }
}

impl RoaConfig {
    pub fn settings(&self) -> RoaSettings {
        let d = RoaSettings::default();
        RoaSettings {
            sim: SimSettings {
                t_end: self.t_end.unwrap_or(d.sim.t_end),
                rel_tol: self.rel_tol.unwrap_or(d.sim.rel_tol),
                abs_tol: self.abs_tol.unwrap_or(d.sim.abs_tol),
                sample_dt: self.sample_dt.unwrap_or(d.sim.sample_dt),
                max_steps: d.sim.max_steps,
            },
            conv: ConvergenceSettings {
                eps: self.eps,
                window: self.window.unwrap_or(d.conv.window),
            },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}

/// A validated configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub scenario: Option<Scenario>,
    pub seed: u64,
    pub spec: NetworkSpec,
    pub steady_state: SteadyStateConfig,
    pub simulate: SimulateConfig,
    pub roa: RoaConfig,
    pub out_dir: PathBuf,
    /// Raw file contents, hashed into every output's metadata.
    pub source: Vec<u8>,
}

/// Scalar overrides from the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub t_end: Option<f64>,
}

impl RunConfig {
    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(d) = &o.out_dir {
            self.out_dir = d.clone();
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(t) = o.t_end {
            self.simulate.t_end = Some(t);
            self.roa.t_end = Some(t);
        }
        self.validate_settings()
    }

    fn validate_settings(&self) -> Result<()> {
        let n = self.spec.n();
        let len_check = |name: &str, v: &Option<Vec<f64>>| -> Result<()> {
            match v {
                Some(v) if v.len() != n => Err(Error::Config(format!(
                    "{name} has {} entries, network has {n} nodes",
                    v.len()
                ))),
                Some(v) if v.iter().any(|x| !x.is_finite()) => {
                    Err(Error::Config(format!("{name} must be finite")))
                }
                _ => Ok(()),
            }
        };
        len_check("steady_state.input", &self.steady_state.input)?;
        len_check("steady_state.gamma", &self.steady_state.gamma)?;
        len_check("steady_state.guess", &self.steady_state.guess)?;
        len_check("simulate.initial_gamma", &self.simulate.initial_gamma)?;
        if self.steady_state.input.is_some() && self.steady_state.gamma.is_some() {
            return Err(Error::Config(
                "steady_state: give either `input` or `gamma`, not both".into(),
            ));
        }
        let prefix = |ctx: &str, e: Error| match e {
            Error::InvalidSpec(m) => Error::Config(format!("{ctx}: {m}")),
            other => other,
        };
        self.simulate
            .settings()
            .validate()
            .map_err(|e| prefix("simulate", e))?;
        let roa = self.roa.settings();
        roa.sim.validate().map_err(|e| prefix("roa", e))?;
        for (ctx, window, eps) in [
            ("simulate", self.simulate.convergence().window, self.simulate.eps),
            ("roa", roa.conv.window, roa.conv.eps),
        ] {
            if !(window > 0.0) {
                return Err(Error::Config(format!("{ctx}.window must be positive")));
            }
            if eps.is_some_and(|e| !(e > 0.0)) {
                return Err(Error::Config(format!("{ctx}.eps must be positive")));
            }
        }
        let r = &self.roa.radii;
        if r.is_empty() || r[0] <= 0.0 || r.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config(
                "roa.radii must be non-empty, positive and strictly increasing".into(),
            ));
        }
        Ok(())
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let edges = raw.network.edges.iter().map(|e| (e[0], e[1])).collect();
    let spec = NetworkSpec::new(
        raw.network.n,
        edges,
        raw.network.converter,
        raw.network.line,
    )
    .map_err(|e| match e {
        Error::InvalidSpec(m) => Error::Config(format!("network: {m}")),
        other => other,
    })?;
    let cfg = RunConfig {
        scenario: raw.scenario,
        seed: raw.seed.unwrap_or(0),
        spec,
        steady_state: raw.steady_state,
        simulate: raw.simulate,
        roa: raw.roa,
        out_dir: raw.output.dir.unwrap_or_else(|| PathBuf::from("out")),
        source: text.as_bytes().to_vec(),
    };
    cfg.validate_settings()?;
    Ok(cfg)
}

/// The bundled three-converter configuration.
pub const TABLE1_CONFIG: &str = include_str!("../configs/table1.cfg");

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_config_reproduces_the_parameter_table() {
        let cfg = parse_config_str(TABLE1_CONFIG).unwrap();
        assert_eq!(*cfg.spec.converter(), ConverterParams::table1());
        assert_eq!(*cfg.spec.line(), LineParams::table1());
        assert_eq!(cfg.spec, NetworkSpec::table1_ring());
        let c = cfg.spec.converter();
        assert_eq!(c.i_dc_star, 16.5);
        assert_eq!(c.v_dc_star, 1000.0);
        assert_eq!(c.k_p, 0.099);
        assert_eq!(c.eta, 3.142e-4);
    }

    #[test]
    fn mu_out_of_range_is_named() {
        let text = TABLE1_CONFIG.replace("mu = 0.33", "mu = 1.5");
        let err = parse_config_str(&text).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("mu must lie in (0,1)"), "{err}");
    }

    #[test]
    fn missing_edges_is_a_config_error() {
        let text: String = TABLE1_CONFIG
            .lines()
            .filter(|l| !l.starts_with("edges"))
            .collect::<Vec<_>>()
            .join("\n");
        let err = parse_config_str(&text).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("edges"), "{err}");
    }

    #[test]
    fn unknown_keys_report_their_location() {
        let text = TABLE1_CONFIG.replace("r_line = 0.2", "r_line = 0.2\nr_lien = 0.3");
        let err = parse_config_str(&text).unwrap_err().to_string();
        assert!(err.contains("r_lien") && err.contains("line"), "{err}");
    }

    #[test]
    fn settings_are_validated() {
        let bad = format!("{TABLE1_CONFIG}\n[roa]\nradii = [1.0, 0.5]\n");
        assert!(parse_config_str(&bad).is_err());
        let bad = TABLE1_CONFIG.replace("t_end = 2.0", "t_end = -1.0");
        assert!(parse_config_str(&bad).is_err());
        let bad = TABLE1_CONFIG.replace(
            "initial_gamma = [-6.0, -2.0, -13.15]",
            "initial_gamma = [0.0]",
        );
        assert!(parse_config_str(&bad).is_err());
        assert!("bogus".parse::<Scenario>().is_err());
        assert_eq!("roa".parse::<Scenario>().unwrap(), Scenario::Roa);
    }

    #[test]
    fn overrides_replace_scalars() {
        let mut cfg = parse_config_str(TABLE1_CONFIG).unwrap();
        cfg.apply(&Overrides {
            out_dir: Some("elsewhere".into()),
            seed: Some(9),
            t_end: Some(0.5),
        })
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.simulate.settings().t_end, 0.5);
        assert_eq!(cfg.roa.settings().sim.t_end, 0.5);
        assert_eq!(cfg.out_dir, PathBuf::from("elsewhere"));
        assert!(cfg
            .apply(&Overrides {
                t_end: Some(0.0),
                ..Overrides::default()
            })
            .is_err());
    }
}
