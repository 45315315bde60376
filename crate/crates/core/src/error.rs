use std::fmt;

/// Stability hypotheses the certificate pipeline depends on.
///
/// Each variant is checked numerically rather than assumed; a violation is
/// reported through [`Error::AssumptionViolated`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Assumption {
    /// The Jacobian has exactly one zero eigenvalue and every other one in the open left half-plane.
    SingleZeroEigenvalue,
    /// The angle/DC-voltage block `A11` of the Jacobian is Hurwitz.
    AngleDcBlockHurwitz,
    /// The reduced AC matrix `F` is Hurwitz and the coupling transfer function has H-infinity norm below one.
    SmallGain,
    /// Per-converter AC-side power-factor condition (equivalently `Q_x,k > alpha`).
    AcPowerFactor,
    /// Network-level DC-side damping condition on `K_p`.
    DcDamping,
}

impl Assumption {
    pub fn describe(self) -> &'static str {
        match self {
            Assumption::SingleZeroEigenvalue => {
                "single zero eigenvalue with all other eigenvalues in the open left half-plane"
            }
            Assumption::AngleDcBlockHurwitz => "angle/DC-voltage block A11 Hurwitz",
            Assumption::SmallGain => "F Hurwitz and ||G||_inf < 1 (small-gain coupling)",
            Assumption::AcPowerFactor => "AC-side power-factor condition cos(phi_k) < sqrt(1 - alpha^2/(P_x,k^2 + alpha^2))",
            Assumption::DcDamping => "DC-side damping condition on K_p",
        }
    }
}

impl fmt::Display for Assumption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.describe())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{module}: numerically singular matrix ({detail})")]
    Singular { module: &'static str, detail: String },

    #[error("{module}: matrix is not Hurwitz (spectral abscissa {abscissa:.6e}); no unique solution")]
    NotHurwitz { module: &'static str, abscissa: f64 },

    #[error("matrix_algebra: Hamiltonian has an eigenvalue within {margin:.1e} of the imaginary axis (re = {real_part:.3e}); H-infinity norm is not below one")]
    ImaginaryAxisEigenvalue { real_part: f64, margin: f64 },

    #[error("matrix_algebra: stable invariant subspace is degenerate (X1 singular, rcond {rcond:.3e})")]
    SubspaceDegenerate { rcond: f64 },

    #[error("matrix_algebra: input matrix is not symmetric (relative asymmetry {asymmetry:.3e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("{module}: assumption violated: {assumption}; {detail}")]
    AssumptionViolated {
        module: &'static str,
        assumption: Assumption,
        detail: String,
        /// Diagnostic value attached to the failure (e.g. the measured H-infinity norm).
        measured: Option<f64>,
    },

    #[error("{module}: numerical failure: {detail}")]
    Numerical { module: &'static str, detail: String },

    #[error("simulate: step size underflow at t = {t:.6e} s (h = {h:.3e}); system too stiff for the explicit integrator")]
    Stiffness {
        t: f64,
        h: f64,
        partial: Box<crate::simulate::Trajectory>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn numerical(module: &'static str, detail: impl Into<String>) -> Self {
        Error::Numerical {
            module,
            detail: detail.into(),
        }
    }

    pub(crate) fn violated(
        module: &'static str,
        assumption: Assumption,
        detail: impl Into<String>,
        measured: Option<f64>,
    ) -> Self {
        Error::AssumptionViolated {
            module,
            assumption,
            detail: detail.into(),
            measured,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidSpec(_) => 2,
            Error::AssumptionViolated { .. }
            | Error::ImaginaryAxisEigenvalue { .. }
            | Error::NotHurwitz { .. } => 3,
            _ => 4,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
