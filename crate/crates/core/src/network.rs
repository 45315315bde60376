//! Multi-converter network model in the rotating dq frame.
//!
//! The closed-loop state of `n` converters joined by `m` lines is packed as
//!
//! ```text
//! z = [ gamma (n) | v_dc (n) | i_f (2n) | v_c (2n) | i_line (2m) ]
//! ```
//!
//! and evolves as
//!
//! ```text
//! gamma'        = eta (v_dc - v_dc* 1)
//! C_dc v_dc'    = -K_p (v_dc - v_dc* 1) - mu/2 Rot(gamma)^T i_f + u
//! L i_f'        = -Z_R i_f + mu/2 Rot(gamma) v_dc - v_c
//! C v_c'        = -Z_C v_c + i_f - B i_line
//! L_line i_line' = -Z_line i_line + B^T v_c
//! ```
//!
//! with `Rot(gamma) = diag(r(gamma_k))`, `r(g) = [-sin g, cos g]^T`, and every
//! impedance of the form `a I + b J` where `J = [[0, -1], [1, 0]]` per node.
//! The field is equivariant under shifting every angle by `theta` while
//! rotating every AC pair by `R(theta)`; see [`SystemState::apply_symmetry`].

use std::f64::consts::PI;
use std::ops::Range;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-converter electrical and control parameters (SI units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConverterParams {
    /// Modulation amplitude, in (0, 1).
    pub mu: f64,
    /// Matching gain (rad / (V s)).
    pub eta: f64,
    /// Lumped DC damping gain `G_dc + K_p_hat` (S).
    pub k_p: f64,
    pub c_dc: f64,
    pub g_dc: f64,
    /// Filter inductance (H).
    pub l_f: f64,
    /// Filter resistance (Ohm).
    pub r_f: f64,
    /// Output capacitance (F).
    pub c_f: f64,
    /// Load conductance (S).
    pub g_load: f64,
    pub v_dc_star: f64,
    pub i_dc_star: f64,
    /// Nominal grid frequency (rad/s).
    #[serde(default = "default_omega_star")]
    pub omega_star: f64,
}

pub(crate) fn default_omega_star() -> f64 {
    2.0 * PI * 50.0
}

impl ConverterParams {
    /// The three-converter parameter set used throughout the examples and tests.
    pub fn table1() -> Self {
        Self {
            mu: 0.33,
            eta: 3.142e-4,
            k_p: 0.099,
            c_dc: 1e-3,
            g_dc: 1e-5,
            l_f: 5e-4,
            r_f: 0.2,
            c_f: 1e-5,
            g_load: 0.1,
            v_dc_star: 1000.0,
            i_dc_star: 16.5,
            omega_star: default_omega_star(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if !(self.mu > 0.0 && self.mu < 1.0) {
            return bad(format!("mu must lie in (0,1), got {}", self.mu));
        }
        for (name, v) in [
            ("eta", self.eta),
            ("c_dc", self.c_dc),
            ("g_dc", self.g_dc),
            ("l_f", self.l_f),
            ("r_f", self.r_f),
            ("c_f", self.c_f),
            ("g_load", self.g_load),
            ("omega_star", self.omega_star),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be strictly positive, got {v}"));
            }
        }
        if !(self.k_p >= self.g_dc) {
            return bad(format!(
                "k_p must be at least g_dc ({}), got {}",
                self.g_dc, self.k_p
            ));
        }
        if !(self.v_dc_star >= 1.0) {
            return bad(format!("v_dc_star must be >= 1, got {}", self.v_dc_star));
        }
        if !self.i_dc_star.is_finite() {
            return bad("i_dc_star must be finite".into());
        }
        Ok(())
    }

    /// `xi = mu^2 v_dc* / 4`.
    pub fn xi(&self) -> f64 {
        self.mu * self.mu * self.v_dc_star / 4.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineParams {
    pub r_line: f64,
    pub l_line: f64,
}

impl LineParams {
    pub fn table1() -> Self {
        Self {
            r_line: 0.2,
            l_line: 5e-5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_line > 0.0 && self.l_line > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "line resistance and inductance must be strictly positive, got r_line={}, l_line={}",
                self.r_line, self.l_line
            )));
        }
        Ok(())
    }
}

/// Node-by-edge incidence matrix; edges are 1-based `(from, to)` pairs.
pub fn build_incidence(n: usize, edges: &[(usize, usize)]) -> Result<DMatrix<f64>> {
    let mut inc = DMatrix::zeros(n, edges.len());
    for (e, &(i, j)) in edges.iter().enumerate() {
        if i == 0 || j == 0 || i > n || j > n {
            return Err(Error::InvalidSpec(format!(
                "edge {} = ({i},{j}) references a node outside 1..={n}",
                e + 1
            )));
        }
        if i == j {
            return Err(Error::InvalidSpec(format!(
                "edge {} = ({i},{j}) is a self-loop",
                e + 1
            )));
        }
        inc[(i - 1, e)] = 1.0;
        inc[(j - 1, e)] = -1.0;
    }
    Ok(inc)
}

/// A validated network of identical converters and identical lines.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    n: usize,
    edges: Vec<(usize, usize)>,
    converter: ConverterParams,
    line: LineParams,
    incidence: DMatrix<f64>,
}

impl NetworkSpec {
    pub fn new(
        n: usize,
        edges: Vec<(usize, usize)>,
        converter: ConverterParams,
        line: LineParams,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidSpec("network needs at least one node".into()));
        }
        converter.validate()?;
        line.validate()?;
        let incidence = build_incidence(n, &edges)?;
        Ok(Self {
            n,
            edges,
            converter,
            line,
            incidence,
        })
    }

    /// Three converters on a ring with the default parameter set.
    pub fn table1_ring() -> Self {
        Self::new(
            3,
            vec![(1, 2), (2, 3), (3, 1)],
            ConverterParams::table1(),
            LineParams::table1(),
        )
        .expect("built-in parameters are valid")
    }

    /// Two converters joined by one line with the default parameter set.
    pub fn table1_pair() -> Self {
        Self::new(
            2,
            vec![(1, 2)],
            ConverterParams::table1(),
            LineParams::table1(),
        )
        .expect("built-in parameters are valid")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn converter(&self) -> &ConverterParams {
        &self.converter
    }

    pub fn line(&self) -> &LineParams {
        &self.line
    }

    pub fn layout(&self) -> StateLayout {
        StateLayout {
            n: self.n,
            m: self.m(),
        }
    }

    /// The `n x m` incidence matrix.
    pub fn incidence(&self) -> &DMatrix<f64> {
        &self.incidence
    }

    /// Incidence expanded to dq pairs, `B = incidence (x) I_2`.
    pub fn incidence_expanded(&self) -> DMatrix<f64> {
        kron_i2(&self.incidence)
    }

    /// Copy with different converter parameters (same topology).
    pub fn with_converter(&self, converter: ConverterParams) -> Result<Self> {
        Self::new(self.n, self.edges.clone(), converter, self.line)
    }

    pub fn impedances(&self) -> ImpedanceSet {
        let c = &self.converter;
        let w = c.omega_star;
        ImpedanceSet {
            z_r: impedance_blocks(self.n, c.r_f, c.l_f * w),
            z_c: impedance_blocks(self.n, c.g_load, c.c_f * w),
            z_ell: impedance_blocks(self.m(), self.line.r_line, self.line.l_line * w),
        }
    }

    /// Input vector `u` with every entry equal to `i_dc*`.
    pub fn nominal_input(&self) -> Vec<f64> {
        vec![self.converter.i_dc_star; self.n]
    }
}

/// Block-diagonal impedances `a I + b J` for the filter, the load and the lines.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpedanceSet {
    pub z_r: DMatrix<f64>,
    pub z_c: DMatrix<f64>,
    pub z_ell: DMatrix<f64>,
}

fn impedance_blocks(count: usize, real: f64, reactive: f64) -> DMatrix<f64> {
    let block = Matrix2::new(real, -reactive, reactive, real);
    let mut z = DMatrix::zeros(2 * count, 2 * count);
    for k in 0..count {
        z.fixed_view_mut::<2, 2>(2 * k, 2 * k).copy_from(&block);
    }
    z
}

/// `M (x) I_2`.
pub fn kron_i2(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.kronecker(&DMatrix::<f64>::identity(2, 2))
}

/// `J = [[0, -1], [1, 0]]`.
pub fn j2() -> Matrix2<f64> {
    Matrix2::new(0.0, -1.0, 1.0, 0.0)
}

/// Block-diagonal `I_count (x) J`.
pub fn j_blocks(count: usize) -> DMatrix<f64> {
    impedance_blocks(count, 0.0, 1.0)
}

/// `r(gamma) = [-sin gamma, cos gamma]^T`.
pub fn rotation_vector(gamma: f64) -> Vector2<f64> {
    let (s, c) = gamma.sin_cos();
    Vector2::new(-s, c)
}

/// Planar rotation `R(theta)`.
pub fn planar_rotation(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// Block-diagonal `I_count (x) R(theta)`.
pub fn block_rotation(count: usize, theta: f64) -> DMatrix<f64> {
    let (s, c) = theta.sin_cos();
    impedance_blocks(count, c, s)
}

/// `Rot(gamma) = diag(r(gamma_k))`, a `2n x n` matrix.
pub fn rot_matrix(gamma: &[f64]) -> DMatrix<f64> {
    let n = gamma.len();
    let mut m = DMatrix::zeros(2 * n, n);
    for (k, &g) in gamma.iter().enumerate() {
        let r = rotation_vector(g);
        m[(2 * k, k)] = r[0];
        m[(2 * k + 1, k)] = r[1];
    }
    m
}

/// Slot ranges of the packed state vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateLayout {
    pub n: usize,
    pub m: usize,
}

impl StateLayout {
    /// Packed dimension `6n + 2m`.
    pub fn dim(&self) -> usize {
        6 * self.n + 2 * self.m
    }

    pub fn gamma(&self) -> Range<usize> {
        0..self.n
    }

    pub fn v_dc(&self) -> Range<usize> {
        self.n..2 * self.n
    }

    pub fn i_f(&self) -> Range<usize> {
        2 * self.n..4 * self.n
    }

    pub fn v_c(&self) -> Range<usize> {
        4 * self.n..6 * self.n
    }

    pub fn i_line(&self) -> Range<usize> {
        6 * self.n..self.dim()
    }

    /// `(gamma, v_dc)` slots.
    pub fn slow(&self) -> Range<usize> {
        0..2 * self.n
    }

    /// All AC slots `(i_f, v_c, i_line)`.
    pub fn ac(&self) -> Range<usize> {
        2 * self.n..self.dim()
    }
}

/// Unpacked closed-loop state. Angles are kept unwrapped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub gamma: Vec<f64>,
    pub v_dc: Vec<f64>,
    pub i_f: Vec<f64>,
    pub v_c: Vec<f64>,
    pub i_line: Vec<f64>,
}

impl SystemState {
    pub fn zeros(layout: StateLayout) -> Self {
        Self {
            gamma: vec![0.0; layout.n],
            v_dc: vec![0.0; layout.n],
            i_f: vec![0.0; 2 * layout.n],
            v_c: vec![0.0; 2 * layout.n],
            i_line: vec![0.0; 2 * layout.m],
        }
    }

    pub fn layout(&self) -> StateLayout {
        StateLayout {
            n: self.gamma.len(),
            m: self.i_line.len() / 2,
        }
    }

    fn check_shape(&self) -> Result<StateLayout> {
        let n = self.gamma.len();
        let shape_ok = self.v_dc.len() == n
            && self.i_f.len() == 2 * n
            && self.v_c.len() == 2 * n
            && self.i_line.len() % 2 == 0;
        if !shape_ok {
            return Err(Error::InvalidSpec(format!(
                "inconsistent state slot lengths: gamma {}, v_dc {}, i_f {}, v_c {}, i_line {}",
                n,
                self.v_dc.len(),
                self.i_f.len(),
                self.v_c.len(),
                self.i_line.len()
            )));
        }
        Ok(self.layout())
    }

    pub fn pack(&self) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.layout().dim());
        out.extend_from_slice(&self.gamma);
        out.extend_from_slice(&self.v_dc);
        out.extend_from_slice(&self.i_f);
        out.extend_from_slice(&self.v_c);
        out.extend_from_slice(&self.i_line);
        DVector::from_vec(out)
    }

    pub fn unpack(layout: StateLayout, z: &[f64]) -> Result<Self> {
        if z.len() != layout.dim() {
            return Err(Error::DimensionMismatch {
                context: "SystemState::unpack",
                expected: layout.dim(),
                got: z.len(),
            });
        }
        Ok(Self {
            gamma: z[layout.gamma()].to_vec(),
            v_dc: z[layout.v_dc()].to_vec(),
            i_f: z[layout.i_f()].to_vec(),
            v_c: z[layout.v_c()].to_vec(),
            i_line: z[layout.i_line()].to_vec(),
        })
    }

    /// The `S(theta)` action: angles and DC voltages untouched, each AC pair rotated by `R(theta)`.
    pub fn rotate_ac(&self, theta: f64) -> Self {
        let rot = |xs: &[f64]| -> Vec<f64> {
            let (s, c) = theta.sin_cos();
            xs.chunks_exact(2)
                .flat_map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1]])
                .collect()
        };
        Self {
            gamma: self.gamma.clone(),
            v_dc: self.v_dc.clone(),
            i_f: rot(&self.i_f),
            v_c: rot(&self.v_c),
            i_line: rot(&self.i_line),
        }
    }

    /// Symmetry action `(gamma + theta 1, v_dc, R(theta) x)`.
    pub fn apply_symmetry(&self, theta: f64) -> Self {
        let mut out = self.rotate_ac(theta);
        for g in &mut out.gamma {
            *g += theta;
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.pack().norm()
    }
}

/// Closed-loop vector field of a [`NetworkSpec`] with precomputed coefficients.
#[derive(Debug, Clone)]
pub struct NetworkModel {
    spec: NetworkSpec,
    edge_index: Vec<(usize, usize)>,
}

impl NetworkModel {
    pub fn new(spec: &NetworkSpec) -> Self {
        let edge_index = spec.edges().iter().map(|&(i, j)| (i - 1, j - 1)).collect();
        Self {
            spec: spec.clone(),
            edge_index,
        }
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layout(&self) -> StateLayout {
        self.spec.layout()
    }

    /// Time derivative of the state under DC input `u` (length `n`).
    pub fn vector_field(&self, state: &SystemState, u: &[f64]) -> Result<SystemState> {
        let layout = state.check_shape()?;
        if layout != self.layout() {
            return Err(Error::DimensionMismatch {
                context: "vector_field state",
                expected: self.layout().dim(),
                got: layout.dim(),
            });
        }
        let z = state.pack();
        let mut dz = vec![0.0; z.len()];
        self.eval_packed(z.as_slice(), u, &mut dz)?;
        SystemState::unpack(layout, &dz)
    }

    /// Packed evaluation used by the integrator and the Jacobian oracle.
    pub fn eval_packed(&self, z: &[f64], u: &[f64], dz: &mut [f64]) -> Result<()> {
        let layout = self.layout();
        let dim = layout.dim();
        if z.len() != dim || dz.len() != dim {
            return Err(Error::DimensionMismatch {
                context: "vector_field packed state",
                expected: dim,
                got: z.len().min(dz.len()),
            });
        }
        if u.len() != layout.n {
            return Err(Error::DimensionMismatch {
                context: "vector_field input",
                expected: layout.n,
                got: u.len(),
            });
        }
        self.eval_unchecked(z, u, dz);
        Ok(())
    }

    pub(crate) fn eval_unchecked(&self, z: &[f64], u: &[f64], dz: &mut [f64]) {
        let StateLayout { n, m } = self.layout();
        let c = self.spec.converter();
        let line = self.spec.line();
        let w = c.omega_star;
        let half_mu = 0.5 * c.mu;
        let (zr_a, zr_b) = (c.r_f, c.l_f * w);
        let (zc_a, zc_b) = (c.g_load, c.c_f * w);
        let (zl_a, zl_b) = (line.r_line, line.l_line * w);

        let gamma = &z[0..n];
        let v_dc = &z[n..2 * n];
        let i_f = &z[2 * n..4 * n];
        let v_c = &z[4 * n..6 * n];
        let i_l = &z[6 * n..6 * n + 2 * m];

        // Net current injected into the lines at each node, B i_line.
        let mut i_net = vec![0.0; 2 * n];
        for (e, &(a, b)) in self.edge_index.iter().enumerate() {
            for d in 0..2 {
                i_net[2 * a + d] += i_l[2 * e + d];
                i_net[2 * b + d] -= i_l[2 * e + d];
            }
        }

        for k in 0..n {
            let (s, co) = gamma[k].sin_cos();
            let (rx, ry) = (-s, co);
            let dv = v_dc[k] - c.v_dc_star;
            let (id, iq) = (i_f[2 * k], i_f[2 * k + 1]);
            let (vd, vq) = (v_c[2 * k], v_c[2 * k + 1]);

            dz[k] = c.eta * dv;
            dz[n + k] = (-c.k_p * dv - half_mu * (rx * id + ry * iq) + u[k]) / c.c_dc;

            let e = half_mu * v_dc[k];
            dz[2 * n + 2 * k] = (-(zr_a * id - zr_b * iq) + e * rx - vd) / c.l_f;
            dz[2 * n + 2 * k + 1] = (-(zr_b * id + zr_a * iq) + e * ry - vq) / c.l_f;

            dz[4 * n + 2 * k] = (-(zc_a * vd - zc_b * vq) + id - i_net[2 * k]) / c.c_f;
            dz[4 * n + 2 * k + 1] = (-(zc_b * vd + zc_a * vq) + iq - i_net[2 * k + 1]) / c.c_f;
        }

        for (e, &(a, b)) in self.edge_index.iter().enumerate() {
            let (ld, lq) = (i_l[2 * e], i_l[2 * e + 1]);
            let bd = v_c[2 * a] - v_c[2 * b];
            let bq = v_c[2 * a + 1] - v_c[2 * b + 1];
            dz[6 * n + 2 * e] = (-(zl_a * ld - zl_b * lq) + bd) / line.l_line;
            dz[6 * n + 2 * e + 1] = (-(zl_b * ld + zl_a * lq) + bq) / line.l_line;
        }
    }
}

/// Wrap an angle to the principal interval `(-pi, pi]`.
pub fn wrap_angle(x: f64) -> f64 {
    let mut y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    }
    y
}
