//! Sampled-time trajectory oracles.
//!
//! Everything outside this module sees a system only through
//! [`SystemModel::step`]: `(x, u, w) ↦ φ(x, u, w)` with `u` and `w` held
//! constant over one sampling period. Vector fields never leave this module.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::geometry::{GeometryError, Hyperrect};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SystemError {
    #[error("non-finite state after integration substep {step}")]
    NonFinite { step: usize },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid system description: {0}")]
    Config(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// One sampling period of a concrete system, `out = φ(x, u, w)`.
pub trait Dynamics: Send + Sync + fmt::Debug {
    fn step_into(&self, x: &[f64], u: &[f64], w: &[f64], out: &mut [f64])
        -> Result<(), SystemError>;
}

/// The set of admissible inputs.
#[derive(Debug, Clone, PartialEq)]
pub enum InputSpace {
    /// Finitely many input values (e.g. switching modes).
    Levels(Vec<Vec<f64>>),
    /// A box, to be quantised by an input grid.
    Box(Hyperrect),
}

/// Black-box control system with piecewise-constant inputs and disturbances.
#[derive(Clone)]
pub struct SystemModel {
    name: String,
    state_box: Hyperrect,
    inputs: InputSpace,
    input_dim: usize,
    disturbance_bound: Vec<f64>,
    tau: f64,
    dynamics: Arc<dyn Dynamics>,
}

impl fmt::Debug for SystemModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemModel")
            .field("name", &self.name)
            .field("state_box", &self.state_box)
            .field("inputs", &self.inputs)
            .field("disturbance_bound", &self.disturbance_bound)
            .field("tau", &self.tau)
            .finish()
    }
}

impl SystemModel {
    pub fn new(
        name: impl Into<String>,
        state_box: Hyperrect,
        inputs: InputSpace,
        disturbance_bound: Vec<f64>,
        tau: f64,
        dynamics: Arc<dyn Dynamics>,
    ) -> Result<Self, SystemError> {
        let n = state_box.dim();
        if disturbance_bound.len() != n {
            return Err(SystemError::Dimension {
                what: "disturbance bound",
                expected: n,
                got: disturbance_bound.len(),
            });
        }
        if disturbance_bound.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(SystemError::Config(
                "disturbance bound must be finite and nonnegative".into(),
            ));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(SystemError::Config(format!("sampling time must be positive, got {tau}")));
        }
        let input_dim = match &inputs {
            InputSpace::Levels(levels) => {
                let m = levels.first().map_or(0, Vec::len);
                if m == 0 || levels.iter().any(|l| l.len() != m) {
                    return Err(SystemError::Config("input levels must share one nonzero dimension".into()));
                }
                m
            }
            InputSpace::Box(b) => b.dim(),
        };
        Ok(Self {
            name: name.into(),
            state_box,
            inputs,
            input_dim,
            disturbance_bound,
            tau,
            dynamics,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.state_box.dim()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn state_box(&self) -> &Hyperrect {
        &self.state_box
    }

    pub fn inputs(&self) -> &InputSpace {
        &self.inputs
    }

    /// `w̄`; the disturbance set is `[-w̄, w̄]`.
    pub fn disturbance_bound(&self) -> &[f64] {
        &self.disturbance_bound
    }

    pub fn disturbance_box(&self) -> Hyperrect {
        Hyperrect::symmetric(&self.disturbance_bound).expect("validated at construction")
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Same dynamics with a different disturbance bound.
    pub fn with_disturbance(&self, wbar: Vec<f64>) -> Result<Self, SystemError> {
        Self::new(
            self.name.clone(),
            self.state_box.clone(),
            self.inputs.clone(),
            wbar,
            self.tau,
            self.dynamics.clone(),
        )
    }

    /// Same dynamics over a different state box.
    pub fn with_state_box(&self, state_box: Hyperrect) -> Result<Self, SystemError> {
        Self::new(
            self.name.clone(),
            state_box,
            self.inputs.clone(),
            self.disturbance_bound.clone(),
            self.tau,
            self.dynamics.clone(),
        )
    }

    pub fn step_into(
        &self,
        x: &[f64],
        u: &[f64],
        w: &[f64],
        out: &mut [f64],
    ) -> Result<(), SystemError> {
        let n = self.state_dim();
        for (what, len, expected) in [
            ("state", x.len(), n),
            ("disturbance", w.len(), n),
            ("output buffer", out.len(), n),
            ("input", u.len(), self.input_dim),
        ] {
            if len != expected {
                return Err(SystemError::Dimension { what, expected, got: len });
            }
        }
        self.dynamics.step_into(x, u, w, out)?;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(SystemError::NonFinite { step: 0 });
        }
        Ok(())
    }

    pub fn step(&self, x: &[f64], u: &[f64], w: &[f64]) -> Result<Vec<f64>, SystemError> {
        let mut out = vec![0.0; self.state_dim()];
        self.step_into(x, u, w, &mut out)?;
        Ok(out)
    }
}

/// Classical fixed-step RK4 for `ẋ = f(x, u) + w` over `[0, tau]`.
///
/// `field(x, u, dx)` writes `f(x, u)` into `dx`.
pub fn integrate_rk4<F>(
    field: F,
    x: &[f64],
    u: &[f64],
    w: &[f64],
    tau: f64,
    substeps: usize,
) -> Result<Vec<f64>, SystemError>
where
    F: Fn(&[f64], &[f64], &mut [f64]),
{
    let mut out = x.to_vec();
    rk4_in_place(&field, &mut out, u, w, tau, substeps)?;
    Ok(out)
}

fn rk4_in_place<F>(
    field: &F,
    state: &mut [f64],
    u: &[f64],
    w: &[f64],
    tau: f64,
    substeps: usize,
) -> Result<(), SystemError>
where
    F: Fn(&[f64], &[f64], &mut [f64]),
{
    if substeps == 0 {
        return Err(SystemError::Config("RK4 needs at least one substep".into()));
    }
    let n = state.len();
    let h = tau / substeps as f64;
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let eval = |x: &[f64], k: &mut [f64]| {
        field(x, u, k);
        for (ki, wi) in k.iter_mut().zip(w) {
            *ki += wi;
        }
    };
    for step in 0..substeps {
        eval(state, &mut k1);
        for i in 0..n {
            tmp[i] = state[i] + 0.5 * h * k1[i];
        }
        eval(&tmp, &mut k2);
        for i in 0..n {
            tmp[i] = state[i] + 0.5 * h * k2[i];
        }
        eval(&tmp, &mut k3);
        for i in 0..n {
            tmp[i] = state[i] + h * k3[i];
        }
        eval(&tmp, &mut k4);
        for i in 0..n {
            state[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if state.iter().any(|v| !v.is_finite()) {
            return Err(SystemError::NonFinite { step });
        }
    }
    Ok(())
}

/// `(e^{Aτ}, ∫₀^τ e^{As} ds)` from one exponential of `[[A, I], [0, 0]]`.
pub fn discretize(a: &DMatrix<f64>, tau: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut aug = DMatrix::zeros(2 * n, 2 * n);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * tau));
    aug.view_mut((0, n), (n, n))
        .copy_from(&(DMatrix::identity(n, n) * tau));
    let e = aug.exp();
    (
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, n)).into_owned(),
    )
}

/// Exact sampled step of `ẋ = Ax + Bu + Ew`.
pub fn lti_exact_step(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    e: &DMatrix<f64>,
    x: &[f64],
    u: &[f64],
    w: &[f64],
    tau: f64,
) -> Result<Vec<f64>, SystemError> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || e.nrows() != n {
        return Err(SystemError::Dimension {
            what: "LTI matrices",
            expected: n,
            got: a.ncols().max(b.nrows()).max(e.nrows()),
        });
    }
    if x.len() != n || u.len() != b.ncols() || w.len() != e.ncols() {
        return Err(SystemError::Dimension {
            what: "LTI step arguments",
            expected: n,
            got: x.len(),
        });
    }
    let drive = b * nalgebra::DVector::from_column_slice(u) + e * nalgebra::DVector::from_column_slice(w);
    let mut aug = DMatrix::zeros(n + 1, n + 1);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * tau));
    aug.view_mut((0, n), (n, 1)).copy_from(&(drive * tau));
    let m = aug.exp();
    let mut xa = nalgebra::DVector::zeros(n + 1);
    xa.rows_mut(0, n).copy_from_slice(x);
    xa[n] = 1.0;
    let next = m * xa;
    let out: Vec<f64> = next.rows(0, n).iter().copied().collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(SystemError::NonFinite { step: 0 });
    }
    Ok(out)
}

/// Precomputed exact step `x' = Φx + Ψ(Bu + Ew + c)` of an affine system.
#[derive(Debug, Clone)]
pub struct AffineStep {
    n: usize,
    phi: Vec<f64>,
    /// `Ψ B`, row-major n × m.
    psi_b: Vec<f64>,
    /// `Ψ E`, row-major n × q.
    psi_e: Vec<f64>,
    /// `Ψ c`.
    psi_c: Vec<f64>,
    m: usize,
    q: usize,
}

impl AffineStep {
    pub fn new(
        a: &DMatrix<f64>,
        b: &DMatrix<f64>,
        e: &DMatrix<f64>,
        offset: &[f64],
        tau: f64,
    ) -> Result<Self, SystemError> {
        let n = a.nrows();
        if a.ncols() != n || b.nrows() != n || e.nrows() != n || offset.len() != n {
            return Err(SystemError::Config("affine system matrices have inconsistent shapes".into()));
        }
        let (phi, psi) = discretize(a, tau);
        let flat = |m: DMatrix<f64>| -> Vec<f64> {
            let mut v = Vec::with_capacity(m.len());
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    v.push(m[(r, c)]);
                }
            }
            v
        };
        let psi_c = &psi * nalgebra::DVector::from_column_slice(offset);
        Ok(Self {
            n,
            m: b.ncols(),
            q: e.ncols(),
            psi_b: flat(&psi * b),
            psi_e: flat(&psi * e),
            psi_c: psi_c.iter().copied().collect(),
            phi: flat(phi),
        })
    }

    pub fn apply(&self, x: &[f64], u: &[f64], w: &[f64], out: &mut [f64]) {
        let n = self.n;
        for r in 0..n {
            let mut acc = self.psi_c[r];
            for c in 0..n {
                acc += self.phi[r * n + c] * x[c];
            }
            for c in 0..self.m {
                acc += self.psi_b[r * self.m + c] * u[c];
            }
            for c in 0..self.q {
                acc += self.psi_e[r * self.q + c] * w[c];
            }
            out[r] = acc;
        }
    }

    /// `e^{Aτ}` as row-major entries.
    pub fn transition(&self) -> &[f64] {
        &self.phi
    }
}

/// `ẋ = Ax + Bu + Ew`, stepped exactly.
#[derive(Debug, Clone)]
pub struct LtiDynamics {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub e: DMatrix<f64>,
    step: AffineStep,
}

impl LtiDynamics {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, e: DMatrix<f64>, tau: f64) -> Result<Self, SystemError> {
        let zero = vec![0.0; a.nrows()];
        let step = AffineStep::new(&a, &b, &e, &zero, tau)?;
        Ok(Self { a, b, e, step })
    }
}

impl Dynamics for LtiDynamics {
    fn step_into(&self, x: &[f64], u: &[f64], w: &[f64], out: &mut [f64]) -> Result<(), SystemError> {
        if u.len() != self.b.ncols() {
            return Err(SystemError::Dimension { what: "input", expected: self.b.ncols(), got: u.len() });
        }
        // w lives in the E-column space when E is not square
        if w.len() < self.e.ncols() {
            return Err(SystemError::Dimension { what: "disturbance", expected: self.e.ncols(), got: w.len() });
        }
        self.step.apply(x, u, &w[..self.e.ncols()], out);
        Ok(())
    }
}

/// Switched affine system `ẋ = A_u x + b + diag(c) w`, `u ∈ {1, 2, ...}`.
#[derive(Debug, Clone)]
pub struct SwitchedAffine {
    modes: Vec<AffineStep>,
}

impl Dynamics for SwitchedAffine {
    fn step_into(&self, x: &[f64], u: &[f64], w: &[f64], out: &mut [f64]) -> Result<(), SystemError> {
        let mode = u[0];
        let idx = mode.round();
        if (mode - idx).abs() > 1e-9 || idx < 1.0 || idx as usize > self.modes.len() {
            return Err(SystemError::Input(format!(
                "mode {mode} outside 1..={}",
                self.modes.len()
            )));
        }
        self.modes[idx as usize - 1].apply(x, &[], w, out);
        Ok(())
    }
}

/// DC-DC boost converter parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DcdcParams {
    pub a1: [[f64; 2]; 2],
    pub a2: [[f64; 2]; 2],
    pub b: [f64; 2],
    /// Disturbance scaling; `w` enters as `diag(c) w`.
    pub c: [f64; 2],
    pub tau: f64,
}

impl Default for DcdcParams {
    /// Circuit values of the standard boost-converter benchmark
    /// (x_c = 70, x_l = 3, r_c = 0.005, r_l = 0.05, r_0 = 1, v_s = 1,
    /// voltage scaled by 5, τ = 0.5). These come from the external
    /// benchmark definition, not from measurements of this crate.
    fn default() -> Self {
        let (xc, xl, rc, rl, r0, vs) = (70.0, 3.0, 0.005, 0.05, 1.0, 1.0);
        Self {
            a1: [[-rl / xl, 0.0], [0.0, -1.0 / xc / (r0 + rc)]],
            a2: [
                [-(rl + r0 * rc / (r0 + rc)) / xl, -(r0 / (r0 + rc)) / xl / 5.0],
                [5.0 * (r0 / (r0 + rc)) / xc, -1.0 / xc / (r0 + rc)],
            ],
            b: [vs / xl, 0.0],
            c: [1.0, 1.0],
            tau: 0.5,
        }
    }
}

pub fn dcdc_state_box() -> Hyperrect {
    Hyperrect::new(vec![0.65, 4.95], vec![1.65, 5.95]).expect("static box")
}

/// Two-mode boost converter; inputs are the mode numbers 1 and 2.
pub fn builtin_dcdc(params: &DcdcParams, wbar: [f64; 2]) -> Result<SystemModel, SystemError> {
    let to_mat = |m: &[[f64; 2]; 2]| DMatrix::from_fn(2, 2, |r, c| m[r][c]);
    let empty = DMatrix::zeros(2, 0);
    let e = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&params.c));
    let modes = [&params.a1, &params.a2]
        .into_iter()
        .map(|a| AffineStep::new(&to_mat(a), &empty, &e, &params.b, params.tau))
        .collect::<Result<Vec<_>, _>>()?;
    SystemModel::new(
        "dcdc",
        dcdc_state_box(),
        InputSpace::Levels(vec![vec![1.0], vec![2.0]]),
        wbar.to_vec(),
        params.tau,
        Arc::new(SwitchedAffine { modes }),
    )
}

/// Kinematic vehicle, integrated with RK4.
#[derive(Debug, Clone)]
pub struct Vehicle {
    pub tau: f64,
    pub substeps: usize,
}

impl Vehicle {
    pub fn field(x: &[f64], u: &[f64], dx: &mut [f64]) {
        let (v, omega) = (u[0], u[1]);
        let alpha = (omega.tan() / 2.0).atan();
        dx[0] = v * (alpha + x[2]).cos() / alpha.cos();
        dx[1] = v * (alpha + x[2]).sin() / alpha.cos();
        dx[2] = v * omega.tan();
    }
}

impl Dynamics for Vehicle {
    fn step_into(&self, x: &[f64], u: &[f64], w: &[f64], out: &mut [f64]) -> Result<(), SystemError> {
        out.copy_from_slice(x);
        rk4_in_place(&Vehicle::field, out, u, w, self.tau, self.substeps)
    }
}

pub const DEFAULT_SUBSTEPS: usize = 64;

/// Path-planning vehicle on `[0,10]² × [-π-0.4, π+0.4]`, `U = [-1,1]²`.
/// The disturbance acts on the first state equation only.
pub fn builtin_vehicle(tau: f64, w1: f64) -> Result<SystemModel, SystemError> {
    let pi = std::f64::consts::PI;
    SystemModel::new(
        "vehicle",
        Hyperrect::new(vec![0.0, 0.0, -pi - 0.4], vec![10.0, 10.0, pi + 0.4])?,
        InputSpace::Box(Hyperrect::new(vec![-1.0, -1.0], vec![1.0, 1.0])?),
        vec![w1, 0.0, 0.0],
        tau,
        Arc::new(Vehicle {
            tau,
            substeps: DEFAULT_SUBSTEPS,
        }),
    )
}

pub mod power3a3m {
    //! Reduced three-area three-machine power system.
    use nalgebra::DMatrix;

    pub const A: [[f64; 3]; 3] = [
        [0.00027563, 0.0, 0.0],
        [0.0, -0.3951, 0.687],
        [0.0, -0.6869, -0.016],
    ];
    pub const B: [f64; 3] = [0.00031166, 0.1359, 0.0230];
    pub const E: [[f64; 2]; 3] = [
        [0.00033103, 0.00031244],
        [0.1309, 0.1308],
        [0.0250, 0.0233],
    ];
    pub const C: [f64; 3] = [-0.0115, -0.2296, 0.0412];
    pub const TAU: f64 = 0.4;
    pub const STATE_LOWER: [f64; 3] = [-0.02, -0.05, -0.12];
    pub const STATE_UPPER: [f64; 3] = [0.02, 0.05, 0.12];
    pub const WBAR: [f64; 2] = [0.2, 0.3];

    pub fn a() -> DMatrix<f64> {
        DMatrix::from_fn(3, 3, |r, c| A[r][c])
    }

    pub fn b() -> DMatrix<f64> {
        DMatrix::from_column_slice(3, 1, &B)
    }

    pub fn e() -> DMatrix<f64> {
        DMatrix::from_fn(3, 2, |r, c| E[r][c])
    }

    /// Frequency-deviation output `y = Cx`.
    pub fn output(x: &[f64]) -> f64 {
        C.iter().zip(x).map(|(c, x)| c * x).sum()
    }
}

/// LTI dynamics whose disturbance has its own dimension (`E` is n × q).
///
/// [`SystemModel`] stores an n-dimensional `w̄`; this wrapper reads the
/// first `q` coordinates and ignores the rest, which must be bounded by 0.
#[derive(Debug, Clone)]
struct PaddedDisturbance(LtiDynamics);

impl Dynamics for PaddedDisturbance {
    fn step_into(&self, x: &[f64], u: &[f64], w: &[f64], out: &mut [f64]) -> Result<(), SystemError> {
        self.0.step_into(x, u, w, out)
    }
}

/// Reduced power system, `U = [0, 0.5]`, `W = [-0.2,0.2]×[-0.3,0.3]`, τ = 0.4.
///
/// The two disturbance channels occupy the first two coordinates of the
/// (state-dimensional) disturbance vector; the third is fixed at zero.
pub fn builtin_power3a3m() -> Result<SystemModel, SystemError> {
    let dynamics = LtiDynamics::new(power3a3m::a(), power3a3m::b(), power3a3m::e(), power3a3m::TAU)?;
    SystemModel::new(
        "power3a3m",
        Hyperrect::new(power3a3m::STATE_LOWER.to_vec(), power3a3m::STATE_UPPER.to_vec())?,
        InputSpace::Box(Hyperrect::new(vec![0.0], vec![0.5])?),
        vec![power3a3m::WBAR[0], power3a3m::WBAR[1], 0.0],
        power3a3m::TAU,
        Arc::new(PaddedDisturbance(dynamics)),
    )
}

/// General LTI system from explicit matrices (`E` may have fewer columns than `n`).
pub fn lti_system(
    name: &str,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    e: DMatrix<f64>,
    state_box: Hyperrect,
    inputs: InputSpace,
    wbar: Vec<f64>,
    tau: f64,
) -> Result<SystemModel, SystemError> {
    let n = a.nrows();
    if e.ncols() > n {
        return Err(SystemError::Config("E may have at most n columns".into()));
    }
    if wbar.iter().skip(e.ncols()).any(|w| *w != 0.0) {
        return Err(SystemError::Config(
            "disturbance bound entries beyond the columns of E must be zero".into(),
        ));
    }
    let dynamics = LtiDynamics::new(a, b, e, tau)?;
    SystemModel::new(name, state_box, inputs, wbar, tau, Arc::new(PaddedDisturbance(dynamics)))
}

/// `ẋ = 0` on the given box (the successor equals the start state plus the integrated disturbance).
pub fn identity_system(state_box: Hyperrect, inputs: Vec<Vec<f64>>, wbar: Vec<f64>, tau: f64) -> Result<SystemModel, SystemError> {
    let n = state_box.dim();
    let m = inputs.first().map_or(1, Vec::len);
    lti_system(
        "identity",
        DMatrix::zeros(n, n),
        DMatrix::zeros(n, m),
        DMatrix::identity(n, n),
        state_box,
        InputSpace::Levels(inputs),
        wbar,
        tau,
    )
}

/// Scalar `ẋ = a·x + u + w`.
pub fn scalar_linear(a: f64, state_box: Hyperrect, inputs: Vec<f64>, wbar: f64, tau: f64) -> Result<SystemModel, SystemError> {
    lti_system(
        "scalar",
        DMatrix::from_element(1, 1, a),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, 1.0),
        state_box,
        InputSpace::Levels(inputs.into_iter().map(|u| vec![u]).collect()),
        vec![wbar],
        tau,
    )
}

/// Reference growth bound of a known LTI system:
/// `θ₁ = e^{Lτ}`, `θ₂ = ∫₀^τ e^{Ls} ds · w̄` with `L` the Metzler majorant of `A`
/// (diagonal kept, off-diagonal entries in absolute value).
pub fn model_growth_bound(a: &DMatrix<f64>, wbar: &[f64], tau: f64) -> (DMatrix<f64>, Vec<f64>) {
    let l = DMatrix::from_fn(a.nrows(), a.ncols(), |r, c| {
        if r == c {
            a[(r, c)]
        } else {
            a[(r, c)].abs()
        }
    });
    let (phi, psi) = discretize(&l, tau);
    let theta2 = &psi * nalgebra::DVector::from_column_slice(wbar);
    (phi, theta2.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rk4_zero_field_is_identity() {
        let x = integrate_rk4(|_, _, dx| dx.fill(0.0), &[1.0, -2.0], &[], &[0.0, 0.0], 3.0, 7).unwrap();
        assert_eq!(x, vec![1.0, -2.0]);
    }

    #[test]
    fn rk4_exponential_decay() {
        let x = integrate_rk4(|x, _, dx| dx[0] = -x[0], &[1.0], &[], &[0.0], 1.0, 100).unwrap();
        assert!((x[0] - (-1.0f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn rk4_reports_blow_up() {
        let err = integrate_rk4(|x, _, dx| dx[0] = x[0] * x[0], &[1e200], &[], &[0.0], 1.0, 4).unwrap_err();
        assert!(matches!(err, SystemError::NonFinite { .. }));
        assert!(integrate_rk4(|_, _, dx| dx[0] = 0.0, &[1.0], &[], &[0.0], 1.0, 0).is_err());
    }

    #[test]
    fn rk4_is_fourth_order_on_power_system() {
        let (a, b, e) = (power3a3m::a(), power3a3m::b(), power3a3m::e());
        let x0 = [0.01, -0.03, 0.08];
        let u = [0.3];
        let w = [0.1, -0.2];
        let exact = lti_exact_step(&a, &b, &e, &x0, &u, &w, 0.4).unwrap();
        let bw = &b * nalgebra::DVector::from_column_slice(&u) + &e * nalgebra::DVector::from_column_slice(&w);
        let field = |x: &[f64], _: &[f64], dx: &mut [f64]| {
            let v = &a * nalgebra::DVector::from_column_slice(x) + &bw;
            dx.copy_from_slice(v.as_slice());
        };
        let err = |s: usize| {
            let x = integrate_rk4(field, &x0, &u, &[0.0; 3], 0.4, s).unwrap();
            x.iter().zip(&exact).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
        };
        let ratio = (err(2) / err(4)).log2();
        assert!((3.5..=4.5).contains(&ratio), "observed order {ratio}");
    }

    #[test]
    fn lti_trivial_cases() {
        let z = DMatrix::zeros(2, 2);
        let i = DMatrix::identity(2, 2);
        let x = lti_exact_step(&z, &i, &DMatrix::zeros(2, 1), &[1.0, 2.0], &[0.5, -1.0], &[0.0], 2.0).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-12 && (x[1] - 0.0).abs() < 1e-12);
        let m1 = DMatrix::from_element(1, 1, -1.0);
        let x = lti_exact_step(&m1, &DMatrix::zeros(1, 1), &DMatrix::zeros(1, 1), &[1.0], &[0.0], &[0.0], 1.0).unwrap();
        assert!((x[0] - (-1.0f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn lti_matches_fine_rk4_on_power_system() {
        let (a, b, e) = (power3a3m::a(), power3a3m::b(), power3a3m::e());
        let exact = lti_exact_step(&a, &b, &e, &[0.0; 3], &[0.1], &[0.0, 0.0], 0.4).unwrap();
        let drive = &b * 0.1;
        let field = |x: &[f64], _: &[f64], dx: &mut [f64]| {
            let v = &a * nalgebra::DVector::from_column_slice(x) + &drive;
            dx.copy_from_slice(v.as_slice());
        };
        let rk = integrate_rk4(field, &[0.0; 3], &[0.1], &[0.0; 3], 0.4, 10_000).unwrap();
        for (p, q) in rk.iter().zip(&exact) {
            assert!((p - q).abs() < 1e-8);
        }
    }

    #[test]
    fn power_builtin_matches_exact_step() {
        let sys = builtin_power3a3m().unwrap();
        assert_eq!(sys.step(&[0.0; 3], &[0.0], &[0.0; 3]).unwrap(), vec![0.0; 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x: Vec<f64> = (0..3).map(|i| rng.random_range(power3a3m::STATE_LOWER[i]..power3a3m::STATE_UPPER[i])).collect();
            let u = [rng.random_range(0.0..0.5)];
            let w = [rng.random_range(-0.2..0.2), rng.random_range(-0.3..0.3)];
            let got = sys.step(&x, &u, &[w[0], w[1], 0.0]).unwrap();
            let want = lti_exact_step(&power3a3m::a(), &power3a3m::b(), &power3a3m::e(), &x, &u, &w, 0.4).unwrap();
            for (p, q) in got.iter().zip(&want) {
                assert!((p - q).abs() < 1e-8);
            }
        }
        assert_eq!(power3a3m::output(&[0.0; 3]), 0.0);
        let c = power3a3m::C;
        assert!(power3a3m::output(&c) > 0.0);
        assert!(power3a3m::output(&[2.0 * c[0], 2.0 * c[1], 2.0 * c[2]]) > power3a3m::output(&c));
    }

    #[test]
    fn lti_superposition() {
        let sys = builtin_power3a3m().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let x1: Vec<f64> = (0..3).map(|_| rng.random_range(-0.01..0.01)).collect();
            let x2: Vec<f64> = (0..3).map(|_| rng.random_range(-0.01..0.01)).collect();
            let u = [rng.random_range(0.0..0.5)];
            let w = [rng.random_range(-0.2..0.2), rng.random_range(-0.3..0.3), 0.0];
            let sum: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| a + b).collect();
            let lhs: Vec<f64> = sys.step(&sum, &u, &w).unwrap().iter()
                .zip(sys.step(&[0.0; 3], &[0.0], &[0.0; 3]).unwrap())
                .map(|(a, b)| a + b).collect();
            let rhs: Vec<f64> = sys.step(&x1, &u, &w).unwrap().iter()
                .zip(sys.step(&x2, &[0.0], &[0.0; 3]).unwrap())
                .map(|(a, b)| a + b).collect();
            for (p, q) in lhs.iter().zip(&rhs) {
                assert!((p - q).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn dcdc_modes_match_rk4_and_are_affine() {
        let p = DcdcParams::default();
        let sys = builtin_dcdc(&p, [0.0, 0.0]).unwrap();
        assert_eq!(sys.disturbance_bound(), &[0.0, 0.0]);
        for (mode, a) in [(1.0, p.a1), (2.0, p.a2)] {
            let x0 = [1.2, 5.5];
            let field = |x: &[f64], _: &[f64], dx: &mut [f64]| {
                for r in 0..2 {
                    dx[r] = a[r][0] * x[0] + a[r][1] * x[1] + p.b[r];
                }
            };
            let rk = integrate_rk4(field, &x0, &[], &[0.0, 0.0], p.tau, 2000).unwrap();
            let got = sys.step(&x0, &[mode], &[0.0, 0.0]).unwrap();
            for (g, r) in got.iter().zip(&rk) {
                assert!((g - r).abs() < 1e-8);
            }
            // affine: φ(x1) + φ(x2) - φ(x1 + x2 - x3) = φ(x3)
            let xs = [[0.7, 5.0], [1.5, 5.9], [1.0, 5.3]];
            let comb = [xs[0][0] + xs[1][0] - xs[2][0], xs[0][1] + xs[1][1] - xs[2][1]];
            let f = |x: &[f64]| sys.step(x, &[mode], &[0.0, 0.0]).unwrap();
            let (a0, a1, a2, ac) = (f(&xs[0]), f(&xs[1]), f(&xs[2]), f(&comb));
            for i in 0..2 {
                assert!((a0[i] + a1[i] - ac[i] - a2[i]).abs() < 1e-9);
            }
        }
        assert!(matches!(sys.step(&[1.0, 5.0], &[3.0], &[0.0, 0.0]), Err(SystemError::Input(_))));
        assert!(matches!(sys.step(&[1.0, 5.0], &[1.5], &[0.0, 0.0]), Err(SystemError::Input(_))));
    }

    #[test]
    fn vehicle_closed_forms() {
        let sys = builtin_vehicle(1.0, 0.0).unwrap();
        let x = sys.step(&[3.0, 4.0, 0.7], &[0.0, 0.5], &[0.0; 3]).unwrap();
        assert_eq!(x, vec![3.0, 4.0, 0.7]);
        let x = sys.step(&[0.0, 0.0, 0.0], &[1.0, 0.0], &[0.0; 3]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-9 && x[1].abs() < 1e-9 && x[2].abs() < 1e-9);
        let h = std::f64::consts::FRAC_PI_2;
        let x = sys.step(&[0.0, 0.0, h], &[1.0, 0.0], &[0.0; 3]).unwrap();
        assert!(x[0].abs() < 1e-9 && (x[1] - 1.0).abs() < 1e-9 && (x[2] - h).abs() < 1e-12);
    }

    #[test]
    fn determinism() {
        let sys = builtin_vehicle(0.3, 0.01).unwrap();
        let a = sys.step(&[1.0, 2.0, 0.3], &[0.4, -0.7], &[0.005, 0.0, 0.0]).unwrap();
        let b = sys.step(&[1.0, 2.0, 0.3], &[0.4, -0.7], &[0.005, 0.0, 0.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn model_bound_of_diagonal_system() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-1.0, 0.5]));
        let (t1, t2) = model_growth_bound(&a, &[0.1, 0.0], 1.0);
        assert!((t1[(0, 0)] - (-1.0f64).exp()).abs() < 1e-12);
        assert!((t1[(1, 1)] - 0.5f64.exp()).abs() < 1e-12);
        assert!((t2[0] - 0.1 * (1.0 - (-1.0f64).exp())).abs() < 1e-12);
        assert_eq!(t2[1], 0.0);
    }
}
