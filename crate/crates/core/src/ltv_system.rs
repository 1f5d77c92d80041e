//! Time-varying system data `(A, B, Q)`, transition matrices, Gramians and
//! the standing-assumption check.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::ode::{self, OdeState};

pub const SYMMETRY_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_STEPS_PER_UNIT: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    #[default]
    Linear,
    Cubic,
}

type MatrixFn = Arc<dyn Fn(f64) -> Mat + Send + Sync>;

#[derive(Clone)]
enum Trajectory {
    Constant(Mat),
    Tabulated {
        times: Vec<f64>,
        values: Vec<Mat>,
        /// Second derivatives at the nodes (natural cubic spline); empty for linear.
        curvature: Vec<Mat>,
    },
    /// `offset + amplitude * sin(frequency * t + phase)`
    Sinusoid {
        offset: Mat,
        amplitude: Mat,
        frequency: f64,
        phase: f64,
    },
    Function(MatrixFn),
}

/// A matrix-valued function of time.
#[derive(Clone)]
pub struct MatrixTrajectory {
    rows: usize,
    cols: usize,
    inner: Trajectory,
}

impl fmt::Debug for MatrixTrajectory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.inner {
            Trajectory::Constant(_) => "constant",
            Trajectory::Tabulated { curvature, .. } if curvature.is_empty() => "tabulated-linear",
            Trajectory::Tabulated { .. } => "tabulated-cubic",
            Trajectory::Sinusoid { .. } => "sinusoid",
            Trajectory::Function(_) => "function",
        };
        write!(f, "MatrixTrajectory({}x{}, {kind})", self.rows, self.cols)
    }
}

impl MatrixTrajectory {
    pub fn constant(value: Mat) -> Self {
        Self { rows: value.nrows(), cols: value.ncols(), inner: Trajectory::Constant(value) }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::constant(Mat::zeros(rows, cols))
    }

    pub fn tabulated(times: Vec<f64>, values: Vec<Mat>, interpolation: Interpolation) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::Dimension(format!(
                "tabulated trajectory has {} times and {} matrices",
                times.len(),
                values.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Parameter("tabulated times must be strictly increasing".into()));
        }
        let (rows, cols) = values[0].shape();
        if values.iter().any(|v| v.shape() != (rows, cols)) {
            return Err(Error::Dimension("tabulated matrices differ in shape".into()));
        }
        let curvature = match interpolation {
            Interpolation::Linear => Vec::new(),
            Interpolation::Cubic => natural_spline_curvature(&times, &values),
        };
        Ok(Self { rows, cols, inner: Trajectory::Tabulated { times, values, curvature } })
    }

    pub fn sinusoid(offset: Mat, amplitude: Mat, frequency: f64, phase: f64) -> Result<Self> {
        if offset.shape() != amplitude.shape() {
            return Err(Error::Dimension("sinusoid offset and amplitude differ in shape".into()));
        }
        Ok(Self {
            rows: offset.nrows(),
            cols: offset.ncols(),
            inner: Trajectory::Sinusoid { offset, amplitude, frequency, phase },
        })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(f64) -> Mat + Send + Sync + 'static) -> Self {
        Self { rows, cols, inner: Trajectory::Function(Arc::new(f)) }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn constant_value(&self) -> Option<&Mat> {
        match &self.inner {
            Trajectory::Constant(m) => Some(m),
            _ => None,
        }
    }

    /// Tabulation nodes, if any; used to sample checks at the data points.
    pub fn nodes(&self) -> &[f64] {
        match &self.inner {
            Trajectory::Tabulated { times, .. } => times,
            _ => &[],
        }
    }

    /// Evaluates at `t`; tabulated data is held constant outside its range.
    pub fn eval(&self, t: f64) -> Mat {
        match &self.inner {
            Trajectory::Constant(m) => m.clone(),
            Trajectory::Sinusoid { offset, amplitude, frequency, phase } => {
                offset + amplitude * (frequency * t + phase).sin()
            }
            Trajectory::Function(f) => f(t),
            Trajectory::Tabulated { times, values, curvature } => {
                let last = times.len() - 1;
                if t <= times[0] {
                    return values[0].clone();
                }
                if t >= times[last] {
                    return values[last].clone();
                }
                let i = times.partition_point(|&s| s <= t) - 1;
                let h = times[i + 1] - times[i];
                let u = (t - times[i]) / h;
                let mut out = &values[i] * (1.0 - u) + &values[i + 1] * u;
                if !curvature.is_empty() {
                    let ca = ((1.0 - u).powi(3) - (1.0 - u)) * h * h / 6.0;
                    let cb = (u.powi(3) - u) * h * h / 6.0;
                    out += &curvature[i] * ca + &curvature[i + 1] * cb;
                }
                out
            }
        }
    }
}

/// Entrywise natural cubic spline: solves the tridiagonal system for the
/// second derivatives with matrix-valued right-hand sides.
fn natural_spline_curvature(times: &[f64], values: &[Mat]) -> Vec<Mat> {
    let n = times.len();
    let (r, c) = values[0].shape();
    let mut m = vec![Mat::zeros(r, c); n];
    if n < 3 {
        return m;
    }
    let mut diag = vec![0.0; n];
    let mut rhs = vec![Mat::zeros(r, c); n];
    let mut upper = vec![0.0; n];
    for i in 1..n - 1 {
        let h0 = times[i] - times[i - 1];
        let h1 = times[i + 1] - times[i];
        diag[i] = (h0 + h1) / 3.0;
        upper[i] = h1 / 6.0;
        rhs[i] = (&values[i + 1] - &values[i]) / h1 - (&values[i] - &values[i - 1]) / h0;
    }
    // Forward elimination over interior nodes; m[0] = m[n-1] = 0.
    for i in 2..n - 1 {
        let lower = (times[i] - times[i - 1]) / 6.0;
        let w = lower / diag[i - 1];
        diag[i] -= w * upper[i - 1];
        let prev = rhs[i - 1].clone();
        rhs[i] -= prev * w;
    }
    for i in (1..n - 1).rev() {
        let next = if i + 1 < n - 1 { m[i + 1].clone() * upper[i] } else { Mat::zeros(r, c) };
        m[i] = (&rhs[i] - next) / diag[i];
    }
    m
}

/// How many RK4 steps to take over an interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepPolicy {
    /// `max(min, ceil(per_unit * length))`
    PerUnitTime { per_unit: usize, min: usize },
    /// The same count regardless of length, so results vary smoothly with the endpoints.
    Fixed(usize),
}

impl Default for StepPolicy {
    fn default() -> Self {
        StepPolicy::PerUnitTime { per_unit: DEFAULT_STEPS_PER_UNIT, min: 64 }
    }
}

impl StepPolicy {
    pub fn steps(&self, length: f64) -> usize {
        match *self {
            StepPolicy::PerUnitTime { per_unit, min } => {
                ((per_unit as f64 * length.abs()).ceil() as usize).max(min).max(1)
            }
            StepPolicy::Fixed(n) => n.max(1),
        }
    }
}

/// `dx = A x dt + sqrt(2) B dw`, killed at rate `½ xᵀQx`.
#[derive(Debug, Clone)]
pub struct LtvSystem {
    n: usize,
    m: usize,
    horizon: (f64, f64),
    a: MatrixTrajectory,
    b: MatrixTrajectory,
    q: MatrixTrajectory,
    label: String,
}

impl LtvSystem {
    pub fn new(
        a: MatrixTrajectory,
        b: MatrixTrajectory,
        q: MatrixTrajectory,
        horizon: (f64, f64),
    ) -> Result<Self> {
        let (n, na) = a.shape();
        if n != na {
            return Err(Error::Dimension(format!("A is {n}x{na}, expected square")));
        }
        let (nb, m) = b.shape();
        if nb != n {
            return Err(Error::Dimension(format!("B has {nb} rows, A is {n}x{n}")));
        }
        if q.shape() != (n, n) {
            let (r, c) = q.shape();
            return Err(Error::Dimension(format!("Q is {r}x{c}, expected {n}x{n}")));
        }
        if !(horizon.1 > horizon.0) || !horizon.0.is_finite() || !horizon.1.is_finite() {
            return Err(Error::Parameter(format!("horizon {horizon:?} must satisfy t0 < t1")));
        }
        for (name, traj) in [("A", &a), ("B", &b)] {
            let nodes = traj.nodes();
            if !nodes.is_empty() && (nodes[0] > horizon.0 || nodes[nodes.len() - 1] < horizon.1) {
                return Err(Error::Parameter(format!("tabulated {name} does not cover the horizon")));
            }
        }
        let q = symmetrize_checked(q, horizon)?;
        Ok(Self { n, m, horizon, a, b, q, label: "custom".into() })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Heat equation: A = 0, B = I, Q = 0.
    pub fn heat(n: usize, horizon: (f64, f64)) -> Result<Self> {
        Ok(Self::new(
            MatrixTrajectory::zeros(n, n),
            MatrixTrajectory::constant(Mat::identity(n, n)),
            MatrixTrajectory::zeros(n, n),
            horizon,
        )?
        .with_label("heat"))
    }

    /// A = 0, B = I, Q = 2·diag(d) with every entry of `d` positive.
    pub fn diagonal_case(d: &[f64], horizon: (f64, f64)) -> Result<Self> {
        if d.is_empty() || d.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Parameter("diagonal case needs positive entries".into()));
        }
        let n = d.len();
        let q = Mat::from_diagonal(&nalgebra::DVector::from_iterator(n, d.iter().map(|v| 2.0 * v)));
        Ok(Self::new(
            MatrixTrajectory::zeros(n, n),
            MatrixTrajectory::constant(Mat::identity(n, n)),
            MatrixTrajectory::constant(q),
            horizon,
        )?
        .with_label("diagonal_case"))
    }

    /// A damped oscillator with a time-varying stiffness driven through one input, Q = 0.
    pub fn linear_example(horizon: (f64, f64)) -> Result<Self> {
        let a = MatrixTrajectory::sinusoid(
            Mat::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.2]),
            Mat::from_row_slice(2, 2, &[0.0, 0.0, -0.5, 0.0]),
            1.0,
            0.0,
        )?;
        Ok(Self::new(
            a,
            MatrixTrajectory::constant(Mat::from_row_slice(2, 1, &[0.0, 1.0])),
            MatrixTrajectory::zeros(2, 2),
            horizon,
        )?
        .with_label("linear_example"))
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn horizon(&self) -> (f64, f64) {
        self.horizon
    }
    pub fn label(&self) -> &str {
        &self.label
    }
    pub fn a_trajectory(&self) -> &MatrixTrajectory {
        &self.a
    }
    pub fn b_trajectory(&self) -> &MatrixTrajectory {
        &self.b
    }
    pub fn q_trajectory(&self) -> &MatrixTrajectory {
        &self.q
    }

    pub fn a(&self, t: f64) -> Mat {
        self.a.eval(t)
    }
    pub fn b(&self, t: f64) -> Mat {
        self.b.eval(t)
    }
    pub fn q(&self, t: f64) -> Mat {
        linalg::symmetrize(&self.q.eval(t))
    }
    /// `B Bᵀ`
    pub fn diffusion(&self, t: f64) -> Mat {
        let b = self.b.eval(t);
        &b * b.transpose()
    }
    /// `B̂ B̂ᵀ = 2 B Bᵀ`, the control-weight matrix of the distance problem.
    pub fn control_weight(&self, t: f64) -> Mat {
        self.diffusion(t) * 2.0
    }

    /// `Q ≡ 0` for the kinds whose identity can be decided from the data.
    pub fn killing_is_zero(&self) -> bool {
        match &self.q.inner {
            Trajectory::Constant(m) => m.iter().all(|&v| v == 0.0),
            Trajectory::Tabulated { values, .. } => values.iter().all(|m| m.iter().all(|&v| v == 0.0)),
            Trajectory::Sinusoid { offset, amplitude, .. } => {
                offset.iter().chain(amplitude.iter()).all(|&v| v == 0.0)
            }
            Trajectory::Function(_) => false,
        }
    }

    /// Same system restricted to a different horizon.
    pub fn with_horizon(&self, horizon: (f64, f64)) -> Result<Self> {
        let mut s = Self::new(self.a.clone(), self.b.clone(), self.q.clone(), horizon)?;
        s.label = self.label.clone();
        Ok(s)
    }
}

fn symmetrize_checked(q: MatrixTrajectory, horizon: (f64, f64)) -> Result<MatrixTrajectory> {
    let check = |m: &Mat| -> Result<()> {
        let scale = linalg::max_abs(m).max(1.0);
        let asym = linalg::max_abs(&(m - m.transpose()));
        if asym > SYMMETRY_TOLERANCE * scale {
            return Err(Error::Parameter(format!("Q is not symmetric (asymmetry {asym:e})")));
        }
        Ok(())
    };
    let inner = match q.inner {
        Trajectory::Constant(m) => {
            check(&m)?;
            Trajectory::Constant(linalg::symmetrize(&m))
        }
        Trajectory::Tabulated { times, values, curvature } => {
            values.iter().try_for_each(&check)?;
            Trajectory::Tabulated {
                times,
                values: values.iter().map(linalg::symmetrize).collect(),
                curvature: curvature.iter().map(linalg::symmetrize).collect(),
            }
        }
        Trajectory::Sinusoid { offset, amplitude, frequency, phase } => {
            check(&offset)?;
            check(&amplitude)?;
            Trajectory::Sinusoid {
                offset: linalg::symmetrize(&offset),
                amplitude: linalg::symmetrize(&amplitude),
                frequency,
                phase,
            }
        }
        Trajectory::Function(f) => {
            check(&f(horizon.0))?;
            Trajectory::Function(Arc::new(move |t| linalg::symmetrize(&f(t))))
        }
    };
    Ok(MatrixTrajectory { inner, ..q })
}

/// Transition matrix `Φ(t, τ)` of `ẋ = A x`, integrated from `τ` to `t`.
pub fn state_transition(a: &MatrixTrajectory, t: f64, tau: f64, steps: usize) -> Result<Mat> {
    let n = a.shape().0;
    ode::rk4(Mat::identity(n, n), tau, t, steps, |s, phi| a.eval(s) * phi, ode::no_observer)
}

/// `(Φ(t, t0), Γ(t, t0))` where `Γ = ∫ Φ(t,s) S(s) Φ(t,s)ᵀ ds`, from the
/// Lyapunov equation `Γ' = AΓ + ΓAᵀ + S`, `Γ(t0) = 0`.
pub fn transition_and_gramian(
    drift: impl Fn(f64) -> Mat,
    weight: impl Fn(f64) -> Mat,
    n: usize,
    t0: f64,
    t: f64,
    steps: usize,
) -> Result<(Mat, Mat)> {
    let y0 = (Mat::identity(n, n), Mat::zeros(n, n));
    let (phi, gamma) = ode::rk4(
        y0,
        t0,
        t,
        steps,
        |s, (phi, gamma): &(Mat, Mat)| {
            let a = drift(s);
            let dg = &a * gamma + gamma * a.transpose() + weight(s);
            (&a * phi, linalg::symmetrize(&dg))
        },
        ode::no_observer,
    )?;
    Ok((phi, linalg::symmetrize(&gamma)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GramianKind {
    /// Open loop with the control weight `B̂B̂ᵀ`.
    OpenLoop,
    /// Closed loop `Â = A − B̂B̂ᵀΠ` with the terminal-free Riccati solution.
    ClosedLoop,
}

#[derive(Debug, Clone)]
pub struct Gramian {
    pub matrix: Mat,
    /// `t == t0`: the matrix is zero and not invertible.
    pub degenerate: bool,
}

pub fn controllability_gramian(
    sys: &LtvSystem,
    kind: GramianKind,
    t0: f64,
    t: f64,
    policy: StepPolicy,
) -> Result<Gramian> {
    if t < t0 {
        return Err(Error::Parameter(format!("Gramian needs t >= t0, got [{t0}, {t}]")));
    }
    let n = sys.n();
    if t == t0 {
        return Ok(Gramian { matrix: Mat::zeros(n, n), degenerate: true });
    }
    let matrix = match kind {
        GramianKind::OpenLoop => {
            transition_and_gramian(|s| sys.a(s), |s| sys.control_weight(s), n, t0, t, policy.steps(t - t0))?.1
        }
        GramianKind::ClosedLoop => crate::riccati::closed_loop(sys, t0, t, policy)?.gramian().clone(),
    };
    Ok(Gramian { matrix, degenerate: false })
}

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub controllable: bool,
    pub gramian_min_eigenvalue: f64,
    pub gramian_max_eigenvalue: f64,
    pub killing_psd: bool,
    /// Smallest eigenvalue of Q over the samples, relative to the largest magnitude seen.
    pub killing_min_relative_eigenvalue: f64,
    /// A sample time where Q is strictly positive definite, if any.
    pub killing_positive_definite_at: Option<f64>,
    pub tolerance: f64,
    pub samples: usize,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.controllable && self.killing_psd
    }
}

/// Controllability over the full horizon and positive semidefiniteness of `Q`
/// at the integration nodes and any tabulation nodes. `tol` is relative to the
/// largest eigenvalue.
pub fn check_assumptions(sys: &LtvSystem, tol: f64, policy: StepPolicy) -> Result<AssumptionReport> {
    let (t0, t1) = sys.horizon();
    let g = controllability_gramian(sys, GramianKind::OpenLoop, t0, t1, policy)?;
    let (gmin, gmax) = linalg::min_max_eigenvalue(&g.matrix);
    let controllable = gmax > 0.0 && gmin > tol * gmax;

    let steps = policy.steps(t1 - t0);
    let mut times: Vec<f64> = (0..=steps).map(|k| t0 + (t1 - t0) * k as f64 / steps as f64).collect();
    times.extend(sys.q_trajectory().nodes().iter().filter(|&&s| s >= t0 && s <= t1));
    let mut worst = f64::INFINITY;
    let mut psd = true;
    let mut pd_at = None;
    for &s in &times {
        let (lo, hi) = linalg::min_max_eigenvalue(&sys.q(s));
        let scale = hi.abs().max(lo.abs());
        let rel = if scale > 0.0 { lo / scale } else { 0.0 };
        worst = worst.min(rel);
        if lo < -tol * scale.max(f64::MIN_POSITIVE) {
            psd = false;
        }
        if pd_at.is_none() && scale > 0.0 && lo > tol * scale {
            pd_at = Some(s);
        }
    }
    Ok(AssumptionReport {
        controllable,
        gramian_min_eigenvalue: gmin,
        gramian_max_eigenvalue: gmax,
        killing_psd: psd,
        killing_min_relative_eigenvalue: worst,
        killing_positive_definite_at: pd_at,
        tolerance: tol,
        samples: times.len(),
    })
}

// ---------------------------------------------------------------------------
// JSON system definitions

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MatrixSpec {
    Constant {
        value: Vec<Vec<f64>>,
    },
    Tabulated {
        times: Vec<f64>,
        matrices: Vec<Vec<Vec<f64>>>,
        #[serde(default)]
        interpolation: Interpolation,
    },
    Sinusoid {
        offset: Vec<Vec<f64>>,
        amplitude: Vec<Vec<f64>>,
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
}

impl MatrixSpec {
    pub fn build(&self) -> Result<MatrixTrajectory> {
        match self {
            MatrixSpec::Constant { value } => Ok(MatrixTrajectory::constant(linalg::from_rows(value)?)),
            MatrixSpec::Tabulated { times, matrices, interpolation } => MatrixTrajectory::tabulated(
                times.clone(),
                matrices.iter().map(|m| linalg::from_rows(m)).collect::<Result<_>>()?,
                *interpolation,
            ),
            MatrixSpec::Sinusoid { offset, amplitude, frequency, phase } => MatrixTrajectory::sinusoid(
                linalg::from_rows(offset)?,
                linalg::from_rows(amplitude)?,
                *frequency,
                *phase,
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinSystem {
    Heat,
    LinearExample,
    DiagonalCase,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<BuiltinSystem>,
    pub horizon: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub a: Option<MatrixSpec>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub b: Option<MatrixSpec>,
    #[serde(rename = "Q", default, skip_serializing_if = "Option::is_none")]
    pub q: Option<MatrixSpec>,
    /// Diagonal of `D` for the `diagonal_case` builtin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<Vec<f64>>,
}

impl SystemSpec {
    pub fn build(&self) -> Result<LtvSystem> {
        let horizon = (self.horizon[0], self.horizon[1]);
        let sys = match self.builtin {
            Some(BuiltinSystem::Heat) => LtvSystem::heat(self.n.unwrap_or(1), horizon)?,
            Some(BuiltinSystem::LinearExample) => LtvSystem::linear_example(horizon)?,
            Some(BuiltinSystem::DiagonalCase) => {
                let d = self.d.clone().unwrap_or_else(|| vec![0.25, 1.0]);
                LtvSystem::diagonal_case(&d, horizon)?
            }
            None => {
                let missing = |name: &str| Error::Config(format!("missing field `{name}`"));
                let a = self.a.as_ref().ok_or_else(|| missing("A"))?.build()?;
                let b = self.b.as_ref().ok_or_else(|| missing("B"))?.build()?;
                let q = self.q.as_ref().ok_or_else(|| missing("Q"))?.build()?;
                LtvSystem::new(a, b, q, horizon)?
            }
        };
        if let Some(n) = self.n {
            if n != sys.n() {
                return Err(Error::Dimension(format!("declared n = {n}, matrices give {}", sys.n())));
            }
        }
        if let Some(m) = self.m {
            if m != sys.m() {
                return Err(Error::Dimension(format!("declared m = {m}, B has {} columns", sys.m())));
            }
        }
        Ok(sys)
    }
}

impl LtvSystem {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SystemSpec = serde_json::from_str(text)?;
        spec.build()
    }
}

impl OdeState for Vec<Mat> {
    fn axpy(&self, h: f64, k: &Self) -> Self {
        self.iter().zip(k).map(|(a, b)| a + b * h).collect()
    }
    fn is_finite(&self) -> bool {
        self.iter().all(linalg::is_finite)
    }
}
