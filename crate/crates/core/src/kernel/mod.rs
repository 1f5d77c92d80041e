//! The distance form `M(t, t0)`, the trace rate `θ`, the normalizer, and
//! evaluation of the Markov kernel
//! `κ(t0, x, t, y) = c(t, t0) · exp(−½ [x; y]ᵀ M [x; y])`.
//!
//! `x` is the state at `t0`, `y` the state at `t`. The kernel solves the
//! forward equation in `y`.

pub mod closed_form;
pub mod normalizer;

use std::f64::consts::PI;

use serde::Serialize;

pub use normalizer::{
    default_deltas, matched_asymptotics, theta_integral_on_log_grid, MatchedAsymptotics, ThetaIntegral,
};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, SpdFactor, Vector};
use crate::ltv_system::{LtvSystem, StepPolicy};
use crate::riccati::{self, ClosedLoopSystem};

pub const CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Definiteness {
    PositiveDefinite,
    PositiveSemidefinite { rank: usize },
}

/// `½dist²(x, y) = ½ [x; y]ᵀ M [x; y]` with
/// `M11 = Φ̂ᵀΓ̂⁻¹Φ̂ + Π(t0)`, `M12 = −Φ̂ᵀΓ̂⁻¹`, `M22 = Γ̂⁻¹`.
#[derive(Debug, Clone)]
pub struct DistanceForm {
    pub t0: f64,
    pub t: f64,
    pub m11: Mat,
    pub m12: Mat,
    pub m22: Mat,
    pub definiteness: Definiteness,
    pub min_eigenvalue: f64,
}

pub fn distance_form(cl: &ClosedLoopSystem) -> Result<DistanceForm> {
    let (t0, t) = (cl.t0(), cl.t());
    let gamma = cl.gramian();
    let condition = linalg::condition_number(gamma);
    if condition > CONDITION_LIMIT {
        return Err(Error::DegenerateHorizon {
            t0,
            t,
            reason: format!("closed-loop Gramian condition number {condition:e}"),
        });
    }
    let gamma_inv = SpdFactor::new(gamma, "closed-loop Gramian")?.inverse();
    let phi = cl.transition();
    let m12 = -(phi.transpose() * &gamma_inv);
    let m11 = linalg::symmetrize(&(phi.transpose() * &gamma_inv * phi + cl.cost_to_go()));
    let form = DistanceForm::from_blocks(t0, t, m11, m12, gamma_inv);
    Ok(form)
}

impl DistanceForm {
    pub fn from_blocks(t0: f64, t: f64, m11: Mat, m12: Mat, m22: Mat) -> Self {
        let mut form = Self {
            t0,
            t,
            m11,
            m12,
            m22,
            definiteness: Definiteness::PositiveDefinite,
            min_eigenvalue: 0.0,
        };
        let ev = linalg::sym_eigenvalues(&form.full());
        let max = ev[ev.len() - 1].abs().max(f64::MIN_POSITIVE);
        form.min_eigenvalue = ev[0];
        let floor = 1e-12 * max;
        if ev[0] <= floor {
            let rank = ev.iter().filter(|&&v| v > floor).count();
            form.definiteness = Definiteness::PositiveSemidefinite { rank };
        }
        form
    }

    pub fn n(&self) -> usize {
        self.m11.nrows()
    }

    pub fn full(&self) -> Mat {
        let n = self.n();
        let mut m = Mat::zeros(2 * n, 2 * n);
        m.view_mut((0, 0), (n, n)).copy_from(&self.m11);
        m.view_mut((0, n), (n, n)).copy_from(&self.m12);
        m.view_mut((n, 0), (n, n)).copy_from(&self.m12.transpose());
        m.view_mut((n, n), (n, n)).copy_from(&self.m22);
        m
    }

    /// `½ [x; y]ᵀ M [x; y]`, clamped at zero against round-off.
    pub fn half_squared_distance(&self, x: &Vector, y: &Vector) -> f64 {
        let q = x.dot(&(&self.m11 * x)) + 2.0 * x.dot(&(&self.m12 * y)) + y.dot(&(&self.m22 * y));
        (0.5 * q).max(0.0)
    }

    /// Whether `κ(t0,x,t,y) = κ(t0,y,t,x)` holds for this form, to `tol` relative.
    pub fn is_spatially_symmetric(&self, tol: f64) -> bool {
        let scale = linalg::max_abs(&self.full()).max(f64::MIN_POSITIVE);
        linalg::max_abs(&(&self.m11 - &self.m22)) <= tol * scale
            && linalg::max_abs(&(&self.m12 - self.m12.transpose())) <= tol * scale
    }
}

pub fn squared_distance(form: &DistanceForm, x: &Vector, y: &Vector) -> Result<f64> {
    let n = form.n();
    if x.len() != n || y.len() != n {
        return Err(Error::Dimension(format!("points have lengths {} and {}, expected {n}", x.len(), y.len())));
    }
    Ok(form.half_squared_distance(x, y))
}

/// `θ(τ) = trace A_τ + ⟨B_τB_τᵀ, Γ̂(τ, t0)⁻¹⟩` through the closed loop on `[t0, τ]`.
pub fn theta(sys: &LtvSystem, t0: f64, tau: f64, policy: StepPolicy) -> Result<f64> {
    if !(tau > t0) {
        return Err(Error::DegenerateHorizon { t0, t: tau, reason: "θ is singular at t0".into() });
    }
    let cl = riccati::closed_loop(sys, t0, tau, policy)?;
    let gamma = SpdFactor::new(cl.gramian(), "closed-loop Gramian")?;
    let bbt = sys.diffusion(tau);
    Ok(sys.a(tau).trace() + gamma.solve_mat(&bbt).trace())
}

/// The same rate from an assembled form: `trace(A_t + B_tB_tᵀ M22)`.
pub fn theta_from_form(sys: &LtvSystem, form: &DistanceForm) -> f64 {
    (sys.a(form.t) + sys.diffusion(form.t) * &form.m22).trace()
}

pub fn log_gaussian_integral(aq: &Mat, b: &Vector) -> Result<f64> {
    let n = aq.nrows();
    if aq.ncols() != n || b.len() != n {
        return Err(Error::Dimension("gaussian_integral: shapes disagree".into()));
    }
    let f = SpdFactor::new(aq, "gaussian_integral quadratic form").map_err(|_| {
        Error::Parameter("gaussian_integral needs a symmetric positive definite matrix".into())
    })?;
    Ok(0.5 * (n as f64 * (2.0 * PI).ln() - f.log_det) + 0.5 * b.dot(&f.solve_vec(b)))
}

/// `∫ exp(−½ xᵀAx + bᵀx) dx = √((2π)ⁿ / det A) · exp(½ bᵀA⁻¹b)`.
pub fn gaussian_integral(aq: &Mat, b: &Vector) -> Result<f64> {
    log_gaussian_integral(aq, b).map(f64::exp)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseTag {
    General,
    Heat,
    Linear,
    Diagonal,
}

impl CaseTag {
    pub fn detect(sys: &LtvSystem) -> Self {
        let n = sys.n();
        let is_zero = |m: Option<&Mat>| m.is_some_and(|m| m.iter().all(|&v| v == 0.0));
        let drift_free = is_zero(sys.a_trajectory().constant_value());
        let unit_noise = sys.b_trajectory().constant_value().is_some_and(|b| *b == Mat::identity(n, n));
        if sys.killing_is_zero() {
            return if drift_free && unit_noise { CaseTag::Heat } else { CaseTag::Linear };
        }
        let q = sys.q_trajectory().constant_value();
        let diagonal_q = q.is_some_and(|q| {
            (0..n).all(|i| q[(i, i)] > 0.0 && (0..n).all(|j| i == j || q[(i, j)] == 0.0))
        });
        if drift_free && unit_noise && diagonal_q {
            CaseTag::Diagonal
        } else {
            CaseTag::General
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizerMethod {
    /// Normalization for `Q ≡ 0`, matched asymptotics otherwise.
    #[default]
    Auto,
    MatchedAsymptotics,
    /// `∫κ dy = 1`; only valid without killing.
    Normalization,
}

#[derive(Debug, Clone)]
pub struct KernelConfig {
    pub policy: StepPolicy,
    pub method: NormalizerMethod,
    /// Anchor offsets from `t0`; `None` uses `default_deltas`.
    pub deltas: Option<Vec<f64>>,
    /// RK4 steps for each short anchor closed loop.
    pub anchor_steps: usize,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self { policy: StepPolicy::default(), method: NormalizerMethod::Auto, deltas: None, anchor_steps: 32 }
    }
}

impl KernelConfig {
    /// Step counts independent of the horizon length, so results are smooth
    /// in both endpoints (finite differences in time rely on this).
    pub fn fixed(steps: usize) -> Self {
        Self { policy: StepPolicy::Fixed(steps), ..Self::default() }
    }
}

/// Assembled kernel for one pair of times.
#[derive(Debug, Clone)]
pub struct KernelEvaluator {
    closed_loop: ClosedLoopSystem,
    form: DistanceForm,
    log_normalizer: f64,
    case_tag: CaseTag,
    method: NormalizerMethod,
    matched: Option<MatchedAsymptotics>,
}

impl KernelEvaluator {
    pub fn new(sys: &LtvSystem, t0: f64, t: f64, config: &KernelConfig) -> Result<Self> {
        let cl = riccati::closed_loop(sys, t0, t, config.policy)?;
        let form = distance_form(&cl)?;
        let case_tag = CaseTag::detect(sys);
        let method = match config.method {
            NormalizerMethod::Auto if sys.killing_is_zero() => NormalizerMethod::Normalization,
            NormalizerMethod::Auto => NormalizerMethod::MatchedAsymptotics,
            m => m,
        };
        let (log_normalizer, matched) = match method {
            NormalizerMethod::Normalization => {
                if !sys.killing_is_zero() {
                    return Err(Error::Parameter("normalization-based prefactor requires Q ≡ 0".into()));
                }
                (-log_gaussian_integral(&form.m22, &Vector::zeros(sys.n()))?, None)
            }
            _ => {
                let deltas = config.deltas.clone().unwrap_or_else(|| default_deltas(t - t0));
                let ma = matched_asymptotics(sys, t0, t, &deltas, config.anchor_steps)?;
                (ma.log_normalizer, Some(ma))
            }
        };
        Ok(Self { closed_loop: cl, form, log_normalizer, case_tag, method, matched })
    }

    pub fn n(&self) -> usize {
        self.form.n()
    }
    pub fn t0(&self) -> f64 {
        self.form.t0
    }
    pub fn t(&self) -> f64 {
        self.form.t
    }
    pub fn form(&self) -> &DistanceForm {
        &self.form
    }
    pub fn closed_loop(&self) -> &ClosedLoopSystem {
        &self.closed_loop
    }
    pub fn case_tag(&self) -> CaseTag {
        self.case_tag
    }
    pub fn method(&self) -> NormalizerMethod {
        self.method
    }
    pub fn matched_asymptotics(&self) -> Option<&MatchedAsymptotics> {
        self.matched.as_ref()
    }

    /// `c(t, t0)`, the factor in front of the Gaussian.
    pub fn normalizer(&self) -> f64 {
        self.log_normalizer.exp()
    }
    pub fn log_normalizer(&self) -> f64 {
        self.log_normalizer
    }

    /// `a` with the antiderivative of θ fixed so that `det(M11)^{1/2} e^{Θ} → 1`
    /// as `t ↓ t0`; under that convention `a = (2π)^{−n/2}`.
    pub fn prefactor(&self) -> f64 {
        (2.0 * PI).powf(-0.5 * self.n() as f64)
    }

    /// `Θ(t)` in the convention of [`Self::prefactor`], so `c = a·e^{−Θ}`.
    pub fn theta_integral(&self) -> f64 {
        self.prefactor().ln() - self.log_normalizer
    }

    /// The prefactor relative to any other antiderivative value `Θ(t)`.
    pub fn implied_prefactor(&self, theta_integral: f64) -> f64 {
        (self.log_normalizer + theta_integral).exp()
    }

    pub fn log_eval(&self, x: &Vector, y: &Vector) -> f64 {
        self.log_normalizer - self.form.half_squared_distance(x, y)
    }

    pub fn eval(&self, x: &Vector, y: &Vector) -> f64 {
        self.log_eval(x, y).exp()
    }
}

pub fn kernel_eval(k: &KernelEvaluator, x: &Vector, y: &Vector) -> Result<f64> {
    let n = k.n();
    if x.len() != n || y.len() != n {
        return Err(Error::Dimension(format!("points have lengths {} and {}, expected {n}", x.len(), y.len())));
    }
    Ok(k.eval(x, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    use crate::ltv_system::MatrixTrajectory;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn heat_distance_form() {
        let sys = LtvSystem::heat(1, (0.0, 1.0)).unwrap();
        let cl = riccati::closed_loop(&sys, 0.0, 1.0, StepPolicy::default()).unwrap();
        let m = distance_form(&cl).unwrap();
        assert_relative_eq!(m.m11[(0, 0)], 0.5, epsilon = 1e-13);
        assert_relative_eq!(m.m22[(0, 0)], 0.5, epsilon = 1e-13);
        assert_relative_eq!(m.m12[(0, 0)], -0.5, epsilon = 1e-13);
        assert_eq!(m.definiteness, Definiteness::PositiveSemidefinite { rank: 1 });
        assert_relative_eq!(squared_distance(&m, &v(&[1.0]), &v(&[0.0])).unwrap(), 0.25, epsilon = 1e-13);
        assert_eq!(squared_distance(&m, &v(&[0.0]), &v(&[0.0])).unwrap(), 0.0);
    }

    #[test]
    fn diagonal_distance_form() {
        let sys = LtvSystem::diagonal_case(&[0.25], (0.0, 1.0)).unwrap();
        let cl = riccati::closed_loop(&sys, 0.0, 1.0, StepPolicy::default()).unwrap();
        let m = distance_form(&cl).unwrap();
        assert_relative_eq!(m.m11[(0, 0)], 0.656_517_642_7, epsilon = 1e-10);
        assert_relative_eq!(m.m22[(0, 0)], 0.656_517_642_7, epsilon = 1e-10);
        assert_relative_eq!(m.m12[(0, 0)], -0.425_459_064_1, epsilon = 1e-10);
        assert_eq!(m.definiteness, Definiteness::PositiveDefinite);
        assert!(m.is_spatially_symmetric(1e-10));
        assert_relative_eq!(m.half_squared_distance(&v(&[1.0]), &v(&[0.0])), 0.328_258_821_4, epsilon = 1e-10);
    }

    #[test]
    fn theta_special_cases() {
        let heat = LtvSystem::heat(1, (0.0, 1.0)).unwrap();
        assert_relative_eq!(theta(&heat, 0.0, 0.5, StepPolicy::default()).unwrap(), 1.0, epsilon = 1e-12);
        let diag = LtvSystem::diagonal_case(&[0.25], (0.0, 1.0)).unwrap();
        assert_relative_eq!(theta(&diag, 0.0, 1.0, StepPolicy::default()).unwrap(), 0.656_517_642_7, epsilon = 1e-10);
        assert!(matches!(theta(&diag, 0.3, 0.3, StepPolicy::default()), Err(Error::DegenerateHorizon { .. })));

        // traceless drift contributes nothing
        let sys = LtvSystem::new(
            MatrixTrajectory::constant(Mat::from_diagonal(&v(&[1.0, -1.0]))),
            MatrixTrajectory::constant(Mat::identity(2, 2)),
            MatrixTrajectory::zeros(2, 2),
            (0.0, 1.0),
        )
        .unwrap();
        let cl = riccati::closed_loop(&sys, 0.0, 1.0, StepPolicy::default()).unwrap();
        let g = cl.gramian();
        let expected = (0..2).map(|i| 1.0 / g[(i, i)]).sum::<f64>();
        assert_relative_eq!(theta(&sys, 0.0, 1.0, StepPolicy::default()).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn gaussian_integral_values() {
        let one = |a: f64| Mat::from_element(1, 1, a);
        assert_relative_eq!(gaussian_integral(&one(1.0), &v(&[0.0])).unwrap(), 2.506_628_274_6, epsilon = 1e-10);
        // ∫ exp(−x² − x) dx by composite Simpson on [−12, 12]
        let simpson = {
            let (lo, hi, n) = (-12.0, 12.0, 4000);
            let h = (hi - lo) / n as f64;
            let f = |x: f64| (-x * x - x).exp();
            (0..=n)
                .map(|i| {
                    let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                    w * f(lo + i as f64 * h)
                })
                .sum::<f64>()
                * h
                / 3.0
        };
        let g = gaussian_integral(&one(2.0), &v(&[1.0])).unwrap();
        assert_relative_eq!(g, simpson, max_relative = 1e-12);
        assert_relative_eq!(g, 2.275_875_794_5, epsilon = 1e-10);
        assert_relative_eq!(
            gaussian_integral(&Mat::identity(2, 2), &v(&[1.0, 1.0])).unwrap(),
            17.079_468_445_3,
            epsilon = 1e-9
        );
        assert!(gaussian_integral(&one(-1.0), &v(&[0.0])).is_err());
    }

    #[test]
    fn kernel_values_for_closed_form_cases() {
        let heat = LtvSystem::heat(1, (0.0, 1.0)).unwrap();
        let k = KernelEvaluator::new(&heat, 0.0, 1.0, &KernelConfig::default()).unwrap();
        assert_eq!(k.case_tag(), CaseTag::Heat);
        assert_relative_eq!(k.eval(&v(&[0.7]), &v(&[0.7])), 0.282_094_791_8, epsilon = 1e-10);

        let diag = LtvSystem::diagonal_case(&[0.25], (0.0, 1.0)).unwrap();
        let k = KernelEvaluator::new(&diag, 0.0, 1.0, &KernelConfig::default()).unwrap();
        assert_eq!(k.case_tag(), CaseTag::Diagonal);
        let expected = closed_form::closed_form_kernel(
            closed_form::ClosedFormCase::Diagonal { d: &Mat::from_element(1, 1, 0.25) },
            0.0,
            &v(&[0.0]),
            1.0,
            &v(&[0.0]),
        )
        .unwrap();
        assert_relative_eq!(k.eval(&v(&[0.0]), &v(&[0.0])), expected, max_relative = 1e-8);
    }

    #[test]
    fn heat_normalizer_through_matched_asymptotics() {
        let heat = LtvSystem::heat(1, (0.0, 1.0)).unwrap();
        let cfg = KernelConfig { method: NormalizerMethod::MatchedAsymptotics, ..KernelConfig::default() };
        let k = KernelEvaluator::new(&heat, 0.0, 1.0, &cfg).unwrap();
        assert_relative_eq!(k.normalizer(), 0.282_094_791_8, max_relative = 1e-10);
    }

    #[test]
    fn normalization_without_killing_matches_matched_asymptotics() {
        let sys = LtvSystem::linear_example((0.0, 2.0)).unwrap();
        let a = KernelEvaluator::new(&sys, 0.0, 1.3, &KernelConfig::default()).unwrap();
        assert_eq!(a.method(), NormalizerMethod::Normalization);
        let cfg = KernelConfig { method: NormalizerMethod::MatchedAsymptotics, ..KernelConfig::default() };
        let b = KernelEvaluator::new(&sys, 0.0, 1.3, &cfg).unwrap();
        assert_relative_eq!(a.normalizer(), b.normalizer(), max_relative = 1e-6);
    }

    #[test]
    fn normalization_is_refused_with_killing() {
        let diag = LtvSystem::diagonal_case(&[0.25], (0.0, 1.0)).unwrap();
        let cfg = KernelConfig { method: NormalizerMethod::Normalization, ..KernelConfig::default() };
        assert!(KernelEvaluator::new(&diag, 0.0, 1.0, &cfg).is_err());
    }

    #[test]
    fn prefactor_conventions() {
        let diag = LtvSystem::diagonal_case(&[0.25], (0.0, 3.0)).unwrap();
        let k = KernelEvaluator::new(&diag, 0.0, 1.0, &KernelConfig::default()).unwrap();
        assert_relative_eq!(k.prefactor(), (2.0 * PI).powf(-0.5));
        assert_relative_eq!(k.prefactor() * (-k.theta_integral()).exp(), k.normalizer(), max_relative = 1e-14);
        // against the antiderivative ½ ln sinh(ω(t − t0)), ω = 1
        let a = k.implied_prefactor(0.5 * 1.0_f64.sinh().ln());
        assert_relative_eq!(a, 0.282_094_791_8, max_relative = 1e-8);
    }

    /// Regular route for the normalizer: with `W = M22⁻¹` from
    /// `W' = AW + WAᵀ + S − WQW`, `c = (2π)^{−n/2} det W^{−1/2} exp(−½∫ tr QW)`.
    fn normalizer_by_forward_riccati(sys: &LtvSystem, t0: f64, t: f64, steps: usize) -> f64 {
        let n = sys.n();
        let (w, int) = crate::ode::rk4(
            (Mat::zeros(n, n), 0.0),
            t0,
            t,
            steps,
            |s, (w, _): &(Mat, f64)| {
                let a = sys.a(s);
                let q = sys.q(s);
                let dw = &a * w + w * a.transpose() + sys.control_weight(s) - w * &q * w;
                (dw, (&q * w).trace())
            },
            crate::ode::no_observer,
        )
        .unwrap();
        (-0.5 * n as f64 * (2.0 * PI).ln() - 0.5 * w.determinant().ln() - 0.5 * int).exp()
    }

    fn varying_system() -> LtvSystem {
        LtvSystem::new(
            MatrixTrajectory::sinusoid(
                Mat::from_row_slice(2, 2, &[0.1, 1.0, -0.5, -0.2]),
                Mat::from_row_slice(2, 2, &[0.0, 0.3, 0.0, 0.0]),
                1.0,
                0.0,
            )
            .unwrap(),
            MatrixTrajectory::constant(Mat::from_row_slice(2, 2, &[1.0, 0.2, 0.0, 0.8])),
            MatrixTrajectory::sinusoid(Mat::identity(2, 2), Mat::identity(2, 2) * 0.5, 1.0, 0.0).unwrap(),
            (0.0, 3.0),
        )
        .unwrap()
    }

    #[test]
    fn matched_asymptotics_agrees_with_forward_riccati() {
        let sys = varying_system();
        for &t in &[0.2, 1.0, 2.5] {
            let k = KernelEvaluator::new(&sys, 0.0, t, &KernelConfig::default()).unwrap();
            let reference = normalizer_by_forward_riccati(&sys, 0.0, t, 4000);
            assert_relative_eq!(k.normalizer(), reference, max_relative = 1e-8);
        }
    }

    #[test]
    fn theta_block_and_gramian_forms_agree() {
        let sys = varying_system();
        for &tau in &[0.1, 0.55, 1.7] {
            let cl = riccati::closed_loop(&sys, 0.0, tau, StepPolicy::default()).unwrap();
            let form = distance_form(&cl).unwrap();
            let gram = theta(&sys, 0.0, tau, StepPolicy::default()).unwrap();
            assert_relative_eq!(theta_from_form(&sys, &form), gram, max_relative = 1e-10);
        }
    }

    #[test]
    fn general_system_is_not_spatially_symmetric() {
        let sys = varying_system();
        let k = KernelEvaluator::new(&sys, 0.0, 1.0, &KernelConfig::default()).unwrap();
        assert_eq!(k.case_tag(), CaseTag::General);
        assert!(!k.form().is_spatially_symmetric(1e-6));
    }

    #[test]
    fn very_short_horizon_is_degenerate() {
        let sys = LtvSystem::linear_example((0.0, 1.0)).unwrap();
        let r = KernelEvaluator::new(&sys, 0.0, 1e-6, &KernelConfig::default());
        assert!(matches!(r, Err(Error::DegenerateHorizon { .. }) | Err(Error::ControllabilityLoss { .. })), "{r:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn form_is_psd_and_kernel_positive(
            x in proptest::collection::vec(-3.0..3.0f64, 2),
            y in proptest::collection::vec(-3.0..3.0f64, 2),
            t in 0.3..2.5f64,
        ) {
            let sys = varying_system();
            let k = KernelEvaluator::new(&sys, 0.0, t, &KernelConfig::default()).unwrap();
            prop_assert_eq!(k.form().definiteness, Definiteness::PositiveDefinite);
            let (x, y) = (v(&x), v(&y));
            prop_assert!(k.form().half_squared_distance(&x, &y) >= 0.0);
            prop_assert!(k.eval(&x, &y) > 0.0);
        }

        #[test]
        fn diagonal_kernel_is_symmetric(x in -3.0..3.0f64, y in -3.0..3.0f64, t in 0.2..2.0f64) {
            let sys = LtvSystem::diagonal_case(&[0.25], (0.0, 2.0)).unwrap();
            let k = KernelEvaluator::new(&sys, 0.0, t, &KernelConfig::default()).unwrap();
            let (a, b) = (k.eval(&v(&[x]), &v(&[y])), k.eval(&v(&[y]), &v(&[x])));
            prop_assert!((a - b).abs() <= 1e-9 * a.max(b));
        }
    }
}
