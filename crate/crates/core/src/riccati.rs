//! Backward Riccati equation, its Hamiltonian cross-check, and the
//! closed-loop system built from the terminal-free solution.

use std::path::Path;
use std::sync::Arc;

use nalgebra::ColPivQR;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::ltv_system::{self, LtvSystem, MatrixTrajectory, StepPolicy};
use crate::ode;

pub const ESCAPE_BOUND: f64 = 1e12;
pub const CONDITION_LIMIT: f64 = 1e12;

/// `Π(τ, K₁, t)` on a uniform grid of `[t_start, t]`, with its τ-derivative
/// at every node for Hermite interpolation in between.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    terminal_time: f64,
    terminal_condition: Mat,
    times: Vec<f64>,
    values: Vec<Mat>,
    rates: Vec<Mat>,
    min_eigenvalue: f64,
}

/// `dΠ/dσ` with `σ = t − τ`: `AᵀΠ + ΠA − ΠSΠ + Q`, `S = B̂B̂ᵀ`.
fn riccati_rhs(sys: &LtvSystem, tau: f64, k: &Mat) -> Mat {
    let a = sys.a(tau);
    let s = sys.control_weight(tau);
    let ak = a.transpose() * k;
    let mut out = &ak + ak.transpose() - k * s * k + sys.q(tau);
    linalg::symmetrize_mut(&mut out);
    out
}

/// Integrates the Riccati equation backward from `Π(t) = K₁` down to `t_start`.
pub fn solve_riccati_on(sys: &LtvSystem, k1: &Mat, t_start: f64, t: f64, steps: usize) -> Result<RiccatiSolution> {
    let n = sys.n();
    if k1.shape() != (n, n) {
        return Err(Error::Dimension(format!("K1 is {:?}, expected {n}x{n}", k1.shape())));
    }
    if linalg::max_abs(&(k1 - k1.transpose())) > ltv_system::SYMMETRY_TOLERANCE * linalg::max_abs(k1).max(1.0) {
        return Err(Error::Parameter("terminal condition K1 is not symmetric".into()));
    }
    if !(t > t_start) {
        return Err(Error::Parameter(format!("Riccati horizon [{t_start}, {t}] is empty")));
    }
    let mut sigma_values = Vec::with_capacity(steps + 1);
    let k1 = linalg::symmetrize(k1);
    ode::rk4(
        k1.clone(),
        0.0,
        t - t_start,
        steps,
        |sigma, k| riccati_rhs(sys, t - sigma, k),
        |_, sigma, k: &Mat| {
            if linalg::max_abs(k) > ESCAPE_BOUND {
                return Err(Error::FiniteEscape { time: t - sigma, bound: ESCAPE_BOUND });
            }
            sigma_values.push((sigma, linalg::symmetrize(k)));
            Ok(())
        },
    )?;
    sigma_values.reverse();
    let times: Vec<f64> = sigma_values.iter().map(|(s, _)| t - s).collect();
    let values: Vec<Mat> = sigma_values.into_iter().map(|(_, k)| k).collect();
    let rates = times.iter().zip(&values).map(|(&tau, k)| -riccati_rhs(sys, tau, k)).collect();
    let min_eigenvalue = values
        .iter()
        .map(|k| linalg::sym_eigenvalues(k)[0])
        .fold(f64::INFINITY, f64::min);
    Ok(RiccatiSolution { terminal_time: t, terminal_condition: k1, times, values, rates, min_eigenvalue })
}

/// Integrates from `t` down to the start of the system horizon.
pub fn solve_riccati(sys: &LtvSystem, k1: &Mat, t: f64, steps: usize) -> Result<RiccatiSolution> {
    solve_riccati_on(sys, k1, sys.horizon().0, t, steps)
}

impl RiccatiSolution {
    pub fn terminal_time(&self) -> f64 {
        self.terminal_time
    }
    pub fn terminal_condition(&self) -> &Mat {
        &self.terminal_condition
    }
    /// Increasing grid; the last entry is the terminal time.
    pub fn times(&self) -> &[f64] {
        &self.times
    }
    pub fn values(&self) -> &[Mat] {
        &self.values
    }
    /// Smallest eigenvalue over every stored value (post-hoc PSD diagnostic).
    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eigenvalue
    }
    pub fn initial(&self) -> &Mat {
        &self.values[0]
    }

    /// Cubic Hermite interpolation; exact at the nodes, clamped outside.
    pub fn value_at(&self, tau: f64) -> Mat {
        let last = self.times.len() - 1;
        if tau <= self.times[0] {
            return self.values[0].clone();
        }
        if tau >= self.times[last] {
            return self.values[last].clone();
        }
        let i = self.times.partition_point(|&s| s <= tau) - 1;
        let h = self.times[i + 1] - self.times[i];
        let u = (tau - self.times[i]) / h;
        if u == 0.0 {
            return self.values[i].clone();
        }
        let (u2, u3) = (u * u, u * u * u);
        let h00 = 2.0 * u3 - 3.0 * u2 + 1.0;
        let h10 = u3 - 2.0 * u2 + u;
        let h01 = -2.0 * u3 + 3.0 * u2;
        let h11 = u3 - u2;
        &self.values[i] * h00 + &self.rates[i] * (h10 * h) + &self.values[i + 1] * h01 + &self.rates[i + 1] * (h11 * h)
    }

    /// Columns `tau, p_00, p_01, …` in row-major order.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let n = self.values[0].nrows();
        let mut header = vec!["tau".to_string()];
        for i in 0..n {
            for j in 0..n {
                header.push(format!("pi_{i}{j}"));
            }
        }
        let rows = self
            .times
            .iter()
            .zip(&self.values)
            .map(|(&tau, k)| {
                let mut row = vec![tau];
                for i in 0..n {
                    row.extend(k.row(i).iter());
                }
                row
            })
            .collect::<Vec<_>>();
        crate::io::write_csv(path, &header, &rows)
    }
}

/// Blocks of the 2n×2n transition of `ż = H z`, `H = [[A, −S], [−Q, −Aᵀ]]`,
/// taken backward from `t` to `τ`.
#[derive(Debug, Clone)]
pub struct HamiltonianTransition {
    pub psi11: Mat,
    pub psi12: Mat,
    pub psi21: Mat,
    pub psi22: Mat,
}

impl HamiltonianTransition {
    pub fn compute(sys: &LtvSystem, t: f64, tau: f64, steps: usize) -> Result<Self> {
        let n = sys.n();
        let psi = ode::rk4(
            Mat::identity(2 * n, 2 * n),
            0.0,
            t - tau,
            steps,
            |sigma, psi| -hamiltonian_matrix(sys, t - sigma) * psi,
            ode::no_observer,
        )?;
        Ok(Self {
            psi11: psi.view((0, 0), (n, n)).into_owned(),
            psi12: psi.view((0, n), (n, n)).into_owned(),
            psi21: psi.view((n, 0), (n, n)).into_owned(),
            psi22: psi.view((n, n), (n, n)).into_owned(),
        })
    }

    pub fn full(&self) -> Mat {
        let n = self.psi11.nrows();
        let mut m = Mat::zeros(2 * n, 2 * n);
        m.view_mut((0, 0), (n, n)).copy_from(&self.psi11);
        m.view_mut((0, n), (n, n)).copy_from(&self.psi12);
        m.view_mut((n, 0), (n, n)).copy_from(&self.psi21);
        m.view_mut((n, n), (n, n)).copy_from(&self.psi22);
        m
    }
}

pub fn hamiltonian_matrix(sys: &LtvSystem, tau: f64) -> Mat {
    let n = sys.n();
    let a = sys.a(tau);
    let mut h = Mat::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(&a);
    h.view_mut((0, n), (n, n)).copy_from(&(-sys.control_weight(tau)));
    h.view_mut((n, 0), (n, n)).copy_from(&(-sys.q(tau)));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));
    h
}

/// `Π(τ) = (Ψ₂₁ + Ψ₂₂K₁)(Ψ₁₁ + Ψ₁₂K₁)⁻¹`.
pub fn riccati_via_hamiltonian(sys: &LtvSystem, k1: &Mat, t: f64, tau: f64, steps: usize) -> Result<Mat> {
    let psi = HamiltonianTransition::compute(sys, t, tau, steps)?;
    let x = &psi.psi11 + &psi.psi12 * k1;
    let lambda = &psi.psi21 + &psi.psi22 * k1;
    // ‖[X; Λ]‖·‖X⁻¹‖: the amplification from the Hamiltonian flow into Π.
    let mut stacked = Mat::zeros(2 * x.nrows(), x.ncols());
    stacked.view_mut((0, 0), x.shape()).copy_from(&x);
    stacked.view_mut((x.nrows(), 0), x.shape()).copy_from(&lambda);
    let smallest = x.clone().singular_values().min();
    let condition = if smallest > 0.0 { stacked.singular_values().max() / smallest } else { f64::INFINITY };
    if condition > CONDITION_LIMIT {
        return Err(Error::NearConjugatePoint { condition, limit: CONDITION_LIMIT });
    }
    // Π X = Λ  ⇔  Xᵀ Πᵀ = Λᵀ
    let pi_t = ColPivQR::new(x.transpose())
        .solve(&lambda.transpose())
        .ok_or(Error::NearConjugatePoint { condition, limit: CONDITION_LIMIT })?;
    Ok(linalg::symmetrize(&pi_t.transpose()))
}

/// `Â = A − B̂B̂ᵀΠ(·, K₁, t)` as a trajectory.
pub fn feedback_drift(sys: &LtvSystem, riccati: Arc<RiccatiSolution>) -> MatrixTrajectory {
    let sys = sys.clone();
    let n = sys.n();
    MatrixTrajectory::from_fn(n, n, move |tau| sys.a(tau) - sys.control_weight(tau) * riccati.value_at(tau))
}

/// The system `(Â, B, 0)` on `[t0, t]` whose pure control energy is the
/// reduced cost for terminal weight `K₁`.
pub fn feedback_system(sys: &LtvSystem, k1: &Mat, t0: f64, t: f64, steps: usize) -> Result<LtvSystem> {
    let ric = Arc::new(solve_riccati_on(sys, k1, t0, t, steps)?);
    let n = sys.n();
    LtvSystem::new(feedback_drift(sys, ric), sys.b_trajectory().clone(), MatrixTrajectory::zeros(n, n), (t0, t))
}

/// The closed-loop data for terminal-free steering on `[t0, t]`.
#[derive(Debug, Clone)]
pub struct ClosedLoopSystem {
    system: LtvSystem,
    t0: f64,
    t: f64,
    riccati: Arc<RiccatiSolution>,
    drift: MatrixTrajectory,
    transition: Mat,
    gramian: Mat,
}

/// Smallest admissible eigenvalue of Γ̂ relative to its largest.
const GRAMIAN_FLOOR: f64 = 1e-14;

pub fn closed_loop(sys: &LtvSystem, t0: f64, t: f64, policy: StepPolicy) -> Result<ClosedLoopSystem> {
    closed_loop_with_steps(sys, t0, t, policy.steps(t - t0))
}

/// Riccati on `2·steps` intervals so every RK4 stage of the `steps`-interval
/// Gramian integration lands on a Riccati node.
pub fn closed_loop_with_steps(sys: &LtvSystem, t0: f64, t: f64, steps: usize) -> Result<ClosedLoopSystem> {
    if !(t > t0) {
        return Err(Error::DegenerateHorizon { t0, t, reason: "t must exceed t0".into() });
    }
    let n = sys.n();
    let riccati = Arc::new(solve_riccati_on(sys, &Mat::zeros(n, n), t0, t, 2 * steps)?);
    let drift = feedback_drift(sys, riccati.clone());
    let (transition, gramian) =
        ltv_system::transition_and_gramian(|s| drift.eval(s), |s| sys.control_weight(s), n, t0, t, steps)?;
    let (lo, hi) = linalg::min_max_eigenvalue(&gramian);
    if !(hi > 0.0) || lo <= GRAMIAN_FLOOR * hi {
        return Err(Error::ControllabilityLoss { t0, t, min_eigenvalue: lo });
    }
    Ok(ClosedLoopSystem { system: sys.clone(), t0, t, riccati, drift, transition, gramian })
}

impl ClosedLoopSystem {
    pub fn system(&self) -> &LtvSystem {
        &self.system
    }
    pub fn t0(&self) -> f64 {
        self.t0
    }
    pub fn t(&self) -> f64 {
        self.t
    }
    pub fn riccati(&self) -> &RiccatiSolution {
        &self.riccati
    }
    /// `Â`
    pub fn drift(&self) -> &MatrixTrajectory {
        &self.drift
    }
    /// `Φ̂(t, t0)`
    pub fn transition(&self) -> &Mat {
        &self.transition
    }
    /// `Γ̂(t, t0)`
    pub fn gramian(&self) -> &Mat {
        &self.gramian
    }
    /// `Π(t0, 0, t)`
    pub fn cost_to_go(&self) -> &Mat {
        self.riccati.initial()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn scalar(a: f64, b: f64, q: f64) -> LtvSystem {
        LtvSystem::new(
            MatrixTrajectory::constant(Mat::from_element(1, 1, a)),
            MatrixTrajectory::constant(Mat::from_element(1, 1, b)),
            MatrixTrajectory::constant(Mat::from_element(1, 1, q)),
            (0.0, 2.0),
        )
        .unwrap()
    }

    /// Constant-coefficient scalar Riccati in closed form:
    /// `k' = 2a k − s k² + q` in σ, `k(0) = k1`.
    fn scalar_reference(a: f64, s: f64, q: f64, k1: f64, sigma: f64) -> f64 {
        let root = (a * a + s * q).sqrt();
        let (kp, km) = ((a + root) / s, (a - root) / s);
        // k = (kp·C·e^{...} …): solve via the Möbius form.
        let e = (-2.0 * root * sigma).exp();
        let c = (k1 - kp) / (k1 - km);
        (kp - km * c * e) / (1.0 - c * e)
    }

    #[test]
    fn zero_killing_keeps_zero_solution() {
        let sys = LtvSystem::heat(2, (0.0, 1.0)).unwrap();
        let sol = solve_riccati(&sys, &Mat::zeros(2, 2), 1.0, 64).unwrap();
        assert!(sol.values().iter().all(|k| k.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn diagonal_case_closed_forms() {
        let sys = LtvSystem::diagonal_case(&[0.25], (0.0, 1.0)).unwrap();
        let sol = solve_riccati(&sys, &Mat::zeros(1, 1), 1.0, 256).unwrap();
        assert_eq!(sol.values()[sol.values().len() - 1][(0, 0)], 0.0);
        assert_relative_eq!(sol.initial()[(0, 0)], 0.380_797_078_0, epsilon = 1e-10);

        let psi = HamiltonianTransition::compute(&sys, 1.0, 0.0, 256).unwrap();
        assert_relative_eq!(psi.psi22[(0, 0)], 1.543_080_634_8, epsilon = 1e-10);

        let cl = closed_loop(&sys, 0.0, 1.0, StepPolicy::default()).unwrap();
        assert_relative_eq!(cl.transition()[(0, 0)], 0.648_054_273_7, epsilon = 1e-10);
        assert_relative_eq!(cl.gramian()[(0, 0)], 2.0 * 1.0_f64.tanh(), epsilon = 1e-10);
        assert_relative_eq!(1.0 / cl.gramian()[(0, 0)], 0.656_517_642_7, epsilon = 1e-10);
    }

    #[test]
    fn scalar_riccati_matches_closed_form() {
        let (a, b, q, k1) = (0.3, 0.8, 1.5, 0.4);
        let sys = scalar(a, b, q);
        let sol = solve_riccati(&sys, &Mat::from_element(1, 1, k1), 2.0, 512).unwrap();
        let expected = scalar_reference(a, 2.0 * b * b, q, k1, 2.0);
        assert_relative_eq!(sol.initial()[(0, 0)], expected, max_relative = 1e-8);
        // off-node evaluation through the Hermite interpolant
        let mid = sol.value_at(0.7031);
        assert_relative_eq!(mid[(0, 0)], scalar_reference(a, 2.0 * b * b, q, k1, 2.0 - 0.7031), max_relative = 1e-9);
    }

    #[test]
    fn hamiltonian_at_terminal_time_is_identity() {
        let sys = scalar(0.3, 1.0, 1.0);
        assert_eq!(riccati_via_hamiltonian(&sys, &Mat::zeros(1, 1), 1.0, 1.0, 8).unwrap()[(0, 0)], 0.0);
    }

    #[test]
    fn negative_killing_escapes_in_finite_time() {
        // k' = -k² ... with q < 0 and s > 0 the solution diverges to -∞
        let sys = scalar(0.0, 1.0, -4.0);
        let r = solve_riccati(&sys, &Mat::zeros(1, 1), 2.0, 4000);
        assert!(matches!(r, Err(Error::FiniteEscape { .. }) | Err(Error::IntegrationFailure { .. })), "{r:?}");
    }

    #[test]
    fn conjugate_point_is_detected() {
        // Ψ₁₁ = cos(2√(-q/2)… ) hits zero for negative killing.
        let sys = scalar(0.0, 1.0, -(std::f64::consts::PI / 2.0).powi(2) / 2.0);
        // ω = sqrt(2·|q|) = π/2, so Ψ₁₁ = cos(ω σ) vanishes at σ = 1. Enough steps
        // that the integration error in Ψ₁₁ stays below 1e-12 of ‖Ψ‖.
        let r = riccati_via_hamiltonian(&sys, &Mat::zeros(1, 1), 1.0, 0.0, 4096);
        assert!(matches!(r, Err(Error::NearConjugatePoint { .. })), "{r:?}");
    }

    #[test]
    fn zero_killing_closed_loop_is_open_loop() {
        let sys = LtvSystem::linear_example((0.0, 1.0)).unwrap();
        let cl = closed_loop(&sys, 0.0, 1.0, StepPolicy::Fixed(256)).unwrap();
        let (phi, gamma) = ltv_system::transition_and_gramian(|s| sys.a(s), |s| sys.control_weight(s), 2, 0.0, 1.0, 256).unwrap();
        assert_relative_eq!(cl.transition(), &phi, epsilon = 1e-14);
        assert_relative_eq!(cl.gramian(), &gamma, epsilon = 1e-14);
    }

    #[test]
    fn heat_gramian_closed_loop() {
        let sys = LtvSystem::heat(2, (0.0, 1.0)).unwrap();
        let cl = closed_loop(&sys, 0.0, 0.75, StepPolicy::default()).unwrap();
        assert_relative_eq!(cl.gramian(), &(Mat::identity(2, 2) * 1.5), epsilon = 1e-13);
    }

    #[test]
    fn pi_csv_has_row_per_node() {
        let sys = LtvSystem::diagonal_case(&[0.25, 1.0], (0.0, 1.0)).unwrap();
        let sol = solve_riccati(&sys, &Mat::zeros(2, 2), 1.0, 16).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pi.csv");
        sol.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(text.lines().count(), 18);
        assert!(text.starts_with("tau,pi_00,pi_01,pi_10,pi_11"));
    }

    fn random_system(entries: &[f64], n: usize) -> LtvSystem {
        let a0 = Mat::from_iterator(n, n, entries[..n * n].iter().copied());
        let b0 = Mat::from_iterator(n, n, entries[n * n..2 * n * n].iter().copied()) + Mat::identity(n, n);
        let l = Mat::from_iterator(n, n, entries[2 * n * n..3 * n * n].iter().copied());
        let q = &l * l.transpose();
        LtvSystem::new(
            MatrixTrajectory::sinusoid(a0.clone(), a0 * 0.5, 2.0, 0.3).unwrap(),
            MatrixTrajectory::constant(b0),
            MatrixTrajectory::sinusoid(q.clone(), q * 0.5, 1.0, 0.0).unwrap(),
            (0.0, 1.0),
        )
        .unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn pi_is_psd_and_agrees_with_hamiltonian(
            entries in proptest::collection::vec(-0.7..0.7f64, 27),
            n in 1usize..=3,
        ) {
            let sys = random_system(&entries, n);
            let sol = solve_riccati(&sys, &Mat::zeros(n, n), 1.0, 512).unwrap();
            prop_assert!(sol.min_eigenvalue() >= -1e-12);
            let lft = riccati_via_hamiltonian(&sys, &Mat::zeros(n, n), 1.0, 0.0, 512).unwrap();
            prop_assert!((lft - sol.initial()).norm() < 1e-7);
        }

        #[test]
        fn hamiltonian_flow_is_symplectic(entries in proptest::collection::vec(-0.7..0.7f64, 12), n in 1usize..=2) {
            let sys = random_system(&entries, n);
            let psi = HamiltonianTransition::compute(&sys, 1.0, 0.0, 256).unwrap().full();
            let mut j = Mat::zeros(2 * n, 2 * n);
            j.view_mut((0, n), (n, n)).copy_from(&Mat::identity(n, n));
            j.view_mut((n, 0), (n, n)).copy_from(&(-Mat::identity(n, n)));
            prop_assert!((psi.transpose() * &j * &psi - &j).norm() < 1e-9);
        }
    }
}
