//! Finite-difference residual of the forward equation satisfied by the
//! kernel in its terminal arguments `(t, y)`:
//!
//! `∂ₜκ = −∇_y·(A_t y κ) + ⟨B_tB_tᵀ, ∇_y²κ⟩ − ½ yᵀQ_t y κ`.

use crate::error::{Error, Result};
use crate::kernel::{KernelConfig, KernelEvaluator};
use crate::linalg::Vector;
use crate::ltv_system::LtvSystem;

/// `|LHS − RHS|` with central differences of step `h` in `t` and
/// `h·max(1, |y_k|)` along each axis of `y`. Use a fixed-step `config`
/// so the kernel is smooth in `t`.
pub fn pde_residual(
    sys: &LtvSystem,
    t0: f64,
    t: f64,
    x: &Vector,
    y: &Vector,
    h: f64,
    config: &KernelConfig,
) -> Result<f64> {
    if !(h > 0.0) || t - t0 < 10.0 * h {
        return Err(Error::Parameter(format!("need h > 0 and t − t0 ≥ 10h (t − t0 = {}, h = {h})", t - t0)));
    }
    let n = sys.n();
    if x.len() != n || y.len() != n {
        return Err(Error::Dimension(format!("points must have length {n}")));
    }
    let before = KernelEvaluator::new(sys, t0, t - h, config)?;
    let here = KernelEvaluator::new(sys, t0, t, config)?;
    let after = KernelEvaluator::new(sys, t0, t + h, config)?;
    let dt = (after.eval(x, y) - before.eval(x, y)) / (2.0 * h);

    let k = |z: &Vector| here.eval(x, z);
    let steps: Vec<f64> = (0..n).map(|i| h * y[i].abs().max(1.0)).collect();
    let shifted = |moves: &[(usize, f64)]| {
        let mut z = y.clone();
        for &(i, s) in moves {
            z[i] += s;
        }
        k(&z)
    };
    let center = k(y);
    let grad = Vector::from_iterator(
        n,
        (0..n).map(|i| (shifted(&[(i, steps[i])]) - shifted(&[(i, -steps[i])])) / (2.0 * steps[i])),
    );
    let diffusion = sys.diffusion(t);
    let mut second = 0.0;
    for i in 0..n {
        for j in 0..n {
            let d = if i == j {
                (shifted(&[(i, steps[i])]) - 2.0 * center + shifted(&[(i, -steps[i])])) / (steps[i] * steps[i])
            } else {
                (shifted(&[(i, steps[i]), (j, steps[j])]) - shifted(&[(i, steps[i]), (j, -steps[j])])
                    - shifted(&[(i, -steps[i]), (j, steps[j])])
                    + shifted(&[(i, -steps[i]), (j, -steps[j])]))
                    / (4.0 * steps[i] * steps[j])
            };
            second += diffusion[(i, j)] * d;
        }
    }
    let a = sys.a(t);
    let advection = -a.trace() * center - (&a * y).dot(&grad);
    let killing = -0.5 * y.dot(&(sys.q(t) * y)) * center;
    Ok((dt - (advection + second + killing)).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ltv_system::MatrixTrajectory;
    use crate::linalg::Mat;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn order(sys: &LtvSystem, t: f64, x: &Vector, y: &Vector) -> f64 {
        let cfg = KernelConfig::fixed(512);
        let r1 = pde_residual(sys, 0.0, t, x, y, 1e-3, &cfg).unwrap();
        let r2 = pde_residual(sys, 0.0, t, x, y, 5e-4, &cfg).unwrap();
        r1 / r2
    }

    #[test]
    fn heat_residual_is_second_order() {
        let sys = LtvSystem::heat(1, (0.0, 2.0)).unwrap();
        let ratio = order(&sys, 1.0, &v(&[0.3]), &v(&[0.0]));
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn diagonal_residual_is_second_order() {
        let sys = LtvSystem::diagonal_case(&[0.25], (0.0, 2.0)).unwrap();
        let ratio = order(&sys, 1.0, &v(&[0.3]), &v(&[0.5]));
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn varying_system_residual_is_small() {
        let a = MatrixTrajectory::sinusoid(
            Mat::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.2]),
            Mat::from_row_slice(2, 2, &[0.0, 0.0, 0.5, 0.0]),
            1.0,
            0.0,
        )
        .unwrap();
        let q = MatrixTrajectory::from_fn(2, 2, |t| Mat::identity(2, 2) * (1.0 + 0.5 * t.sin()));
        let sys = LtvSystem::new(a, MatrixTrajectory::constant(Mat::identity(2, 2)), q, (0.0, 2.0)).unwrap();
        let (x, y) = (v(&[0.2, -0.1]), v(&[0.4, 0.3]));
        let cfg = KernelConfig::fixed(512);
        let r = pde_residual(&sys, 0.0, 1.0, &x, &y, 1e-3, &cfg).unwrap();
        let scale = KernelEvaluator::new(&sys, 0.0, 1.0, &cfg).unwrap().eval(&x, &y);
        assert!(r < 1e-4 * scale, "residual {r}, kernel {scale}");
    }

    #[test]
    fn step_must_be_small_against_the_horizon() {
        let sys = LtvSystem::heat(1, (0.0, 1.0)).unwrap();
        let r = pde_residual(&sys, 0.0, 0.005, &v(&[0.0]), &v(&[0.0]), 1e-3, &KernelConfig::default());
        assert!(matches!(r, Err(Error::Parameter(_))));
    }
}
