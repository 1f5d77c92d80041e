//! Kernels with explicit formulas: heat, killing-free linear, and the
//! drift-free diagonal-killing case `(A, B, Q) = (0, I, 2D)`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::{Mat, SpdFactor, Vector};

#[derive(Debug, Clone, Copy)]
pub enum ClosedFormCase<'a> {
    Heat,
    /// `transition = Φ(t, t0)`, `gramian = ∫ Φ(t,s) B Bᵀ Φ(t,s)ᵀ ds` (weight `BBᵀ`, not `B̂B̂ᵀ`).
    Linear { transition: &'a Mat, gramian: &'a Mat },
    /// `D` diagonal with positive entries.
    Diagonal { d: &'a Mat },
}

/// `ω_i = 2√D_ii`
pub fn diagonal_frequencies(d: &[f64]) -> Vec<f64> {
    d.iter().map(|v| 2.0 * v.sqrt()).collect()
}

/// `∏ √(ω_i / 4π)`
pub fn diagonal_prefactor(d: &[f64]) -> f64 {
    diagonal_frequencies(d).iter().map(|w| (w / (4.0 * PI)).sqrt()).product()
}

/// `(2π)^{−n/2} det(D)^{1/4}`
pub fn diagonal_prefactor_from_determinant(d: &[f64]) -> f64 {
    (2.0 * PI).powf(-0.5 * d.len() as f64) * d.iter().product::<f64>().powf(0.25)
}

/// `½ Σ ln sinh(ω_i s)`, the antiderivative of θ matching [`diagonal_prefactor`].
pub fn diagonal_theta_integral(d: &[f64], span: f64) -> f64 {
    diagonal_frequencies(d).iter().map(|w| 0.5 * (w * span).sinh().ln()).sum()
}

/// `θ(s) = Σ √D_ii coth(2√D_ii (s − t0))`
pub fn diagonal_theta(d: &[f64], span: f64) -> f64 {
    d.iter().map(|v| v.sqrt() / (2.0 * v.sqrt() * span).tanh()).sum()
}

pub fn diagonal_log_normalizer(d: &[f64], span: f64) -> f64 {
    diagonal_prefactor(d).ln() - diagonal_theta_integral(d, span)
}

/// `M11 = M22 = diag(√D coth(ωs))`, `M12 = −diag(√D csch(ωs))`.
pub fn diagonal_blocks(d: &[f64], span: f64) -> (Mat, Mat, Mat) {
    let n = d.len();
    let diag = |f: &dyn Fn(f64) -> f64| Mat::from_diagonal(&Vector::from_iterator(n, d.iter().map(|&v| f(v))));
    let m11 = diag(&|v| v.sqrt() / (2.0 * v.sqrt() * span).tanh());
    let m12 = diag(&|v| -v.sqrt() / (2.0 * v.sqrt() * span).sinh());
    (m11.clone(), m12, m11)
}

fn diagonal_entries(d: &Mat) -> Result<Vec<f64>> {
    let n = d.nrows();
    if d.ncols() != n {
        return Err(Error::Parameter("D must be square".into()));
    }
    for i in 0..n {
        for j in 0..n {
            if i != j && d[(i, j)] != 0.0 {
                return Err(Error::Parameter(format!("D is not diagonal (entry ({i},{j}) = {})", d[(i, j)])));
            }
        }
        if !(d[(i, i)] > 0.0) {
            return Err(Error::Parameter("D must have positive diagonal entries".into()));
        }
    }
    Ok(d.diagonal().iter().copied().collect())
}

pub fn closed_form_kernel(case: ClosedFormCase<'_>, t0: f64, x: &Vector, t: f64, y: &Vector) -> Result<f64> {
    let span = t - t0;
    if !(span > 0.0) {
        return Err(Error::DegenerateHorizon { t0, t, reason: "closed forms need t > t0".into() });
    }
    let n = x.len();
    if y.len() != n {
        return Err(Error::Dimension("x and y differ in length".into()));
    }
    match case {
        ClosedFormCase::Heat => {
            let r2 = (x - y).norm_squared();
            Ok((4.0 * PI * span).powf(-0.5 * n as f64) * (-r2 / (4.0 * span)).exp())
        }
        ClosedFormCase::Linear { transition, gramian } => {
            if transition.shape() != (n, n) || gramian.shape() != (n, n) {
                return Err(Error::Dimension("linear case: Φ and Γ must be n×n".into()));
            }
            let g = SpdFactor::new(gramian, "linear-case Gramian")?;
            let r = transition * x - y;
            let log = -0.5 * n as f64 * (4.0 * PI).ln() - 0.5 * g.log_det - 0.25 * r.dot(&g.solve_vec(&r));
            Ok(log.exp())
        }
        ClosedFormCase::Diagonal { d } => {
            let d = diagonal_entries(d)?;
            if d.len() != n {
                return Err(Error::Dimension("D and x differ in dimension".into()));
            }
            let mut log = diagonal_log_normalizer(&d, span);
            for (i, w) in diagonal_frequencies(&d).into_iter().enumerate() {
                let (xi, yi) = (x[i], y[i]);
                let ws = w * span;
                log -= w * ((xi * xi + yi * yi) * ws.cosh() - 2.0 * xi * yi) / (4.0 * ws.sinh());
            }
            Ok(log.exp())
        }
    }
}
