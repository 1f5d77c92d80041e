//! Fixed-step classical Runge–Kutta on matrix-valued states.

use crate::error::{Error, Result};
use crate::linalg::Mat;

pub trait OdeState: Clone {
    /// `self + h * k`
    fn axpy(&self, h: f64, k: &Self) -> Self;
    fn is_finite(&self) -> bool;
}

impl OdeState for Mat {
    fn axpy(&self, h: f64, k: &Self) -> Self {
        self + k * h
    }
    fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

impl OdeState for f64 {
    fn axpy(&self, h: f64, k: &Self) -> Self {
        self + h * k
    }
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
}

impl<A: OdeState, B: OdeState> OdeState for (A, B) {
    fn axpy(&self, h: f64, k: &Self) -> Self {
        (self.0.axpy(h, &k.0), self.1.axpy(h, &k.1))
    }
    fn is_finite(&self) -> bool {
        self.0.is_finite() && self.1.is_finite()
    }
}

/// Integrates `y' = f(s, y)` from `s0` to `s1` in `steps` equal steps.
///
/// `observe(k, s_k, y_k)` sees every node including the initial one and may
/// abort the integration by returning an error.
pub fn rk4<S, F, O>(y0: S, s0: f64, s1: f64, steps: usize, f: F, mut observe: O) -> Result<S>
where
    S: OdeState,
    F: Fn(f64, &S) -> S,
    O: FnMut(usize, f64, &S) -> Result<()>,
{
    let steps = steps.max(1);
    let h = (s1 - s0) / steps as f64;
    let mut y = y0;
    observe(0, s0, &y)?;
    for k in 0..steps {
        let s = s0 + k as f64 * h;
        let k1 = f(s, &y);
        let k2 = f(s + 0.5 * h, &y.axpy(0.5 * h, &k1));
        let k3 = f(s + 0.5 * h, &y.axpy(0.5 * h, &k2));
        let k4 = f(s + h, &y.axpy(h, &k3));
        y = y
            .axpy(h / 6.0, &k1)
            .axpy(h / 3.0, &k2)
            .axpy(h / 3.0, &k3)
            .axpy(h / 6.0, &k4);
        // Land exactly on the endpoint so node times are reproducible.
        let s_next = if k + 1 == steps { s1 } else { s0 + (k + 1) as f64 * h };
        if !y.is_finite() {
            return Err(Error::IntegrationFailure { step: k + 1, time: s_next });
        }
        observe(k + 1, s_next, &y)?;
    }
    Ok(y)
}

pub fn no_observer<S>(_: usize, _: f64, _: &S) -> Result<()> {
    Ok(())
}
