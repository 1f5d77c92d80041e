//! The normalizer `c(t, t0)` by matched asymptotics.
//!
//! Near `t0` the kernel is a delta family, which pins
//! `c(t0 + δ, t0) ≈ (2π)^{−n/2} det(M11(t0 + δ, t0))^{1/2}` with an `O(δ)`
//! error. From each anchor `c' = −θ c` carries the value to `t`, and the
//! anchors are extrapolated to `δ → 0`.
//!
//! `θ` blows up like `n / (2(s − t0))`, so its integral is taken in
//! `σ = ln(s − t0)`, where the integrand `(s − t0) θ(s)` is smooth. Along that
//! grid `θ = trace A + ⟨BBᵀ, W⁻¹⟩` with `W = M22⁻¹` from the forward equation
//! `W' = AW + WAᵀ + B̂B̂ᵀ − WQW`, `W(t0) = 0`, which yields every `s` in one pass.
//! `W` itself grows like `s − t0`, so the state carried in `σ` is `W / (s − t0)`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::{Mat, SpdFactor};
use crate::ltv_system::LtvSystem;
use crate::ode;
use crate::riccati;

use super::distance_form;

/// `δ₀ = 10⁻²(t − t0)` and four halvings.
pub fn default_deltas(span: f64) -> Vec<f64> {
    (0..5).map(|k| 1e-2 * span / f64::from(1u32 << k)).collect()
}

/// `∫_{t0 + δ_min}^{s} θ` at the nodes of the logarithmic grid.
#[derive(Debug, Clone)]
pub struct ThetaIntegral {
    pub times: Vec<f64>,
    pub cumulative: Vec<f64>,
}

impl ThetaIntegral {
    fn at(&self, s: f64) -> f64 {
        let i = self
            .times
            .iter()
            .position(|&u| u == s)
            .expect("breakpoints are grid nodes");
        self.cumulative[i]
    }
}

fn covariance_rate(sys: &LtvSystem, s: f64, w: &Mat) -> Mat {
    let a = sys.a(s);
    let mut dw = &a * w + w * a.transpose() + sys.control_weight(s) - w * sys.q(s) * w;
    crate::linalg::symmetrize_mut(&mut dw);
    dw
}

/// `d W̃/dσ` for `W̃ = W / r`, `r = s − t0`. For the heat equation `W̃` is constant.
fn scaled_covariance_rate(sys: &LtvSystem, s: f64, r: f64, w: &Mat) -> Mat {
    let a = sys.a(s);
    let mut dw = (&a * w + w * a.transpose()) * r + sys.control_weight(s) - w * sys.q(s) * w * (r * r) - w;
    crate::linalg::symmetrize_mut(&mut dw);
    dw
}

/// `r θ(s) = r trace A + ⟨BBᵀ, W̃⁻¹⟩`
fn scaled_theta(sys: &LtvSystem, s: f64, r: f64, w: &Mat) -> f64 {
    let bbt = sys.diffusion(s);
    let solved = w.clone().lu().solve(&bbt).unwrap_or_else(|| Mat::from_element(w.nrows(), w.ncols(), f64::NAN));
    r * sys.a(s).trace() + solved.trace()
}

/// `offsets` are ascending positive offsets from `t0`, all below `t − t0`;
/// each becomes a node of the grid.
pub fn theta_integral_on_log_grid(sys: &LtvSystem, t0: f64, t: f64, offsets: &[f64]) -> Result<ThetaIntegral> {
    let n = sys.n();
    let first = offsets[0];
    let w0 = ode::rk4(Mat::zeros(n, n), t0, t0 + first, 16, |s, w| covariance_rate(sys, s, w), ode::no_observer)?;

    let mut breaks: Vec<f64> = offsets.to_vec();
    breaks.push(t - t0);
    let mut times = vec![t0 + first];
    let mut cumulative = vec![0.0];
    let mut state = (w0 / first, 0.0);
    for pair in breaks.windows(2) {
        let (lo, hi) = (pair[0].ln(), pair[1].ln());
        // ~1e-11 absolute on the diagonal case; the error falls as h⁴.
        let steps = ((128.0 * (hi - lo)).ceil() as usize).max(16);
        state = ode::rk4(
            state,
            lo,
            hi,
            steps,
            |sigma, (w, _): &(Mat, f64)| {
                let r = sigma.exp();
                let s = t0 + r;
                (scaled_covariance_rate(sys, s, r, w), scaled_theta(sys, s, r, w))
            },
            |k, sigma, (_, acc): &(Mat, f64)| {
                if k > 0 {
                    times.push(t0 + sigma.exp());
                    cumulative.push(*acc);
                }
                Ok(())
            },
        )?;
        // Breakpoints must be recoverable exactly.
        let end = times.len() - 1;
        times[end] = t0 + pair[1];
    }
    Ok(ThetaIntegral { times, cumulative })
}

#[derive(Debug, Clone)]
pub struct MatchedAsymptotics {
    pub log_normalizer: f64,
    /// In the order given (decreasing).
    pub deltas: Vec<f64>,
    /// `ln c(t, t0)` from each anchor before extrapolation.
    pub estimates: Vec<f64>,
    /// `|P_jj − P_{j−1,j−1}|` along the diagonal of the extrapolation tableau.
    pub corrections: Vec<f64>,
    /// `(s, ln c(s, t0))` on the logarithmic grid from the largest anchor to `t`.
    pub trace: Vec<(f64, f64)>,
}

pub fn matched_asymptotics(sys: &LtvSystem, t0: f64, t: f64, deltas: &[f64], anchor_steps: usize) -> Result<MatchedAsymptotics> {
    let span = t - t0;
    if !(span > 0.0) {
        return Err(Error::DegenerateHorizon { t0, t, reason: "t must exceed t0".into() });
    }
    if deltas.len() < 2
        || deltas.iter().any(|&d| !(d > 0.0) || d >= span)
        || deltas.windows(2).any(|w| !(w[1] < w[0]))
    {
        return Err(Error::Parameter(
            "delta sequence must hold at least two strictly decreasing values in (0, t - t0)".into(),
        ));
    }
    let n = sys.n() as f64;
    let mut ascending = deltas.to_vec();
    ascending.reverse();
    let integral = theta_integral_on_log_grid(sys, t0, t, &ascending)?;
    let total = integral.cumulative[integral.cumulative.len() - 1];

    let base = -0.5 * n * (2.0 * PI).ln();
    let estimates = deltas
        .iter()
        .map(|&d| {
            let cl = riccati::closed_loop_with_steps(sys, t0, t0 + d, anchor_steps)?;
            let form = distance_form(&cl)?;
            let log_det = SpdFactor::new(&form.m11, "M11 at the anchor")?.log_det;
            Ok(base + 0.5 * log_det - (total - integral.at(t0 + d)))
        })
        .collect::<Result<Vec<f64>>>()?;

    // Neville's tableau evaluated at δ = 0.
    let k = deltas.len();
    let mut table = vec![vec![0.0; k]; k];
    for i in 0..k {
        table[i][0] = estimates[i];
        for j in 1..=i {
            let hi = table[i][j - 1];
            let lo = table[i - 1][j - 1];
            table[i][j] = hi + (hi - lo) * deltas[i] / (deltas[i - j] - deltas[i]);
        }
    }
    let diagonal: Vec<f64> = (0..k).map(|j| table[j][j]).collect();
    let corrections: Vec<f64> = diagonal.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let log_normalizer = diagonal[k - 1];
    let floor = 1e-11 * log_normalizer.abs().max(1.0);
    if corrections.windows(2).any(|w| w[1] > w[0] && w[1] > floor) {
        return Err(Error::LimitNonconvergence { differences: corrections });
    }

    let from = t0 + deltas[0];
    let trace = integral
        .times
        .iter()
        .zip(&integral.cumulative)
        .filter(|(&s, _)| s >= from)
        .map(|(&s, &acc)| (s, log_normalizer + total - acc))
        .collect();
    Ok(MatchedAsymptotics { log_normalizer, deltas: deltas.to_vec(), estimates, corrections, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn default_sequence_halves() {
        let d = default_deltas(2.0);
        assert_eq!(d.len(), 5);
        assert_relative_eq!(d[0], 0.02);
        assert_relative_eq!(d[4], 0.02 / 16.0);
    }

    #[test]
    fn heat_theta_integral_is_logarithmic() {
        let sys = LtvSystem::heat(3, (0.0, 2.0)).unwrap();
        let offsets = [1e-3, 2e-3, 4e-3];
        let ti = theta_integral_on_log_grid(&sys, 0.0, 1.5, &offsets).unwrap();
        let last = ti.cumulative[ti.cumulative.len() - 1];
        assert_relative_eq!(last, 1.5 * (1.5_f64 / 1e-3).ln(), max_relative = 1e-12);
        assert_eq!(ti.times[ti.times.len() - 1], 1.5);
    }

    #[test]
    fn diagonal_anchor_estimates_converge_to_closed_form() {
        let sys = LtvSystem::diagonal_case(&[0.25, 1.0], (0.0, 2.0)).unwrap();
        let ma = matched_asymptotics(&sys, 0.0, 1.0, &default_deltas(1.0), 32).unwrap();
        let exact = super::super::closed_form::diagonal_log_normalizer(&[0.25, 1.0], 1.0);
        assert_relative_eq!(ma.log_normalizer, exact, epsilon = 1e-9);
        // unextrapolated anchors are only first-order accurate
        assert!((ma.estimates[0] - exact).abs() > 1e-4);
        assert!(ma.corrections[ma.corrections.len() - 1] < 1e-8);
        // the trace ends at t with the extrapolated value
        let (s, lc) = ma.trace[ma.trace.len() - 1];
        assert_eq!(s, 1.0);
        assert_relative_eq!(lc, ma.log_normalizer, epsilon = 1e-14);
        let (_, lc0) = ma.trace[0];
        let exact0 = super::super::closed_form::diagonal_log_normalizer(&[0.25, 1.0], 0.01);
        assert_relative_eq!(lc0, exact0, epsilon = 1e-8);
    }

    #[test]
    fn bad_delta_sequences_are_rejected() {
        let sys = LtvSystem::heat(1, (0.0, 1.0)).unwrap();
        for bad in [vec![0.1], vec![0.1, 0.2], vec![2.0, 0.1], vec![0.1, -0.1]] {
            assert!(matches!(matched_asymptotics(&sys, 0.0, 1.0, &bad, 16), Err(Error::Parameter(_))));
        }
    }
}
