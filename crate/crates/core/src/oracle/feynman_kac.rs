//! Monte Carlo for `E[φ1(X_{t1}) exp(−∫ ½ XᵀQX dτ) | X_t = x]` with
//! Euler–Maruyama paths of `dX = AX dτ + √2 B dW`.
//!
//! Path `p` of seed `s` draws from ChaCha8 seeded with `s` on stream `p`, so
//! every path is reproducible on its own and the estimate does not depend on
//! the thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::density::Potential;
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::ltv_system::LtvSystem;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FkEstimate {
    pub mean: f64,
    /// Sample standard deviation over `√paths`.
    pub std_error: f64,
    pub paths: u64,
    pub mean_survival: f64,
    pub min_survival: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedPath {
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    /// Survival weight accumulated up to each time; starts at 1.
    pub weights: Vec<f64>,
}

/// Coefficients at every step node, flattened row-major, shared by all paths.
struct Tabulated {
    n: usize,
    m: usize,
    steps: usize,
    dt: f64,
    a: Vec<f64>,
    /// `√(2 dt) B`
    noise: Vec<f64>,
    q: Vec<f64>,
}

impl Tabulated {
    fn new(sys: &LtvSystem, t0: f64, t1: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !(t1 > t0) {
            return Err(Error::Parameter("simulation needs dt > 0 and t1 > t0".into()));
        }
        let span = t1 - t0;
        let steps = (span / dt).round().max(1.0) as usize;
        if (steps as f64 * dt - span).abs() > 1e-9 * span {
            return Err(Error::Parameter(format!("dt = {dt} does not divide t1 − t0 = {span}")));
        }
        let dt = span / steps as f64;
        let (n, m) = (sys.n(), sys.m());
        let scale = (2.0 * dt).sqrt();
        let mut tab = Self { n, m, steps, dt, a: Vec::new(), noise: Vec::new(), q: Vec::new() };
        for k in 0..=steps {
            let s = if k == steps { t1 } else { t0 + k as f64 * dt };
            let (a, b, q) = (sys.a(s), sys.b(s), sys.q(s));
            for i in 0..n {
                tab.a.extend((0..n).map(|j| a[(i, j)]));
                tab.noise.extend((0..m).map(|j| b[(i, j)] * scale));
                tab.q.extend((0..n).map(|j| q[(i, j)]));
            }
        }
        Ok(tab)
    }

    fn killing(&self, k: usize, x: &[f64]) -> f64 {
        let q = &self.q[k * self.n * self.n..(k + 1) * self.n * self.n];
        let mut acc = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                acc += x[i] * q[i * self.n + j] * x[j];
            }
        }
        0.5 * acc
    }

    /// Advances `x` over step `k` in place; returns the log-weight increment
    /// `−dt (V_k + V_{k+1}) / 2` with `V = ½ xᵀQx` (trapezoid in time).
    /// `rate` holds `V_k` on entry and `V_{k+1}` on return.
    fn advance(&self, k: usize, x: &mut [f64], next: &mut [f64], z: &mut [f64], rate: &mut f64, rng: &mut ChaCha8Rng) -> f64 {
        let (n, m) = (self.n, self.m);
        for zj in z.iter_mut() {
            *zj = StandardNormal.sample(rng);
        }
        let a = &self.a[k * n * n..(k + 1) * n * n];
        let b = &self.noise[k * n * m..(k + 1) * n * m];
        let before = *rate;
        for i in 0..n {
            let drift: f64 = (0..n).map(|j| a[i * n + j] * x[j]).sum();
            let shock: f64 = (0..m).map(|j| b[i * m + j] * z[j]).sum();
            next[i] = x[i] + drift * self.dt + shock;
        }
        x.copy_from_slice(next);
        *rate = self.killing(k + 1, x);
        -0.5 * self.dt * (before + *rate)
    }
}

fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

/// One path from `x0` at `t0`, with every visited state.
pub fn simulate_killed_diffusion(sys: &LtvSystem, x0: &Vector, t0: f64, t1: f64, dt: f64, seed: u64) -> Result<WeightedPath> {
    let tab = Tabulated::new(sys, t0, t1, dt)?;
    if x0.len() != tab.n {
        return Err(Error::Dimension(format!("x0 must have length {}", tab.n)));
    }
    let mut rng = path_rng(seed, 0);
    let mut x: Vec<f64> = x0.iter().copied().collect();
    let mut next = vec![0.0; tab.n];
    let mut z = vec![0.0; tab.m];
    let mut log_w = 0.0;
    let mut rate = tab.killing(0, &x);
    let mut path = WeightedPath { times: vec![t0], states: vec![x0.clone()], weights: vec![1.0] };
    for k in 0..tab.steps {
        log_w += tab.advance(k, &mut x, &mut next, &mut z, &mut rate, &mut rng);
        if x.iter().any(|v| !v.is_finite()) || log_w.is_nan() {
            return Err(Error::SimulationBlowup { seed, path: 0, step: k + 1 });
        }
        path.times.push(if k + 1 == tab.steps { t1 } else { t0 + (k + 1) as f64 * tab.dt });
        path.states.push(Vector::from_column_slice(&x));
        path.weights.push(log_w.exp());
    }
    Ok(path)
}

/// Estimate of `E[φ1(X_{t1}) exp(−∫_t^{t1} ½XᵀQX) | X_t = x]`.
#[allow(clippy::too_many_arguments)]
pub fn feynman_kac_with<F>(sys: &LtvSystem, phi1: F, t: f64, x: &Vector, t1: f64, paths: u64, dt: f64, seed: u64) -> Result<FkEstimate>
where
    F: Fn(&Vector) -> f64 + Sync,
{
    if paths < 2 {
        return Err(Error::Parameter("need at least two paths for a standard error".into()));
    }
    let tab = Tabulated::new(sys, t, t1, dt)?;
    if x.len() != tab.n {
        return Err(Error::Dimension(format!("x must have length {}", tab.n)));
    }
    let samples: Vec<(f64, f64)> = (0..paths)
        .into_par_iter()
        .map_init(
            || (vec![0.0; tab.n], vec![0.0; tab.n], vec![0.0; tab.m], Vector::zeros(tab.n)),
            |(state, next, z, end), p| {
                let mut rng = path_rng(seed, p);
                state.copy_from_slice(x.as_slice());
                let mut log_w = 0.0;
                let mut rate = tab.killing(0, state);
                for k in 0..tab.steps {
                    log_w += tab.advance(k, state, next, z, &mut rate, &mut rng);
                    if state.iter().any(|v| !v.is_finite()) || log_w.is_nan() {
                        return Err(Error::SimulationBlowup { seed, path: p, step: k + 1 });
                    }
                }
                end.copy_from_slice(state);
                let w = log_w.exp();
                Ok((w * phi1(end), w))
            },
        )
        .collect::<Result<_>>()?;
    // Sequential sums keep the result independent of scheduling.
    let count = paths as f64;
    let mean = samples.iter().map(|s| s.0).sum::<f64>() / count;
    let var = samples.iter().map(|s| (s.0 - mean).powi(2)).sum::<f64>() / (count - 1.0);
    let mean_survival = samples.iter().map(|s| s.1).sum::<f64>() / count;
    let min_survival = samples.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    Ok(FkEstimate { mean, std_error: (var / count).sqrt(), paths, mean_survival, min_survival })
}

#[allow(clippy::too_many_arguments)]
pub fn feynman_kac(sys: &LtvSystem, phi1: &Potential, t: f64, x: &Vector, t1: f64, paths: u64, dt: f64, seed: u64) -> Result<FkEstimate> {
    feynman_kac_with(sys, |y| phi1.eval(y), t, x, t1, paths, dt, seed)
}
