//! Schrödinger bridges between endpoint densities by the dynamic Sinkhorn
//! recursion
//!
//! `φ̂0 → φ̂1 = F φ̂0 → φ1 = ρ1 / φ̂1 → φ0 = B φ1 → φ̂0 = ρ0 / φ0`,
//!
//! where `F` integrates the kernel over its initial argument and `B` over its
//! terminal argument:
//!
//! `(F φ)(y) = ∫ κ(t0, u, t1, y) φ(u) du`, `(B φ)(x) = ∫ κ(t0, x, t1, u) φ(u) du`.
//!
//! Grid potentials are kept as logs, so the ratio steps are subtractions.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::Serialize;

use crate::density::{Density, GaussianMixture, GaussianTerm, Grid, GridFunction, Potential};
use crate::error::{Error, Result};
use crate::kernel::{KernelConfig, KernelEvaluator};
use crate::linalg::{self, Mat, SpdFactor, Vector};
use crate::ltv_system::LtvSystem;

/// Kernel mass estimated outside the box, relative to the mass inside.
pub const TAIL_LIMIT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Over the initial argument: `t0 → t1`.
    Forward,
    /// Over the terminal argument: `t1 → t0`.
    Backward,
}

/// `(M_in, C, M_out)` with kernel exponent `−½uᵀM_in u − uᵀC x − ½xᵀM_out x`,
/// `u` the integration variable.
fn oriented_blocks(k: &KernelEvaluator, dir: Direction) -> (Mat, Mat, Mat) {
    let f = k.form();
    match dir {
        Direction::Forward => (f.m11.clone(), f.m12.clone(), f.m22.clone()),
        Direction::Backward => (f.m22.clone(), f.m12.transpose(), f.m11.clone()),
    }
}

fn oriented_log_kernel(k: &KernelEvaluator, dir: Direction, out: &Vector, u: &Vector) -> f64 {
    match dir {
        Direction::Forward => k.log_eval(u, out),
        Direction::Backward => k.log_eval(out, u),
    }
}

/// `ln √(π / (2 p_k))` per axis: the half-line Gaussian integral that bounds
/// the mass beyond a boundary node when the integrand decays with precision `p_k`.
fn tail_log_widths(k: &KernelEvaluator, dir: Direction) -> Vec<f64> {
    let (m_in, _, _) = oriented_blocks(k, dir);
    (0..m_in.nrows()).map(|i| 0.5 * (PI / (2.0 * m_in[(i, i)])).ln()).collect()
}

/// Closed form of the transform of a Gaussian mixture; each term maps to one term.
pub fn transform_mixture(k: &KernelEvaluator, dir: Direction, phi: &GaussianMixture) -> Result<GaussianMixture> {
    let n = k.n();
    if phi.n() != n {
        return Err(Error::Dimension(format!("potential is {}-dimensional, kernel {n}", phi.n())));
    }
    let (m_in, c, m_out) = oriented_blocks(k, dir);
    let base = k.log_normalizer() + 0.5 * n as f64 * (2.0 * PI).ln();
    let terms = phi
        .terms()
        .iter()
        .map(|term| {
            let s = linalg::symmetrize(&(&m_in + &term.precision));
            let f = SpdFactor::new(&s, "transform quadratic form")?;
            let s_inv_c = f.solve_mat(&c);
            let s_inv_h = f.solve_vec(&term.shift);
            let precision = linalg::symmetrize(&(&m_out - c.transpose() * &s_inv_c));
            let shift = -(c.transpose() * &s_inv_h);
            let offset = term.offset + base - 0.5 * f.log_det + 0.5 * term.shift.dot(&s_inv_h);
            Ok(GaussianTerm { precision, shift, offset })
        })
        .collect::<Result<Vec<_>>>()?;
    GaussianMixture::new(n, terms)
}

/// `ln Σ exp(values)` for a slice that may hold `−∞`.
fn log_sum(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Compares the estimated mass beyond the box with the mass inside, each
/// output node weighted by `partner` (log, trapezoid weight included). The
/// partner is the potential the output is multiplied with, so the ratio is
/// the share of bridge mass lost to truncation.
fn check_tail(inside: &[f64], tail: &[f64], partner: Option<&[f64]>) -> Result<()> {
    let weight = |o: usize| partner.map_or(0.0, |p| p[o]);
    let log_tail = log_sum((0..tail.len()).map(|o| tail[o] + weight(o)));
    if log_tail == f64::NEG_INFINITY {
        return Ok(());
    }
    let log_inside = log_sum((0..inside.len()).map(|o| inside[o] + weight(o)));
    let ratio = (log_tail - log_inside).exp();
    if !(ratio <= TAIL_LIMIT) {
        return Err(Error::Truncation { ratio, limit: TAIL_LIMIT });
    }
    Ok(())
}

/// Log of the transform at one point by trapezoid quadrature over the grid
/// of `phi`, without the tail test.
pub fn transform_grid_at(k: &KernelEvaluator, dir: Direction, phi: &GridFunction, x: &Vector) -> f64 {
    let g = &phi.grid;
    let lw = g.log_weights();
    log_sum((0..g.len()).map(|j| oriented_log_kernel(k, dir, x, &g.node(j)) + lw[j] + phi.log_values[j]))
}

/// Per output node: log of the quadrature and log of the tail estimate.
fn quadrature(k: &KernelEvaluator, dir: Direction, phi: &GridFunction, out: &Grid) -> (Vec<f64>, Vec<f64>) {
    let g = &phi.grid;
    let inputs = g.nodes();
    let lw = g.log_weights();
    let boundary = g.boundary();
    let widths = tail_log_widths(k, dir);
    (0..out.len())
        .into_par_iter()
        .map(|o| {
            let x = out.node(o);
            let logs: Vec<f64> = inputs.iter().map(|u| oriented_log_kernel(k, dir, &x, u)).collect();
            let inside = log_sum((0..inputs.len()).map(|j| logs[j] + lw[j] + phi.log_values[j]));
            let tail = log_sum(boundary.iter().map(|&(j, axis)| logs[j] + phi.log_values[j] + widths[axis]));
            (inside, tail)
        })
        .unzip()
}

/// The transform sampled on `out`, by trapezoid quadrature over the grid of
/// `phi`. The tail test weighs every output node equally.
pub fn transform_grid(k: &KernelEvaluator, dir: Direction, phi: &GridFunction, out: &Arc<Grid>) -> Result<GridFunction> {
    if phi.grid.n() != k.n() || out.n() != k.n() {
        return Err(Error::Dimension("grid and kernel dimensions differ".into()));
    }
    let (inside, tail) = quadrature(k, dir, phi, out);
    check_tail(&inside, &tail, None)?;
    GridFunction::new(out.clone(), inside)
}

/// `φ̂0 ↦ ∫ κ(t0, u, t1, ·) φ̂0(u) du`. Mixtures map in closed form, grid
/// potentials onto their own grid.
pub fn transform_forward(k: &KernelEvaluator, phi: &Potential) -> Result<Potential> {
    transform(k, Direction::Forward, phi)
}

/// `φ1 ↦ ∫ κ(t0, ·, t1, u) φ1(u) du`.
pub fn transform_backward(k: &KernelEvaluator, phi: &Potential) -> Result<Potential> {
    transform(k, Direction::Backward, phi)
}

pub fn transform(k: &KernelEvaluator, dir: Direction, phi: &Potential) -> Result<Potential> {
    match phi {
        Potential::Mixture(m) => transform_mixture(k, dir, m).map(Potential::Mixture),
        Potential::Grid(g) => transform_grid(k, dir, g, &g.grid).map(Potential::Grid),
    }
}

/// `ln κ(node_i, node_j)` on one grid, kept in both orientations so every
/// transform reads contiguous rows.
struct DenseOperator {
    len: usize,
    log_weights: Vec<f64>,
    /// `[i·len + j] = ln κ(t0, node_i, t1, node_j) + ln w_j`, for `B`.
    backward: Vec<f64>,
    /// `[j·len + i] = ln κ(t0, node_i, t1, node_j) + ln w_i`, for `F`.
    forward: Vec<f64>,
    boundary: Vec<(usize, usize)>,
    forward_widths: Vec<f64>,
    backward_widths: Vec<f64>,
}

impl DenseOperator {
    fn new(k: &KernelEvaluator, grid: &Grid) -> Self {
        let len = grid.len();
        let nodes = grid.nodes();
        let log_weights = grid.log_weights();
        let log_kernel: Vec<f64> = (0..len)
            .into_par_iter()
            .flat_map_iter(|i| {
                let x = &nodes[i];
                nodes.iter().map(move |y| k.log_eval(x, y))
            })
            .collect();
        let backward = (0..len * len).map(|ij| log_kernel[ij] + log_weights[ij % len]).collect();
        let forward = (0..len * len)
            .map(|ji| {
                let (j, i) = (ji / len, ji % len);
                log_kernel[i * len + j] + log_weights[i]
            })
            .collect();
        Self {
            len,
            log_weights,
            backward,
            forward,
            boundary: grid.boundary(),
            forward_widths: tail_log_widths(k, Direction::Forward),
            backward_widths: tail_log_widths(k, Direction::Backward),
        }
    }

    /// `partner` holds log-values multiplying the output, without weights.
    fn apply(&self, dir: Direction, log_values: &[f64], partner: &[f64]) -> Result<Vec<f64>> {
        let (table, widths) = match dir {
            Direction::Forward => (&self.forward, &self.forward_widths),
            Direction::Backward => (&self.backward, &self.backward_widths),
        };
        let len = self.len;
        let (inside, tail): (Vec<f64>, Vec<f64>) = (0..len)
            .into_par_iter()
            .map(|o| {
                let row = &table[o * len..(o + 1) * len];
                let inside = log_sum(row.iter().zip(log_values).map(|(k, v)| k + v));
                let tail = log_sum(
                    self.boundary
                        .iter()
                        .map(|&(j, axis)| row[j] - self.log_weights[j] + log_values[j] + widths[axis]),
                );
                (inside, tail)
            })
            .unzip();
        let weighted: Vec<f64> = partner.iter().zip(&self.log_weights).map(|(p, w)| p + w).collect();
        check_tail(&inside, &tail, Some(&weighted))?;
        Ok(inside)
    }
}

#[derive(Debug, Clone)]
pub struct SinkhornOptions {
    /// Stop once the Hilbert gap between successive `φ̂0` falls below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Points per axis; `None` picks 256 in one dimension and 48 in two.
    pub points: Option<usize>,
    /// Box half-width in endpoint standard deviations.
    pub width: f64,
    /// Overrides the moment-based box.
    pub grid: Option<Arc<Grid>>,
    /// Gaps may rise during this many initial iterations without a warning.
    pub burn_in: usize,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_iter: 500, points: None, width: 6.0, grid: None, burn_in: 3 }
    }
}

impl SinkhornOptions {
    pub fn points_for(&self, n: usize) -> usize {
        self.points.unwrap_or(if n == 1 { 256 } else { 48 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub hilbert_gap: f64,
    /// Sup-norm relative error of `φ̂0 φ0` against `ρ0`, with `φ0` from this
    /// sweep and `φ̂0` from the previous one.
    pub residual0: f64,
    /// Same for `φ̂1 φ1` against `ρ1`, with `φ1` from the previous sweep.
    pub residual1: f64,
}

/// Potentials on a shared grid; the boundary products reproduce the endpoint
/// densities at convergence.
#[derive(Debug, Clone)]
pub struct SinkhornState {
    pub t0: f64,
    pub t1: f64,
    pub grid: Arc<Grid>,
    pub rho0: GridFunction,
    pub rho1: GridFunction,
    pub phi_hat0: GridFunction,
    pub phi0: GridFunction,
    pub phi_hat1: GridFunction,
    pub phi1: GridFunction,
    pub iterations: usize,
    pub converged: bool,
    /// Sup-norm relative errors of `φ̂0 φ0` and `φ̂1 φ1` in the returned state.
    pub marginal_residuals: (f64, f64),
    pub hilbert_gaps: Vec<f64>,
    pub trace: Vec<IterationRecord>,
    pub warnings: Vec<String>,
}

impl SinkhornState {
    pub fn phi_hat0_potential(&self) -> Potential {
        Potential::Grid(self.phi_hat0.clone())
    }
    pub fn phi1_potential(&self) -> Potential {
        Potential::Grid(self.phi1.clone())
    }

    /// `(φ̂, φ) ↦ (c φ̂, φ / c)`; the bridge does not see the gauge.
    pub fn rescaled(&self, c: f64) -> Self {
        let shift = c.ln();
        let scale = |f: &GridFunction, s: f64| GridFunction {
            grid: f.grid.clone(),
            log_values: f.log_values.iter().map(|v| v + s).collect(),
        };
        Self {
            phi_hat0: scale(&self.phi_hat0, shift),
            phi_hat1: scale(&self.phi_hat1, shift),
            phi0: scale(&self.phi0, -shift),
            phi1: scale(&self.phi1, -shift),
            ..self.clone()
        }
    }

    /// Whether gaps never rose after the burn-in window.
    pub fn gaps_monotone_after(&self, burn_in: usize) -> bool {
        self.hilbert_gaps.iter().skip(burn_in).collect::<Vec<_>>().windows(2).all(|w| w[1] <= w[0])
    }
}

/// `max Δ − min Δ` of `Δ = ln a − ln b` over nodes where both are finite.
pub fn hilbert_gap(a: &[f64], b: &[f64]) -> f64 {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in a.iter().zip(b) {
        if x.is_finite() && y.is_finite() {
            let d = x - y;
            lo = lo.min(d);
            hi = hi.max(d);
        }
    }
    if hi < lo {
        0.0
    } else {
        hi - lo
    }
}

/// `sup |exp(a + b) − exp(r)| / sup exp(r)`
pub fn marginal_residual(log_a: &[f64], log_b: &[f64], log_rho: &[f64]) -> f64 {
    let peak = log_rho.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    log_a
        .iter()
        .zip(log_b)
        .zip(log_rho)
        .map(|((a, b), r)| ((a + b - peak).exp() - (r - peak).exp()).abs())
        .fold(0.0, f64::max)
}

/// `ln ρ − ln φ`, refusing to divide where the density has mass but the
/// denominator has underflowed.
fn ratio(log_rho: &[f64], log_den: &[f64], what: &str) -> Result<Vec<f64>> {
    log_rho
        .iter()
        .zip(log_den)
        .map(|(&r, &d)| {
            if r == f64::NEG_INFINITY {
                Ok(f64::NEG_INFINITY)
            } else if d.is_finite() {
                Ok(r - d)
            } else {
                Err(Error::Underflow(format!(
                    "{what} vanished where the endpoint density is positive; enlarge the grid box"
                )))
            }
        })
        .collect()
}

/// Shared grid for both endpoints: the grid of a grid-valued endpoint when
/// both agree, else a box covering both at `width` standard deviations.
pub fn bridge_grid(rho0: &Density, rho1: &Density, options: &SinkhornOptions) -> Result<Arc<Grid>> {
    if let Some(g) = &options.grid {
        return Ok(g.clone());
    }
    if let (Density::Grid(a), Density::Grid(b)) = (rho0, rho1) {
        if a.grid == b.grid {
            return Ok(a.grid.clone());
        }
    }
    let n = rho0.n();
    let grid = Grid::covering(&[rho0.moments()?, rho1.moments()?], options.width, options.points_for(n))?;
    Ok(Arc::new(grid))
}

pub fn sinkhorn_solve(k: &KernelEvaluator, rho0: &Density, rho1: &Density, options: &SinkhornOptions) -> Result<SinkhornState> {
    let n = k.n();
    if rho0.n() != n || rho1.n() != n {
        return Err(Error::Dimension("endpoint densities and kernel differ in dimension".into()));
    }
    if n > 2 && options.grid.is_none() {
        return Err(Error::Parameter("grid Sinkhorn supports n ≤ 2; pass an explicit grid to override".into()));
    }
    if !(options.tol > 0.0) || options.max_iter == 0 {
        return Err(Error::Parameter("Sinkhorn needs tol > 0 and max_iter ≥ 1".into()));
    }
    let grid = bridge_grid(rho0, rho1, options)?;
    let r0 = rho0.discretize(&grid)?;
    let r1 = rho1.discretize(&grid)?;
    let op = DenseOperator::new(k, &grid);

    let mut phi_hat0 = r0.log_values.clone();
    let mut phi1 = vec![0.0; grid.len()];
    let mut phi0 = vec![0.0; grid.len()];
    let mut phi_hat1;
    let mut trace = Vec::new();
    let mut converged = false;
    for iteration in 1..=options.max_iter {
        phi_hat1 = op.apply(Direction::Forward, &phi_hat0, &phi1)?;
        let residual1 = marginal_residual(&phi_hat1, &phi1, &r1.log_values);
        phi1 = ratio(&r1.log_values, &phi_hat1, "φ̂1")?;
        phi0 = op.apply(Direction::Backward, &phi1, &phi_hat0)?;
        let residual0 = marginal_residual(&phi_hat0, &phi0, &r0.log_values);
        let next = ratio(&r0.log_values, &phi0, "φ0")?;
        let gap = hilbert_gap(&next, &phi_hat0);
        phi_hat0 = next;
        trace.push(IterationRecord { iteration, hilbert_gap: gap, residual0, residual1 });
        if gap < options.tol {
            converged = true;
            break;
        }
    }
    // Close the cycle so every stored potential is consistent with `φ̂0`.
    phi_hat1 = op.apply(Direction::Forward, &phi_hat0, &phi1)?;
    let residuals = (
        marginal_residual(&phi_hat0, &phi0, &r0.log_values),
        marginal_residual(&phi_hat1, &phi1, &r1.log_values),
    );

    let hilbert_gaps: Vec<f64> = trace.iter().map(|r| r.hilbert_gap).collect();
    let mut warnings = Vec::new();
    for (i, w) in hilbert_gaps.windows(2).enumerate().skip(options.burn_in) {
        if w[1] > w[0] {
            warnings.push(format!("Hilbert gap rose at iteration {}: {:e} → {:e}", i + 2, w[0], w[1]));
        }
    }
    if !converged {
        warnings.push(format!("no convergence within {} iterations", options.max_iter));
    }
    let wrap = |v: Vec<f64>| GridFunction::new(grid.clone(), v);
    Ok(SinkhornState {
        t0: k.t0(),
        t1: k.t(),
        grid: grid.clone(),
        rho0: r0,
        rho1: r1,
        phi_hat0: wrap(phi_hat0)?,
        phi0: wrap(phi0)?,
        phi_hat1: wrap(phi_hat1)?,
        phi1: wrap(phi1)?,
        iterations: trace.len(),
        converged,
        marginal_residuals: residuals,
        hilbert_gaps,
        trace,
        warnings,
    })
}

/// Kernels for intermediate time pairs, assembled on first use.
pub struct KernelFamily {
    system: LtvSystem,
    config: KernelConfig,
    cache: Mutex<HashMap<(u64, u64), Arc<KernelEvaluator>>>,
}

impl KernelFamily {
    pub fn new(system: LtvSystem, config: KernelConfig) -> Self {
        Self { system, config, cache: Mutex::new(HashMap::new()) }
    }

    pub fn system(&self) -> &LtvSystem {
        &self.system
    }

    pub fn kernel(&self, t0: f64, t: f64) -> Result<Arc<KernelEvaluator>> {
        let key = (t0.to_bits(), t.to_bits());
        if let Some(k) = self.cache.lock().expect("kernel cache poisoned").get(&key) {
            return Ok(k.clone());
        }
        // Assembled outside the lock; a concurrent duplicate is harmless.
        let k = Arc::new(KernelEvaluator::new(&self.system, t0, t, &self.config)?);
        self.cache.lock().expect("kernel cache poisoned").insert(key, k.clone());
        Ok(k)
    }

    pub fn cached(&self) -> usize {
        self.cache.lock().expect("kernel cache poisoned").len()
    }
}

fn check_time(state: &SinkhornState, t: f64) -> Result<()> {
    if !(t >= state.t0 && t <= state.t1) {
        return Err(Error::Parameter(format!("t = {t} outside [{}, {}]", state.t0, state.t1)));
    }
    Ok(())
}

/// `(φ̂(t, ·), φ(t, ·))` on the bridge grid.
pub fn propagate_potentials(family: &KernelFamily, state: &SinkhornState, t: f64) -> Result<(GridFunction, GridFunction)> {
    check_time(state, t)?;
    if t == state.t0 {
        return Ok((state.phi_hat0.clone(), state.phi0.clone()));
    }
    if t == state.t1 {
        return Ok((state.phi_hat1.clone(), state.phi1.clone()));
    }
    let forward = family.kernel(state.t0, t)?;
    let backward = family.kernel(t, state.t1)?;
    let (phi_hat, hat_tail) = quadrature(&forward, Direction::Forward, &state.phi_hat0, &state.grid);
    let (phi, tail) = quadrature(&backward, Direction::Backward, &state.phi1, &state.grid);
    let lw = state.grid.log_weights();
    let weigh = |p: &[f64]| p.iter().zip(&lw).map(|(a, b)| a + b).collect::<Vec<f64>>();
    check_tail(&phi_hat, &hat_tail, Some(&weigh(&phi)))?;
    check_tail(&phi, &tail, Some(&weigh(&phi_hat)))?;
    Ok((GridFunction::new(state.grid.clone(), phi_hat)?, GridFunction::new(state.grid.clone(), phi)?))
}

/// `ρ_opt(t, ·) = φ̂(t, ·) φ(t, ·)`, not renormalized.
pub fn optimal_marginal(family: &KernelFamily, state: &SinkhornState, t: f64) -> Result<GridFunction> {
    let (phi_hat, phi) = propagate_potentials(family, state, t)?;
    let log_values = phi_hat.log_values.iter().zip(&phi.log_values).map(|(a, b)| a + b).collect();
    GridFunction::new(state.grid.clone(), log_values)
}

/// Central-difference gradient with step `1e−5 · max(1, |x_k|)`.
pub fn finite_difference_gradient(f: impl Fn(&Vector) -> f64, x: &Vector) -> Vector {
    Vector::from_iterator(
        x.len(),
        (0..x.len()).map(|k| {
            let h = 1e-5 * x[k].abs().max(1.0);
            let mut up = x.clone();
            let mut down = x.clone();
            up[k] += h;
            down[k] -= h;
            (f(&up) - f(&down)) / (2.0 * h)
        }),
    )
}

/// `∇ ln φ1` at a grid node from neighbouring nodes, one-sided on the boundary.
fn grid_gradient(phi: &GridFunction, flat: usize) -> Vector {
    let g = &phi.grid;
    let idx = g.multi_index(flat);
    let n = g.n();
    let stride = |k: usize| g.points[k + 1..].iter().product::<usize>();
    Vector::from_iterator(
        n,
        (0..n).map(|k| {
            let s = stride(k);
            let h = g.spacing(k);
            let v = |f: usize| phi.log_values[f];
            if idx[k] == 0 {
                (v(flat + s) - v(flat)) / h
            } else if idx[k] + 1 == g.points[k] {
                (v(flat) - v(flat - s)) / h
            } else {
                (v(flat + s) - v(flat - s)) / (2.0 * h)
            }
        }),
    )
}

/// `u = B_tᵀ ∇ ln φ` for a mixture potential, differentiated in closed form.
pub fn control_from_mixture(sys: &LtvSystem, t: f64, phi: &GaussianMixture, x: &Vector) -> Vector {
    sys.b(t).transpose() * phi.grad_log(x)
}

/// `u_opt(t, x) = B_tᵀ ∇ₓ ln φ(t, x)`. Inside the horizon `ln φ` is
/// evaluated off-grid by quadrature and differenced centrally; at `t1` the
/// grid values of `φ1` are differenced.
pub fn optimal_control(family: &KernelFamily, state: &SinkhornState, t: f64, x: &Vector) -> Result<Vector> {
    check_time(state, t)?;
    let grad = if t == state.t1 {
        let g = &state.grid;
        let idx: Vec<usize> = (0..g.n())
            .map(|k| (((x[k] - g.lower[k]) / g.spacing(k)).round().max(0.0) as usize).min(g.points[k] - 1))
            .collect();
        let flat = idx.iter().enumerate().fold(0, |acc, (k, &i)| acc * g.points[k] + i);
        grid_gradient(&state.phi1, flat)
    } else {
        let k = family.kernel(t, state.t1)?;
        let log_phi = |z: &Vector| transform_grid_at(&k, Direction::Backward, &state.phi1, z);
        if !log_phi(x).is_finite() {
            return Err(Error::Underflow(format!("φ(t = {t}) vanishes at the evaluation point")));
        }
        finite_difference_gradient(log_phi, x)
    };
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::Underflow(format!("φ(t = {t}) below the positivity floor near the evaluation point")));
    }
    Ok(family.system().b(t).transpose() * grad)
}

/// Marginals, log-potentials and controls of a converged bridge on a time grid.
#[derive(Debug, Clone)]
pub struct BridgeSolution {
    pub times: Vec<f64>,
    pub grid: Arc<Grid>,
    pub marginals: Vec<GridFunction>,
    /// `S(t, ·) = ln φ(t, ·)`
    pub log_potentials: Vec<GridFunction>,
    /// `controls[i][node]` is `u_opt(times[i], node)`.
    pub controls: Vec<Vec<Vector>>,
}

impl BridgeSolution {
    pub fn build(family: &KernelFamily, state: &SinkhornState, times: &[f64]) -> Result<Self> {
        let mut marginals = Vec::with_capacity(times.len());
        let mut log_potentials = Vec::with_capacity(times.len());
        let mut controls = Vec::with_capacity(times.len());
        let nodes = state.grid.nodes();
        for &t in times {
            let (phi_hat, phi) = propagate_potentials(family, state, t)?;
            let log_rho = phi_hat.log_values.iter().zip(&phi.log_values).map(|(a, b)| a + b).collect();
            marginals.push(GridFunction::new(state.grid.clone(), log_rho)?);
            log_potentials.push(phi);
            // Nodes where φ has no mass carry no control.
            let u = nodes
                .par_iter()
                .map(|x| {
                    optimal_control(family, state, t, x)
                        .unwrap_or_else(|_| Vector::from_element(family.system().m(), f64::NAN))
                })
                .collect();
            controls.push(u);
        }
        Ok(Self { times: times.to_vec(), grid: state.grid.clone(), marginals, log_potentials, controls })
    }

    /// `count` equally spaced times including both ends.
    pub fn uniform_times(t0: f64, t1: f64, count: usize) -> Vec<f64> {
        let mut times: Vec<f64> = (0..count).map(|i| t0 + (t1 - t0) * i as f64 / (count - 1) as f64).collect();
        times[count - 1] = t1;
        times
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::GaussianMixture;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn heat(t: f64) -> KernelEvaluator {
        let sys = LtvSystem::heat(1, (0.0, t)).unwrap();
        KernelEvaluator::new(&sys, 0.0, t, &KernelConfig::default()).unwrap()
    }

    fn diagonal(d: &[f64], t: f64) -> (LtvSystem, KernelEvaluator) {
        let sys = LtvSystem::diagonal_case(d, (0.0, t)).unwrap();
        let k = KernelEvaluator::new(&sys, 0.0, t, &KernelConfig::default()).unwrap();
        (sys, k)
    }

    fn normal(mean: f64, var: f64) -> GaussianMixture {
        GaussianMixture::density(&[1.0], &[v(&[mean])], &[Mat::from_element(1, 1, var)]).unwrap()
    }

    #[test]
    fn constants_are_preserved_by_the_heat_kernel() {
        let k = heat(1.0);
        let one = Potential::Mixture(GaussianMixture::constant(1, 1.0).unwrap());
        for out in [transform_forward(&k, &one).unwrap(), transform_backward(&k, &one).unwrap()] {
            for x in [-3.0, 0.0, 2.5] {
                assert_relative_eq!(out.eval(&v(&[x])), 1.0, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn heat_convolution_of_a_normal_density() {
        let k = heat(1.0);
        let out = transform_forward(&k, &Potential::Mixture(normal(0.0, 1.0))).unwrap();
        assert_relative_eq!(out.eval(&v(&[0.0])), (2.0 * PI * 3.0).powf(-0.5), max_relative = 1e-12);
        assert_relative_eq!(out.eval(&v(&[0.0])), 0.230_329_433_0, epsilon = 1e-10);
    }

    #[test]
    fn mixture_transform_matches_grid_quadrature() {
        let (_, k) = diagonal(&[0.25], 1.0);
        let phi = GaussianMixture::density(
            &[0.4, 0.6],
            &[v(&[-1.0]), v(&[1.5])],
            &[Mat::from_element(1, 1, 0.3), Mat::from_element(1, 1, 0.5)],
        )
        .unwrap();
        let grid = Arc::new(Grid::new(vec![-9.0], vec![9.0], vec![801]).unwrap());
        let sampled = GridFunction::sample(grid.clone(), |x| phi.log_eval(x));
        for dir in [Direction::Forward, Direction::Backward] {
            let exact = transform_mixture(&k, dir, &phi).unwrap();
            let quad = transform_grid(&k, dir, &sampled, &grid).unwrap();
            for i in (0..grid.len()).step_by(40) {
                let x = grid.node(i);
                assert_relative_eq!(quad.log_values[i].exp(), exact.eval(&x), max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn diagonal_transforms_agree_by_symmetry() {
        let (_, k) = diagonal(&[0.25, 1.0], 0.8);
        let phi = GaussianMixture::density(&[1.0], &[v(&[0.3, -0.4])], &[Mat::identity(2, 2) * 0.7]).unwrap();
        let f = transform_mixture(&k, Direction::Forward, &phi).unwrap();
        let b = transform_mixture(&k, Direction::Backward, &phi).unwrap();
        for x in [v(&[0.0, 0.0]), v(&[1.0, -2.0]), v(&[-0.5, 0.7])] {
            assert_relative_eq!(f.log_eval(&x), b.log_eval(&x), max_relative = 1e-10);
        }
    }

    #[test]
    fn narrow_box_fails_the_tail_test() {
        let k = heat(1.0);
        let grid = Arc::new(Grid::new(vec![-1.0], vec![1.0], vec![41]).unwrap());
        let phi = GridFunction::sample(grid.clone(), |_| 0.0);
        let r = transform_grid(&k, Direction::Forward, &phi, &grid);
        assert!(matches!(r, Err(Error::Truncation { .. })), "{r:?}");
    }

    #[test]
    fn dense_operator_matches_direct_quadrature() {
        let (_, k) = diagonal(&[0.25], 1.0);
        let grid = Arc::new(Grid::new(vec![-8.0], vec![8.0], vec![121]).unwrap());
        let phi = GridFunction::sample(grid.clone(), |x| -0.5 * (x[0] - 0.5).powi(2));
        let op = DenseOperator::new(&k, &grid);
        for dir in [Direction::Forward, Direction::Backward] {
            let dense = op.apply(dir, &phi.log_values, &vec![0.0; grid.len()]).unwrap();
            let direct = transform_grid(&k, dir, &phi, &grid).unwrap();
            for (a, b) in dense.iter().zip(&direct.log_values) {
                assert_relative_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn gap_ignores_empty_nodes_and_scale() {
        let a = [0.0, 1.0, f64::NEG_INFINITY, 3.0];
        let b = [5.0, 6.0, f64::NEG_INFINITY, 8.0];
        assert_eq!(hilbert_gap(&a, &b), 0.0);
        assert_relative_eq!(hilbert_gap(&[0.0, 2.0], &[0.0, 0.5]), 1.5);
    }

    #[test]
    fn zero_denominator_is_an_underflow() {
        let r = ratio(&[0.0, f64::NEG_INFINITY], &[f64::NEG_INFINITY, f64::NEG_INFINITY], "φ0");
        assert!(matches!(r, Err(Error::Underflow(_))));
        assert_eq!(ratio(&[f64::NEG_INFINITY], &[f64::NEG_INFINITY], "φ0").unwrap()[0], f64::NEG_INFINITY);
    }

    #[test]
    fn gaussian_endpoints_under_heat_kernel() {
        let k = heat(1.0);
        let rho = Density::Mixture(normal(0.0, 1.0));
        let s = sinkhorn_solve(&k, &rho, &rho, &SinkhornOptions::default()).unwrap();
        assert!(s.converged);
        assert!(s.marginal_residuals.0 <= 1e-8 && s.marginal_residuals.1 <= 1e-8, "{:?}", s.marginal_residuals);
    }

    #[test]
    fn identical_endpoints_under_symmetric_kernel() {
        let (_, k) = diagonal(&[0.25], 1.0);
        let rho = Density::Mixture(
            GaussianMixture::density(
                &[0.3, 0.7],
                &[v(&[-1.0]), v(&[0.8])],
                &[Mat::from_element(1, 1, 0.2), Mat::from_element(1, 1, 0.6)],
            )
            .unwrap(),
        );
        let opts = SinkhornOptions { tol: 1e-9, max_iter: 200, ..SinkhornOptions::default() };
        let s = sinkhorn_solve(&k, &rho, &rho, &opts).unwrap();
        assert!(s.converged && s.iterations <= 200);
        assert!(s.marginal_residuals.1 <= 1e-8);
    }

    #[test]
    fn boundary_identities_of_propagation() {
        let (sys, k) = diagonal(&[0.25], 1.0);
        let s = sinkhorn_solve(
            &k,
            &Density::Mixture(normal(-1.0, 0.4)),
            &Density::Mixture(normal(1.0, 0.3)),
            &SinkhornOptions { points: Some(128), ..SinkhornOptions::default() },
        )
        .unwrap();
        let family = KernelFamily::new(sys, KernelConfig::default());
        let (a, b) = propagate_potentials(&family, &s, 0.0).unwrap();
        assert_eq!(a, s.phi_hat0);
        for i in 0..a.log_values.len() {
            let expected = s.rho0.log_values[i] - a.log_values[i];
            assert_relative_eq!(b.log_values[i], expected, epsilon = 1e-9);
        }
        let (a, b) = propagate_potentials(&family, &s, 1.0).unwrap();
        assert_eq!(b, s.phi1);
        assert_eq!(a, s.phi_hat1);
        assert!(propagate_potentials(&family, &s, 1.5).is_err());
        assert_eq!(family.cached(), 0);
        for t in [0.2, 0.4, 0.5, 0.6, 0.8] {
            let rho = optimal_marginal(&family, &s, t).unwrap();
            assert_relative_eq!(rho.log_mass().exp(), 1.0, epsilon = 1e-6);
        }
        assert_eq!(family.cached(), 10);
        optimal_marginal(&family, &s, 0.5).unwrap();
        assert_eq!(family.cached(), 10);
    }

    #[test]
    fn free_evolution_bridge_needs_no_control() {
        // ρ1 is the heat image of ρ0, so φ is constant.
        let sys = LtvSystem::heat(1, (0.0, 1.0)).unwrap();
        let k = KernelEvaluator::new(&sys, 0.0, 1.0, &KernelConfig::default()).unwrap();
        let s = sinkhorn_solve(
            &k,
            &Density::Mixture(normal(0.0, 1.0)),
            &Density::Mixture(normal(0.0, 3.0)),
            &SinkhornOptions::default(),
        )
        .unwrap();
        let family = KernelFamily::new(sys, KernelConfig::default());
        for t in [0.0, 0.3, 0.7] {
            for x in [-2.0, 0.0, 1.3, 3.0] {
                let u = optimal_control(&family, &s, t, &v(&[x])).unwrap();
                assert!(u[0].abs() <= 1e-6, "u({t}, {x}) = {}", u[0]);
            }
        }
    }

    #[test]
    fn log_quadratic_potential_gives_linear_feedback() {
        let sys = LtvSystem::heat(2, (0.0, 1.0)).unwrap();
        let sigma = Mat::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
        let m = v(&[0.5, -1.0]);
        let phi = GaussianMixture::bumps(&[2.0], std::slice::from_ref(&m), std::slice::from_ref(&sigma)).unwrap();
        let x = v(&[1.2, 0.4]);
        let u = control_from_mixture(&sys, 0.5, &phi, &x);
        let expected = -(sigma.try_inverse().unwrap() * (&x - &m));
        assert_relative_eq!(u, expected, max_relative = 1e-12);
    }

    #[test]
    fn uniform_times_hit_both_ends() {
        let t = BridgeSolution::uniform_times(0.0, 0.3, 11);
        assert_eq!(t.len(), 11);
        assert_eq!(t[0], 0.0);
        assert_eq!(t[10], 0.3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn analytic_mixture_gradient_matches_differences(
            x in -3.0f64..3.0, y in -3.0f64..3.0, w in 0.1f64..0.9, s in 0.2f64..2.0,
        ) {
            let phi = GaussianMixture::bumps(
                &[w.ln(), (1.0 - w).ln()],
                &[v(&[-1.0, 0.5]), v(&[1.0, -0.2])],
                &[Mat::identity(2, 2) * s, Mat::from_row_slice(2, 2, &[0.8, 0.2, 0.2, 0.6])],
            ).unwrap();
            let p = v(&[x, y]);
            let analytic = phi.grad_log(&p);
            let fd = finite_difference_gradient(|z| phi.log_eval(z), &p);
            prop_assert!((analytic - fd).norm() <= 1e-6 * (1.0 + phi.grad_log(&p).norm()));
        }

        #[test]
        fn gauge_leaves_marginal_unchanged(c in 0.01f64..100.0) {
            let k = heat(0.5);
            let grid = Arc::new(Grid::new(vec![-8.0], vec![8.0], vec![65]).unwrap());
            let rho = Density::Mixture(normal(0.0, 0.5));
            let opts = SinkhornOptions { grid: Some(grid), max_iter: 5, ..SinkhornOptions::default() };
            let s = sinkhorn_solve(&k, &rho, &rho, &opts).unwrap();
            let r = s.rescaled(c);
            for i in 0..s.grid.len() {
                let a = s.phi_hat0.log_values[i] + s.phi0.log_values[i];
                let b = r.phi_hat0.log_values[i] + r.phi0.log_values[i];
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
            }
        }
    }
}
