//! Direct transcription of
//! `min ∫ ½|u|² + ½ zᵀQz  s.t.  ż = Az + B̂u, z(t0) = x, z(t) = y`
//! with `B̂ = √2 B`, piecewise-constant `u` and trapezoid dynamics. The
//! states are eliminated, leaving an equality-constrained quadratic program
//! in `u` that is solved exactly.

use nalgebra::linalg::Cholesky;

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::ltv_system::LtvSystem;

#[derive(Debug, Clone)]
pub struct OcpSolution {
    /// `η`, the optimal cost.
    pub cost: f64,
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    /// `controls[k]` acts on `[times[k], times[k + 1])`.
    pub controls: Vec<Vector>,
    /// `‖Hu + f − Lᵀλ‖∞` of the optimality system.
    pub kkt_residual: f64,
    /// `max(‖z_0 − x‖∞, ‖z_N − y‖∞)`
    pub boundary_residual: f64,
}

/// Transcribed problem for one system and horizon; solves any `(x, y)`.
pub struct BvpSolver {
    n: usize,
    m: usize,
    times: Vec<f64>,
    step: f64,
    /// `z_{k+1} = F_k z_k + G_k u_k`
    f: Vec<Mat>,
    g: Vec<Mat>,
    q: Vec<Mat>,
    quad_weights: Vec<f64>,
    hessian: Cholesky<f64, nalgebra::Dyn>,
    /// `z_N = P_N x + L u`
    terminal_map: Mat,
    reach: Mat,
    /// `L H⁻¹ Lᵀ`
    schur: Cholesky<f64, nalgebra::Dyn>,
    /// `H⁻¹ Lᵀ`
    h_inv_lt: Mat,
    hessian_matrix: Mat,
}

fn cholesky(m: Mat, what: &str) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    Cholesky::new(m).ok_or_else(|| Error::NotPositiveDefinite(what.into()))
}

impl BvpSolver {
    pub fn new(sys: &LtvSystem, t0: f64, t: f64, grid_n: usize) -> Result<Self> {
        if !(t > t0) || grid_n == 0 {
            return Err(Error::Parameter("BVP needs t > t0 and grid_n ≥ 1".into()));
        }
        let (n, m) = (sys.n(), sys.m());
        let h = (t - t0) / grid_n as f64;
        let times: Vec<f64> = (0..=grid_n).map(|k| if k == grid_n { t } else { t0 + k as f64 * h }).collect();
        let a: Vec<Mat> = times.iter().map(|&s| sys.a(s)).collect();
        let b_hat: Vec<Mat> = times.iter().map(|&s| sys.b(s) * std::f64::consts::SQRT_2).collect();
        let q: Vec<Mat> = times.iter().map(|&s| sys.q(s)).collect();
        let eye = Mat::identity(n, n);
        let mut f = Vec::with_capacity(grid_n);
        let mut g = Vec::with_capacity(grid_n);
        for k in 0..grid_n {
            let lhs = (&eye - &a[k + 1] * (0.5 * h)).lu();
            f.push(lhs.solve(&(&eye + &a[k] * (0.5 * h))).ok_or_else(|| Error::Parameter("step too large for A".into()))?);
            g.push(lhs.solve(&((&b_hat[k] + &b_hat[k + 1]) * (0.5 * h))).expect("same factor as F"));
        }
        let quad_weights: Vec<f64> =
            (0..=grid_n).map(|k| if k == 0 || k == grid_n { 0.5 * h } else { h }).collect();

        // R_j = ω_j Q_j + F_jᵀ R_{j+1} F_j, R_N = ω_N Q_N
        let mut r = vec![Mat::zeros(n, n); grid_n + 1];
        r[grid_n] = &q[grid_n] * quad_weights[grid_n];
        for j in (1..grid_n).rev() {
            r[j] = &q[j] * quad_weights[j] + f[j].transpose() * &r[j + 1] * &f[j];
        }
        // H_ik = G_iᵀ Φ(k+1, i+1)ᵀ R_{k+1} G_k for i ≤ k, plus the control weight.
        let dim = grid_n * m;
        let mut hess = Mat::identity(dim, dim) * h;
        for k in 0..grid_n {
            let mut y = &r[k + 1] * &g[k];
            for i in (0..=k).rev() {
                let block = g[i].transpose() * &y;
                for (p, qq) in (0..m).flat_map(|p| (0..m).map(move |qq| (p, qq))) {
                    hess[(i * m + p, k * m + qq)] += block[(p, qq)];
                    if i != k {
                        hess[(k * m + qq, i * m + p)] += block[(p, qq)];
                    }
                }
                if i > 0 {
                    y = f[i].transpose() * y;
                }
            }
        }
        let hessian_matrix = hess.clone();
        let hessian = cholesky(hess, "transcribed Hessian")?;

        let mut terminal_map = eye.clone();
        for fk in &f {
            terminal_map = fk * terminal_map;
        }
        let mut reach = Mat::zeros(n, dim);
        let mut tail = eye;
        for i in (0..grid_n).rev() {
            reach.view_mut((0, i * m), (n, m)).copy_from(&(&tail * &g[i]));
            tail *= &f[i];
        }
        let h_inv_lt = hessian.solve(&reach.transpose());
        let schur_m = crate::linalg::symmetrize(&(&reach * &h_inv_lt));
        let (lo, hi) = crate::linalg::min_max_eigenvalue(&schur_m);
        if !(lo > 1e-12 * hi) {
            return Err(Error::Infeasible(format!(
                "terminal constraint is rank deficient (eigenvalues of L H⁻¹ Lᵀ in [{lo:e}, {hi:e}]); the pair (A, B) is not controllable on [{t0}, {t}]"
            )));
        }
        let schur = cholesky(schur_m, "constraint Schur complement")?;
        Ok(Self { n, m, times, step: h, f, g, q, quad_weights, hessian, terminal_map, reach, schur, h_inv_lt, hessian_matrix })
    }

    pub fn grid_n(&self) -> usize {
        self.f.len()
    }

    pub fn solve(&self, x: &Vector, y: &Vector) -> Result<OcpSolution> {
        let (n, m, big_n) = (self.n, self.m, self.grid_n());
        if x.len() != n || y.len() != n {
            return Err(Error::Dimension(format!("endpoints must have length {n}")));
        }
        // Free response z⁰_j and r_j = ω_j Q_j z⁰_j + F_jᵀ r_{j+1}.
        let mut free = Vec::with_capacity(big_n + 1);
        free.push(x.clone());
        for k in 0..big_n {
            let next = &self.f[k] * &free[k];
            free.push(next);
        }
        let constant: f64 = (0..=big_n)
            .map(|j| 0.5 * self.quad_weights[j] * free[j].dot(&(&self.q[j] * &free[j])))
            .sum();
        let mut lin = Vector::zeros(big_n * m);
        let mut r = &self.q[big_n] * &free[big_n] * self.quad_weights[big_n];
        for i in (0..big_n).rev() {
            lin.rows_mut(i * m, m).copy_from(&(self.g[i].transpose() * &r));
            if i > 0 {
                r = &self.q[i] * &free[i] * self.quad_weights[i] + self.f[i].transpose() * r;
            }
        }

        // u = H⁻¹(Lᵀλ − f), (L H⁻¹ Lᵀ) λ = d + L H⁻¹ f, d = y − P_N x
        let h_inv_f = self.hessian.solve(&lin);
        let d = y - &self.terminal_map * x;
        let lambda = self.schur.solve(&(&d + &self.reach * &h_inv_f));
        let u = &self.h_inv_lt * &lambda - h_inv_f;

        let cost = 0.5 * u.dot(&(&self.hessian_matrix * &u)) + lin.dot(&u) + constant;
        let kkt = &self.hessian_matrix * &u + &lin - self.reach.transpose() * &lambda;

        let controls: Vec<Vector> = (0..big_n).map(|k| u.rows(k * m, m).into_owned()).collect();
        let mut states = Vec::with_capacity(big_n + 1);
        states.push(x.clone());
        for k in 0..big_n {
            let next = &self.f[k] * &states[k] + &self.g[k] * &controls[k];
            states.push(next);
        }
        let boundary_residual = (&states[big_n] - y).amax();
        Ok(OcpSolution {
            cost: cost.max(0.0),
            times: self.times.clone(),
            states,
            controls,
            kkt_residual: kkt.amax(),
            boundary_residual,
        })
    }

    pub fn step(&self) -> f64 {
        self.step
    }
}

pub fn solve_bvp_ocp(sys: &LtvSystem, x: &Vector, y: &Vector, t0: f64, t: f64, grid_n: usize) -> Result<OcpSolution> {
    BvpSolver::new(sys, t0, t, grid_n)?.solve(x, y)
}
