//! Endpoint densities and Schrödinger potentials, as Gaussian mixtures or as
//! log-values on an axis-aligned grid.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, log_sum_exp, Mat, SpdFactor, Vector};

/// `exp(−½ xᵀPx + hᵀx + g)` with `P ⪰ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTerm {
    pub precision: Mat,
    pub shift: Vector,
    pub offset: f64,
}

impl GaussianTerm {
    /// `w · exp(−½ (x − m)ᵀΣ⁻¹(x − m))`
    pub fn bump(log_weight: f64, mean: &Vector, covariance: &Mat) -> Result<Self> {
        let f = SpdFactor::new(covariance, "mixture covariance")?;
        let precision = f.inverse();
        let shift = &precision * mean;
        Ok(Self { offset: log_weight - 0.5 * mean.dot(&shift), precision, shift })
    }

    pub fn log_eval(&self, x: &Vector) -> f64 {
        -0.5 * x.dot(&(&self.precision * x)) + self.shift.dot(x) + self.offset
    }

    pub fn grad_log(&self, x: &Vector) -> Vector {
        &self.shift - &self.precision * x
    }

    /// `(mean, covariance, log of the peak value)` when `P ≻ 0`.
    pub fn moments(&self) -> Result<(Vector, Mat, f64)> {
        let f = SpdFactor::new(&self.precision, "term precision")?;
        let mean = f.solve_vec(&self.shift);
        let peak = self.offset + 0.5 * self.shift.dot(&mean);
        Ok((mean, f.inverse(), peak))
    }

    /// `ln ∫ exp(...) dx`
    pub fn log_mass(&self) -> Result<f64> {
        crate::kernel::log_gaussian_integral(&self.precision, &self.shift).map(|v| v + self.offset)
    }
}

/// A sum of [`GaussianTerm`]s; represents both densities (normalized
/// Gaussians) and potentials (arbitrary positive bumps, constants).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    n: usize,
    terms: Vec<GaussianTerm>,
}

impl GaussianMixture {
    pub fn new(n: usize, terms: Vec<GaussianTerm>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::Parameter("mixture needs at least one term".into()));
        }
        if terms.iter().any(|t| t.precision.shape() != (n, n) || t.shift.len() != n) {
            return Err(Error::Dimension(format!("mixture terms must be {n}-dimensional")));
        }
        Ok(Self { n, terms })
    }

    /// `Σ w_i N(x; m_i, Σ_i)` with positive weights.
    pub fn density(weights: &[f64], means: &[Vector], covariances: &[Mat]) -> Result<Self> {
        if weights.len() != means.len() || weights.len() != covariances.len() || weights.is_empty() {
            return Err(Error::Dimension("mixture weights, means and covariances differ in count".into()));
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::Parameter("mixture weights must be positive".into()));
        }
        let n = means[0].len();
        let terms = weights
            .iter()
            .zip(means)
            .zip(covariances)
            .map(|((&w, m), c)| {
                let log_det = SpdFactor::new(c, "mixture covariance")?.log_det;
                GaussianTerm::bump(w.ln() - 0.5 * (n as f64 * (2.0 * PI).ln() + log_det), m, c)
            })
            .collect::<Result<_>>()?;
        Self::new(n, terms)
    }

    /// `Σ exp(ℓ_i − ½ (x − m_i)ᵀΣ_i⁻¹(x − m_i))`
    pub fn bumps(log_weights: &[f64], means: &[Vector], covariances: &[Mat]) -> Result<Self> {
        if log_weights.len() != means.len() || log_weights.len() != covariances.len() || means.is_empty() {
            return Err(Error::Dimension("bump parameters differ in count".into()));
        }
        let terms = log_weights
            .iter()
            .zip(means)
            .zip(covariances)
            .map(|((&l, m), c)| GaussianTerm::bump(l, m, c))
            .collect::<Result<_>>()?;
        Self::new(means[0].len(), terms)
    }

    pub fn constant(n: usize, value: f64) -> Result<Self> {
        if !(value > 0.0) {
            return Err(Error::Parameter("constant potential must be positive".into()));
        }
        Self::new(n, vec![GaussianTerm { precision: Mat::zeros(n, n), shift: Vector::zeros(n), offset: value.ln() }])
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn terms(&self) -> &[GaussianTerm] {
        &self.terms
    }

    pub fn log_eval(&self, x: &Vector) -> f64 {
        log_sum_exp(self.terms.iter().map(|t| t.log_eval(x)))
    }

    pub fn eval(&self, x: &Vector) -> f64 {
        self.log_eval(x).exp()
    }

    /// `∇ log φ = Σ_i π_i(x) (h_i − P_i x)` with softmax responsibilities `π_i`.
    pub fn grad_log(&self, x: &Vector) -> Vector {
        let logs: Vec<f64> = self.terms.iter().map(|t| t.log_eval(x)).collect();
        let total = log_sum_exp(logs.iter().copied());
        let mut g = Vector::zeros(self.n);
        for (t, l) in self.terms.iter().zip(&logs) {
            g += t.grad_log(x) * (l - total).exp();
        }
        g
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let shift = factor.ln();
        Self {
            n: self.n,
            terms: self.terms.iter().map(|t| GaussianTerm { offset: t.offset + shift, ..t.clone() }).collect(),
        }
    }

    pub fn log_mass(&self) -> Result<f64> {
        Ok(log_sum_exp(self.terms.iter().map(GaussianTerm::log_mass).collect::<Result<Vec<_>>>()?))
    }

    /// Mean and covariance of the normalized mixture.
    pub fn moments(&self) -> Result<(Vector, Mat)> {
        let parts = self
            .terms
            .iter()
            .map(|t| Ok((t.log_mass()?, t.moments()?)))
            .collect::<Result<Vec<_>>>()?;
        let total = log_sum_exp(parts.iter().map(|(l, _)| *l));
        let mut mean = Vector::zeros(self.n);
        let mut second = Mat::zeros(self.n, self.n);
        for (l, (m, c, _)) in &parts {
            let w = (l - total).exp();
            mean += m * w;
            second += (c + m * m.transpose()) * w;
        }
        let cov = second - &mean * mean.transpose();
        Ok((mean, linalg::symmetrize(&cov)))
    }
}

/// Axis-aligned tensor grid; node index is row-major with the last axis fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub points: Vec<usize>,
}

impl Grid {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, points: Vec<usize>) -> Result<Self> {
        let n = lower.len();
        if n == 0 || upper.len() != n || points.len() != n {
            return Err(Error::Dimension("grid bounds and point counts differ in dimension".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(u > l)) || points.iter().any(|&p| p < 2) {
            return Err(Error::Parameter("grid needs lower < upper and at least two points per axis".into()));
        }
        Ok(Self { lower, upper, points })
    }

    pub fn n(&self) -> usize {
        self.lower.len()
    }

    pub fn len(&self) -> usize {
        self.points.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / (self.points[axis] - 1) as f64
    }

    pub fn axis(&self, axis: usize) -> Vec<f64> {
        let h = self.spacing(axis);
        (0..self.points[axis]).map(|i| self.lower[axis] + i as f64 * h).collect()
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.n()];
        for k in (0..self.n()).rev() {
            idx[k] = flat % self.points[k];
            flat /= self.points[k];
        }
        idx
    }

    pub fn node(&self, flat: usize) -> Vector {
        let idx = self.multi_index(flat);
        Vector::from_iterator(self.n(), idx.iter().enumerate().map(|(k, &i)| self.lower[k] + i as f64 * self.spacing(k)))
    }

    pub fn nodes(&self) -> Vec<Vector> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }

    /// Log of the tensor trapezoid weights.
    pub fn log_weights(&self) -> Vec<f64> {
        (0..self.len())
            .map(|flat| {
                self.multi_index(flat)
                    .iter()
                    .enumerate()
                    .map(|(k, &i)| {
                        let edge = i == 0 || i + 1 == self.points[k];
                        (self.spacing(k) * if edge { 0.5 } else { 1.0 }).ln()
                    })
                    .sum()
            })
            .collect()
    }

    /// Flat indices of nodes on the boundary, with the axis they bound.
    pub fn boundary(&self) -> Vec<(usize, usize)> {
        (0..self.len())
            .flat_map(|flat| {
                let idx = self.multi_index(flat);
                (0..self.n())
                    .filter(|&k| idx[k] == 0 || idx[k] + 1 == self.points[k])
                    .map(|k| (flat, k))
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    /// Box `mean ± width·σ` per axis covering every density given.
    pub fn covering(moments: &[(Vector, Mat)], width: f64, points: usize) -> Result<Self> {
        let n = moments[0].0.len();
        let mut lower = vec![f64::INFINITY; n];
        let mut upper = vec![f64::NEG_INFINITY; n];
        for (m, c) in moments {
            for k in 0..n {
                let s = c[(k, k)].max(0.0).sqrt();
                lower[k] = lower[k].min(m[k] - width * s);
                upper[k] = upper[k].max(m[k] + width * s);
            }
        }
        Self::new(lower, upper, vec![points; n])
    }
}

/// Positive function sampled on a grid, stored as logs.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub grid: Arc<Grid>,
    pub log_values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Arc<Grid>, log_values: Vec<f64>) -> Result<Self> {
        if log_values.len() != grid.len() {
            return Err(Error::Dimension(format!("{} values for {} grid nodes", log_values.len(), grid.len())));
        }
        if log_values.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::Parameter("grid values must be finite".into()));
        }
        Ok(Self { grid, log_values })
    }

    pub fn sample(grid: Arc<Grid>, f: impl Fn(&Vector) -> f64) -> Self {
        let log_values = (0..grid.len()).map(|i| f(&grid.node(i))).collect();
        Self { grid, log_values }
    }

    pub fn log_mass(&self) -> f64 {
        log_sum_exp(self.grid.log_weights().iter().zip(&self.log_values).map(|(w, v)| w + v))
    }

    pub fn normalized(&self) -> Self {
        let m = self.log_mass();
        Self { grid: self.grid.clone(), log_values: self.log_values.iter().map(|v| v - m).collect() }
    }

    pub fn values(&self) -> Vec<f64> {
        self.log_values.iter().map(|v| v.exp()).collect()
    }

    /// Multilinear interpolation of the log-values; `−∞` outside the box.
    pub fn log_eval(&self, x: &Vector) -> f64 {
        let g = &self.grid;
        let n = g.n();
        let mut base = vec![0usize; n];
        let mut frac = vec![0.0; n];
        for k in 0..n {
            let u = (x[k] - g.lower[k]) / g.spacing(k);
            if !(u >= 0.0 && u <= (g.points[k] - 1) as f64) {
                return f64::NEG_INFINITY;
            }
            let i = (u.floor() as usize).min(g.points[k] - 2);
            base[k] = i;
            frac[k] = u - i as f64;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            let mut flat = 0;
            for k in 0..n {
                let bit = (corner >> k) & 1;
                w *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
                flat = flat * g.points[k] + base[k] + bit;
            }
            if w > 0.0 {
                acc += w * self.log_values[flat];
            }
        }
        acc
    }

    pub fn moments(&self) -> (Vector, Mat) {
        let n = self.grid.n();
        let lw = self.grid.log_weights();
        let total = self.log_mass();
        let mut mean = Vector::zeros(n);
        let mut second = Mat::zeros(n, n);
        for (i, (l, v)) in lw.iter().zip(&self.log_values).enumerate() {
            let w = (l + v - total).exp();
            let x = self.grid.node(i);
            mean += &x * w;
            second += &x * x.transpose() * w;
        }
        let cov = second - &mean * mean.transpose();
        (mean, cov)
    }

    /// Reads `x_1, …, x_n, value` rows covering a full tensor grid.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let (header, rows) = crate::io::read_csv(path)?;
        let n = header.len().checked_sub(1).filter(|&n| n >= 1).ok_or_else(|| {
            Error::Config(format!("{}: expected columns x_1..x_n, value", path.display()))
        })?;
        let mut axes: Vec<Vec<f64>> = vec![Vec::new(); n];
        for row in &rows {
            for k in 0..n {
                axes[k].push(row[k]);
            }
        }
        for a in &mut axes {
            a.sort_by(f64::total_cmp);
            a.dedup();
        }
        let grid = Grid::new(
            axes.iter().map(|a| a[0]).collect(),
            axes.iter().map(|a| a[a.len() - 1]).collect(),
            axes.iter().map(Vec::len).collect(),
        )?;
        if rows.len() != grid.len() {
            return Err(Error::Config(format!("{}: rows do not form a full tensor grid", path.display())));
        }
        let mut log_values = vec![f64::NAN; grid.len()];
        for row in &rows {
            let mut flat = 0;
            for (k, coord) in row.iter().take(n).enumerate() {
                let i = ((coord - grid.lower[k]) / grid.spacing(k)).round() as usize;
                flat = flat * grid.points[k] + i;
            }
            let v = row[n];
            if v < 0.0 {
                return Err(Error::Config(format!("{}: negative density value", path.display())));
            }
            log_values[flat] = v.ln();
        }
        if log_values.iter().any(|v| v.is_nan()) {
            return Err(Error::Config(format!("{}: grid has missing nodes", path.display())));
        }
        Ok(Self { grid: Arc::new(grid), log_values })
    }
}

#[derive(Debug, Clone)]
pub enum Density {
    Mixture(GaussianMixture),
    Grid(GridFunction),
}

impl Density {
    pub fn n(&self) -> usize {
        match self {
            Density::Mixture(m) => m.n(),
            Density::Grid(g) => g.grid.n(),
        }
    }

    pub fn moments(&self) -> Result<(Vector, Mat)> {
        match self {
            Density::Mixture(m) => m.moments(),
            Density::Grid(g) => Ok(g.moments()),
        }
    }

    pub fn log_eval(&self, x: &Vector) -> f64 {
        match self {
            Density::Mixture(m) => m.log_eval(x),
            Density::Grid(g) => g.log_eval(x),
        }
    }

    /// Log-values at the grid nodes, normalized to unit trapezoid mass.
    pub fn discretize(&self, grid: &Arc<Grid>) -> Result<GridFunction> {
        let f = GridFunction::sample(grid.clone(), |x| self.log_eval(x));
        let m = f.log_mass();
        if !m.is_finite() {
            return Err(Error::Parameter("density has no mass on the grid".into()));
        }
        Ok(f.normalized())
    }
}

#[derive(Debug, Clone)]
pub enum Potential {
    Mixture(GaussianMixture),
    Grid(GridFunction),
}

impl Potential {
    pub fn n(&self) -> usize {
        match self {
            Potential::Mixture(m) => m.n(),
            Potential::Grid(g) => g.grid.n(),
        }
    }

    pub fn log_eval(&self, x: &Vector) -> f64 {
        match self {
            Potential::Mixture(m) => m.log_eval(x),
            Potential::Grid(g) => g.log_eval(x),
        }
    }

    pub fn eval(&self, x: &Vector) -> f64 {
        self.log_eval(x).exp()
    }
}

/// JSON form of an endpoint density.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensitySpec {
    Mixture { weights: Vec<f64>, means: Vec<Vec<f64>>, covariances: Vec<Vec<Vec<f64>>> },
    Grid { file: String },
}

impl DensitySpec {
    /// `base` resolves relative grid-file paths.
    pub fn build(&self, base: &Path) -> Result<Density> {
        match self {
            DensitySpec::Mixture { weights, means, covariances } => {
                let means: Vec<Vector> = means.iter().map(|m| Vector::from_column_slice(m)).collect();
                let covs = covariances.iter().map(|c| linalg::from_rows(c)).collect::<Result<Vec<_>>>()?;
                Ok(Density::Mixture(GaussianMixture::density(weights, &means, &covs)?))
            }
            DensitySpec::Grid { file } => {
                let p = base.join(file);
                if !p.exists() {
                    return Err(Error::Config(format!("grid file {} does not exist", p.display())));
                }
                Ok(Density::Grid(GridFunction::read_csv(&p)?))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn bimodal() -> GaussianMixture {
        GaussianMixture::density(
            &[0.3, 0.7],
            &[v(&[-1.0, 0.5]), v(&[1.0, 0.0])],
            &[Mat::identity(2, 2) * 0.5, Mat::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.6])],
        )
        .unwrap()
    }

    #[test]
    fn density_mixture_has_unit_mass_and_exact_moments() {
        let m = bimodal();
        assert_relative_eq!(m.log_mass().unwrap(), 0.0, epsilon = 1e-14);
        let (mean, _) = m.moments().unwrap();
        assert_relative_eq!(mean, v(&[0.4, 0.15]), epsilon = 1e-14);
    }

    #[test]
    fn single_bump_gradient() {
        let cov = Mat::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let m = v(&[0.3, -0.7]);
        let phi = GaussianMixture::bumps(&[1.7], std::slice::from_ref(&m), std::slice::from_ref(&cov)).unwrap();
        let x = v(&[1.1, 0.2]);
        let expected = -(cov.try_inverse().unwrap() * (&x - &m));
        assert_relative_eq!(phi.grad_log(&x), expected, epsilon = 1e-13);
    }

    #[test]
    fn invalid_mixtures_are_rejected() {
        assert!(GaussianMixture::density(&[-1.0], &[v(&[0.0])], &[Mat::identity(1, 1)]).is_err());
        assert!(GaussianMixture::density(&[1.0], &[v(&[0.0])], &[Mat::from_element(1, 1, -1.0)]).is_err());
        assert!(GaussianMixture::constant(1, 0.0).is_err());
    }

    #[test]
    fn grid_trapezoid_mass_of_gaussian() {
        let grid = Arc::new(Grid::new(vec![-8.0, -8.0], vec![8.0, 8.0], vec![81, 81]).unwrap());
        let d = Density::Mixture(bimodal()).discretize(&grid).unwrap();
        assert_relative_eq!(d.log_mass(), 0.0, epsilon = 1e-12);
        let (mean, _) = d.moments();
        assert_relative_eq!(mean, v(&[0.4, 0.15]), epsilon = 1e-8);
    }

    #[test]
    fn grid_csv_round_trip() {
        let grid = Arc::new(Grid::new(vec![-1.0], vec![1.0], vec![5]).unwrap());
        let f = GridFunction::sample(grid.clone(), |x| -x[0] * x[0]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.csv");
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![grid.node(i)[0], f.log_values[i].exp()]).collect();
        crate::io::write_csv(&p, &["x".into(), "value".into()], &rows).unwrap();
        let back = GridFunction::read_csv(&p).unwrap();
        assert_eq!(*back.grid, *grid);
        for (a, b) in back.log_values.iter().zip(&f.log_values) {
            assert_relative_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn boundary_nodes() {
        let g = Grid::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![3, 4]).unwrap();
        // 2·4 + 2·3 face memberships, corners counted once per axis
        assert_eq!(g.boundary().len(), 14);
    }

    proptest! {
        #[test]
        fn interpolation_reproduces_nodes(i in 0usize..35, shift in -3.0..3.0f64) {
            let grid = Arc::new(Grid::new(vec![-2.0, 0.0], vec![2.0, 1.0], vec![7, 5]).unwrap());
            let f = GridFunction::sample(grid.clone(), |x| shift + x[0] * x[1]);
            prop_assert!((f.log_eval(&grid.node(i)) - f.log_values[i]).abs() < 1e-12);
        }

        #[test]
        fn mixture_gradient_matches_differences(x0 in -3.0..3.0f64, x1 in -3.0..3.0f64) {
            let m = bimodal();
            let x = v(&[x0, x1]);
            let g = m.grad_log(&x);
            for k in 0..2 {
                let h = 1e-5;
                let mut xp = x.clone();
                xp[k] += h;
                let mut xm = x.clone();
                xm[k] -= h;
                let fd = (m.log_eval(&xp) - m.log_eval(&xm)) / (2.0 * h);
                prop_assert!((fd - g[k]).abs() < 1e-6 * g.norm().max(1.0));
            }
        }
    }
}
