//! Discrete calculus on the periodic cell Y = (0, 1).
//!
//! Cell functions are sampled at the midpoints `y_j = (j + 1/2)/n` with equal
//! weights `1/n`. The central object is the fluctuation operator
//! `L_g v = g v - <g v>`, whose semigroup `exp(-τ L_σ)` carries the memory of
//! the homogenized equations.

use nalgebra::DMatrix;

use crate::error::{domain, Error, Result};
use crate::expm::expm;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PeriodicGrid {
    n: usize,
}

impl PeriodicGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(domain("cell grid needs at least one node"));
        }
        Ok(Self { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn node(&self, j: usize) -> f64 {
        (j as f64 + 0.5) / self.n as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.node(j)).collect()
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn weights(&self) -> Vec<f64> {
        vec![self.weight(); self.n]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellFunction {
    grid: PeriodicGrid,
    values: Vec<f64>,
}

impl CellFunction {
    pub fn new(grid: PeriodicGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n() {
            return Err(Error::Dimension(format!(
                "{} values for a cell grid of {} nodes",
                values.len(),
                grid.n()
            )));
        }
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(domain(format!("non-finite cell value at node {j}")));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: PeriodicGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, grid.nodes().into_iter().map(f).collect())
    }

    pub fn constant(grid: PeriodicGrid, c: f64) -> Self {
        Self { grid, values: vec![c; grid.n()] }
    }

    /// `first` on [0, 1/2) and `second` on [1/2, 1). Needs an even node count
    /// so that each half receives exactly n/2 nodes.
    pub fn two_valued(grid: PeriodicGrid, first: f64, second: f64) -> Result<Self> {
        if grid.n() % 2 != 0 {
            return Err(Error::Precondition("a half-cell jump needs an even node count".into()));
        }
        let half = grid.n() / 2;
        Self::new(grid, (0..grid.n()).map(|j| if j < half { first } else { second }).collect())
    }

    pub fn grid(&self) -> PeriodicGrid {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        same_grid(self, other)?;
        Self::new(self.grid, self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect())
    }

    /// `L_1 v = v - <v>`.
    pub fn fluctuation(&self) -> Self {
        let m = cell_average(self);
        Self { grid: self.grid, values: self.values.iter().map(|v| v - m).collect() }
    }

    /// Periodic piecewise-linear interpolation through the midpoint samples.
    pub fn interpolate(&self, y: f64) -> f64 {
        let n = self.grid.n();
        let s = y.rem_euclid(1.0) * n as f64 - 0.5;
        let j = s.floor();
        let frac = s - j;
        let j0 = (j as i64).rem_euclid(n as i64) as usize;
        let j1 = (j0 + 1) % n;
        (1.0 - frac) * self.values[j0] + frac * self.values[j1]
    }
}

fn same_grid(a: &CellFunction, b: &CellFunction) -> Result<()> {
    if a.grid != b.grid {
        return Err(Error::Dimension(format!(
            "cell grids differ: {} vs {} nodes",
            a.grid.n(),
            b.grid.n()
        )));
    }
    Ok(())
}

pub fn cell_average(v: &CellFunction) -> f64 {
    mean(v.values())
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `out = g v - <g v>` on raw slices.
pub(crate) fn apply_l_slice(g: &[f64], v: &[f64], out: &mut [f64]) {
    let mut s = 0.0;
    for ((o, gi), vi) in out.iter_mut().zip(g).zip(v) {
        *o = gi * vi;
        s += *o;
    }
    let m = s / g.len() as f64;
    out.iter_mut().for_each(|o| *o -= m);
}

/// The operator `L_g v = g v - <g v>`.
#[derive(Clone, Debug)]
pub struct CellOperator {
    g: CellFunction,
}

impl CellOperator {
    pub fn new(g: CellFunction) -> Self {
        Self { g }
    }

    pub fn fluctuation(grid: PeriodicGrid) -> Self {
        Self { g: CellFunction::constant(grid, 1.0) }
    }

    pub fn multiplier(&self) -> &CellFunction {
        &self.g
    }

    /// Dense matrix `diag(g) - 1 (w∘g)^T`.
    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.g.len();
        let w = self.g.grid().weight();
        let g = self.g.values();
        DMatrix::from_fn(n, n, |i, j| if i == j { g[i] - w * g[j] } else { -w * g[j] })
    }
}

pub fn apply_l(op: &CellOperator, v: &CellFunction) -> Result<CellFunction> {
    same_grid(&op.g, v)?;
    let mut out = vec![0.0; v.len()];
    apply_l_slice(op.g.values(), v.values(), &mut out);
    Ok(CellFunction { grid: v.grid, values: out })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SemigroupMethod {
    #[default]
    MatrixExp,
    OdeIntegrate,
}

/// Dense `exp(-τ L_σ)`.
pub fn semigroup_matrix(sigma: &CellFunction, tau: f64) -> Result<DMatrix<f64>> {
    if !(tau >= 0.0) {
        return Err(domain(format!("semigroup time must be nonnegative, got {tau}")));
    }
    Ok(expm(&(CellOperator::new(sigma.clone()).matrix() * -tau)))
}

/// RK4 step used by the ode-integrate path: the stability bound with a
/// refinement factor that keeps the global error near 1e-9 up to τ = 20.
pub(crate) fn ode_step(sigma_max: f64) -> f64 {
    0.1f64.min(1.0 / (4.0 * sigma_max)) / 8.0
}

pub fn semigroup_apply(
    sigma: &CellFunction,
    tau: f64,
    h: &CellFunction,
    method: SemigroupMethod,
) -> Result<CellFunction> {
    same_grid(sigma, h)?;
    if !(tau >= 0.0) {
        return Err(domain(format!("semigroup time must be nonnegative, got {tau}")));
    }
    if tau == 0.0 {
        return Ok(h.clone());
    }
    match method {
        SemigroupMethod::MatrixExp => {
            let p = semigroup_matrix(sigma, tau)?;
            let v = p * nalgebra::DVector::from_column_slice(h.values());
            CellFunction::new(h.grid, v.as_slice().to_vec())
        }
        SemigroupMethod::OdeIntegrate => {
            let steps = (tau / ode_step(sigma.max())).ceil().max(1.0) as usize;
            let dt = tau / steps as f64;
            let mut w = h.values.clone();
            let n = w.len();
            let s = sigma.values();
            let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
            let mut tmp = vec![0.0; n];
            for _ in 0..steps {
                apply_l_slice(s, &w, &mut k1);
                for i in 0..n {
                    tmp[i] = w[i] - 0.5 * dt * k1[i];
                }
                apply_l_slice(s, &tmp, &mut k2);
                for i in 0..n {
                    tmp[i] = w[i] - 0.5 * dt * k2[i];
                }
                apply_l_slice(s, &tmp, &mut k3);
                for i in 0..n {
                    tmp[i] = w[i] - dt * k3[i];
                }
                apply_l_slice(s, &tmp, &mut k4);
                for i in 0..n {
                    w[i] -= dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
            CellFunction::new(h.grid, w)
        }
    }
}

/// `exp(-dt L_σ)` held as a dense matrix for repeated stepping.
#[derive(Clone, Debug)]
pub struct Propagator {
    matrix: DMatrix<f64>,
}

impl Propagator {
    pub fn new(sigma: &CellFunction, dt: f64) -> Result<Self> {
        Ok(Self { matrix: semigroup_matrix(sigma, dt)? })
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = v.len();
        let mut out = vec![0.0; n];
        for (j, &vj) in v.iter().enumerate() {
            if vj != 0.0 {
                for (o, m) in out.iter_mut().zip(self.matrix.column(j).iter()) {
                    *o += m * vj;
                }
            }
        }
        out
    }
}

pub fn harmonic_factor_b(sigma: &CellFunction, p: f64) -> Result<f64> {
    if !(p > 0.0) {
        return Err(domain(format!("B(p) needs p > 0, got {p}")));
    }
    if sigma.min() + p <= 0.0 {
        return Err(domain("B(p) needs min σ + p > 0"));
    }
    Ok(1.0 / mean(&sigma.values().iter().map(|s| 1.0 / (p + s)).collect::<Vec<_>>()))
}

/// `(p + L_σ)^{-1} f` for zero-mean `f`.
pub fn resolvent_apply(sigma: &CellFunction, p: f64, f: &CellFunction) -> Result<CellFunction> {
    same_grid(sigma, f)?;
    if !(p > 0.0) {
        return Err(domain(format!("resolvent needs p > 0, got {p}")));
    }
    let fm = cell_average(f);
    if fm.abs() > 1e-10 {
        return Err(Error::Precondition(format!("resolvent data must have zero mean, mean is {fm:e}")));
    }
    let b = harmonic_factor_b(sigma, p)?;
    let ratio: Vec<f64> = f.values().iter().zip(sigma.values()).map(|(f, s)| f / (p + s)).collect();
    let c = -b * mean(&ratio);
    CellFunction::new(f.grid, f.values().iter().zip(sigma.values()).map(|(f, s)| (f + c) / (p + s)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid(n: usize) -> PeriodicGrid {
        PeriodicGrid::new(n).unwrap()
    }

    fn sine_sigma(n: usize) -> CellFunction {
        CellFunction::from_fn(grid(n), |y| 2.0 + 0.5 * (2.0 * PI * y).sin()).unwrap()
    }

    fn max_diff(a: &CellFunction, b: &CellFunction) -> f64 {
        a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn grid_nodes_and_weights() {
        let g = grid(8);
        let nodes = g.nodes();
        assert!(nodes.windows(2).all(|w| w[0] < w[1]));
        assert!(nodes[0] >= 0.0 && nodes[7] < 1.0);
        assert!((g.weights().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(PeriodicGrid::new(0).is_err());
    }

    #[test]
    fn cell_function_rejects_bad_input() {
        assert!(matches!(CellFunction::new(grid(4), vec![1.0; 3]), Err(Error::Dimension(_))));
        assert!(CellFunction::new(grid(2), vec![1.0, f64::NAN]).is_err());
        assert!(CellFunction::two_valued(grid(5), 1.0, 3.0).is_err());
    }

    #[test]
    fn averages() {
        assert!((cell_average(&sine_sigma(256)) - 2.0).abs() < 1e-12);
        assert_eq!(cell_average(&CellFunction::constant(grid(7), 5.0)), 5.0);
        let tv = CellFunction::two_valued(grid(64), 1.0, 3.0).unwrap();
        assert!((cell_average(&tv) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn apply_l_examples() {
        let g = grid(256);
        let sigma = sine_sigma(256);
        let one = CellFunction::constant(g, 1.0);
        let out = apply_l(&CellOperator::new(sigma.clone()), &one).unwrap();
        let expect = CellFunction::from_fn(g, |y| 0.5 * (2.0 * PI * y).sin()).unwrap();
        assert!(max_diff(&out, &expect) < 1e-14);

        let v = CellFunction::from_fn(g, |y| y * y + (6.0 * PI * y).cos()).unwrap();
        let out = apply_l(&CellOperator::new(CellFunction::constant(g, 3.0)), &v).unwrap();
        let expect = v.fluctuation().map(|x| 3.0 * x).unwrap();
        assert!(max_diff(&out, &expect) < 1e-14);

        let out = apply_l(&CellOperator::new(sigma), &v).unwrap();
        assert!(cell_average(&out).abs() < 1e-12);

        let other = CellFunction::constant(grid(8), 1.0);
        assert!(matches!(apply_l(&CellOperator::fluctuation(g), &other), Err(Error::Dimension(_))));
    }

    #[test]
    fn fluctuation_operator_is_l1() {
        let g = grid(32);
        let v = CellFunction::from_fn(g, |y| (y * 7.0).exp()).unwrap();
        let out = apply_l(&CellOperator::fluctuation(g), &v).unwrap();
        assert!(max_diff(&out, &v.fluctuation()) < 1e-13);
    }

    #[test]
    fn dense_matrix_matches_action() {
        let g = grid(64);
        let sigma = sine_sigma(64);
        let v = CellFunction::from_fn(g, |y| (3.0 * y).sin() + y).unwrap();
        let op = CellOperator::new(sigma);
        let dense = op.matrix() * nalgebra::DVector::from_column_slice(v.values());
        let direct = apply_l(&op, &v).unwrap();
        let err = dense.iter().zip(direct.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-14);
    }

    #[test]
    fn semigroup_identity_at_zero() {
        let sigma = sine_sigma(32);
        let h = CellFunction::from_fn(grid(32), |y| y).unwrap();
        for m in [SemigroupMethod::MatrixExp, SemigroupMethod::OdeIntegrate] {
            assert_eq!(semigroup_apply(&sigma, 0.0, &h, m).unwrap(), h);
        }
        assert!(matches!(semigroup_apply(&sigma, -1.0, &h, SemigroupMethod::MatrixExp), Err(Error::Domain(_))));
    }

    #[test]
    fn semigroup_constant_sigma_on_zero_mean() {
        let g = grid(64);
        let c = 1.7;
        let sigma = CellFunction::constant(g, c);
        let h = CellFunction::from_fn(g, |y| (2.0 * PI * y).cos()).unwrap();
        for m in [SemigroupMethod::MatrixExp, SemigroupMethod::OdeIntegrate] {
            let out = semigroup_apply(&sigma, 2.0, &h, m).unwrap();
            let expect = h.map(|v| v * (-c * 2.0f64).exp()).unwrap();
            assert!(max_diff(&out, &expect) < 1e-9, "{m:?}: {:e}", max_diff(&out, &expect));
        }
    }

    #[test]
    fn semigroup_two_valued_eigenfunction() {
        // L_1 σ is an eigenfunction of L_σ with eigenvalue <σ> = 2.
        let g = grid(1024);
        let sigma = CellFunction::two_valued(g, 1.0, 3.0).unwrap();
        let h = sigma.fluctuation();
        for tau in [0.5, 1.0, 3.0] {
            let out = semigroup_apply(&sigma, tau, &h, SemigroupMethod::MatrixExp).unwrap();
            let expect = h.map(|v| v * (-2.0 * tau as f64).exp()).unwrap();
            assert!(max_diff(&out, &expect) < 1e-12, "tau {tau}");
        }
    }

    #[test]
    fn semigroup_methods_agree() {
        let g = grid(128);
        let sigma = sine_sigma(128);
        let h = CellFunction::from_fn(g, |y| 1.0 + (2.0 * PI * y).sin() + 0.3 * (4.0 * PI * y).cos()).unwrap();
        for tau in [0.3, 4.0, 20.0] {
            let a = semigroup_apply(&sigma, tau, &h, SemigroupMethod::MatrixExp).unwrap();
            let b = semigroup_apply(&sigma, tau, &h, SemigroupMethod::OdeIntegrate).unwrap();
            assert!(max_diff(&a, &b) < 1e-8, "tau {tau}: {}", max_diff(&a, &b));
        }
    }

    #[test]
    fn propagator_steps_compose() {
        let g = grid(48);
        let sigma = sine_sigma(48);
        let h = CellFunction::from_fn(g, |y| (2.0 * PI * y).sin()).unwrap();
        let p = Propagator::new(&sigma, 0.25).unwrap();
        let mut v = h.values().to_vec();
        for _ in 0..4 {
            v = p.apply(&v);
        }
        let direct = semigroup_apply(&sigma, 1.0, &h, SemigroupMethod::MatrixExp).unwrap();
        let err = v.iter().zip(direct.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-13);
    }

    #[test]
    fn harmonic_factor_examples() {
        let g = grid(4096);
        assert!((harmonic_factor_b(&CellFunction::constant(g, 2.5), 0.7).unwrap() - 3.2).abs() < 1e-14);
        let tv = CellFunction::two_valued(g, 1.0, 3.0).unwrap();
        // Oracle: the two-point harmonic mean in closed form.
        assert!((harmonic_factor_b(&tv, 1.0).unwrap() - 1.0 / (0.5 * (0.5 + 0.25))).abs() < 1e-12);
        // Oracle: ∫ dy/(a + b sin 2πy) = 1/sqrt(a² - b²).
        let b = harmonic_factor_b(&sine_sigma(4096), 1.0).unwrap();
        assert!((b - (9.0f64 - 0.25).sqrt()).abs() < 1e-12);
        assert!((b - 2.958040).abs() < 1e-6);
        assert!(matches!(harmonic_factor_b(&tv, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn resolvent_examples() {
        let g = grid(256);
        let sigma = sine_sigma(256);
        let zero = CellFunction::constant(g, 0.0);
        assert!(resolvent_apply(&sigma, 1.0, &zero).unwrap().values().iter().all(|v| *v == 0.0));

        let f = CellFunction::from_fn(g, |y| (2.0 * PI * y).cos()).unwrap();
        let out = resolvent_apply(&CellFunction::constant(g, 2.0), 0.5, &f).unwrap();
        assert!(max_diff(&out, &f.map(|v| v / 2.5).unwrap()) < 1e-14);

        // Residual oracle: apply p + L_σ directly.
        let f = sigma.fluctuation();
        let gsol = resolvent_apply(&sigma, 1.0, &f).unwrap();
        let lg = apply_l(&CellOperator::new(sigma.clone()), &gsol).unwrap();
        let resid = gsol.zip_with(&lg, |a, b| a + b).unwrap();
        assert!(max_diff(&resid, &f) < 1e-10);
        assert!(cell_average(&gsol).abs() < 1e-14);

        let biased = CellFunction::constant(g, 1.0);
        assert!(matches!(resolvent_apply(&sigma, 1.0, &biased), Err(Error::Precondition(_))));
        assert!(matches!(resolvent_apply(&sigma, -1.0, &f), Err(Error::Domain(_))));
    }

    #[test]
    fn interpolation_reproduces_nodes_and_wraps() {
        let g = grid(16);
        let v = CellFunction::from_fn(g, |y| (2.0 * PI * y).sin()).unwrap();
        for j in 0..16 {
            assert!((v.interpolate(g.node(j)) - v.values()[j]).abs() < 1e-15);
            assert!((v.interpolate(g.node(j) + 3.0) - v.values()[j]).abs() < 1e-13);
        }
        let mid = v.interpolate(0.0);
        assert!((mid - 0.5 * (v.values()[0] + v.values()[15])).abs() < 1e-15);
    }
}
