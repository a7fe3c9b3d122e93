//! Weak limits of the rotation system `∂_t U = b(x/ε) A U`,
//! `A = [[0,1],[-1,0]]`.
//!
//! The limit is an average of rotations; it solves a Volterra equation whose
//! kernel is known only through its Laplace transform. We work with the
//! regular kernel
//!
//! ```text
//! K̃̂(p) = B(p) − p I + b* A,   B(p) = M(p)^{-1},   M(p) = Σ_i w_i (p I − λ_i A)^{-1},
//! ```
//!
//! so that `U⁰' − b* A U⁰ = −∫ K̃(t−s) U⁰(s) ds`. The singular form with a
//! Dirac part is `K̂ = 2 b* A − K̃̂`.

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;

use crate::cell_calculus::CellFunction;
use crate::error::{domain, Error, Result};
use crate::quadrature::gauss_legendre;
use crate::volterra::{solve_volterra, TimeGrid, VolterraProblem};

pub const DEFAULT_TALBOT_NODES: usize = 32;

/// Largest node count used when the contour has to grow with `t`; beyond it
/// the `e^{rt}` scaling costs more digits than the extra nodes gain.
pub const MAX_TALBOT_NODES: usize = 60;

/// The skew generator `A`.
pub fn generator() -> Matrix2<f64> {
    Matrix2::new(0.0, 1.0, -1.0, 0.0)
}

/// `R(θ) = exp(θ A)`.
pub fn rotation(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, s, -s, c)
}

/// Finite atomic probability measure describing the values of `b`.
#[derive(Clone, Debug, PartialEq)]
pub struct YoungMeasure {
    atoms: Vec<f64>,
    weights: Vec<f64>,
}

impl YoungMeasure {
    pub fn new(atoms: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != weights.len() {
            return Err(Error::Dimension(format!("{} atoms vs {} weights", atoms.len(), weights.len())));
        }
        if atoms.iter().chain(&weights).any(|v| !v.is_finite()) || weights.iter().any(|w| *w < 0.0) {
            return Err(domain("atoms must be finite and weights nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(domain(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { atoms, weights })
    }

    pub fn point_mass(b: f64) -> Self {
        Self { atoms: vec![b], weights: vec![1.0] }
    }

    pub fn uniform(atoms: Vec<f64>) -> Result<Self> {
        let w = 1.0 / atoms.len().max(1) as f64;
        Self::new(atoms.clone(), vec![w; atoms.len()])
    }

    /// Pushforward of the cell measure by a periodic `b`.
    pub fn from_cell(b: &CellFunction) -> Self {
        Self { atoms: b.values().to_vec(), weights: b.grid().weights() }
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `b* = Σ w_i λ_i`.
    pub fn mean(&self) -> f64 {
        self.atoms.iter().zip(&self.weights).map(|(a, w)| a * w).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.atoms.iter().zip(&self.weights).map(|(a, w)| w * (a - m).powi(2)).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.atoms.iter().fold(0.0, |m, a| m.max(a.abs()))
    }

    /// `M(s) = m1 I + m2 A` for complex `s`.
    fn resolvent_average(&self, s: Complex64) -> (Complex64, Complex64) {
        let mut m1 = Complex64::new(0.0, 0.0);
        let mut m2 = Complex64::new(0.0, 0.0);
        for (l, w) in self.atoms.iter().zip(&self.weights) {
            let d = s * s + l * l;
            m1 += w * s / d;
            m2 += w * l / d;
        }
        (m1, m2)
    }
}

/// `R(bt) U_in`, the exact flow of `∂_t U = b A U`.
pub fn exact_rotation(b: f64, t: f64, u_in: Vector2<f64>) -> Vector2<f64> {
    rotation(b * t) * u_in
}

/// `Σ_i w_i R(λ_i t) U_in`.
pub fn cell_averaged_limit(nu: &YoungMeasure, t: f64, u_in: Vector2<f64>) -> Vector2<f64> {
    averaged_rotation(nu, t) * u_in
}

pub fn averaged_rotation(nu: &YoungMeasure, t: f64) -> Matrix2<f64> {
    nu.atoms.iter().zip(&nu.weights).fold(Matrix2::zeros(), |acc, (l, w)| acc + rotation(l * t) * *w)
}

fn positive(p: f64) -> Result<()> {
    if p > 0.0 && p.is_finite() {
        Ok(())
    } else {
        Err(domain(format!("Laplace variable must be positive, got {p}")))
    }
}

/// `M(p) = Σ_i w_i/(p²+λ_i²) [[p, λ_i], [−λ_i, p]]`, the Laplace transform of
/// the averaged rotations.
pub fn matrix_m(nu: &YoungMeasure, p: f64) -> Result<Matrix2<f64>> {
    positive(p)?;
    let (m1, m2) = nu.resolvent_average(Complex64::new(p, 0.0));
    Ok(Matrix2::identity() * m1.re + generator() * m2.re)
}

/// `B(p) = M(p)^{-1}`.
pub fn matrix_b(nu: &YoungMeasure, p: f64) -> Result<Matrix2<f64>> {
    let m = matrix_m(nu, p)?;
    m.try_inverse().ok_or_else(|| Error::Solver(format!("M({p}) is singular")))
}

/// Components `(α̂, β̂)` of `K̃̂(s) = α̂ I + β̂ A` for complex `s`.
///
/// With `q_i = 1/(s²+λ_i²)`, `Q = Σ w q`, `P = Σ w λ q` and `c = P/Q`, both
/// components are rewritten so that nothing cancels as `|s|` grows:
/// `α̂ = s X / D`, `β̂ = (b* D − P)/D` with `X = Q Σ w q (λ−c)²`,
/// `D = s²Q² + P²` and `b* D − P = −s⁻² Σ w (b*−λ) λ² q − b* X`.
pub fn kernel_symbol(nu: &YoungMeasure, s: Complex64) -> (Complex64, Complex64) {
    let zero = Complex64::new(0.0, 0.0);
    let b = nu.mean();
    let s2 = s * s;
    let q: Vec<Complex64> = nu.atoms.iter().map(|l| 1.0 / (s2 + l * l)).collect();
    let (mut big_q, mut big_p, mut tail) = (zero, zero, zero);
    for ((l, w), qi) in nu.atoms.iter().zip(&nu.weights).zip(&q) {
        big_q += w * qi;
        big_p += w * l * qi;
        tail += w * (b - l) * l * l * qi;
    }
    let c = big_p / big_q;
    let spread: Complex64 = nu.atoms.iter().zip(&nu.weights).zip(&q).map(|((l, w), qi)| w * qi * (l - c) * (l - c)).sum();
    let x = big_q * spread;
    let d = s2 * big_q * big_q + big_p * big_p;
    (s * x / d, (-tail / s2 - b * x) / d)
}

/// `K̃̂(p) = B(p) − p I + b* A`.
pub fn regularized_kernel_laplace(nu: &YoungMeasure, p: f64) -> Result<Matrix2<f64>> {
    positive(p)?;
    let (a, b) = kernel_symbol(nu, Complex64::new(p, 0.0));
    Ok(Matrix2::identity() * a.re + generator() * b.re)
}

/// Fixed-Talbot inversion of a transform whose original is real valued.
pub fn talbot_scalar(f: impl Fn(Complex64) -> Complex64, t: f64, nodes: usize) -> Result<f64> {
    if !(t > 0.0) {
        return Err(domain(format!("Talbot inversion needs t > 0, got {t}")));
    }
    if nodes < 2 {
        return Err(domain("Talbot inversion needs at least two nodes"));
    }
    let m = nodes as f64;
    let r = 2.0 * m / (5.0 * t);
    let mut acc = 0.5 * f(Complex64::new(r, 0.0)).re * (r * t).exp();
    for k in 1..nodes {
        let theta = k as f64 * std::f64::consts::PI / m;
        let cot = theta.cos() / theta.sin();
        let s = Complex64::new(r * theta * cot, r * theta);
        let sigma = theta + (theta * cot - 1.0) * cot;
        acc += ((s * t).exp() * f(s) * Complex64::new(1.0, sigma)).re;
    }
    Ok(r / m * acc)
}

/// Entrywise fixed-Talbot inversion of a 2×2 transform.
pub fn inverse_laplace_talbot(f: impl Fn(Complex64) -> Matrix2<Complex64>, t: f64, nodes: usize) -> Result<Matrix2<f64>> {
    let mut out = Matrix2::zeros();
    for i in 0..2 {
        for j in 0..2 {
            out[(i, j)] = talbot_scalar(|s| f(s)[(i, j)], t, nodes)?;
        }
    }
    Ok(out)
}

/// Node count that keeps the contour's imaginary reach `rπ/2` beyond every
/// singularity of `K̃̂`, which lie in `|s| ≤ max|λ|`.
pub fn talbot_nodes_for(nu: &YoungMeasure, t: f64, base: usize) -> usize {
    let reach = (1.5 * nu.max_abs() * t).ceil() as usize;
    base.max(reach).min(MAX_TALBOT_NODES.max(base))
}

/// `K̃(t) = α(t) I + β(t) A` on a time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelComponents {
    pub times: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl KernelComponents {
    pub fn matrix(&self, n: usize) -> Matrix2<f64> {
        Matrix2::identity() * self.alpha[n] + generator() * self.beta[n]
    }
}

/// `(α(t), β(t))` with `K̃(t) = α I + β A`; `K̃(0) = Var(λ) I` exactly.
pub fn kernel_at(nu: &YoungMeasure, t: f64, nodes: usize) -> Result<(f64, f64)> {
    if t == 0.0 {
        return Ok((nu.variance(), 0.0));
    }
    let m = talbot_nodes_for(nu, t, nodes);
    Ok((talbot_scalar(|s| kernel_symbol(nu, s).0, t, m)?, talbot_scalar(|s| kernel_symbol(nu, s).1, t, m)?))
}

/// Tabulates `K̃` on the grid by Talbot inversion at every node.
pub fn tabulate_kernel(nu: &YoungMeasure, grid: &TimeGrid, nodes: usize) -> Result<KernelComponents> {
    let times = grid.times();
    let (alpha, beta) = times.iter().map(|t| kernel_at(nu, *t, nodes)).collect::<Result<Vec<_>>>()?.into_iter().unzip();
    Ok(KernelComponents { times, alpha, beta })
}

#[derive(Clone, Debug, PartialEq)]
pub struct OscillatorSolution {
    pub times: Vec<f64>,
    pub values: Vec<Vector2<f64>>,
}

impl OscillatorSolution {
    /// `sup_t |U⁰(t) − Σ w_i R(λ_i t) U_in|`.
    pub fn max_error_against_limit(&self, nu: &YoungMeasure, u_in: Vector2<f64>) -> f64 {
        self.times
            .iter()
            .zip(&self.values)
            .map(|(t, u)| (u - cell_averaged_limit(nu, *t, u_in)).norm())
            .fold(0.0, f64::max)
    }
}

/// Solves `U⁰' − b* A U⁰ = −∫ K̃(t−s) U⁰(s) ds` with the kernel tabulated by
/// [`tabulate_kernel`] using `nodes` Talbot points.
pub fn solve_oscillator_limit(nu: &YoungMeasure, u_in: Vector2<f64>, grid: &TimeGrid, nodes: usize) -> Result<OscillatorSolution> {
    let kernel = tabulate_kernel(nu, grid, nodes)?;
    solve_with_kernel(nu, u_in, grid, &kernel)
}

/// As [`solve_oscillator_limit`] with a precomputed kernel table.
pub fn solve_with_kernel(nu: &YoungMeasure, u_in: Vector2<f64>, grid: &TimeGrid, kernel: &KernelComponents) -> Result<OscillatorSolution> {
    let n = grid.count() + 1;
    if kernel.alpha.len() < n {
        return Err(Error::Dimension(format!("kernel has {} nodes, grid needs {n}", kernel.alpha.len())));
    }
    let b = nu.mean();
    // The solver's convention is u' + a u − ∫K u = S.
    let a = vec![0.0, -b, b, 0.0];
    let mut table = Vec::with_capacity(4 * n);
    for j in 0..n {
        let k = -kernel.matrix(j);
        table.extend_from_slice(&[k[(0, 0)], k[(0, 1)], k[(1, 0)], k[(1, 1)]]);
    }
    let problem = VolterraProblem::new(2, a, table, vec![0.0; 2 * n], vec![u_in[0], u_in[1]]);
    let sol = solve_volterra(&problem, grid)?;
    let values = (0..n).map(|j| Vector2::new(sol.at(j)[0], sol.at(j)[1])).collect();
    Ok(OscillatorSolution { times: sol.times, values })
}

/// `∫_0^∞ e^{−pt} f(t) dt` by composite Gauss–Legendre on `[0, horizon]`.
pub fn numeric_laplace(f: impl Fn(f64) -> Vector2<f64>, p: f64, horizon: f64, panel_width: f64) -> Result<Vector2<f64>> {
    positive(p)?;
    let (x, w) = gauss_legendre(16);
    let panels = (horizon / panel_width).ceil().max(1.0) as usize;
    let h = horizon / panels as f64;
    let mut acc = Vector2::zeros();
    for k in 0..panels {
        let lo = k as f64 * h;
        for (xi, wi) in x.iter().zip(&w) {
            let t = lo + 0.5 * h * (xi + 1.0);
            acc += f(t) * (0.5 * h * wi * (-p * t).exp());
        }
    }
    Ok(acc)
}

/// `|B(p)^{-1} U_in − ∫ e^{−pt} Σ w_i R(λ_i t) U_in dt|`, the transform taken
/// numerically over a horizon where `e^{−pt}` has fallen below 1e-16.
pub fn laplace_identity_gap(nu: &YoungMeasure, u_in: Vector2<f64>, p: f64) -> Result<f64> {
    let b_inv = matrix_b(nu, p)?.try_inverse().ok_or_else(|| Error::Solver("B(p) is singular".into()))?;
    let horizon = 37.0 / p;
    let panel = (0.5 / nu.max_abs().max(1.0)).min(0.5);
    let numeric = numeric_laplace(|t| cell_averaged_limit(nu, t, u_in), p, horizon, panel)?;
    Ok((b_inv * u_in - numeric).norm())
}

/// Average over `x ∈ window` of `R(b(x/ε) t) U_in`, midpoint rule with
/// `per_period` nodes per period.
pub fn windowed_eps_average(
    b: impl Fn(f64) -> f64,
    epsilon: f64,
    t: f64,
    u_in: Vector2<f64>,
    window: (f64, f64),
    per_period: usize,
) -> Result<Vector2<f64>> {
    if !(epsilon > 0.0) || !(window.1 > window.0) || per_period == 0 {
        return Err(domain("windowed average needs ε > 0, a nonempty window and nodes"));
    }
    let n = (((window.1 - window.0) / epsilon) * per_period as f64).ceil() as usize;
    let h = (window.1 - window.0) / n as f64;
    let mut acc = Vector2::zeros();
    for j in 0..n {
        let x = window.0 + (j as f64 + 0.5) * h;
        acc += exact_rotation(b(x / epsilon), t, u_in);
    }
    Ok(acc / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn two_atoms() -> YoungMeasure {
        YoungMeasure::uniform(vec![1.0, 3.0]).unwrap()
    }

    #[test]
    fn rotation_conventions() {
        let u = Vector2::new(1.0, 0.0);
        assert_eq!(exact_rotation(0.0, 3.0, u), u);
        let q = exact_rotation(1.0, PI / 2.0, u);
        assert!((q - Vector2::new(0.0, -1.0)).norm() < 1e-15);
        let v = Vector2::new(0.3, -1.7);
        assert!((exact_rotation(2.3, 11.1, v).norm() - v.norm()).abs() < 1e-14);
    }

    #[test]
    fn averaged_limit_cases() {
        let u = Vector2::new(0.6, 0.8);
        let t = 1.3;
        let pm = cell_averaged_limit(&YoungMeasure::point_mass(2.0), t, u);
        assert!((pm - exact_rotation(2.0, t, u)).norm() < 1e-15);
        let two = cell_averaged_limit(&two_atoms(), t, u);
        let expect = (rotation(t) + rotation(3.0 * t)) * u * 0.5;
        assert!((two - expect).norm() < 1e-15);
        assert!(two.norm() < u.norm());
    }

    #[test]
    fn measure_validation() {
        assert!(YoungMeasure::new(vec![1.0, 2.0], vec![0.5, 0.6]).is_err());
        assert!(YoungMeasure::new(vec![1.0], vec![]).is_err());
        assert!(YoungMeasure::new(vec![1.0, 2.0], vec![-0.5, 1.5]).is_err());
        assert_eq!(two_atoms().variance(), 1.0);
    }

    #[test]
    fn point_mass_b_matrix() {
        for (b, p) in [(0.0, 0.7), (2.5, 1.3), (-1.0, 4.0)] {
            let got = matrix_b(&YoungMeasure::point_mass(b), p).unwrap();
            let expect = Matrix2::identity() * p - generator() * b;
            assert!((got - expect).norm() < 1e-13);
            assert!(regularized_kernel_laplace(&YoungMeasure::point_mass(b), p).unwrap().norm() < 1e-13);
        }
        assert!(matrix_b(&two_atoms(), 0.0).is_err());
        assert!(regularized_kernel_laplace(&two_atoms(), -1.0).is_err());
    }

    #[test]
    fn b_inverts_m() {
        let nu = two_atoms();
        for p in [0.1, 1.0, 7.0] {
            let prod = matrix_b(&nu, p).unwrap() * matrix_m(&nu, p).unwrap();
            assert!((prod - Matrix2::identity()).norm() < 1e-12);
        }
    }

    #[test]
    fn kernel_commutes_with_rotations() {
        let nu = YoungMeasure::new(vec![0.5, 1.0, 4.0], vec![0.2, 0.3, 0.5]).unwrap();
        for p in [0.3, 2.0, 30.0] {
            let k = regularized_kernel_laplace(&nu, p).unwrap();
            assert!((k[(0, 0)] - k[(1, 1)]).abs() < 1e-12);
            assert!((k[(0, 1)] + k[(1, 0)]).abs() < 1e-12);
        }
    }

    #[test]
    fn large_p_behaviour() {
        let nu = two_atoms();
        for p in [1e3, 1e4] {
            let k = regularized_kernel_laplace(&nu, p).unwrap() * p;
            assert!((k - Matrix2::identity()).norm() < 0.01, "{k}");
        }
    }

    #[test]
    fn talbot_textbook_pairs() {
        for t in [0.1, 1.0, 5.0] {
            let e = talbot_scalar(|s| 1.0 / (s + 2.0), t, DEFAULT_TALBOT_NODES).unwrap();
            assert!((e - (-2.0 * t).exp()).abs() < 1e-8);
            let r = talbot_scalar(|s| 1.0 / (s * s), t, DEFAULT_TALBOT_NODES).unwrap();
            assert!((r - t).abs() < 1e-8);
        }
        assert!(talbot_scalar(|s| 1.0 / s, 0.0, 32).is_err());
    }

    #[test]
    fn kernel_of_two_atoms_is_a_double_rotation() {
        let nu = two_atoms();
        let grid = TimeGrid::new(10.0, 0.05).unwrap();
        let k = tabulate_kernel(&nu, &grid, DEFAULT_TALBOT_NODES).unwrap();
        for (j, t) in k.times.iter().enumerate() {
            assert!((k.alpha[j] - (2.0 * t).cos()).abs() < 1e-6, "t={t} alpha={}", k.alpha[j]);
            assert!((k.beta[j] - (2.0 * t).sin()).abs() < 1e-6, "t={t} beta={}", k.beta[j]);
        }
    }

    #[test]
    fn point_mass_limit_is_the_rotation() {
        let nu = YoungMeasure::point_mass(1.5);
        let grid = TimeGrid::new(2.0, 1e-3).unwrap();
        let u = Vector2::new(1.0, 0.0);
        let sol = solve_oscillator_limit(&nu, u, &grid, DEFAULT_TALBOT_NODES).unwrap();
        assert!(sol.max_error_against_limit(&nu, u) < 1e-6);
    }

    #[test]
    fn laplace_identity_holds() {
        let nu = two_atoms();
        for p in [0.5, 1.0, 2.0] {
            assert!(laplace_identity_gap(&nu, Vector2::new(1.0, 0.0), p).unwrap() < 1e-12);
        }
    }

    #[test]
    fn windowed_average_approaches_limit() {
        let b = |y: f64| 2.0 + (2.0 * PI * y).sin();
        let cell = crate::cell_calculus::CellFunction::from_fn(crate::cell_calculus::PeriodicGrid::new(512).unwrap(), b).unwrap();
        let nu = YoungMeasure::from_cell(&cell);
        let u = Vector2::new(1.0, 0.0);
        let target = cell_averaged_limit(&nu, 2.0, u);
        let gap = |eps: f64| (windowed_eps_average(b, eps, 2.0, u, (0.2, 0.7), 64).unwrap() - target).norm();
        assert!(gap(0.01) < gap(0.1) || gap(0.01) < 1e-3);
        assert!(gap(0.01) < 2e-2);
    }
}
