//! Linear Volterra integro-differential equations
//!
//! ```text
//! u'(t) + a u(t) - ∫_0^t K(t-s) u(s) ds = S(t),   u(0) = u0
//! ```
//!
//! for scalar or small vector unknowns, by the product trapezoidal rule: the
//! local term is treated implicitly, the convolution history explicitly.

use nalgebra::{DMatrix, DVector};

use crate::error::{domain, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    t_end: f64,
    dt: f64,
    count: usize,
}

impl TimeGrid {
    pub fn new(t_end: f64, dt: f64) -> Result<Self> {
        if !(t_end > 0.0) || !(dt > 0.0) {
            return Err(domain(format!("time grid needs t_end > 0 and dt > 0, got {t_end}, {dt}")));
        }
        let count = (t_end / dt).round() as usize;
        if count == 0 || (count as f64 * dt - t_end).abs() > 1e-12 * t_end.max(1.0) {
            return Err(domain(format!("dt = {dt} does not divide t_end = {t_end}")));
        }
        Ok(Self { t_end, dt, count })
    }

    pub fn with_steps(t_end: f64, count: usize) -> Result<Self> {
        if count == 0 || !(t_end > 0.0) {
            return Err(domain("time grid needs a positive step count and t_end"));
        }
        Ok(Self { t_end, dt: t_end / count as f64, count })
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of steps; the grid has `count + 1` nodes.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn time(&self, n: usize) -> f64 {
        if n == self.count {
            self.t_end
        } else {
            n as f64 * self.dt
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.count).map(|n| self.time(n)).collect()
    }
}

/// Problem data. Matrices are row-major `dim × dim`; `kernel` holds one matrix
/// per grid node starting at lag zero, `source` one vector per node.
#[derive(Clone, Debug)]
pub struct VolterraProblem {
    pub dim: usize,
    pub a: Vec<f64>,
    pub kernel: Vec<f64>,
    pub source: Vec<f64>,
    pub u0: Vec<f64>,
}

impl VolterraProblem {
    pub fn scalar(a: f64, kernel: Vec<f64>, source: Vec<f64>, u0: f64) -> Self {
        Self { dim: 1, a: vec![a], kernel, source, u0: vec![u0] }
    }

    pub fn new(dim: usize, a: Vec<f64>, kernel: Vec<f64>, source: Vec<f64>, u0: Vec<f64>) -> Self {
        Self { dim, a, kernel, source, u0 }
    }

    fn kernel_len(&self) -> usize {
        self.kernel.len() / (self.dim * self.dim)
    }

    fn check(&self, grid: &TimeGrid) -> Result<()> {
        let d = self.dim;
        let nodes = grid.count() + 1;
        if d == 0 {
            return Err(Error::Dimension("Volterra problem of dimension zero".into()));
        }
        if self.a.len() != d * d || self.u0.len() != d {
            return Err(Error::Dimension(format!("decay or initial value inconsistent with dimension {d}")));
        }
        if self.kernel.len() % (d * d) != 0 || self.kernel_len() < nodes {
            return Err(Error::Dimension(format!(
                "kernel table has {} entries, need {} lags of {d}×{d}",
                self.kernel.len(),
                nodes
            )));
        }
        if self.source.len() < nodes * d {
            return Err(Error::Dimension(format!("source has {} entries, need {}", self.source.len(), nodes * d)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VolterraSolution {
    pub dim: usize,
    pub times: Vec<f64>,
    /// Node-major values, `dim` entries per time node.
    pub values: Vec<f64>,
}

impl VolterraSolution {
    pub fn at(&self, n: usize) -> &[f64] {
        &self.values[n * self.dim..(n + 1) * self.dim]
    }

    pub fn component(&self, c: usize) -> Vec<f64> {
        self.values.iter().skip(c).step_by(self.dim).copied().collect()
    }
}

fn matvec_acc(m: &[f64], v: &[f64], scale: f64, out: &mut [f64]) {
    let d = v.len();
    for i in 0..d {
        let row = &m[i * d..(i + 1) * d];
        out[i] += scale * row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    }
}

enum Factor {
    Scalar(f64),
    Two([f64; 4]),
    Dense(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl Factor {
    fn new(m: &[f64], d: usize) -> Result<Self> {
        const TINY: f64 = 1e-14;
        let singular = |what: String| Error::Solver(format!("singular implicit factor: {what}"));
        match d {
            1 => {
                if m[0].abs() < TINY {
                    return Err(singular(format!("|{:e}| below {TINY:e}", m[0])));
                }
                Ok(Self::Scalar(m[0]))
            }
            2 => {
                let det = m[0] * m[3] - m[1] * m[2];
                if det.abs() < TINY {
                    return Err(singular(format!("determinant {det:e}")));
                }
                Ok(Self::Two([m[3] / det, -m[1] / det, -m[2] / det, m[0] / det]))
            }
            _ => {
                let lu = DMatrix::from_row_slice(d, d, m).lu();
                let pivot = lu.u().diagonal().iter().map(|x| x.abs()).fold(f64::INFINITY, f64::min);
                if pivot < TINY {
                    return Err(singular(format!("pivot {pivot:e}")));
                }
                Ok(Self::Dense(lu))
            }
        }
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        match self {
            Self::Scalar(m) => vec![rhs[0] / m],
            Self::Two(inv) => vec![inv[0] * rhs[0] + inv[1] * rhs[1], inv[2] * rhs[0] + inv[3] * rhs[1]],
            Self::Dense(lu) => lu
                .solve(&DVector::from_column_slice(rhs))
                .expect("factor checked nonsingular")
                .as_slice()
                .to_vec(),
        }
    }
}

pub fn solve_volterra(problem: &VolterraProblem, grid: &TimeGrid) -> Result<VolterraSolution> {
    problem.check(grid)?;
    let d = problem.dim;
    let dd = d * d;
    let dt = grid.dt();
    let n_steps = grid.count();
    let k = |lag: usize| &problem.kernel[lag * dd..(lag + 1) * dd];
    let s = |n: usize| &problem.source[n * d..(n + 1) * d];

    let mut factor = vec![0.0; dd];
    for i in 0..d {
        for j in 0..d {
            let id = if i == j { 1.0 } else { 0.0 };
            factor[i * d + j] = id + 0.5 * dt * problem.a[i * d + j] - 0.25 * dt * dt * k(0)[i * d + j];
        }
    }
    let factor = Factor::new(&factor, d)?;

    let mut u = Vec::with_capacity((n_steps + 1) * d);
    u.extend_from_slice(&problem.u0);
    // F_n = -a u_n + I_n + S_n with I_0 = 0.
    let mut f_prev = s(0).to_vec();
    matvec_acc(&problem.a, &problem.u0, -1.0, &mut f_prev);

    let mut hist = vec![0.0; d];
    let mut rhs = vec![0.0; d];
    for n in 0..n_steps {
        // History part of I_{n+1}: ½K_{n+1}u_0 + Σ_{k=1}^{n} K_{n+1-k} u_k.
        hist.iter_mut().for_each(|h| *h = 0.0);
        matvec_acc(k(n + 1), &u[0..d], 0.5, &mut hist);
        for j in 1..=n {
            matvec_acc(k(n + 1 - j), &u[j * d..(j + 1) * d], 1.0, &mut hist);
        }
        let un = &u[n * d..(n + 1) * d];
        for i in 0..d {
            rhs[i] = un[i] + 0.5 * dt * f_prev[i] + 0.5 * dt * (dt * hist[i] + s(n + 1)[i]);
        }
        let next = factor.solve(&rhs);
        // F_{n+1} with the full trapezoid convolution.
        let mut f_next = s(n + 1).to_vec();
        matvec_acc(&problem.a, &next, -1.0, &mut f_next);
        for i in 0..d {
            f_next[i] += dt * hist[i];
        }
        matvec_acc(k(0), &next, 0.5 * dt, &mut f_next);
        f_prev = f_next;
        u.extend_from_slice(&next);
    }
    Ok(VolterraSolution { dim: d, times: grid.times(), values: u })
}

/// Max-norm residual of the equation evaluated on `solution` with centred
/// differences and the trapezoid convolution, over interior nodes.
pub fn volterra_residual(problem: &VolterraProblem, solution: &VolterraSolution, grid: &TimeGrid) -> f64 {
    let d = problem.dim;
    let dd = d * d;
    let dt = grid.dt();
    let u = |n: usize| &solution.values[n * d..(n + 1) * d];
    let k = |lag: usize| &problem.kernel[lag * dd..(lag + 1) * dd];
    let mut worst = 0.0f64;
    for n in 1..grid.count() {
        let mut r = vec![0.0; d];
        for i in 0..d {
            r[i] = (u(n + 1)[i] - u(n - 1)[i]) / (2.0 * dt) - problem.source[n * d + i];
        }
        matvec_acc(&problem.a, u(n), 1.0, &mut r);
        for j in 0..=n {
            let w = if j == 0 || j == n { 0.5 } else { 1.0 };
            matvec_acc(k(n - j), u(j), -w * dt, &mut r);
        }
        worst = r.iter().fold(worst, |m, x| m.max(x.abs()));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_valued_problem(grid: &TimeGrid) -> VolterraProblem {
        let n = grid.count() + 1;
        let kernel = (0..n).map(|j| (-2.0 * grid.time(j)).exp()).collect();
        VolterraProblem::scalar(2.0, kernel, vec![0.0; n], 1.0)
    }

    fn exact_two_valued(t: f64) -> f64 {
        0.5 * ((-t).exp() + (-3.0 * t).exp())
    }

    fn max_err(sol: &VolterraSolution, f: impl Fn(f64) -> f64) -> f64 {
        sol.times.iter().zip(&sol.values).map(|(t, u)| (u - f(*t)).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn time_grid_checks() {
        let g = TimeGrid::new(10.0, 1e-3).unwrap();
        assert_eq!(g.count(), 10000);
        assert_eq!(g.time(10000), 10.0);
        assert!(TimeGrid::new(1.0, 0.3).is_err());
        assert!(TimeGrid::new(1.0, 0.0).is_err());
        assert!(TimeGrid::new(-1.0, 0.1).is_err());
    }

    #[test]
    fn pure_decay() {
        let g = TimeGrid::new(5.0, 1e-3).unwrap();
        let n = g.count() + 1;
        let p = VolterraProblem::scalar(2.0, vec![0.0; n], vec![0.0; n], 1.0);
        let sol = solve_volterra(&p, &g).unwrap();
        assert!(max_err(&sol, |t| (-2.0 * t).exp()) < 1e-5);
    }

    #[test]
    fn two_valued_memory() {
        let g = TimeGrid::new(10.0, 1e-3).unwrap();
        let p = two_valued_problem(&g);
        let sol = solve_volterra(&p, &g).unwrap();
        assert!(max_err(&sol, exact_two_valued) < 1e-5);
        assert!(volterra_residual(&p, &sol, &g) < 1e-4);
    }

    #[test]
    fn rotation_without_kernel() {
        // u' + A u = 0 with A = [[0,1],[-1,0]] gives w' = -v, v' = w.
        let g = TimeGrid::new(10.0, 1e-3).unwrap();
        let n = g.count() + 1;
        let p = VolterraProblem::new(2, vec![0.0, 1.0, -1.0, 0.0], vec![0.0; 4 * n], vec![0.0; 2 * n], vec![1.0, 0.0]);
        let sol = solve_volterra(&p, &g).unwrap();
        let err = (0..n)
            .map(|j| {
                let t = g.time(j);
                let u = sol.at(j);
                (u[0] - t.cos()).abs().max((u[1] - t.sin()).abs())
            })
            .fold(0.0, f64::max);
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn second_order() {
        let errs: Vec<f64> = [0.02, 0.01, 0.005]
            .iter()
            .map(|dt| {
                let g = TimeGrid::new(5.0, *dt).unwrap();
                max_err(&solve_volterra(&two_valued_problem(&g), &g).unwrap(), exact_two_valued)
            })
            .collect();
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn residual_of_exact_solution_is_small() {
        let g = TimeGrid::new(4.0, 1e-2).unwrap();
        let p = two_valued_problem(&g);
        let exact = VolterraSolution { dim: 1, times: g.times(), values: g.times().into_iter().map(exact_two_valued).collect() };
        assert!(volterra_residual(&p, &exact, &g) < 1e-3);
    }

    #[test]
    fn zero_problem_has_zero_residual() {
        let g = TimeGrid::new(1.0, 0.1).unwrap();
        let n = g.count() + 1;
        let p = VolterraProblem::scalar(1.0, vec![0.3; n], vec![0.0; n], 0.0);
        let sol = solve_volterra(&p, &g).unwrap();
        assert!(sol.values.iter().all(|v| *v == 0.0));
        assert_eq!(volterra_residual(&p, &sol, &g), 0.0);
    }

    #[test]
    fn padding_kernel_changes_nothing() {
        let g = TimeGrid::new(2.0, 0.01).unwrap();
        let p = two_valued_problem(&g);
        let mut padded = p.clone();
        padded.kernel.extend(std::iter::repeat_n(0.0, 50));
        padded.source.extend(std::iter::repeat_n(0.0, 50));
        assert_eq!(solve_volterra(&p, &g).unwrap(), solve_volterra(&padded, &g).unwrap());
    }

    #[test]
    fn singular_factor_is_reported() {
        let g = TimeGrid::new(1.0, 0.5).unwrap();
        // 1 + dt a/2 = 0 for a = -4 and dt = 1/2.
        let p = VolterraProblem::scalar(-4.0, vec![0.0; 3], vec![0.0; 3], 1.0);
        assert!(matches!(solve_volterra(&p, &g), Err(Error::Solver(_))));
    }

    #[test]
    fn dimension_errors() {
        let g = TimeGrid::new(1.0, 0.1).unwrap();
        let p = VolterraProblem::scalar(1.0, vec![0.0; 5], vec![0.0; 11], 1.0);
        assert!(matches!(solve_volterra(&p, &g), Err(Error::Dimension(_))));
    }

    #[test]
    fn dense_path_matches_two_by_two_path() {
        // A block-diagonal 3×3 system: the rotation block plus a decoupled scalar.
        let g = TimeGrid::new(2.0, 0.01).unwrap();
        let n = g.count() + 1;
        let a = vec![0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 2.0];
        let mut kernel = vec![0.0; 9 * n];
        for j in 0..n {
            kernel[9 * j + 8] = (-2.0 * g.time(j)).exp();
        }
        let p3 = VolterraProblem::new(3, a, kernel, vec![0.0; 3 * n], vec![1.0, 0.0, 1.0]);
        let s3 = solve_volterra(&p3, &g).unwrap();
        let p2 = VolterraProblem::new(2, vec![0.0, 1.0, -1.0, 0.0], vec![0.0; 4 * n], vec![0.0; 2 * n], vec![1.0, 0.0]);
        let s2 = solve_volterra(&p2, &g).unwrap();
        let s1 = solve_volterra(&two_valued_problem(&g), &g).unwrap();
        for j in 0..n {
            assert!((s3.at(j)[0] - s2.at(j)[0]).abs() < 1e-14);
            assert!((s3.at(j)[1] - s2.at(j)[1]).abs() < 1e-14);
            assert!((s3.at(j)[2] - s1.at(j)[0]).abs() < 1e-14);
        }
    }
}
