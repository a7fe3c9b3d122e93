//! The relaxation ODE `∂_t u^ε + σ(x/ε) u^ε = f(t, x/ε)` and its
//! homogenized limit computed along three independent routes: the closed
//! two-scale form, the coupled `(u_hom, r)` system, and the Volterra equation
//! with the explicit memory kernel.

use std::sync::Arc;

use crate::cell_calculus::{apply_l_slice, cell_average, mean, CellFunction};
use crate::error::{domain, Error, Result};
use crate::memory_kernel::{KernelTable, SampledForcing, SourceTable};
use crate::volterra::{solve_volterra, TimeGrid, VolterraProblem};

/// Source term `f(t, y)`.
pub type Forcing = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Internal step count of the closed-form routes.
pub const CLOSED_STEPS: usize = 5000;
/// The ε-route keeps every `EPS_STRIDE`-th step.
pub const EPS_STRIDE: usize = 50;
/// Minimum x-nodes per oscillation period for weak-limit studies.
pub const NODES_PER_PERIOD: usize = 50;

#[derive(Clone)]
pub struct OdeProblem {
    pub sigma: CellFunction,
    pub forcing: Option<Forcing>,
    pub u_in: CellFunction,
    pub t_end: f64,
    pub epsilon: f64,
}

impl std::fmt::Debug for OdeProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OdeProblem")
            .field("n_cell", &self.sigma.len())
            .field("forced", &self.forcing.is_some())
            .field("t_end", &self.t_end)
            .field("epsilon", &self.epsilon)
            .finish()
    }
}

impl OdeProblem {
    pub fn new(sigma: CellFunction, u_in: CellFunction, t_end: f64) -> Result<Self> {
        let p = Self { sigma, forcing: None, u_in, t_end, epsilon: 0.1 };
        p.validate()?;
        Ok(p)
    }

    pub fn with_forcing(mut self, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.forcing = Some(Arc::new(f));
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma.grid() != self.u_in.grid() {
            return Err(Error::Dimension("σ and u_in live on different cell grids".into()));
        }
        if !(self.sigma.min() > 0.0) {
            return Err(Error::Precondition("σ must be bounded below by a positive constant".into()));
        }
        if !(self.t_end > 0.0) {
            return Err(domain("final time must be positive"));
        }
        Ok(())
    }

    fn f(&self, t: f64, y: f64) -> f64 {
        self.forcing.as_ref().map_or(0.0, |f| f(t, y))
    }

    fn forcing_frame(&self, t: f64) -> Vec<f64> {
        self.sigma.grid().nodes().into_iter().map(|y| self.f(t, y)).collect()
    }
}

/// Solution sampled at output times (rows) and x-nodes (columns).
#[derive(Clone, Debug)]
pub struct EpsSolution {
    pub times: Vec<f64>,
    pub x: Vec<f64>,
    pub values: Vec<f64>,
}

impl EpsSolution {
    pub fn row(&self, n: usize) -> &[f64] {
        &self.values[n * self.x.len()..(n + 1) * self.x.len()]
    }
}

/// Duhamel formula per x-node with trapezoid time integration on
/// `dt = T/5000`; coefficients are evaluated at `y = x/ε` by periodic linear
/// interpolation of the cell samples.
pub fn solve_eps_exact(problem: &OdeProblem, x_nodes: &[f64]) -> Result<EpsSolution> {
    problem.validate()?;
    let eps = problem.epsilon;
    if !(eps > 0.0) {
        return Err(domain(format!("ε must be positive, got {eps}")));
    }
    let dt = problem.t_end / CLOSED_STEPS as f64;
    let n_out = CLOSED_STEPS / EPS_STRIDE;
    let nx = x_nodes.len();
    let mut values = vec![0.0; (n_out + 1) * nx];
    for (ix, &x) in x_nodes.iter().enumerate() {
        let y = (x / eps).rem_euclid(1.0);
        let s = problem.sigma.interpolate(y);
        let u0 = problem.u_in.interpolate(y);
        let decay = (-s * dt).exp();
        let mut duhamel = 0.0;
        let mut f_prev = problem.f(0.0, y);
        values[ix] = u0;
        for n in 1..=CLOSED_STEPS {
            let t = n as f64 * dt;
            let f_next = problem.f(t, y);
            duhamel = decay * duhamel + 0.5 * dt * (decay * f_prev + f_next);
            f_prev = f_next;
            if n % EPS_STRIDE == 0 {
                values[(n / EPS_STRIDE) * nx + ix] = u0 * (-s * t).exp() + duhamel;
            }
        }
    }
    let times = (0..=n_out).map(|k| (k * EPS_STRIDE) as f64 * dt).collect();
    Ok(EpsSolution { times, x: x_nodes.to_vec(), values })
}

#[derive(Clone, Debug)]
pub struct TwoScaleSolution {
    pub times: Vec<f64>,
    /// `u0(t, y)` row-major in time.
    pub u0: Vec<f64>,
    pub u_hom: Vec<f64>,
}

/// `u0(t, y) = u_in(y) e^{-σ(y)t} + ∫_0^t e^{-σ(y)(t-s)} f(s, y) ds` on the
/// cell grid, with `u_hom = <u0>`.
pub fn solve_two_scale_closed(problem: &OdeProblem) -> Result<TwoScaleSolution> {
    problem.validate()?;
    let grid = TimeGrid::with_steps(problem.t_end, CLOSED_STEPS)?;
    let n = problem.sigma.len();
    let dt = grid.dt();
    let s = problem.sigma.values();
    let decay: Vec<f64> = s.iter().map(|s| (-s * dt).exp()).collect();
    let mut duhamel = vec![0.0; n];
    let mut f_prev = problem.forcing_frame(0.0);
    let mut u0 = Vec::with_capacity((grid.count() + 1) * n);
    let mut u_hom = Vec::with_capacity(grid.count() + 1);
    for k in 0..=grid.count() {
        let t = grid.time(k);
        if k > 0 {
            let f_next = problem.forcing_frame(t);
            for j in 0..n {
                duhamel[j] = decay[j] * duhamel[j] + 0.5 * dt * (decay[j] * f_prev[j] + f_next[j]);
            }
            f_prev = f_next;
        }
        let row: Vec<f64> = (0..n).map(|j| problem.u_in.values()[j] * (-s[j] * t).exp() + duhamel[j]).collect();
        u_hom.push(mean(&row));
        u0.extend(row);
    }
    Ok(TwoScaleSolution { times: grid.times(), u0, u_hom })
}

#[derive(Clone, Debug)]
pub struct CoupledSolution {
    pub times: Vec<f64>,
    pub u_hom: Vec<f64>,
    /// Final corrector `r(T, ·)`.
    pub r_final: Vec<f64>,
    /// `max_t |<r(t, ·)>|`.
    pub max_mean_r: f64,
}

/// RK4 on the joint state `(u_hom, r)`:
/// `u' = <f> - <σ>u - <σ r>`, `r' = -L_σ r - u L_1σ + L_1 f`.
pub fn solve_coupled_system(problem: &OdeProblem, grid: &TimeGrid) -> Result<CoupledSolution> {
    problem.validate()?;
    let n = problem.sigma.len();
    let s = problem.sigma.values().to_vec();
    let s_mean = cell_average(&problem.sigma);
    let l1s: Vec<f64> = s.iter().map(|v| v - s_mean).collect();
    let rhs = |t: f64, u: f64, r: &[f64], du: &mut f64, dr: &mut [f64]| {
        let f = problem.forcing_frame(t);
        let f_mean = mean(&f);
        let sr = s.iter().zip(r).map(|(a, b)| a * b).sum::<f64>() / n as f64;
        *du = f_mean - s_mean * u - sr;
        apply_l_slice(&s, r, dr);
        for j in 0..n {
            dr[j] = -dr[j] - u * l1s[j] + (f[j] - f_mean);
        }
    };
    let dt = grid.dt();
    let mut u = cell_average(&problem.u_in);
    let mut r = problem.u_in.fluctuation().into_values();
    let mut u_hom = vec![u];
    let mut max_mean_r = mean(&r).abs();
    let mut k = [(0.0, vec![0.0; n]), (0.0, vec![0.0; n]), (0.0, vec![0.0; n]), (0.0, vec![0.0; n])];
    let mut tmp = vec![0.0; n];
    for step in 0..grid.count() {
        let t = grid.time(step);
        let (du, dr) = (&mut k[0].0, &mut k[0].1);
        rhs(t, u, &r, du, dr);
        for stage in 1..4 {
            let c = if stage == 3 { 1.0 } else { 0.5 };
            let (prev, rest) = k.split_at_mut(stage);
            let (pu, pr) = (&prev[stage - 1].0, &prev[stage - 1].1);
            for j in 0..n {
                tmp[j] = r[j] + c * dt * pr[j];
            }
            let ut = u + c * dt * pu;
            rhs(t + c * dt, ut, &tmp, &mut rest[0].0, &mut rest[0].1);
        }
        u += dt / 6.0 * (k[0].0 + 2.0 * k[1].0 + 2.0 * k[2].0 + k[3].0);
        for j in 0..n {
            r[j] += dt / 6.0 * (k[0].1[j] + 2.0 * k[1].1[j] + 2.0 * k[2].1[j] + k[3].1[j]);
        }
        max_mean_r = max_mean_r.max(mean(&r).abs());
        u_hom.push(u);
    }
    Ok(CoupledSolution { times: grid.times(), u_hom, r_final: r, max_mean_r })
}

/// `u_hom` from the Volterra equation with `a = <σ>`, the tabulated memory
/// kernel and the homogenized source.
pub fn solve_homogenized_volterra(problem: &OdeProblem, grid: &TimeGrid) -> Result<Vec<f64>> {
    problem.validate()?;
    let kernel = KernelTable::for_grid(&problem.sigma, grid)?;
    let cell = problem.sigma.grid();
    let forcing = match &problem.forcing {
        Some(f) => SampledForcing::from_fn(grid, cell, |t, y| f(t, y))?,
        None => SampledForcing::zero(grid, cell),
    };
    let source = SourceTable::build(&problem.sigma, &forcing, &problem.u_in)?;
    let vp = VolterraProblem::scalar(
        cell_average(&problem.sigma),
        kernel.values,
        source.values,
        cell_average(&problem.u_in),
    );
    Ok(solve_volterra(&vp, grid)?.values)
}

/// Largest pairwise sup-norm gap between the three homogenized routes, on
/// the closed-form grid `T/5000` shared by all of them.
pub fn three_route_gap(problem: &OdeProblem) -> Result<f64> {
    let grid = TimeGrid::with_steps(problem.t_end, CLOSED_STEPS)?;
    let closed = solve_two_scale_closed(problem)?.u_hom;
    let coupled = solve_coupled_system(problem, &grid)?.u_hom;
    let volterra = solve_homogenized_volterra(problem, &grid)?;
    let gap = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    Ok(gap(&closed, &coupled).max(gap(&closed, &volterra)).max(gap(&coupled, &volterra)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TestFunction {
    Constant,
    Sine,
    Hat,
    Ramp,
}

impl TestFunction {
    pub const ALL: [TestFunction; 4] = [Self::Constant, Self::Sine, Self::Hat, Self::Ramp];

    pub fn eval(self, x: f64) -> f64 {
        match self {
            Self::Constant => 1.0,
            Self::Sine => (2.0 * std::f64::consts::PI * x).sin(),
            Self::Hat => (1.0 - (x - 0.5).abs() / 0.25).max(0.0),
            Self::Ramp => x,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Constant => "constant",
            Self::Sine => "sine",
            Self::Hat => "hat",
            Self::Ramp => "ramp",
        }
    }
}

#[derive(Clone, Debug)]
pub struct WeakError {
    pub epsilon: f64,
    pub test_fn: TestFunction,
    pub weak_error: f64,
}

/// `max_t |∫_0^1 φ(x)(u^ε(t,x) - u_hom(t)) dx|` on a midpoint x-grid with at
/// least [`NODES_PER_PERIOD`] nodes per period.
pub fn weak_error(problem: &OdeProblem, test_fn: TestFunction) -> Result<WeakError> {
    let eps = problem.epsilon;
    let nx = (NODES_PER_PERIOD as f64 / eps).ceil() as usize;
    let (x, w) = crate::quadrature::midpoint_mesh(0.0, 1.0, nx);
    let sol = solve_eps_exact(problem, &x)?;
    let closed = solve_two_scale_closed(problem)?;
    let phi: Vec<f64> = x.iter().map(|x| test_fn.eval(*x)).collect();
    let phi_int: f64 = phi.iter().zip(&w).map(|(p, w)| p * w).sum();
    let mut worst = 0.0f64;
    for (k, _) in sol.times.iter().enumerate() {
        let row = sol.row(k);
        let lhs: f64 = row.iter().zip(&phi).zip(&w).map(|((u, p), w)| u * p * w).sum();
        let hom = closed.u_hom[k * EPS_STRIDE];
        worst = worst.max((lhs - hom * phi_int).abs());
    }
    Ok(WeakError { epsilon: eps, test_fn, weak_error: worst })
}
