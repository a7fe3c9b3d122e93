//! Energy-only Boltzmann toy models
//!
//! ```text
//! inside:  ∂_t φ + σ(E/ε) φ = ∫ κ(E'/ε) φ(t,E') dE'
//! outside: ∂_t φ + σ(E/ε) φ = κ(E/ε) ∫ φ(t,E') dE'
//! ```
//!
//! on `(E_min, E_max) = (0, 1)`, their two-scale limits, and the ε-sweeps
//! that measure weak convergence through Legendre modes.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::diagnostics::{legendre_modes, mode_error, norm_difference, ConvergenceReport, EnergyField, ModeSeries, TwoScaleField};
use crate::error::{domain, Error, Result};
use crate::quadrature::{composite_gauss, midpoint_mesh};
use crate::volterra::TimeGrid;

/// A 1-periodic profile on the cell, evaluated at arbitrary `y`.
pub type CellProfile = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

pub const DEFAULT_POINTS_PER_PERIOD: usize = 100;
pub const DEFAULT_NODE_BUDGET: usize = 2_000_000;
pub const DEFAULT_TIME_STEPS: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Placement {
    Inside,
    Outside,
}

impl Placement {
    pub fn name(self) -> &'static str {
        match self {
            Self::Inside => "inside",
            Self::Outside => "outside",
        }
    }
}

impl std::str::FromStr for Placement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inside" => Ok(Self::Inside),
            "outside" => Ok(Self::Outside),
            other => Err(Error::Config(format!("placement must be inside or outside, got {other:?}"))),
        }
    }
}

/// How the initial profile enters the ε-problem: `φ^ε(0,E) = φ_in(E)` or
/// `φ^ε(0,E) = φ_in(E/ε)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum InitialPhase {
    #[default]
    Energy,
    Fast,
}

/// Uniform cell-centred energy mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyGrid {
    pub e_min: f64,
    pub e_max: f64,
    pub h: f64,
    pub nodes: Vec<f64>,
}

impl EnergyGrid {
    pub fn uniform(e_min: f64, e_max: f64, n: usize) -> Result<Self> {
        if n == 0 || !(e_max > e_min) {
            return Err(domain(format!("energy mesh needs n>0 and e_max>e_min, got n={n} on ({e_min},{e_max})")));
        }
        let (nodes, w) = midpoint_mesh(e_min, e_max, n);
        Ok(Self { e_min, e_max, h: w[0], nodes })
    }

    /// `points_per_period` cells per oscillation period ε.
    pub fn resolving(e_min: f64, e_max: f64, epsilon: f64, points_per_period: usize) -> Result<Self> {
        let n = ((e_max - e_min) * points_per_period as f64 / epsilon).round().max(1.0) as usize;
        Self::uniform(e_min, e_max, n)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

#[derive(Clone)]
pub struct ToyProblem {
    pub name: String,
    pub sigma: CellProfile,
    pub kappa: CellProfile,
    pub phi_in: CellProfile,
    pub placement: Placement,
    pub phase: InitialPhase,
    pub t_end: f64,
    pub epsilon: f64,
    pub e_min: f64,
    pub e_max: f64,
    pub points_per_period: usize,
    pub time_steps: usize,
    pub node_budget: usize,
}

impl std::fmt::Debug for ToyProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToyProblem")
            .field("name", &self.name)
            .field("placement", &self.placement)
            .field("phase", &self.phase)
            .field("t_end", &self.t_end)
            .field("epsilon", &self.epsilon)
            .finish_non_exhaustive()
    }
}

fn profile(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> CellProfile {
    Arc::new(f)
}

/// `1` on the first half of the cell, `0` on the second.
pub fn first_half(y: f64) -> f64 {
    if y.rem_euclid(1.0) <= 0.5 {
        1.0
    } else {
        0.0
    }
}

impl ToyProblem {
    pub fn new(
        sigma: impl Fn(f64) -> f64 + Send + Sync + 'static,
        kappa: impl Fn(f64) -> f64 + Send + Sync + 'static,
        phi_in: impl Fn(f64) -> f64 + Send + Sync + 'static,
        placement: Placement,
    ) -> Self {
        Self {
            name: "custom".into(),
            sigma: profile(sigma),
            kappa: profile(kappa),
            phi_in: profile(phi_in),
            placement,
            phase: InitialPhase::Energy,
            t_end: 10.0,
            epsilon: 0.1,
            e_min: 0.0,
            e_max: 1.0,
            points_per_period: DEFAULT_POINTS_PER_PERIOD,
            time_steps: DEFAULT_TIME_STEPS,
            node_budget: DEFAULT_NODE_BUDGET,
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_phase(mut self, phase: InitialPhase) -> Self {
        self.phase = phase;
        self
    }

    pub fn with_t_end(mut self, t_end: f64) -> Self {
        self.t_end = t_end;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(domain(format!("epsilon must lie in (0,1], got {}", self.epsilon)));
        }
        if !(self.t_end > 0.0) || self.time_steps == 0 || self.points_per_period == 0 {
            return Err(domain("t_end, time_steps and points_per_period must be positive"));
        }
        for j in 0..1024 {
            let y = (j as f64 + 0.5) / 1024.0;
            let (s, k) = ((self.sigma)(y), (self.kappa)(y));
            if !(s > 0.0) || !(k >= 0.0) || !(self.phi_in)(y).is_finite() {
                return Err(domain(format!("need σ>0, κ≥0 and finite φ_in; at y={y}: σ={s}, κ={k}")));
            }
        }
        Ok(())
    }

    fn initial(&self, e: f64) -> f64 {
        match self.phase {
            InitialPhase::Energy => (self.phi_in)(e),
            InitialPhase::Fast => (self.phi_in)(e / self.epsilon),
        }
    }
}

/// The three coefficient triples of the numerical study.
pub fn example_presets(id: u32, placement: Placement) -> Result<ToyProblem> {
    let sine = |y: f64| (2.0 * PI * y).sin();
    let mut p = match id {
        1 => ToyProblem::new(move |y| 2.0 + 0.5 * sine(y), move |y| 1.0 + 0.5 * sine(y), move |y| 1.0 + sine(y), placement),
        2 => ToyProblem::new(move |y| 2.0 + 0.5 * sine(y), move |y| 1.0 + 0.5 * sine(y), |y| 1.0 + first_half(y), placement),
        3 => ToyProblem::new(|y| 2.0 + 0.5 * first_half(y), |y| 1.0 + 0.5 * first_half(y), move |y| 1.0 + sine(y), placement),
        other => return Err(Error::Config(format!("unknown example preset {other}, expected 1, 2 or 3"))),
    };
    p.name = format!("example-{id}-{}", placement.name());
    Ok(p)
}

/// `∂_t φ = −d∘φ + a (b·φ)`, the common shape of every model in this module.
#[derive(Clone, Debug)]
pub struct RankOneKinetic {
    pub decay: Vec<f64>,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

impl RankOneKinetic {
    fn rhs(&self, phi: &[f64], out: &mut [f64]) {
        let s: f64 = self.right.iter().zip(phi).map(|(b, p)| b * p).sum();
        for (((o, d), a), p) in out.iter_mut().zip(&self.decay).zip(&self.left).zip(phi) {
            *o = a * s - d * p;
        }
    }

    /// Classical RK4 with `steps` steps of size `dt`; returns the states at
    /// every `stride`-th step, including the initial and final ones.
    pub fn integrate(&self, phi0: &[f64], dt: f64, steps: usize, stride: usize) -> Result<Vec<Vec<f64>>> {
        let m = phi0.len();
        if self.decay.len() != m || self.left.len() != m || self.right.len() != m {
            return Err(Error::Dimension(format!("rank-one model of size {} vs state of size {m}", self.decay.len())));
        }
        let stride = stride.max(1);
        let mut out = vec![phi0.to_vec()];
        let mut phi = phi0.to_vec();
        let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
        for step in 1..=steps {
            self.rhs(&phi, &mut k1);
            stage(&phi, &k1, 0.5 * dt, &mut tmp);
            self.rhs(&tmp, &mut k2);
            stage(&phi, &k2, 0.5 * dt, &mut tmp);
            self.rhs(&tmp, &mut k3);
            stage(&phi, &k3, dt, &mut tmp);
            self.rhs(&tmp, &mut k4);
            for i in 0..m {
                phi[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            if step % stride == 0 || step == steps {
                if phi.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Solver(format!("RK4 state blew up at step {step}")));
                }
                out.push(phi.clone());
            }
        }
        Ok(out)
    }
}

fn stage(phi: &[f64], k: &[f64], h: f64, out: &mut [f64]) {
    for ((o, p), k) in out.iter_mut().zip(phi).zip(k) {
        *o = p + h * k;
    }
}

/// The ε-problem by RK4 with `dt = T/time_steps` on the mesh
/// `h = ε/points_per_period`; the E'-integral uses the midpoint rule.
pub fn solve_toy_eps(problem: &ToyProblem) -> Result<EnergyField> {
    problem.validate()?;
    let eps = problem.epsilon;
    let n = ((problem.e_max - problem.e_min) * problem.points_per_period as f64 / eps).round() as usize;
    if n > problem.node_budget {
        return Err(Error::Budget { requested: n, budget: problem.node_budget });
    }
    let grid = EnergyGrid::uniform(problem.e_min, problem.e_max, n)?;
    let fast: Vec<f64> = grid.nodes.iter().map(|e| e / eps).collect();
    let decay: Vec<f64> = fast.iter().map(|y| (problem.sigma)(*y)).collect();
    let kappa: Vec<f64> = fast.iter().map(|y| (problem.kappa)(*y)).collect();
    let (left, right) = match problem.placement {
        Placement::Inside => (vec![1.0; n], kappa.iter().map(|k| k * grid.h).collect()),
        Placement::Outside => (kappa, vec![grid.h; n]),
    };
    let phi0: Vec<f64> = grid.nodes.iter().map(|e| problem.initial(*e)).collect();
    let steps = problem.time_steps;
    let dt = problem.t_end / steps as f64;
    let states = RankOneKinetic { decay, left, right }.integrate(&phi0, dt, steps, 1)?;
    let times = (0..=steps).map(|k| k as f64 * dt).collect();
    EnergyField::new(times, grid.nodes, vec![grid.h; n], states.concat())
}

/// Grid of the two-scale solver: composite Gauss in E (panel boundaries at
/// multiples of `1/panels`, so a jump at E = ½ is resolved) times a midpoint
/// cell grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TwoScaleResolution {
    pub panels: usize,
    pub per_panel: usize,
    pub n_cell: usize,
}

impl Default for TwoScaleResolution {
    fn default() -> Self {
        Self { panels: 8, per_panel: 8, n_cell: 256 }
    }
}

impl TwoScaleResolution {
    pub fn refined(self) -> Self {
        Self { panels: 2 * self.panels, per_panel: self.per_panel, n_cell: 2 * self.n_cell }
    }
}

/// RK4 on the two-scale limit
///
/// ```text
/// inside:  ∂_t φ⁰ + σ(y) φ⁰ = ∫∫ κ(y') φ⁰(t,E',y') dE' dy'
/// outside: ∂_t φ⁰ + σ(y) φ⁰ = κ(y) ∫∫ φ⁰(t,E',y') dE' dy'
/// ```
///
/// `φ_hom` is the y-average of the result.
pub fn solve_toy_two_scale(problem: &ToyProblem, grid: &TimeGrid, res: TwoScaleResolution) -> Result<TwoScaleField> {
    problem.validate()?;
    if res.n_cell == 0 || res.n_cell % 2 == 1 || res.panels == 0 || res.per_panel == 0 {
        return Err(Error::Config(format!("two-scale resolution {res:?} needs an even cell count and nonempty panels")));
    }
    let (e_nodes, e_weights) = composite_gauss(problem.e_min, problem.e_max, res.panels, res.per_panel);
    let ny = res.n_cell;
    let y: Vec<f64> = (0..ny).map(|j| (j as f64 + 0.5) / ny as f64).collect();
    let sig: Vec<f64> = y.iter().map(|y| (problem.sigma)(*y)).collect();
    let kap: Vec<f64> = y.iter().map(|y| (problem.kappa)(*y)).collect();
    let m = e_nodes.len() * ny;
    let mut decay = Vec::with_capacity(m);
    let mut left = Vec::with_capacity(m);
    let mut right = Vec::with_capacity(m);
    let mut phi0 = Vec::with_capacity(m);
    for (e, w) in e_nodes.iter().zip(&e_weights) {
        for j in 0..ny {
            decay.push(sig[j]);
            let wy = w / ny as f64;
            match problem.placement {
                Placement::Inside => {
                    left.push(1.0);
                    right.push(kap[j] * wy);
                }
                Placement::Outside => {
                    left.push(kap[j]);
                    right.push(wy);
                }
            }
            phi0.push(match problem.phase {
                InitialPhase::Energy => (problem.phi_in)(*e),
                InitialPhase::Fast => (problem.phi_in)(y[j]),
            });
        }
    }
    let steps = grid.count();
    let states = RankOneKinetic { decay, left, right }.integrate(&phi0, grid.dt(), steps, 1)?;
    TwoScaleField::new(grid.times(), e_nodes, e_weights, ny, states.concat())
}

/// Homogenized reference shared by all points of an ε-sweep.
#[derive(Clone, Debug)]
pub struct ToyReference {
    pub modes: Vec<ModeSeries>,
    pub norm: f64,
    pub field: TwoScaleField,
}

impl ToyReference {
    /// Solves the two-scale limit with the same time step as the ε-problem.
    pub fn build(problem: &ToyProblem, mode_count: usize, res: TwoScaleResolution) -> Result<Self> {
        let grid = TimeGrid::with_steps(problem.t_end, problem.time_steps)?;
        let field = solve_toy_two_scale(problem, &grid, res)?;
        let modes = legendre_modes(&field.y_average(), mode_count, problem.e_min, problem.e_max)?;
        let norm = field.space_time_norm();
        Ok(Self { modes, norm, field })
    }
}

/// Result of one ε of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub epsilon: f64,
    pub mode_errors: Vec<f64>,
    pub norm_diff: f64,
    /// `max_t ‖φ^ε(t)‖_{L²(E)}`.
    pub sup_norm: f64,
}

pub fn sweep_point(problem: &ToyProblem, epsilon: f64, reference: &ToyReference) -> Result<SweepPoint> {
    let p = problem.clone().with_epsilon(epsilon);
    let field = solve_toy_eps(&p)?;
    let modes = legendre_modes(&field, reference.modes.len(), p.e_min, p.e_max)?;
    let mode_errors = modes.iter().zip(&reference.modes).map(|(a, b)| mode_error(a, b)).collect::<Result<_>>()?;
    Ok(SweepPoint {
        epsilon,
        mode_errors,
        norm_diff: norm_difference(&field, &reference.field),
        sup_norm: field.max_energy_norm(),
    })
}

/// Sequential sweep; the harness runs the points concurrently.
pub fn sweep(problem: &ToyProblem, epsilons: &[f64], mode_count: usize) -> Result<ConvergenceReport> {
    let reference = ToyReference::build(problem, mode_count, TwoScaleResolution::default())?;
    let points = epsilons.iter().map(|e| sweep_point(problem, *e, &reference)).collect::<Result<Vec<_>>>()?;
    ConvergenceReport::assemble(points.into_iter().map(|p| (p.epsilon, p.mode_errors, p.norm_diff)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constants(placement: Placement) -> ToyProblem {
        ToyProblem::new(|_| 2.0, |_| 1.0, |_| 1.0, placement).with_t_end(2.0)
    }

    #[test]
    fn constant_coefficients_decay_at_net_rate() {
        for placement in [Placement::Inside, Placement::Outside] {
            let f = solve_toy_eps(&constants(placement).with_epsilon(0.5)).unwrap();
            for (n, t) in f.times.iter().enumerate() {
                for v in f.row(n) {
                    assert!((v - (-t).exp()).abs() < 1e-6, "{placement:?} t={t}");
                }
            }
        }
    }

    #[test]
    fn no_scattering_is_pure_decay() {
        let sine = |y: f64| (2.0 * PI * y).sin();
        let p = ToyProblem::new(move |y| 2.0 + 0.5 * sine(y), |_| 0.0, move |y| 1.0 + sine(y), Placement::Inside)
            .with_epsilon(0.25)
            .with_phase(InitialPhase::Fast)
            .with_t_end(1.0);
        let f = solve_toy_eps(&p).unwrap();
        let last = f.times.len() - 1;
        for (e, v) in f.nodes.iter().zip(f.row(last)) {
            let y = e / 0.25;
            let exact = (1.0 + sine(y)) * (-(2.0 + 0.5 * sine(y))).exp();
            assert!((v - exact).abs() < 1e-7);
        }
    }

    #[test]
    fn two_scale_constants() {
        let grid = TimeGrid::with_steps(2.0, 200).unwrap();
        let res = TwoScaleResolution { panels: 2, per_panel: 4, n_cell: 8 };
        let f = solve_toy_two_scale(&constants(Placement::Outside), &grid, res).unwrap().y_average();
        for (n, t) in f.times.iter().enumerate() {
            assert!(f.row(n).iter().all(|v| (v - (-t).exp()).abs() < 1e-10));
        }
    }

    #[test]
    fn two_scale_two_valued_decay() {
        let p = ToyProblem::new(|y| if y.rem_euclid(1.0) < 0.5 { 1.0 } else { 3.0 }, |_| 0.0, |_| 1.0, Placement::Inside).with_t_end(3.0);
        let grid = TimeGrid::with_steps(3.0, 600).unwrap();
        let f = solve_toy_two_scale(&p, &grid, TwoScaleResolution { panels: 1, per_panel: 2, n_cell: 16 }).unwrap().y_average();
        for (n, t) in f.times.iter().enumerate() {
            let exact = 0.5 * ((-t).exp() + (-3.0 * t).exp());
            assert!((f.row(n)[0] - exact).abs() < 1e-9);
        }
    }

    #[test]
    fn example_one_initial_mean() {
        let p = example_presets(1, Placement::Inside).unwrap();
        let grid = TimeGrid::with_steps(10.0, 50).unwrap();
        let hom = solve_toy_two_scale(&p, &grid, TwoScaleResolution::default()).unwrap().y_average();
        let mean: f64 = hom.row(0).iter().zip(&hom.weights).map(|(v, w)| v * w).sum();
        assert!((mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn presets() {
        let p2 = example_presets(2, Placement::Inside).unwrap();
        assert_eq!((p2.phi_in)(0.25), 2.0);
        assert_eq!((p2.phi_in)(0.75), 1.0);
        let p3 = example_presets(3, Placement::Outside).unwrap();
        assert_eq!((p3.sigma)(0.1), 2.5);
        assert_eq!((p3.kappa)(0.9), 1.0);
        assert!(example_presets(4, Placement::Inside).is_err());
    }

    #[test]
    fn epsilon_range_and_budget() {
        let p = example_presets(1, Placement::Inside).unwrap();
        assert!(matches!(solve_toy_eps(&p.clone().with_epsilon(0.0)), Err(Error::Domain(_))));
        assert!(matches!(solve_toy_eps(&p.clone().with_epsilon(1.5)), Err(Error::Domain(_))));
        let mut tight = p.with_epsilon(0.01);
        tight.node_budget = 1000;
        assert!(matches!(solve_toy_eps(&tight), Err(Error::Budget { requested: 10000, budget: 1000 })));
    }

    #[test]
    fn mesh_follows_epsilon() {
        let g = EnergyGrid::resolving(0.0, 1.0, 0.1, 100).unwrap();
        assert_eq!(g.len(), 1000);
        assert!((g.h - 1e-3).abs() < 1e-15);
    }
}
