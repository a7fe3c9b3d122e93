//! Linear Boltzmann transport in two space dimensions with cross sections
//! oscillating in energy:
//!
//! ```text
//! σ^ε(ω,E)       = √E σ(ω, E, E/ε)
//! κ^ε(ω·ω',E,E') = √E κ₁(ω·ω', E) κ₂(ω·ω', E', E'/ε)
//! ```
//!
//! Along characteristics `r = x − √E ω t` the flux `ψ^ε(t,r,ω,E)` solves a
//! Volterra fixed point in which `r` is a parameter, so each `r` is an
//! independent problem on the velocity grid (angles × energies). Angles are
//! `N_ω` uniform points on the circle; `μ = ω·ω'` only takes the values
//! `cos(2πΔ/N_ω)`, and the kernels are tabulated per angle difference `Δ`.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cell_calculus::{CellFunction, PeriodicGrid, Propagator};
use crate::energy_boltzmann::RankOneKinetic;
use crate::error::{domain, Error, Result};
use crate::quadrature::{composite_gauss, midpoint_mesh};
use crate::volterra::{solve_volterra, TimeGrid, VolterraProblem};

/// `σ(θ, E, y)`.
pub type CrossSection = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
/// `κ₁(μ, E)`.
pub type OutgoingKernel = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
/// `κ₂(μ, E', y')`.
pub type IncomingKernel = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
/// `φ_in(r₁, θ, E, y)` on the line `r = (r₁, 0)`.
pub type InitialFlux = Arc<dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct OpticalParameters {
    pub name: String,
    pub sigma: CrossSection,
    pub kappa1: OutgoingKernel,
    pub kappa2: IncomingKernel,
    /// Margin the preset is designed to satisfy, if any.
    pub alpha_target: Option<f64>,
}

impl std::fmt::Debug for OpticalParameters {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OpticalParameters").field("name", &self.name).field("alpha_target", &self.alpha_target).finish_non_exhaustive()
    }
}

impl OpticalParameters {
    pub fn new(
        sigma: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        kappa1: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        kappa2: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { name: "custom".into(), sigma: Arc::new(sigma), kappa1: Arc::new(kappa1), kappa2: Arc::new(kappa2), alpha_target: None }
    }

    /// The same kernels with `σ` multiplied by `factor`.
    pub fn scaled_sigma(&self, factor: f64) -> Self {
        let s = self.sigma.clone();
        Self { sigma: Arc::new(move |th, e, y| factor * s(th, e, y)), ..self.clone() }
    }
}

/// `transport-subcritical-1`: `σ = 2 + ½ sin 2πy`, `κ₁ = (1 + μ/2)/2π`,
/// `κ₂ = 0.4 (1 + ½ sin 2πy')/(E_max − E_min)`.
pub fn subcritical_preset(grid: &TransportGrid) -> OpticalParameters {
    let width = grid.e_max - grid.e_min;
    let mut p = OpticalParameters::new(
        |_, _, y| 2.0 + 0.5 * (2.0 * PI * y).sin(),
        |mu, _| (1.0 + 0.5 * mu) / (2.0 * PI),
        move |_, _, y| 0.4 * (1.0 + 0.5 * (2.0 * PI * y).sin()) / width,
    );
    p.name = "transport-subcritical-1".into();
    p.alpha_target = Some(0.0);
    p
}

/// `transport-kappa0`: the subcritical cross section without scattering.
pub fn kappa0_preset() -> OpticalParameters {
    let mut p = OpticalParameters::new(|_, _, y| 2.0 + 0.5 * (2.0 * PI * y).sin(), |_, _| 0.0, |_, _, _| 0.0);
    p.name = "transport-kappa0".into();
    p
}

pub fn preset(name: &str, grid: &TransportGrid) -> Result<OpticalParameters> {
    match name {
        "transport-subcritical-1" | "subcritical" | "1" => Ok(subcritical_preset(grid)),
        "transport-kappa0" | "kappa0" => Ok(kappa0_preset()),
        other => Err(Error::Config(format!("unknown transport preset {other:?}"))),
    }
}

/// `cos²(π|r|)` on `|r| ≤ ½`, times `(1 + ½cos θ)(1 + ½ sin 2πy)`.
pub fn default_initial_flux() -> InitialFlux {
    Arc::new(|r, th, _, y| bump(r) * (1.0 + 0.5 * th.cos()) * (1.0 + 0.5 * (2.0 * PI * y).sin()))
}

/// Smooth compactly supported profile in `r`, zero outside `|r| ≤ ½`.
pub fn bump(r: f64) -> f64 {
    if r.abs() <= 0.5 {
        (PI * r).cos().powi(2)
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransportGrid {
    pub n_omega: usize,
    pub e_min: f64,
    pub e_max: f64,
    /// Energy cells per period ε of the ε-solver's midpoint mesh.
    pub points_per_period: usize,
    /// Composite Gauss energy rule of the two-scale solver.
    pub e_panels: usize,
    pub e_per_panel: usize,
    pub n_cell: usize,
    pub n_r: usize,
    /// The `r`-line is `[−r_box, r_box]`.
    pub r_box: f64,
    /// Radius of the support of `φ_in` in `r`.
    pub support: f64,
    pub t_end: f64,
    /// Product-trapezoid steps of the ε-solver.
    pub eps_steps: usize,
    /// RK4 steps of the two-scale solver.
    pub two_scale_steps: usize,
    /// Number of recorded intervals; both step counts must be multiples.
    pub records: usize,
}

impl Default for TransportGrid {
    fn default() -> Self {
        Self {
            n_omega: 16,
            e_min: 0.25,
            e_max: 1.0,
            points_per_period: 32,
            e_panels: 4,
            e_per_panel: 8,
            n_cell: 128,
            n_r: 32,
            r_box: 2.0,
            support: 0.5,
            t_end: 1.0,
            eps_steps: 400,
            two_scale_steps: 100,
            records: 10,
        }
    }
}

impl TransportGrid {
    /// Checks the grid; returns warnings that do not prevent a run.
    pub fn validate(&self) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        if self.n_omega == 0 || self.n_cell == 0 || self.n_r == 0 || self.e_panels == 0 || self.e_per_panel == 0 {
            return Err(Error::Config("transport grid sizes must be positive".into()));
        }
        if self.n_cell % 2 == 1 {
            return Err(Error::Config(format!("n_cell must be even, got {}", self.n_cell)));
        }
        if !(self.e_min >= 0.0 && self.e_max > self.e_min) {
            return Err(Error::Config(format!("energy window ({}, {}) is invalid", self.e_min, self.e_max)));
        }
        if self.e_min == 0.0 {
            warnings.push("e_min = 0: √E vanishes at the lower energy edge".to_string());
        }
        if !(self.t_end > 0.0) || self.records == 0 || self.eps_steps % self.records != 0 || self.two_scale_steps % self.records != 0 {
            return Err(Error::Config("step counts must be positive multiples of records".into()));
        }
        let reach = self.support + self.e_max.sqrt() * self.t_end;
        if reach > self.r_box {
            return Err(Error::Config(format!(
                "characteristics leave the r-box: support {} + √E_max·T = {reach} exceeds {}",
                self.support, self.r_box
            )));
        }
        Ok(warnings)
    }

    pub fn r_nodes(&self) -> Vec<f64> {
        if self.n_r == 1 {
            return vec![0.0];
        }
        (0..self.n_r).map(|j| -self.r_box + 2.0 * self.r_box * j as f64 / (self.n_r - 1) as f64).collect()
    }

    pub fn thetas(&self) -> Vec<f64> {
        (0..self.n_omega).map(|k| 2.0 * PI * k as f64 / self.n_omega as f64).collect()
    }

    pub fn omega_weight(&self) -> f64 {
        2.0 * PI / self.n_omega as f64
    }

    /// Midpoint mesh with `points_per_period` cells per ε.
    pub fn eps_mesh(&self, epsilon: f64) -> (Vec<f64>, Vec<f64>) {
        let n = ((self.e_max - self.e_min) * self.points_per_period as f64 / epsilon).round().max(1.0) as usize;
        midpoint_mesh(self.e_min, self.e_max, n)
    }

    pub fn gauss_mesh(&self) -> (Vec<f64>, Vec<f64>) {
        composite_gauss(self.e_min, self.e_max, self.e_panels, self.e_per_panel)
    }

    pub fn record_times(&self) -> Vec<f64> {
        (0..=self.records).map(|m| self.t_end * m as f64 / self.records as f64).collect()
    }
}

/// Values over `(t, r, ω, E, y)`, `y` fastest; `n_cell = 1` for fields
/// without a cell variable.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseSpaceField {
    pub times: Vec<f64>,
    pub r: Vec<f64>,
    pub thetas: Vec<f64>,
    pub e_nodes: Vec<f64>,
    pub e_weights: Vec<f64>,
    pub n_cell: usize,
    pub values: Vec<f64>,
}

impl PhaseSpaceField {
    fn zeros(times: Vec<f64>, r: Vec<f64>, thetas: Vec<f64>, e_nodes: Vec<f64>, e_weights: Vec<f64>, n_cell: usize) -> Self {
        let len = times.len() * r.len() * thetas.len() * e_nodes.len() * n_cell;
        Self { times, r, thetas, e_nodes, e_weights, n_cell, values: vec![0.0; len] }
    }

    fn slice_len(&self) -> usize {
        self.thetas.len() * self.e_nodes.len() * self.n_cell
    }

    /// Velocity-space block at time index `n`, r index `j`.
    pub fn block(&self, n: usize, j: usize) -> &[f64] {
        let s = self.slice_len();
        let o = (n * self.r.len() + j) * s;
        &self.values[o..o + s]
    }

    fn block_mut(&mut self, n: usize, j: usize) -> &mut [f64] {
        let s = self.slice_len();
        let o = (n * self.r.len() + j) * s;
        &mut self.values[o..o + s]
    }

    pub fn at(&self, n: usize, j: usize, k: usize, i: usize) -> f64 {
        self.block(n, j)[(k * self.e_nodes.len() + i) * self.n_cell]
    }

    /// `max_t ‖ψ(t)‖_{L²(r × ω × E)}`, trapezoid in `r`.
    pub fn sup_l2(&self) -> f64 {
        let dr = if self.r.len() > 1 { self.r[1] - self.r[0] } else { 1.0 };
        let w_omega = 2.0 * PI / self.thetas.len() as f64;
        (0..self.times.len())
            .map(|n| {
                let mut acc = 0.0;
                for j in 0..self.r.len() {
                    let edge = if j == 0 || j + 1 == self.r.len() { 0.5 } else { 1.0 };
                    let b = self.block(n, j);
                    for (c, v) in b.chunks(self.n_cell).enumerate() {
                        let w = self.e_weights[c % self.e_nodes.len()];
                        acc += edge * dr * w_omega * w * v.iter().map(|x| x * x).sum::<f64>() / self.n_cell as f64;
                    }
                }
                acc.sqrt()
            })
            .fold(0.0, f64::max)
    }
}

/// Maps `f` over `0..n` on scoped threads; results keep their index order.
fn par_map<T: Send>(n: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    let workers = std::thread::available_parallelism().map_or(1, |w| w.get()).min(n.max(1));
    if workers <= 1 {
        return (0..n).map(&f).collect();
    }
    let f = &f;
    let mut parts: Vec<Vec<(usize, Result<T>)>> = std::thread::scope(|scope| {
        let handles: Vec<_> =
            (0..workers).map(|w| scope.spawn(move || (w..n).step_by(workers).map(|i| (i, f(i))).collect::<Vec<_>>())).collect();
        handles.into_iter().map(|h| h.join().expect("worker thread panicked")).collect()
    });
    let mut out: Vec<(usize, Result<T>)> = parts.drain(..).flatten().collect();
    out.sort_by_key(|(i, _)| *i);
    out.into_iter().map(|(_, r)| r).collect()
}

/// Velocity grid with the kernels tabulated per angle difference.
struct Velocity {
    n_omega: usize,
    w_omega: f64,
    thetas: Vec<f64>,
    e: Vec<f64>,
    w_e: Vec<f64>,
    sqrt_e: Vec<f64>,
    /// `κ₁(μ_Δ, E_i)`, index `Δ * n_e + i`.
    k1: Vec<f64>,
}

impl Velocity {
    fn new(params: &OpticalParameters, grid: &TransportGrid, e: Vec<f64>, w_e: Vec<f64>) -> Self {
        let n_omega = grid.n_omega;
        let thetas = grid.thetas();
        let mut k1 = Vec::with_capacity(n_omega * e.len());
        for d in 0..n_omega {
            let mu = thetas[d].cos();
            k1.extend(e.iter().map(|en| (params.kappa1)(mu, *en)));
        }
        let sqrt_e = e.iter().map(|x| x.sqrt()).collect();
        Self { n_omega, w_omega: grid.omega_weight(), thetas, e, w_e, sqrt_e, k1 }
    }

    fn n_e(&self) -> usize {
        self.e.len()
    }

    fn mu(&self, d: usize) -> f64 {
        self.thetas[d].cos()
    }

    /// `out(k,i) = √E_i Σ_Δ w_ω κ₁(μ_Δ,E_i) z(Δ, k−Δ)` from `z(Δ,k') = Σ_j w_j c(Δ,j) f(k',j)`.
    fn scatter(&self, z: &[f64], out: &mut [f64]) {
        let (no, ne) = (self.n_omega, self.n_e());
        for k in 0..no {
            let row = &mut out[k * ne..(k + 1) * ne];
            row.iter_mut().for_each(|v| *v = 0.0);
            for d in 0..no {
                let zz = self.w_omega * z[d * no + (k + no - d) % no];
                if zz == 0.0 {
                    continue;
                }
                let k1 = &self.k1[d * ne..(d + 1) * ne];
                for (v, c) in row.iter_mut().zip(k1) {
                    *v += c * zz;
                }
            }
            for (v, s) in row.iter_mut().zip(&self.sqrt_e) {
                *v *= s;
            }
        }
    }
}

/// Collision data of the ε-problem on the fine mesh.
struct EpsCollision {
    vel: Velocity,
    /// `w_j κ₂(μ_Δ, E_j, E_j/ε)`, index `Δ * n_e + j`.
    k2w: Vec<f64>,
    /// `σ^ε(ω_k, E_i)`, index `k * n_e + i`.
    sigma: Vec<f64>,
}

impl EpsCollision {
    fn new(params: &OpticalParameters, grid: &TransportGrid, epsilon: f64) -> Self {
        let (e, w) = grid.eps_mesh(epsilon);
        let vel = Velocity::new(params, grid, e, w);
        let ne = vel.n_e();
        let mut k2w = Vec::with_capacity(vel.n_omega * ne);
        for d in 0..vel.n_omega {
            let mu = vel.mu(d);
            k2w.extend((0..ne).map(|j| vel.w_e[j] * (params.kappa2)(mu, vel.e[j], vel.e[j] / epsilon)));
        }
        let mut sigma = Vec::with_capacity(vel.n_omega * ne);
        for th in &vel.thetas {
            sigma.extend((0..ne).map(|i| vel.sqrt_e[i] * (params.sigma)(*th, vel.e[i], vel.e[i] / epsilon)));
        }
        Self { vel, k2w, sigma }
    }

    fn len(&self) -> usize {
        self.vel.n_omega * self.vel.n_e()
    }

    /// `(K f)(ω,E) = ∫∫ κ^ε(ω·ω',E,E') f(ω',E') dω' dE'`.
    fn apply(&self, f: &[f64], z: &mut [f64], out: &mut [f64]) {
        let (no, ne) = (self.vel.n_omega, self.vel.n_e());
        for d in 0..no {
            let c = &self.k2w[d * ne..(d + 1) * ne];
            for kp in 0..no {
                z[d * no + kp] = c.iter().zip(&f[kp * ne..(kp + 1) * ne]).map(|(a, b)| a * b).sum();
            }
        }
        self.vel.scatter(z, out);
    }

    /// `κ̄^ε` and `κ̃^ε` on the grid.
    fn bars(&self, params: &OpticalParameters, epsilon: f64) -> (Vec<f64>, Vec<f64>) {
        let (no, ne) = (self.vel.n_omega, self.vel.n_e());
        let wo = self.vel.w_omega;
        // ∫ κ₂(μ_Δ,E',E'/ε) dE' and ∫ √E' κ₁(μ_Δ,E') dE' per Δ.
        let k2_int: Vec<f64> = (0..no).map(|d| self.k2w[d * ne..(d + 1) * ne].iter().sum()).collect();
        let k1_int: Vec<f64> =
            (0..no).map(|d| (0..ne).map(|j| self.vel.w_e[j] * self.vel.sqrt_e[j] * self.vel.k1[d * ne + j]).sum()).collect();
        let mut bar = vec![0.0; no * ne];
        let mut tilde = vec![0.0; no * ne];
        for k in 0..no {
            for i in 0..ne {
                let (e, se) = (self.vel.e[i], self.vel.sqrt_e[i]);
                let mut b = 0.0;
                let mut t = 0.0;
                for d in 0..no {
                    b += wo * se * self.vel.k1[d * ne + i] * k2_int[d];
                    t += wo * (params.kappa2)(self.vel.mu(d), e, e / epsilon) * k1_int[d];
                }
                bar[k * ne + i] = b;
                tilde[k * ne + i] = t;
            }
        }
        (bar, tilde)
    }
}

/// Integrated scattering rates on the ε-mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct KappaBars {
    pub thetas: Vec<f64>,
    pub e_nodes: Vec<f64>,
    /// `κ̄^ε(ω,E) = ∫∫ κ^ε(ω·ω',E,E') dω' dE'`, index `k * n_e + i`.
    pub outgoing: Vec<f64>,
    /// `κ̃^ε(ω,E) = ∫∫ κ^ε(ω·ω',E',E) dω' dE'`.
    pub incoming: Vec<f64>,
    /// `σ^ε(ω,E)`.
    pub sigma: Vec<f64>,
}

pub fn kappa_bars(params: &OpticalParameters, epsilon: f64, grid: &TransportGrid) -> Result<KappaBars> {
    if !(epsilon > 0.0) {
        return Err(domain(format!("epsilon must be positive, got {epsilon}")));
    }
    let c = EpsCollision::new(params, grid, epsilon);
    let (outgoing, incoming) = c.bars(params, epsilon);
    Ok(KappaBars { thetas: c.vel.thetas.clone(), e_nodes: c.vel.e.clone(), outgoing, incoming, sigma: c.sigma })
}

/// `min_grid min(σ^ε − κ̄^ε, σ^ε − κ̃^ε)`; positive certifies subcriticality on
/// the grid.
pub fn subcriticality_check(params: &OpticalParameters, epsilon: f64, grid: &TransportGrid) -> Result<f64> {
    let b = kappa_bars(params, epsilon, grid)?;
    Ok(b.sigma
        .iter()
        .zip(b.outgoing.iter().zip(&b.incoming))
        .map(|(s, (o, i))| (s - o).min(s - i))
        .fold(f64::INFINITY, f64::min))
}

/// `(Q^ε f, f) / ‖f‖²` with `Q^ε f = σ^ε f − K f` on the velocity grid.
pub fn rayleigh_quotient(params: &OpticalParameters, epsilon: f64, grid: &TransportGrid, f: &[f64]) -> Result<f64> {
    let c = EpsCollision::new(params, grid, epsilon);
    quotient(&c, f)
}

fn quotient(c: &EpsCollision, f: &[f64]) -> Result<f64> {
    if f.len() != c.len() {
        return Err(Error::Dimension(format!("field of length {} on a velocity grid of {}", f.len(), c.len())));
    }
    let ne = c.vel.n_e();
    let mut z = vec![0.0; c.vel.n_omega * c.vel.n_omega];
    let mut kf = vec![0.0; f.len()];
    c.apply(f, &mut z, &mut kf);
    let (mut num, mut den) = (0.0, 0.0);
    for (idx, v) in f.iter().enumerate() {
        let w = c.vel.w_omega * c.vel.w_e[idx % ne];
        num += w * v * (c.sigma[idx] * v - kf[idx]);
        den += w * v * v;
    }
    if den == 0.0 {
        return Err(domain("Rayleigh quotient of the zero field"));
    }
    Ok(num / den)
}

/// Minimum Rayleigh quotient over `trials` seeded uniform random fields on
/// `[−1, 1]`.
pub fn coercivity_test(params: &OpticalParameters, epsilon: f64, grid: &TransportGrid, trials: usize, seed: u64) -> Result<f64> {
    if trials == 0 {
        return Err(Error::Precondition("coercivity test needs at least one trial".into()));
    }
    let c = EpsCollision::new(params, grid, epsilon);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    for _ in 0..trials {
        let f: Vec<f64> = (0..c.len()).map(|_| rng.random_range(-1.0..=1.0)).collect();
        worst = worst.min(quotient(&c, &f)?);
    }
    Ok(worst)
}

/// The ε-solver's output: `ψ^ε` on the ε-mesh at the recorded times.
#[derive(Clone, Debug, PartialEq)]
pub struct EpsTransport {
    pub epsilon: f64,
    pub psi: PhaseSpaceField,
}

/// Solves the characteristics fixed point
///
/// ```text
/// ψ^ε(t) = φ_in e^{−tσ^ε} + ∫_0^t e^{−(t−s)σ^ε} (K ψ^ε)(s) ds
/// ```
///
/// by the product trapezoidal rule in `s`, each implicit step resolved by
/// fixed-point iteration. Slices where `φ_in` vanishes stay zero.
pub fn solve_characteristics_eps(
    params: &OpticalParameters,
    phi_in: &InitialFlux,
    epsilon: f64,
    grid: &TransportGrid,
) -> Result<EpsTransport> {
    if !(epsilon > 0.0) {
        return Err(domain(format!("epsilon must be positive, got {epsilon}")));
    }
    grid.validate()?;
    let c = EpsCollision::new(params, grid, epsilon);
    let r = grid.r_nodes();
    let times = grid.record_times();
    let slices = par_map(r.len(), |j| eps_slice(&c, phi_in, r[j], epsilon, grid))?;
    let mut psi = PhaseSpaceField::zeros(times, r, c.vel.thetas.clone(), c.vel.e.clone(), c.vel.w_e.clone(), 1);
    for (j, records) in slices.into_iter().enumerate() {
        if let Some(records) = records {
            for (n, rec) in records.into_iter().enumerate() {
                psi.block_mut(n, j).copy_from_slice(&rec);
            }
        }
    }
    Ok(EpsTransport { epsilon, psi })
}

const PICARD_TOL: f64 = 1e-14;
const PICARD_MAX: usize = 200;

fn eps_slice(c: &EpsCollision, phi_in: &InitialFlux, r1: f64, epsilon: f64, grid: &TransportGrid) -> Result<Option<Vec<Vec<f64>>>> {
    let (no, ne) = (c.vel.n_omega, c.vel.n_e());
    let m = no * ne;
    let mut phi0 = Vec::with_capacity(m);
    for th in &c.vel.thetas {
        phi0.extend(c.vel.e.iter().map(|e| phi_in(r1, *th, *e, e / epsilon)));
    }
    if phi0.iter().all(|v| *v == 0.0) {
        return Ok(None);
    }
    let steps = grid.eps_steps;
    let stride = steps / grid.records;
    let dt = grid.t_end / steps as f64;
    let decay: Vec<f64> = c.sigma.iter().map(|s| (-dt * s).exp()).collect();
    let mut z = vec![0.0; no * no];
    let mut psi = phi0.clone();
    let mut free = phi0.clone(); // φ_in e^{−tσ}
    let mut g = vec![0.0; m]; // K ψ at the previous node
    c.apply(&psi, &mut z, &mut g);
    let mut hist = vec![0.0; m]; // ∫_0^{t_{n}} minus the implicit end term
    let mut kpsi = vec![0.0; m];
    let mut rhs = vec![0.0; m];
    let mut records = vec![psi.clone()];
    for step in 1..=steps {
        for i in 0..m {
            free[i] *= decay[i];
            // Trapezoid: H_n = e^{−dtσ} H_{n−1} + dt/2 (e^{−dtσ} g_{n−1} + g_n).
            hist[i] = decay[i] * (hist[i] + 0.5 * dt * g[i]);
            rhs[i] = free[i] + hist[i];
        }
        // ψ_n = rhs + dt/2 K ψ_n
        let mut converged = false;
        for _ in 0..PICARD_MAX {
            c.apply(&psi, &mut z, &mut kpsi);
            let mut change = 0.0f64;
            let mut scale = 0.0f64;
            for i in 0..m {
                let next = rhs[i] + 0.5 * dt * kpsi[i];
                change = change.max((next - psi[i]).abs());
                scale = scale.max(next.abs());
                psi[i] = next;
            }
            if change <= PICARD_TOL * scale.max(1e-300) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Solver(format!("fixed-point iteration stalled at step {step} (r = {r1})")));
        }
        c.apply(&psi, &mut z, &mut g);
        for i in 0..m {
            hist[i] += 0.5 * dt * g[i];
        }
        if step % stride == 0 {
            records.push(psi.clone());
        }
    }
    Ok(Some(records))
}

/// Output of the two-scale solver.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoScaleTransport {
    /// `ψ_hom` on the Gauss energy rule at the recorded times.
    pub psi_hom: PhaseSpaceField,
    /// `ρ` at the final time only.
    pub rho_final: PhaseSpaceField,
    /// `max_t max |⟨ρ⟩_y|` over all steps.
    pub max_mean_rho: f64,
}

/// Collision data of the two-scale system on the Gauss energy rule.
struct CellCollision {
    vel: Velocity,
    ny: usize,
    /// `w_j κ₂(μ_Δ, E_j, y_l)`, index `(Δ * n_e + j) * ny + l`.
    k2w: Vec<f64>,
    /// `w_j ⟨κ₂(μ_Δ, E_j, ·)⟩`, index `Δ * n_e + j`.
    k2w_mean: Vec<f64>,
    /// `√E σ(ω_k, E_i, y_l)`, index `(k * n_e + i) * ny + l`.
    sigma: Vec<f64>,
    /// `√E ⟨σ⟩`, index `k * n_e + i`.
    sigma_mean: Vec<f64>,
}

impl CellCollision {
    fn new(params: &OpticalParameters, grid: &TransportGrid) -> Self {
        let (e, w) = grid.gauss_mesh();
        let vel = Velocity::new(params, grid, e, w);
        let (no, ne, ny) = (vel.n_omega, vel.n_e(), grid.n_cell);
        let y: Vec<f64> = (0..ny).map(|l| (l as f64 + 0.5) / ny as f64).collect();
        let mut k2w = Vec::with_capacity(no * ne * ny);
        for d in 0..no {
            for j in 0..ne {
                k2w.extend(y.iter().map(|yl| vel.w_e[j] * (params.kappa2)(vel.mu(d), vel.e[j], *yl)));
            }
        }
        let k2w_mean = k2w.chunks(ny).map(|c| c.iter().sum::<f64>() / ny as f64).collect();
        let mut sigma = Vec::with_capacity(no * ne * ny);
        for th in &vel.thetas {
            for i in 0..ne {
                sigma.extend(y.iter().map(|yl| vel.sqrt_e[i] * (params.sigma)(*th, vel.e[i], *yl)));
            }
        }
        let sigma_mean = sigma.chunks(ny).map(|c| c.iter().sum::<f64>() / ny as f64).collect();
        Self { vel, ny, k2w, k2w_mean, sigma, sigma_mean }
    }

    /// `S(ψ_hom + ρ)` with `ρ` carrying the cell variable.
    fn source(&self, psi: &[f64], rho: &[f64], z: &mut [f64], out: &mut [f64]) {
        let (no, ne, ny) = (self.vel.n_omega, self.vel.n_e(), self.ny);
        for d in 0..no {
            for kp in 0..no {
                let mut acc = 0.0;
                for j in 0..ne {
                    let idx = kp * ne + j;
                    acc += self.k2w_mean[d * ne + j] * psi[idx];
                    let c = &self.k2w[(d * ne + j) * ny..(d * ne + j + 1) * ny];
                    let r = &rho[idx * ny..(idx + 1) * ny];
                    acc += c.iter().zip(r).map(|(a, b)| a * b).sum::<f64>() / ny as f64;
                }
                z[d * no + kp] = acc;
            }
        }
        self.vel.scatter(z, out);
    }

    fn rhs(&self, psi: &[f64], rho: &[f64], z: &mut [f64], s: &mut [f64], dpsi: &mut [f64], drho: &mut [f64]) {
        let ny = self.ny;
        self.source(psi, rho, z, s);
        for idx in 0..psi.len() {
            let sig = &self.sigma[idx * ny..(idx + 1) * ny];
            let r = &rho[idx * ny..(idx + 1) * ny];
            let mean_sr = sig.iter().zip(r).map(|(a, b)| a * b).sum::<f64>() / ny as f64;
            let sm = self.sigma_mean[idx];
            dpsi[idx] = -sm * psi[idx] + s[idx] - mean_sr;
            let dr = &mut drho[idx * ny..(idx + 1) * ny];
            for l in 0..ny {
                dr[l] = -(sig[l] * r[l] - mean_sr) + (sm - sig[l]) * psi[idx];
            }
        }
    }
}

/// RK4 on the coupled system
///
/// ```text
/// ∂_t ψ_hom + √E⟨σ⟩ψ_hom − S(ψ_hom) = S(ρ) − √E⟨σρ⟩
/// ∂_t ρ + √E(σρ − ⟨σρ⟩)           = √E(⟨σ⟩ − σ) ψ_hom
/// ψ_hom(0) = ⟨φ_in⟩,  ρ(0) = L_1 φ_in
/// ```
pub fn solve_two_scale_transport(params: &OpticalParameters, phi_in: &InitialFlux, grid: &TransportGrid) -> Result<TwoScaleTransport> {
    grid.validate()?;
    let c = CellCollision::new(params, grid);
    let r = grid.r_nodes();
    let slices = par_map(r.len(), |j| two_scale_slice(&c, phi_in, r[j], grid))?;
    let (thetas, e, w) = (c.vel.thetas.clone(), c.vel.e.clone(), c.vel.w_e.clone());
    let mut psi_hom = PhaseSpaceField::zeros(grid.record_times(), r.clone(), thetas.clone(), e.clone(), w.clone(), 1);
    let mut rho_final = PhaseSpaceField::zeros(vec![grid.t_end], r, thetas, e, w, grid.n_cell);
    let mut max_mean_rho = 0.0f64;
    for (j, slice) in slices.into_iter().enumerate() {
        if let Some((records, rho, mean)) = slice {
            for (n, rec) in records.into_iter().enumerate() {
                psi_hom.block_mut(n, j).copy_from_slice(&rec);
            }
            rho_final.block_mut(0, j).copy_from_slice(&rho);
            max_mean_rho = max_mean_rho.max(mean);
        }
    }
    Ok(TwoScaleTransport { psi_hom, rho_final, max_mean_rho })
}

type SliceOutput = Option<(Vec<Vec<f64>>, Vec<f64>, f64)>;

fn two_scale_slice(c: &CellCollision, phi_in: &InitialFlux, r1: f64, grid: &TransportGrid) -> Result<SliceOutput> {
    let (no, ne, ny) = (c.vel.n_omega, c.vel.n_e(), c.ny);
    let m = no * ne;
    let mut psi = vec![0.0; m];
    let mut rho = vec![0.0; m * ny];
    for (k, th) in c.vel.thetas.iter().enumerate() {
        for (i, e) in c.vel.e.iter().enumerate() {
            let idx = k * ne + i;
            let cell = &mut rho[idx * ny..(idx + 1) * ny];
            for (l, v) in cell.iter_mut().enumerate() {
                *v = phi_in(r1, *th, *e, (l as f64 + 0.5) / ny as f64);
            }
            let mean = cell.iter().sum::<f64>() / ny as f64;
            psi[idx] = mean;
            cell.iter_mut().for_each(|v| *v -= mean);
        }
    }
    if psi.iter().chain(&rho).all(|v| *v == 0.0) {
        return Ok(None);
    }
    let steps = grid.two_scale_steps;
    let stride = steps / grid.records;
    let dt = grid.t_end / steps as f64;
    let mut z = vec![0.0; no * no];
    let mut s = vec![0.0; m];
    let mut k_psi = vec![vec![0.0; m]; 4];
    let mut k_rho = vec![vec![0.0; m * ny]; 4];
    let mut tp = vec![0.0; m];
    let mut tr = vec![0.0; m * ny];
    let mut records = vec![psi.clone()];
    let mean_of = |rho: &[f64]| rho.chunks(ny).map(|c| (c.iter().sum::<f64>() / ny as f64).abs()).fold(0.0, f64::max);
    let mut max_mean = mean_of(&rho);
    for step in 1..=steps {
        for stage in 0..4 {
            let h = match stage {
                0 => 0.0,
                3 => dt,
                _ => 0.5 * dt,
            };
            if stage == 0 {
                tp.copy_from_slice(&psi);
                tr.copy_from_slice(&rho);
            } else {
                for i in 0..m {
                    tp[i] = psi[i] + h * k_psi[stage - 1][i];
                }
                for i in 0..m * ny {
                    tr[i] = rho[i] + h * k_rho[stage - 1][i];
                }
            }
            let (kp, kr) = (&mut k_psi[stage], &mut k_rho[stage]);
            c.rhs(&tp, &tr, &mut z, &mut s, kp, kr);
        }
        for i in 0..m {
            psi[i] += dt / 6.0 * (k_psi[0][i] + 2.0 * k_psi[1][i] + 2.0 * k_psi[2][i] + k_psi[3][i]);
        }
        for i in 0..m * ny {
            rho[i] += dt / 6.0 * (k_rho[0][i] + 2.0 * k_rho[1][i] + 2.0 * k_rho[2][i] + k_rho[3][i]);
        }
        max_mean = max_mean.max(mean_of(&rho));
        if step % stride == 0 {
            if psi.iter().any(|v| !v.is_finite()) {
                return Err(Error::Solver(format!("two-scale transport blew up at step {step}")));
            }
            records.push(psi.clone());
        }
    }
    Ok(Some((records, rho, max_mean)))
}

/// Energy windows of the weak-error test.
pub const WEAK_WINDOWS: [(f64, f64); 3] = [(0.25, 1.0), (0.25, 0.625), (0.625, 1.0)];

fn window_integral(nodes: &[f64], weights: &[f64], values: &[f64], window: (f64, f64)) -> f64 {
    nodes
        .iter()
        .zip(weights)
        .zip(values)
        .filter(|((e, _), _)| **e >= window.0 && **e <= window.1)
        .map(|((_, w), v)| w * v)
        .sum()
}

/// `max |∫_W ψ^ε dE − ∫_W ψ_hom dE|` over recorded times, `r`, angles and
/// the windows `W` of [`WEAK_WINDOWS`] that lie inside the energy range.
pub fn windowed_weak_error(eps: &EpsTransport, hom: &TwoScaleTransport) -> Result<f64> {
    let (a, b) = (&eps.psi, &hom.psi_hom);
    if a.times.len() != b.times.len() || a.r.len() != b.r.len() || a.thetas.len() != b.thetas.len() {
        return Err(Error::Dimension("ε and two-scale fields are recorded on different grids".into()));
    }
    let (lo, hi) = (b.e_nodes[0].min(a.e_nodes[0]), b.e_nodes[b.e_nodes.len() - 1].max(a.e_nodes[a.e_nodes.len() - 1]));
    let windows: Vec<(f64, f64)> = WEAK_WINDOWS.iter().copied().filter(|(l, h)| *l <= lo + 1e-12 || *h >= hi - 1e-12 || (*l > lo && *h < hi)).collect();
    let (nea, neb) = (a.e_nodes.len(), b.e_nodes.len());
    let mut worst = 0.0f64;
    for n in 0..a.times.len() {
        for j in 0..a.r.len() {
            let (ba, bb) = (a.block(n, j), b.block(n, j));
            for k in 0..a.thetas.len() {
                let va = &ba[k * nea..(k + 1) * nea];
                let vb = &bb[k * neb..(k + 1) * neb];
                for w in &windows {
                    let d = window_integral(&a.e_nodes, &a.e_weights, va, *w) - window_integral(&b.e_nodes, &b.e_weights, vb, *w);
                    worst = worst.max(d.abs());
                }
            }
        }
    }
    Ok(worst)
}

/// `ψ_hom` at one `r` from the closed-kernel Volterra system
///
/// ```text
/// ψ' + a ψ − ∫ K(t−s) ψ(s) ds = S(t)
/// a    = diag(√E⟨σ⟩) − W⟨κ₂⟩
/// K_ij = −W_ij ⟨κ₂_ij v_j⟩ + δ_ij √E_i ⟨σ_i v_i⟩,   v_j(τ) = e^{−τ√E_j L_σ} √E_j L_1 σ_j
/// S_i  =  Σ_j W_ij ⟨κ₂_ij z_j⟩ − √E_i ⟨σ_i z_i⟩,    z_j(t) = e^{−t√E_j L_σ} L_1 φ_in
/// ```
///
/// with `W_ij = √E_i κ₁(μ_ij, E_i) w_ω w_E`. The unknown has one entry per
/// velocity node, so this is only practical on small grids. Returns the
/// solution on `time` (node-major, `k * n_e + i` within a node).
pub fn solve_closed_kernel_route(
    params: &OpticalParameters,
    phi_in: &InitialFlux,
    r1: f64,
    grid: &TransportGrid,
    time: &TimeGrid,
) -> Result<Vec<f64>> {
    grid.validate()?;
    let c = CellCollision::new(params, grid);
    let (no, ne, ny) = (c.vel.n_omega, c.vel.n_e(), c.ny);
    let m = no * ne;
    let cell = PeriodicGrid::new(ny)?;
    let nodes = time.count() + 1;
    let dt = time.dt();
    // W_ij⟨κ₂_ij ·⟩ weights per (i, j): the angle difference of i and j.
    let pair = |i: usize, j: usize| {
        let (ki, ei) = (i / ne, i % ne);
        let (kj, ej) = (j / ne, j % ne);
        let d = (ki + no - kj) % no;
        let w = c.vel.sqrt_e[ei] * c.vel.k1[d * ne + ei] * c.vel.w_omega;
        (w, &c.k2w[(d * ne + ej) * ny..(d * ne + ej + 1) * ny])
    };
    let mean_dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / ny as f64;

    let mut a = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            let (w, k2) = pair(i, j);
            a[i * m + j] = -w * k2.iter().sum::<f64>() / ny as f64;
        }
        a[i * m + i] += c.sigma_mean[i];
    }

    let mut kernel = vec![0.0; nodes * m * m];
    let mut source = vec![0.0; nodes * m];
    let mut u0 = vec![0.0; m];
    for j in 0..m {
        let sig = &c.sigma[j * ny..(j + 1) * ny];
        let sig_fn = CellFunction::new(cell, sig.to_vec())?;
        let prop = Propagator::new(&sig_fn, dt)?;
        let mean_sig = c.sigma_mean[j];
        let mut v: Vec<f64> = sig.iter().map(|s| s - mean_sig).collect();
        let (k, e) = (c.vel.thetas[j / ne], c.vel.e[j % ne]);
        let phi: Vec<f64> = (0..ny).map(|l| phi_in(r1, k, e, (l as f64 + 0.5) / ny as f64)).collect();
        let phi_mean = phi.iter().sum::<f64>() / ny as f64;
        u0[j] = phi_mean;
        let mut z: Vec<f64> = phi.iter().map(|p| p - phi_mean).collect();
        for n in 0..nodes {
            for i in 0..m {
                let (w, k2) = pair(i, j);
                kernel[(n * m + i) * m + j] -= w * mean_dot(k2, &v);
                source[n * m + i] += w * mean_dot(k2, &z);
            }
            kernel[(n * m + j) * m + j] += mean_dot(sig, &v);
            source[n * m + j] -= mean_dot(sig, &z);
            v = prop.apply(&v);
            z = prop.apply(&z);
        }
    }
    let problem = VolterraProblem::new(m, a, kernel, source, u0);
    Ok(solve_volterra(&problem, time)?.values)
}

/// Energy-only reduction used as a cross-check: with `κ₁ = 1/2π` and
/// everything independent of angle, `ψ(t,E)` solves
/// `∂_t ψ = −σ^ε ψ + √E ∫ κ₂ ψ dE'`, integrated here by RK4 on the ε-mesh.
pub fn isotropic_energy_reference(
    sigma: impl Fn(f64, f64) -> f64,
    kappa2: impl Fn(f64, f64) -> f64,
    phi_in: impl Fn(f64, f64) -> f64,
    epsilon: f64,
    grid: &TransportGrid,
    steps: usize,
) -> Result<Vec<Vec<f64>>> {
    let (e, w) = grid.eps_mesh(epsilon);
    let decay = e.iter().map(|x| x.sqrt() * sigma(*x, x / epsilon)).collect();
    let left = e.iter().map(|x| x.sqrt()).collect();
    let right = e.iter().zip(&w).map(|(x, w)| w * kappa2(*x, x / epsilon)).collect();
    let phi0: Vec<f64> = e.iter().map(|x| phi_in(*x, x / epsilon)).collect();
    RankOneKinetic { decay, left, right }.integrate(&phi0, grid.t_end / steps as f64, steps, steps / grid.records)
}
