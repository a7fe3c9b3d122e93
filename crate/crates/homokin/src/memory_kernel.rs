//! Memory kernel and homogenized source of the scalar relaxation model, in the
//! time and Laplace domains.
//!
//! `K(τ) = <σ exp(-τ L_σ) L_1 σ>` and its transform `<σ (p + L_σ)^{-1} L_1 σ>`
//! must coincide with `p + <σ> - B(p)`; [`verify_tartar_equivalence`] checks
//! that identity numerically.

use crate::cell_calculus::{
    cell_average, harmonic_factor_b, mean, resolvent_apply, semigroup_apply, CellFunction,
    PeriodicGrid, Propagator, SemigroupMethod,
};
use crate::error::{domain, Error, Result};
use crate::volterra::TimeGrid;

/// Kernel samples on a uniform lag grid `τ_j = j dt`.
#[derive(Clone, Debug)]
pub struct KernelTable {
    pub taus: Vec<f64>,
    pub values: Vec<f64>,
    pub sigma_ref: CellFunction,
}

impl KernelTable {
    /// Tabulates `K` on `count + 1` lags of step `dt` by repeated application
    /// of the one-step propagator.
    pub fn build(sigma: &CellFunction, dt: f64, count: usize) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(domain("kernel table step must be positive"));
        }
        let prop = Propagator::new(sigma, dt)?;
        let s = sigma.values();
        let mut h = sigma.fluctuation().into_values();
        let mut taus = Vec::with_capacity(count + 1);
        let mut values = Vec::with_capacity(count + 1);
        for j in 0..=count {
            taus.push(j as f64 * dt);
            values.push(weighted_mean(s, &h));
            if j < count {
                h = prop.apply(&h);
            }
        }
        Ok(Self { taus, values, sigma_ref: sigma.clone() })
    }

    pub fn for_grid(sigma: &CellFunction, grid: &TimeGrid) -> Result<Self> {
        Self::build(sigma, grid.dt(), grid.count())
    }

    pub fn dt(&self) -> f64 {
        if self.taus.len() > 1 {
            self.taus[1] - self.taus[0]
        } else {
            0.0
        }
    }

    /// Laplace transform of the table by the trapezoid rule with the
    /// Euler–Maclaurin end correction at τ = 0. Returns the value and a bound
    /// on the neglected tail `|K|_max e^{-p τ_end}/p`.
    pub fn laplace(&self, p: f64) -> Result<(f64, f64)> {
        if !(p > 0.0) {
            return Err(domain(format!("Laplace variable must be positive, got {p}")));
        }
        let n = self.values.len();
        if n < 4 {
            return Err(Error::Dimension("kernel table too short for a Laplace estimate".into()));
        }
        let dt = self.dt();
        let g: Vec<f64> = self.taus.iter().zip(&self.values).map(|(t, k)| (-p * t).exp() * k).collect();
        let mut sum = crate::quadrature::trapezoid(&g, dt);
        let dg0 = (-3.0 * g[0] + 4.0 * g[1] - g[2]) / (2.0 * dt);
        let dgn = (3.0 * g[n - 1] - 4.0 * g[n - 2] + g[n - 3]) / (2.0 * dt);
        sum -= dt * dt / 12.0 * (dgn - dg0);
        let kmax = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tail = kmax * (-p * self.taus[n - 1]).exp() / p;
        Ok((sum, tail))
    }
}

fn weighted_mean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / a.len() as f64
}

/// Lag at which the Laplace integral is truncated: `max(20, 30/p)`.
pub fn laplace_horizon(p: f64) -> f64 {
    20f64.max(30.0 / p)
}

pub fn memory_kernel_eval(sigma: &CellFunction, tau: f64) -> Result<f64> {
    if !(tau >= 0.0) {
        return Err(domain(format!("kernel lag must be nonnegative, got {tau}")));
    }
    let h = semigroup_apply(sigma, tau, &sigma.fluctuation(), SemigroupMethod::MatrixExp)?;
    Ok(weighted_mean(sigma.values(), h.values()))
}

/// A forcing sampled on a uniform time grid, one cell function per node.
#[derive(Clone, Debug)]
pub struct SampledForcing {
    pub dt: f64,
    pub frames: Vec<CellFunction>,
}

impl SampledForcing {
    pub fn from_fn(grid: &TimeGrid, cell: PeriodicGrid, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let frames = grid
            .times()
            .into_iter()
            .map(|t| CellFunction::from_fn(cell, |y| f(t, y)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dt: grid.dt(), frames })
    }

    pub fn zero(grid: &TimeGrid, cell: PeriodicGrid) -> Self {
        Self { dt: grid.dt(), frames: vec![CellFunction::constant(cell, 0.0); grid.count() + 1] }
    }
}

#[derive(Clone, Debug)]
pub struct SourceTable {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub forcing: SampledForcing,
    pub u_in: CellFunction,
}

impl SourceTable {
    /// `S(t_n) = <f> - ∫_0^t <σ e^{-(t-s)L_σ} L_1 f(s)> ds - <σ e^{-tL_σ} L_1 u_in>`
    /// on every node of the forcing grid.
    ///
    /// With `P = e^{-dt L_σ}` and `g_k = L_1 f(t_k)`, the running sum
    /// `H_n = P H_{n-1} + g_n` gives the trapezoid value
    /// `dt (H_n - ½ P^n g_0 - ½ g_n)`.
    pub fn build(sigma: &CellFunction, forcing: &SampledForcing, u_in: &CellFunction) -> Result<Self> {
        let dt = forcing.dt;
        let prop = Propagator::new(sigma, dt)?;
        let s = sigma.values();
        let g0 = forcing.frames[0].fluctuation().into_values();
        let mut running = g0.clone();
        let mut g0_prop = g0;
        let mut w = u_in.fluctuation().into_values();
        let mut times = Vec::with_capacity(forcing.frames.len());
        let mut values = Vec::with_capacity(forcing.frames.len());
        for (n, frame) in forcing.frames.iter().enumerate() {
            if n > 0 {
                let gn = frame.fluctuation().into_values();
                running = prop.apply(&running);
                running.iter_mut().zip(&gn).for_each(|(r, g)| *r += g);
                g0_prop = prop.apply(&g0_prop);
                w = prop.apply(&w);
            }
            let conv = if n == 0 {
                0.0
            } else {
                let gn = frame.fluctuation().into_values();
                let integrand: Vec<f64> = (0..s.len()).map(|i| running[i] - 0.5 * g0_prop[i] - 0.5 * gn[i]).collect();
                dt * weighted_mean(s, &integrand)
            };
            times.push(n as f64 * dt);
            values.push(cell_average(frame) - conv - weighted_mean(s, &w));
        }
        Ok(Self { times, values, forcing: forcing.clone(), u_in: u_in.clone() })
    }
}

/// `S(t)` at a single node `t` of the forcing grid.
pub fn homogenized_source_eval(
    sigma: &CellFunction,
    forcing: &SampledForcing,
    u_in: &CellFunction,
    t: f64,
) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(domain(format!("source time must be nonnegative, got {t}")));
    }
    let n = (t / forcing.dt).round() as usize;
    if (n as f64 * forcing.dt - t).abs() > 1e-9 * t.max(1.0) || n >= forcing.frames.len() {
        return Err(domain(format!("t = {t} is not a node of the forcing grid")));
    }
    let truncated = SampledForcing { dt: forcing.dt, frames: forcing.frames[..=n].to_vec() };
    Ok(SourceTable::build(sigma, &truncated, u_in)?.values[n])
}

pub fn kernel_laplace_semigroup(sigma: &CellFunction, p: f64) -> Result<f64> {
    let g = resolvent_apply(sigma, p, &sigma.fluctuation())?;
    Ok(weighted_mean(sigma.values(), g.values()))
}

/// `p + <σ> - B(p)`, evaluated as `B(p) <(<σ> - σ)/(p + σ)>`, which is the
/// same number without the cancellation between `p + <σ>` and `B(p)`.
pub fn tartar_kernel_laplace(sigma: &CellFunction, p: f64) -> Result<f64> {
    let b = harmonic_factor_b(sigma, p)?;
    let m = cell_average(sigma);
    Ok(b * mean(&sigma.values().iter().map(|s| (m - s) / (p + s)).collect::<Vec<_>>()))
}

#[derive(Clone, Debug)]
pub struct EquivalencePoint {
    pub p: f64,
    pub semigroup: f64,
    pub tartar: f64,
    pub rel_error: f64,
    /// Numeric Laplace transform of a tabulated kernel, when computed.
    pub table: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct EquivalenceReport {
    pub points: Vec<EquivalencePoint>,
    pub max_rel_error: f64,
    /// Max relative deviation of the table estimate from the resolvent route.
    pub table_rel_error: Option<f64>,
}

/// Largest cell grid for which the dense kernel table is built.
pub const TABLE_NODE_LIMIT: usize = 1024;
const TABLE_DT: f64 = 0.01;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-14)
}

pub fn verify_tartar_equivalence(sigma: &CellFunction, ps: &[f64]) -> Result<EquivalenceReport> {
    if let Some(p) = ps.iter().find(|p| !(**p > 0.0)) {
        return Err(domain(format!("Laplace variable must be positive, got {p}")));
    }
    let table = if sigma.len() <= TABLE_NODE_LIMIT && !ps.is_empty() {
        let pmin = ps.iter().copied().fold(f64::INFINITY, f64::min);
        let count = (laplace_horizon(pmin) / TABLE_DT).ceil() as usize;
        Some(KernelTable::build(sigma, TABLE_DT, count)?)
    } else {
        None
    };
    let mut points = Vec::with_capacity(ps.len());
    for &p in ps {
        let semigroup = kernel_laplace_semigroup(sigma, p)?;
        let tartar = tartar_kernel_laplace(sigma, p)?;
        let table = match &table {
            Some(t) => Some(t.laplace(p)?.0),
            None => None,
        };
        let rel_error = if semigroup == 0.0 && tartar == 0.0 { 0.0 } else { rel(semigroup, tartar) };
        points.push(EquivalencePoint { p, semigroup, tartar, rel_error, table });
    }
    let max_rel_error = points.iter().map(|q| q.rel_error).fold(0.0, f64::max);
    let table_rel_error = table.as_ref().map(|_| {
        points
            .iter()
            .map(|q| {
                let t = q.table.unwrap_or(0.0);
                if t.abs() < 1e-14 && q.semigroup.abs() < 1e-14 {
                    0.0
                } else {
                    rel(t, q.semigroup)
                }
            })
            .fold(0.0, f64::max)
    });
    Ok(EquivalenceReport { points, max_rel_error, table_rel_error })
}

/// Variance `<σ²> - <σ>²` of the coefficient, the value of `K(0)`.
pub fn variance(sigma: &CellFunction) -> f64 {
    let m = cell_average(sigma);
    mean(&sigma.values().iter().map(|s| (s - m) * (s - m)).collect::<Vec<_>>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid(n: usize) -> PeriodicGrid {
        PeriodicGrid::new(n).unwrap()
    }

    fn sine(n: usize) -> CellFunction {
        CellFunction::from_fn(grid(n), |y| 2.0 + 0.5 * (2.0 * PI * y).sin()).unwrap()
    }

    #[test]
    fn constant_sigma_has_no_memory() {
        let c = CellFunction::constant(grid(32), 2.0);
        for tau in [0.0, 0.7, 3.0] {
            assert!(memory_kernel_eval(&c, tau).unwrap().abs() < 1e-15);
        }
        assert!(kernel_laplace_semigroup(&c, 1.0).unwrap().abs() < 1e-15);
        assert!(tartar_kernel_laplace(&c, 1.0).unwrap().abs() < 1e-14);
    }

    #[test]
    fn kernel_at_zero_is_variance() {
        let s = sine(256);
        // Oracle: direct quadrature of <σ²> - <σ>².
        let direct = mean(&s.values().iter().map(|v| v * v).collect::<Vec<_>>()) - cell_average(&s).powi(2);
        let k0 = memory_kernel_eval(&s, 0.0).unwrap();
        assert!((k0 - direct).abs() < 1e-10);
        assert!((k0 - 0.125).abs() < 1e-12);
    }

    #[test]
    fn two_valued_kernel_is_exponential() {
        let s = CellFunction::two_valued(grid(256), 1.0, 3.0).unwrap();
        for tau in [0.0, 0.5, 1.0] {
            assert!((memory_kernel_eval(&s, tau).unwrap() - (-2.0 * tau as f64).exp()).abs() < 1e-12);
        }
        assert!(memory_kernel_eval(&s, -0.1).is_err());
    }

    #[test]
    fn kernel_table_matches_pointwise_evaluation() {
        let s = sine(64);
        let table = KernelTable::build(&s, 0.05, 40).unwrap();
        for j in [0, 7, 40] {
            let direct = memory_kernel_eval(&s, j as f64 * 0.05).unwrap();
            assert!((table.values[j] - direct).abs() < 1e-13);
        }
    }

    #[test]
    fn source_examples() {
        let cell = grid(128);
        let tg = TimeGrid::new(2.0, 0.01).unwrap();
        let s = sine(128);
        let zero = SampledForcing::zero(&tg, cell);
        let flat = CellFunction::constant(cell, 3.0);
        let table = SourceTable::build(&s, &zero, &flat).unwrap();
        assert!(table.values.iter().all(|v| v.abs() < 1e-14));

        let u_in = CellFunction::from_fn(cell, |y| 1.0 + (2.0 * PI * y).sin()).unwrap();
        let c = CellFunction::constant(cell, 1.5);
        let table = SourceTable::build(&c, &zero, &u_in).unwrap();
        let worst = table.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(worst < 1e-13, "{worst:e}");

        let s0 = homogenized_source_eval(&s, &zero, &u_in, 0.0).unwrap();
        assert!((s0 + 0.25).abs() < 1e-12);
        assert!(homogenized_source_eval(&s, &zero, &u_in, -1.0).is_err());
        assert!(homogenized_source_eval(&s, &zero, &u_in, 0.005).is_err());
    }

    #[test]
    fn source_with_forcing_matches_direct_quadrature() {
        let cell = grid(32);
        let tg = TimeGrid::new(1.0, 0.05).unwrap();
        let s = sine(32);
        let f = |t: f64, y: f64| (1.0 + t) * (2.0 * PI * y).cos() + 0.5;
        let forcing = SampledForcing::from_fn(&tg, cell, f).unwrap();
        let u_in = CellFunction::constant(cell, 1.0);
        let table = SourceTable::build(&s, &forcing, &u_in).unwrap();
        // Oracle: trapezoid of <σ e^{-(t-s)L} L_1 f(s)> with each term evaluated
        // by a fresh matrix exponential.
        let n = tg.count();
        let t = tg.time(n);
        let terms: Vec<f64> = (0..=n)
            .map(|k| {
                let g = forcing.frames[k].fluctuation();
                let e = semigroup_apply(&s, t - tg.time(k), &g, SemigroupMethod::MatrixExp).unwrap();
                weighted_mean(s.values(), e.values())
            })
            .collect();
        let expect = 0.5 - crate::quadrature::trapezoid(&terms, tg.dt());
        assert!((table.values[n] - expect).abs() < 1e-12);
    }

    #[test]
    fn laplace_closed_forms() {
        let s = CellFunction::two_valued(grid(64), 1.0, 3.0).unwrap();
        assert!((kernel_laplace_semigroup(&s, 1.0).unwrap() - 1.0 / 3.0).abs() < 1e-14);
        assert!((tartar_kernel_laplace(&s, 1.0).unwrap() - 1.0 / 3.0).abs() < 1e-14);
        let sm = sine(4096);
        let expect = 3.0 - 8.75f64.sqrt();
        assert!((kernel_laplace_semigroup(&sm, 1.0).unwrap() - expect).abs() < 1e-10);
        assert!((tartar_kernel_laplace(&sm, 1.0).unwrap() - expect).abs() < 1e-12);
        assert!((expect - 0.041960).abs() < 1e-6);
        assert!(matches!(tartar_kernel_laplace(&sm, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn table_laplace_matches_resolvent() {
        let s = sine(256);
        let table = KernelTable::build(&s, 0.01, (laplace_horizon(0.5) / 0.01) as usize).unwrap();
        for p in [0.5, 1.0, 2.0, 5.0] {
            let (num, tail) = table.laplace(p).unwrap();
            assert!(tail < 1e-6);
            assert!((num - kernel_laplace_semigroup(&s, p).unwrap()).abs() < 1e-5, "p {p}");
        }
    }

    #[test]
    fn equivalence_reports() {
        let c = CellFunction::constant(grid(64), 2.0);
        let r = verify_tartar_equivalence(&c, &[0.1, 1.0, 10.0]).unwrap();
        assert_eq!(r.max_rel_error, 0.0);

        let tv = CellFunction::two_valued(grid(64), 1.0, 3.0).unwrap();
        let r = verify_tartar_equivalence(&tv, &[0.1, 1.0, 10.0]).unwrap();
        assert!(r.max_rel_error <= 1e-10);
        for q in &r.points {
            assert!((q.tartar - 1.0 / (q.p + 2.0)).abs() < 1e-12);
        }
        assert!(r.table_rel_error.unwrap() < 1e-4);

        let r = verify_tartar_equivalence(&sine(4096), &[0.1, 1.0, 10.0]).unwrap();
        assert!(r.max_rel_error <= 1e-6);
        assert!(r.table_rel_error.is_none());
    }

    #[test]
    fn kernel_depends_only_on_distribution() {
        let a = CellFunction::two_valued(grid(128), 1.0, 3.0).unwrap();
        let b = CellFunction::two_valued(grid(128), 3.0, 1.0).unwrap();
        for tau in [0.0, 0.4, 2.0] {
            let ka = memory_kernel_eval(&a, tau).unwrap();
            let kb = memory_kernel_eval(&b, tau).unwrap();
            assert!((ka - kb).abs() < 1e-12);
        }
    }
}
