//! Weak-convergence diagnostics: Legendre modes of energy fields, mode
//! errors, strong two-scale norm differences and log-log rate fits.

use crate::error::{Error, Result};
use crate::quadrature::{orthonormal_legendre, trapezoid};

/// Largest number of Legendre modes extracted at once.
pub const MAX_MODES: usize = 16;

/// Samples of `φ(t, E)` on a uniform time grid and an energy quadrature.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyField {
    pub times: Vec<f64>,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// Row-major `times.len() × nodes.len()`.
    pub values: Vec<f64>,
}

impl EnergyField {
    pub fn new(times: Vec<f64>, nodes: Vec<f64>, weights: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if nodes.len() != weights.len() || values.len() != times.len() * nodes.len() {
            return Err(Error::Dimension(format!(
                "energy field: {} times, {} nodes, {} weights, {} values",
                times.len(),
                nodes.len(),
                weights.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver("energy field contains non-finite values".into()));
        }
        Ok(Self { times, nodes, weights, values })
    }

    pub fn row(&self, n: usize) -> &[f64] {
        let m = self.nodes.len();
        &self.values[n * m..(n + 1) * m]
    }

    /// `‖φ(t_n, ·)‖_{L²(E)}` by the field's own quadrature.
    pub fn energy_norm(&self, n: usize) -> f64 {
        self.row(n).iter().zip(&self.weights).map(|(v, w)| v * v * w).sum::<f64>().sqrt()
    }

    /// `‖φ‖_{L²((0,T)×E)}`, trapezoid in time.
    pub fn space_time_norm(&self) -> f64 {
        let sq: Vec<f64> = (0..self.times.len()).map(|n| self.energy_norm(n).powi(2)).collect();
        trapezoid(&sq, time_step(&self.times)).sqrt()
    }

    pub fn max_energy_norm(&self) -> f64 {
        (0..self.times.len()).map(|n| self.energy_norm(n)).fold(0.0, f64::max)
    }
}

/// Samples of `φ⁰(t, E, y)`; the cell variable uses uniform weights.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoScaleField {
    pub times: Vec<f64>,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub n_cell: usize,
    /// Index order `(t, E, y)`, y fastest.
    pub values: Vec<f64>,
}

impl TwoScaleField {
    pub fn new(times: Vec<f64>, nodes: Vec<f64>, weights: Vec<f64>, n_cell: usize, values: Vec<f64>) -> Result<Self> {
        if nodes.len() != weights.len() || n_cell == 0 || values.len() != times.len() * nodes.len() * n_cell {
            return Err(Error::Dimension("two-scale field shape does not match its grids".into()));
        }
        Ok(Self { times, nodes, weights, n_cell, values })
    }

    /// `φ_hom = ⟨φ⁰⟩_y`.
    pub fn y_average(&self) -> EnergyField {
        let values = self.values.chunks(self.n_cell).map(|c| c.iter().sum::<f64>() / self.n_cell as f64).collect();
        EnergyField { times: self.times.clone(), nodes: self.nodes.clone(), weights: self.weights.clone(), values }
    }

    /// `‖φ⁰‖_{L²((0,T)×E×Y)}`.
    pub fn space_time_norm(&self) -> f64 {
        let block = self.nodes.len() * self.n_cell;
        let sq: Vec<f64> = self
            .values
            .chunks(block)
            .map(|slab| {
                slab.chunks(self.n_cell)
                    .zip(&self.weights)
                    .map(|(c, w)| w * c.iter().map(|v| v * v).sum::<f64>() / self.n_cell as f64)
                    .sum()
            })
            .collect();
        trapezoid(&sq, time_step(&self.times)).sqrt()
    }
}

fn time_step(times: &[f64]) -> f64 {
    if times.len() < 2 {
        0.0
    } else {
        (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModeSeries {
    pub k: usize,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

/// Modes `m_k(t) = (φ(t,·), ℓ_k)` for `k < count`, with `ℓ_k` orthonormal on
/// `(e_min, e_max)`.
pub fn legendre_modes(field: &EnergyField, count: usize, e_min: f64, e_max: f64) -> Result<Vec<ModeSeries>> {
    if count == 0 || count > MAX_MODES {
        return Err(Error::Precondition(format!("mode count {count} outside 1..={MAX_MODES}")));
    }
    if !(e_max > e_min) {
        return Err(Error::Domain(format!("energy interval ({e_min}, {e_max}) is empty")));
    }
    // basis[i*count + k] = w_i ℓ_k(E_i)
    let mut basis = Vec::with_capacity(field.nodes.len() * count);
    for (e, w) in field.nodes.iter().zip(&field.weights) {
        basis.extend(orthonormal_legendre(count, *e, e_min, e_max).into_iter().map(|l| l * w));
    }
    let mut series: Vec<ModeSeries> =
        (0..count).map(|k| ModeSeries { k, times: field.times.clone(), values: Vec::with_capacity(field.times.len()) }).collect();
    for n in 0..field.times.len() {
        let mut acc = vec![0.0; count];
        for (v, b) in field.row(n).iter().zip(basis.chunks(count)) {
            for (a, bk) in acc.iter_mut().zip(b) {
                *a += v * bk;
            }
        }
        for (s, a) in series.iter_mut().zip(acc) {
            s.values.push(a);
        }
    }
    Ok(series)
}

fn interpolate(times: &[f64], values: &[f64], t: f64) -> f64 {
    match times.len() {
        0 => f64::NAN,
        1 => values[0],
        n => {
            let j = times.partition_point(|s| *s <= t).clamp(1, n - 1);
            let (t0, t1) = (times[j - 1], times[j]);
            let s = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
            values[j - 1] + s * (values[j] - values[j - 1])
        }
    }
}

/// `max_t |m_k^ε(t) − m_k^hom(t)|`, the homogenized series interpolated
/// linearly onto the ε times.
pub fn mode_error(eps_modes: &ModeSeries, hom_modes: &ModeSeries) -> Result<f64> {
    if eps_modes.k != hom_modes.k {
        return Err(Error::Precondition(format!("mode mismatch: {} vs {}", eps_modes.k, hom_modes.k)));
    }
    Ok(eps_modes
        .times
        .iter()
        .zip(&eps_modes.values)
        .map(|(t, v)| (v - interpolate(&hom_modes.times, &hom_modes.values, *t)).abs())
        .fold(0.0, f64::max))
}

/// `| ‖φ^ε‖ − ‖φ⁰‖ |` with each norm taken by its own quadrature.
pub fn norm_difference(phi_eps: &EnergyField, phi0: &TwoScaleField) -> f64 {
    (phi_eps.space_time_norm() - phi0.space_time_norm()).abs()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Largest deviation of `log(error)` from the fitted line.
    pub residual: f64,
}

/// Least-squares slope of `log(error)` against `log(ε)`.
pub fn fit_rate(epsilons: &[f64], errors: &[f64]) -> Result<RateFit> {
    if epsilons.len() != errors.len() {
        return Err(Error::Dimension(format!("{} epsilons vs {} errors", epsilons.len(), errors.len())));
    }
    if epsilons.len() < 3 {
        return Err(Error::Precondition("rate fit needs at least three sweep points".into()));
    }
    if let Some(bad) = errors.iter().chain(epsilons).find(|e| !(**e > 0.0) || !e.is_finite()) {
        return Err(Error::Precondition(format!("cannot fit a rate through nonpositive value {bad}")));
    }
    let x: Vec<f64> = epsilons.iter().map(|e| e.ln()).collect();
    let y: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Precondition("rate fit needs distinct epsilons".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = x.iter().zip(&y).map(|(a, b)| (b - intercept - slope * a).abs()).fold(0.0, f64::max);
    Ok(RateFit { slope, intercept, residual })
}

/// Mode errors over an ε-sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    /// Strictly decreasing.
    pub epsilons: Vec<f64>,
    /// `errors[i][k] = e_k` at `epsilons[i]`.
    pub errors: Vec<Vec<f64>>,
    pub norm_diffs: Vec<f64>,
    /// One entry per mode; `None` when the errors cannot be fitted.
    pub slopes: Vec<Option<RateFit>>,
}

impl ConvergenceReport {
    /// Sorts the rows by decreasing ε and fits one rate per mode.
    pub fn assemble(mut rows: Vec<(f64, Vec<f64>, f64)>) -> Result<Self> {
        rows.sort_by(|a, b| b.0.total_cmp(&a.0));
        if rows.windows(2).any(|w| w[0].0 <= w[1].0) {
            return Err(Error::Precondition("sweep epsilons must be distinct".into()));
        }
        let modes = rows.first().map_or(0, |r| r.1.len());
        if rows.iter().any(|r| r.1.len() != modes || r.1.iter().any(|e| *e < 0.0)) {
            return Err(Error::Dimension("sweep rows carry inconsistent mode errors".into()));
        }
        let epsilons: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let errors: Vec<Vec<f64>> = rows.iter().map(|r| r.1.clone()).collect();
        let norm_diffs = rows.iter().map(|r| r.2).collect();
        let slopes = (0..modes)
            .map(|k| {
                let ek: Vec<f64> = errors.iter().map(|r| r[k]).collect();
                fit_rate(&epsilons, &ek).ok()
            })
            .collect();
        Ok(Self { epsilons, errors, norm_diffs, slopes })
    }

    pub fn mode(&self, k: usize) -> Vec<f64> {
        self.errors.iter().map(|r| r[k]).collect()
    }

    /// `e_k` strictly decreases as ε decreases.
    pub fn strictly_decreasing(&self, k: usize) -> bool {
        self.mode(k).windows(2).all(|w| w[1] < w[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::composite_gauss;

    fn field(count_t: usize, f: impl Fn(f64, f64) -> f64) -> EnergyField {
        let (nodes, weights) = composite_gauss(0.0, 1.0, 4, 8);
        let times: Vec<f64> = (0..count_t).map(|n| n as f64 * 0.1).collect();
        let values = times.iter().flat_map(|t| nodes.iter().map(|e| f(*t, *e)).collect::<Vec<_>>()).collect();
        EnergyField::new(times, nodes, weights, values).unwrap()
    }

    #[test]
    fn constant_field_has_only_mode_zero() {
        let modes = legendre_modes(&field(3, |_, _| 1.0), 8, 0.0, 1.0).unwrap();
        assert!((modes[0].values[0] - 1.0).abs() < 1e-12);
        for m in &modes[1..] {
            assert!(m.values.iter().all(|v| v.abs() < 1e-10));
        }
    }

    #[test]
    fn legendre_input_selects_its_mode() {
        let f = field(1, |_, e| orthonormal_legendre(4, e, 0.0, 1.0)[3]);
        let modes = legendre_modes(&f, 8, 0.0, 1.0).unwrap();
        for m in &modes {
            let expect = if m.k == 3 { 1.0 } else { 0.0 };
            assert!((m.values[0] - expect).abs() < 1e-10, "k={}", m.k);
        }
    }

    #[test]
    fn decaying_field_mode_zero() {
        let modes = legendre_modes(&field(11, |t, _| (-t).exp()), 2, 0.0, 1.0).unwrap();
        for (t, v) in modes[0].times.iter().zip(&modes[0].values) {
            assert!((v - (-t).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn mode_count_is_bounded() {
        assert!(legendre_modes(&field(1, |_, _| 1.0), 17, 0.0, 1.0).is_err());
        assert!(legendre_modes(&field(1, |_, _| 1.0), 0, 0.0, 1.0).is_err());
    }

    #[test]
    fn mode_error_offsets() {
        let a = ModeSeries { k: 2, times: vec![0.0, 1.0, 2.0], values: vec![1.0, 2.0, 3.0] };
        assert_eq!(mode_error(&a, &a).unwrap(), 0.0);
        let b = ModeSeries { values: vec![1.25, 2.25, 3.25], ..a.clone() };
        assert!((mode_error(&a, &b).unwrap() - 0.25).abs() < 1e-15);
        let c = ModeSeries { k: 1, ..a.clone() };
        assert!(mode_error(&a, &c).is_err());
    }

    #[test]
    fn mode_error_interpolates_coarse_reference() {
        let fine = ModeSeries { k: 0, times: vec![0.0, 0.5, 1.0], values: vec![0.0, 0.5, 1.0] };
        let coarse = ModeSeries { k: 0, times: vec![0.0, 1.0], values: vec![0.0, 1.0] };
        assert!(mode_error(&fine, &coarse).unwrap() < 1e-15);
    }

    #[test]
    fn y_independent_two_scale_field_has_zero_norm_difference() {
        let f = field(5, |t, e| (1.0 + e) * (-t).exp());
        let n_cell = 4;
        let values = f.values.iter().flat_map(|v| std::iter::repeat_n(*v, n_cell)).collect();
        let ts = TwoScaleField::new(f.times.clone(), f.nodes.clone(), f.weights.clone(), n_cell, values).unwrap();
        assert!(norm_difference(&f, &ts) < 1e-14);
        assert_eq!(ts.y_average(), f);
    }

    #[test]
    fn exact_power_laws() {
        let eps = [0.1, 0.05, 0.025, 0.0125];
        let sq: Vec<f64> = eps.iter().map(|e| 3.0 * e * e).collect();
        let lin: Vec<f64> = eps.iter().map(|e| 0.7 * e).collect();
        assert!((fit_rate(&eps, &sq).unwrap().slope - 2.0).abs() < 1e-10);
        assert!((fit_rate(&eps, &lin).unwrap().slope - 1.0).abs() < 1e-10);
        assert!(fit_rate(&eps, &[1.0, 0.0, 1.0, 1.0]).is_err());
        assert!(fit_rate(&eps[..2], &sq[..2]).is_err());
    }

    #[test]
    fn report_orders_by_decreasing_epsilon() {
        let rows = vec![(0.05, vec![0.5], 0.1), (0.1, vec![1.0], 0.2), (0.025, vec![0.25], 0.05)];
        let r = ConvergenceReport::assemble(rows).unwrap();
        assert_eq!(r.epsilons, vec![0.1, 0.05, 0.025]);
        assert!(r.strictly_decreasing(0));
        assert!((r.slopes[0].unwrap().slope - 1.0).abs() < 1e-12);
    }
}
