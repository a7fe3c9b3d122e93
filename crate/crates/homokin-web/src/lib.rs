//! WebAssembly bindings for the demo page. Every export returns one flat
//! `Float64Array`; the layout is given per function.

use homokin::cell_calculus::{CellFunction, PeriodicGrid};
use homokin::energy_boltzmann::{example_presets, solve_toy_eps, solve_toy_two_scale, Placement, TwoScaleResolution};
use homokin::memory_kernel::KernelTable;
use homokin::oscillator::{cell_averaged_limit, solve_oscillator_limit, YoungMeasure, DEFAULT_TALBOT_NODES};
use homokin::volterra::TimeGrid;
use nalgebra::Vector2;
use wasm_bindgen::prelude::*;

const CELL: usize = 256;
/// Keeps a single call well under a second in the browser.
const MAX_POINTS: usize = 4000;

fn check(cond: bool, msg: &str) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.to_string())
    }
}

/// `[τ_0..τ_n, K(τ_0)..K(τ_n)]` for `σ = 2 + a sin 2πy` (or the two-valued
/// `σ ∈ {2 − a, 2 + a}`).
pub fn kernel_curve_values(amplitude: f64, two_valued: bool, t_end: f64, points: usize) -> Result<Vec<f64>, String> {
    check(amplitude.abs() < 2.0, "amplitude must keep σ positive (|a| < 2)")?;
    check(t_end > 0.0 && (1..=MAX_POINTS).contains(&points), "need t_end > 0 and 1..=4000 points")?;
    let g = PeriodicGrid::new(CELL).map_err(|e| e.to_string())?;
    let sigma = if two_valued {
        CellFunction::two_valued(g, 2.0 - amplitude, 2.0 + amplitude)
    } else {
        CellFunction::from_fn(g, |y| 2.0 + amplitude * (2.0 * std::f64::consts::PI * y).sin())
    }
    .map_err(|e| e.to_string())?;
    let table = KernelTable::build(&sigma, t_end / points as f64, points).map_err(|e| e.to_string())?;
    Ok([table.taus, table.values].concat())
}

/// `[n, m, E^ε_1..E^ε_n, φ^ε(t)_1..n, E_1..E_m, φ_hom(t)_1..m]` at time `t`.
pub fn toy_profile_values(example: u32, outside: bool, epsilon: f64, t: f64) -> Result<Vec<f64>, String> {
    check((1.0 / 80.0..=1.0).contains(&epsilon), "ε must lie in [1/80, 1]")?;
    check(t > 0.0 && t <= 20.0, "t must lie in (0, 20]")?;
    let placement = if outside { Placement::Outside } else { Placement::Inside };
    let mut p = example_presets(example, placement).map_err(|e| e.to_string())?.with_epsilon(epsilon).with_t_end(t);
    p.points_per_period = 40;
    p.time_steps = 40;
    let eps = solve_toy_eps(&p).map_err(|e| e.to_string())?;
    let grid = TimeGrid::with_steps(t, p.time_steps).map_err(|e| e.to_string())?;
    let res = TwoScaleResolution { n_cell: 64, ..TwoScaleResolution::default() };
    let hom = solve_toy_two_scale(&p, &grid, res).map_err(|e| e.to_string())?.y_average();
    let last = |f: &homokin::diagnostics::EnergyField| f.row(f.times.len() - 1).to_vec();
    let mut out = vec![eps.nodes.len() as f64, hom.nodes.len() as f64];
    out.extend(&eps.nodes);
    out.extend(last(&eps));
    out.extend(&hom.nodes);
    out.extend(last(&hom));
    Ok(out)
}

/// `[t.., u1.., u2.., r1.., r2..]`: the limit `U⁰` from the Volterra route
/// and the average `r` of the two rotations, for `U_in = (1, 0)`.
pub fn oscillator_curve_values(b1: f64, b2: f64, t_end: f64, steps: usize) -> Result<Vec<f64>, String> {
    check(b1.abs() <= 5.0 && b2.abs() <= 5.0, "speeds must lie in [-5, 5]")?;
    check(t_end > 0.0 && t_end <= 20.0 && (1..=MAX_POINTS).contains(&steps), "need t_end in (0, 20] and 1..=4000 steps")?;
    let nu = YoungMeasure::uniform(vec![b1, b2]).map_err(|e| e.to_string())?;
    let grid = TimeGrid::with_steps(t_end, steps).map_err(|e| e.to_string())?;
    let u_in = Vector2::new(1.0, 0.0);
    let sol = solve_oscillator_limit(&nu, u_in, &grid, DEFAULT_TALBOT_NODES).map_err(|e| e.to_string())?;
    let reference: Vec<Vector2<f64>> = sol.times.iter().map(|t| cell_averaged_limit(&nu, *t, u_in)).collect();
    let mut out = sol.times.clone();
    out.extend(sol.values.iter().map(|u| u[0]));
    out.extend(sol.values.iter().map(|u| u[1]));
    out.extend(reference.iter().map(|u| u[0]));
    out.extend(reference.iter().map(|u| u[1]));
    Ok(out)
}

#[wasm_bindgen]
pub fn kernel_curve(amplitude: f64, two_valued: bool, t_end: f64, points: usize) -> Result<Vec<f64>, JsError> {
    kernel_curve_values(amplitude, two_valued, t_end, points).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn toy_profiles(example: u32, outside: bool, epsilon: f64, t: f64) -> Result<Vec<f64>, JsError> {
    toy_profile_values(example, outside, epsilon, t).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn oscillator_curves(b1: f64, b2: f64, t_end: f64, steps: usize) -> Result<Vec<f64>, JsError> {
    oscillator_curve_values(b1, b2, t_end, steps).map_err(|e| JsError::new(&e))
}
