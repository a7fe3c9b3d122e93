//! The experiment pipelines behind each subcommand.

use std::f64::consts::PI;
use std::path::Path;
use std::time::Instant;

use nalgebra::Vector2;
use rayon::prelude::*;

use super::config::{ExperimentConfig, Kind};
use super::output::{Artifacts, Table};
use crate::cell_calculus::{CellFunction, PeriodicGrid};
use crate::diagnostics::ConvergenceReport;
use crate::energy_boltzmann::{example_presets, sweep_point, Placement, ToyProblem, ToyReference, TwoScaleResolution};
use crate::error::{Error, Result};
use crate::memory_kernel::{verify_tartar_equivalence, KernelTable};
use crate::multiscale_ode::{
    solve_coupled_system, solve_homogenized_volterra, solve_two_scale_closed, weak_error, OdeProblem, TestFunction, CLOSED_STEPS,
};
use crate::oscillator::{
    cell_averaged_limit, kernel_at, laplace_identity_gap, regularized_kernel_laplace, solve_with_kernel, KernelComponents, YoungMeasure,
    DEFAULT_TALBOT_NODES,
};
use crate::transport::{
    coercivity_test, default_initial_flux, preset as transport_preset, solve_characteristics_eps, solve_two_scale_transport,
    subcriticality_check, windowed_weak_error, TransportGrid,
};
use crate::volterra::TimeGrid;

/// Laplace variables of the kernel equivalence check.
pub const TARTAR_PS: [f64; 6] = [0.1, 0.5, 1.0, 2.0, 5.0, 10.0];
/// Laplace variables of the oscillator resolvent identity.
pub const OSCILLATOR_PS: [f64; 3] = [0.5, 1.0, 2.0];
/// Random fields drawn by the coercivity check.
pub const COERCIVITY_TRIALS: usize = 100;

/// What a run produced.
#[derive(Debug, Default)]
pub struct RunOutcome {
    pub artifacts: Artifacts,
    /// One-line findings for the terminal.
    pub notes: Vec<String>,
}

/// Runs the configured pipeline and writes its CSVs and manifest.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let mut out = RunOutcome { artifacts: Artifacts::new(&cfg.out)?, notes: Vec::new() };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("run.workers: cannot start {} workers: {e}", cfg.workers)))?;
    pool.install(|| match cfg.kind {
        Kind::Tartar => run_tartar(cfg, &mut out),
        Kind::Ode => run_ode(cfg, &mut out),
        Kind::Boltzmann => {
            let id = example_id(&cfg.preset)?;
            run_boltzmann(cfg, id, cfg.placement, "", &mut out)
        }
        Kind::Sweep => run_sweep(cfg, &mut out),
        Kind::Transport => run_transport(cfg, &mut out),
        Kind::Oscillator => run_oscillator(cfg, &mut out),
        Kind::KernelDump => run_kernel_dump(cfg, &mut out),
    })?;
    out.artifacts.write_manifest(cfg.kind.name(), &cfg.describe(), start.elapsed().as_secs_f64())?;
    Ok(out)
}

/// Cell coefficient presets shared by the kernel-level commands.
pub fn sigma_preset(name: &str, n_cell: usize) -> Result<CellFunction> {
    let g = PeriodicGrid::new(n_cell)?;
    let s = |y: f64| (2.0 * PI * y).sin();
    match name {
        "sine" => CellFunction::from_fn(g, move |y| 2.0 + 0.5 * s(y)),
        "two-valued" => CellFunction::two_valued(g, 1.0, 3.0),
        "constant" => Ok(CellFunction::constant(g, 2.0)),
        "two-sines" => CellFunction::from_fn(g, move |y| 2.0 + 0.5 * s(y) + 0.25 * s(2.0 * y)),
        "step" => CellFunction::from_fn(g, |y| 2.0 + 0.5 * crate::energy_boltzmann::first_half(y)),
        other => Err(Error::Config(format!(
            "run.preset: unknown coefficient {other:?}, expected sine, two-valued, constant, two-sines or step"
        ))),
    }
}

fn example_id(preset: &str) -> Result<u32> {
    let id = preset.strip_prefix("example-").unwrap_or(preset);
    id.parse().map_err(|_| Error::Config(format!("run.preset: expected an example number 1, 2 or 3, got {preset:?}")))
}

fn run_tartar(cfg: &ExperimentConfig, out: &mut RunOutcome) -> Result<()> {
    let sigma = sigma_preset(&cfg.preset, cfg.n_cell.unwrap_or(4096))?;
    let report = verify_tartar_equivalence(&sigma, &TARTAR_PS)?;
    let mut t = Table::new(&["p", "semigroup", "tartar", "rel_error"]);
    for q in &report.points {
        t.push(vec![q.p.into(), q.semigroup.into(), q.tartar.into(), q.rel_error.into()]);
    }
    out.artifacts.write_table("tartar_equiv.csv", &t)?;
    out.notes.push(format!("max relative kernel gap {:.3e}", report.max_rel_error));
    Ok(())
}

fn ode_problem(cfg: &ExperimentConfig) -> Result<OdeProblem> {
    let sigma = sigma_preset(&cfg.preset, cfg.n_cell.unwrap_or(256))?;
    let u_in = CellFunction::from_fn(sigma.grid(), |y| 1.0 + (2.0 * PI * y).sin())?;
    OdeProblem::new(sigma, u_in, cfg.t_end.unwrap_or(10.0))
}

fn run_ode(cfg: &ExperimentConfig, out: &mut RunOutcome) -> Result<()> {
    let problem = ode_problem(cfg)?;
    let grid = TimeGrid::with_steps(problem.t_end, CLOSED_STEPS)?;
    let closed = solve_two_scale_closed(&problem)?;
    let coupled = solve_coupled_system(&problem, &grid)?;
    let volterra = solve_homogenized_volterra(&problem, &grid)?;
    let stride = cfg.steps.map_or(50, |s| (CLOSED_STEPS / s).max(1));
    let mut t = Table::new(&["t", "closed", "coupled", "volterra"]);
    let mut gap = 0.0f64;
    for n in 0..closed.times.len() {
        let (a, b, c) = (closed.u_hom[n], coupled.u_hom[n], volterra[n]);
        gap = gap.max((a - b).abs()).max((a - c).abs()).max((b - c).abs());
        if n % stride == 0 {
            t.push(vec![closed.times[n].into(), a.into(), b.into(), c.into()]);
        }
    }
    out.artifacts.write_table("u_hom_routes.csv", &t)?;
    out.notes.push(format!("three-route sup gap {gap:.3e}"));

    let jobs: Vec<(f64, TestFunction)> = cfg.eps.iter().flat_map(|e| TestFunction::ALL.map(|f| (*e, f))).collect();
    let errors = jobs
        .par_iter()
        .map(|(e, f)| weak_error(&problem.clone().with_epsilon(*e), *f))
        .collect::<Result<Vec<_>>>()?;
    let mut t = Table::new(&["epsilon", "test_fn", "weak_error"]);
    for w in &errors {
        t.push(vec![w.epsilon.into(), w.test_fn.name().into(), w.weak_error.into()]);
    }
    out.artifacts.write_table("weak_errors.csv", &t)?;
    Ok(())
}

fn toy_problem(cfg: &ExperimentConfig, id: u32, placement: Placement) -> Result<(ToyProblem, TwoScaleResolution)> {
    let mut p = example_presets(id, placement)?;
    if let Some(n) = cfg.points_per_period {
        p.points_per_period = n;
    }
    if let Some(s) = cfg.steps {
        p.time_steps = s;
    }
    if let Some(t) = cfg.t_end {
        p.t_end = t;
    }
    p.validate()?;
    let mut res = TwoScaleResolution::default();
    if let Some(n) = cfg.n_cell {
        res.n_cell = n;
    }
    if let Some(n) = cfg.n_e {
        if n % res.per_panel != 0 {
            return Err(Error::Config(format!("grid.n_e: {n} is not a multiple of {}", res.per_panel)));
        }
        res.panels = n / res.per_panel;
    }
    Ok((p, res))
}

/// Runs a toy-model sweep; points are computed concurrently and collected
/// in ε order.
pub fn toy_sweep(cfg: &ExperimentConfig, id: u32, placement: Placement) -> Result<(ConvergenceReport, Vec<f64>)> {
    let (problem, res) = toy_problem(cfg, id, placement)?;
    let reference = ToyReference::build(&problem, cfg.modes, res)?;
    let points = cfg.eps.par_iter().map(|e| sweep_point(&problem, *e, &reference)).collect::<Result<Vec<_>>>()?;
    let sup = points.iter().map(|p| p.sup_norm).collect();
    let report = ConvergenceReport::assemble(points.into_iter().map(|p| (p.epsilon, p.mode_errors, p.norm_diff)).collect())?;
    Ok((report, sup))
}

fn run_boltzmann(cfg: &ExperimentConfig, id: u32, placement: Placement, prefix: &str, out: &mut RunOutcome) -> Result<()> {
    let (report, sup) = toy_sweep(cfg, id, placement)?;
    let mut modes = Table::new(&["epsilon", "k", "e_k"]);
    let mut norms = Table::new(&["epsilon", "norm_diff"]);
    let mut bounds = Table::new(&["epsilon", "sup_norm"]);
    for (i, e) in report.epsilons.iter().enumerate() {
        for (k, v) in report.errors[i].iter().enumerate() {
            modes.push(vec![(*e).into(), k.into(), (*v).into()]);
        }
        norms.push(vec![(*e).into(), report.norm_diffs[i].into()]);
        bounds.push(vec![(*e).into(), sup[i].into()]);
    }
    let mut rates = Table::new(&["k", "slope", "residual"]);
    for (k, fit) in report.slopes.iter().enumerate() {
        match fit {
            Some(f) => rates.push(vec![k.into(), f.slope.into(), f.residual.into()]),
            None => rates.push(vec![k.into(), "nan".into(), "nan".into()]),
        }
    }
    out.artifacts.write_table(&format!("{prefix}modes.csv"), &modes)?;
    out.artifacts.write_table(&format!("{prefix}norm_diff.csv"), &norms)?;
    out.artifacts.write_table(&format!("{prefix}rates.csv"), &rates)?;
    out.artifacts.write_table(&format!("{prefix}sup_norm.csv"), &bounds)?;
    let slopes: Vec<String> =
        report.slopes.iter().map(|s| s.as_ref().map_or("--".to_string(), |f| format!("{:.2}", f.slope))).collect();
    out.notes.push(format!("example {id} {}: slopes k=0.. [{}]", placement.name(), slopes.join(", ")));
    Ok(())
}

fn run_sweep(cfg: &ExperimentConfig, out: &mut RunOutcome) -> Result<()> {
    for id in 1..=3 {
        for placement in [Placement::Inside, Placement::Outside] {
            run_boltzmann(cfg, id, placement, &format!("example-{id}-{}/", placement.name()), out)?;
        }
    }
    Ok(())
}

/// Transport grid with the config's overrides applied.
pub fn transport_grid(cfg: &ExperimentConfig) -> Result<TransportGrid> {
    let mut g = TransportGrid::default();
    if let Some(n) = cfg.n_omega {
        g.n_omega = n;
    }
    if let Some(n) = cfg.n_r {
        g.n_r = n;
    }
    if let Some(n) = cfg.n_cell {
        g.n_cell = n;
    }
    if let Some(n) = cfg.points_per_period {
        g.points_per_period = n;
    }
    if let Some(n) = cfg.n_e {
        if n % g.e_per_panel != 0 {
            return Err(Error::Config(format!("grid.n_e: {n} is not a multiple of {}", g.e_per_panel)));
        }
        g.e_panels = n / g.e_per_panel;
    }
    if let Some(t) = cfg.t_end {
        g.t_end = t;
    }
    if let Some(s) = cfg.steps {
        g.eps_steps = s;
    }
    g.validate()?;
    Ok(g)
}

fn run_transport(cfg: &ExperimentConfig, out: &mut RunOutcome) -> Result<()> {
    let grid = transport_grid(cfg)?;
    for w in grid.validate()? {
        out.notes.push(format!("warning: {w}"));
    }
    let params = transport_preset(&cfg.preset, &grid)?;
    let phi = default_initial_flux();
    let hom = solve_two_scale_transport(&params, &phi, &grid)?;
    let rows = cfg
        .eps
        .par_iter()
        .map(|e| {
            let margin = subcriticality_check(&params, *e, &grid)?;
            let quotient = coercivity_test(&params, *e, &grid, COERCIVITY_TRIALS, cfg.seed)?;
            let sol = solve_characteristics_eps(&params, &phi, *e, &grid)?;
            Ok((*e, margin, quotient, windowed_weak_error(&sol, &hom)?, sol.psi.sup_l2()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut checks = Table::new(&["epsilon", "margin", "min_quotient"]);
    let mut weak = Table::new(&["epsilon", "weak_error", "sup_l2"]);
    for (e, m, q, w, s) in &rows {
        checks.push(vec![(*e).into(), (*m).into(), (*q).into()]);
        weak.push(vec![(*e).into(), (*w).into(), (*s).into()]);
    }
    out.artifacts.write_table("coercivity.csv", &checks)?;
    out.artifacts.write_table("weak_error.csv", &weak)?;

    let f = &hom.psi_hom;
    let n = f.times.len() - 1;
    let mut dump = Table::new(&["t", "r", "omega", "E", "value"]);
    for (j, r) in f.r.iter().enumerate() {
        for (k, th) in f.thetas.iter().enumerate() {
            for (i, e) in f.e_nodes.iter().enumerate() {
                dump.push(vec![f.times[n].into(), (*r).into(), (*th).into(), (*e).into(), f.at(n, j, k, i).into()]);
            }
        }
    }
    out.artifacts.write_table("psi_hom_final.csv", &dump)?;
    out.notes.push(format!("max |<rho>| = {:.3e}", hom.max_mean_rho));
    for w in rows.windows(2) {
        out.notes.push(format!("weak error ratio {:.3} -> {:.3}: {:.3}", w[0].0, w[1].0, w[0].3 / w[1].3));
    }
    Ok(())
}

/// Young measure presets of the oscillator command.
pub fn oscillator_measure(name: &str, n_cell: usize) -> Result<YoungMeasure> {
    match name {
        "two-atom" => YoungMeasure::uniform(vec![1.0, 3.0]),
        "point" => Ok(YoungMeasure::point_mass(2.0)),
        "three-atom" => YoungMeasure::new(vec![0.5, 1.5, 2.5], vec![0.25, 0.5, 0.25]),
        "sine" => Ok(YoungMeasure::from_cell(&CellFunction::from_fn(PeriodicGrid::new(n_cell)?, |y| 2.0 + (2.0 * PI * y).sin())?)),
        other => Err(Error::Config(format!("run.preset: unknown measure {other:?}, expected two-atom, point, three-atom or sine"))),
    }
}

fn run_oscillator(cfg: &ExperimentConfig, out: &mut RunOutcome) -> Result<()> {
    let nu = oscillator_measure(&cfg.preset, cfg.n_cell.unwrap_or(32))?;
    let u_in = Vector2::new(1.0, 0.0);
    let t_end = cfg.t_end.unwrap_or(10.0);
    let grid = TimeGrid::with_steps(t_end, cfg.steps.unwrap_or(4000))?;
    let nodes = cfg.talbot_nodes.unwrap_or(DEFAULT_TALBOT_NODES);
    // Kernel nodes are independent; tabulate them in parallel chunks.
    let times = grid.times();
    let chunk = times.len().div_ceil(64).max(1);
    let parts = times
        .par_chunks(chunk)
        .map(|ts| {
            let mut a = Vec::with_capacity(ts.len());
            let mut b = Vec::with_capacity(ts.len());
            for t in ts {
                let (x, y) = kernel_at(&nu, *t, nodes)?;
                a.push(x);
                b.push(y);
            }
            Ok((a, b))
        })
        .collect::<Result<Vec<_>>>()?;
    let kernel = KernelComponents {
        times: times.clone(),
        alpha: parts.iter().flat_map(|p| p.0.iter().copied()).collect(),
        beta: parts.iter().flat_map(|p| p.1.iter().copied()).collect(),
    };
    let sol = solve_with_kernel(&nu, u_in, &grid, &kernel)?;
    let mut limit = Table::new(&["t", "u1", "u2"]);
    let mut reference = Table::new(&["t", "u1", "u2"]);
    let mut ktab = Table::new(&["t", "alpha", "beta"]);
    for (n, t) in times.iter().enumerate() {
        let r = cell_averaged_limit(&nu, *t, u_in);
        limit.push(vec![(*t).into(), sol.values[n][0].into(), sol.values[n][1].into()]);
        reference.push(vec![(*t).into(), r[0].into(), r[1].into()]);
        ktab.push(vec![(*t).into(), kernel.alpha[n].into(), kernel.beta[n].into()]);
    }
    out.artifacts.write_table("oscillator_limit.csv", &limit)?;
    out.artifacts.write_table("oscillator_reference.csv", &reference)?;
    out.artifacts.write_table("oscillator_kernel.csv", &ktab)?;
    let mut lap = Table::new(&["p", "gap"]);
    for p in OSCILLATOR_PS {
        lap.push(vec![p.into(), laplace_identity_gap(&nu, u_in, p)?.into()]);
    }
    out.artifacts.write_table("laplace_identity.csv", &lap)?;
    let p = 1e4;
    let tail = regularized_kernel_laplace(&nu, p)? * p;
    out.notes.push(format!("sup error against the averaged rotations {:.3e}", sol.max_error_against_limit(&nu, u_in)));
    out.notes.push(format!("p K(p) at p = 1e4: diag {:.6}, variance {:.6}", tail[(0, 0)], nu.variance()));
    Ok(())
}

fn run_kernel_dump(cfg: &ExperimentConfig, out: &mut RunOutcome) -> Result<()> {
    let sigma = sigma_preset(&cfg.preset, cfg.n_cell.unwrap_or(256))?;
    let t_end = cfg.t_end.unwrap_or(10.0);
    let steps = cfg.steps.unwrap_or(1000);
    let table = KernelTable::build(&sigma, t_end / steps as f64, steps)?;
    let mut t = Table::new(&["tau", "K"]);
    for (tau, k) in table.taus.iter().zip(&table.values) {
        t.push(vec![(*tau).into(), (*k).into()]);
    }
    out.artifacts.write_table("kernel.csv", &t)?;
    out.notes.push(format!("K(0) = {:.12}", table.values[0]));
    Ok(())
}

/// Reads a CSV header line.
pub(crate) fn read_header(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.display().to_string(), message: e.to_string() })?;
    let first = text.lines().next().unwrap_or_default();
    Ok(first.split(',').map(|s| s.trim().to_string()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coefficient_presets() {
        for name in ["sine", "two-valued", "constant", "two-sines", "step"] {
            let s = sigma_preset(name, 64).unwrap();
            assert!(s.min() > 0.0, "{name}");
        }
        assert!(matches!(sigma_preset("nope", 64), Err(Error::Config(_))));
    }

    #[test]
    fn example_ids() {
        assert_eq!(example_id("2").unwrap(), 2);
        assert_eq!(example_id("example-3").unwrap(), 3);
        assert!(example_id("x").is_err());
    }

    #[test]
    fn measure_presets() {
        for name in ["two-atom", "point", "three-atom", "sine"] {
            let nu = oscillator_measure(name, 16).unwrap();
            assert!((nu.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
