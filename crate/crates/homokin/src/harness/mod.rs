//! Command-line experiments: configuration, pipelines, CSV output and plot
//! scripts.

pub mod config;
pub mod output;
pub mod plot;
pub mod run;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{resolve, ExperimentConfig, Kind, Overrides};
pub use plot::emit_plot_script;
pub use run::{run_experiment, RunOutcome};

use crate::error::Error;

#[derive(Debug, Parser)]
#[command(name = "homokin", version, about = "Homogenized kinetic models: kernels, limits and convergence sweeps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args, Default)]
pub struct CommonArgs {
    /// TOML file with [run], [grid] and [time] sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Preset name or example number.
    #[arg(long, global = true, visible_alias = "example")]
    pub preset: Option<String>,
    /// Where the scattering sits: inside or outside.
    #[arg(long, global = true)]
    pub placement: Option<String>,
    /// Comma-separated ε values, e.g. `1/10,1/20,0.025`.
    #[arg(long, global = true)]
    pub eps: Option<String>,
    /// Output directory; defaults to $HOMOKIN_OUT or ./out.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Semigroup kernel against the harmonic-mean formula.
    Tartar,
    /// Relaxation ODE: three homogenized routes and weak errors.
    Ode,
    /// One energy-model convergence sweep.
    Boltzmann,
    /// Transport coercivity and two-scale weak error.
    Transport,
    /// Rotation system limit via Talbot inversion.
    Oscillator,
    /// All energy-model sweeps, both placements.
    Sweep,
    /// Tabulated memory kernel.
    KernelDump,
    /// gnuplot script for existing CSVs.
    Plot {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

impl Command {
    fn kind(&self) -> Option<Kind> {
        Some(match self {
            Self::Tartar => Kind::Tartar,
            Self::Ode => Kind::Ode,
            Self::Boltzmann => Kind::Boltzmann,
            Self::Transport => Kind::Transport,
            Self::Oscillator => Kind::Oscillator,
            Self::Sweep => Kind::Sweep,
            Self::KernelDump => Kind::KernelDump,
            Self::Plot { .. } => return None,
        })
    }
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            preset: self.preset.clone(),
            placement: self.placement.clone(),
            eps: self.eps.clone(),
            out: self.out.clone(),
            workers: self.workers,
            seed: self.seed,
        }
    }
}

/// Exit status for an error: 2 for configuration problems, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        _ => 1,
    }
}

/// Runs a parsed command line; returns the lines to print.
pub fn execute(cli: &Cli) -> crate::Result<Vec<String>> {
    match (&cli.command, cli.command.kind()) {
        (Command::Plot { files }, _) => {
            let out = cli.common.out.clone().unwrap_or_else(config::default_out_dir);
            let path = emit_plot_script(files, &out)?;
            Ok(vec![format!("wrote {}", path.display())])
        }
        (_, Some(kind)) => {
            let cfg = resolve(kind, cli.common.config.as_deref(), &cli.common.overrides())?;
            let outcome = run_experiment(&cfg)?;
            let mut lines = outcome.notes;
            lines.extend(outcome.artifacts.files.iter().map(|(p, _)| format!("wrote {}", p.display())));
            Ok(lines)
        }
        _ => unreachable!("every non-plot command has a kind"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from(["homokin", "boltzmann", "--example", "2", "--placement", "outside", "--eps", "1/10,1/20,1/40", "--workers", "4"]).unwrap();
        assert!(matches!(cli.command, Command::Boltzmann));
        assert_eq!(cli.common.preset.as_deref(), Some("2"));
        assert_eq!(cli.common.workers, Some(4));
    }

    #[test]
    fn plot_needs_files() {
        assert!(Cli::try_parse_from(["homokin", "plot"]).is_err());
    }

    #[test]
    fn config_errors_exit_with_two() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::Solver("x".into())), 1);
    }
}
