//! Experiment configuration: a TOML file with flat `[run]`, `[grid]` and
//! `[time]` sections, overridden by command-line flags.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;

use crate::energy_boltzmann::Placement;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Tartar,
    Ode,
    Boltzmann,
    Transport,
    Oscillator,
    Sweep,
    KernelDump,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Tartar => "tartar",
            Self::Ode => "ode",
            Self::Boltzmann => "boltzmann",
            Self::Transport => "transport",
            Self::Oscillator => "oscillator",
            Self::Sweep => "sweep",
            Self::KernelDump => "kernel-dump",
        }
    }

    fn default_preset(self) -> &'static str {
        match self {
            Self::Tartar | Self::Ode | Self::KernelDump => "sine",
            Self::Boltzmann | Self::Sweep => "1",
            Self::Transport => "transport-subcritical-1",
            Self::Oscillator => "two-atom",
        }
    }

    fn default_eps(self) -> Vec<f64> {
        match self {
            Self::Boltzmann | Self::Sweep => [10.0, 20.0, 40.0, 80.0, 160.0].iter().map(|m| 1.0 / m).collect(),
            Self::Transport => vec![1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0],
            Self::Ode => vec![0.1, 0.05, 0.025, 0.0125],
            _ => Vec::new(),
        }
    }

    fn needs_eps(self) -> bool {
        matches!(self, Self::Boltzmann | Self::Sweep | Self::Transport | Self::Ode)
    }
}

impl FromStr for Kind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "tartar" => Self::Tartar,
            "ode" => Self::Ode,
            "boltzmann" => Self::Boltzmann,
            "transport" => Self::Transport,
            "oscillator" => Self::Oscillator,
            "sweep" => Self::Sweep,
            "kernel-dump" => Self::KernelDump,
            other => return Err(Error::Config(format!("run.kind: unknown problem kind {other:?}"))),
        })
    }
}

/// Fully resolved configuration of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub preset: String,
    pub placement: Placement,
    pub eps: Vec<f64>,
    pub n_cell: Option<usize>,
    pub n_e: Option<usize>,
    pub n_omega: Option<usize>,
    pub n_r: Option<usize>,
    pub points_per_period: Option<usize>,
    pub modes: usize,
    pub t_end: Option<f64>,
    pub steps: Option<usize>,
    pub talbot_nodes: Option<usize>,
    pub out: PathBuf,
    pub seed: u64,
    pub workers: usize,
}

impl ExperimentConfig {
    pub fn defaults(kind: Kind) -> Self {
        Self {
            kind,
            preset: kind.default_preset().to_string(),
            placement: Placement::Inside,
            eps: kind.default_eps(),
            n_cell: None,
            n_e: None,
            n_omega: None,
            n_r: None,
            points_per_period: None,
            modes: 8,
            t_end: None,
            steps: None,
            talbot_nodes: None,
            out: default_out_dir(),
            seed: 42,
            workers: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, msg: String| Error::Config(format!("{name}: {msg}"));
        if self.kind.needs_eps() && self.eps.is_empty() {
            return Err(field("run.eps", "the ε list is empty".into()));
        }
        if let Some(e) = self.eps.iter().find(|e| !(**e > 0.0 && **e <= 1.0)) {
            return Err(field("run.eps", format!("{e} is outside (0, 1]")));
        }
        if self.eps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(field("run.eps", "values must be strictly decreasing".into()));
        }
        if self.workers == 0 {
            return Err(field("run.workers", "must be at least 1".into()));
        }
        if self.modes == 0 || self.modes > crate::diagnostics::MAX_MODES {
            return Err(field("run.modes", format!("{} is outside 1..={}", self.modes, crate::diagnostics::MAX_MODES)));
        }
        for (name, v) in [
            ("grid.n_cell", self.n_cell),
            ("grid.n_e", self.n_e),
            ("grid.n_omega", self.n_omega),
            ("grid.n_r", self.n_r),
            ("grid.points_per_period", self.points_per_period),
            ("time.steps", self.steps),
            ("time.talbot_nodes", self.talbot_nodes),
        ] {
            if v == Some(0) {
                return Err(field(name, "must be positive".into()));
            }
        }
        if let Some(t) = self.t_end {
            if !(t > 0.0 && t.is_finite()) {
                return Err(field("time.t_end", format!("{t} is not a positive time")));
            }
        }
        Ok(())
    }

    /// Human-readable dump used in the manifest; stable across runs.
    pub fn describe(&self) -> Vec<(String, String)> {
        let opt = |v: Option<usize>| v.map_or("default".to_string(), |v| v.to_string());
        vec![
            ("kind".into(), self.kind.name().into()),
            ("preset".into(), self.preset.clone()),
            ("placement".into(), self.placement.name().into()),
            ("eps".into(), self.eps.iter().map(|e| format!("{e:.16e}")).collect::<Vec<_>>().join(",")),
            ("n_cell".into(), opt(self.n_cell)),
            ("n_e".into(), opt(self.n_e)),
            ("n_omega".into(), opt(self.n_omega)),
            ("n_r".into(), opt(self.n_r)),
            ("points_per_period".into(), opt(self.points_per_period)),
            ("modes".into(), self.modes.to_string()),
            ("t_end".into(), self.t_end.map_or("default".into(), |t| format!("{t:.16e}"))),
            ("steps".into(), opt(self.steps)),
            ("talbot_nodes".into(), opt(self.talbot_nodes)),
            ("seed".into(), self.seed.to_string()),
        ]
    }
}

/// `$HOMOKIN_OUT`, or `out` in the working directory.
pub fn default_out_dir() -> PathBuf {
    std::env::var_os("HOMOKIN_OUT").map_or_else(|| PathBuf::from("out"), PathBuf::from)
}

/// Parses `"0.1, 1/20, 0.025"`.
pub fn parse_eps_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            let value = match s.split_once('/') {
                Some((a, b)) => a.trim().parse::<f64>().ok().zip(b.trim().parse::<f64>().ok()).map(|(a, b)| a / b),
                None => s.parse::<f64>().ok(),
            };
            value.filter(|v| v.is_finite()).ok_or_else(|| Error::Config(format!("run.eps: cannot parse {s:?}")))
        })
        .collect()
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    run: Option<RunSection>,
    grid: Option<GridSection>,
    time: Option<TimeSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSection {
    kind: Option<String>,
    preset: Option<String>,
    placement: Option<String>,
    eps: Option<String>,
    modes: Option<usize>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    workers: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSection {
    n_cell: Option<usize>,
    n_e: Option<usize>,
    n_omega: Option<usize>,
    n_r: Option<usize>,
    points_per_period: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TimeSection {
    t_end: Option<f64>,
    steps: Option<usize>,
    talbot_nodes: Option<usize>,
}

/// Command-line overrides; `None` keeps the file or default value.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub preset: Option<String>,
    pub placement: Option<String>,
    pub eps: Option<String>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
}

/// Defaults, then the file (if any), then the flags.
pub fn resolve(kind: Kind, file: Option<&Path>, flags: &Overrides) -> Result<ExperimentConfig> {
    let parsed = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Io { path: path.display().to_string(), message: e.to_string() })?;
            parse_file(&text)?
        }
        None => FileConfig::default(),
    };
    let mut cfg = ExperimentConfig::defaults(kind);
    let run = parsed.run.unwrap_or_default();
    if let Some(k) = run.kind {
        let k: Kind = k.parse()?;
        if k != kind {
            return Err(Error::Config(format!("run.kind: file says {:?} but the command is {:?}", k.name(), kind.name())));
        }
    }
    let preset = flags.preset.clone().or(run.preset);
    if let Some(p) = preset {
        cfg.preset = p;
    }
    if let Some(p) = flags.placement.clone().or(run.placement) {
        cfg.placement = p.parse().map_err(|_| Error::Config(format!("run.placement: expected inside or outside, got {p:?}")))?;
    }
    if let Some(e) = flags.eps.clone().or(run.eps) {
        cfg.eps = parse_eps_list(&e)?;
    }
    if let Some(m) = run.modes {
        cfg.modes = m;
    }
    if let Some(o) = flags.out.clone().or(run.out) {
        cfg.out = o;
    }
    if let Some(s) = flags.seed.or(run.seed) {
        cfg.seed = s;
    }
    if let Some(w) = flags.workers.or(run.workers) {
        cfg.workers = w;
    }
    let grid = parsed.grid.unwrap_or_default();
    cfg.n_cell = grid.n_cell;
    cfg.n_e = grid.n_e;
    cfg.n_omega = grid.n_omega;
    cfg.n_r = grid.n_r;
    cfg.points_per_period = grid.points_per_period;
    let time = parsed.time.unwrap_or_default();
    cfg.t_end = time.t_end;
    cfg.steps = time.steps;
    cfg.talbot_nodes = time.talbot_nodes;
    cfg.validate()?;
    Ok(cfg)
}

fn parse_file(text: &str) -> Result<FileConfig> {
    toml::from_str(text).map_err(|e| {
        let msg = e.message().to_string();
        Error::Config(format!("config file: {msg}"))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eps_lists() {
        assert_eq!(parse_eps_list("0.5, 1/4,0.125").unwrap(), vec![0.5, 0.25, 0.125]);
        assert!(parse_eps_list("0.5, x").is_err());
    }

    #[test]
    fn empty_eps_is_rejected() {
        let flags = Overrides { eps: Some(String::new()), ..Default::default() };
        let err = resolve(Kind::Boltzmann, None, &flags).unwrap_err();
        assert!(err.to_string().contains("run.eps"));
    }

    #[test]
    fn increasing_eps_is_rejected() {
        let flags = Overrides { eps: Some("0.1,0.2".into()), ..Default::default() };
        assert!(resolve(Kind::Boltzmann, None, &flags).is_err());
    }

    #[test]
    fn file_then_flags() {
        let text = "[run]\npreset = \"2\"\nplacement = \"outside\"\neps = \"1/10, 1/20, 1/40\"\nworkers = 3\n[grid]\nn_cell = 128\n[time]\nsteps = 20\n";
        let parsed = parse_file(text).unwrap();
        assert_eq!(parsed.grid.unwrap().n_cell, Some(128));
        let dir = std::env::temp_dir().join(format!("homokin-config-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.toml");
        std::fs::write(&path, text).unwrap();
        let cfg = resolve(Kind::Boltzmann, Some(&path), &Overrides { workers: Some(5), ..Default::default() }).unwrap();
        assert_eq!(cfg.preset, "2");
        assert_eq!(cfg.placement, Placement::Outside);
        assert_eq!(cfg.eps.len(), 3);
        assert_eq!(cfg.workers, 5);
        assert_eq!(cfg.n_cell, Some(128));
        assert_eq!(cfg.steps, Some(20));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn unknown_keys_name_the_field() {
        let err = parse_file("[grid]\nn_cells = 4\n").unwrap_err();
        assert!(err.to_string().contains("n_cells"));
    }

    #[test]
    fn zero_workers() {
        let flags = Overrides { workers: Some(0), ..Default::default() };
        assert!(resolve(Kind::Tartar, None, &flags).unwrap_err().to_string().contains("run.workers"));
    }
}
