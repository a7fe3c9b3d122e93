//! gnuplot scripts that only read the CSVs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::run::read_header;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Panel {
    /// `epsilon,k,e_k`: log-log, one series per mode.
    Modes(usize),
    /// `epsilon,norm_diff`: linear axes.
    NormDiff,
    /// `k,slope,residual`.
    Rates,
    /// Anything else: columns 2.. against column 1.
    Series(usize),
}

fn classify(path: &Path) -> Result<Panel> {
    let header = read_header(path)?;
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    Ok(match h.as_slice() {
        ["epsilon", "k", "e_k"] => Panel::Modes(mode_count(path)?),
        ["epsilon", "norm_diff"] => Panel::NormDiff,
        ["k", "slope", "residual"] => Panel::Rates,
        cols => Panel::Series(cols.len()),
    })
}

/// Rows of one ε, i.e. the number of distinct `k` in a modes file.
fn mode_count(path: &Path) -> Result<usize> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.display().to_string(), message: e.to_string() })?;
    let mut lines = text.lines().skip(1);
    let first = lines.next().and_then(|l| l.split(',').next()).unwrap_or_default().to_string();
    Ok(1 + lines.take_while(|l| l.split(',').next() == Some(first.as_str())).count())
}

/// Path as seen from `out`, where the script is meant to be run.
fn quoted(path: &Path, out: &Path) -> String {
    let shown = match path.strip_prefix(out) {
        Ok(rel) => rel.to_path_buf(),
        Err(_) => std::fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf()),
    };
    format!("'{}'", shown.display().to_string().replace('\'', "''"))
}

/// Writes `plot.gp` into `out`, to be run from there; several inputs share
/// one row of panels.
pub fn emit_plot_script(csvs: &[PathBuf], out: &Path) -> Result<PathBuf> {
    if csvs.is_empty() {
        return Err(Error::Config("plot: no CSV files given".into()));
    }
    for p in csvs {
        if !p.is_file() {
            return Err(Error::Io { path: p.display().to_string(), message: "no such file".into() });
        }
    }
    let panels = csvs.iter().map(|p| classify(p)).collect::<Result<Vec<_>>>()?;
    let mut s = String::new();
    let _ = writeln!(s, "set terminal pngcairo size {},480", 640 * csvs.len());
    let _ = writeln!(s, "set output 'figure.png'");
    let _ = writeln!(s, "set datafile separator ','");
    let _ = writeln!(s, "set key top left");
    if csvs.len() > 1 {
        let _ = writeln!(s, "set multiplot layout 1,{}", csvs.len());
    }
    for (i, (path, panel)) in csvs.iter().zip(&panels).enumerate() {
        let f = quoted(path, out);
        let label = (b'a' + (i as u8 % 26)) as char;
        let _ = writeln!(s, "unset logscale");
        match panel {
            Panel::Modes(count) => {
                let _ = writeln!(s, "set title '({label}) convergence rate in epsilon'");
                let _ = writeln!(s, "set logscale xy");
                let _ = writeln!(s, "set xlabel 'epsilon'");
                let _ = writeln!(s, "set ylabel 'e_k'");
                let series: Vec<String> = (0..*count)
                    .map(|k| format!("{f} every {count}::{} using 1:3 with linespoints title 'k = {k}'", 1 + k))
                    .collect();
                let _ = writeln!(s, "plot {}", series.join(", \\\n     "));
            }
            Panel::NormDiff => {
                let _ = writeln!(s, "set title '({label}) norm difference'");
                let _ = writeln!(s, "set xlabel 'epsilon'");
                let _ = writeln!(s, "set ylabel 'norm difference'");
                let _ = writeln!(s, "plot {f} every ::1 using 1:2 with linespoints notitle");
            }
            Panel::Rates => {
                let _ = writeln!(s, "set title '({label}) fitted slopes'");
                let _ = writeln!(s, "set xlabel 'k'");
                let _ = writeln!(s, "set ylabel 'slope'");
                let _ = writeln!(s, "plot {f} every ::1 using 1:2 with points pt 7 notitle");
            }
            Panel::Series(cols) => {
                let _ = writeln!(s, "set title '({label}) {}'", path.file_stem().unwrap_or_default().to_string_lossy());
                let series: Vec<String> =
                    (2..=*cols).map(|c| format!("{f} every ::1 using 1:{c} with lines title columnhead({c})")).collect();
                let _ = writeln!(s, "plot {}", series.join(", \\\n     "));
            }
        }
    }
    if csvs.len() > 1 {
        let _ = writeln!(s, "unset multiplot");
    }
    std::fs::create_dir_all(out).map_err(|e| Error::Io { path: out.display().to_string(), message: e.to_string() })?;
    let path = out.join("plot.gp");
    std::fs::write(&path, s).map_err(|e| Error::Io { path: path.display().to_string(), message: e.to_string() })?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scratch(name: &str) -> PathBuf {
        let d = std::env::temp_dir().join(format!("homokin-plot-{name}-{}", std::process::id()));
        std::fs::create_dir_all(&d).unwrap();
        d
    }

    #[test]
    fn modes_get_one_series_per_k_on_log_axes() {
        let d = scratch("modes");
        let f = d.join("modes.csv");
        std::fs::write(&f, "epsilon,k,e_k\n0.1,0,1\n0.1,1,2\n0.1,2,3\n0.05,0,1\n0.05,1,2\n0.05,2,3\n").unwrap();
        let script = std::fs::read_to_string(emit_plot_script(&[f], &d).unwrap()).unwrap();
        assert!(script.contains("set logscale xy"));
        assert_eq!(script.matches("title 'k = ").count(), 3);
        assert!(!script.contains("multiplot"));
        std::fs::remove_dir_all(&d).ok();
    }

    #[test]
    fn norm_diff_is_linear() {
        let d = scratch("norm");
        let f = d.join("norm_diff.csv");
        std::fs::write(&f, "epsilon,norm_diff\n0.1,0.5\n").unwrap();
        let script = std::fs::read_to_string(emit_plot_script(&[f], &d).unwrap()).unwrap();
        assert!(!script.lines().any(|l| l.starts_with("set logscale")));
        std::fs::remove_dir_all(&d).ok();
    }

    #[test]
    fn both_make_two_panels() {
        let d = scratch("both");
        let a = d.join("modes.csv");
        let b = d.join("norm_diff.csv");
        std::fs::write(&a, "epsilon,k,e_k\n0.1,0,1\n").unwrap();
        std::fs::write(&b, "epsilon,norm_diff\n0.1,0.5\n").unwrap();
        let script = std::fs::read_to_string(emit_plot_script(&[a, b], &d).unwrap()).unwrap();
        assert!(script.contains("set multiplot layout 1,2"));
        assert!(script.contains("(a) convergence rate") && script.contains("(b) norm difference"));
        std::fs::remove_dir_all(&d).ok();
    }

    #[test]
    fn missing_file_is_named() {
        let d = scratch("missing");
        let err = emit_plot_script(&[d.join("absent.csv")], &d).unwrap_err();
        assert!(err.to_string().contains("absent.csv"));
        std::fs::remove_dir_all(&d).ok();
    }
}
