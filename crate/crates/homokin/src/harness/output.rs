//! CSV persistence and the run manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One CSV field.
#[derive(Clone, Debug, PartialEq)]
pub enum Field {
    Real(f64),
    Int(u64),
    Text(String),
}

impl Field {
    fn render(&self) -> String {
        match self {
            // 17 significant digits round-trip every f64.
            Self::Real(v) => format!("{v:.16e}"),
            Self::Int(v) => v.to_string(),
            Self::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Field {
    fn from(v: f64) -> Self {
        Self::Real(v)
    }
}

impl From<usize> for Field {
    fn from(v: usize) -> Self {
        Self::Int(v as u64)
    }
}

impl From<&str> for Field {
    fn from(v: &str) -> Self {
        Self::Text(v.to_string())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Field>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Field>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io { path: "<csv buffer>".into(), message: e.to_string() };
        w.write_record(&self.header).map_err(io)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Field::render)).map_err(io)?;
        }
        w.into_inner().map_err(|e| Error::Io { path: "<csv buffer>".into(), message: e.to_string() })
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), message: e.to_string() }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Files written by one run, in write order.
#[derive(Clone, Debug, Default)]
pub struct Artifacts {
    pub dir: PathBuf,
    pub files: Vec<(PathBuf, String)>,
}

impl Artifacts {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        Ok(Self { dir, files: Vec::new() })
    }

    pub fn write_table(&mut self, name: &str, table: &Table) -> Result<PathBuf> {
        self.write_bytes(name, &table.to_bytes()?)
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
        self.files.push((path.clone(), sha256_hex(bytes)));
        Ok(path)
    }

    /// `manifest.txt`: inputs, code version, grids, hashes and wall time.
    pub fn write_manifest(&self, command: &str, settings: &[(String, String)], wall_seconds: f64) -> Result<PathBuf> {
        let mut text = String::new();
        let _ = writeln!(text, "program = homokin {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(text, "command = {command}");
        for (k, v) in settings {
            let _ = writeln!(text, "{k} = {v}");
        }
        let _ = writeln!(text, "wall_seconds = {wall_seconds:.3}");
        for (path, hash) in &self.files {
            let rel = path.strip_prefix(&self.dir).unwrap_or(path);
            let _ = writeln!(text, "file {} sha256 {hash}", rel.display());
        }
        let path = self.dir.join("manifest.txt");
        std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_dialect() {
        let mut t = Table::new(&["epsilon", "k", "e_k"]);
        t.push(vec![0.1.into(), 3usize.into(), (1.0 / 3.0).into()]);
        let s = String::from_utf8(t.to_bytes().unwrap()).unwrap();
        assert_eq!(s, "epsilon,k,e_k\n1.0000000000000001e-1,3,3.3333333333333331e-1\n");
        assert!(!s.contains('\r'));
    }

    #[test]
    fn reals_round_trip() {
        for v in [0.1, 1.0 / 3.0, 6.02e23, -1e-300, 2.0f64.sqrt()] {
            let s = Field::Real(v).render();
            assert_eq!(s.parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn known_hash() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
