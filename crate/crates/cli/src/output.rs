//! Run directories: CSV/JSON artifacts and the checksum manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use mopinn_core::driver::{GridRow, Metrics, RunReport};

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub files: Vec<ManifestEntry>,
}

pub fn sha256_file(path: &Path) -> Result<(String, u64), CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

/// Collects the files written into one directory and checksums them.
pub struct RunDir {
    dir: PathBuf,
    command: String,
    files: Vec<ManifestEntry>,
}

impl RunDir {
    pub fn create(dir: &Path, command: &str) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf(), command: command.to_string(), files: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Runs `write` on the path of `name` and records the result.
    pub fn write<E: Into<CliError>>(&mut self, name: &str, write: impl FnOnce(&Path) -> Result<(), E>) -> Result<(), CliError> {
        let path = self.path(name);
        write(&path).map_err(Into::into)?;
        let (sha256, bytes) = sha256_file(&path)?;
        self.files.retain(|f| f.path != name);
        self.files.push(ManifestEntry { path: name.to_string(), bytes, sha256 });
        Ok(())
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        self.write(name, |p| fs::write(p, text).map_err(|e| CliError::io(p, e)))
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).expect("reports always serialize");
        self.write_text(name, &(text + "\n"))
    }

    /// Deletes leftovers of an earlier command in the same directory.
    pub fn remove_stale(&self, names: &[&str]) -> Result<(), CliError> {
        for name in names {
            let p = self.path(name);
            match fs::remove_file(&p) {
                Err(e) if e.kind() != std::io::ErrorKind::NotFound => return Err(CliError::io(&p, e)),
                _ => {}
            }
        }
        Ok(())
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.files
    }

    /// Writes the manifest and returns it.
    pub fn finish(self) -> Result<Manifest, CliError> {
        let manifest = Manifest { command: self.command, files: self.files };
        let path = self.dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(&manifest).expect("manifests always serialize") + "\n";
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(manifest)
    }
}

fn num(v: f64) -> String {
    format!("{v:.17e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn csv_io(path: &Path, e: csv::Error) -> CliError {
    CliError::io(path, e)
}

pub const METRICS_HEADER: [&str; 9] = ["problem", "mode", "variant", "eta", "seed", "mse", "mae", "physics_estimate", "physics_l1"];

pub fn metrics_row(r: &RunReport) -> Vec<String> {
    let Metrics { mse, mae, physics_estimate, physics_l1 } = r.metrics;
    vec![
        r.problem.to_string(),
        r.mode.to_string(),
        r.variant.to_string(),
        format!("{:.2}", r.eta),
        r.seed.to_string(),
        num(mse),
        num(mae),
        opt(physics_estimate),
        opt(physics_l1),
    ]
}

pub fn write_metrics_csv(path: &Path, reports: &[&RunReport]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(METRICS_HEADER).map_err(|e| csv_io(path, e))?;
    for r in reports {
        w.write_record(metrics_row(r)).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_solution_csv(path: &Path, rows: &[GridRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(["x", "t", "u_pred", "u_true", "abs_err"]).map_err(|e| csv_io(path, e))?;
    for r in rows {
        w.write_record([num(r.x), num(r.t), num(r.u_pred), num(r.u_true), num(r.abs_err)]).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}
