//! Result bundles: CSV tables, a JSON summary and a hashed manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::compare::{compare_with_theory, ComparisonReport};
use super::scenario::Scenario;

/// Column-oriented numeric table written as one CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    /// File stem.
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: &[&str]) -> Self {
        Self { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    /// Builds a table from equally long columns.
    pub fn from_columns(name: impl Into<String>, columns: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let n = columns.first().map_or(0, |c| c.1.len());
        if columns.iter().any(|c| c.1.len() != n) {
            return Err(Error::Precondition("table columns differ in length".into()));
        }
        Ok(Self {
            name: name.into(),
            rows: (0..n).map(|i| columns.iter().map(|c| c.1[i]).collect()).collect(),
            columns: columns.into_iter().map(|c| c.0).collect(),
        })
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    /// CSV text; numbers in shortest round-trip form.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

/// Measured column checked against a theory column of the same table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overlay {
    pub table: String,
    pub measured: String,
    pub theory: String,
    /// Largest accepted relative residual.
    pub tolerance: f64,
}

impl Overlay {
    pub fn new(table: &str, measured: &str, theory: &str, tolerance: f64) -> Self {
        Self { table: table.into(), measured: measured.into(), theory: theory.into(), tolerance }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultBundle {
    pub scenario: Scenario,
    pub tables: Vec<Table>,
    pub overlays: Vec<Overlay>,
    pub summary: serde_json::Map<String, serde_json::Value>,
}

impl ResultBundle {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scenario: String,
    pub kind: String,
    pub seed: u64,
    pub crate_version: String,
    /// SHA-256 of the scenario's canonical JSON.
    pub config_hash: String,
    pub files: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes every table, `scenario.json`, `summary.json` (with the theory
/// comparison) and `manifest.json` into `dir`.
pub fn write_bundle(bundle: &ResultBundle, dir: &Path) -> Result<(Manifest, ComparisonReport)> {
    fs::create_dir_all(dir)?;
    let report = compare_with_theory(bundle)?;
    let mut files = Vec::new();
    let mut emit = |name: String, bytes: Vec<u8>| -> Result<()> {
        let path: PathBuf = dir.join(&name);
        fs::write(&path, &bytes)?;
        files.push(ManifestEntry { path: name, sha256: sha256_hex(&bytes), bytes: bytes.len() as u64 });
        Ok(())
    };
    for table in &bundle.tables {
        emit(format!("{}.csv", table.name), table.to_csv()?)?;
    }
    let config = bundle.scenario.to_json()?;
    emit("scenario.json".into(), config.clone().into_bytes())?;
    let summary = serde_json::json!({
        "scenario": bundle.scenario.name,
        "kind": bundle.scenario.kind.label(),
        "results": bundle.summary,
        "comparison": report,
    });
    emit("summary.json".into(), serde_json::to_vec_pretty(&summary)?)?;

    let manifest = Manifest {
        scenario: bundle.scenario.name.clone(),
        kind: bundle.scenario.kind.label().into(),
        seed: bundle.scenario.seed,
        crate_version: env!("CARGO_PKG_VERSION").into(),
        config_hash: sha256_hex(config.as_bytes()),
        files,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest)?)?;
    Ok((manifest, report))
}

/// Re-hashes the files listed in `dir/manifest.json`; returns the paths
/// whose content no longer matches.
pub fn verify_manifest(dir: &Path) -> Result<Vec<String>> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
    let mut stale = Vec::new();
    for entry in &manifest.files {
        match fs::read(dir.join(&entry.path)) {
            Ok(bytes) if sha256_hex(&bytes) == entry.sha256 => {}
            _ => stale.push(entry.path.clone()),
        }
    }
    Ok(stale)
}
