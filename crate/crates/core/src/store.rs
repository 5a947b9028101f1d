//! Newline-delimited JSON snapshots of the normalized tables.
//!
//! Layout under the snapshot directory:
//!
//! ```text
//! manifest.json     format version, data version, counts
//! policies.jsonl    one PolicyMeta per line
//! adoptions.jsonl   one AdoptionRecord per line
//! panel.jsonl       optional; header line then one state-year per line
//! ```

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ingest::{AdoptionRecord, AdoptionTable, CovariatePanel, LoadReport, PolicyMeta, StateCode, YearRange};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("corrupt snapshot {path} line {line}: {reason}")]
    Corrupt { path: String, line: usize, reason: String },
    #[error("unsupported snapshot format version {0}")]
    Version(u32),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.display().to_string(), source }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub data_version: String,
    pub policies: usize,
    pub records: usize,
    pub has_panel: bool,
    pub report: LoadReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataSnapshot {
    pub table: AdoptionTable,
    /// Imputed panel, when covariates were supplied.
    pub panel: Option<CovariatePanel>,
}

#[derive(Serialize, Deserialize)]
struct PanelHeader {
    states: Vec<StateCode>,
    years: YearRange,
    factors: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct PanelLine {
    state: StateCode,
    year: i32,
    values: Vec<Option<f64>>,
    observed: Vec<bool>,
}

impl DataSnapshot {
    /// Content hash over the canonical serialization of both tables.
    pub fn data_version(&self) -> String {
        let mut h = Sha256::new();
        for line in policy_lines(&self.table).chain(record_lines(&self.table)) {
            h.update(line.as_bytes());
            h.update(b"\n");
        }
        if let Some(panel) = &self.panel {
            for line in panel_lines(panel) {
                h.update(line.as_bytes());
                h.update(b"\n");
            }
        }
        hex::encode(h.finalize())
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            format_version: FORMAT_VERSION,
            data_version: self.data_version(),
            policies: self.table.policies.len(),
            records: self.table.records.len(),
            has_panel: self.panel.is_some(),
            report: self.table.report.clone(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<Manifest, StoreError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        write_lines(&dir.join("policies.jsonl"), policy_lines(&self.table))?;
        write_lines(&dir.join("adoptions.jsonl"), record_lines(&self.table))?;
        let panel_path = dir.join("panel.jsonl");
        match &self.panel {
            Some(panel) => write_lines(&panel_path, panel_lines(panel))?,
            None if panel_path.exists() => fs::remove_file(&panel_path).map_err(io_err(&panel_path))?,
            None => {}
        }
        let manifest = self.manifest();
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest).expect("manifest serializes"))
            .map_err(io_err(&path))?;
        Ok(manifest)
    }

    pub fn load(dir: &Path) -> Result<DataSnapshot, StoreError> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
            path: path.display().to_string(),
            line: e.line(),
            reason: e.to_string(),
        })?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(StoreError::Version(manifest.format_version));
        }
        let policies: Vec<PolicyMeta> = read_lines(&dir.join("policies.jsonl"))?;
        let records: Vec<AdoptionRecord> = read_lines(&dir.join("adoptions.jsonl"))?;
        let mut table =
            AdoptionTable::from_parts(records, policies.into_iter().map(|p| (p.policy_id.clone(), p)).collect());
        table.report = manifest.report;
        let panel = if manifest.has_panel { Some(read_panel(&dir.join("panel.jsonl"))?) } else { None };
        Ok(DataSnapshot { table, panel })
    }
}

fn policy_lines(table: &AdoptionTable) -> impl Iterator<Item = String> + '_ {
    table.policies.values().map(|p| serde_json::to_string(p).expect("policy serializes"))
}

fn record_lines(table: &AdoptionTable) -> impl Iterator<Item = String> + '_ {
    table.records.iter().map(|r| serde_json::to_string(r).expect("record serializes"))
}

fn panel_lines(panel: &CovariatePanel) -> impl Iterator<Item = String> + '_ {
    let header = PanelHeader { states: panel.states.clone(), years: panel.years, factors: panel.factors.clone() };
    let header = std::iter::once(serde_json::to_string(&header).expect("header serializes"));
    let rows = panel.states.iter().enumerate().flat_map(move |(s, &state)| {
        panel.years.years().enumerate().map(move |(y, year)| {
            let line = PanelLine {
                state,
                year,
                values: (0..panel.factors.len())
                    .map(|f| Some(panel.value_at(s, y, f)).filter(|v| !v.is_nan()))
                    .collect(),
                observed: (0..panel.factors.len()).map(|f| panel.observed_at(s, y, f)).collect(),
            };
            serde_json::to_string(&line).expect("panel line serializes")
        })
    });
    header.chain(rows)
}

fn write_lines(path: &Path, lines: impl Iterator<Item = String>) -> Result<(), StoreError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for line in lines {
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, StoreError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
            path: path.display().to_string(),
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

fn read_panel(path: &Path) -> Result<CovariatePanel, StoreError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut lines = BufReader::new(file).lines();
    let corrupt = |line: usize, reason: String| StoreError::Corrupt { path: path.display().to_string(), line, reason };
    let header: PanelHeader = match lines.next() {
        Some(l) => serde_json::from_str(&l.map_err(io_err(path))?).map_err(|e| corrupt(1, e.to_string()))?,
        None => return Err(corrupt(1, "missing header".into())),
    };
    let mut panel = CovariatePanel::new(header.states, header.years, header.factors);
    for (i, line) in lines.enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: PanelLine = serde_json::from_str(&line).map_err(|e| corrupt(i + 2, e.to_string()))?;
        let s =
            panel.state_index(row.state).ok_or_else(|| corrupt(i + 2, format!("state {} not in header", row.state)))?;
        let y = panel.year_index(row.year).ok_or_else(|| corrupt(i + 2, format!("year {} not in header", row.year)))?;
        if row.values.len() != panel.factors.len() || row.observed.len() != panel.factors.len() {
            return Err(corrupt(i + 2, "factor count mismatch".into()));
        }
        for (f, (v, o)) in row.values.iter().zip(&row.observed).enumerate() {
            panel.set_cell(s, y, f, v.unwrap_or(f64::NAN), *o);
        }
    }
    Ok(panel)
}
