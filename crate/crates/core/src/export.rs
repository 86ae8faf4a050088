//! CSV and JSON export of sweep results, and the matching readers.
//!
//! Schema version 1. CSV files are RFC 4180 with a header row; empty cells
//! mean "not applicable". Files written by a CSV export:
//!
//! - `records.csv`: one row per hypersphere and grid cell. Columns: `slow`,
//!   `fast`, `index`, `seed`, `phi`, `mu`, `useful_baseline`, `useful_inflated`,
//!   `category` (succeeded | helped | indistinguishable | hurt | failed),
//!   `shadow_time`, `proposed`, `applied`, `reason` (set for quarantined rows).
//! - `tallies.csv`: one row per (slow, phi, mu) cell. `helped` and `hurt`
//!   include the nested `succeeded` and `failed` counts; the `*_only` columns
//!   do not.
//! - `series.csv`: averaged RMSE and AC against time, per cell, for the
//!   baseline and inflated runs over all (`all`) or only succeeded
//!   (`succeeded`) hyperspheres.
//! - `config.toml`: the effective configuration.
//!
//! A JSON export writes `results.json`, holding `format`, `schema_version`,
//! and the whole result with the same field names as the CSV columns.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{HypersphereRecord, SeriesRow, SweepResult, TallyRow};

pub const SCHEMA_VERSION: u32 = 1;
pub const RESULTS_FORMAT: &str = "l96-sweep";

pub const RECORDS_FILE: &str = "records.csv";
pub const TALLIES_FILE: &str = "tallies.csv";
pub const SERIES_FILE: &str = "series.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const JSON_FILE: &str = "results.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

impl FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(Error::InvalidInput(format!("unknown export format `{other}`"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format: String,
    schema_version: u32,
    result: T,
}

/// Writes `result` under `dir` and returns the paths written.
pub fn export_results(result: &SweepResult, format: ExportFormat, dir: &Path) -> Result<Vec<PathBuf>> {
    if result.records.is_empty() {
        return Err(Error::InvalidInput("nothing to export: no records".into()));
    }
    fs::create_dir_all(dir)?;
    match format {
        ExportFormat::Csv => {
            let mut out = vec![
                write_csv(&dir.join(RECORDS_FILE), &result.records)?,
                write_csv(&dir.join(TALLIES_FILE), &result.tallies)?,
                write_csv(&dir.join(SERIES_FILE), &result.series)?,
            ];
            let path = dir.join(CONFIG_FILE);
            fs::write(&path, result.config.to_toml()?)?;
            out.push(path);
            Ok(out)
        }
        ExportFormat::Json => {
            let path = dir.join(JSON_FILE);
            let env = Envelope { format: RESULTS_FORMAT.into(), schema_version: SCHEMA_VERSION, result };
            fs::write(&path, serde_json::to_string_pretty(&env)?)?;
            Ok(vec![path])
        }
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<PathBuf> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(path.to_path_buf())
}

fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn read_records_csv(path: &Path) -> Result<Vec<HypersphereRecord>> {
    read_csv(path)
}

pub fn read_tallies_csv(path: &Path) -> Result<Vec<TallyRow>> {
    read_csv(path)
}

pub fn read_series_csv(path: &Path) -> Result<Vec<SeriesRow>> {
    read_csv(path)
}

pub fn read_results_json(path: &Path) -> Result<SweepResult> {
    let env: Envelope<SweepResult> = serde_json::from_str(&fs::read_to_string(path)?)?;
    if env.format != RESULTS_FORMAT {
        return Err(Error::InvalidInput(format!("{} is not a sweep result (format `{}`)", path.display(), env.format)));
    }
    if env.schema_version != SCHEMA_VERSION {
        return Err(Error::InvalidInput(format!(
            "{} has schema version {}, this build reads {SCHEMA_VERSION}",
            path.display(),
            env.schema_version
        )));
    }
    Ok(env.result)
}
