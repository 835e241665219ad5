//! Grid files: a headerless CSV of `n1` rows by `n2` columns, `NaN` where a
//! value is missing, with an optional JSON sidecar of the same stem.

use std::path::{Path, PathBuf};

use gridfit::lattice::{DesignTag, EmbeddingSpec, LatticeSpec, ObservationMask};
use gridfit::problem::Dataset;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridHeader {
    pub n1: usize,
    pub n2: usize,
    pub s: f64,
    pub missing: usize,
    #[serde(default)]
    pub provenance: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub header: GridHeader,
    /// Row-major, `NaN` where missing.
    pub values: Vec<f64>,
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// Shortest representation that parses back to the same bits.
fn cell(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v}")
    }
}

pub fn write_grid(path: &Path, grid: &Grid) -> Result<(), CliError> {
    let h = &grid.header;
    if grid.values.len() != h.n1 * h.n2 {
        return Err(CliError::Io(format!("{}: grid has {} values for {}x{}", path.display(), grid.values.len(), h.n1, h.n2)));
    }
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(|e| CliError::io(path, e))?;
    for row in grid.values.chunks(h.n2) {
        w.write_record(row.iter().map(|v| cell(*v)))?;
    }
    w.flush()?;
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(h).expect("header serializes");
    std::fs::write(&side, text + "\n").map_err(|e| CliError::io(&side, e))
}

fn parse_cell(s: &str) -> Option<f64> {
    let s = s.trim();
    if s.eq_ignore_ascii_case("nan") || s.eq_ignore_ascii_case("na") || s.is_empty() {
        return Some(f64::NAN);
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Reads a grid; without a sidecar the shape comes from the CSV and the
/// side length from `default_s`.
pub fn read_grid(path: &Path, default_s: f64) -> Result<Grid, CliError> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| CliError::io(path, e))?;
    let mut values = Vec::new();
    let mut n2 = None;
    let mut n1 = 0;
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::io(path, e))?;
        match n2 {
            None => n2 = Some(rec.len()),
            Some(w) if w != rec.len() => {
                return Err(CliError::io(path, format!("row {} has {} columns, expected {w}", i + 1, rec.len())));
            }
            _ => {}
        }
        for (j, f) in rec.iter().enumerate() {
            let v = parse_cell(f).ok_or_else(|| CliError::io(path, format!("row {}, column {}: not a number: {f:?}", i + 1, j + 1)))?;
            values.push(v);
        }
        n1 += 1;
    }
    let n2 = n2.ok_or_else(|| CliError::io(path, "empty grid"))?;
    let missing = values.iter().filter(|v| v.is_nan()).count();
    let side = sidecar_path(path);
    let header = if side.exists() {
        let text = std::fs::read_to_string(&side).map_err(|e| CliError::io(&side, e))?;
        let h: GridHeader = serde_json::from_str(&text).map_err(|e| CliError::io(&side, e))?;
        if (h.n1, h.n2) != (n1, n2) {
            return Err(CliError::io(path, format!("grid is {n1}x{n2} but the sidecar says {}x{}", h.n1, h.n2)));
        }
        if h.missing != missing {
            return Err(CliError::io(path, format!("grid has {missing} missing values but the sidecar says {}", h.missing)));
        }
        h
    } else {
        GridHeader {
            n1,
            n2,
            s: default_s,
            missing,
            provenance: serde_json::Value::Null,
        }
    };
    Ok(Grid { header, values })
}

impl Grid {
    pub fn observed(&self) -> usize {
        self.values.len() - self.header.missing
    }

    /// Observed values in lexicographic order, with the mask tagged as
    /// coming from a file.
    pub fn dataset(&self, r_factor: f64) -> Result<Dataset, CliError> {
        let h = &self.header;
        let emb = EmbeddingSpec::new(LatticeSpec::new(h.n1, h.n2, h.s)?, r_factor)?;
        let flags: Vec<bool> = self.values.iter().map(|v| !v.is_nan()).collect();
        let mask = ObservationMask::from_base_flags(&emb, &flags, DesignTag::File)?;
        let z_o: Vec<f64> = self.values.iter().copied().filter(|v| !v.is_nan()).collect();
        Ok(Dataset::new(emb, mask, z_o)?)
    }
}

/// The base-lattice part of an embedding-length field, row-major.
pub fn base_values(emb: &EmbeddingSpec, field: &[f64]) -> Vec<f64> {
    (0..emb.base.sites()).map(|k| field[emb.base_to_embedding(k)]).collect()
}
