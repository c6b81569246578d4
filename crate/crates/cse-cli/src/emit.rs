//! Artifact emission. Every file embeds the resolved config and seed so a
//! run can be reproduced exactly from any one of its outputs; nothing here
//! records wall-clock time or worker count, which keeps equal-seed runs
//! byte-identical.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use cse_core::{
    BootstrapDiagnostic, CalibrationResult, ConfidenceSet, Estimand, Platten, SimBatch, Threshold,
    ValidationReport,
};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

/// Printed into CSV cells for a threshold below every statistic.
pub const REJECT_NOTHING_CELL: &str = "REJECT_NOTHING";

/// Identifies the run that produced an artifact. The seed is the resolved
/// one (after any --seed override), so re-running the embedded config
/// reproduces the artifact bit for bit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub master_seed: u64,
    pub config: RunConfig,
}

impl Provenance {
    pub fn new(command: &str, config: &RunConfig) -> Provenance {
        Provenance {
            tool: "cse".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            master_seed: config.master_seed,
            config: config.clone(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ValidationArtifact {
    pub provenance: Provenance,
    pub platten: Platten,
    pub report: ValidationReport,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CalibrationArtifact {
    pub provenance: Provenance,
    pub platten: Platten,
    pub result: CalibrationResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<BootstrapDiagnostic>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GridArtifact {
    pub provenance: Provenance,
    pub platten: Platten,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ConfsetArtifact {
    pub provenance: Provenance,
    pub estimand: Estimand,
    pub confidence_set: ConfidenceSet,
}

/// 17 significant digits: the shortest count that survives a decimal round
/// trip for every f64, so plots read from CSV match the JSON exactly.
pub fn float_cell(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn threshold_cell(threshold: Threshold) -> String {
    match threshold {
        Threshold::RejectNothing => REJECT_NOTHING_CELL.to_string(),
        Threshold::Value(x) => float_cell(x),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)
}

/// CSV with a single '#' provenance line above the header: '.' decimal
/// separator, no locale, comma delimiter.
pub fn write_csv(
    path: &Path,
    provenance: &Provenance,
    header: &[String],
    rows: &[Vec<String>],
) -> std::io::Result<()> {
    let mut text = format!("# {}\n", serde_json::to_string(provenance)?);
    text.push_str(&header.join(","));
    text.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text)
}

pub fn validation_header(dim: usize, lower_band: bool) -> Vec<String> {
    let mut header = vec!["tile_id".to_string()];
    header.extend((0..dim).map(|a| format!("theta_{a}")));
    header.extend(
        ["n", "false_rejections", "point_upper", "tile_upper", "q_star"]
            .map(str::to_string),
    );
    if lower_band {
        header.extend(["point_lower", "tile_lower"].map(str::to_string));
    }
    header
}

pub fn validation_rows(report: &ValidationReport, lower_band: bool) -> Vec<Vec<String>> {
    report
        .tiles
        .iter()
        .map(|tile| {
            let mut row = vec![tile.tile_id.to_string()];
            row.extend(tile.sim_point.iter().copied().map(float_cell));
            row.push(tile.n.to_string());
            row.push(tile.false_rejections.to_string());
            row.push(float_cell(tile.point_upper));
            row.push(float_cell(tile.tile_upper));
            row.push(float_cell(tile.q_star));
            if lower_band {
                // Absent halves only happen when lower_band was off, which
                // this branch excludes; empty cells keep the shape anyway.
                row.push(tile.point_lower.map(float_cell).unwrap_or_default());
                row.push(tile.tile_lower.map(float_cell).unwrap_or_default());
            }
            row
        })
        .collect()
}

pub fn calibration_header(dim: usize) -> Vec<String> {
    let mut header = vec!["tile_id".to_string()];
    header.extend((0..dim).map(|a| format!("theta_{a}")));
    header.extend(["n", "alpha_prime", "k", "lambda", "q_star"].map(str::to_string));
    header
}

pub fn calibration_rows(result: &CalibrationResult, platten: &Platten) -> Vec<Vec<String>> {
    result
        .tiles
        .iter()
        .map(|tile| {
            let mut row = vec![tile.tile_id.to_string()];
            let sim_point = &platten.tiles[tile.tile_id as usize].sim_point;
            row.extend(sim_point.iter().copied().map(float_cell));
            row.push(tile.n.to_string());
            row.push(float_cell(tile.alpha_prime));
            row.push(tile.k.to_string());
            row.push(threshold_cell(tile.lambda));
            row.push(float_cell(tile.q_star));
            row
        })
        .collect()
}

pub fn grid_header(dim: usize) -> Vec<String> {
    let mut header = vec!["tile_id".to_string()];
    header.extend((0..dim).map(|a| format!("center_{a}")));
    header.extend((0..dim).map(|a| format!("lower_{a}")));
    header.extend((0..dim).map(|a| format!("upper_{a}")));
    header.extend(["config_mask", "sim_count", "volume"].map(str::to_string));
    header
}

pub fn grid_rows(platten: &Platten) -> Vec<Vec<String>> {
    platten
        .tiles
        .iter()
        .enumerate()
        .map(|(id, tile)| {
            let mut row = vec![id.to_string()];
            row.extend(tile.sim_point.iter().copied().map(float_cell));
            row.extend(tile.lower.iter().copied().map(float_cell));
            row.extend(tile.upper.iter().copied().map(float_cell));
            row.push(tile.config_mask().to_string());
            row.push(tile.sim_count.to_string());
            row.push(float_cell(tile.volume()));
            row
        })
        .collect()
}

/// Per-tile simulation batches as a single binary file: u64 LE batch count,
/// then each batch in the engine's own binary layout. Kept beside the
/// calibration JSON so resampling diagnostics can rerun without simulating.
pub fn write_batches(path: &Path, batches: &[SimBatch]) -> Result<(), cse_core::Error> {
    let file = fs::File::create(path).map_err(cse_core::Error::from)?;
    let mut writer = BufWriter::new(file);
    writer
        .write_all(&(batches.len() as u64).to_le_bytes())
        .map_err(cse_core::Error::from)?;
    for batch in batches {
        batch.write_binary(&mut writer)?;
    }
    writer.flush().map_err(cse_core::Error::from)
}

#[cfg(test)]
pub fn read_batches(path: &Path) -> Result<Vec<SimBatch>, cse_core::Error> {
    use std::io::Read;

    let file = fs::File::open(path).map_err(cse_core::Error::from)?;
    let mut reader = std::io::BufReader::new(file);
    let mut count_bytes = [0u8; 8];
    reader
        .read_exact(&mut count_bytes)
        .map_err(cse_core::Error::from)?;
    let count = u64::from_le_bytes(count_bytes);
    let mut batches = Vec::with_capacity(count as usize);
    for _ in 0..count {
        batches.push(SimBatch::read_binary(&mut reader)?);
    }
    Ok(batches)
}
