//! Report store: one directory per experiment.
//!
//! ```text
//! <dir>/summary.json               ExperimentSummary
//! <dir>/long.csv                   strategy,size,seed,he,ir (plot-ready, thinned to ~1000 points per cell)
//! <dir>/cells/<strategy>_<size>_<seed>.csv   full per-document curve
//! ```

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CellResult, ComparisonTable, ExperimentConfig, MeanSe, Result, SimulatorError};

pub const REPORT_SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub experiment_id: String,
    pub n: usize,
    pub n_included: usize,
    pub prevalence: f64,
    pub config: ExperimentConfig,
    pub comparison: ComparisonTable,
    /// Empirical HE at target for random screening order, over the same seeds.
    pub no_ml_random_order: Option<MeanSe>,
    pub cells: Vec<CellResult>,
}

/// Writes the summary, per-cell curves and the long-format table.
pub fn write_report(dir: &Path, summary: &ExperimentSummary, cells: &[CellResult]) -> Result<()> {
    fs::create_dir_all(dir.join("cells"))?;
    let f = BufWriter::new(File::create(dir.join(REPORT_SUMMARY_FILE))?);
    serde_json::to_writer_pretty(f, summary)?;

    let mut long = csv::Writer::from_path(dir.join("long.csv"))?;
    long.write_record(["strategy", "size", "seed", "he", "ir"])?;
    for cell in cells {
        let Some(curve) = &cell.curve else { continue };
        curve.write_csv(File::create(dir.join("cells").join(format!("{}.csv", cell.key())))?)?;
        let step = (curve.points.len() / 1000).max(1);
        for p in curve.thinned(step).points {
            long.write_record([
                cell.strategy.to_string(),
                cell.training_size.to_string(),
                cell.seed.to_string(),
                p.he.to_string(),
                p.ir.to_string(),
            ])?;
        }
    }
    long.flush()?;
    Ok(())
}

pub fn read_summary(dir: &Path) -> Result<ExperimentSummary> {
    let path = dir.join(REPORT_SUMMARY_FILE);
    if !path.exists() {
        return Err(SimulatorError::NoResults(dir.display().to_string()));
    }
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}
