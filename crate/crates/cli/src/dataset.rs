//! Dataset files: measured sets per centre plus optional raw Ramsey traces
//! that supply the nuclear lines.

use std::path::{Path, PathBuf};

use nvspin::inversion::MeasuredSet;
use nvspin::Branch;
use serde::{Deserialize, Serialize};

use crate::Failure;

pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub version: u32,
    pub centers: Vec<CenterEntry>,
    #[serde(default)]
    pub traces: Vec<TraceEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterEntry {
    /// Cohort tag used by the identity report.
    pub cohort: String,
    pub set: MeasuredSet,
}

/// A Ramsey trace for one nuclear line.
///
/// The line's magnitude is `|rf_drive_hz| + δf` with `δf` the fitted
/// detuning; its sign is that of `rf_drive_hz`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub center_id: String,
    #[serde(rename = "mS")]
    pub ms: i32,
    pub branch: Branch,
    pub rf_drive_hz: f64,
    /// CSV file relative to the dataset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Simulate the trace with this detuning instead of reading a file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate_detuning_hz: Option<f64>,
}

impl DatasetFile {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
        let ds: DatasetFile = serde_json::from_str(&text)
            .map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
        ds.check()?;
        Ok(ds)
    }

    fn check(&self) -> Result<(), Failure> {
        if self.version != DATASET_VERSION {
            return Err(Failure::Validation(format!(
                "unsupported dataset version {} (expected {DATASET_VERSION})",
                self.version
            )));
        }
        let mut ids: Vec<&str> = self
            .centers
            .iter()
            .map(|c| c.set.center_id.as_str())
            .collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Failure::Validation("duplicate center_id in dataset".into()));
        }
        for t in &self.traces {
            if ids.binary_search(&t.center_id.as_str()).is_err() {
                return Err(Failure::Validation(format!(
                    "trace refers to unknown centre {}",
                    t.center_id
                )));
            }
            if t.path.is_some() == t.simulate_detuning_hz.is_some() {
                return Err(Failure::Validation(format!(
                    "{}: a trace needs exactly one of path or simulate_detuning_hz",
                    t.center_id
                )));
            }
            if !(t.rf_drive_hz.is_finite() && t.rf_drive_hz != 0.0) {
                return Err(Failure::Validation(format!(
                    "{}: rf_drive_hz must be finite and non-zero",
                    t.center_id
                )));
            }
        }
        Ok(())
    }
}
