//! Traces to fits to absolute frequencies to parameter estimates to the
//! cohort report, plus the synthetic seven-centre fixture.

use std::fmt::Write as _;
use std::fs::File;
use std::path::{Path, PathBuf};

use nvspin::constants::{A_PAR_COMBINED, P_COMBINED, RAMSEY_DETUNING_MEASURED};
use nvspin::hamiltonian::exact_nuclear_frequencies;
use nvspin::identity::{cohort_report, CenterRecord, CohortConfig, CohortReport};
use nvspin::inversion::{estimate, MeasuredSet, ParamEstimate, ParamModel, TransitionRecord};
use nvspin::ramsey::{self, FitResult, RamseyConfig, RamseyTrace};
use nvspin::{Branch, NVParams, NuclearTransition, Projection};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{CenterEntry, DatasetFile, TraceEntry, DATASET_VERSION};
use crate::Failure;

pub const BUNDLE_VERSION: u32 = 1;
/// Microwave line sigma in the fixture (Hz).
pub const FIXTURE_MW_SIGMA_HZ: f64 = 1e3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFit {
    #[serde(rename = "mS")]
    pub ms: i32,
    pub branch: Branch,
    pub rf_drive_hz: f64,
    pub fit: FitResult,
    pub freq_hz: f64,
    pub sigma_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterResult {
    pub center_id: String,
    pub cohort: String,
    pub trace_fits: Vec<TraceFit>,
    pub estimate: ParamEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsBundle {
    pub version: u32,
    pub model: ParamModel,
    pub seed: u64,
    pub centers: Vec<CenterResult>,
    pub cohort: CohortReport,
}

fn trace_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index as u64)
}

fn load_trace(
    t: &TraceEntry,
    index: usize,
    base: &Path,
    seed: u64,
) -> Result<RamseyTrace, Failure> {
    if let Some(rel) = &t.path {
        let path = base.join(rel);
        let file = File::open(&path)
            .map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
        return RamseyTrace::read_csv(file)
            .map_err(|e| Failure::Validation(format!("{}: {e}", path.display())));
    }
    let mut cfg = RamseyConfig::paper_scale(trace_seed(seed, index));
    cfg.true_detuning = t.simulate_detuning_hz.unwrap_or(RAMSEY_DETUNING_MEASURED);
    ramsey::simulate(&cfg).map_err(|e| Failure::Validation(format!("{}: {e}", t.center_id)))
}

fn fit_trace(t: &TraceEntry, trace: &RamseyTrace) -> Result<TraceFit, Failure> {
    let label = format!("{} mS={} {}", t.center_id, t.ms, t.branch);
    let fit = ramsey::fit(trace, None)
        .map_err(|e| Failure::Numerical(format!("Ramsey fit failed for {label}: {e}")))?;
    let (magnitude, sigma) = ramsey::absolute_frequency(t.rf_drive_hz.abs(), &fit)
        .map_err(|e| Failure::Numerical(format!("Ramsey fit failed for {label}: {e}")))?;
    Ok(TraceFit {
        ms: t.ms,
        branch: t.branch,
        rf_drive_hz: t.rf_drive_hz,
        freq_hz: t.rf_drive_hz.signum() * magnitude,
        sigma_hz: sigma,
        fit,
    })
}

fn run_center(
    entry: &CenterEntry,
    traces: &[(usize, &TraceEntry)],
    base: &Path,
    seed: u64,
    model: ParamModel,
) -> Result<CenterResult, Failure> {
    let mut set = entry.set.clone();
    let mut trace_fits = Vec::with_capacity(traces.len());
    for &(index, t) in traces {
        let fitted = fit_trace(t, &load_trace(t, index, base, seed)?)?;
        set.transitions
            .retain(|r| !(r.ms == t.ms && r.branch == t.branch));
        set.transitions.push(TransitionRecord {
            ms: t.ms,
            branch: t.branch,
            freq_hz: fitted.freq_hz,
            sigma_hz: fitted.sigma_hz,
        });
        trace_fits.push(fitted);
    }
    set.validate()
        .map_err(|e| Failure::Validation(e.to_string()))?;
    let estimate = estimate(&set, model)
        .map_err(|e| Failure::Numerical(format!("inversion failed for {}: {e}", set.center_id)))?;
    Ok(CenterResult {
        center_id: set.center_id.clone(),
        cohort: entry.cohort.clone(),
        trace_fits,
        estimate,
    })
}

/// Run the whole chain. Centres are processed on up to `jobs` threads; the
/// output is ordered by `center_id`.
pub fn run(
    ds: &DatasetFile,
    base: &Path,
    model: ParamModel,
    seed: u64,
    jobs: usize,
) -> Result<ResultsBundle, Failure> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let indexed: Vec<(usize, &TraceEntry)> = ds.traces.iter().enumerate().collect();
    let mut centers: Vec<CenterResult> = pool.install(|| {
        ds.centers
            .par_iter()
            .map(|c| {
                let mine: Vec<(usize, &TraceEntry)> = indexed
                    .iter()
                    .filter(|(_, t)| t.center_id == c.set.center_id)
                    .copied()
                    .collect();
                run_center(c, &mine, base, seed, model)
            })
            .collect::<Result<Vec<_>, Failure>>()
    })?;
    centers.sort_by(|a, b| a.center_id.cmp(&b.center_id));
    let records: Vec<CenterRecord> = centers
        .iter()
        .map(|c| CenterRecord {
            center_id: c.center_id.clone(),
            cohort: c.cohort.clone(),
            estimate: c.estimate.clone(),
        })
        .collect();
    let cohort = cohort_report(&records, &CohortConfig::default())
        .map_err(|e| Failure::Numerical(format!("identity report failed: {e}")))?;
    Ok(ResultsBundle {
        version: BUNDLE_VERSION,
        model,
        seed,
        centers,
        cohort,
    })
}

/// Per-line fit summary for plotting.
pub fn frequencies_csv(bundle: &ResultsBundle) -> String {
    let mut out = String::from(
        "center_id,mS,branch,rf_drive_hz,detuning_hz,detuning_sigma_hz,freq_hz,sigma_hz\n",
    );
    for c in &bundle.centers {
        for f in &c.trace_fits {
            let _ = writeln!(
                out,
                "{},{},{},{:e},{:e},{:e},{:e},{:e}",
                c.center_id,
                f.ms,
                f.branch,
                f.rf_drive_hz,
                f.fit.detuning,
                f.fit.detuning_sigma,
                f.freq_hz,
                f.sigma_hz
            );
        }
    }
    out
}

/// Offsets in `P` and `A∥` (Hz) of the seven fixture centres and their cohorts.
pub const FIXTURE_CENTERS: [(&str, &str, f64); 7] = [
    ("nv1", "far_from_SIL", 0.0),
    ("nv2", "far_from_SIL", 0.0),
    ("nv3", "far_from_SIL", 0.0),
    ("nv4", "far_from_SIL", 0.0),
    ("nv5", "far_from_SIL", 0.0),
    ("nv6", "in_SIL", 30.0),
    ("nv7", "in_SIL", 50.0),
];

/// Write the seven-centre dataset into `dir`: `dataset.json` plus one Ramsey
/// trace CSV per nuclear line. Without `noisy` the traces and microwave lines
/// are the noise-free expectations, so every centre sits exactly at its truth.
pub fn write_fixture(dir: &Path, seed: u64, noisy: bool) -> Result<PathBuf, Failure> {
    let io = |e: std::io::Error| Failure::Validation(format!("{}: {e}", dir.display()));
    let numeric = |e: nvspin::Error| Failure::Numerical(e.to_string());
    std::fs::create_dir_all(dir.join("traces")).map_err(io)?;
    let mut centers = Vec::new();
    let mut traces = Vec::new();
    for (k, &(id, cohort, offset)) in FIXTURE_CENTERS.iter().enumerate() {
        let truth = NVParams {
            p: P_COMBINED + offset,
            a_par: A_PAR_COMBINED + offset,
            ..NVParams::nominal()
        };
        let mut set =
            MeasuredSet::synthetic(id, &truth, Projection::Plus, 1.0, FIXTURE_MW_SIGMA_HZ)
                .map_err(numeric)?;
        if noisy {
            set = set.with_noise(trace_seed(seed, 1000 + k));
        }
        set.transitions.clear();
        centers.push(CenterEntry {
            cohort: cohort.to_string(),
            set,
        });
        let lines = exact_nuclear_frequencies(&truth).map_err(numeric)?;
        for t in NuclearTransition::all() {
            let index = traces.len();
            let f = lines.freq(t);
            let rf = f.signum() * (f.abs() - RAMSEY_DETUNING_MEASURED);
            let cfg = RamseyConfig::paper_scale(trace_seed(seed, index));
            let trace = if noisy {
                ramsey::simulate(&cfg)
            } else {
                ramsey::expected_trace(&cfg)
            }
            .map_err(numeric)?;
            let branch = match t.branch {
                Branch::Plus => "p",
                Branch::Minus => "m",
            };
            let rel = PathBuf::from("traces").join(format!("{id}_ms{}_{branch}.csv", t.ms.value()));
            trace
                .write_csv(File::create(dir.join(&rel)).map_err(io)?)
                .map_err(numeric)?;
            traces.push(TraceEntry {
                center_id: id.to_string(),
                ms: t.ms.value(),
                branch: t.branch,
                rf_drive_hz: rf,
                path: Some(rel),
                simulate_detuning_hz: None,
            });
        }
    }
    let ds = DatasetFile {
        version: DATASET_VERSION,
        centers,
        traces,
    };
    let path = dir.join("dataset.json");
    let text = serde_json::to_string_pretty(&ds).map_err(|e| Failure::Validation(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(io)?;
    Ok(path)
}
