//! Cross-centre identity statistics: inverse-variance averages, pulls and
//! consistency verdicts for the parameters of several centres.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inversion::ParamEstimate;

/// Default verdict threshold in standard deviations.
pub const DEFAULT_THRESHOLD_SIGMAS: f64 = 2.0;
/// Cohort used for the strain-sensitive parameters by default.
pub const REFERENCE_COHORT: &str = "far_from_SIL";

/// Inverse-variance weighted mean and its sigma.
///
/// An infinite sigma carries zero weight.
pub fn weighted_mean(values: &[f64], sigmas: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::InvalidInput("weighted mean of no values".into()));
    }
    if values.len() != sigmas.len() {
        return Err(Error::DimensionMismatch {
            expected: values.len(),
            found: sigmas.len(),
        });
    }
    let (mut sw, mut swx) = (0.0, 0.0);
    for (&x, &s) in values.iter().zip(sigmas) {
        if !(s > 0.0) || !x.is_finite() {
            return Err(Error::InvalidInput(format!("bad value {x} with sigma {s}")));
        }
        let w = 1.0 / (s * s);
        sw += w;
        swx += w * x;
    }
    if sw == 0.0 {
        return Err(Error::InvalidInput("all sigmas are infinite".into()));
    }
    Ok((swx / sw, 1.0 / sw.sqrt()))
}

/// Reference used for the verdict pulls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PullMode {
    /// Against the mean of the other included centres.
    LeaveOneOut,
    /// Against the mean of all included centres.
    Inclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyConfig {
    pub threshold_sigmas: f64,
    pub mode: PullMode,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        Self {
            threshold_sigmas: DEFAULT_THRESHOLD_SIGMAS,
            mode: PullMode::LeaveOneOut,
        }
    }
}

/// One centre's value of a parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub center_id: String,
    pub value: f64,
    pub sigma: f64,
    /// Whether it enters the cohort mean.
    pub included: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterPull {
    pub center_id: String,
    pub value: f64,
    pub sigma: f64,
    pub included: bool,
    /// `(x - mean) / σ`.
    pub pull_inclusive: f64,
    /// Against the mean of the others, normalised by both sigmas. `None` for
    /// the only included centre.
    pub pull_leave_one_out: Option<f64>,
    pub consistent: bool,
}

/// Statistics of one parameter across centres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterReport {
    pub parameter: String,
    pub mean: f64,
    pub sigma: f64,
    pub pulls: Vec<CenterPull>,
    /// `Σ pull_inclusive²` over the included centres.
    pub chi2: f64,
    pub dof: usize,
    pub mode: PullMode,
    pub threshold_sigmas: f64,
    /// Every centre within the threshold.
    pub consistent: bool,
}

impl ParameterReport {
    pub fn pull(&self, center_id: &str) -> Option<&CenterPull> {
        self.pulls.iter().find(|p| p.center_id == center_id)
    }
}

/// Pulls, chi-square and verdicts for one parameter.
///
/// Excluded observations are compared with the mean of the included ones,
/// normalised by both sigmas.
pub fn consistency(
    parameter: &str,
    obs: &[Observation],
    cfg: &ConsistencyConfig,
) -> Result<ParameterReport> {
    let included: Vec<&Observation> = obs.iter().filter(|o| o.included).collect();
    if included.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{parameter}: no centre enters the mean"
        )));
    }
    let values: Vec<f64> = included.iter().map(|o| o.value).collect();
    let sigmas: Vec<f64> = included.iter().map(|o| o.sigma).collect();
    let (mean, sigma) = weighted_mean(&values, &sigmas)?;
    for o in obs.iter().filter(|o| !o.included) {
        weighted_mean(&[o.value], &[o.sigma])?;
    }

    let mut pulls = Vec::with_capacity(obs.len());
    let mut chi2 = 0.0;
    for o in obs {
        let pull_inclusive = (o.value - mean) / o.sigma;
        let pull_leave_one_out = if o.included {
            let others: Vec<usize> = (0..included.len())
                .filter(|&k| !std::ptr::eq(included[k], o))
                .collect();
            if others.is_empty() {
                None
            } else {
                let v: Vec<f64> = others.iter().map(|&k| values[k]).collect();
                let s: Vec<f64> = others.iter().map(|&k| sigmas[k]).collect();
                let (m, sm) = weighted_mean(&v, &s)?;
                Some((o.value - m) / o.sigma.hypot(sm))
            }
        } else {
            Some((o.value - mean) / o.sigma.hypot(sigma))
        };
        if o.included {
            chi2 += pull_inclusive * pull_inclusive;
        }
        let verdict_pull = match cfg.mode {
            PullMode::LeaveOneOut => pull_leave_one_out.unwrap_or(pull_inclusive),
            PullMode::Inclusive => pull_inclusive,
        };
        pulls.push(CenterPull {
            center_id: o.center_id.clone(),
            value: o.value,
            sigma: o.sigma,
            included: o.included,
            pull_inclusive,
            pull_leave_one_out,
            consistent: verdict_pull.abs() <= cfg.threshold_sigmas,
        });
    }
    Ok(ParameterReport {
        parameter: parameter.to_string(),
        mean,
        sigma,
        consistent: pulls.iter().all(|p| p.consistent),
        pulls,
        chi2,
        dof: included.len() - 1,
        mode: cfg.mode,
        threshold_sigmas: cfg.threshold_sigmas,
    })
}

/// One centre's estimate with its cohort tag (`far_from_SIL`, `in_SIL`, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterRecord {
    pub center_id: String,
    pub cohort: String,
    pub estimate: ParamEstimate,
}

/// Parameters compared across centres.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameter {
    P,
    APar,
    APerp,
    GammaRatio,
}

impl Parameter {
    pub const ALL: [Parameter; 4] = [
        Parameter::P,
        Parameter::APar,
        Parameter::APerp,
        Parameter::GammaRatio,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Parameter::P => "P",
            Parameter::APar => "a_par",
            Parameter::APerp => "a_perp",
            Parameter::GammaRatio => "gamma_ratio",
        }
    }

    fn read(self, e: &ParamEstimate) -> Result<(f64, f64)> {
        let missing =
            || Error::InvalidInput(format!("{}: no sigma for {}", e.center_id, self.name()));
        let (v, s) = match self {
            Parameter::GammaRatio => {
                let r = e.gamma_ratio.ok_or_else(missing)?;
                (r.value, r.sigma)
            }
            _ => (
                e.value(self.name()).ok_or_else(missing)?,
                e.sigma(self.name()).ok_or_else(missing)?,
            ),
        };
        if !(s > 0.0 && s.is_finite()) {
            return Err(missing());
        }
        Ok((v, s))
    }
}

/// Which centres enter each parameter's mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortConfig {
    pub consistency: ConsistencyConfig,
    /// Cohort whose members alone enter the mean of the restricted parameters.
    /// When no record carries this tag every centre is used.
    pub reference_cohort: String,
    pub restricted: Vec<Parameter>,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            consistency: ConsistencyConfig::default(),
            reference_cohort: REFERENCE_COHORT.to_string(),
            restricted: vec![Parameter::P, Parameter::APar],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortReport {
    pub centers: Vec<String>,
    pub parameters: Vec<ParameterReport>,
}

impl CohortReport {
    pub fn parameter(&self, name: &str) -> Option<&ParameterReport> {
        self.parameters.iter().find(|p| p.parameter == name)
    }

    /// One row per centre and parameter, with the cohort mean repeated for
    /// plotting horizontal lines.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "parameter,center_id,value,sigma,included,pull,pull_leave_one_out,consistent,mean,mean_sigma\n",
        );
        for p in &self.parameters {
            for c in &p.pulls {
                let loo = c
                    .pull_leave_one_out
                    .map_or(String::new(), |v| format!("{v:.6}"));
                let _ = writeln!(
                    out,
                    "{},{},{:.6},{:.6},{},{:.6},{},{},{:.6},{:.6}",
                    p.parameter,
                    c.center_id,
                    c.value,
                    c.sigma,
                    c.included,
                    c.pull_inclusive,
                    loo,
                    c.consistent,
                    p.mean,
                    p.sigma
                );
            }
        }
        out
    }
}

/// Identity report over all four parameters.
pub fn cohort_report(records: &[CenterRecord], cfg: &CohortConfig) -> Result<CohortReport> {
    let reference_present = records.iter().any(|r| r.cohort == cfg.reference_cohort);
    let mut parameters = Vec::with_capacity(Parameter::ALL.len());
    for param in Parameter::ALL {
        let restrict = reference_present && cfg.restricted.contains(&param);
        let obs = records
            .iter()
            .map(|r| {
                let (value, sigma) = param.read(&r.estimate)?;
                Ok(Observation {
                    center_id: r.center_id.clone(),
                    value,
                    sigma,
                    included: !restrict || r.cohort == cfg.reference_cohort,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        parameters.push(consistency(param.name(), &obs, &cfg.consistency)?);
    }
    Ok(CohortReport {
        centers: records.iter().map(|r| r.center_id.clone()).collect(),
        parameters,
    })
}
