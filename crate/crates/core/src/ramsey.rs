//! Ramsey interferogram simulation and fitting.
//!
//! Signal model, for `t` in seconds:
//!
//! ```text
//! s(t) = [a·sin(2π·δf·t + φ₀) + b·g(t)]·exp(-(t/T₂*)^p) + c
//! ```
//!
//! where `g(t) = exp(-t/T₁)` is the slow decline of the pattern in the
//! simulator and `g ≡ 1` in the fitter. The signal is the bright-state
//! probability; photon counts are drawn per point from the bright and dark
//! rates it interpolates.

use std::f64::consts::{PI, TAU};
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::constants::RAMSEY_DETUNING_MEASURED;
use crate::error::{Error, Result};
use crate::optimize::{covariance_from_jacobian, levenberg_marquardt, Residuals};

/// Shots per point from which the per-point mean is drawn from its normal
/// approximation instead of a Poisson total.
pub const NORMAL_APPROX_MIN_SHOTS: u64 = 30;
pub const FIT_MAX_ITERATIONS: usize = 200;
pub const FIT_REL_TOL: f64 = 1e-10;
/// Periodogram peaks tried before the fit gives up.
pub const MULTI_START_PEAKS: usize = 5;
const MIN_POINTS: usize = 8;

/// Photon rates and shot count giving a detuning uncertainty of about 1.6 Hz
/// on [`RamseyConfig::paper_scale`].
pub const CALIBRATED_PHOTONS_BRIGHT: f64 = 0.030;
pub const CALIBRATED_PHOTONS_DARK: f64 = 0.021;
pub const CALIBRATED_SHOTS: u64 = 244_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RamseyConfig {
    pub true_detuning: f64,
    #[serde(rename = "T2_star")]
    pub t2_star: f64,
    pub stretch_p: f64,
    pub amplitude_a: f64,
    pub offset_b: f64,
    pub baseline_c: f64,
    pub phase_phi0: f64,
    /// Decline time constant of the offset; `None` disables it.
    #[serde(rename = "decline_T1", default)]
    pub decline_t1: Option<f64>,
    pub time_points: Vec<f64>,
    pub shots_per_point: u64,
    pub photons_per_shot_bright: f64,
    pub photons_per_shot_dark: f64,
    pub rng_seed: u64,
}

impl RamseyConfig {
    /// 533.2 Hz detuning, T₂* = 10 ms, 101 points over 10 ms, with the
    /// calibrated photon budget.
    pub fn paper_scale(seed: u64) -> Self {
        Self {
            true_detuning: RAMSEY_DETUNING_MEASURED,
            t2_star: 0.01,
            stretch_p: 1.0,
            amplitude_a: 0.3,
            offset_b: 0.1,
            baseline_c: 0.45,
            phase_phi0: 0.4,
            decline_t1: None,
            time_points: (0..=100).map(|k| k as f64 * 1e-4).collect(),
            shots_per_point: CALIBRATED_SHOTS,
            photons_per_shot_bright: CALIBRATED_PHOTONS_BRIGHT,
            photons_per_shot_dark: CALIBRATED_PHOTONS_DARK,
            rng_seed: seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.true_detuning,
            self.t2_star,
            self.stretch_p,
            self.amplitude_a,
            self.offset_b,
            self.baseline_c,
            self.phase_phi0,
            self.photons_per_shot_bright,
            self.photons_per_shot_dark,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite Ramsey parameter".into()));
        }
        if self.t2_star <= 0.0 {
            return Err(Error::InvalidInput("T2* must be positive".into()));
        }
        if self.shots_per_point == 0 {
            return Err(Error::InvalidInput(
                "shots_per_point must be at least 1".into(),
            ));
        }
        if self.photons_per_shot_bright < 0.0 || self.photons_per_shot_dark < 0.0 {
            return Err(Error::InvalidInput(
                "photon rates must be non-negative".into(),
            ));
        }
        if self.photons_per_shot_bright == self.photons_per_shot_dark {
            return Err(Error::InvalidInput("bright and dark rates coincide".into()));
        }
        if let Some(t1) = self.decline_t1 {
            if !(t1 > 0.0) {
                return Err(Error::InvalidInput("decline_T1 must be positive".into()));
            }
        }
        if self.time_points.is_empty() {
            return Err(Error::InvalidInput("no time points".into()));
        }
        if self.time_points.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput(
                "time points must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    fn model(&self) -> Model {
        Model {
            detuning: self.true_detuning,
            a: self.amplitude_a,
            b: self.offset_b,
            c: self.baseline_c,
            phi0: self.phase_phi0,
            t2_star: self.t2_star,
            p: self.stretch_p,
        }
    }

    /// Noise-free signal at `t`, including the decline of the offset.
    pub fn expected_signal(&self, t: f64) -> f64 {
        let decline = self.decline_t1.map_or(1.0, |t1| (-t / t1).exp());
        let m = self.model();
        let env = m.envelope(t);
        (m.a * (TAU * m.detuning * t + m.phi0).sin() + m.b * decline) * env + m.c
    }

    fn contrast(&self) -> f64 {
        self.photons_per_shot_bright - self.photons_per_shot_dark
    }

    /// Standard error of the per-point normalised mean for bright-state
    /// probability `prob`.
    fn point_sigma(&self, prob: f64) -> f64 {
        let rate = self.rate(prob);
        // Keep the error finite for a zero-rate dark state.
        let rate = rate.max(1e-12);
        (rate / self.shots_per_point as f64).sqrt() / self.contrast().abs()
    }

    fn rate(&self, prob: f64) -> f64 {
        let prob = prob.clamp(0.0, 1.0);
        prob * self.photons_per_shot_bright + (1.0 - prob) * self.photons_per_shot_dark
    }
}

/// One simulated or measured interferogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RamseyTrace {
    pub times: Vec<f64>,
    pub signal: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl RamseyTrace {
    pub fn new(times: Vec<f64>, signal: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        let t = Self {
            times,
            signal,
            sigma,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.signal.len() || self.times.len() != self.sigma.len() {
            return Err(Error::InvalidInput(format!(
                "trace columns differ in length: {} times, {} signal, {} sigma",
                self.times.len(),
                self.signal.len(),
                self.sigma.len()
            )));
        }
        if let Some(k) = self.sigma.iter().position(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidInput(format!(
                "sigma at row {k} is not positive"
            )));
        }
        if self
            .times
            .iter()
            .chain(&self.signal)
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidInput(
                "trace contains non-finite values".into(),
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::InvalidInput(e.to_string());
        out.write_record(["time_s", "signal", "sigma"])
            .map_err(io)?;
        for k in 0..self.len() {
            out.write_record([
                format!("{:e}", self.times[k]),
                format!("{:e}", self.signal[k]),
                format!("{:e}", self.sigma[k]),
            ])
            .map_err(io)?;
        }
        out.flush()
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            time_s: f64,
            signal: f64,
            sigma: f64,
        }
        let mut reader = csv::Reader::from_reader(r);
        let (mut times, mut signal, mut sigma) = (Vec::new(), Vec::new(), Vec::new());
        for row in reader.deserialize::<Row>() {
            let row = row.map_err(|e| Error::InvalidInput(format!("trace CSV: {e}")))?;
            times.push(row.time_s);
            signal.push(row.signal);
            sigma.push(row.sigma);
        }
        Self::new(times, signal, sigma)
    }
}

/// Draw a trace from `cfg`. Identical configs give identical traces.
pub fn simulate(cfg: &RamseyConfig) -> Result<RamseyTrace> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let shots = cfg.shots_per_point as f64;
    let (mut signal, mut sigma) = (Vec::new(), Vec::new());
    for &t in &cfg.time_points {
        let prob = cfg.expected_signal(t);
        let rate = cfg.rate(prob);
        let mean_counts = if cfg.shots_per_point >= NORMAL_APPROX_MIN_SHOTS {
            let sd = (rate / shots).sqrt();
            if sd > 0.0 {
                Normal::new(rate, sd).expect("finite sd").sample(&mut rng)
            } else {
                rate
            }
        } else if rate > 0.0 {
            // A sum of per-shot Poisson draws is Poisson in the total.
            Poisson::new(rate * shots)
                .expect("positive rate")
                .sample(&mut rng)
                / shots
        } else {
            0.0
        };
        signal.push((mean_counts - cfg.photons_per_shot_dark) / cfg.contrast());
        sigma.push(cfg.point_sigma(prob));
    }
    RamseyTrace::new(cfg.time_points.clone(), signal, sigma)
}

/// Noise-free trace with the per-point errors the simulator would assign.
pub fn expected_trace(cfg: &RamseyConfig) -> Result<RamseyTrace> {
    cfg.validate()?;
    let signal: Vec<f64> = cfg
        .time_points
        .iter()
        .map(|&t| cfg.expected_signal(t))
        .collect();
    let sigma = signal.iter().map(|&s| cfg.point_sigma(s)).collect();
    RamseyTrace::new(cfg.time_points.clone(), signal, sigma)
}

/// Parameters of the fitted model with one-sigma errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitParam {
    pub value: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Non-negative; the sign of a Ramsey detuning is not observable.
    pub detuning: f64,
    pub detuning_sigma: f64,
    pub a: FitParam,
    pub b: FitParam,
    pub c: FitParam,
    pub phi0: FitParam,
    #[serde(rename = "T2_star")]
    pub t2_star: FitParam,
    pub p: FitParam,
    pub chi2_reduced: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Model {
    detuning: f64,
    a: f64,
    b: f64,
    c: f64,
    phi0: f64,
    t2_star: f64,
    p: f64,
}

impl Model {
    const N: usize = 7;

    fn from_slice(x: &[f64]) -> Self {
        Self {
            detuning: x[0],
            a: x[1],
            b: x[2],
            c: x[3],
            phi0: x[4],
            t2_star: x[5],
            p: x[6],
        }
    }

    fn to_vec(self) -> Vec<f64> {
        vec![
            self.detuning,
            self.a,
            self.b,
            self.c,
            self.phi0,
            self.t2_star,
            self.p,
        ]
    }

    fn envelope(&self, t: f64) -> f64 {
        if t <= 0.0 {
            1.0
        } else {
            (-(t / self.t2_star).powf(self.p)).exp()
        }
    }

    fn eval(&self, t: f64) -> f64 {
        (self.a * (TAU * self.detuning * t + self.phi0).sin() + self.b) * self.envelope(t) + self.c
    }

    fn gradient(&self, t: f64) -> [f64; 7] {
        let arg = TAU * self.detuning * t + self.phi0;
        let (s, c) = arg.sin_cos();
        let env = self.envelope(t);
        let inner = self.a * s + self.b;
        let (d_t2, d_p) = if t > 0.0 {
            let x = t / self.t2_star;
            let xp = x.powf(self.p);
            (
                inner * env * self.p * xp / self.t2_star,
                -inner * env * xp * x.ln(),
            )
        } else {
            (0.0, 0.0)
        };
        [
            self.a * c * TAU * t * env,
            s * env,
            env,
            1.0,
            self.a * c * env,
            d_t2,
            d_p,
        ]
    }

    /// Same curve with `δf ≥ 0` and `φ₀ ∈ (-π, π]`.
    fn canonical(mut self) -> Self {
        if self.detuning < 0.0 {
            self.detuning = -self.detuning;
            self.phi0 = PI - self.phi0;
        }
        if self.a < 0.0 {
            self.a = -self.a;
            self.phi0 += PI;
        }
        self.phi0 = wrap_phase(self.phi0);
        self
    }
}

fn wrap_phase(phi: f64) -> f64 {
    let w = phi.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

struct TraceFit<'a> {
    trace: &'a RamseyTrace,
}

impl Residuals for TraceFit<'_> {
    fn residuals(&self, x: &[f64]) -> Option<Vec<f64>> {
        let m = Model::from_slice(x);
        if !(m.t2_star > 0.0 && m.p > 0.0) {
            return None;
        }
        let tr = self.trace;
        let r: Vec<f64> = (0..tr.len())
            .map(|k| (m.eval(tr.times[k]) - tr.signal[k]) / tr.sigma[k])
            .collect();
        r.iter().all(|v| v.is_finite()).then_some(r)
    }

    fn jacobian(&self, x: &[f64]) -> Option<Vec<f64>> {
        let m = Model::from_slice(x);
        if !(m.t2_star > 0.0 && m.p > 0.0) {
            return None;
        }
        let tr = self.trace;
        let mut out = Vec::with_capacity(tr.len() * Model::N);
        for k in 0..tr.len() {
            for g in m.gradient(tr.times[k]) {
                out.push(g / tr.sigma[k]);
            }
        }
        out.iter().all(|v| v.is_finite()).then_some(out)
    }

    fn len(&self) -> usize {
        self.trace.len()
    }
}

/// Weighted periodogram of the mean-subtracted trace on `(0, Nyquist]`,
/// returned as `(frequency, power, phase)` local maxima by descending power.
pub fn periodogram_peaks(trace: &RamseyTrace, count: usize) -> Vec<(f64, f64, f64)> {
    let n = trace.len();
    if n < 2 {
        return Vec::new();
    }
    let span = trace.times[n - 1] - trace.times[0];
    let min_dt = trace
        .times
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    if !(span > 0.0 && min_dt > 0.0) {
        return Vec::new();
    }
    let nyquist = 0.5 / min_dt;
    let step = 1.0 / (10.0 * span);
    let w: Vec<f64> = trace.sigma.iter().map(|s| 1.0 / (s * s)).collect();
    let wsum: f64 = w.iter().sum();
    let mean = trace.signal.iter().zip(&w).map(|(y, w)| y * w).sum::<f64>() / wsum;

    let bins = (nyquist / step).floor() as usize;
    let spectrum: Vec<(f64, f64, f64)> = (1..=bins)
        .map(|k| {
            let f = k as f64 * step;
            let (mut re, mut im) = (0.0, 0.0);
            for i in 0..n {
                let (s, c) = (TAU * f * trace.times[i]).sin_cos();
                let y = w[i] * (trace.signal[i] - mean);
                re += y * c;
                im -= y * s;
            }
            let power = (re * re + im * im) / (wsum * wsum);
            // y ≈ A sin(ωt + φ) = A cos(ωt + φ - π/2).
            (f, power, im.atan2(re) + PI / 2.0)
        })
        .collect();
    let mut peaks: Vec<(f64, f64, f64)> = (0..spectrum.len())
        .filter(|&k| {
            let p = spectrum[k].1;
            (k == 0 || spectrum[k - 1].1 < p) && (k + 1 == spectrum.len() || spectrum[k + 1].1 <= p)
        })
        .map(|k| spectrum[k])
        .collect();
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1));
    peaks.truncate(count);
    peaks
}

fn initial_guesses(trace: &RamseyTrace) -> Vec<Model> {
    let n = trace.len();
    let span = trace.times[n - 1] - trace.times[0];
    let mean = trace.signal.iter().sum::<f64>() / n as f64;
    let tail = &trace.signal[3 * n / 4..];
    let c = tail.iter().sum::<f64>() / tail.len() as f64;
    periodogram_peaks(trace, MULTI_START_PEAKS)
        .into_iter()
        .map(|(f, power, phase)| Model {
            detuning: f,
            // Amplitude of a decaying sinusoid is roughly twice the mean
            // spectral amplitude.
            a: 2.0 * power.sqrt() * 2.0,
            b: mean - c,
            c,
            phi0: wrap_phase(phase),
            t2_star: span / 2.0,
            p: 1.0,
        })
        .collect()
}

/// Weighted least-squares fit of the interferogram model.
///
/// Without `init` the start comes from the periodogram, trying up to
/// [`MULTI_START_PEAKS`] peaks until one converges.
pub fn fit(trace: &RamseyTrace, init: Option<&FitResult>) -> Result<FitResult> {
    trace.validate()?;
    if trace.len() < MIN_POINTS {
        return Err(Error::InvalidInput(format!(
            "need at least {MIN_POINTS} points, got {}",
            trace.len()
        )));
    }
    let starts = match init {
        Some(r) => vec![Model {
            detuning: r.detuning,
            a: r.a.value,
            b: r.b.value,
            c: r.c.value,
            phi0: r.phi0.value,
            t2_star: r.t2_star.value,
            p: r.p.value,
        }],
        None => initial_guesses(trace),
    };
    let problem = TraceFit { trace };
    let max_evaluations = FIT_MAX_ITERATIONS * (Model::N + 1);
    let mut last_error = Error::NoConvergence {
        what: "Ramsey fit",
        iterations: FIT_MAX_ITERATIONS,
    };
    for start in starts {
        let r = levenberg_marquardt(&problem, &start.to_vec(), FIT_REL_TOL, max_evaluations);
        if !r.converged {
            continue;
        }
        match summarize(trace, &problem, &r.x, r.chi2) {
            Ok(out) => return Ok(out),
            Err(e) => last_error = e,
        }
    }
    Err(last_error)
}

fn summarize(trace: &RamseyTrace, problem: &TraceFit, x: &[f64], chi2: f64) -> Result<FitResult> {
    let m = Model::from_slice(x).canonical();
    let x = m.to_vec();
    let jac = problem
        .jacobian(&x)
        .ok_or_else(|| Error::DegenerateCovariance("Jacobian not finite".into()))?;
    let cov = covariance_from_jacobian(&jac, trace.len(), Model::N)?;
    let sd = |k: usize| cov[(k, k)].sqrt();
    let dof = trace.len().saturating_sub(Model::N).max(1) as f64;
    let min_dt = trace
        .times
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    let nyquist = 0.5 / min_dt;
    let param = |k: usize| FitParam {
        value: x[k],
        sigma: sd(k),
    };
    Ok(FitResult {
        detuning: m.detuning,
        detuning_sigma: sd(0),
        a: param(1),
        b: param(2),
        c: param(3),
        phi0: param(4),
        t2_star: param(5),
        p: param(6),
        chi2_reduced: chi2 / dof,
        // An error bar wider than the Nyquist band carries no information.
        converged: sd(0) < nyquist,
    })
}

/// Absolute transition frequency `rf_drive + δf` and its error, taking the
/// drive as exact.
pub fn absolute_frequency(rf_drive: f64, fit: &FitResult) -> Result<(f64, f64)> {
    if !fit.converged {
        return Err(Error::Unconverged);
    }
    Ok((rf_drive + fit.detuning, fit.detuning_sigma))
}
