//! Weighted least-squares recovery of the Hamiltonian parameters from one
//! centre's measured frequencies.
//!
//! The two microwave lines fix `D` and `ωe`; the six nuclear lines then fix
//! `P`, `ωn`, `A∥`, `A⊥` and optionally the transverse field `ωex` (with
//! `ωnx = ωex·ωn/ωe`). The two steps are alternated until both settle.
//!
//! The model inside the fit is the closed-form reduction. Its residual error
//! against exact diagonalisation (a few 10 mHz) is removed by defect
//! correction: the fit targets `measured - (exact - analytic)` evaluated at the
//! current estimate, so noise-free oracle data round-trips to well below 1 mHz.
//!
//! The nuclear spectrum is even in `ωex`, so only its magnitude is reported.

use std::cell::Cell;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::constants::GAMMA_E;
use crate::error::{Error, Result};
use crate::hamiltonian::{exact_electron_frequencies, exact_nuclear_frequencies, NVParams};
use crate::optimize::{
    brent_bounded, levenberg_marquardt, nelder_mead, numeric_jacobian, Residuals,
};
use crate::perturbation::analytic_nuclear_frequencies;
use crate::spin::Projection;
use crate::transitions::{Branch, Measured, NuclearTransition};

/// Weighted residual above which a fit is rejected as a model misfit (Hz).
pub const MISFIT_LIMIT_HZ: f64 = 100.0;
/// Allowed gap between the analytic and exact weighted residuals (Hz).
pub const ORACLE_AGREEMENT_HZ: f64 = 0.1;
/// Frequency step for the error-propagation Jacobian (Hz).
pub const PROPAGATION_STEP_HZ: f64 = 0.1;
/// Joint convergence of `D` and `ωe` (Hz).
pub const ELECTRON_TOL_HZ: f64 = 1e-4;
/// A microwave pair whose best residual exceeds this many sigmas is rejected.
pub const PAIR_RESIDUAL_SIGMAS: f64 = 10.0;
/// Starting guess for `A⊥` (Hz); the nuclear spectrum only feels it at second order.
pub const A_PERP_GUESS: f64 = -2.63e6;
/// `γe/γn` is refused when `|ωn|` falls below this (Hz).
pub const MIN_OMEGA_N_HZ: f64 = 100.0;

const ELECTRON_MAX_ITER: usize = 30;
const ELECTRON_STEP_HZ: f64 = 1e3;
const OUTER_MAX_ITER: usize = 25;
/// Outer-loop stop: nuclear moves in units of their whitened residual effect.
const OUTER_TOL_SIGMAS: f64 = 1e-6;
const LM_TOL: f64 = 1e-15;
const LM_MAX_EVALUATIONS: usize = 400;
const SIMPLEX_MAX_ITER: usize = 4000;
/// Largest field misalignment searched by the five-parameter model (degrees).
pub const MAX_MISALIGNMENT_DEG: f64 = 0.3;
const PROFILE_TOL_HZ2: f64 = 1e3;
const PROFILE_MAX_EVALUATIONS: usize = 120;

/// Which parameters the nuclear fit adjusts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamModel {
    /// `P, ωn, A∥, A⊥, ωex`
    FiveParam,
    /// `P, ωn, A∥, A⊥` with `ωex = 0`
    FourParam,
}

impl ParamModel {
    pub fn dims(self) -> usize {
        match self {
            ParamModel::FiveParam => 5,
            ParamModel::FourParam => 4,
        }
    }

    /// Names of the fitted and derived parameters, in covariance order.
    pub fn parameter_names(self) -> Vec<&'static str> {
        let mut names = vec!["P", "omega_n", "a_par", "a_perp"];
        if self == ParamModel::FiveParam {
            names.push("omega_ex");
        }
        names.extend(["D", "omega_e"]);
        names
    }
}

/// One measured nuclear line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    #[serde(rename = "mS")]
    pub ms: i32,
    pub branch: Branch,
    pub freq_hz: f64,
    pub sigma_hz: f64,
}

/// One measured microwave line with the nuclear projection it was taken at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MwRecord {
    #[serde(rename = "mI")]
    pub mi: i32,
    pub freq_hz: f64,
    pub sigma_hz: f64,
}

/// Everything measured on one centre.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasuredSet {
    pub center_id: String,
    /// Approximate bias field along the NV axis, used only to order the
    /// microwave pair.
    #[serde(rename = "B_hint_mT")]
    pub b_hint_mt: f64,
    pub transitions: Vec<TransitionRecord>,
    pub mw: Vec<MwRecord>,
}

/// The microwave pair assigned to `mS = +1` and `mS = -1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MwPair {
    pub plus: Measured,
    pub plus_mi: Projection,
    pub minus: Measured,
    pub minus_mi: Projection,
}

impl MwPair {
    fn values(&self) -> [f64; 2] {
        [self.plus.freq_hz, self.minus.freq_hz]
    }

    fn sigmas(&self) -> [f64; 2] {
        [self.plus.sigma_hz, self.minus.sigma_hz]
    }

    fn with_values(&self, v: [f64; 2]) -> Self {
        Self {
            plus: Measured::new(v[0], self.plus.sigma_hz),
            minus: Measured::new(v[1], self.minus.sigma_hz),
            ..*self
        }
    }
}

fn check_sigma(what: &str, m: f64, s: f64) -> Result<()> {
    if !m.is_finite() {
        return Err(Error::InvalidInput(format!(
            "{what}: frequency is not finite"
        )));
    }
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "{what}: sigma must be positive, got {s}"
        )));
    }
    Ok(())
}

impl MeasuredSet {
    pub fn validate(&self) -> Result<()> {
        self.nuclear()?;
        self.mw_pair()?;
        Ok(())
    }

    /// The six nuclear lines in canonical order.
    pub fn nuclear(&self) -> Result<[Measured; 6]> {
        let mut slots: [Option<Measured>; 6] = [None; 6];
        for r in &self.transitions {
            let ms = Projection::from_value(r.ms).ok_or_else(|| {
                Error::InvalidInput(format!(
                    "{}: mS must be -1, 0 or +1, got {}",
                    self.center_id, r.ms
                ))
            })?;
            let t = NuclearTransition::new(ms, r.branch);
            check_sigma(&format!("{}: {t}", self.center_id), r.freq_hz, r.sigma_hz)?;
            let slot = &mut slots[t.index()];
            if slot.is_some() {
                return Err(Error::InvalidInput(format!(
                    "{}: {t} listed twice",
                    self.center_id
                )));
            }
            *slot = Some(Measured::new(r.freq_hz, r.sigma_hz));
        }
        let mut out = [Measured::exact(0.0); 6];
        for t in NuclearTransition::all() {
            out[t.index()] = slots[t.index()].ok_or_else(|| {
                Error::InvalidInput(format!("{}: {t} is missing", self.center_id))
            })?;
        }
        Ok(out)
    }

    /// The microwave pair, the higher line taken as `mS = +1` when the field
    /// hint is non-negative.
    pub fn mw_pair(&self) -> Result<MwPair> {
        if self.mw.len() != 2 {
            return Err(Error::InvalidInput(format!(
                "{}: expected two microwave lines, got {}",
                self.center_id,
                self.mw.len()
            )));
        }
        let mut lines = Vec::with_capacity(2);
        for r in &self.mw {
            check_sigma(
                &format!("{}: microwave line", self.center_id),
                r.freq_hz,
                r.sigma_hz,
            )?;
            let mi = Projection::from_value(r.mi).ok_or_else(|| {
                Error::InvalidInput(format!(
                    "{}: mI must be -1, 0 or +1, got {}",
                    self.center_id, r.mi
                ))
            })?;
            lines.push((Measured::new(r.freq_hz, r.sigma_hz), mi));
        }
        lines.sort_by(|a, b| b.0.freq_hz.total_cmp(&a.0.freq_hz));
        if !self.b_hint_mt.is_finite() {
            return Err(Error::InvalidInput(format!(
                "{}: field hint is not finite",
                self.center_id
            )));
        }
        if self.b_hint_mt < 0.0 {
            lines.swap(0, 1);
        }
        Ok(MwPair {
            plus: lines[0].0,
            plus_mi: lines[0].1,
            minus: lines[1].0,
            minus_mi: lines[1].1,
        })
    }

    /// Noise-free set generated by exact diagonalisation of `truth`, with the
    /// microwave pair taken at nuclear projection `mw_mi`.
    pub fn synthetic(
        center_id: &str,
        truth: &NVParams,
        mw_mi: Projection,
        nuclear_sigma: f64,
        mw_sigma: f64,
    ) -> Result<Self> {
        let nuclear = exact_nuclear_frequencies(truth)?;
        let mw = exact_electron_frequencies(truth, mw_mi)?;
        Ok(Self {
            center_id: center_id.to_string(),
            b_hint_mt: truth.omega_e / GAMMA_E * 1e3,
            transitions: NuclearTransition::all()
                .into_iter()
                .map(|t| TransitionRecord {
                    ms: t.ms.value(),
                    branch: t.branch,
                    freq_hz: nuclear.freq(t),
                    sigma_hz: nuclear_sigma,
                })
                .collect(),
            mw: mw
                .iter()
                .map(|&f| MwRecord {
                    mi: mw_mi.value(),
                    freq_hz: f,
                    sigma_hz: mw_sigma,
                })
                .collect(),
        })
    }

    /// Copy with every frequency moved by Gaussian noise of its own sigma.
    pub fn with_noise(&self, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |f: f64, s: f64| f + Normal::new(0.0, s).map_or(0.0, |n| n.sample(&mut rng));
        let mut out = self.clone();
        for r in &mut out.transitions {
            r.freq_hz = draw(r.freq_hz, r.sigma_hz);
        }
        for r in &mut out.mw {
            r.freq_hz = draw(r.freq_hz, r.sigma_hz);
        }
        out
    }
}

/// `D` and `ωe` with their sigmas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElectronSolution {
    #[serde(rename = "D")]
    pub d: f64,
    pub d_sigma: f64,
    pub omega_e: f64,
    pub omega_e_sigma: f64,
    pub iterations: usize,
}

/// Solve the microwave pair for `D` and `ωe`, holding the remaining
/// couplings at the values in `background`.
///
/// Starts from the first-order closed form and runs Newton steps on the exact
/// electron frequencies until both unknowns move by less than 1e-4 Hz.
pub fn solve_d_omega_e(pair: &MwPair, background: &NVParams) -> Result<ElectronSolution> {
    solve_d_omega_e_from(pair, background, None)
}

fn solve_d_omega_e_from(
    pair: &MwPair,
    background: &NVParams,
    start: Option<(f64, f64)>,
) -> Result<ElectronSolution> {
    let [f1, f2] = pair.values();
    let (m1, m2) = (pair.plus_mi.value() as f64, pair.minus_mi.value() as f64);
    let a = background.a_par;
    let (mut d, mut we) = start.unwrap_or((
        0.5 * (f1 + f2) - 0.5 * a * (m1 - m2),
        0.5 * (f1 - f2) - 0.5 * a * (m1 + m2),
    ));
    let model = |d: f64, we: f64| -> Result<[f64; 2]> {
        let p = NVParams {
            d,
            omega_e: we,
            omega_nx: tied_omega_nx(background.omega_ex, background.omega_n, we),
            ..*background
        };
        let plus = exact_electron_frequencies(&p, pair.plus_mi)?[0];
        let minus = exact_electron_frequencies(&p, pair.minus_mi)?[1];
        Ok([plus, minus])
    };
    let jacobian = |d: f64, we: f64| -> Result<[[f64; 2]; 2]> {
        let h = ELECTRON_STEP_HZ;
        let (dp, dm) = (model(d + h, we)?, model(d - h, we)?);
        let (wp, wm) = (model(d, we + h)?, model(d, we - h)?);
        Ok([
            [(dp[0] - dm[0]) / (2.0 * h), (wp[0] - wm[0]) / (2.0 * h)],
            [(dp[1] - dm[1]) / (2.0 * h), (wp[1] - wm[1]) / (2.0 * h)],
        ])
    };
    let solve2 = |j: &[[f64; 2]; 2], r: [f64; 2]| -> Result<[f64; 2]> {
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det.abs() < 1e-12 {
            return Err(Error::DegenerateCovariance(
                "microwave Jacobian is singular".into(),
            ));
        }
        Ok([
            (j[1][1] * r[0] - j[0][1] * r[1]) / det,
            (j[0][0] * r[1] - j[1][0] * r[0]) / det,
        ])
    };

    let mut j = jacobian(d, we)?;
    let mut iterations = 0;
    loop {
        let f = model(d, we)?;
        let step = solve2(&j, [f1 - f[0], f2 - f[1]])?;
        d += step[0];
        we += step[1];
        iterations += 1;
        if step[0].abs().max(step[1].abs()) < ELECTRON_TOL_HZ {
            break;
        }
        if iterations >= ELECTRON_MAX_ITER {
            return Err(Error::NoConvergence {
                what: "microwave pair inversion",
                iterations,
            });
        }
        if iterations % 4 == 0 {
            j = jacobian(d, we)?;
        }
    }

    let f = model(d, we)?;
    let [s1, s2] = pair.sigmas();
    let pull = ((f[0] - f1) / s1).abs().max(((f[1] - f2) / s2).abs());
    if pull > PAIR_RESIDUAL_SIGMAS {
        return Err(Error::InconsistentPair {
            residual: (f[0] - f1).abs().max((f[1] - f2).abs()),
            limit: PAIR_RESIDUAL_SIGMAS * s1.min(s2),
        });
    }
    // Linear propagation through the inverse Jacobian.
    let cols = [solve2(&j, [s1, 0.0])?, solve2(&j, [0.0, s2])?];
    Ok(ElectronSolution {
        d,
        d_sigma: cols[0][0].hypot(cols[1][0]),
        omega_e: we,
        omega_e_sigma: cols[0][1].hypot(cols[1][1]),
        iterations,
    })
}

fn tied_omega_nx(omega_ex: f64, omega_n: f64, omega_e: f64) -> f64 {
    if omega_e == 0.0 {
        0.0
    } else {
        omega_ex * omega_n / omega_e
    }
}

/// Fitted parameter vector plus the electron step.
#[derive(Debug, Clone, Copy, PartialEq)]
struct State {
    theta: [f64; 5],
    d: f64,
    omega_e: f64,
}

impl State {
    fn params(&self) -> NVParams {
        let t = &self.theta;
        NVParams {
            d: self.d,
            omega_e: self.omega_e,
            p: t[0],
            omega_n: t[1],
            a_par: t[2],
            a_perp: t[3],
            omega_ex: t[4],
            omega_nx: tied_omega_nx(t[4], t[1], self.omega_e),
            ..NVParams::zero()
        }
    }

    fn with_theta(&self, x: &[f64]) -> Self {
        let mut s = *self;
        s.theta[..x.len()].copy_from_slice(x);
        s
    }
}

/// Nuclear residuals `(analytic + defect - target) / sigma`.
struct NuclearFit {
    target: [f64; 6],
    sigma: [f64; 6],
    base: State,
    dims: usize,
}

impl NuclearFit {
    fn steps(&self) -> Vec<f64> {
        [1.0, 1.0, 1.0, 10.0, 1e3][..self.dims].to_vec()
    }

    fn chi2(&self, x: &[f64]) -> f64 {
        self.residuals(x)
            .map_or(f64::INFINITY, |r| r.iter().map(|v| v * v).sum())
    }

    /// Whitened-residual change per unit move of each parameter.
    fn column_norms(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        match self.jacobian(x) {
            Some(j) => (0..n)
                .map(|k| (0..6).map(|i| j[i * n + k].powi(2)).sum::<f64>().sqrt())
                .collect(),
            None => vec![1.0; n],
        }
    }
}

impl Residuals for NuclearFit {
    fn residuals(&self, x: &[f64]) -> Option<Vec<f64>> {
        let f = analytic_nuclear_frequencies(&self.base.with_theta(x).params(), true).ok()?;
        Some(
            (0..6)
                .map(|k| (f.nuclear[k].freq_hz - self.target[k]) / self.sigma[k])
                .collect(),
        )
    }

    fn jacobian(&self, x: &[f64]) -> Option<Vec<f64>> {
        numeric_jacobian(|x| self.residuals(x), x, &self.steps())
    }

    fn len(&self) -> usize {
        6
    }
}

/// Point estimate with optional covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEstimate {
    pub center_id: String,
    pub model: ParamModel,
    #[serde(rename = "P")]
    pub p: f64,
    pub omega_n: f64,
    pub a_par: f64,
    pub a_perp: f64,
    /// Magnitude of the transverse electron Zeeman term; `None` in the
    /// four-parameter model.
    pub omega_ex: Option<f64>,
    #[serde(rename = "D")]
    pub d: f64,
    pub omega_e: f64,
    /// `sqrt(Σ wᵢ rᵢ² / Σ wᵢ)` with `wᵢ = 1/σᵢ²`, residuals from exact diagonalisation.
    pub weighted_residual: f64,
    /// Same with the closed-form model.
    pub analytic_residual: f64,
    pub covariance: Option<Covariance>,
    pub gamma_ratio: Option<RatioEstimate>,
    pub outer_iterations: usize,
}

impl ParamEstimate {
    /// Hamiltonian parameters implied by the estimate.
    pub fn params(&self) -> NVParams {
        self.state().params()
    }

    fn state(&self) -> State {
        State {
            theta: [
                self.p,
                self.omega_n,
                self.a_par,
                self.a_perp,
                self.omega_ex.unwrap_or(0.0),
            ],
            d: self.d,
            omega_e: self.omega_e,
        }
    }

    /// Values in [`ParamModel::parameter_names`] order.
    pub fn values(&self) -> Vec<f64> {
        let mut v = vec![self.p, self.omega_n, self.a_par, self.a_perp];
        if let Some(x) = self.omega_ex {
            v.push(x);
        }
        v.extend([self.d, self.omega_e]);
        v
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        let names = self.model.parameter_names();
        names
            .iter()
            .position(|n| *n == name)
            .map(|k| self.values()[k])
    }

    /// Propagated sigma of a named parameter, if the covariance is present.
    pub fn sigma(&self, name: &str) -> Option<f64> {
        self.covariance.as_ref()?.sigma(name)
    }
}

/// Named symmetric covariance matrix (Hz²).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariance {
    pub names: Vec<String>,
    pub matrix: Vec<Vec<f64>>,
}

impl Covariance {
    fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        Some(self.matrix[self.index(a)?][self.index(b)?])
    }

    pub fn sigma(&self, name: &str) -> Option<f64> {
        self.get(name, name).map(f64::sqrt)
    }
}

/// A ratio with its first-order sigma.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioEstimate {
    pub value: f64,
    pub sigma: f64,
}

fn weighted_rms(model: &[f64; 6], measured: &[Measured; 6]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (f, m) in model.iter().zip(measured) {
        let w = 1.0 / (m.sigma_hz * m.sigma_hz);
        num += w * (f - m.freq_hz).powi(2);
        den += w;
    }
    (num / den).sqrt()
}

/// Zeroth-order estimates from sums and differences of the six lines.
fn linear_guess(nuclear: &[Measured; 6]) -> [f64; 5] {
    let f = |ms: Projection, b: Branch| nuclear[NuclearTransition::new(ms, b).index()].freq_hz;
    let diff = |ms| f(ms, Branch::Plus) - f(ms, Branch::Minus);
    let p = nuclear.iter().map(|m| m.freq_hz).sum::<f64>() / 6.0;
    let omega_n = Projection::ALL.iter().map(|&ms| diff(ms)).sum::<f64>() / 6.0;
    let a_par = (diff(Projection::Plus) - diff(Projection::Minus)) / 4.0;
    [p, omega_n, a_par, A_PERP_GUESS, 0.0]
}

/// Shared solver over already-parsed inputs.
#[derive(Clone, Copy)]
struct Problem {
    nuclear: [Measured; 6],
    pair: MwPair,
    dims: usize,
}

impl Problem {
    fn from_set(m: &MeasuredSet, model: ParamModel) -> Result<Self> {
        Ok(Self {
            nuclear: m.nuclear()?,
            pair: m.mw_pair()?,
            dims: model.dims(),
        })
    }

    fn electron_step(&self, s: &State, warm: bool) -> Result<State> {
        let start = warm.then_some((s.d, s.omega_e));
        let e = solve_d_omega_e_from(&self.pair, &s.params(), start)?;
        Ok(State {
            d: e.d,
            omega_e: e.omega_e,
            ..*s
        })
    }

    fn defect(&self, s: &State) -> Result<[f64; 6]> {
        let p = s.params();
        let exact = exact_nuclear_frequencies(&p)?.values();
        let analytic = analytic_nuclear_frequencies(&p, true)?.values();
        Ok(std::array::from_fn(|k| exact[k] - analytic[k]))
    }

    fn nuclear_fit(&self, s: &State, defect: &[f64; 6]) -> NuclearFit {
        NuclearFit {
            target: std::array::from_fn(|k| self.nuclear[k].freq_hz - defect[k]),
            sigma: self.nuclear.map(|m| m.sigma_hz),
            base: *s,
            dims: self.dims,
        }
    }

    /// Nelder–Mead in coordinates scaled by the Jacobian column norms, so a
    /// unit step moves the whitened residual by about one.
    fn simplex_stage(&self, fit: &NuclearFit, x0: &[f64]) -> Vec<f64> {
        let n = x0.len();
        let scale: Vec<f64> = fit
            .column_norms(x0)
            .into_iter()
            .map(|norm| if norm > 0.0 { norm } else { 1.0 })
            .collect();
        let to_x = |z: &[f64]| -> Vec<f64> { (0..n).map(|k| x0[k] + z[k] / scale[k]).collect() };
        let r = nelder_mead(
            |z| fit.chi2(&to_x(z)),
            &vec![0.0; n],
            &vec![10.0; n],
            1e-4,
            1e-12,
            SIMPLEX_MAX_ITER,
        );
        to_x(&r.x)
    }

    fn lm_stage(&self, fit: &NuclearFit, x0: &[f64]) -> Vec<f64> {
        let r = levenberg_marquardt(fit, x0, LM_TOL, LM_MAX_EVALUATIONS);
        if r.chi2 <= fit.chi2(x0) {
            r.x
        } else {
            x0.to_vec()
        }
    }

    /// Alternate electron step, defect update and nuclear fit until settled.
    /// `cold` runs the simplex stage on the first pass.
    fn solve(&self, start: State, cold: bool) -> Result<(State, usize)> {
        let mut s = self.electron_step(&start, !cold)?;
        for it in 0..OUTER_MAX_ITER {
            let defect = self.defect(&s)?;
            let fit = self.nuclear_fit(&s, &defect);
            let x0 = &s.theta[..self.dims];
            let x = if cold && it == 0 {
                let x = self.simplex_stage(&fit, x0);
                self.lm_stage(&fit, &x)
            } else {
                self.lm_stage(&fit, x0)
            };
            let next = self.electron_step(&s.with_theta(&x), true)?;
            let weights = fit.column_norms(&x);
            let nuclear_move = (0..self.dims)
                .map(|k| (next.theta[k] - s.theta[k]).abs() * weights[k])
                .fold(0.0, f64::max);
            let electron_move = (next.d - s.d).abs().max((next.omega_e - s.omega_e).abs());
            s = next;
            if it > 0 && nuclear_move < OUTER_TOL_SIGMAS && electron_move < ELECTRON_TOL_HZ {
                return Ok((s, it + 1));
            }
        }
        Err(Error::NoConvergence {
            what: "parameter inversion",
            iterations: OUTER_MAX_ITER,
        })
    }

    fn residuals(&self, s: &State) -> Result<(f64, f64)> {
        let p = s.params();
        let exact = exact_nuclear_frequencies(&p)?.values();
        let analytic = analytic_nuclear_frequencies(&p, true)?.values();
        Ok((
            weighted_rms(&exact, &self.nuclear),
            weighted_rms(&analytic, &self.nuclear),
        ))
    }

    fn fit(&self, start: Option<State>) -> Result<(State, usize)> {
        let four = Problem { dims: 4, ..*self };
        let (s4, it4) = match start {
            Some(s) => four.solve(s, false)?,
            None => {
                let guess = State {
                    theta: linear_guess(&self.nuclear),
                    d: 0.0,
                    omega_e: 0.0,
                };
                four.solve(guess, true)?
            }
        };
        if self.dims == 4 {
            return Ok((s4, it4));
        }
        self.profile(s4, it4)
    }

    /// Five-parameter fit as a bounded search over `ωex²`, each point a
    /// four-parameter fit. The spectrum is smooth in `ωex²`, and the aligned
    /// end point keeps the result no worse than the four-parameter fit.
    fn profile(&self, seed: State, iterations: usize) -> Result<(State, usize)> {
        let four = Problem { dims: 4, ..*self };
        let last = Cell::new(seed);
        let r0 = self.residuals(&seed)?.0;
        let best = Cell::new((r0 * r0, seed, iterations));
        let objective = |v: f64| -> f64 {
            let mut s = last.get();
            s.theta[4] = v.max(0.0).sqrt();
            let Ok((s, it)) = four.solve(s, false) else {
                return f64::INFINITY;
            };
            last.set(s);
            let Ok((r, _)) = self.residuals(&s) else {
                return f64::INFINITY;
            };
            if r * r < best.get().0 {
                best.set((r * r, s, it));
            }
            r * r
        };
        objective(0.0);
        let v_max = (seed.omega_e.abs() * MAX_MISALIGNMENT_DEG.to_radians().tan()).powi(2);
        brent_bounded(
            objective,
            0.0,
            v_max,
            PROFILE_TOL_HZ2,
            PROFILE_MAX_EVALUATIONS,
        );
        let (_, s, it) = best.get();
        Ok((s, it))
    }

    fn estimate(
        &self,
        center_id: &str,
        model: ParamModel,
        s: State,
        iterations: usize,
    ) -> Result<ParamEstimate> {
        let (exact, analytic) = self.residuals(&s)?;
        if exact > MISFIT_LIMIT_HZ {
            return Err(Error::ModelMisfit {
                residual: exact,
                limit: MISFIT_LIMIT_HZ,
            });
        }
        if (exact - analytic).abs() > ORACLE_AGREEMENT_HZ {
            return Err(Error::OracleMismatch { analytic, exact });
        }
        Ok(ParamEstimate {
            center_id: center_id.to_string(),
            model,
            p: s.theta[0],
            omega_n: s.theta[1],
            a_par: s.theta[2],
            a_perp: s.theta[3],
            omega_ex: (model == ParamModel::FiveParam).then_some(s.theta[4].abs()),
            d: s.d,
            omega_e: s.omega_e,
            weighted_residual: exact,
            analytic_residual: analytic,
            covariance: None,
            gamma_ratio: None,
            outer_iterations: iterations,
        })
    }
}

/// Minimise the weighted residual of the six nuclear lines, alternating with
/// the microwave inversion. The result carries no covariance yet.
pub fn fit_parameters(m: &MeasuredSet, model: ParamModel) -> Result<ParamEstimate> {
    let problem = Problem::from_set(m, model)?;
    let (s, it) = problem.fit(None)?;
    problem.estimate(&m.center_id, model, s, it)
}

/// Covariance of the estimate from re-solving with each of the eight measured
/// frequencies moved by ±0.1 Hz.
pub fn propagate_errors(m: &MeasuredSet, e: &ParamEstimate) -> Result<Covariance> {
    propagate_errors_with_step(m, e, PROPAGATION_STEP_HZ)
}

/// [`propagate_errors`] with a chosen frequency step.
pub fn propagate_errors_with_step(
    m: &MeasuredSet,
    e: &ParamEstimate,
    step: f64,
) -> Result<Covariance> {
    if !(step > 0.0) {
        return Err(Error::InvalidInput(format!(
            "step must be positive, got {step}"
        )));
    }
    let base = Problem::from_set(m, e.model)?;
    let names = e.model.parameter_names();
    let np = names.len();
    let values = |s: &State| -> Vec<f64> {
        let mut v = s.theta[..base.dims].to_vec();
        v.extend([s.d, s.omega_e]);
        v
    };
    let start = e.state();
    let mut sigmas = base.nuclear.map(|m| m.sigma_hz).to_vec();
    sigmas.extend(base.pair.sigmas());

    let mut jac = vec![vec![0.0; 8]; np];
    for k in 0..8 {
        let shifted = |delta: f64| -> Result<Vec<f64>> {
            let mut p = base;
            if k < 6 {
                p.nuclear[k].freq_hz += delta;
            } else {
                let mut v = p.pair.values();
                v[k - 6] += delta;
                p.pair = p.pair.with_values(v);
            }
            Ok(values(&p.fit(Some(start))?.0))
        };
        let (up, down) = (shifted(step)?, shifted(-step)?);
        for i in 0..np {
            jac[i][k] = (up[i] - down[i]) / (2.0 * step);
        }
    }
    let mut matrix = vec![vec![0.0; np]; np];
    for i in 0..np {
        for j in 0..=i {
            let c: f64 = (0..8)
                .map(|k| jac[i][k] * jac[j][k] * sigmas[k] * sigmas[k])
                .sum();
            matrix[i][j] = c;
            matrix[j][i] = c;
        }
    }
    Ok(Covariance {
        names: names.iter().map(|s| s.to_string()).collect(),
        matrix,
    })
}

/// `γe/γn = ωe/ωn` with first-order propagation, including the `ωe`–`ωn`
/// covariance.
pub fn gamma_ratio(e: &ParamEstimate) -> Result<RatioEstimate> {
    if e.omega_n.abs() < MIN_OMEGA_N_HZ {
        return Err(Error::InvalidInput(format!(
            "|omega_n| = {:.3} Hz is too small for a stable ratio",
            e.omega_n.abs()
        )));
    }
    let cov = e
        .covariance
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("estimate has no covariance".into()))?;
    let get = |a, b| {
        cov.get(a, b)
            .ok_or_else(|| Error::InvalidInput(format!("covariance lacks {a}/{b}")))
    };
    let (we, wn) = (e.omega_e, e.omega_n);
    let r = we / wn;
    let var = r
        * r
        * (get("omega_e", "omega_e")? / (we * we) + get("omega_n", "omega_n")? / (wn * wn)
            - 2.0 * get("omega_e", "omega_n")? / (we * wn));
    Ok(RatioEstimate {
        value: r,
        sigma: var.max(0.0).sqrt(),
    })
}

/// Fit, propagate errors and attach the gyromagnetic ratio.
pub fn estimate(m: &MeasuredSet, model: ParamModel) -> Result<ParamEstimate> {
    let mut e = fit_parameters(m, model)?;
    e.covariance = Some(propagate_errors(m, &e)?);
    e.gamma_ratio = Some(gamma_ratio(&e)?);
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nominal_set() -> MeasuredSet {
        MeasuredSet::synthetic("nv1", &NVParams::nominal(), Projection::Plus, 1.6, 1.6).unwrap()
    }

    fn pair(plus: f64, minus: f64, mi: Projection) -> MwPair {
        MwPair {
            plus: Measured::new(plus, 1.0),
            plus_mi: mi,
            minus: Measured::new(minus, 1.0),
            minus_mi: mi,
        }
    }

    #[test]
    fn longitudinal_pair_inverts_linearly() {
        let truth = NVParams::nominal().longitudinal_only();
        let [f1, f2] = exact_electron_frequencies(&truth, Projection::Zero).unwrap();
        let e = solve_d_omega_e(&pair(f1, f2, Projection::Zero), &truth).unwrap();
        assert!((e.d - 0.5 * (f1 + f2)).abs() < 1e-5);
        assert!((e.omega_e - 0.5 * (f1 - f2)).abs() < 1e-5);
        assert!((e.d - truth.d).abs() < 1e-5);
    }

    #[test]
    fn nominal_pair_is_recovered() {
        let truth = NVParams::nominal();
        for mi in Projection::ALL {
            let [f1, f2] = exact_electron_frequencies(&truth, mi).unwrap();
            let e = solve_d_omega_e(&pair(f1, f2, mi), &truth).unwrap();
            assert!((e.d - truth.d).abs() < 1e-3, "{mi}: {}", e.d - truth.d);
            assert!((e.omega_e - truth.omega_e).abs() < 1e-3);
            assert!((e.d_sigma - 0.5f64.sqrt()).abs() < 1e-3);
        }
    }

    #[test]
    fn microwave_order_does_not_matter() {
        let m = nominal_set();
        let mut swapped = m.clone();
        swapped.mw.reverse();
        assert_eq!(m.mw_pair().unwrap(), swapped.mw_pair().unwrap());
        let background = NVParams::nominal();
        let a = solve_d_omega_e(&m.mw_pair().unwrap(), &background).unwrap();
        let b = solve_d_omega_e(&swapped.mw_pair().unwrap(), &background).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn negative_field_hint_flips_assignment() {
        let truth = NVParams::from_field(-0.051, 0.0);
        let m = MeasuredSet::synthetic("neg", &truth, Projection::Zero, 1.6, 1.6).unwrap();
        let pair = m.mw_pair().unwrap();
        assert!(pair.plus.freq_hz < pair.minus.freq_hz);
        let e = solve_d_omega_e(&pair, &truth).unwrap();
        assert!((e.omega_e - truth.omega_e).abs() < 1e-3);
    }

    #[test]
    fn set_validation() {
        let m = nominal_set();
        assert!(m.validate().is_ok());

        let mut missing = m.clone();
        missing.transitions.pop();
        assert!(matches!(missing.validate(), Err(Error::InvalidInput(_))));

        let mut twice = m.clone();
        twice.transitions[5] = twice.transitions[4];
        assert!(twice.validate().is_err());

        let mut zero_sigma = m.clone();
        zero_sigma.transitions[2].sigma_hz = 0.0;
        assert!(zero_sigma.validate().is_err());

        let mut bad_ms = m.clone();
        bad_ms.transitions[0].ms = 2;
        assert!(bad_ms.validate().is_err());

        let mut one_line = m.clone();
        one_line.mw.pop();
        assert!(one_line.validate().is_err());

        let mut nan_line = m;
        nan_line.mw[0].freq_hz = f64::NAN;
        assert!(nan_line.validate().is_err());
    }

    #[test]
    fn measured_set_json_round_trip() {
        let m = nominal_set();
        let text = serde_json::to_string(&m).unwrap();
        assert!(text.contains("\"B_hint_mT\""));
        assert!(text.contains("\"mS\":1"));
        assert!(text.contains("\"branch\":\"0<->+1\""));
        let back: MeasuredSet = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
    }

    fn assert_recovered(e: &ParamEstimate, truth: &NVParams, tol: f64) {
        let p = e.params();
        let pairs = [
            (p.p, truth.p),
            (p.omega_n, truth.omega_n),
            (p.a_par, truth.a_par),
            (p.a_perp, truth.a_perp),
            (p.d, truth.d),
            (p.omega_e, truth.omega_e),
        ];
        for (k, (got, want)) in pairs.iter().enumerate() {
            assert!((got - want).abs() < tol, "parameter {k}: {got} vs {want}");
        }
    }

    #[test]
    fn noise_free_round_trip_both_models() {
        let truth = NVParams::nominal();
        let m = nominal_set();
        for model in [ParamModel::FourParam, ParamModel::FiveParam] {
            let e = fit_parameters(&m, model).unwrap();
            assert_recovered(&e, &truth, 1e-3);
            assert!(e.weighted_residual < 1e-3);
            assert!(e.analytic_residual < 0.05);
        }
    }

    #[test]
    fn misaligned_field_needs_the_fifth_parameter() {
        let truth = NVParams::from_field(0.051, 0.05f64.to_radians());
        let m = MeasuredSet::synthetic("tilt", &truth, Projection::Plus, 1.6, 1.6).unwrap();
        let five = fit_parameters(&m, ParamModel::FiveParam).unwrap();
        let wx = five.omega_ex.unwrap();
        assert!((wx - truth.omega_ex).abs() < 1e-3 * truth.omega_ex, "{wx}");
        assert!(five.weighted_residual < 1e-3);
        let four = fit_parameters(&m, ParamModel::FourParam).unwrap();
        assert!(four.weighted_residual > 0.1 && four.weighted_residual < 10.0);
        assert!(five.weighted_residual <= four.weighted_residual);
    }

    #[test]
    fn reordering_records_changes_nothing() {
        let m = nominal_set().with_noise(3);
        let mut shuffled = m.clone();
        shuffled.transitions.reverse();
        shuffled.transitions.swap(0, 3);
        shuffled.mw.reverse();
        let a = fit_parameters(&m, ParamModel::FourParam).unwrap();
        let b = fit_parameters(&shuffled, ParamModel::FourParam).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fit_is_deterministic() {
        let m = nominal_set().with_noise(11);
        let a = fit_parameters(&m, ParamModel::FiveParam).unwrap();
        let b = fit_parameters(&m, ParamModel::FiveParam).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn five_parameter_residual_never_exceeds_four() {
        for seed in 0..5 {
            let m = nominal_set().with_noise(seed);
            let four = fit_parameters(&m, ParamModel::FourParam).unwrap();
            let five = fit_parameters(&m, ParamModel::FiveParam).unwrap();
            assert!(
                five.weighted_residual <= four.weighted_residual,
                "seed {seed}"
            );
        }
    }

    #[test]
    fn corrupted_line_is_a_misfit() {
        let mut m = nominal_set();
        m.transitions[1].freq_hz += 5e4;
        assert!(matches!(
            fit_parameters(&m, ParamModel::FourParam),
            Err(Error::ModelMisfit { .. })
        ));
    }

    #[test]
    fn doubled_sigmas_double_parameter_sigmas() {
        let m = nominal_set();
        let e = fit_parameters(&m, ParamModel::FourParam).unwrap();
        let c1 = propagate_errors(&m, &e).unwrap();
        let mut wide = m.clone();
        for r in &mut wide.transitions {
            r.sigma_hz *= 2.0;
        }
        for r in &mut wide.mw {
            r.sigma_hz *= 2.0;
        }
        let c2 = propagate_errors(&wide, &e).unwrap();
        for n in &c1.names {
            let ratio = c2.sigma(n).unwrap() / c1.sigma(n).unwrap();
            assert!((ratio - 2.0).abs() < 1e-9, "{n}: {ratio}");
        }
    }

    #[test]
    fn quadrupole_sigma_is_in_the_expected_band() {
        let m = nominal_set();
        let e = estimate(&m, ParamModel::FourParam).unwrap();
        let s = e.sigma("P").unwrap();
        assert!((0.5..3.0).contains(&s), "{s}");
        let cov = e.covariance.as_ref().unwrap();
        for (i, row) in cov.matrix.iter().enumerate() {
            assert!(row[i] > 0.0);
            for (j, v) in row.iter().enumerate() {
                assert_eq!(*v, cov.matrix[j][i]);
            }
        }
    }

    #[test]
    fn jacobian_step_size_is_immaterial() {
        let m = nominal_set();
        let e = fit_parameters(&m, ParamModel::FourParam).unwrap();
        let coarse = propagate_errors_with_step(&m, &e, 0.1).unwrap();
        let fine = propagate_errors_with_step(&m, &e, 0.05).unwrap();
        let n = coarse.names.len();
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (coarse.matrix[i][j], fine.matrix[i][j]);
                let scale = (coarse.matrix[i][i] * coarse.matrix[j][j]).sqrt();
                assert!((a - b).abs() <= 0.05 * scale, "({i},{j}) {a} vs {b}");
            }
        }
    }

    fn ratio_estimate(omega_e: f64, omega_n: f64) -> ParamEstimate {
        let names = ParamModel::FourParam.parameter_names();
        let n = names.len();
        let mut matrix = vec![vec![0.0; n]; n];
        matrix[1][1] = 1.0;
        matrix[n - 1][n - 1] = 4e6;
        ParamEstimate {
            center_id: "r".into(),
            model: ParamModel::FourParam,
            p: 0.0,
            omega_n,
            a_par: 0.0,
            a_perp: 0.0,
            omega_ex: None,
            d: 0.0,
            omega_e,
            weighted_residual: 0.0,
            analytic_residual: 0.0,
            covariance: Some(Covariance {
                names: names.iter().map(|s| s.to_string()).collect(),
                matrix,
            }),
            gamma_ratio: None,
            outer_iterations: 0,
        }
    }

    #[test]
    fn gamma_ratio_value_and_sigma() {
        let wn = -156_870.0;
        let r = gamma_ratio(&ratio_estimate(-9113.85 * wn, wn)).unwrap();
        assert!((r.value + 9113.85).abs() < 1e-9);
        let expected = 9113.85 * ((4e6 / (9113.85 * wn).powi(2)) + 1.0 / (wn * wn)).sqrt();
        assert!((r.sigma - expected).abs() < 1e-9 * expected);
    }

    #[test]
    fn gamma_ratio_is_homogeneous() {
        let a = gamma_ratio(&ratio_estimate(1.4e9, -1.5e5)).unwrap();
        let b = gamma_ratio(&ratio_estimate(2.8e9, -3.0e5)).unwrap();
        assert!((a.value - b.value).abs() < 1e-9);
    }

    #[test]
    fn tiny_nuclear_zeeman_is_refused() {
        assert!(gamma_ratio(&ratio_estimate(1e4, 50.0)).is_err());
        let mut e = ratio_estimate(1.4e9, -1.5e5);
        e.covariance = None;
        assert!(gamma_ratio(&e).is_err());
    }

    #[test]
    fn estimate_json_round_trip() {
        let e = estimate(&nominal_set(), ParamModel::FourParam).unwrap();
        let text = serde_json::to_string(&e).unwrap();
        assert!(text.contains("\"model\":\"four_param\""));
        let back: ParamEstimate = serde_json::from_str(&text).unwrap();
        assert_eq!(back, e);
    }
}
