//! Closed-form nuclear frequencies from second-order reductions.
//!
//! The nine-level Hamiltonian splits into three electron subspaces of three
//! nuclear levels each. Every level outside a subspace that couples to it is
//! eliminated as the distant level of a three-level system
//!
//! ```text
//! | Δ   a   b  |        | Δ + a²/(Δ-δ₁) + b²/(Δ-δ₂)      0             0        |
//! | a   δ₁  c  |  --->  |        0              δ₁ - a²/(Δ-δ₁)     c - ab/Δ     |
//! | b   c   δ₂ |        |        0                 c - ab/Δ     δ₂ - b²/(Δ-δ₂)  |
//! ```
//!
//! Keeping `δ₁, δ₂` in the level-shift denominators is what brings the final
//! frequencies to the 10 mHz level; with `Δ` alone they degrade to ~10 Hz.
//! Summing the reductions over all distant levels decouples the subspaces and
//! leaves a 3x3 nuclear Hamiltonian per subspace, which is reduced once more by
//! ordinary second-order perturbation.
//!
//! Couplings are taken from [`build_full`], so misalignment and strain enter
//! the same way as the hyperfine term.

use std::f64::consts::SQRT_2;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{build_full, exact_nuclear_frequencies, NVParams, Strain};
use crate::spin::{BasisState, Projection, C64};
use crate::transitions::{Branch, FrequencySet, NuclearTransition};

/// Smallest admissible reduction denominator (Hz).
pub const RESONANCE_GUARD_HZ: f64 = 1e3;
/// Deviation above which a sweep row is flagged (Hz).
pub const DEVIATION_TOL_HZ: f64 = 0.05;
/// Required ratio between the distant level and every other entry.
pub const SEPARATION_FACTOR: f64 = 10.0;

const SELF_CONSISTENT_MAX_ITER: usize = 50;
const SELF_CONSISTENT_TOL_HZ: f64 = 1e-9;

/// Three-level Hamiltonian with one distant level `delta_far` and a
/// near-degenerate pair. Couplings `a`, `b` connect the pair to the distant
/// level, `c` couples the pair directly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThreeLevelSystem {
    pub delta_far: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl ThreeLevelSystem {
    pub fn validate(&self) -> Result<()> {
        let others = [self.delta1, self.delta2, self.a, self.b, self.c]
            .iter()
            .fold(0.0, |m: f64, v| m.max(v.abs()));
        if self.delta_far.abs() <= SEPARATION_FACTOR * others {
            return Err(Error::InvalidInput(format!(
                "distant level {:e} Hz is not separated from the pair (largest other entry {:e} Hz)",
                self.delta_far, others
            )));
        }
        Ok(())
    }
}

/// Result of [`reduce_three_level`]: the decoupled distant level and the
/// effective 2x2 block of the pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedThreeLevel {
    pub delta_far: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub coupling: f64,
}

impl ReducedThreeLevel {
    /// Eigenvalues of the effective pair block, ascending.
    pub fn pair_eigenvalues(&self) -> [f64; 2] {
        let mean = 0.5 * (self.delta1 + self.delta2);
        let half = 0.5 * (self.delta1 - self.delta2);
        let r = half.hypot(self.coupling);
        [mean - r, mean + r]
    }
}

fn guarded(denominator: f64) -> Result<f64> {
    if denominator.abs() < RESONANCE_GUARD_HZ {
        Err(Error::NearResonance { denominator })
    } else {
        Ok(denominator)
    }
}

/// Second-order shift of a level coupled with strength² `coupling_sq` to a level
/// `gap` Hz below it (`gap = E_level - E_other`).
fn level_shift(coupling_sq: f64, gap: f64) -> Result<f64> {
    Ok(coupling_sq / guarded(gap)?)
}

/// Correction `-x/Δ` to the direct coupling of a pair through a distant level.
fn pair_coupling<T>(product: T, distant: f64) -> Result<T>
where
    T: std::ops::Div<f64, Output = T> + std::ops::Neg<Output = T>,
{
    Ok(-(product / guarded(distant)?))
}

/// Eliminate the distant level of a three-level system.
///
/// With the flag on the pair energies enter the denominators once
/// ([`Denominators::Diagonal`]); with it off only `delta_far` does.
pub fn reduce_three_level(
    t: &ThreeLevelSystem,
    keep_small_denominators: bool,
) -> Result<ReducedThreeLevel> {
    let mode = if keep_small_denominators {
        Denominators::Diagonal
    } else {
        Denominators::ElectronGap
    };
    reduce_three_level_with(t, mode)
}

pub fn reduce_three_level_with(
    t: &ThreeLevelSystem,
    mode: Denominators,
) -> Result<ReducedThreeLevel> {
    t.validate()?;
    let shift = |w: f64, delta: f64| -> Result<f64> {
        match mode {
            Denominators::ElectronGap => level_shift(w, t.delta_far),
            Denominators::Diagonal => level_shift(w, t.delta_far - delta),
            Denominators::SelfConsistent => {
                // s = w / (Δ - δ + s), i.e. the pair level moved by -s.
                let mut s = level_shift(w, t.delta_far - delta)?;
                for iterations in 1.. {
                    let next = level_shift(w, t.delta_far - delta + s)?;
                    let step = (next - s).abs();
                    s = next;
                    if step < SELF_CONSISTENT_TOL_HZ {
                        break;
                    }
                    if iterations >= SELF_CONSISTENT_MAX_ITER {
                        return Err(Error::NoConvergence {
                            what: "self-consistent level shift",
                            iterations,
                        });
                    }
                }
                Ok(s)
            }
        }
    };
    let s1 = shift(t.a * t.a, t.delta1)?;
    let s2 = shift(t.b * t.b, t.delta2)?;
    Ok(ReducedThreeLevel {
        delta_far: t.delta_far + s1 + s2,
        delta1: t.delta1 - s1,
        delta2: t.delta2 - s2,
        coupling: t.c + pair_coupling(t.a * t.b, t.delta_far)?,
    })
}

/// Effective nuclear Hamiltonian of one electron subspace.
///
/// `levels` and the nuclear couplings are ordered `mI = +1, 0, -1`. For the
/// `mS = 0` subspace `omega_p1`, `omega_0`, `omega_m1` and `omega_cap` are the
/// quantities `ω₊₁`, `ω₀`, `ω₋₁` and `Ω` of the closed-form expressions, where
/// the coupling between adjacent nuclear levels is `Ω/√2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubspaceEffective {
    pub ms: Projection,
    pub omega_p1: f64,
    pub omega_0: f64,
    pub omega_m1: f64,
    /// `√2 · Re⟨+1|H_eff|0⟩`.
    pub omega_cap: f64,
    /// `[⟨+1|H|0⟩, ⟨0|H|-1⟩, ⟨+1|H|-1⟩]`.
    pub couplings: [C64; 3],
}

impl SubspaceEffective {
    pub fn levels(&self) -> [f64; 3] {
        [self.omega_p1, self.omega_0, self.omega_m1]
    }

    fn coupling(&self, i: usize, j: usize) -> C64 {
        match (i.min(j), i.max(j)) {
            (0, 1) => self.couplings[0],
            (1, 2) => self.couplings[1],
            (0, 2) => self.couplings[2],
            _ => C64::new(0.0, 0.0),
        }
    }

    /// Nuclear levels after the second-order step inside the subspace.
    pub fn shifted_levels(&self) -> Result<[f64; 3]> {
        let w = self.levels();
        let mut out = w;
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    out[i] += level_shift(self.coupling(i, j).norm_sqr(), w[i] - w[j])?;
                }
            }
        }
        Ok(out)
    }

    /// `(f(0↔+1), f(0↔-1))` of this subspace.
    pub fn frequencies(&self) -> Result<(f64, f64)> {
        let [up, zero, down] = self.shifted_levels()?;
        Ok((up - zero, down - zero))
    }
}

fn electron_energy(p: &NVParams, ms: Projection) -> f64 {
    let m = ms.as_f64();
    (p.d + p.strain.ez) * m * m + p.omega_e * m
}

/// Denominator used for the level shifts of the eliminated couplings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Denominators {
    /// Electron-only gap; nuclear terms dropped.
    ElectronGap,
    /// Full diagonal difference `E_i - E_k`.
    Diagonal,
    /// `E_i + s_i - E_k` with the level's own shift `s_i` iterated to a fixed
    /// point. Its first pass is [`Denominators::Diagonal`].
    SelfConsistent,
}

impl Denominators {
    /// Mode behind the `keep_small_denominators` flag.
    pub fn from_flag(keep_small_denominators: bool) -> Self {
        if keep_small_denominators {
            Denominators::SelfConsistent
        } else {
            Denominators::ElectronGap
        }
    }
}

/// Effective nuclear Hamiltonian of subspace `ms` after eliminating the other
/// two electron subspaces.
pub fn subspace_effective(
    p: &NVParams,
    ms: Projection,
    keep_small_denominators: bool,
) -> Result<SubspaceEffective> {
    subspace_effective_with(p, ms, Denominators::from_flag(keep_small_denominators))
}

pub fn subspace_effective_with(
    p: &NVParams,
    ms: Projection,
    mode: Denominators,
) -> Result<SubspaceEffective> {
    let h = build_full(p)?;
    let energy: Vec<f64> = h.diagonal();
    let inside: [usize; 3] = Projection::ALL.map(|mi| BasisState::new(ms, mi).index());
    let reference = electron_energy(p, ms);
    let electron_gap = |k: usize| reference - electron_energy(p, BasisState::from_index(k).ms);

    let mut levels = [0.0; 3];
    let mut couplings = [C64::new(0.0, 0.0); 3];
    for (slot, &i) in inside.iter().enumerate() {
        let outside: Vec<(f64, usize)> = (0..9)
            .filter(|k| !inside.contains(k))
            .map(|k| (h.get(i, k).norm_sqr(), k))
            .filter(|&(w, _)| w > 0.0)
            .collect();
        let pass = |s: f64| -> Result<f64> {
            let mut next = 0.0;
            for &(w, k) in &outside {
                let gap = match mode {
                    Denominators::ElectronGap => electron_gap(k),
                    _ => energy[i] + s - energy[k],
                };
                next += level_shift(w, gap)?;
            }
            Ok(next)
        };
        let shift = match mode {
            Denominators::SelfConsistent => {
                let mut s = pass(0.0)?;
                let mut iterations = 1;
                loop {
                    let next = pass(s)?;
                    let step = (next - s).abs();
                    s = next;
                    iterations += 1;
                    if step < SELF_CONSISTENT_TOL_HZ {
                        break s;
                    }
                    if iterations >= SELF_CONSISTENT_MAX_ITER {
                        return Err(Error::NoConvergence {
                            what: "self-consistent level shift",
                            iterations,
                        });
                    }
                }
            }
            _ => pass(0.0)?,
        };
        levels[slot] = energy[i] - reference + shift;
    }
    for (slot, (a, b)) in [(0usize, 1usize), (1, 2), (0, 2)].into_iter().enumerate() {
        let (i, j) = (inside[a], inside[b]);
        let mut c = h.get(i, j);
        for k in (0..9).filter(|k| !inside.contains(k)) {
            let product = h.get(i, k) * h.get(k, j);
            if product.norm_sqr() > 0.0 {
                c += pair_coupling(product, -electron_gap(k))?;
            }
        }
        couplings[slot] = c;
    }

    Ok(SubspaceEffective {
        ms,
        omega_p1: levels[0],
        omega_0: levels[1],
        omega_m1: levels[2],
        omega_cap: SQRT_2 * couplings[0].re,
        couplings,
    })
}

/// Six nuclear frequencies from the closed-form reduction.
pub fn analytic_nuclear_frequencies(
    p: &NVParams,
    keep_small_denominators: bool,
) -> Result<FrequencySet> {
    analytic_nuclear_frequencies_with(p, Denominators::from_flag(keep_small_denominators))
}

pub fn analytic_nuclear_frequencies_with(p: &NVParams, mode: Denominators) -> Result<FrequencySet> {
    let mut values = [0.0; 6];
    for ms in Projection::ALL {
        let (up, down) = subspace_effective_with(p, ms, mode)?.frequencies()?;
        values[NuclearTransition::new(ms, Branch::Plus).index()] = up;
        values[NuclearTransition::new(ms, Branch::Minus).index()] = down;
    }
    Ok(FrequencySet::from_nuclear(values))
}

/// Parameter grid for [`validation_sweep`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub fields_gauss: Vec<f64>,
    pub misalignments_deg: Vec<f64>,
    /// Value applied to each of the four transverse strain couplings (Hz).
    pub strains_hz: Vec<f64>,
    pub keep_small_denominators: bool,
    pub tolerance_hz: f64,
}

impl Default for SweepGrid {
    /// 400–600 G in 25 G steps, misalignment 0/0.05/0.1°, strain 0/0.5/1 MHz.
    fn default() -> Self {
        Self {
            fields_gauss: (0..=8).map(|k| 400.0 + 25.0 * k as f64).collect(),
            misalignments_deg: vec![0.0, 0.05, 0.1],
            strains_hz: vec![0.0, 0.5e6, 1e6],
            keep_small_denominators: true,
            tolerance_hz: DEVIATION_TOL_HZ,
        }
    }
}

impl SweepGrid {
    pub fn single(field_gauss: f64, misalignment_deg: f64, strain_hz: f64) -> Self {
        Self {
            fields_gauss: vec![field_gauss],
            misalignments_deg: vec![misalignment_deg],
            strains_hz: vec![strain_hz],
            ..Self::default()
        }
    }

    fn points(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::new();
        for &b in &self.fields_gauss {
            for &a in &self.misalignments_deg {
                for &s in &self.strains_hz {
                    out.push((b, a, s));
                }
            }
        }
        out
    }
}

/// Whether a grid point lies where the closed-form frequencies are validated:
/// 400–600 G, misalignment up to 0.1°, transverse strain up to 1 MHz.
pub fn in_validated_domain(field_gauss: f64, misalignment_deg: f64, strain_hz: f64) -> bool {
    let eps = 1e-9;
    (400.0 - eps..=600.0 + eps).contains(&field_gauss)
        && misalignment_deg.abs() <= 0.1 + eps
        && strain_hz.abs() <= 1e6 * (1.0 + eps)
}

pub fn sweep_params(field_gauss: f64, misalignment_deg: f64, strain_hz: f64) -> NVParams {
    NVParams::from_field(field_gauss * 1e-4, misalignment_deg.to_radians()).with_strain(Strain {
        ez: 0.0,
        ex_prime: strain_hz,
        ey_prime: strain_hz,
        ex: strain_hz,
        ey: strain_hz,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub field_gauss: f64,
    pub misalignment_deg: f64,
    pub strain_hz: f64,
    pub transition: NuclearTransition,
    pub analytic_hz: f64,
    pub exact_hz: f64,
    pub deviation_hz: f64,
    pub in_domain: bool,
    pub flagged: bool,
    /// Set when either evaluation failed at this point; frequencies are NaN.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionSummary {
    pub transition: NuclearTransition,
    pub max_deviation_hz: f64,
    pub mean_deviation_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub per_transition: Vec<TransitionSummary>,
    pub tolerance_hz: f64,
}

impl SweepReport {
    /// Largest deviation among in-domain rows.
    pub fn max_in_domain_deviation(&self) -> f64 {
        self.rows
            .iter()
            .filter(|r| r.in_domain)
            .map(|r| {
                if r.error.is_some() {
                    f64::INFINITY
                } else {
                    r.deviation_hz
                }
            })
            .fold(0.0, f64::max)
    }

    pub fn max_deviation(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.deviation_hz)
            .filter(|d| d.is_finite())
            .fold(0.0, f64::max)
    }

    pub fn in_domain_violations(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| r.in_domain && r.flagged)
            .count()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "field_gauss,misalignment_deg,strain_hz,ms,branch,analytic_hz,exact_hz,deviation_hz,in_domain,flagged\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{:.6},{:.6},{:.6e},{},{}",
                r.field_gauss,
                r.misalignment_deg,
                r.strain_hz,
                r.transition.ms,
                r.transition.branch,
                r.analytic_hz,
                r.exact_hz,
                r.deviation_hz,
                r.in_domain,
                r.flagged
            );
        }
        s
    }
}

/// Compare closed-form and exact frequencies over a parameter grid.
///
/// Points are evaluated in parallel; rows come out in grid order. Failures at a
/// point are recorded in the row rather than returned.
pub fn validation_sweep(grid: &SweepGrid) -> SweepReport {
    let points = grid.points();
    let rows: Vec<SweepRow> = points
        .par_iter()
        .flat_map_iter(|&(b, angle, strain)| {
            let p = sweep_params(b, angle, strain);
            let in_domain = in_validated_domain(b, angle, strain);
            let outcome = analytic_nuclear_frequencies(&p, grid.keep_small_denominators)
                .and_then(|a| Ok((a, exact_nuclear_frequencies(&p)?)));
            NuclearTransition::all()
                .into_iter()
                .map(move |t| match &outcome {
                    Ok((a, e)) => {
                        let dev = (a.freq(t) - e.freq(t)).abs();
                        SweepRow {
                            field_gauss: b,
                            misalignment_deg: angle,
                            strain_hz: strain,
                            transition: t,
                            analytic_hz: a.freq(t),
                            exact_hz: e.freq(t),
                            deviation_hz: dev,
                            in_domain,
                            flagged: dev > grid.tolerance_hz,
                            error: None,
                        }
                    }
                    Err(err) => SweepRow {
                        field_gauss: b,
                        misalignment_deg: angle,
                        strain_hz: strain,
                        transition: t,
                        analytic_hz: f64::NAN,
                        exact_hz: f64::NAN,
                        deviation_hz: f64::NAN,
                        in_domain,
                        flagged: true,
                        error: Some(err.to_string()),
                    },
                })
        })
        .collect();

    let per_transition = NuclearTransition::all()
        .into_iter()
        .map(|t| {
            let devs: Vec<f64> = rows
                .iter()
                .filter(|r| r.transition == t && r.error.is_none())
                .map(|r| r.deviation_hz)
                .collect();
            TransitionSummary {
                transition: t,
                max_deviation_hz: devs.iter().copied().fold(0.0, f64::max),
                mean_deviation_hz: if devs.is_empty() {
                    f64::NAN
                } else {
                    devs.iter().sum::<f64>() / devs.len() as f64
                },
            }
        })
        .collect();

    SweepReport {
        rows,
        per_transition,
        tolerance_hz: grid.tolerance_hz,
    }
}
