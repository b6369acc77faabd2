//! Ground-state Hamiltonian of the NV⁻ electron spin (S = 1) coupled to the
//! ¹⁴N nuclear spin (I = 1), and its exact transition frequencies.
//!
//! ```text
//! H = D Sz² + ωe Sz + P Iz² + ωn Iz + A∥ Sz Iz              (longitudinal)
//!   + A⊥ (Sx Ix + Sy Iy) + ωex Sx + ωnx Ix                   (transverse)
//!   + Ez Sz² + Ex'{Sx,Sz} + Ey'{Sy,Sz} + Ex(Sy²-Sx²) + Ey{Sx,Sy}   (strain)
//! ```
//!
//! # Sign conventions
//!
//! - `ωe = γe·B` with `γe = +28.033 GHz/T` and `ωn = γn·B` with
//!   `γn = γe / (-9113.85)`, so `ωe/ωn = γe/γn` is negative. For a field along
//!   the NV axis `mS = -1` is the lower electron level (≈ 1.4 GHz at 51 mT) and
//!   `mS = +1` the upper one (≈ 4.3 GHz).
//! - A nuclear transition frequency is the energy of the `mI = ±1` level minus
//!   the energy of the `mI = 0` level in the same electron subspace,
//!   `f(mS, 0↔±1) = E(mS, ±1) - E(mS, 0)`. All six values are negative for the
//!   ¹⁴N couplings; e.g. `f(-1, 0↔-1) ≈ -6.9586 MHz` at 51 mT.
//! - An electron transition is `E(±1, mI) - E(0, mI)`.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::constants::{
    A_PAR_COMBINED, A_PERP_COMBINED, B_NOMINAL, D_NOMINAL, GAMMA_E, GAMMA_N, P_COMBINED,
};
use crate::error::{Error, Result};
use crate::spin::{
    eigh, kron, label_states, spin1_operators, BasisState, HermitianMatrix, Projection,
};
use crate::transitions::{Branch, FrequencySet, NuclearTransition, TransitionLabel};

/// Relative tolerance on `ωex/ωe = ωnx/ωn`.
pub const RATIO_RTOL: f64 = 1e-12;
/// Field step used by [`field_sensitivity`] (T).
pub const SENSITIVITY_STEP_T: f64 = 0.1e-6;

/// Strain couplings of the electron spin (Hz).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Strain {
    pub ez: f64,
    pub ex_prime: f64,
    pub ey_prime: f64,
    pub ex: f64,
    pub ey: f64,
}

impl Strain {
    pub fn is_zero(&self) -> bool {
        *self == Strain::default()
    }

    /// Largest of the four transverse strain couplings.
    pub fn transverse_magnitude(&self) -> f64 {
        [self.ex_prime, self.ey_prime, self.ex, self.ey]
            .iter()
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Hamiltonian parameters, all in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NVParams {
    #[serde(rename = "D")]
    pub d: f64,
    pub omega_e: f64,
    #[serde(rename = "P")]
    pub p: f64,
    pub omega_n: f64,
    pub a_par: f64,
    pub a_perp: f64,
    #[serde(default)]
    pub omega_ex: f64,
    #[serde(default)]
    pub omega_nx: f64,
    #[serde(default)]
    pub strain: Strain,
}

impl NVParams {
    pub fn zero() -> Self {
        Self {
            d: 0.0,
            omega_e: 0.0,
            p: 0.0,
            omega_n: 0.0,
            a_par: 0.0,
            a_perp: 0.0,
            omega_ex: 0.0,
            omega_nx: 0.0,
            strain: Strain::default(),
        }
    }

    /// Combined couplings in a field of `b_tesla` tilted by `misalignment_rad`
    /// from the NV axis.
    pub fn from_field(b_tesla: f64, misalignment_rad: f64) -> Self {
        let (s, c) = misalignment_rad.sin_cos();
        Self {
            d: D_NOMINAL,
            omega_e: GAMMA_E * b_tesla * c,
            p: P_COMBINED,
            omega_n: GAMMA_N * b_tesla * c,
            a_par: A_PAR_COMBINED,
            a_perp: A_PERP_COMBINED,
            omega_ex: GAMMA_E * b_tesla * s,
            omega_nx: GAMMA_N * b_tesla * s,
            strain: Strain::default(),
        }
    }

    /// Combined couplings at 51 mT along the NV axis.
    pub fn nominal() -> Self {
        Self::from_field(B_NOMINAL, 0.0)
    }

    pub fn with_strain(mut self, strain: Strain) -> Self {
        self.strain = strain;
        self
    }

    /// Copy with every transverse term (A⊥, ωex, ωnx, transverse strain) removed.
    pub fn longitudinal_only(&self) -> Self {
        Self {
            a_perp: 0.0,
            omega_ex: 0.0,
            omega_nx: 0.0,
            strain: Strain {
                ez: self.strain.ez,
                ..Strain::default()
            },
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.d,
            self.omega_e,
            self.p,
            self.omega_n,
            self.a_par,
            self.a_perp,
            self.omega_ex,
            self.omega_nx,
            self.strain.ez,
            self.strain.ex_prime,
            self.strain.ey_prime,
            self.strain.ex,
            self.strain.ey,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("non-finite parameter".into()));
        }
        if self.omega_e.abs() >= self.d && !(self.d == 0.0 && self.omega_e == 0.0) {
            return Err(Error::InvalidParams(format!(
                "|omega_e| = {} Hz must stay below D = {} Hz",
                self.omega_e.abs(),
                self.d
            )));
        }
        if self.omega_ex != 0.0 && self.omega_nx != 0.0 {
            // ωex·ωn = ωnx·ωe, compared relative to the product magnitudes.
            let lhs = self.omega_ex * self.omega_n;
            let rhs = self.omega_nx * self.omega_e;
            let scale = lhs.abs().max(rhs.abs());
            if (lhs - rhs).abs() > RATIO_RTOL * scale {
                return Err(Error::InvalidParams(format!(
                    "omega_ex/omega_e ({:e}) differs from omega_nx/omega_n ({:e})",
                    self.omega_ex / self.omega_e,
                    self.omega_nx / self.omega_n
                )));
            }
        }
        Ok(())
    }

    /// Diagonal of the longitudinal Hamiltonian (plus Ez) in basis order.
    pub fn longitudinal_levels(&self) -> [f64; 9] {
        std::array::from_fn(|i| {
            let s = BasisState::from_index(i);
            let ms = s.ms.as_f64();
            let mi = s.mi.as_f64();
            (self.d + self.strain.ez) * ms * ms
                + self.omega_e * ms
                + self.p * mi * mi
                + self.omega_n * mi
                + self.a_par * ms * mi
        })
    }
}

struct OperatorBasis {
    sz2: HermitianMatrix,
    sz: HermitianMatrix,
    iz2: HermitianMatrix,
    iz: HermitianMatrix,
    szi: HermitianMatrix,
    perp: HermitianMatrix,
    sx: HermitianMatrix,
    ix: HermitianMatrix,
    sxsz: HermitianMatrix,
    sysz: HermitianMatrix,
    sy2_sx2: HermitianMatrix,
    sxsy: HermitianMatrix,
}

fn operators() -> &'static OperatorBasis {
    static OPS: OnceLock<OperatorBasis> = OnceLock::new();
    OPS.get_or_init(|| {
        let (sx, sy, sz) = spin1_operators();
        let id = HermitianMatrix::identity(3);
        let k = |a: &HermitianMatrix, b: &HermitianMatrix| kron(a, b).expect("3x3 factors");
        OperatorBasis {
            sz2: k(&sz.square(), &id),
            sz: k(&sz, &id),
            iz2: k(&id, &sz.square()),
            iz: k(&id, &sz),
            szi: k(&sz, &sz),
            perp: &k(&sx, &sx) + &k(&sy, &sy),
            sx: k(&sx, &id),
            ix: k(&id, &sx),
            sxsz: k(&sx.anticommutator(&sz), &id),
            sysz: k(&sy.anticommutator(&sz), &id),
            sy2_sx2: k(&(&sy.square() - &sx.square()), &id),
            sxsy: k(&sx.anticommutator(&sy), &id),
        }
    })
}

/// Full 9x9 Hamiltonian in the `(mS, mI)` product basis.
pub fn build_full(p: &NVParams) -> Result<HermitianMatrix> {
    p.validate()?;
    let o = operators();
    let terms = [
        (p.d + p.strain.ez, &o.sz2),
        (p.omega_e, &o.sz),
        (p.p, &o.iz2),
        (p.omega_n, &o.iz),
        (p.a_par, &o.szi),
        (p.a_perp, &o.perp),
        (p.omega_ex, &o.sx),
        (p.omega_nx, &o.ix),
        (p.strain.ex_prime, &o.sxsz),
        (p.strain.ey_prime, &o.sysz),
        (p.strain.ex, &o.sy2_sx2),
        (p.strain.ey, &o.sxsy),
    ];
    let h = terms
        .iter()
        .filter(|(c, _)| *c != 0.0)
        .fold(HermitianMatrix::zeros(9), |acc, (c, op)| {
            acc.add_scaled(*c, op)
        });
    Ok(h)
}

/// Exact energies of the nine labelled eigenstates, indexed like the basis.
pub fn exact_levels(p: &NVParams) -> Result<[f64; 9]> {
    let es = label_states(eigh(&build_full(p)?)?)?;
    let labels = es.labels.as_ref().expect("labelled");
    let mut out = [0.0; 9];
    for (k, l) in labels.iter().enumerate() {
        out[l.index()] = es.values[k];
    }
    Ok(out)
}

fn level(levels: &[f64; 9], ms: Projection, mi: Projection) -> f64 {
    levels[BasisState::new(ms, mi).index()]
}

/// Nuclear frequencies from a table of labelled energies.
pub fn nuclear_frequencies_from_levels(levels: &[f64; 9]) -> FrequencySet {
    FrequencySet::from_nuclear(
        NuclearTransition::all().map(|t| {
            level(levels, t.ms, t.branch.target()) - level(levels, t.ms, Projection::Zero)
        }),
    )
}

/// Six nuclear transition frequencies from exact diagonalisation.
pub fn exact_nuclear_frequencies(p: &NVParams) -> Result<FrequencySet> {
    Ok(nuclear_frequencies_from_levels(&exact_levels(p)?))
}

/// Electron transition frequencies `[mS=+1, mS=-1]` at nuclear projection `mi`.
pub fn exact_electron_frequencies(p: &NVParams, mi: Projection) -> Result<[f64; 2]> {
    let levels = exact_levels(p)?;
    let base = level(&levels, Projection::Zero, mi);
    Ok([
        level(&levels, Projection::Plus, mi) - base,
        level(&levels, Projection::Minus, mi) - base,
    ])
}

/// Exact frequency of any labelled transition.
pub fn exact_transition_frequency(p: &NVParams, t: TransitionLabel) -> Result<f64> {
    let levels = exact_levels(p)?;
    Ok(match t {
        TransitionLabel::Nuclear(n) => {
            level(&levels, n.ms, n.branch.target()) - level(&levels, n.ms, Projection::Zero)
        }
        TransitionLabel::Electron(e) => {
            level(&levels, e.ms, e.mi) - level(&levels, Projection::Zero, e.mi)
        }
    })
}

/// Field sensitivity of a transition in Hz per µT.
///
/// The field is changed by ±0.1 µT along its current direction (the NV axis
/// when there is no field); the electron Zeeman terms move with `γe` and the
/// nuclear ones with `γe / gamma_ratio`.
pub fn field_sensitivity(p: &NVParams, t: TransitionLabel, gamma_ratio: f64) -> Result<f64> {
    let norm = p.omega_e.hypot(p.omega_ex);
    let (cz, cx) = if norm > 0.0 {
        (p.omega_e / norm, p.omega_ex / norm)
    } else {
        (1.0, 0.0)
    };
    let shifted = |db: f64| {
        let de = GAMMA_E * db;
        let dn = de / gamma_ratio;
        NVParams {
            omega_e: p.omega_e + de * cz,
            omega_ex: p.omega_ex + de * cx,
            omega_n: p.omega_n + dn * cz,
            omega_nx: p.omega_nx + dn * cx,
            ..*p
        }
    };
    let hi = exact_transition_frequency(&shifted(SENSITIVITY_STEP_T), t)?;
    let lo = exact_transition_frequency(&shifted(-SENSITIVITY_STEP_T), t)?;
    Ok((hi - lo) / (2.0 * SENSITIVITY_STEP_T * 1e6))
}

/// Branch helper for callers that think in nuclear projections.
pub fn nuclear_label(ms: Projection, branch: Branch) -> TransitionLabel {
    TransitionLabel::nuclear(ms, branch)
}
