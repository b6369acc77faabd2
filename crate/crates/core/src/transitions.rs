//! Transition labels and labelled frequency sets.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spin::Projection;

/// Nuclear branch inside one electron subspace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Branch {
    /// `mI = 0 <-> +1`
    #[serde(rename = "0<->+1")]
    Plus,
    /// `mI = 0 <-> -1`
    #[serde(rename = "0<->-1")]
    Minus,
}

impl Branch {
    pub const ALL: [Branch; 2] = [Branch::Plus, Branch::Minus];

    /// The non-zero nuclear projection of this branch.
    pub fn target(self) -> Projection {
        match self {
            Branch::Plus => Projection::Plus,
            Branch::Minus => Projection::Minus,
        }
    }

    pub fn from_value(v: i32) -> Option<Self> {
        match v {
            1 => Some(Branch::Plus),
            -1 => Some(Branch::Minus),
            _ => None,
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Branch::Plus => write!(f, "0<->+1"),
            Branch::Minus => write!(f, "0<->-1"),
        }
    }
}

/// One of the six nuclear transitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NuclearTransition {
    pub ms: Projection,
    pub branch: Branch,
}

impl NuclearTransition {
    pub const fn new(ms: Projection, branch: Branch) -> Self {
        Self { ms, branch }
    }

    /// Canonical order: `mS = +1, 0, -1`, each with branch `+1` then `-1`.
    pub fn all() -> [NuclearTransition; 6] {
        std::array::from_fn(|i| NuclearTransition {
            ms: Projection::ALL[i / 2],
            branch: Branch::ALL[i % 2],
        })
    }

    pub fn index(self) -> usize {
        2 * self.ms.offset()
            + match self.branch {
                Branch::Plus => 0,
                Branch::Minus => 1,
            }
    }
}

impl fmt::Display for NuclearTransition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "mS={} {}", self.ms, self.branch)
    }
}

/// Electron transition `mS = 0 <-> ms` at fixed nuclear projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ElectronTransition {
    pub ms: Projection,
    pub mi: Projection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TransitionLabel {
    Nuclear(NuclearTransition),
    Electron(ElectronTransition),
}

impl TransitionLabel {
    pub fn nuclear(ms: Projection, branch: Branch) -> Self {
        Self::Nuclear(NuclearTransition::new(ms, branch))
    }

    pub fn electron(ms: Projection, mi: Projection) -> Result<Self> {
        if ms == Projection::Zero {
            return Err(Error::InvalidInput(
                "electron transitions connect mS=0 to mS=+1 or mS=-1".into(),
            ));
        }
        Ok(Self::Electron(ElectronTransition { ms, mi }))
    }

    /// All eight labels: six nuclear, then the two electron transitions at `mi`.
    pub fn enumerate(mi: Projection) -> Vec<TransitionLabel> {
        let mut out: Vec<_> = NuclearTransition::all()
            .into_iter()
            .map(TransitionLabel::Nuclear)
            .collect();
        for ms in [Projection::Plus, Projection::Minus] {
            out.push(TransitionLabel::Electron(ElectronTransition { ms, mi }));
        }
        out
    }
}

/// A frequency with its 1σ uncertainty, both in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub freq_hz: f64,
    pub sigma_hz: f64,
}

impl Measured {
    pub const fn exact(freq_hz: f64) -> Self {
        Self {
            freq_hz,
            sigma_hz: 0.0,
        }
    }

    pub const fn new(freq_hz: f64, sigma_hz: f64) -> Self {
        Self { freq_hz, sigma_hz }
    }
}

/// Six labelled nuclear frequencies in canonical order, optionally with the two
/// electron (microwave) frequencies `[mS=+1, mS=-1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencySet {
    pub nuclear: [Measured; 6],
    pub electron: Option<[Measured; 2]>,
}

impl FrequencySet {
    pub fn from_nuclear(values: [f64; 6]) -> Self {
        Self {
            nuclear: values.map(Measured::exact),
            electron: None,
        }
    }

    pub fn get(&self, t: NuclearTransition) -> Measured {
        self.nuclear[t.index()]
    }

    pub fn freq(&self, t: NuclearTransition) -> f64 {
        self.nuclear[t.index()].freq_hz
    }

    pub fn values(&self) -> [f64; 6] {
        self.nuclear.map(|m| m.freq_hz)
    }

    pub fn iter(&self) -> impl Iterator<Item = (NuclearTransition, Measured)> + '_ {
        NuclearTransition::all()
            .into_iter()
            .map(move |t| (t, self.nuclear[t.index()]))
    }

    /// Largest absolute difference over the six nuclear frequencies.
    pub fn max_abs_diff(&self, other: &FrequencySet) -> f64 {
        self.nuclear
            .iter()
            .zip(&other.nuclear)
            .map(|(a, b)| (a.freq_hz - b.freq_hz).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_order_is_consistent() {
        for (i, t) in NuclearTransition::all().iter().enumerate() {
            assert_eq!(t.index(), i);
        }
        assert_eq!(TransitionLabel::enumerate(Projection::Plus).len(), 8);
    }

    #[test]
    fn electron_label_needs_nonzero_ms() {
        assert!(TransitionLabel::electron(Projection::Zero, Projection::Plus).is_err());
        assert!(TransitionLabel::electron(Projection::Minus, Projection::Plus).is_ok());
    }
}
