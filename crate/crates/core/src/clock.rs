//! Fractional frequency instability of a clock locked to the ¹⁴N quadrupole
//! line of an NV ensemble.
//!
//! For `N` centres read out with fidelity `F` after free evolution `T2*`,
//! `δf/f₀ = 1 / (2π f₀ F sqrt(T2* T) sqrt(N))` at averaging time `T`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::constants::{Benchmark, BENCHMARKS, CARBON_DENSITY_CM3, P_COMBINED};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockConfig {
    /// Clock transition frequency (Hz).
    pub f0: f64,
    /// Readout fidelity.
    pub fidelity: f64,
    /// Free-evolution time per interrogation (s).
    pub t2_star: f64,
    pub volume_mm3: f64,
    /// Carbon atoms per cm³.
    pub carbon_density: f64,
}

impl Default for ClockConfig {
    fn default() -> Self {
        Self {
            f0: P_COMBINED.abs(),
            fidelity: 0.015,
            t2_star: 0.01,
            volume_mm3: 1.0,
            carbon_density: CARBON_DENSITY_CM3,
        }
    }
}

impl ClockConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("f0", self.f0),
            ("fidelity", self.fidelity),
            ("t2_star", self.t2_star),
            ("volume_mm3", self.volume_mm3),
            ("carbon_density", self.carbon_density),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParams(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.fidelity > 1.0 {
            return Err(Error::InvalidParams(format!(
                "fidelity must not exceed 1, got {}",
                self.fidelity
            )));
        }
        Ok(())
    }

    /// Instability of a single centre at 1 s.
    pub fn prefactor(&self) -> f64 {
        1.0 / (2.0 * PI * self.f0 * self.fidelity * self.t2_star.sqrt())
    }

    /// Centres in the configured volume at `ppb` parts per billion.
    pub fn count_at_density(&self, ppb: f64) -> f64 {
        ppb * 1e-9 * self.carbon_density * self.volume_mm3 * 1e-3
    }

    /// Inverse of [`ClockConfig::count_at_density`].
    pub fn density_for_count(&self, n: f64) -> f64 {
        n / (1e-9 * self.carbon_density * self.volume_mm3 * 1e-3)
    }
}

/// Fractional instability for `n` centres at averaging time `t` (s).
pub fn instability(cfg: &ClockConfig, n: f64, t: f64) -> Result<f64> {
    cfg.validate()?;
    if !(n >= 1.0) || !(t > 0.0) {
        return Err(Error::InvalidInput(format!(
            "need N >= 1 and T > 0, got N = {n}, T = {t}"
        )));
    }
    Ok(cfg.prefactor() / (t.sqrt() * n.sqrt()))
}

/// Smallest ensemble whose instability at `t` does not exceed `target`.
pub fn required_n(cfg: &ClockConfig, target: f64, t: f64) -> Result<u64> {
    if !(target > 0.0) {
        return Err(Error::InvalidInput(format!(
            "target must be positive, got {target}"
        )));
    }
    let single = instability(cfg, 1.0, t)?;
    let estimate = (single / target).powi(2).ceil();
    if !(estimate < u64::MAX as f64) {
        return Err(Error::InvalidInput(format!(
            "target {target} needs too many centres"
        )));
    }
    let mut n = (estimate as u64).max(1);
    while instability(cfg, n as f64, t)? > target {
        n += 1;
    }
    while n > 1 && instability(cfg, (n - 1) as f64, t)? <= target {
        n -= 1;
    }
    Ok(n)
}

/// Centres in `volume_mm3` of diamond at `ppb` parts per billion.
pub fn density_to_count(ppb: f64, volume_mm3: f64) -> f64 {
    ppb * 1e-9 * CARBON_DENSITY_CM3 * volume_mm3 * 1e-3
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub n: f64,
    pub density_ppb: f64,
    pub instability_1s: f64,
}

/// Instability at 1 s on `points` log-spaced ensemble sizes from `n_min` to `n_max`.
pub fn emit_curve(
    cfg: &ClockConfig,
    n_min: f64,
    n_max: f64,
    points: usize,
) -> Result<Vec<CurveRow>> {
    if !(n_min >= 1.0 && n_max >= n_min) || points < 2 {
        return Err(Error::InvalidInput(format!(
            "need 1 <= n_min <= n_max and at least two points, got [{n_min}, {n_max}] x {points}"
        )));
    }
    let (lo, hi) = (n_min.log10(), n_max.log10());
    (0..points)
        .map(|k| {
            let n = 10f64.powf(lo + (hi - lo) * k as f64 / (points - 1) as f64);
            Ok(CurveRow {
                n,
                density_ppb: cfg.density_for_count(n),
                instability_1s: instability(cfg, n, 1.0)?,
            })
        })
        .collect()
}

/// Curve rows as CSV, one benchmark column per reference clock.
pub fn curve_csv(rows: &[CurveRow], benchmarks: &[Benchmark]) -> String {
    let mut out = String::from("n,density_ppb,instability_1s");
    for b in benchmarks {
        let _ = write!(out, ",{}", b.name);
    }
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{:e},{:e},{:e}", r.n, r.density_ppb, r.instability_1s);
        for b in benchmarks {
            let _ = write!(out, ",{:e}", b.instability_1s);
        }
        out.push('\n');
    }
    out
}

/// [`curve_csv`] with the built-in benchmark registry.
pub fn default_curve_csv(rows: &[CurveRow]) -> String {
    curve_csv(rows, &BENCHMARKS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> ClockConfig {
        ClockConfig::default()
    }

    #[test]
    fn single_centre_prefactor() {
        let v = instability(&cfg(), 1.0, 1.0).unwrap();
        assert!((v - 2e-5).abs() < 0.15 * 2e-5, "{v}");
        assert!((v - 2.1454e-5).abs() < 1e-8);
    }

    #[test]
    fn trillion_centres_reach_rubidium_level() {
        let v = instability(&cfg(), 1e12, 1.0).unwrap();
        assert!((v - 2e-11).abs() < 0.15 * 2e-11, "{v}");
    }

    #[test]
    fn quadrupled_time_halves_instability() {
        let a = instability(&cfg(), 1e6, 1.0).unwrap();
        let b = instability(&cfg(), 1e6, 4.0).unwrap();
        assert!((a / b - 2.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_inputs() {
        assert!(instability(&cfg(), 0.5, 1.0).is_err());
        assert!(instability(&cfg(), 1.0, 0.0).is_err());
        let bad = ClockConfig {
            fidelity: 1.5,
            ..cfg()
        };
        assert!(instability(&bad, 1.0, 1.0).is_err());
        assert!(required_n(&cfg(), 0.0, 1.0).is_err());
        assert!(emit_curve(&cfg(), 10.0, 1.0, 5).is_err());
    }

    #[test]
    fn required_counts() {
        let n = required_n(&cfg(), 2e-11, 1.0).unwrap();
        assert!((n as f64 / 1e12 - 1.0).abs() < 0.2, "{n}");
        let single = instability(&cfg(), 1.0, 1.0).unwrap();
        assert_eq!(required_n(&cfg(), single, 1.0).unwrap(), 1);
        let chip = required_n(&cfg(), 2.5e-10, 1.0).unwrap() as f64;
        let closed_form = (cfg().prefactor() / 2.5e-10).powi(2);
        assert!((chip - closed_form).abs() <= 1.0);
        assert!((chip / 7.36e9 - 1.0).abs() < 0.01, "{chip}");
    }

    #[test]
    fn required_count_is_minimal() {
        for target in [1e-6, 3.3e-9, 2.5e-10, 2e-11, 1.2e-11] {
            let n = required_n(&cfg(), target, 1.0).unwrap();
            assert!(instability(&cfg(), n as f64, 1.0).unwrap() <= target);
            if n > 1 {
                assert!(instability(&cfg(), (n - 1) as f64, 1.0).unwrap() > target);
            }
        }
    }

    #[test]
    fn densities() {
        let n = density_to_count(6.0, 1.0);
        assert!((n - 1.056e12).abs() < 1e9);
        assert!((n / 1e12 - 1.0).abs() < 0.2);
        assert_eq!(density_to_count(0.0, 1.0), 0.0);
        assert!((density_to_count(1e5, 1.0) - 1.76e16).abs() < 1e12);
        assert!((cfg().count_at_density(6.0) - n).abs() < 1.0);
    }

    #[test]
    fn curve_shape() {
        let rows = emit_curve(&cfg(), 1.0, 1e16, 17).unwrap();
        assert_eq!(rows.len(), 17);
        assert!(rows
            .windows(2)
            .all(|w| w[1].instability_1s < w[0].instability_1s));
        let at = rows
            .iter()
            .find(|r| (r.n / 1e12 - 1.0).abs() < 1e-6)
            .unwrap();
        assert!((at.instability_1s - 2e-11).abs() < 0.15 * 2e-11);
        assert!((at.density_ppb - 6.0).abs() < 0.2 * 6.0);
        let csv = default_curve_csv(&rows);
        let header = csv.lines().next().unwrap();
        assert_eq!(
            header,
            "n,density_ppb,instability_1s,cs_chip,rb_commercial,cs_commercial"
        );
        assert_eq!(csv.lines().count(), 18);
    }

    proptest! {
        #[test]
        fn instability_scales_as_inverse_root(logn in 0.0f64..16.0, logt in -3.0f64..5.0) {
            let (n, t) = (10f64.powf(logn), 10f64.powf(logt));
            let v = instability(&cfg(), n, t).unwrap();
            let c = v * (n * t).sqrt();
            prop_assert!((c / cfg().prefactor() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn required_count_round_trips(logn in 0.0f64..15.0) {
            let n = 10f64.powf(logn).round();
            let v = instability(&cfg(), n, 1.0).unwrap();
            let back = required_n(&cfg(), v, 1.0).unwrap() as f64;
            prop_assert!((back - n).abs() <= 1.0);
        }

        #[test]
        fn density_is_linear(a in 0.0f64..1e6, b in 0.0f64..1e6, v in 0.0f64..100.0) {
            let sum = density_to_count(a + b, v);
            let parts = density_to_count(a, v) + density_to_count(b, v);
            prop_assert!((sum - parts).abs() <= 1e-12 * sum.max(1.0));
            let doubled = density_to_count(a, 2.0 * v);
            prop_assert!((doubled - 2.0 * density_to_count(a, v)).abs() <= 1e-12 * doubled.max(1.0));
        }
    }
}
