//! Physical constants and reference values used across the crate.
//!
//! Hamiltonian values are the inverse-variance combinations over the seven
//! centres of the identity measurement; gyromagnetic ratios are literature
//! magnitudes with the signs fixed by the convention in [`crate::hamiltonian`].

/// Zero-field splitting of the NV⁻ ground state (Hz).
pub const D_NOMINAL: f64 = 2.87e9;

/// ¹⁴N quadrupole coupling (Hz), combined value.
pub const P_COMBINED: f64 = -4_945_754.9;
pub const P_COMBINED_SIGMA: f64 = 0.8;

/// Longitudinal hyperfine coupling (Hz), combined value.
pub const A_PAR_COMBINED: f64 = -2_164_689.8;
pub const A_PAR_COMBINED_SIGMA: f64 = 1.2;

/// Transverse hyperfine coupling (Hz), combined value.
pub const A_PERP_COMBINED: f64 = -2_632_700.0;
pub const A_PERP_COMBINED_SIGMA: f64 = 400.0;

/// Ratio of the electron to ¹⁴N gyromagnetic ratio, combined value.
pub const GAMMA_RATIO_COMBINED: f64 = -9113.85;
pub const GAMMA_RATIO_COMBINED_SIGMA: f64 = 0.04;

/// Electron gyromagnetic ratio (Hz/T); `omega_e = GAMMA_E * B`.
pub const GAMMA_E: f64 = 28.033e9;

/// ¹⁴N gyromagnetic ratio (Hz/T) implied by [`GAMMA_E`] and the combined ratio.
pub const GAMMA_N: f64 = GAMMA_E / GAMMA_RATIO_COMBINED;

/// Literature magnitude of the ¹⁴N gyromagnetic ratio (Hz/T).
pub const GAMMA_N_LITERATURE: f64 = 3.0766e6;

/// Nominal bias field (T), aligned with the NV axis.
pub const B_NOMINAL: f64 = 0.051;

/// One nuclear transition measured by Ramsey interferometry, mS = -1, 0 <-> -1 (Hz).
pub const F_MINUS1_MINUS_MEASURED: f64 = -6_958_568.8;
pub const F_MINUS1_MINUS_SIGMA: f64 = 1.6;
/// Fitted Ramsey detuning for that transition (Hz).
pub const RAMSEY_DETUNING_MEASURED: f64 = 533.2;

/// Carbon number density of diamond (cm⁻³): 3.52 g/cm³ / 12 g/mol * N_A.
pub const CARBON_DENSITY_CM3: f64 = 1.76e23;

/// Fractional instability at 1 s of reference clocks.
///
/// Registry version 1. Values: chip-scale Cs (Knappe et al., APL 85, 1460
/// (2004)); commercial Rb and Cs standards (manufacturer data sheets).
pub const BENCHMARKS: [Benchmark; 3] = [
    Benchmark {
        name: "cs_chip",
        instability_1s: 2.5e-10,
    },
    Benchmark {
        name: "rb_commercial",
        instability_1s: 2e-11,
    },
    Benchmark {
        name: "cs_commercial",
        instability_1s: 1.2e-11,
    },
];
pub const BENCHMARK_REGISTRY_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Benchmark {
    pub name: &'static str,
    pub instability_1s: f64,
}
