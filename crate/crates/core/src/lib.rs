//! Modelling and parameter estimation for the NV⁻ electron spin coupled to its
//! ¹⁴N nuclear spin.
//!
//! The crate runs the whole chain from the nine-level ground-state Hamiltonian
//! to Hz-level parameter estimates:
//!
//! - [`spin`]: spin-1 operators, tensor products and a Jacobi eigensolver.
//! - [`hamiltonian`]: the full Hamiltonian and its exact transition frequencies.
//! - [`perturbation`]: closed-form nuclear frequencies from three-level reductions.
//! - [`ramsey`]: shot-noise Ramsey fringes and their least-squares fit.
//! - [`inversion`]: weighted least-squares recovery of the Hamiltonian parameters.
//! - [`identity`]: inverse-variance averages and cross-centre consistency.
//! - [`clock`]: fractional instability of an ensemble nuclear-spin clock.
//!
//! All frequencies are in Hz. See [`hamiltonian`] for the sign conventions.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod clock;
pub mod constants;
pub mod error;
pub mod hamiltonian;
pub mod identity;
pub mod inversion;
pub mod optimize;
pub mod perturbation;
pub mod ramsey;
pub mod spin;
pub mod transitions;

pub use error::{Error, Result};
pub use hamiltonian::{NVParams, Strain};
pub use spin::{BasisState, EigenSystem, HermitianMatrix, Projection};
pub use transitions::{Branch, FrequencySet, Measured, NuclearTransition, TransitionLabel};
