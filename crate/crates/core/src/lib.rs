//! Equalizers and analysis tools for massive MU-MIMO uplink.
//!
//! The crate is split into five parts:
//!
//! * [`model`]: channel, symbol and noise generation with a reproducible
//!   per-trial randomness contract.
//! * [`linear_eq`]: exact matrix-solve baselines (MRC, ZF, L-MMSE and
//!   L-MMSE with a mismatched signal power).
//! * [`amp`]: iterative equalizers built on approximate message passing:
//!   the parametric MMSE-AMP, the nonparametric NOPE (SURE-tuned shrinkage)
//!   and robust NOPE for per-user channel gains.
//! * [`analysis`]: state evolution, fixed points, achievable rates, SNR loss,
//!   maximum optimal antenna ratio and AWGN reference curves.
//! * [`harness`]: seeded Monte Carlo sweeps, configuration files and CSV output.

pub mod amp;
pub mod analysis;
pub mod error;
pub mod harness;
pub mod linear_eq;
pub mod model;

pub use error::{Error, Result};

/// Complex scalar used throughout the crate.
pub type C64 = nalgebra::Complex<f64>;
/// Dense column-major complex matrix.
pub type CMatrix = nalgebra::DMatrix<C64>;
/// Dense complex column vector.
pub type CVector = nalgebra::DVector<C64>;

/// Converts a value in decibels to linear scale (`10^(db/10)`).
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Converts a linear power ratio to decibels (`10·log10(x)`).
pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}
