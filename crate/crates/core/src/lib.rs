//! Damped quantum harmonic oscillator master equations.
//!
//! The same bilinear master equation is solved four ways so the results can
//! check each other:
//!
//! * [`gaussian`]: first and second moments and Gaussian propagators,
//! * [`fock`]: the density matrix in a truncated number basis,
//! * [`stochastic`]: classical and random-unitary trajectories driven by two
//!   white-noise forces,
//! * [`fokker_planck`]: the phase-space Fokker–Planck equation on a grid.
//!
//! [`scenario`] ties them together behind a TOML configuration.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fock;
pub mod fokker_planck;
pub mod gaussian;
pub mod model;
pub mod scenario;
pub mod schedule;
pub mod stochastic;
pub mod wigner;

pub use error::{Error, Result};
pub use model::{
    lindblad_margin, map_noise_to_diffusion, preset, thermal_occupation, NoiseCorrelations,
    OscillatorParams, Preset, ThermalSpec,
};
pub use schedule::{CoefficientSchedule, Coefficients, Schedule, TimeGrid};
