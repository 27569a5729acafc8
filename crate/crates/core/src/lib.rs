//! Cold damping of a mechanical resonator by a viscous feedback force.
//!
//! - [`monomode`]: single-mode susceptibility, thermal spectra and their
//!   cold-damped equivalents.
//! - [`environment`]: background thermal noise, several acoustic modes and
//!   electronic noise of the loop.
//! - [`transient`]: variance relaxation when the loop is switched, forced
//!   build-up and decay, cyclic cooling.
//! - [`sim`]: exact time-domain simulation of the feedback experiment.
//! - [`spectral`]: Welch spectra, zero-span tracking, Lorentzian fits and
//!   the estimators built on them.
//! - [`experiment`]: JSON scenarios and result bundles used by the CLI.

pub mod constants;
pub mod environment;
pub mod error;
pub mod experiment;
pub mod monomode;
pub mod numeric;
pub mod sim;
pub mod spectral;
pub mod transient;

pub use constants::UnitSystem;
pub use error::{Error, Result};
pub use monomode::{DampingModel, FeedbackGain, OscillatorMode};
