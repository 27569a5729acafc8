//! Spectral estimation, zero-span detection and resonance fitting.

pub mod estimators;
pub mod fit;
pub mod io;
pub mod relaxation;
pub mod welch;
pub mod zero_span;

pub use estimators::{
    calibrate_gain, cooling_factor_from_fits, effective_temperature_from_fit, estimate_epsilon_b,
    normalize_gain_calibration, GainCalibration,
};
pub use fit::{
    fit_loop_lorentzian, fit_lorentzian, fit_tilted_lorentzian, initial_guess, model_spectrum, LorentzianFit,
    LorentzianParams,
};
pub use relaxation::{fit_relaxation, Relaxation};
pub use welch::{welch_psd, welch_psd_of, Spectrum, WelchSettings, Window};
pub use zero_span::{zero_span, ZeroSpanTrace};
