//! Physical quantities extracted from fitted spectra.

use serde::{Deserialize, Serialize};

use crate::error::{require_non_negative, Error, Result};
use crate::monomode::OscillatorMode;

use super::LorentzianFit;

/// Effective temperature from the resonant area by equipartition,
/// `T = MΩ_M² · area / k_B`. Negative when the fit is a dip.
pub fn effective_temperature_from_fit(fit: &LorentzianFit, mode: &OscillatorMode) -> Result<f64> {
    if !fit.area.is_finite() || fit.area == 0.0 {
        return Err(Error::Degenerate(format!("resonant area {} carries no temperature", fit.area)));
    }
    Ok(mode.mass() * mode.omega_m().powi(2) * fit.area / mode.units().boltzmann())
}

/// `T/T_fb` as the ratio of the open-loop to the closed-loop resonant area.
pub fn cooling_factor_from_fits(open: &LorentzianFit, closed: &LorentzianFit) -> Result<f64> {
    if !closed.area.is_finite() || closed.area == 0.0 {
        return Err(Error::Degenerate("closed-loop fit has zero area".into()));
    }
    Ok(open.area / closed.area)
}

/// `ε_b`: fitted background over the resonant peak height.
pub fn estimate_epsilon_b(fit: &LorentzianFit) -> Result<f64> {
    if fit.peak() == 0.0 || !fit.peak().is_finite() {
        return Err(Error::Degenerate("zero peak height".into()));
    }
    Ok(fit.background() / fit.peak())
}

/// Relative loop gain at resonance: ratio of the spectral amplitude of the
/// actuator intensity (or force) to that of the displacement. Defined up to
/// a constant factor, see [`normalize_gain_calibration`].
pub fn calibrate_gain(intensity_psd: f64, displacement_psd: f64) -> Result<f64> {
    require_non_negative("intensity_psd", intensity_psd)?;
    if !(displacement_psd.is_finite() && displacement_psd > 0.0) {
        return Err(Error::Degenerate("displacement spectrum is zero at resonance".into()));
    }
    Ok((intensity_psd / displacement_psd).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainCalibration {
    /// Factor turning relative gains into absolute ones.
    pub scale: f64,
    pub gains: Vec<f64>,
}

/// Fixes the unknown factor of [`calibrate_gain`] by regressing the relative
/// damping increase `Γ_fb/Γ − 1` on the relative gains through the origin.
pub fn normalize_gain_calibration(relative_gains: &[f64], damping_ratios: &[f64]) -> Result<GainCalibration> {
    if relative_gains.len() != damping_ratios.len() || relative_gains.is_empty() {
        return Err(Error::Precondition("need one damping ratio per relative gain".into()));
    }
    let sxx: f64 = relative_gains.iter().map(|x| x * x).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("all relative gains are zero".into()));
    }
    let sxy: f64 = relative_gains.iter().zip(damping_ratios).map(|(x, r)| x * (r - 1.0)).sum();
    let scale = sxy / sxx;
    Ok(GainCalibration { scale, gains: relative_gains.iter().map(|x| x * scale).collect() })
}
