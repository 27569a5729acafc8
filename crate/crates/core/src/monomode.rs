//! Single-mode theory: mechanical susceptibility, fluctuation–dissipation
//! spectra and their cold-damped (viscous feedback) counterparts.
//!
//! All power spectral densities in this module are two-sided densities in
//! angular frequency, normalised so that the variance of a process is
//! `(1/2π) ∫_{-∞}^{∞} S(Ω) dΩ = (1/π) ∫_0^∞ S(Ω) dΩ`. Use
//! [`to_one_sided_hz`] to compare with instrument-style spectra.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::constants::UnitSystem;
use crate::error::{domain, require_non_negative, require_positive, Error, Result};

/// One mechanical mode of the resonator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OscillatorMode {
    mass: f64,
    omega_m: f64,
    gamma: f64,
    temperature: f64,
    units: UnitSystem,
}

impl OscillatorMode {
    /// Mode in SI units from effective mass [kg], resonance [rad/s],
    /// damping rate [rad/s] and temperature [K].
    pub fn new(mass: f64, omega_m: f64, gamma: f64, temperature: f64) -> Result<Self> {
        Ok(Self {
            mass: require_positive("mass", mass)?,
            omega_m: require_positive("omega_m", omega_m)?,
            gamma: require_positive("gamma", gamma)?,
            temperature: require_non_negative("temperature", temperature)?,
            units: UnitSystem::Si,
        })
    }

    /// Same as [`OscillatorMode::new`] with the damping given as a quality factor.
    pub fn from_quality_factor(mass: f64, omega_m: f64, quality_factor: f64, temperature: f64) -> Result<Self> {
        let q = require_positive("quality_factor", quality_factor)?;
        Self::new(mass, omega_m, omega_m / q, temperature)
    }

    /// Natural-units mode: `M = Ω_M = k_B = T = 1`, so `Δx_T = 1`.
    pub fn natural(quality_factor: f64) -> Result<Self> {
        Ok(Self::from_quality_factor(1.0, 1.0, quality_factor, 1.0)?.with_units(UnitSystem::Natural))
    }

    /// Fundamental mode of the plano-convex fused-silica mirror
    /// (230 mg, 1858.6 kHz, 43 Hz linewidth).
    pub fn silica_mirror(temperature: f64) -> Result<Self> {
        Self::new(230e-6, 2.0 * PI * 1858.6e3, 2.0 * PI * 43.0, temperature)
    }

    pub fn with_units(mut self, units: UnitSystem) -> Self {
        self.units = units;
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Result<Self> {
        self.temperature = require_non_negative("temperature", temperature)?;
        Ok(self)
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        self.gamma = require_positive("gamma", gamma)?;
        Ok(self)
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn omega_m(&self) -> f64 {
        self.omega_m
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn units(&self) -> UnitSystem {
        self.units
    }

    pub fn quality_factor(&self) -> f64 {
        self.omega_m / self.gamma
    }

    /// Resonance frequency in Hz.
    pub fn frequency_hz(&self) -> f64 {
        self.omega_m / (2.0 * PI)
    }

    /// Thermal energy `k_B T` in the mode's unit system.
    pub fn thermal_energy(&self) -> f64 {
        self.units.boltzmann() * self.temperature
    }

    /// Equilibrium displacement variance `Δx_T² = k_B T / (M Ω_M²)`.
    pub fn thermal_variance(&self) -> f64 {
        self.thermal_energy() / (self.mass * self.omega_m * self.omega_m)
    }
}

/// Loss-angle model of the mode.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DampingModel {
    /// `φ(Ω) = ΓΩ/Ω_M²`.
    #[default]
    Viscous,
    /// Frequency-independent loss angle.
    Structural { phi: f64 },
}

impl DampingModel {
    /// Structural damping; the loss angle must satisfy `0 < φ < 0.1`.
    pub fn structural(phi: f64) -> Result<Self> {
        if !(phi.is_finite() && phi > 0.0 && phi < 0.1) {
            return Err(domain("phi_const", format!("must lie in (0, 0.1), got {phi}")));
        }
        Ok(DampingModel::Structural { phi })
    }

    pub fn loss_angle(&self, mode: &OscillatorMode, omega: f64) -> f64 {
        match *self {
            DampingModel::Viscous => mode.gamma * omega / (mode.omega_m * mode.omega_m),
            DampingModel::Structural { phi } => phi,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            DampingModel::Viscous => Ok(()),
            DampingModel::Structural { phi } => DampingModel::structural(phi).map(|_| ()),
        }
    }
}

/// Dimensionless feedback gain `g ≥ 0`; zero is the open loop.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct FeedbackGain(f64);

impl FeedbackGain {
    pub const OPEN_LOOP: FeedbackGain = FeedbackGain(0.0);

    pub fn new(g: f64) -> Result<Self> {
        require_non_negative("gain", g).map(FeedbackGain)
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// `1 + g`, the factor by which damping grows and temperature drops.
    pub fn factor(self) -> f64 {
        1.0 + self.0
    }

    pub fn is_open_loop(self) -> bool {
        self.0 == 0.0
    }
}

impl TryFrom<f64> for FeedbackGain {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        FeedbackGain::new(value)
    }
}

impl From<FeedbackGain> for f64 {
    fn from(g: FeedbackGain) -> f64 {
        g.0
    }
}

fn check_omega(omega: f64) -> Result<f64> {
    require_positive("omega", omega)
}

/// Mechanical susceptibility `χ[Ω] = 1 / (M(Ω_M² − Ω² − iΩ_M²φ(Ω)))` [m/N].
pub fn susceptibility(mode: &OscillatorMode, damping: &DampingModel, omega: f64) -> Result<Complex64> {
    check_omega(omega)?;
    damping.validate()?;
    let wm2 = mode.omega_m * mode.omega_m;
    let inverse = Complex64::new(mode.mass * (wm2 - omega * omega), -mode.mass * wm2 * damping.loss_angle(mode, omega));
    Ok(inverse.inv())
}

/// Langevin force spectrum from the fluctuation–dissipation theorem,
/// `S_F = −(2 k_B T / Ω) Im(1/χ)`. Flat (`2MΓk_BT`) for viscous damping.
pub fn langevin_force_psd(mode: &OscillatorMode, damping: &DampingModel, omega: f64) -> Result<f64> {
    let chi = susceptibility(mode, damping, omega)?;
    Ok(-2.0 * mode.thermal_energy() / omega * chi.inv().im)
}

/// Thermal displacement spectrum `|χ|² S_F`.
pub fn thermal_psd(mode: &OscillatorMode, damping: &DampingModel, omega: f64) -> Result<f64> {
    let chi = susceptibility(mode, damping, omega)?;
    Ok(chi.norm_sqr() * langevin_force_psd(mode, damping, omega)?)
}

/// Cold-damped susceptibility `1 / (M(Ω_M² − Ω² − i(1+g)ΓΩ))`.
///
/// Only defined for viscous damping.
pub fn closed_loop_susceptibility(
    mode: &OscillatorMode,
    damping: &DampingModel,
    gain: FeedbackGain,
    omega: f64,
) -> Result<Complex64> {
    if let DampingModel::Structural { .. } = damping {
        return Err(Error::Unsupported("cold damping is only defined for viscous loss".into()));
    }
    check_omega(omega)?;
    let inverse = Complex64::new(
        mode.mass * (mode.omega_m * mode.omega_m - omega * omega),
        -mode.mass * gain.factor() * mode.gamma * omega,
    );
    Ok(inverse.inv())
}

/// Displacement spectrum of the cold-damped (viscous) mode.
pub fn closed_loop_psd(mode: &OscillatorMode, gain: FeedbackGain, omega: f64) -> Result<f64> {
    check_omega(omega)?;
    let detuning = mode.omega_m * mode.omega_m - omega * omega;
    let width = gain.factor() * mode.gamma * omega;
    Ok(2.0 * mode.gamma * mode.thermal_energy() / mode.mass / (detuning * detuning + width * width))
}

/// Amplitude noise reduction `R[Ω] = sqrt(S_x^T / S_x^fb)`; equals `1+g` at `Ω_M`.
pub fn noise_reduction(mode: &OscillatorMode, gain: FeedbackGain, omega: f64) -> Result<f64> {
    check_omega(omega)?;
    let detuning = mode.omega_m * mode.omega_m - omega * omega;
    let closed = Complex64::new(detuning, -effective_damping(mode.gamma, gain) * omega);
    let open = Complex64::new(detuning, -mode.gamma * omega);
    Ok(closed.norm() / open.norm())
}

/// `Γ_fb = (1+g)Γ`.
pub fn effective_damping(gamma: f64, gain: FeedbackGain) -> f64 {
    gain.factor() * gamma
}

/// `T_fb = T/(1+g)`.
pub fn effective_temperature(temperature: f64, gain: FeedbackGain) -> f64 {
    temperature / gain.factor()
}

/// Converts a two-sided angular-frequency PSD value to a one-sided density
/// per Hz, the convention of [`crate::spectral::Spectrum`].
pub fn to_one_sided_hz(psd: f64) -> f64 {
    2.0 * psd
}

/// Inverse of [`to_one_sided_hz`].
pub fn from_one_sided_hz(psd: f64) -> f64 {
    0.5 * psd
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::BOLTZMANN;
    use crate::numeric::integrate_to_infinity;

    fn mirror() -> OscillatorMode {
        OscillatorMode::silica_mirror(300.0).unwrap()
    }

    fn g(v: f64) -> FeedbackGain {
        FeedbackGain::new(v).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn quality_factor_constructors_agree() {
        let a = OscillatorMode::new(2.0, 10.0, 0.25, 4.0).unwrap();
        let b = OscillatorMode::from_quality_factor(2.0, 10.0, 40.0, 4.0).unwrap();
        assert!(rel(a.gamma(), b.gamma()) <= f64::EPSILON);
        assert!(rel(a.quality_factor(), 40.0) <= f64::EPSILON);
    }

    #[test]
    fn invalid_modes_rejected() {
        assert!(OscillatorMode::new(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(OscillatorMode::new(1.0, -1.0, 1.0, 1.0).is_err());
        assert!(OscillatorMode::new(1.0, 1.0, 0.0, 1.0).is_err());
        assert!(OscillatorMode::new(1.0, 1.0, 1.0, -1.0).is_err());
        assert!(OscillatorMode::new(1.0, 1.0, f64::NAN, 1.0).is_err());
        assert!(FeedbackGain::new(-0.1).is_err());
        assert!(DampingModel::structural(0.1).is_err());
        assert!(DampingModel::structural(0.0).is_err());
    }

    #[test]
    fn susceptibility_is_imaginary_at_resonance() {
        let m = mirror();
        let chi = susceptibility(&m, &DampingModel::Viscous, m.omega_m()).unwrap();
        let expected = 1.0 / (m.mass() * m.gamma() * m.omega_m());
        assert!(chi.re.abs() < 1e-12 * chi.im.abs());
        assert!(rel(chi.im, expected) < 1e-12);
        assert!(rel(chi.norm(), 1.0 / (2.30e-4 * (2.0 * PI * 43.0) * (2.0 * PI * 1.8586e6))) < 1e-12);
    }

    #[test]
    fn viscous_inverse_susceptibility_imaginary_part() {
        let m = mirror();
        for w in [0.5, 0.9, 1.0, 1.3] {
            let omega = w * m.omega_m();
            let inv = susceptibility(&m, &DampingModel::Viscous, omega).unwrap().inv();
            assert!(rel(inv.im, -m.mass() * m.gamma() * omega) < 1e-12);
        }
    }

    #[test]
    fn structural_equals_viscous_at_resonance() {
        let m = mirror();
        let s = DampingModel::structural(m.gamma() / m.omega_m()).unwrap();
        let a = susceptibility(&m, &DampingModel::Viscous, m.omega_m()).unwrap();
        let b = susceptibility(&m, &s, m.omega_m()).unwrap();
        assert!((a - b).norm() < 1e-12 * a.norm());
    }

    #[test]
    fn non_positive_frequency_is_domain_error() {
        let m = mirror();
        assert!(matches!(susceptibility(&m, &DampingModel::Viscous, 0.0), Err(Error::Domain { .. })));
        assert!(thermal_psd(&m, &DampingModel::Viscous, -1.0).is_err());
        assert!(closed_loop_psd(&m, g(1.0), f64::NAN).is_err());
    }

    #[test]
    fn langevin_force_is_white_and_gain_independent() {
        let m = mirror();
        let expected = 2.0 * m.mass() * m.gamma() * BOLTZMANN * 300.0;
        for w in [0.01, 0.5, 1.0, 3.0, 100.0] {
            let s = langevin_force_psd(&m, &DampingModel::Viscous, w * m.omega_m()).unwrap();
            assert!(rel(s, expected) < 1e-9);
        }
        let gain = g(5.2);
        let cooled =
            2.0 * m.mass() * effective_damping(m.gamma(), gain) * BOLTZMANN * effective_temperature(300.0, gain);
        assert!(rel(cooled, expected) < 1e-12);
    }

    #[test]
    fn zero_temperature_means_no_drive() {
        let m = mirror().with_temperature(0.0).unwrap();
        assert_eq!(langevin_force_psd(&m, &DampingModel::Viscous, 1e6).unwrap(), 0.0);
    }

    #[test]
    fn thermal_psd_at_resonance() {
        let m = mirror();
        let s = thermal_psd(&m, &DampingModel::Viscous, m.omega_m()).unwrap();
        let expected = 2.0 * m.thermal_energy() / (m.mass() * m.gamma() * m.omega_m().powi(2));
        assert!(rel(s, expected) < 1e-9);
    }

    #[test]
    fn thermal_psd_matches_lorentzian_closed_form() {
        let m = OscillatorMode::natural(30.0).unwrap();
        for w in [0.2, 0.95, 1.0, 1.07, 4.0] {
            let s = thermal_psd(&m, &DampingModel::Viscous, w).unwrap();
            let form = 2.0 * m.gamma() / ((1.0 - w * w).powi(2) + m.gamma().powi(2) * w * w);
            assert!(rel(s, form) < 1e-12);
        }
    }

    #[test]
    fn equipartition_by_quadrature() {
        // integrate in u = Ω/Ω_M to keep the mapped abscissae well conditioned
        let m = mirror();
        let wm = m.omega_m();
        let half = 50.0 / m.quality_factor();
        let q = integrate_to_infinity(
            |u| if u > 0.0 { wm * thermal_psd(&m, &DampingModel::Viscous, u * wm).unwrap() } else { 0.0 },
            0.0,
            &[1.0 - half, 1.0, 1.0 + half],
            0.0,
            1e-10,
        )
        .unwrap();
        assert!(rel(q.value / PI, m.thermal_variance()) < 1e-6);
    }

    #[test]
    fn thermal_rms_of_mirror() {
        // k_B T / (M Ω_M²) with the mirror parameters at 300 K.
        let dx = mirror().thermal_variance().sqrt();
        assert!(rel(dx, 3.63e-16) < 5e-3, "{dx:e}");
    }

    #[test]
    fn closed_loop_reduces_to_open_loop() {
        let m = OscillatorMode::natural(40.0).unwrap();
        for w in [0.3, 0.99, 1.0, 1.2] {
            let a = susceptibility(&m, &DampingModel::Viscous, w).unwrap();
            let b = closed_loop_susceptibility(&m, &DampingModel::Viscous, FeedbackGain::OPEN_LOOP, w).unwrap();
            assert!((a - b).norm() <= 1e-15 * a.norm());
            let sa = thermal_psd(&m, &DampingModel::Viscous, w).unwrap();
            let sb = closed_loop_psd(&m, FeedbackGain::OPEN_LOOP, w).unwrap();
            assert!(rel(sb, sa) < 1e-12);
        }
    }

    #[test]
    fn structural_closed_loop_unsupported() {
        let m = OscillatorMode::natural(40.0).unwrap();
        let s = DampingModel::structural(0.01).unwrap();
        assert!(matches!(closed_loop_susceptibility(&m, &s, g(1.0), 1.0), Err(Error::Unsupported(_))));
    }

    #[test]
    fn closed_loop_width_and_gain_values() {
        let m = mirror();
        let gamma_fb = effective_damping(m.gamma(), g(5.2));
        assert!(rel(gamma_fb, 2.0 * PI * 266.6) < 1e-12);
        // Half-power points of |χ_fb|² sit at Ω ≈ Ω_M ± Γ_fb/2.
        let chi0 = closed_loop_susceptibility(&m, &DampingModel::Viscous, g(5.2), m.omega_m()).unwrap();
        let chi_half =
            closed_loop_susceptibility(&m, &DampingModel::Viscous, g(5.2), m.omega_m() + 0.5 * gamma_fb).unwrap();
        assert!(rel(chi_half.norm_sqr() / chi0.norm_sqr(), 0.5) < 1e-3);
    }

    #[test]
    fn reduction_at_resonance_and_far_away() {
        let m = OscillatorMode::natural(1000.0).unwrap();
        assert!(rel(noise_reduction(&m, g(40.0), 1.0).unwrap(), 41.0) < 1e-12);
        let open = thermal_psd(&m, &DampingModel::Viscous, 1.0).unwrap();
        let closed = closed_loop_psd(&m, g(3.0), 1.0).unwrap();
        assert!(rel(open / closed, 16.0) < 1e-12);
        // far from resonance the loop has no effect
        let far = 1.0 + 0.5;
        let r = noise_reduction(&m, g(3.0), far).unwrap();
        assert!((r - 1.0).abs() < 0.01);
        assert!((noise_reduction(&m, g(7.0), 1e-6).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn reduction_half_width_matches_spectrum_ratio() {
        let m = OscillatorMode::natural(200.0).unwrap();
        let gain = g(4.0);
        let gfb = effective_damping(m.gamma(), gain);
        for w in [1.0 - 0.5 * gfb, 1.0 + 0.5 * gfb] {
            let brute = thermal_psd(&m, &DampingModel::Viscous, w).unwrap() / closed_loop_psd(&m, gain, w).unwrap();
            let r = noise_reduction(&m, gain, w).unwrap();
            assert!(rel(r * r, brute) < 1e-12);
        }
    }

    #[test]
    fn closed_loop_variance_by_quadrature() {
        let m = OscillatorMode::natural(100.0).unwrap();
        let gain = g(3.0);
        let q = integrate_to_infinity(
            |w| if w > 0.0 { closed_loop_psd(&m, gain, w).unwrap() } else { 0.0 },
            0.0,
            &[0.8, 1.0, 1.2],
            0.0,
            1e-11,
        )
        .unwrap();
        assert!(rel(q.value / PI, m.thermal_variance() / 4.0) < 1e-8);
    }

    #[test]
    fn effective_temperature_values() {
        assert_eq!(effective_temperature(300.0, FeedbackGain::OPEN_LOOP), 300.0);
        assert!((effective_temperature(300.0, g(5.2)) - 48.387).abs() < 1e-3);
    }

    #[test]
    fn one_sided_conversion_roundtrip() {
        assert_eq!(from_one_sided_hz(to_one_sided_hz(3.5)), 3.5);
    }
}
