//! Closed-form transients of a viscously damped mode (`Γ ≪ Ω_M`):
//! variance relaxation when the loop is switched, build-up and decay of a
//! resonant drive, and the steady cycle of a periodically cooled mode.

use serde::{Deserialize, Serialize};

use crate::error::{domain, require_non_negative, require_positive, Error, Result};
use crate::monomode::{effective_damping, FeedbackGain, OscillatorMode};

/// What happens at a [`SwitchEvent`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchKind {
    LoopOn,
    LoopOff,
    DriveOn,
    DriveOff,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchEvent {
    /// [s]
    pub time: f64,
    pub kind: SwitchKind,
}

impl SwitchEvent {
    pub fn new(time: f64, kind: SwitchKind) -> Self {
        Self { time, kind }
    }
}

/// Checks that event times are finite, non-negative and strictly increasing.
pub fn validate_schedule(events: &[SwitchEvent]) -> Result<()> {
    for e in events {
        require_non_negative("event time", e.time)?;
    }
    if events.windows(2).any(|w| w[1].time <= w[0].time) {
        return Err(domain("schedule", "event times must be strictly increasing"));
    }
    Ok(())
}

/// External force `F₀ cos(Ω t + φ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonochromaticDrive {
    /// F₀ [N]
    pub amplitude: f64,
    /// [rad/s]
    pub omega: f64,
    /// [rad]
    pub phase: f64,
}

impl MonochromaticDrive {
    pub fn new(amplitude: f64, omega: f64, phase: f64) -> Result<Self> {
        if !phase.is_finite() {
            return Err(domain("phase", "must be finite"));
        }
        Ok(Self {
            amplitude: require_non_negative("amplitude", amplitude)?,
            omega: require_positive("omega", omega)?,
            phase,
        })
    }

    /// Drive exactly at the resonance of `mode`.
    pub fn resonant(mode: &OscillatorMode, amplitude: f64, phase: f64) -> Result<Self> {
        Self::new(amplitude, mode.omega_m(), phase)
    }
}

/// Variance `t` after the loop is closed on a mode at thermal equilibrium.
pub fn variance_after_loop_on(mode: &OscillatorMode, gain: FeedbackGain, t: f64) -> Result<f64> {
    require_non_negative("t", t)?;
    let g = gain.value();
    let decay = (-effective_damping(mode.gamma(), gain) * t).exp();
    Ok(mode.thermal_variance() / gain.factor() * (1.0 + g * decay))
}

/// Variance `t` after the loop is opened on a mode cooled to `T/(1+g)`.
pub fn variance_after_loop_off(mode: &OscillatorMode, gain: FeedbackGain, t: f64) -> Result<f64> {
    require_non_negative("t", t)?;
    let g = gain.value();
    let decay = (-mode.gamma() * t).exp();
    Ok(mode.thermal_variance() * (1.0 - g / gain.factor() * decay))
}

/// Impulse response of the (cold-damped) mode, `sin(Ω_M t) e^{−Γ_fb t/2} / (MΩ_M)`.
pub fn impulse_response(mode: &OscillatorMode, gain: FeedbackGain, t: f64) -> Result<f64> {
    require_non_negative("t", t)?;
    let rate = effective_damping(mode.gamma(), gain);
    Ok((mode.omega_m() * t).sin() / (mode.mass() * mode.omega_m()) * (-0.5 * rate * t).exp())
}

fn resonant_amplitude(mode: &OscillatorMode, gain: FeedbackGain, drive: &MonochromaticDrive) -> Result<f64> {
    let tolerance = 1e-9 * mode.omega_m();
    if (drive.omega - mode.omega_m()).abs() > tolerance {
        return Err(Error::Unsupported(format!(
            "closed-form forced response needs a resonant drive ({} rad/s), got {} rad/s",
            mode.omega_m(),
            drive.omega
        )));
    }
    Ok(drive.amplitude / (mode.mass() * mode.omega_m() * effective_damping(mode.gamma(), gain)))
}

/// Steady-state displacement amplitude `F₀/(MΩ_MΓ')` of a resonant drive.
pub fn forced_steady_amplitude(mode: &OscillatorMode, gain: FeedbackGain, drive: &MonochromaticDrive) -> Result<f64> {
    resonant_amplitude(mode, gain, drive)
}

/// Envelope `t` after a resonant drive is switched on, thermal noise neglected.
pub fn forced_envelope_on(
    mode: &OscillatorMode,
    gain: FeedbackGain,
    drive: &MonochromaticDrive,
    t: f64,
) -> Result<f64> {
    require_non_negative("t", t)?;
    let rate = effective_damping(mode.gamma(), gain);
    Ok(resonant_amplitude(mode, gain, drive)? * (1.0 - (-0.5 * rate * t).exp()))
}

/// Displacement `t` after a resonant drive is switched on.
pub fn forced_response_on(
    mode: &OscillatorMode,
    gain: FeedbackGain,
    drive: &MonochromaticDrive,
    t: f64,
) -> Result<f64> {
    Ok(forced_envelope_on(mode, gain, drive, t)? * (mode.omega_m() * t + drive.phase).sin())
}

/// Spectral power at resonance during build-up, `¼ envelope²`.
pub fn forced_power_on(mode: &OscillatorMode, gain: FeedbackGain, drive: &MonochromaticDrive, t: f64) -> Result<f64> {
    Ok(0.25 * forced_envelope_on(mode, gain, drive, t)?.powi(2))
}

/// Envelope `t` after a resonant drive in steady state is switched off.
pub fn forced_envelope_off(
    mode: &OscillatorMode,
    gain: FeedbackGain,
    drive: &MonochromaticDrive,
    t: f64,
) -> Result<f64> {
    require_non_negative("t", t)?;
    let rate = effective_damping(mode.gamma(), gain);
    Ok(resonant_amplitude(mode, gain, drive)? * (-0.5 * rate * t).exp())
}

/// Free ring-down `t` after the drive is switched off.
pub fn forced_response_off(
    mode: &OscillatorMode,
    gain: FeedbackGain,
    drive: &MonochromaticDrive,
    t: f64,
) -> Result<f64> {
    Ok(forced_envelope_off(mode, gain, drive, t)? * (mode.omega_m() * t + drive.phase).sin())
}

pub fn forced_power_off(mode: &OscillatorMode, gain: FeedbackGain, drive: &MonochromaticDrive, t: f64) -> Result<f64> {
    Ok(0.25 * forced_envelope_off(mode, gain, drive, t)?.powi(2))
}

/// Steady periodic regime of cooling for `t_cool`, then running free for `t_free`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CyclicCooling {
    /// Time average of the variance over one cycle [m²].
    pub mean_variance: f64,
    /// Variance when the loop closes (maximum of the cycle).
    pub variance_at_loop_on: f64,
    /// Variance when the loop opens (minimum of the cycle).
    pub variance_at_loop_off: f64,
    /// `t_cool / (t_cool + t_free)`.
    pub duty: f64,
}

/// Variance over the steady cycle; the cycle-start value is the fixed
/// point of the cool-then-free affine map.
pub fn cyclic_cooling_average(
    mode: &OscillatorMode,
    gain: FeedbackGain,
    t_cool: f64,
    t_free: f64,
) -> Result<CyclicCooling> {
    require_non_negative("t_cool", t_cool)?;
    require_non_negative("t_free", t_free)?;
    let period = t_cool + t_free;
    if period <= 0.0 {
        return Err(domain("t_cool + t_free", "cycle period must be > 0"));
    }
    let thermal = mode.thermal_variance();
    let cooled = thermal / gain.factor();
    let fast = effective_damping(mode.gamma(), gain);
    let slow = mode.gamma();
    let a = (-fast * t_cool).exp();
    let b = (-slow * t_free).exp();
    let start = if a * b == 1.0 {
        // both phases of zero length cannot happen (period > 0); with g = 0 the
        // two targets coincide
        thermal
    } else {
        (thermal * (1.0 - b) + cooled * b * (1.0 - a)) / (1.0 - a * b)
    };
    let end_of_cool = cooled + (start - cooled) * a;
    // ∫ (V∞ + (V0 − V∞)e^{−rt}) dt over one phase, written with -expm1 for small r·t
    let phase = |target: f64, initial: f64, rate: f64, length: f64| {
        target * length + (initial - target) * (-(-rate * length).exp_m1()) / rate
    };
    let integral = phase(cooled, start, fast, t_cool) + phase(thermal, end_of_cool, slow, t_free);
    Ok(CyclicCooling {
        mean_variance: integral / period,
        variance_at_loop_on: start,
        variance_at_loop_off: end_of_cool,
        duty: t_cool / period,
    })
}

/// Variance of the mode along a loop on/off schedule, sampled at `times`.
///
/// The mode starts at `initial_variance` with the loop open, unless the
/// first event is a `LoopOn` at `t = 0`. Drive events are ignored.
pub fn variance_along_schedule(
    mode: &OscillatorMode,
    gain: FeedbackGain,
    initial_variance: f64,
    events: &[SwitchEvent],
    times: &[f64],
) -> Result<Vec<f64>> {
    validate_schedule(events)?;
    require_non_negative("initial_variance", initial_variance)?;
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(domain("times", "must be non-decreasing"));
    }
    let thermal = mode.thermal_variance();
    let fast = effective_damping(mode.gamma(), gain);
    let relax = |v: f64, on: bool, dt: f64| {
        let (target, rate) = if on { (thermal / gain.factor(), fast) } else { (thermal, mode.gamma()) };
        target + (v - target) * (-rate * dt).exp()
    };
    let loop_events: Vec<&SwitchEvent> =
        events.iter().filter(|e| matches!(e.kind, SwitchKind::LoopOn | SwitchKind::LoopOff)).collect();
    let mut out = Vec::with_capacity(times.len());
    let (mut v, mut on, mut now, mut next) = (initial_variance, false, 0.0, 0usize);
    for &t in times {
        require_non_negative("time", t)?;
        while next < loop_events.len() && loop_events[next].time <= t {
            v = relax(v, on, loop_events[next].time - now);
            now = loop_events[next].time;
            on = loop_events[next].kind == SwitchKind::LoopOn;
            next += 1;
        }
        v = relax(v, on, t - now);
        now = t;
        out.push(v);
    }
    Ok(out)
}
