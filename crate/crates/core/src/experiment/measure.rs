//! Simulation-plus-estimation pipelines shared by the scenario runner.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::monomode::{FeedbackGain, OscillatorMode};
use crate::sim::{SimConfig, Simulator, Trajectory};
use crate::spectral::{
    fit_loop_lorentzian, fit_lorentzian, fit_relaxation, welch_psd, zero_span, LorentzianFit, LorentzianParams,
    Relaxation, Spectrum, WelchSettings,
};
use crate::transient::{SwitchEvent, SwitchKind};

/// Welch and fit settings for a simulated spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSettings {
    pub segment_length: usize,
    pub averages: usize,
    /// Half-span of the fitted band in expected widths, capped at 80% of
    /// the resonance frequency.
    pub span_widths: f64,
}

impl Default for SpectrumSettings {
    fn default() -> Self {
        Self { segment_length: 65536, averages: 400, span_widths: 8.0 }
    }
}

impl SpectrumSettings {
    /// Trace length giving `averages` half-overlapping segments.
    pub fn duration(&self, sample_rate: f64) -> f64 {
        ((self.averages + 1) * self.segment_length / 2) as f64 / sample_rate
    }
}

/// Simulates `config` long enough for `settings` and returns its spectrum.
/// The configured duration is overridden.
pub fn simulated_spectrum(config: &SimConfig, settings: &SpectrumSettings) -> Result<Spectrum> {
    let mut cfg = config.clone();
    cfg.duration = settings.duration(cfg.sample_rate / cfg.decimation as f64) * cfg.decimation as f64;
    let trajectory = Simulator::new(cfg)?.run()?;
    welch_psd(&trajectory, &WelchSettings::new(settings.segment_length))
}

/// Fits the resonance of `mode` in `spec`, over a band sized for a
/// damping rate of `expected_gamma` [rad/s]. Without `open` the spectrum is
/// taken as open loop; with it, as closed loop with the background fed
/// through the loop, anchored on the open-loop fit and started from its
/// ideal scaling to `gain`.
pub fn fit_resonance(
    spec: &Spectrum,
    mode: &OscillatorMode,
    expected_gamma: f64,
    settings: &SpectrumSettings,
    open: Option<(&LorentzianFit, FeedbackGain)>,
) -> Result<LorentzianFit> {
    let f0 = mode.frequency_hz();
    let half = (settings.span_widths * expected_gamma / (2.0 * PI)).min(0.8 * f0);
    let band = spec.band(f0 - half, f0 + half);
    match open {
        None => fit_lorentzian(&band, None),
        Some((fit, gain)) => fit_loop_lorentzian(&band, fit.width(), Some(scaled_guess(fit, gain))),
    }
}

/// Fitted quantities for one gain, relative to an open-loop reference fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoolingPoint {
    pub gain: f64,
    /// `Γ_fb/Γ` from fitted widths.
    pub damping_ratio: f64,
    /// `T/T_fb` from fitted resonant areas.
    pub cooling_factor: f64,
    /// Amplitude noise reduction at resonance, from the fitted curves.
    pub amplitude_reduction: f64,
    pub fit: LorentzianFit,
}

impl CoolingPoint {
    pub fn relative_to(gain: f64, fit: LorentzianFit, open: &LorentzianFit) -> Self {
        Self {
            gain,
            damping_ratio: fit.width() / open.width(),
            cooling_factor: open.area / fit.area,
            amplitude_reduction: (open.params.evaluate(open.center()) / fit.params.evaluate(open.center())).sqrt(),
            fit,
        }
    }
}

/// Starting point for a closed-loop fit at `gain`, scaled from the
/// open-loop fit by the ideal cold-damping laws.
pub fn scaled_guess(open: &LorentzianFit, gain: FeedbackGain) -> LorentzianParams {
    let k = gain.factor();
    LorentzianParams::new(open.center(), open.width() * k, open.peak() / (k * k), open.background())
}

/// Resonant spectrum level relative to the open loop, from the PSD averaged
/// within a fraction of the open-loop width around resonance.
pub fn resonance_level(spec: &Spectrum, mode: &OscillatorMode) -> Result<f64> {
    spec.average_near(mode.frequency_hz(), 0.25 * mode.gamma() / (2.0 * PI))
}

/// Loop on at `on`, off at `off`, loop initially off.
pub fn loop_cycle(on: f64, off: f64) -> Vec<SwitchEvent> {
    vec![SwitchEvent::new(on, SwitchKind::LoopOn), SwitchEvent::new(off, SwitchKind::LoopOff)]
}

/// Ensemble mean of the squared displacement at every output sample.
pub fn ensemble_variance(config: &SimConfig, runs: usize) -> Result<Trajectory> {
    if runs == 0 {
        return Err(Error::Precondition("ensemble needs at least one run".into()));
    }
    let sim = Simulator::new(config.clone())?;
    let squares = sim.ensemble(runs, |_, t| t.samples.iter().map(|x| x * x).collect::<Vec<f64>>())?;
    let n = squares[0].len();
    let mut mean = vec![0.0; n];
    for s in &squares {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= runs as f64);
    let fs = config.sample_rate / config.decimation as f64;
    let mut out = Trajectory::new(mean, fs, config.units())?;
    out.seed = config.seed;
    Ok(out)
}

/// Ensemble mean of zero-span traces centred on the resonance.
pub fn ensemble_zero_span(config: &SimConfig, runs: usize, rbw: f64, tau: f64) -> Result<Trajectory> {
    if runs == 0 {
        return Err(Error::Precondition("ensemble needs at least one run".into()));
    }
    let center = config.resonant().frequency_hz();
    let sim = Simulator::new(config.clone())?;
    let traces = sim.ensemble(runs, |_, t| zero_span(&t, center, rbw, tau).map(|z| z.power))?;
    let mut mean: Vec<f64> = Vec::new();
    for trace in traces {
        let trace = trace?;
        if mean.is_empty() {
            mean = vec![0.0; trace.len()];
        }
        for (m, v) in mean.iter_mut().zip(&trace) {
            *m += v / runs as f64;
        }
    }
    Trajectory::new(mean, config.sample_rate / config.decimation as f64, config.units())
}

/// Exponential relaxation fitted to `series` between `from` and `to`
/// (trace time), with the time origin moved to `origin`.
pub fn relaxation_between(series: &Trajectory, origin: f64, from: f64, to: f64) -> Result<Relaxation> {
    let w = series.window(from, to);
    let t: Vec<f64> = w.times().iter().map(|t| t - origin).collect();
    fit_relaxation(&t, &w.samples)
}

/// Expected resonance width for `gain` with viscous feedback [rad/s].
pub fn expected_gamma(mode: &OscillatorMode, gain: FeedbackGain) -> f64 {
    mode.gamma() * gain.factor()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{closed_loop_psd_with_background, resonant_peak, NoiseEnvironment};
    use crate::monomode::to_one_sided_hz;

    fn analytic(mode: &OscillatorMode, gain: FeedbackGain, epsilon_b: f64) -> Spectrum {
        let env = NoiseEnvironment::new(epsilon_b * resonant_peak(mode), 0.0).unwrap();
        let f: Vec<f64> = (1..8000).map(|i| i as f64 * 0.3 / 8000.0).collect();
        let psd = f
            .iter()
            .map(|&x| to_one_sided_hz(closed_loop_psd_with_background(mode, &env, gain, 2.0 * PI * x).unwrap()))
            .collect();
        Spectrum::from_values(f, psd, 100).unwrap()
    }

    #[test]
    fn duration_holds_requested_segments() {
        let s = SpectrumSettings { segment_length: 1000, averages: 9, span_widths: 8.0 };
        assert_eq!(s.duration(10.0), 500.0);
    }

    #[test]
    fn fitted_width_and_area_follow_gain_on_analytic_spectra() {
        let mode = OscillatorMode::natural(50.0).unwrap();
        let settings = SpectrumSettings::default();
        let open_spec = analytic(&mode, FeedbackGain::OPEN_LOOP, 1.0 / 110.0);
        let open = fit_resonance(&open_spec, &mode, mode.gamma(), &settings, None).unwrap();
        for g in [1.0, 5.0, 8.0, 10.0] {
            let gain = FeedbackGain::new(g).unwrap();
            let spec = analytic(&mode, gain, 1.0 / 110.0);
            let fit = fit_resonance(&spec, &mode, expected_gamma(&mode, gain), &settings, Some((&open, gain))).unwrap();
            let p = CoolingPoint::relative_to(g, fit, &open);
            assert!((p.damping_ratio / gain.factor() - 1.0).abs() < 0.01, "g={g} ratio {}", p.damping_ratio);
            let theory = crate::environment::cooling_factor(gain, 1.0 / 110.0).unwrap().value;
            assert!((p.cooling_factor / theory - 1.0).abs() < 0.01, "g={g} cooling {}", p.cooling_factor);
        }
    }

    #[test]
    fn loop_cycle_orders_events() {
        let e = loop_cycle(1.0, 2.0);
        assert_eq!(e[0].kind, SwitchKind::LoopOn);
        assert_eq!(e[1].time, 2.0);
    }

    #[test]
    fn empty_ensembles_are_rejected() {
        let mode = OscillatorMode::natural(50.0).unwrap();
        let cfg = SimConfig::single_mode(mode, FeedbackGain::OPEN_LOOP, 10.0);
        assert!(ensemble_variance(&cfg, 0).is_err());
        assert!(ensemble_zero_span(&cfg, 0, 0.1, 0.1).is_err());
    }
}
