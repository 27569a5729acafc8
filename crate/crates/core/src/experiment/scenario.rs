//! Scenario documents: one JSON file per run, SI quantities in unit-suffixed
//! keys.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::constants::UnitSystem;
use crate::environment::{resonant_peak, ModalDecomposition, WeightedMode};
use crate::error::{Error, Result};
use crate::monomode::{FeedbackGain, OscillatorMode};
use crate::sim::filter::Bandpass;
use crate::sim::{FeedbackLoop, InitialState, Sensing, SimConfig, DEFAULT_SAMPLES_PER_PERIOD};

use super::measure::SpectrumSettings;

/// Quality factor used when neither it nor a damping rate is given.
pub const DEFAULT_QUALITY_FACTOR: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Overrides the output directory chosen by the caller.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub mode: ModeConfig,
    #[serde(default)]
    pub environment: EnvironmentConfig,
    #[serde(default)]
    pub feedback: LoopConfig,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    pub kind: ScenarioKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModeConfig {
    pub units: UnitSystem,
    pub mass_kg: f64,
    pub omega_m_rad_per_s: f64,
    /// Give either this or `gamma_rad_per_s`.
    pub quality_factor: Option<f64>,
    pub gamma_rad_per_s: Option<f64>,
    pub temperature_k: f64,
}

impl Default for ModeConfig {
    fn default() -> Self {
        Self {
            units: UnitSystem::Natural,
            mass_kg: 1.0,
            omega_m_rad_per_s: 1.0,
            quality_factor: None,
            gamma_rad_per_s: None,
            temperature_k: 1.0,
        }
    }
}

impl ModeConfig {
    /// Natural-units mode of quality factor `q`.
    pub fn natural(q: f64) -> Self {
        Self { quality_factor: Some(q), ..Self::default() }
    }

    /// The silica mirror mode at room temperature.
    pub fn silica_mirror() -> Self {
        let m = OscillatorMode::silica_mirror(300.0).expect("valid constants");
        Self {
            units: UnitSystem::Si,
            mass_kg: m.mass(),
            omega_m_rad_per_s: m.omega_m(),
            quality_factor: None,
            gamma_rad_per_s: Some(m.gamma()),
            temperature_k: m.temperature(),
        }
    }

    pub fn build(&self) -> std::result::Result<OscillatorMode, (String, Error)> {
        fn at(field: &str) -> impl FnOnce(Error) -> (String, Error) + '_ {
            move |e| (format!("mode.{field}"), e)
        }
        let gamma = match (self.quality_factor, self.gamma_rad_per_s) {
            (Some(_), Some(_)) => {
                return Err((
                    "mode".into(),
                    Error::Precondition("give quality_factor or gamma_rad_per_s, not both".into()),
                ))
            }
            (None, Some(g)) => g,
            (q, None) => {
                let q = q.unwrap_or(DEFAULT_QUALITY_FACTOR);
                if !(q.is_finite() && q > 0.0) {
                    return Err(at("quality_factor")(Error::Precondition(format!("must be > 0, got {q}"))));
                }
                self.omega_m_rad_per_s / q
            }
        };
        let field = if self.gamma_rad_per_s.is_some() { "gamma_rad_per_s" } else { "quality_factor" };
        OscillatorMode::new(self.mass_kg, self.omega_m_rad_per_s, gamma, self.temperature_k)
            .map(|m| m.with_units(self.units))
            .map_err(|e| match &e {
                Error::Domain { name, .. } => {
                    let key = match *name {
                        "mass" => "mass_kg",
                        "omega_m" => "omega_m_rad_per_s",
                        "temperature" => "temperature_k",
                        _ => field,
                    };
                    at(key)(e)
                }
                _ => at(field)(e),
            })
    }
}

/// A non-resonant mode adding to the motion seen by the readout and loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtraModeConfig {
    pub omega_m_rad_per_s: f64,
    pub quality_factor: f64,
    #[serde(default = "unit")]
    pub mass_kg: f64,
    /// Overlap weight with the probed displacement.
    #[serde(default = "unit")]
    pub weight: f64,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvironmentConfig {
    /// Background level relative to the open-loop resonant peak.
    pub epsilon_b: f64,
    /// Electronic noise of the loop relative to the open-loop resonant peak.
    pub electronic_noise_ratio: f64,
    pub extra_modes: Vec<ExtraModeConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoopConfig {
    pub phase_rad: f64,
    /// Pass the loop signal through the experiment's bandpass.
    pub bandpass: bool,
    pub sensing: Sensing,
    pub delay_samples: usize,
    pub actuator_efficiency: f64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            phase_rad: 0.0,
            bandpass: false,
            sensing: Sensing::StateVelocity,
            delay_samples: 0,
            actuator_efficiency: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    /// Defaults to 20 samples per period of the highest mode.
    pub sample_rate_hz: Option<f64>,
    pub segment_length: usize,
    pub averages: usize,
    /// Half-span of fitted bands in expected widths.
    pub span_widths: f64,
    /// Ensemble size of transient and cyclic runs.
    pub runs: usize,
    /// Zero-span resolution bandwidth; derived from the loop width if absent.
    pub rbw_hz: Option<f64>,
    /// Zero-span detector time constant; derived from the loop width if absent.
    pub detector_tau_s: Option<f64>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: None,
            segment_length: 65536,
            averages: 400,
            span_widths: 8.0,
            runs: 200,
            rbw_hz: None,
            detector_tau_s: None,
        }
    }
}

impl EstimatorConfig {
    pub fn spectrum(&self) -> SpectrumSettings {
        SpectrumSettings { segment_length: self.segment_length, averages: self.averages, span_widths: self.span_widths }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioKind {
    /// Thermal spectra without and with feedback.
    CoolingSpectra { gains: Vec<f64> },
    /// Fitted damping, resonant reduction and cooling factor versus gain.
    GainSweep { gains: Vec<f64> },
    /// Open-loop and very-high-gain spectra.
    HighGainDip { gain: f64 },
    /// Response to a swept external force, with thermal fits alongside.
    MechanicalResponse {
        gains: Vec<f64>,
        #[serde(default = "default_drive_points")]
        frequencies: usize,
        /// Half-span of the sweep in closed-loop widths.
        #[serde(default = "default_response_span")]
        span_widths: f64,
        /// Driven power at resonance over the thermal variance, open loop.
        #[serde(default = "default_drive_db")]
        drive_snr_db: f64,
    },
    /// Variance relaxation when the loop is switched on, then off.
    TransientLoop {
        gain: f64,
        /// Time with the loop on, in closed-loop relaxation times.
        #[serde(default = "default_on_times")]
        on_relaxations: f64,
        /// Time after the loop opens, in free relaxation times.
        #[serde(default = "default_off_times")]
        off_relaxations: f64,
    },
    /// Build-up and decay of the response to a resonant force.
    TransientDrive {
        gain: f64,
        #[serde(default = "default_drive_db")]
        drive_snr_db: f64,
    },
    /// Averaged variance versus duty cycle for periodic cooling bursts.
    CyclicCooling {
        gain: f64,
        /// Burst length in closed-loop relaxation times.
        #[serde(default = "default_cool_times")]
        cool_relaxations: f64,
        /// Free-running intervals in free relaxation times.
        free_relaxations: Vec<f64>,
        /// How many of the intervals to check by simulation, spread evenly.
        #[serde(default = "default_simulated_points")]
        simulated_points: usize,
        /// Cycles simulated per check, the first one discarded.
        #[serde(default = "default_cycles")]
        cycles: usize,
    },
}

fn default_drive_points() -> usize {
    50
}
fn default_response_span() -> f64 {
    4.0
}
fn default_drive_db() -> f64 {
    30.0
}
fn default_on_times() -> f64 {
    8.0
}
fn default_off_times() -> f64 {
    6.0
}
fn default_cool_times() -> f64 {
    5.0
}
fn default_simulated_points() -> usize {
    3
}
fn default_cycles() -> usize {
    6
}

impl ScenarioKind {
    pub fn label(&self) -> &'static str {
        match self {
            Self::CoolingSpectra { .. } => "cooling_spectra",
            Self::GainSweep { .. } => "gain_sweep",
            Self::HighGainDip { .. } => "high_gain_dip",
            Self::MechanicalResponse { .. } => "mechanical_response",
            Self::TransientLoop { .. } => "transient_loop",
            Self::TransientDrive { .. } => "transient_drive",
            Self::CyclicCooling { .. } => "cyclic_cooling",
        }
    }
}

impl Scenario {
    /// Parses a scenario, reporting the JSON path of any error.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let scenario: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let name = serde_json::from_str::<serde_json::Value>(text)
                .ok()
                .and_then(|v| v.get("name").and_then(|n| n.as_str()).map(str::to_owned))
                .unwrap_or_else(|| "<unnamed>".into());
            let path = e.path().to_string();
            Error::Config { scenario: name, path, message: e.into_inner().to_string() }
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    fn config_error(&self, path: impl Into<String>, err: Error) -> Error {
        Error::Config { scenario: self.name.clone(), path: path.into(), message: err.to_string() }
    }

    pub fn resonant_mode(&self) -> Result<OscillatorMode> {
        self.mode.build().map_err(|(path, e)| self.config_error(path, e))
    }

    /// Checks every parameter against its module's domain.
    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(self.config_error("name", Error::Precondition("must not be empty".into())));
        }
        self.resonant_mode()?;
        let gains: Vec<(String, f64)> = match &self.kind {
            ScenarioKind::CoolingSpectra { gains }
            | ScenarioKind::GainSweep { gains }
            | ScenarioKind::MechanicalResponse { gains, .. } => {
                if gains.is_empty() {
                    return Err(self.config_error("kind.gains", Error::Precondition("needs at least one gain".into())));
                }
                gains.iter().enumerate().map(|(i, g)| (format!("kind.gains[{i}]"), *g)).collect()
            }
            ScenarioKind::HighGainDip { gain }
            | ScenarioKind::TransientLoop { gain, .. }
            | ScenarioKind::TransientDrive { gain, .. }
            | ScenarioKind::CyclicCooling { gain, .. } => vec![("kind.gain".into(), *gain)],
        };
        for (path, g) in &gains {
            FeedbackGain::new(*g).map_err(|e| self.config_error(path.clone(), e))?;
        }
        let positive = |path: &str, v: f64| -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(self.config_error(path, Error::Precondition(format!("must be finite and > 0, got {v}"))))
            }
        };
        match &self.kind {
            ScenarioKind::MechanicalResponse { frequencies, span_widths, drive_snr_db, .. } => {
                if *frequencies < 8 {
                    return Err(
                        self.config_error("kind.frequencies", Error::Precondition("needs at least 8 points".into()))
                    );
                }
                positive("kind.span_widths", *span_widths)?;
                if !drive_snr_db.is_finite() {
                    return Err(self.config_error("kind.drive_snr_db", Error::Precondition("must be finite".into())));
                }
            }
            ScenarioKind::TransientLoop { gain, on_relaxations, off_relaxations } => {
                positive("kind.on_relaxations", *on_relaxations)?;
                positive("kind.off_relaxations", *off_relaxations)?;
                if *gain == 0.0 {
                    return Err(self
                        .config_error("kind.gain", Error::Precondition("switching needs a closed-loop gain".into())));
                }
            }
            ScenarioKind::TransientDrive { drive_snr_db, .. } => {
                if !drive_snr_db.is_finite() {
                    return Err(self.config_error("kind.drive_snr_db", Error::Precondition("must be finite".into())));
                }
            }
            ScenarioKind::CyclicCooling { cool_relaxations, free_relaxations, cycles, .. } => {
                positive("kind.cool_relaxations", *cool_relaxations)?;
                if free_relaxations.is_empty() {
                    return Err(self.config_error(
                        "kind.free_relaxations",
                        Error::Precondition("needs at least one interval".into()),
                    ));
                }
                for (i, f) in free_relaxations.iter().enumerate() {
                    positive(&format!("kind.free_relaxations[{i}]"), *f)?;
                }
                if *cycles < 2 {
                    return Err(self.config_error("kind.cycles", Error::Precondition("needs at least 2 cycles".into())));
                }
            }
            _ => {}
        }
        for (key, v) in [
            ("environment.epsilon_b", self.environment.epsilon_b),
            ("environment.electronic_noise_ratio", self.environment.electronic_noise_ratio),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(self.config_error(key, Error::Precondition(format!("must be finite and >= 0, got {v}"))));
            }
        }
        let e = &self.estimator;
        if e.segment_length < 16 {
            return Err(self.config_error("estimator.segment_length", Error::Precondition("must be >= 16".into())));
        }
        if e.averages == 0 {
            return Err(self.config_error("estimator.averages", Error::Precondition("must be >= 1".into())));
        }
        if e.runs == 0 {
            return Err(self.config_error("estimator.runs", Error::Precondition("must be >= 1".into())));
        }
        positive("estimator.span_widths", e.span_widths)?;
        if let Some(v) = e.rbw_hz {
            positive("estimator.rbw_hz", v)?;
        }
        if let Some(v) = e.detector_tau_s {
            positive("estimator.detector_tau_s", v)?;
        }
        let probe = self.sim_config(FeedbackGain::OPEN_LOOP, 16.0 / self.base_sample_rate()?, 0)?;
        probe.validate().map_err(|err| {
            let path = match &err {
                Error::Precondition(_) if e.sample_rate_hz.is_some() => "estimator.sample_rate_hz",
                Error::Domain { name: "delay_samples", .. } => "feedback.delay_samples",
                Error::Domain { name: "actuator_efficiency", .. } => "feedback.actuator_efficiency",
                Error::Domain { name: "phase", .. } => "feedback.phase_rad",
                _ => "environment.extra_modes",
            };
            self.config_error(path, err)
        })?;
        Ok(())
    }

    fn modes(&self) -> Result<ModalDecomposition> {
        let resonant = self.resonant_mode()?;
        if self.environment.extra_modes.is_empty() {
            return Ok(ModalDecomposition::single(resonant));
        }
        let mut modes = vec![WeightedMode { mode: resonant, weight: 1.0 }];
        for (i, m) in self.environment.extra_modes.iter().enumerate() {
            let mode = OscillatorMode::from_quality_factor(
                m.mass_kg,
                m.omega_m_rad_per_s,
                m.quality_factor,
                resonant.temperature(),
            )
            .map(|x| x.with_units(resonant.units()))
            .map_err(|e| self.config_error(format!("environment.extra_modes[{i}]"), e))?;
            modes.push(WeightedMode { mode, weight: m.weight });
        }
        ModalDecomposition::new(modes).map_err(|e| self.config_error("environment.extra_modes", e))
    }

    /// Sample rate of every simulation in the scenario [Hz].
    pub fn base_sample_rate(&self) -> Result<f64> {
        if let Some(fs) = self.estimator.sample_rate_hz {
            return Ok(fs);
        }
        let top = self.modes()?.modes().iter().map(|m| m.mode.frequency_hz()).fold(0.0, f64::max);
        Ok(DEFAULT_SAMPLES_PER_PERIOD * top)
    }

    /// Simulation of the scenario's system at `gain`.
    pub fn sim_config(&self, gain: FeedbackGain, duration: f64, seed: u64) -> Result<SimConfig> {
        let modes = self.modes()?;
        let resonant_mode = modes.nearest(self.resonant_mode()?.omega_m());
        let mode = modes.modes()[resonant_mode].mode;
        let peak = resonant_peak(&mode);
        let l = &self.feedback;
        Ok(SimConfig {
            modes,
            resonant_mode,
            feedback: FeedbackLoop {
                gain,
                phase: l.phase_rad,
                s_e: self.environment.electronic_noise_ratio * peak,
                bandpass: l.bandpass.then(|| Bandpass::centered_on(&mode)),
                sensing: l.sensing,
                delay_samples: l.delay_samples,
                actuator_efficiency: l.actuator_efficiency,
            },
            background_psd: self.environment.epsilon_b * peak,
            noise_cutoff: None,
            drive: None,
            schedule: Vec::new(),
            sample_rate: self.base_sample_rate()?,
            duration,
            seed,
            initial: InitialState::Equilibrium,
            record_force: false,
            decimation: 1,
        })
    }
}
