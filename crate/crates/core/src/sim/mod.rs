//! Time-domain simulation of the mirror and its feedback loop.
//!
//! The modes, the optional measurement-noise processes and the optional loop
//! bandpass form one linear stochastic system. Between switch events it is
//! advanced with its exact transition matrix and exact Gaussian increment
//! covariance, so the only approximation is the sampling itself.
//!
//! Background and electronic noise are displacement processes shaped by a
//! fourth-order Butterworth lowpass (corner at half the Nyquist frequency by
//! default) and normalized to their nominal PSD at the loop resonance. They
//! need to be smooth because the loop differentiates them.

mod model;

pub mod filter;
pub mod io;
pub mod rng;
pub mod statespace;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::{UnitSystem, HBAR, PLANCK, SPEED_OF_LIGHT};
use crate::environment::ModalDecomposition;
use crate::error::{domain, require_non_negative, require_positive, Error, Result};
use crate::monomode::{FeedbackGain, OscillatorMode};
use crate::transient::{validate_schedule, MonochromaticDrive, SwitchEvent, SwitchKind};

pub use filter::{apply_loop_bandpass, Bandpass, Biquad};
use model::Model;
use rng::{member_seed, Source};
use statespace::{covariance_factor, harmonic_response, is_asymptotically_stable, lyapunov, van_loan, zero_order_hold};

/// How the loop obtains the velocity it feeds back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sensing {
    /// Continuous feedback from the exact velocity of the measured signal.
    #[default]
    StateVelocity,
    /// Sampled loop: backward difference of the measured displacement,
    /// force held over each sample interval.
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeedbackLoop {
    pub gain: FeedbackGain,
    /// Rotation of the feedback in the `(v, Ω_M x)` plane [rad]; 0 is viscous.
    pub phase: f64,
    /// Electronic noise referred to displacement [m²/(rad/s)].
    pub s_e: f64,
    pub bandpass: Option<Bandpass>,
    pub sensing: Sensing,
    /// Extra delay of the sampled loop, in samples.
    pub delay_samples: usize,
    /// Fraction of the commanded force the actuator delivers.
    pub actuator_efficiency: f64,
}

impl Default for FeedbackLoop {
    fn default() -> Self {
        Self {
            gain: FeedbackGain::OPEN_LOOP,
            phase: 0.0,
            s_e: 0.0,
            bandpass: None,
            sensing: Sensing::StateVelocity,
            delay_samples: 0,
            actuator_efficiency: 1.0,
        }
    }
}

impl FeedbackLoop {
    /// Ideal viscous feedback of gain `g`.
    pub fn viscous(gain: FeedbackGain) -> Self {
        Self { gain, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        if !self.phase.is_finite() {
            return Err(domain("phase", "must be finite"));
        }
        require_non_negative("s_e", self.s_e)?;
        require_non_negative("actuator_efficiency", self.actuator_efficiency)?;
        if self.sensing == Sensing::StateVelocity && self.delay_samples > 0 {
            return Err(domain("delay_samples", "a loop delay needs finite-difference sensing"));
        }
        Ok(())
    }
}

/// Displacement and velocity as seen by the loop.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MeasuredMotion {
    pub displacement: f64,
    pub velocity: f64,
}

/// Force applied by the loop, `−MΓg(cos θ · v + sin θ · Ω_M x)` evaluated on
/// the measured motion plus the electronic noise.
pub fn feedback_force(
    loop_: &FeedbackLoop,
    mode: &OscillatorMode,
    motion: MeasuredMotion,
    noise: MeasuredMotion,
) -> f64 {
    let x = motion.displacement + noise.displacement;
    let v = motion.velocity + noise.velocity;
    let signal = loop_.phase.cos() * v + loop_.phase.sin() * mode.omega_m() * x;
    -mode.mass() * mode.gamma() * loop_.gain.value() * loop_.actuator_efficiency * signal
}

/// Radiation-pressure force `2ħk I` of a beam of `photon_flux` photons per
/// second reflected at normal incidence.
pub fn radiation_pressure_force(photon_flux: f64, wavevector: f64) -> Result<f64> {
    require_non_negative("photon_flux", photon_flux)?;
    require_positive("wavevector", wavevector)?;
    Ok(2.0 * HBAR * wavevector * photon_flux)
}

/// Photon flux [1/s] of a beam of `power` [W] at `wavelength` [m].
pub fn photon_flux(power: f64, wavelength: f64) -> Result<f64> {
    require_non_negative("power", power)?;
    require_positive("wavelength", wavelength)?;
    Ok(power * wavelength / (PLANCK * SPEED_OF_LIGHT))
}

/// Starting point of a run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialState {
    /// Drawn from the stationary distribution of the configuration in force
    /// just before `t = 0` (cooled if the schedule starts with the loop on).
    #[default]
    Equilibrium,
    /// Everything at rest.
    Rest,
    /// Resonant mode displaced, everything else at rest.
    Displaced { displacement: f64, velocity: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub modes: ModalDecomposition,
    /// Index (in frequency order) of the mode the loop is tuned to.
    #[serde(default)]
    pub resonant_mode: usize,
    #[serde(default)]
    pub feedback: FeedbackLoop,
    /// Background displacement noise [m²/(rad/s)], seen by readout and loop.
    #[serde(default)]
    pub background_psd: f64,
    /// Corner of the noise shapers [rad/s]; defaults to half the Nyquist frequency.
    #[serde(default)]
    pub noise_cutoff: Option<f64>,
    #[serde(default)]
    pub drive: Option<MonochromaticDrive>,
    /// Loop and drive switching. The loop is on throughout if no loop event
    /// is listed; otherwise it starts in the state opposite to the first
    /// loop event. Same for the drive.
    #[serde(default)]
    pub schedule: Vec<SwitchEvent>,
    /// [Hz]
    pub sample_rate: f64,
    /// [s]
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub initial: InitialState,
    #[serde(default)]
    pub record_force: bool,
    /// Keep every n-th sample.
    #[serde(default = "one")]
    pub decimation: usize,
}

fn one() -> usize {
    1
}

/// Samples per resonance period used when none is specified.
pub const DEFAULT_SAMPLES_PER_PERIOD: f64 = 20.0;
/// Lowest accepted ratio of sample rate to the highest mode frequency.
pub const MIN_SAMPLES_PER_PERIOD: f64 = 10.0;

impl SimConfig {
    /// Single mode, ideal viscous loop, sampled 20 times per period.
    pub fn single_mode(mode: OscillatorMode, gain: FeedbackGain, duration: f64) -> Self {
        Self {
            modes: ModalDecomposition::single(mode),
            resonant_mode: 0,
            feedback: FeedbackLoop::viscous(gain),
            background_psd: 0.0,
            noise_cutoff: None,
            drive: None,
            schedule: Vec::new(),
            sample_rate: DEFAULT_SAMPLES_PER_PERIOD * mode.frequency_hz(),
            duration,
            seed: 0,
            initial: InitialState::Equilibrium,
            record_force: false,
            decimation: 1,
        }
    }

    pub fn resonant(&self) -> &OscillatorMode {
        &self.modes.modes()[self.resonant_mode].mode
    }

    pub fn units(&self) -> UnitSystem {
        self.resonant().units()
    }

    pub fn validate(&self) -> Result<()> {
        if self.resonant_mode >= self.modes.len() {
            return Err(domain("resonant_mode", "index out of range"));
        }
        let units = self.units();
        if self.modes.modes().iter().any(|m| m.mode.units() != units) {
            return Err(domain("modes", "all modes must use the same unit system"));
        }
        if units == UnitSystem::Natural {
            let r = self.resonant();
            if r.mass() != 1.0 || r.omega_m() != 1.0 {
                return Err(domain("modes", "natural units need M = Ω_M = 1 for the resonant mode"));
            }
        }
        require_positive("sample_rate", self.sample_rate)?;
        require_positive("duration", self.duration)?;
        require_non_negative("background_psd", self.background_psd)?;
        if let Some(c) = self.noise_cutoff {
            require_positive("noise_cutoff", c)?;
        }
        if self.decimation == 0 {
            return Err(domain("decimation", "must be >= 1"));
        }
        let top = self.modes.modes().iter().map(|m| m.mode.frequency_hz()).fold(0.0, f64::max);
        if self.sample_rate < MIN_SAMPLES_PER_PERIOD * top * (1.0 - 1e-12) {
            return Err(Error::Precondition(format!(
                "sample rate {} Hz is below {MIN_SAMPLES_PER_PERIOD} x the highest mode frequency ({top} Hz)",
                self.sample_rate
            )));
        }
        self.feedback.validate()?;
        validate_schedule(&self.schedule)?;
        if let Some(d) = &self.drive {
            MonochromaticDrive::new(d.amplitude, d.omega, d.phase)?;
        }
        if self.samples() < 2 {
            return Err(Error::TooShort { required: 2, actual: self.samples() });
        }
        Ok(())
    }

    /// Number of simulated samples before decimation.
    pub fn samples(&self) -> usize {
        (self.duration * self.sample_rate).round() as usize
    }

    fn starts_with(&self, on: SwitchKind, off: SwitchKind, default: bool) -> bool {
        match self.schedule.iter().find(|e| e.kind == on || e.kind == off) {
            None => default,
            Some(e) => e.kind == off,
        }
    }
}

/// Uniformly sampled simulator output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Readout displacement [m]: weighted mode sum plus background noise.
    pub samples: Vec<f64>,
    /// Feedback force actually applied [N], if recorded.
    pub force: Option<Vec<f64>>,
    /// [Hz]
    pub sample_rate: f64,
    /// [s]
    pub start_time: f64,
    pub units: UnitSystem,
    pub seed: u64,
}

impl Trajectory {
    pub fn new(samples: Vec<f64>, sample_rate: f64, units: UnitSystem) -> Result<Self> {
        require_positive("sample_rate", sample_rate)?;
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(domain("samples", "must be finite"));
        }
        Ok(Self { samples, force: None, sample_rate, start_time: 0.0, units, seed: 0 })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time(&self, index: usize) -> f64 {
        self.start_time + index as f64 / self.sample_rate
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.time(i)).collect()
    }

    /// Sub-trajectory covering `[from, to)` in absolute time.
    pub fn window(&self, from: f64, to: f64) -> Trajectory {
        let index = |t: f64| (((t - self.start_time) * self.sample_rate).ceil().max(0.0) as usize).min(self.len());
        let (a, b) = (index(from), index(to).max(index(from)));
        Trajectory {
            samples: self.samples[a..b].to_vec(),
            force: self.force.as_ref().map(|f| f[a..b].to_vec()),
            sample_rate: self.sample_rate,
            start_time: self.time(a),
            units: self.units,
            seed: self.seed,
        }
    }

    /// Mean square about the sample mean.
    pub fn variance(&self) -> f64 {
        let n = self.len() as f64;
        let mean = self.samples.iter().sum::<f64>() / n;
        self.samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
    }
}

/// Discretized dynamics for one (loop, drive) combination.
struct Phase {
    phi: DMatrix<f64>,
    /// Per noise input: factor of its increment covariance.
    noise: Vec<DMatrix<f64>>,
    /// Held-force response (sampled loop only).
    hold: Option<DVector<f64>>,
    /// Steady drive response `Re(Z e^{iωt})`, scaled state.
    drive: Option<DVector<Complex64>>,
    loop_on: bool,
}

#[derive(Clone, Copy)]
struct SwitchAt {
    step: usize,
    kind: SwitchKind,
}

/// A validated configuration with its discretizations precomputed; runs
/// with different seeds share it.
pub struct Simulator {
    config: SimConfig,
    model: Model,
    phases: Vec<Option<Phase>>,
    initial_factor: DMatrix<f64>,
    events: Vec<SwitchAt>,
    start: (bool, bool),
    step: f64,
}

fn phase_index(loop_on: bool, drive_on: bool) -> usize {
    loop_on as usize * 2 + drive_on as usize
}

impl Simulator {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::build(&config);
        let has_loop = !config.feedback.gain.is_open_loop();
        let sampled = config.feedback.sensing == Sensing::FiniteDifference;
        let step = model.omega_ref / config.sample_rate;

        let has_drive = config.drive.is_some();
        let start = (
            has_loop && config.starts_with(SwitchKind::LoopOn, SwitchKind::LoopOff, true),
            has_drive && config.starts_with(SwitchKind::DriveOn, SwitchKind::DriveOff, true),
        );
        let n = config.samples();
        let events: Vec<SwitchAt> = config
            .schedule
            .iter()
            .map(|e| SwitchAt { step: (e.time * config.sample_rate).round() as usize, kind: e.kind })
            .filter(|e| e.step < n)
            .collect();

        // which phases can occur
        let mut needed = [false; 4];
        let (mut l, mut d) = start;
        needed[phase_index(l, d)] = true;
        for e in &events {
            match e.kind {
                SwitchKind::LoopOn => l = has_loop,
                SwitchKind::LoopOff => l = false,
                SwitchKind::DriveOn => d = has_drive,
                SwitchKind::DriveOff => d = false,
            }
            needed[phase_index(l, d)] = true;
        }

        if has_loop && !sampled && (needed[2] || needed[3]) && !is_asymptotically_stable(&model.a_closed) {
            return Err(Error::Unstable(format!(
                "closed loop with g = {} and phase {} rad has a non-decaying mode",
                config.feedback.gain.value(),
                config.feedback.phase
            )));
        }

        let all_noise = model.intensity(0..model.noise.len());
        let mut phases: Vec<Option<Phase>> = (0..4).map(|_| None).collect();
        for (index, slot) in phases.iter_mut().enumerate() {
            if !needed[index] {
                continue;
            }
            let (loop_on, drive_on) = (index >= 2, index % 2 == 1);
            let a = if loop_on && !sampled { &model.a_closed } else { &model.a_open };
            let (phi, _) = van_loan(a, &DMatrix::zeros(model.dim, model.dim), step);
            let noise = (0..model.noise.len())
                .map(|j| covariance_factor(&van_loan(a, &model.intensity(std::iter::once(j)), step).1))
                .collect();
            let hold = sampled.then(|| zero_order_hold(a, &model.force_input, step).1);
            let drive = match (drive_on, &config.drive) {
                (true, Some(dr)) => Some(harmonic_response(
                    a,
                    &model.force_input,
                    dr.omega / model.omega_ref,
                    Complex64::from_polar(dr.amplitude, dr.phase),
                )?),
                _ => None,
            };
            *slot = Some(Phase { phi, noise, hold, drive, loop_on });
        }

        let initial_factor = match config.initial {
            InitialState::Equilibrium if all_noise.iter().any(|&v| v != 0.0) => {
                let a = if start.0 { &model.a_closed } else { &model.a_open };
                covariance_factor(&lyapunov(a, &all_noise)?)
            }
            _ => DMatrix::zeros(model.dim, 0),
        };

        Ok(Self { config, model, phases, initial_factor, events, start, step })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn run(&self) -> Result<Trajectory> {
        self.run_with_seed(self.config.seed)
    }

    pub fn run_with_seed(&self, seed: u64) -> Result<Trajectory> {
        let cfg = &self.config;
        let model = &self.model;
        let n = cfg.samples();
        let dim = model.dim;
        let sampled = cfg.feedback.sensing == Sensing::FiniteDifference;
        let mut rngs: Vec<ChaCha8Rng> = model.noise.iter().map(|s| s.source.rng(seed)).collect();
        let mut electronic_rng = Source::Electronic.rng(seed);

        let (mut loop_on, mut drive_on) = self.start;
        let mut phase = self.phase(loop_on, drive_on);
        let drive_at = |phase: &Phase, k: usize| -> Option<DVector<f64>> {
            let z = phase.drive.as_ref()?;
            let rot = Complex64::from_polar(
                1.0,
                cfg.drive.as_ref().map_or(0.0, |d| d.omega / model.omega_ref) * k as f64 * self.step,
            );
            Some(z.map(|c| (c * rot).re))
        };

        let mut z = DVector::zeros(dim);
        match cfg.initial {
            InitialState::Equilibrium => {
                let mut rng = Source::InitialState.rng(seed);
                let xi = DVector::from_fn(self.initial_factor.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
                z = &self.initial_factor * xi;
                if let Some(p) = drive_at(phase, 0) {
                    z += p;
                }
            }
            InitialState::Rest => {}
            InitialState::Displaced { displacement, velocity } => {
                let o = model.mode_offsets[cfg.resonant_mode];
                z[o] = displacement;
                z[o + 1] = velocity / model.omega_ref;
            }
        }

        let capacity = n.div_ceil(cfg.decimation);
        let mut samples = Vec::with_capacity(capacity);
        let mut forces = cfg.record_force.then(|| Vec::with_capacity(capacity));

        // sampled-loop state
        let resonant = *cfg.resonant();
        let strength =
            resonant.mass() * resonant.gamma() * cfg.feedback.gain.value() * cfg.feedback.actuator_efficiency;
        let electronic_sigma = (cfg.feedback.s_e * cfg.sample_rate).sqrt();
        let mut biquad = match (sampled, cfg.feedback.bandpass) {
            (true, Some(bp)) => Some(bp.discretize(cfg.sample_rate)?),
            _ => None,
        };
        let mut delay_line = std::collections::VecDeque::from(vec![0.0; cfg.feedback.delay_samples]);
        let mut previous: Option<f64> = None;
        let (cos, sin) = (cfg.feedback.phase.cos(), cfg.feedback.phase.sin());

        let mut next_event = 0;
        let mut scratch = DVector::zeros(dim);
        for k in 0..n {
            let mut changed = false;
            while next_event < self.events.len() && self.events[next_event].step == k {
                match self.events[next_event].kind {
                    SwitchKind::LoopOn => loop_on = !cfg.feedback.gain.is_open_loop(),
                    SwitchKind::LoopOff => loop_on = false,
                    SwitchKind::DriveOn => drive_on = cfg.drive.is_some(),
                    SwitchKind::DriveOff => drive_on = false,
                }
                changed = true;
                next_event += 1;
            }
            if changed {
                phase = self.phase(loop_on, drive_on);
            }

            let mut held_force = 0.0;
            if sampled {
                let measured = model.readout.dot(&z)
                    + if electronic_sigma > 0.0 {
                        electronic_sigma * electronic_rng.sample::<f64, _>(StandardNormal)
                    } else {
                        0.0
                    };
                let before = previous.unwrap_or(measured - model.readout_rate.dot(&z) * self.step);
                previous = Some(measured);
                let rate = (measured - before) * cfg.sample_rate;
                let mut signal = cos * rate + sin * model.omega_ref * measured;
                if let Some(b) = biquad.as_mut() {
                    signal = b.process(signal);
                }
                delay_line.push_back(signal);
                let delayed = delay_line.pop_front().unwrap_or(0.0);
                if phase.loop_on {
                    held_force = -strength * delayed;
                }
            }

            if k % cfg.decimation == 0 {
                samples.push(model.readout.dot(&z));
                if let Some(f) = forces.as_mut() {
                    f.push(if sampled {
                        held_force
                    } else if phase.loop_on {
                        model.force_row.dot(&z)
                    } else {
                        0.0
                    });
                }
            }
            if k + 1 == n {
                break;
            }

            let steady_now = drive_at(phase, k);
            if let Some(p) = &steady_now {
                z -= p;
            }
            scratch.gemv(1.0, &phase.phi, &z, 0.0);
            std::mem::swap(&mut z, &mut scratch);
            if steady_now.is_some() {
                if let Some(p) = drive_at(phase, k + 1) {
                    z += p;
                }
            }
            if let Some(hold) = &phase.hold {
                if held_force != 0.0 {
                    z.axpy(held_force, hold, 1.0);
                }
            }
            for (factor, rng) in phase.noise.iter().zip(rngs.iter_mut()) {
                for c in 0..factor.ncols() {
                    let xi: f64 = rng.sample(StandardNormal);
                    z.axpy(xi, &factor.column(c), 1.0);
                }
            }
        }

        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::Unstable("simulated displacement diverged".into()));
        }
        Ok(Trajectory {
            samples,
            force: forces,
            sample_rate: cfg.sample_rate / cfg.decimation as f64,
            start_time: 0.0,
            units: cfg.units(),
            seed,
        })
    }

    fn phase(&self, loop_on: bool, drive_on: bool) -> &Phase {
        self.phases[phase_index(loop_on, drive_on)].as_ref().expect("every reachable phase is discretized")
    }

    /// Runs `runs` members with seeds derived from the configured seed, in
    /// parallel, and maps each trajectory through `reduce`. Results keep the
    /// member order.
    pub fn ensemble<T, F>(&self, runs: usize, reduce: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize, Trajectory) -> T + Sync,
    {
        (0..runs)
            .into_par_iter()
            .map(|i| {
                let trajectory = self.run_with_seed(member_seed(self.config.seed, i as u64))?;
                Ok(reduce(i, trajectory))
            })
            .collect()
    }
}

/// Simulates `config` once with its own seed.
pub fn run(config: &SimConfig) -> Result<Trajectory> {
    Simulator::new(config.clone())?.run()
}
