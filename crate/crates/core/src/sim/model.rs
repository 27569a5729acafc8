//! Continuous-time state-space model assembled from a [`SimConfig`].
//!
//! Internally time is measured in units of `1/Ω_r` (Ω_r the resonance of the
//! mode the loop is tuned to) and velocity-like states are divided by `Ω_r`,
//! which keeps every matrix entry of order one in SI units.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::rng::Source;
use super::{Sensing, SimConfig};

const BUTTERWORTH_DAMPING: [f64; 2] = [0.382_683_432_365_089_8, 0.923_879_532_511_286_7];

/// A white-noise input: direction in (scaled) state space and intensity.
pub(crate) struct NoiseInput {
    pub source: Source,
    pub direction: DVector<f64>,
    pub intensity: f64,
}

pub(crate) struct Model {
    pub dim: usize,
    /// Open-loop dynamics, scaled.
    pub a_open: DMatrix<f64>,
    /// Dynamics with the continuous loop closed, scaled.
    pub a_closed: DMatrix<f64>,
    /// Feedback force [N] as a linear function of the scaled state.
    pub force_row: DVector<f64>,
    /// Readout displacement as a linear function of the scaled state.
    pub readout: DVector<f64>,
    /// Readout velocity in scaled units (multiply by Ω_r for m/s).
    pub readout_rate: DVector<f64>,
    /// Scaled state response to a unit external force at the readout point.
    pub force_input: DVector<f64>,
    pub noise: Vec<NoiseInput>,
    /// Ω_r [rad/s]
    pub omega_ref: f64,
    /// Offsets of the modes' position states.
    pub mode_offsets: Vec<usize>,
}

/// Indices of a 4-state Butterworth displacement process.
struct Shaper {
    offset: usize,
}

impl Shaper {
    fn output(&self) -> usize {
        self.offset + 2
    }

    fn output_rate(&self) -> usize {
        self.offset + 3
    }

    fn fill(&self, a: &mut DMatrix<f64>, cutoff: f64) {
        let o = self.offset;
        for (s, zeta) in BUTTERWORTH_DAMPING.iter().enumerate() {
            let (y, v) = (o + 2 * s, o + 2 * s + 1);
            a[(y, v)] = 1.0;
            a[(v, y)] = -cutoff * cutoff;
            a[(v, v)] = -2.0 * zeta * cutoff;
        }
        a[(o + 3, o)] = cutoff * cutoff;
    }

    /// White-noise input giving a PSD of `level` at `reference`.
    fn input(&self, dim: usize, cutoff: f64, level: f64, reference: f64, source: Source) -> NoiseInput {
        let mut direction = DVector::zeros(dim);
        direction[self.offset + 1] = cutoff * cutoff;
        NoiseInput { source, direction, intensity: level * (1.0 + (reference / cutoff).powi(8)) }
    }
}

/// Default corner of the noise shapers: half the Nyquist frequency [rad/s].
pub(crate) fn default_cutoff(sample_rate: f64) -> f64 {
    0.5 * PI * sample_rate
}

impl Model {
    pub fn build(config: &SimConfig) -> Model {
        let modes = config.modes.modes();
        let resonant = modes[config.resonant_mode].mode;
        let omega_ref = resonant.omega_m();
        let sampled = config.feedback.sensing == Sensing::FiniteDifference;
        let cutoff = config.noise_cutoff.unwrap_or_else(|| default_cutoff(config.sample_rate));

        let mut dim = 2 * modes.len();
        let next = |size: usize, dim: &mut usize| {
            let o = *dim;
            *dim += size;
            o
        };
        let background = (config.background_psd > 0.0).then(|| Shaper { offset: next(4, &mut dim) });
        let electronic = (!sampled && config.feedback.s_e > 0.0).then(|| Shaper { offset: next(4, &mut dim) });
        let bandpass = if sampled { None } else { config.feedback.bandpass.map(|bp| (next(2, &mut dim), bp)) };

        let mut a = DMatrix::zeros(dim, dim);
        let mut readout = DVector::zeros(dim);
        let mut readout_rate = DVector::zeros(dim);
        let mut force_input = DVector::zeros(dim);
        let mut noise = Vec::new();
        let mut mode_offsets = Vec::new();

        let mut seen: Vec<(u64, u32)> = Vec::new();
        for (n, wm) in modes.iter().enumerate() {
            let (x, v) = (2 * n, 2 * n + 1);
            mode_offsets.push(x);
            let m = &wm.mode;
            a[(x, v)] = 1.0;
            a[(v, x)] = -m.omega_m().powi(2);
            a[(v, v)] = -m.gamma();
            let coupling = wm.weight.sqrt();
            readout[x] = coupling;
            readout_rate[v] = coupling;
            force_input[v] = coupling / m.mass();
            if m.temperature() > 0.0 {
                let source = Source::thermal(m, 0);
                let key = source.stream();
                let occurrence = match seen.iter_mut().find(|(k, _)| *k == key) {
                    Some((_, count)) => {
                        *count += 1;
                        *count
                    }
                    None => {
                        seen.push((key, 0));
                        0
                    }
                };
                let mut direction = DVector::zeros(dim);
                direction[v] = 1.0;
                noise.push(NoiseInput {
                    source: Source::thermal(m, occurrence),
                    direction,
                    intensity: 2.0 * m.gamma() * m.thermal_energy() / m.mass(),
                });
            }
        }

        // the loop sees the readout plus the measurement noise processes
        let mut measured = readout.clone();
        let mut measured_rate = readout_rate.clone();
        if let Some(bg) = &background {
            bg.fill(&mut a, cutoff);
            readout[bg.output()] = 1.0;
            readout_rate[bg.output_rate()] = 1.0;
            measured[bg.output()] = 1.0;
            measured_rate[bg.output_rate()] = 1.0;
            noise.push(bg.input(dim, cutoff, config.background_psd, omega_ref, Source::Background));
        }
        if let Some(el) = &electronic {
            el.fill(&mut a, cutoff);
            measured[el.output()] = 1.0;
            measured_rate[el.output_rate()] = 1.0;
            noise.push(el.input(dim, cutoff, config.feedback.s_e, omega_ref, Source::Electronic));
        }

        let (cos, sin) = (config.feedback.phase.cos(), config.feedback.phase.sin());
        let loop_signal = &measured_rate * cos + &measured * (sin * omega_ref);
        let mut filtered = loop_signal.clone();
        if let Some((o, bp)) = bandpass {
            a[(o, o + 1)] = 1.0;
            a[(o + 1, o)] = -bp.center * bp.center;
            a[(o + 1, o + 1)] = -bp.bandwidth;
            for j in 0..dim {
                a[(o + 1, j)] += loop_signal[j];
            }
            filtered = DVector::zeros(dim);
            filtered[o + 1] = bp.bandwidth;
        }
        let strength =
            resonant.mass() * resonant.gamma() * config.feedback.gain.value() * config.feedback.actuator_efficiency;
        let force_row = filtered * -strength;
        let a_closed = &a + &force_input * force_row.transpose();

        // scale: positions unchanged, rates divided by Ω_r, time in 1/Ω_r
        let rate_states: Vec<bool> =
            (0..dim).map(|i| is_rate_state(i, &background, &electronic, bandpass.map(|b| b.0), modes.len())).collect();
        let s: Vec<f64> = rate_states.iter().map(|&r| if r { 1.0 / omega_ref } else { 1.0 }).collect();
        let scale_matrix = |m: &DMatrix<f64>| DMatrix::from_fn(dim, dim, |i, j| s[i] * m[(i, j)] / s[j] / omega_ref);
        let scale_vector = |v: &DVector<f64>| DVector::from_fn(dim, |i, _| v[i] * s[i]);
        let unscale_row = |v: &DVector<f64>| DVector::from_fn(dim, |i, _| v[i] / s[i]);
        for input in &mut noise {
            input.direction = scale_vector(&input.direction);
            input.intensity /= omega_ref;
        }
        Model {
            dim,
            a_open: scale_matrix(&a),
            a_closed: scale_matrix(&a_closed),
            force_row: unscale_row(&force_row),
            readout: unscale_row(&readout),
            readout_rate: unscale_row(&readout_rate) * (1.0 / omega_ref),
            force_input: scale_vector(&force_input) / omega_ref,
            noise,
            omega_ref,
            mode_offsets,
        }
    }

    /// Continuous noise intensity matrix `Σ q_j g_j g_jᵀ` of the listed inputs.
    pub fn intensity(&self, inputs: impl Iterator<Item = usize>) -> DMatrix<f64> {
        let mut q = DMatrix::zeros(self.dim, self.dim);
        for j in inputs {
            let n = &self.noise[j];
            q += &n.direction * n.direction.transpose() * n.intensity;
        }
        q
    }
}

fn is_rate_state(i: usize, bg: &Option<Shaper>, el: &Option<Shaper>, bp: Option<usize>, modes: usize) -> bool {
    if i < 2 * modes {
        return i % 2 == 1;
    }
    for shaper in [bg, el].into_iter().flatten() {
        if (shaper.offset..shaper.offset + 4).contains(&i) {
            return (i - shaper.offset) % 2 == 1;
        }
    }
    matches!(bp, Some(o) if i == o + 1)
}
