//! Second-order bandpass of the feedback loop, `H(s) = Bs / (s² + Bs + ω₀²)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::constants::UnitSystem;
use crate::error::{domain, require_positive, Result};
use crate::monomode::OscillatorMode;

/// Bandwidth of the loop filter in the experiment [Hz].
pub const EXPERIMENT_BANDWIDTH_HZ: f64 = 10e3;
/// Mechanical linewidth the experiment's filter was sized against [Hz].
const EXPERIMENT_LINEWIDTH_HZ: f64 = 43.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bandpass {
    /// ω₀ [rad/s]
    pub center: f64,
    /// B [rad/s], full width between the −3 dB points.
    pub bandwidth: f64,
}

impl Bandpass {
    pub fn new(center: f64, bandwidth: f64) -> Result<Self> {
        Ok(Self { center: require_positive("center", center)?, bandwidth: require_positive("bandwidth", bandwidth)? })
    }

    /// Filter centred on the mode: 2π×10 kHz wide in SI units, and the same
    /// bandwidth-to-linewidth ratio in natural units.
    pub fn centered_on(mode: &OscillatorMode) -> Self {
        let bandwidth = match mode.units() {
            UnitSystem::Si => 2.0 * PI * EXPERIMENT_BANDWIDTH_HZ,
            UnitSystem::Natural => mode.gamma() * EXPERIMENT_BANDWIDTH_HZ / EXPERIMENT_LINEWIDTH_HZ,
        };
        Self { center: mode.omega_m(), bandwidth }
    }

    /// Continuous-time transfer function at `omega`.
    pub fn response(&self, omega: f64) -> Complex64 {
        let s = Complex64::new(0.0, omega);
        self.bandwidth * s / (s * s + self.bandwidth * s + self.center * self.center)
    }

    /// Bilinear-transform biquad prewarped so that the response at the centre
    /// is exactly one.
    pub fn discretize(&self, sample_rate: f64) -> Result<Biquad> {
        let h = 1.0 / require_positive("sample_rate", sample_rate)?;
        if self.center * h >= PI {
            return Err(domain("center", "bandpass centre must lie below the Nyquist frequency"));
        }
        let k = self.center / (0.5 * self.center * h).tan();
        let (w2, bk) = (self.center * self.center, self.bandwidth * k);
        let a0 = k * k + bk + w2;
        Ok(Biquad {
            b: [bk / a0, 0.0, -bk / a0],
            a: [2.0 * (w2 - k * k) / a0, (k * k - bk + w2) / a0],
            state: [0.0; 2],
        })
    }
}

/// Direct-form II transposed biquad.
#[derive(Debug, Clone, PartialEq)]
pub struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
    state: [f64; 2],
}

impl Biquad {
    pub fn process(&mut self, x: f64) -> f64 {
        let y = self.b[0] * x + self.state[0];
        self.state[0] = self.b[1] * x - self.a[0] * y + self.state[1];
        self.state[1] = self.b[2] * x - self.a[1] * y;
        y
    }

    pub fn reset(&mut self) {
        self.state = [0.0; 2];
    }

    /// Frequency response at `omega` for sampling interval `1/sample_rate`.
    pub fn response(&self, omega: f64, sample_rate: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -omega / sample_rate);
        let z2 = z1 * z1;
        (self.b[0] + self.b[1] * z1 + self.b[2] * z2) / (1.0 + self.a[0] * z1 + self.a[1] * z2)
    }
}

/// Runs `signal`, sampled at `sample_rate`, through the loop filter.
pub fn apply_loop_bandpass(filter: &Bandpass, signal: &[f64], sample_rate: f64) -> Result<Vec<f64>> {
    let mut biquad = filter.discretize(sample_rate)?;
    Ok(signal.iter().map(|&x| biquad.process(x)).collect())
}
