//! Spectrum-analyzer zero-span mode: band power around a fixed centre
//! frequency versus time.
//!
//! The signal is mixed to baseband, lowpassed by a fourth-order Butterworth
//! whose noise-equivalent bandwidth is `rbw`, square-law detected and
//! smoothed by a first-order detector filter.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{domain, require_positive, Result};
use crate::sim::Trajectory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroSpanTrace {
    /// [s]
    pub times: Vec<f64>,
    /// Band power [m²].
    pub power: Vec<f64>,
    /// [Hz]
    pub center: f64,
    /// Noise-equivalent resolution bandwidth [Hz].
    pub resolution_bandwidth: f64,
    /// [s]
    pub detector_tau: f64,
}

impl ZeroSpanTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Mean power over `[from, to)`.
    pub fn mean_between(&self, from: f64, to: f64) -> Option<f64> {
        let values: Vec<f64> =
            self.times.iter().zip(&self.power).filter(|(t, _)| **t >= from && **t < to).map(|(_, p)| *p).collect();
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Noise-equivalent bandwidth of a 4th-order Butterworth lowpass relative
/// to its corner, `(π/8) / sin(π/8)`.
const BUTTERWORTH4_ENBW: f64 = 1.026_172_152_977_031;
const SECTION_DAMPING: [f64; 2] = [0.382_683_432_365_089_8, 0.923_879_532_511_286_7];

/// Bilinear second-order lowpass section, prewarped at the corner.
#[derive(Clone)]
struct Lowpass {
    b: [f64; 3],
    a: [f64; 2],
    state: [Complex64; 2],
}

impl Lowpass {
    fn new(corner: f64, zeta: f64, sample_rate: f64) -> Self {
        let k = corner / (corner / (2.0 * sample_rate)).tan();
        let w2 = corner * corner;
        let a0 = k * k + 2.0 * zeta * corner * k + w2;
        Self {
            b: [w2 / a0, 2.0 * w2 / a0, w2 / a0],
            a: [2.0 * (w2 - k * k) / a0, (k * k - 2.0 * zeta * corner * k + w2) / a0],
            state: [Complex64::new(0.0, 0.0); 2],
        }
    }

    fn process(&mut self, x: Complex64) -> Complex64 {
        let y = x * self.b[0] + self.state[0];
        self.state[0] = x * self.b[1] - y * self.a[0] + self.state[1];
        self.state[1] = x * self.b[2] - y * self.a[1];
        y
    }
}

/// Zero-span trace of `traj` at `center` [Hz].
pub fn zero_span(traj: &Trajectory, center: f64, rbw: f64, detector_tau: f64) -> Result<ZeroSpanTrace> {
    let fs = traj.sample_rate;
    require_positive("center", center)?;
    require_positive("rbw", rbw)?;
    if !(detector_tau.is_finite() && detector_tau >= 0.0) {
        return Err(domain("detector_tau", "must be finite and >= 0"));
    }
    if center + rbw >= 0.5 * fs {
        return Err(domain("center", "band must lie below the Nyquist frequency"));
    }
    let corner = 2.0 * PI * 0.5 * rbw / BUTTERWORTH4_ENBW;
    let mut sections: Vec<Lowpass> = SECTION_DAMPING.iter().map(|&z| Lowpass::new(corner, z, fs)).collect();
    let alpha = if detector_tau > 0.0 { 1.0 - (-1.0 / (fs * detector_tau)).exp() } else { 1.0 };

    let mut power = Vec::with_capacity(traj.len());
    let mut detector = 0.0;
    for (i, &x) in traj.samples.iter().enumerate() {
        let mut z = Complex64::from_polar(x, -2.0 * PI * center * traj.time(i));
        for s in &mut sections {
            z = s.process(z);
        }
        let p = 2.0 * z.norm_sqr();
        detector = if i == 0 { p } else { detector + alpha * (p - detector) };
        power.push(detector);
    }
    Ok(ZeroSpanTrace { times: traj.times(), power, center, resolution_bandwidth: rbw, detector_tau })
}
