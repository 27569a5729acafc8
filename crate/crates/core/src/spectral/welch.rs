//! Averaged-periodogram (Welch) PSD estimate.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::sim::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    #[default]
    Hann,
    Rectangular,
}

impl Window {
    /// Periodic window of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            Window::Hann => (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchSettings {
    pub segment_length: usize,
    pub overlap: f64,
    pub window: Window,
}

impl WelchSettings {
    /// Hann window, 50% overlap.
    pub fn new(segment_length: usize) -> Self {
        Self { segment_length, overlap: 0.5, window: Window::Hann }
    }
}

/// One-sided PSD on a uniform frequency grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    /// [Hz], strictly increasing.
    pub frequencies: Vec<f64>,
    /// [m²/Hz]
    pub psd: Vec<f64>,
    /// Noise-equivalent bandwidth of one bin [Hz].
    pub resolution_bandwidth: f64,
    /// Number of averaged segments.
    pub averages: usize,
    pub window: Window,
    pub overlap: f64,
    pub segment_length: usize,
}

impl Spectrum {
    /// Wraps an externally computed spectrum.
    pub fn from_values(frequencies: Vec<f64>, psd: Vec<f64>, averages: usize) -> Result<Self> {
        if frequencies.len() != psd.len() || frequencies.len() < 2 {
            return Err(domain("spectrum", "need matching frequency and psd arrays of length >= 2"));
        }
        if !frequencies.windows(2).all(|w| w[1] > w[0]) {
            return Err(domain("frequencies", "must be strictly increasing"));
        }
        if psd.iter().any(|p| !p.is_finite()) {
            return Err(domain("psd", "must be finite"));
        }
        let spacing = (frequencies[frequencies.len() - 1] - frequencies[0]) / (frequencies.len() - 1) as f64;
        Ok(Self {
            frequencies,
            psd,
            resolution_bandwidth: spacing,
            averages: averages.max(1),
            window: Window::Rectangular,
            overlap: 0.0,
            segment_length: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    /// Bin spacing [Hz].
    pub fn spacing(&self) -> f64 {
        self.frequencies[1] - self.frequencies[0]
    }

    /// Bins with `lo ≤ f ≤ hi`.
    pub fn band(&self, lo: f64, hi: f64) -> Spectrum {
        let keep: Vec<usize> =
            (0..self.len()).filter(|&i| self.frequencies[i] >= lo && self.frequencies[i] <= hi).collect();
        Spectrum {
            frequencies: keep.iter().map(|&i| self.frequencies[i]).collect(),
            psd: keep.iter().map(|&i| self.psd[i]).collect(),
            ..self.clone()
        }
    }

    /// Rectangle-rule integral over `[lo, hi]` [m²].
    pub fn integrate(&self, lo: f64, hi: f64) -> f64 {
        let df = self.spacing();
        self.frequencies.iter().zip(&self.psd).filter(|(f, _)| **f >= lo && **f <= hi).map(|(_, p)| p * df).sum()
    }

    /// Total power `Σ psd·Δf` [m²].
    pub fn total_power(&self) -> f64 {
        self.psd.iter().sum::<f64>() * self.spacing()
    }

    /// Mean PSD over bins within `half_width` of `frequency`.
    pub fn average_near(&self, frequency: f64, half_width: f64) -> Result<f64> {
        let values: Vec<f64> = self
            .frequencies
            .iter()
            .zip(&self.psd)
            .filter(|(f, _)| (**f - frequency).abs() <= half_width)
            .map(|(_, p)| *p)
            .collect();
        if values.is_empty() {
            return Err(domain("frequency", format!("no bins within {half_width} Hz of {frequency} Hz")));
        }
        Ok(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Welch estimate of the one-sided displacement PSD of `traj`.
pub fn welch_psd(traj: &Trajectory, settings: &WelchSettings) -> Result<Spectrum> {
    welch_psd_of(&traj.samples, traj.sample_rate, settings)
}

pub fn welch_psd_of(samples: &[f64], sample_rate: f64, settings: &WelchSettings) -> Result<Spectrum> {
    let n = settings.segment_length;
    if n < 4 {
        return Err(domain("segment_length", "must be at least 4"));
    }
    if !(0.0..=0.9).contains(&settings.overlap) {
        return Err(domain("overlap", "must lie in [0, 0.9]"));
    }
    if samples.len() < n {
        return Err(Error::TooShort { required: n, actual: samples.len() });
    }
    let step = ((n as f64 * (1.0 - settings.overlap)).round() as usize).max(1);
    let window = settings.window.coefficients(n);
    let power: f64 = window.iter().map(|w| w * w).sum();
    let sum: f64 = window.iter().sum();

    let fft = FftPlanner::new().plan_fft_forward(n);
    let bins = n / 2 + 1;
    let mut acc = vec![0.0; bins];
    let mut buffer = vec![Complex64::new(0.0, 0.0); n];
    let mut segments = 0;
    let mut start = 0;
    while start + n <= samples.len() {
        let segment = &samples[start..start + n];
        let mean = segment.iter().sum::<f64>() / n as f64;
        for (b, (x, w)) in buffer.iter_mut().zip(segment.iter().zip(&window)) {
            *b = Complex64::new((x - mean) * w, 0.0);
        }
        fft.process(&mut buffer);
        for (a, b) in acc.iter_mut().zip(&buffer) {
            *a += b.norm_sqr();
        }
        segments += 1;
        start += step;
    }
    let scale = 1.0 / (sample_rate * power * segments as f64);
    let psd = acc
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let edge = k == 0 || (n.is_multiple_of(2) && k == n / 2);
            a * scale * if edge { 1.0 } else { 2.0 }
        })
        .collect();
    Ok(Spectrum {
        frequencies: (0..bins).map(|k| k as f64 * sample_rate / n as f64).collect(),
        psd,
        resolution_bandwidth: sample_rate * power / (sum * sum),
        averages: segments,
        window: settings.window,
        overlap: settings.overlap,
        segment_length: n,
    })
}
