//! Lorentzian-plus-background fit of a resonance in a one-sided PSD.
//!
//! Model: `L(f) = B + P · (w f_c)² / ((f_c² − f²)² + w² f²)`, the shape of a
//! viscously damped mode's thermal spectrum, with `w` the damping rate in Hz
//! (FWHM of the peak). `P` is the peak height above the background and may
//! be negative for a dip. The resonant area is `(π/2) P w`.
//!
//! An optional tilt `κ` replaces the numerator by
//! `(w f_c)² (1 + κ (f²/f_c² − 1))`, mixing in the velocity-weighted shape
//! that background noise fed through the loop imprints. Peak height and
//! area are unchanged by the tilt.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Spectrum;

/// Maximum Levenberg–Marquardt iterations per pass.
pub const MAX_ITERATIONS: usize = 200;
/// Relative parameter step below which the fit counts as converged.
pub const STEP_TOLERANCE: f64 = 1e-10;
/// Minimum span of the fitted band, in fitted widths.
pub const MIN_SPAN_WIDTHS: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LorentzianParams {
    /// [Hz]
    pub center: f64,
    /// [Hz]
    pub width: f64,
    /// [m²/Hz]
    pub peak: f64,
    /// [m²/Hz]
    pub background: f64,
    /// Numerator tilt, 0 for the plain shape.
    #[serde(default)]
    pub tilt: f64,
}

type Vector5 = SVector<f64, 5>;
type Matrix5 = SMatrix<f64, 5, 5>;

impl LorentzianParams {
    /// Untilted parameters.
    pub fn new(center: f64, width: f64, peak: f64, background: f64) -> Self {
        Self { center, width, peak, background, tilt: 0.0 }
    }

    pub fn evaluate(&self, f: f64) -> f64 {
        let (n, d) = self.parts(f);
        self.background + self.peak * n / d
    }

    pub fn area(&self) -> f64 {
        0.5 * std::f64::consts::PI * self.peak * self.width
    }

    fn parts(&self, f: f64) -> (f64, f64) {
        let (c, w, t) = (self.center, self.width, self.tilt);
        let detuning = c * c - f * f;
        let n = w * w * (c * c * (1.0 - t) + t * f * f);
        (n, detuning * detuning + (w * f).powi(2))
    }

    /// Gradient with respect to (center, width, peak, background, tilt).
    fn gradient(&self, f: f64) -> Vector5 {
        let (c, w, p, t) = (self.center, self.width, self.peak, self.tilt);
        let (n, d) = self.parts(f);
        let dn_dc = 2.0 * w * w * c * (1.0 - t);
        let dd_dc = 4.0 * c * (c * c - f * f);
        let dn_dw = 2.0 * n / w;
        let dd_dw = 2.0 * w * f * f;
        Vector5::new(
            p * (dn_dc * d - n * dd_dc) / (d * d),
            p * (dn_dw * d - n * dd_dw) / (d * d),
            n / d,
            1.0,
            p * w * w * (f * f - c * c) / d,
        )
    }

    fn to_vector(self) -> Vector5 {
        Vector5::new(self.center, self.width, self.peak, self.background, self.tilt)
    }

    fn from_vector(v: &Vector5) -> Self {
        Self { center: v[0], width: v[1], peak: v[2], background: v[3], tilt: v[4] }
    }
}

/// Result of [`fit_lorentzian`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorentzianFit {
    pub params: LorentzianParams,
    /// Standard errors of each parameter, scaled by the reduced chi-square.
    /// Zero for a parameter held fixed.
    pub errors: LorentzianParams,
    /// Resonant area (background excluded) [m²].
    pub area: f64,
    pub area_error: f64,
    pub reduced_chi_square: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl LorentzianFit {
    pub fn center(&self) -> f64 {
        self.params.center
    }

    pub fn width(&self) -> f64 {
        self.params.width
    }

    pub fn peak(&self) -> f64 {
        self.params.peak
    }

    pub fn background(&self) -> f64 {
        self.params.background
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Initial guess: extremum location, half-power width, median background of
/// the outer fifth of the band on each side.
pub fn initial_guess(spec: &Spectrum) -> Result<LorentzianParams> {
    let n = spec.len();
    if n < 8 {
        return Err(Error::TooShort { required: 8, actual: n });
    }
    let edge = (n / 5).max(2);
    let mut outer: Vec<f64> = spec.psd[..edge].iter().chain(&spec.psd[n - edge..]).copied().collect();
    let background = median(&mut outer);
    let spread = {
        let mut dev: Vec<f64> = outer.iter().map(|v| (v - background).abs()).collect();
        1.4826 * median(&mut dev)
    };

    let (imax, max) =
        spec.psd.iter().copied().enumerate().fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
    let (imin, min) =
        spec.psd.iter().copied().enumerate().fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
    let (index, extreme) = if max - background >= background - min { (imax, max) } else { (imin, min) };
    let height = extreme - background;
    if !(height.abs() > 6.0 * spread) || height == 0.0 {
        return Err(Error::NoPeak(format!(
            "largest excursion {height:e} does not stand out of the background scatter {spread:e}"
        )));
    }

    let half = background + 0.5 * height;
    let beyond = |i: usize| (spec.psd[i] - half) * height.signum() <= 0.0;
    let mut lo = index;
    while lo > 0 && !beyond(lo) {
        lo -= 1;
    }
    let mut hi = index;
    while hi + 1 < n && !beyond(hi) {
        hi += 1;
    }
    let df = spec.spacing();
    let width = (spec.frequencies[hi] - spec.frequencies[lo]).max(df);
    Ok(LorentzianParams {
        center: spec.frequencies[index],
        width,
        peak: height,
        background: background.max(0.0),
        tilt: 0.0,
    })
}

/// Weighted least-squares fit of the Lorentzian model to `spec`, with the
/// tilt held at its initial value (0 without `init`).
///
/// Weights are inverse variances `K / L²` for `K` averages: the first pass
/// uses the data as `L`, the second the first pass's model. A fit that does
/// not meet the step tolerance in [`MAX_ITERATIONS`] is returned with
/// `converged = false`.
pub fn fit_lorentzian(spec: &Spectrum, init: Option<LorentzianParams>) -> Result<LorentzianFit> {
    fit_with(spec, init, Shape::FixedTilt)
}

/// As [`fit_lorentzian`] with the tilt fitted too.
pub fn fit_tilted_lorentzian(spec: &Spectrum, init: Option<LorentzianParams>) -> Result<LorentzianFit> {
    fit_with(spec, init, Shape::FreeTilt)
}

/// Closed-loop resonance whose readout background `B` is also fed back
/// through the loop. The tilt is then not free:
/// `peak · width² · tilt = −B (width² − open_width²)`, with `open_width`
/// the width without feedback. Reported tilt errors are zero.
pub fn fit_loop_lorentzian(spec: &Spectrum, open_width: f64, init: Option<LorentzianParams>) -> Result<LorentzianFit> {
    if !(open_width.is_finite() && open_width > 0.0) {
        return Err(Error::Precondition(format!("open-loop width must be > 0, got {open_width}")));
    }
    fit_with(spec, init, Shape::LoopFed { open_width })
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    FixedTilt,
    FreeTilt,
    LoopFed { open_width: f64 },
}

impl Shape {
    fn free_tilt(self) -> bool {
        matches!(self, Shape::FreeTilt)
    }

    /// Parameters with the tilt set by the shape's constraint, if any.
    fn constrain(self, mut p: LorentzianParams) -> LorentzianParams {
        if let Shape::LoopFed { open_width } = self {
            let feed = p.background * (p.width * p.width - open_width * open_width);
            p.tilt = if p.peak != 0.0 { -feed / (p.peak * p.width * p.width) } else { 0.0 };
        }
        p
    }

    fn evaluate(self, p: &LorentzianParams, f: f64) -> f64 {
        match self {
            Shape::LoopFed { open_width } => {
                let (c, w) = (p.center, p.width);
                let detuning = c * c - f * f;
                let d = detuning * detuning + (w * f).powi(2);
                let n = p.peak * w * w * c * c + p.background * (w * w - open_width * open_width) * detuning;
                p.background + n / d
            }
            _ => p.evaluate(f),
        }
    }

    fn gradient(self, p: &LorentzianParams, f: f64) -> Vector5 {
        match self {
            Shape::LoopFed { open_width } => {
                let (c, w, pk, b) = (p.center, p.width, p.peak, p.background);
                let detuning = c * c - f * f;
                let d = detuning * detuning + (w * f).powi(2);
                let feed = w * w - open_width * open_width;
                let n = pk * w * w * c * c + b * feed * detuning;
                let dn_dc = 2.0 * pk * w * w * c + 2.0 * b * feed * c;
                let dd_dc = 4.0 * c * detuning;
                let dn_dw = 2.0 * pk * w * c * c + 2.0 * b * w * detuning;
                let dd_dw = 2.0 * w * f * f;
                Vector5::new(
                    (dn_dc * d - n * dd_dc) / (d * d),
                    (dn_dw * d - n * dd_dw) / (d * d),
                    w * w * c * c / d,
                    1.0 + feed * detuning / d,
                    0.0,
                )
            }
            _ => p.gradient(f),
        }
    }
}

fn fit_with(spec: &Spectrum, init: Option<LorentzianParams>, shape: Shape) -> Result<LorentzianFit> {
    let start = match init {
        Some(p) => p,
        None => initial_guess(spec)?,
    };
    check_span(spec, start.width)?;
    let floor = spec.psd.iter().fold(0.0f64, |a, &b| a.max(b.abs())) * 1e-12;
    let data_weights: Vec<f64> = spec.psd.iter().map(|&p| 1.0 / p.abs().max(floor).powi(2)).collect();
    let first = levenberg_marquardt(spec, start, &data_weights, shape)?;
    let model_weights: Vec<f64> =
        spec.frequencies.iter().map(|&f| 1.0 / shape.evaluate(&first.params, f).abs().max(floor).powi(2)).collect();
    let mut fit = levenberg_marquardt(spec, first.params, &model_weights, shape)?;
    fit.converged &= first.converged;
    fit.iterations += first.iterations;
    check_span(spec, fit.params.width)?;
    Ok(fit)
}

fn check_span(spec: &Spectrum, width: f64) -> Result<()> {
    let span = spec.frequencies[spec.len() - 1] - spec.frequencies[0];
    if span < MIN_SPAN_WIDTHS * width.abs() {
        return Err(Error::Precondition(format!(
            "fitted band spans {span} Hz, less than {MIN_SPAN_WIDTHS} widths of {width} Hz"
        )));
    }
    Ok(())
}

fn levenberg_marquardt(
    spec: &Spectrum,
    start: LorentzianParams,
    weights: &[f64],
    shape: Shape,
) -> Result<LorentzianFit> {
    let free_tilt = shape.free_tilt();
    let averages = spec.averages as f64;
    // normalized coordinates: centre and width in units of the start width,
    // heights in units of the start peak; a fixed tilt gets zero scale
    let tilt_scale = if free_tilt { 1.0 } else { 0.0 };
    let scale = Vector5::new(start.width, start.width, start.peak.abs(), start.peak.abs(), tilt_scale);
    let params_in_fit = if free_tilt { 5.0 } else { 4.0 };
    let chi2 = |p: &LorentzianParams| -> f64 {
        spec.frequencies
            .iter()
            .zip(&spec.psd)
            .zip(weights)
            .map(|((&f, &y), &w)| w * (y - shape.evaluate(p, f)).powi(2))
            .sum::<f64>()
            * averages
    };
    let normal_equations = |p: &LorentzianParams| -> (Matrix5, Vector5) {
        let mut jtj = Matrix5::zeros();
        let mut jtr = Vector5::zeros();
        for ((&f, &y), &w) in spec.frequencies.iter().zip(&spec.psd).zip(weights) {
            let g = shape.gradient(p, f).component_mul(&scale);
            let r = y - shape.evaluate(p, f);
            jtj += g * g.transpose() * (w * averages);
            jtr += g * (r * w * averages);
        }
        if !free_tilt {
            jtj[(4, 4)] = 1.0;
        }
        (jtj, jtr)
    };

    let mut params = shape.constrain(start);
    let mut current = chi2(&params);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let (jtj, jtr) = normal_equations(&params);
        let mut accepted = false;
        for _ in 0..60 {
            let mut damped = jtj;
            for i in 0..5 {
                damped[(i, i)] += lambda * jtj[(i, i)].max(1e-300);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial_vector = params.to_vector() + step.component_mul(&scale);
            trial_vector[3] = trial_vector[3].max(0.0);
            if trial_vector[1] <= 0.0 || trial_vector[0] <= 0.0 {
                lambda *= 10.0;
                continue;
            }
            let trial = shape.constrain(LorentzianParams::from_vector(&trial_vector));
            let value = chi2(&trial);
            if value <= current {
                let relative_step = (trial_vector - params.to_vector())
                    .zip_map(&scale, |d, s| if s > 0.0 { d / s } else { 0.0 })
                    .amax();
                params = trial;
                let settled = current - value <= 1e-15 * current;
                current = value;
                lambda = (lambda * 0.3).max(1e-12);
                accepted = true;
                if relative_step < STEP_TOLERANCE || (settled && relative_step < 1e-6) || current == 0.0 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if converged {
            break;
        }
        if !accepted {
            // no downhill step at any damping: at the minimum to working precision
            converged = true;
            break;
        }
    }

    let dof = (spec.len() as f64 - params_in_fit).max(1.0);
    let reduced = current / dof;
    let (jtj, _) = normal_equations(&params);
    let covariance = jtj
        .try_inverse()
        .map(|c| {
            let s = Matrix5::from_diagonal(&scale);
            s * c * s * reduced.max(f64::MIN_POSITIVE)
        })
        .ok_or_else(|| Error::Degenerate("singular fit normal matrix".into()))?;
    let err = |i: usize| covariance[(i, i)].max(0.0).sqrt();
    let half_pi = 0.5 * std::f64::consts::PI;
    let area_var = half_pi.powi(2)
        * (params.width.powi(2) * covariance[(2, 2)]
            + params.peak.powi(2) * covariance[(1, 1)]
            + 2.0 * params.peak * params.width * covariance[(1, 2)]);
    Ok(LorentzianFit {
        params,
        errors: LorentzianParams { center: err(0), width: err(1), peak: err(2), background: err(3), tilt: err(4) },
        area: params.area(),
        area_error: area_var.max(0.0).sqrt(),
        reduced_chi_square: reduced,
        iterations,
        converged,
    })
}

/// Samples the model on `frequencies` as a spectrum with `averages` averages.
pub fn model_spectrum(params: &LorentzianParams, frequencies: Vec<f64>, averages: usize) -> Result<Spectrum> {
    let psd = frequencies.iter().map(|&f| params.evaluate(f)).collect();
    Spectrum::from_values(frequencies, psd, averages)
}
