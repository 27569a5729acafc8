//! Single-exponential relaxation fit `y = a + b e^{−t/τ}`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Relaxation {
    /// Asymptote `a`.
    pub offset: f64,
    /// `b`, the excursion at `t = 0`.
    pub amplitude: f64,
    /// `τ`, same unit as the time axis.
    pub tau: f64,
    pub rms_residual: f64,
}

impl Relaxation {
    pub fn evaluate(&self, t: f64) -> f64 {
        self.offset + self.amplitude * (-t / self.tau).exp()
    }
}

/// Least-squares `(a, b, SSE)` for a fixed `τ`.
fn linear_part(t: &[f64], y: &[f64], tau: f64) -> (f64, f64, f64) {
    let n = t.len() as f64;
    let e: Vec<f64> = t.iter().map(|&ti| (-ti / tau).exp()).collect();
    let (se, see, sy, sey) = e
        .iter()
        .zip(y)
        .fold((0.0, 0.0, 0.0, 0.0), |(a, b, c, d), (&ei, &yi)| (a + ei, b + ei * ei, c + yi, d + ei * yi));
    let det = n * see - se * se;
    let (a, b) =
        if det.abs() > 1e-300 { ((see * sy - se * sey) / det, (n * sey - se * sy) / det) } else { (sy / n, 0.0) };
    let sse = e.iter().zip(y).map(|(&ei, &yi)| (yi - a - b * ei).powi(2)).sum();
    (a, b, sse)
}

/// Fits `y(t) = a + b e^{−t/τ}`. `τ` is found by a log-spaced scan
/// followed by golden-section refinement; `a`, `b` are solved linearly.
pub fn fit_relaxation(t: &[f64], y: &[f64]) -> Result<Relaxation> {
    if t.len() != y.len() {
        return Err(domain("samples", "time and value arrays differ in length"));
    }
    if t.len() < 4 {
        return Err(Error::TooShort { required: 4, actual: t.len() });
    }
    if t.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(domain("samples", "must be finite"));
    }
    // shift the time origin to the first sample for conditioning
    let t0 = t[0];
    let ts: Vec<f64> = t.iter().map(|&v| v - t0).collect();
    let span = ts.iter().fold(0.0f64, |a, &b| a.max(b));
    let step = ts.windows(2).map(|w| (w[1] - w[0]).abs()).filter(|d| *d > 0.0).fold(f64::INFINITY, f64::min);
    if !(span > 0.0) || !step.is_finite() {
        return Err(domain("t", "needs at least two distinct times"));
    }

    let cost = |log_tau: f64| linear_part(&ts, y, log_tau.exp()).2;
    let (lo, hi) = ((0.1 * step).ln(), (100.0 * span).ln());
    let scan = 400;
    let points: Vec<f64> = (0..=scan).map(|i| lo + (hi - lo) * i as f64 / scan as f64).collect();
    let best = (0..=scan).min_by(|&i, &j| cost(points[i]).total_cmp(&cost(points[j]))).unwrap();
    let (mut a, mut b) = (points[best.saturating_sub(1)], points[(best + 1).min(scan)]);
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (cost(c), cost(d));
    for _ in 0..200 {
        if (b - a).abs() < 1e-13 {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = cost(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = cost(d);
        }
    }
    let tau = (0.5 * (a + b)).exp();
    let (offset, amplitude, sse) = linear_part(&ts, y, tau);
    Ok(Relaxation {
        offset,
        // refer the amplitude back to the caller's time origin
        amplitude: amplitude * (t0 / tau).exp(),
        tau,
        rms_residual: (sse / ts.len() as f64).sqrt(),
    })
}
