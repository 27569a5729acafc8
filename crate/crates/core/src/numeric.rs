//! Numerical integration helpers: adaptive Gauss–Kronrod and trapezoid rules.

#![allow(clippy::excessive_precision)]

use crate::error::{Error, Result};

// 15-point Kronrod abscissae (non-negative half) and weights, with the
// embedded 7-point Gauss weights on the odd-indexed nodes.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

const MAX_INTERVALS: usize = 20_000;

/// Result of an adaptive quadrature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub error_estimate: f64,
    pub evaluations: usize,
}

fn kronrod15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for (j, (&x, &w)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let dx = half * x;
        let pair = f(center - dx) + f(center + dx);
        kronrod += w * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Globally adaptive Gauss–Kronrod (7/15) quadrature of `f` over `[a, b]`.
///
/// Stops when the summed error estimate drops below
/// `max(abs_tol, rel_tol * |value|)`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> Result<Quadrature> {
    integrate_with_breaks(f, &[a, b], abs_tol, rel_tol)
}

/// Adaptive quadrature over consecutive sub-intervals delimited by `breaks`.
///
/// Placing breakpoints at sharp features (a resonance) lets the bisection
/// find them without relying on luck in the first sampling.
pub fn integrate_with_breaks<F: Fn(f64) -> f64>(
    f: F,
    breaks: &[f64],
    abs_tol: f64,
    rel_tol: f64,
) -> Result<Quadrature> {
    if breaks.len() < 2 || breaks.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Precondition("quadrature breakpoints must be strictly increasing".into()));
    }
    let mut intervals: Vec<(f64, f64, f64, f64)> = breaks
        .windows(2)
        .map(|w| {
            let (v, e) = kronrod15(&f, w[0], w[1]);
            (w[0], w[1], v, e)
        })
        .collect();
    let mut evaluations = 15 * intervals.len();
    loop {
        let value: f64 = intervals.iter().map(|iv| iv.2).sum();
        let error: f64 = intervals.iter().map(|iv| iv.3).sum();
        if !value.is_finite() {
            return Err(Error::Degenerate("integrand produced a non-finite value".into()));
        }
        if error <= abs_tol.max(rel_tol * value.abs()) {
            return Ok(Quadrature { value, error_estimate: error, evaluations });
        }
        if intervals.len() >= MAX_INTERVALS {
            return Err(Error::Degenerate(format!(
                "quadrature did not converge: error estimate {error:e} for value {value:e}"
            )));
        }
        let (worst, _) =
            intervals.iter().enumerate().max_by(|x, y| x.1 .3.total_cmp(&y.1 .3)).expect("at least one interval");
        let (a, b, _, _) = intervals.swap_remove(worst);
        let mid = 0.5 * (a + b);
        let (v1, e1) = kronrod15(&f, a, mid);
        let (v2, e2) = kronrod15(&f, mid, b);
        evaluations += 30;
        intervals.push((a, mid, v1, e1));
        intervals.push((mid, b, v2, e2));
    }
}

/// Integral of `f` over `[a, ∞)` using the map `x = a + t / (1 - t)`.
///
/// `breaks` are optional interior points in x-space (must exceed `a`).
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    interior: &[f64],
    abs_tol: f64,
    rel_tol: f64,
) -> Result<Quadrature> {
    let to_t = |x: f64| {
        let d = x - a;
        d / (1.0 + d)
    };
    let mut breaks = vec![0.0];
    breaks.extend(interior.iter().copied().filter(|&x| x > a).map(to_t));
    breaks.push(1.0);
    breaks.dedup();
    integrate_with_breaks(
        |t: f64| {
            if t >= 1.0 {
                return 0.0;
            }
            let one_minus = 1.0 - t;
            f(a + t / one_minus) / (one_minus * one_minus)
        },
        &breaks,
        abs_tol,
        rel_tol,
    )
}

/// Trapezoid rule over samples `y` at abscissae `x` (not necessarily uniform).
pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1])).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomials_are_exact() {
        let q = integrate(|x| 3.0 * x * x - x + 2.0, -1.0, 2.0, 1e-14, 1e-14).unwrap();
        // 9 - 1.5 + 6
        assert!((q.value - 13.5).abs() < 1e-12);
    }

    #[test]
    fn gaussian_tail_to_infinity() {
        let q = integrate_to_infinity(|x| (-x * x).exp(), 0.0, &[], 1e-14, 1e-12).unwrap();
        let expected = std::f64::consts::PI.sqrt() / 2.0;
        assert!((q.value - expected).abs() < 1e-11, "{}", q.value);
    }

    #[test]
    fn rational_tail() {
        // ∫_1^∞ dx / x² = 1
        let q = integrate_to_infinity(|x| 1.0 / (x * x), 1.0, &[], 1e-14, 1e-12).unwrap();
        assert!((q.value - 1.0).abs() < 1e-11);
    }

    #[test]
    fn bad_breaks_rejected() {
        assert!(integrate_with_breaks(|x| x, &[1.0, 1.0], 1e-9, 1e-9).is_err());
    }

    #[test]
    fn trapezoid_linear() {
        let x: Vec<f64> = (0..11).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        assert!((trapezoid(&x, &y) - 1.0).abs() < 1e-14);
    }
}
