//! Departures from the ideal single-mode picture: flat background thermal
//! noise, a sum of acoustic modes seen through the optical overlap, and
//! electronic noise injected by the feedback loop.
//!
//! PSDs follow the two-sided angular-frequency convention of
//! [`crate::monomode`].

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{domain, require_non_negative, require_positive, Error, Result};
use crate::monomode::{
    closed_loop_psd, closed_loop_susceptibility, noise_reduction, susceptibility, thermal_psd, DampingModel,
    FeedbackGain, OscillatorMode,
};

/// Flat noise floors around the resonance.
///
/// `s_b` is the stored quantity; the ratio `ε_b` is always derived from it
/// through the resonant mode, since `s_b` does not depend on the gain.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseEnvironment {
    /// Background displacement PSD [m²/(rad/s)].
    pub s_b: f64,
    /// Electronic noise of the loop, referred to displacement [m²/(rad/s)].
    pub s_e: f64,
}

impl NoiseEnvironment {
    pub fn new(s_b: f64, s_e: f64) -> Result<Self> {
        Ok(Self { s_b: require_non_negative("s_b", s_b)?, s_e: require_non_negative("s_e", s_e)? })
    }

    /// Builds the floors from ratios to the open-loop peak `S_x^T[Ω_M]`.
    pub fn from_ratios(mode: &OscillatorMode, epsilon_b: f64, se_ratio: f64) -> Result<Self> {
        let peak = resonant_peak(mode);
        Self::new(
            require_non_negative("epsilon_b", epsilon_b)? * peak,
            require_non_negative("se_ratio", se_ratio)? * peak,
        )
    }

    /// `ε_b = S_b / S_x^T[Ω_M]`.
    pub fn epsilon_b(&self, mode: &OscillatorMode) -> f64 {
        self.s_b / resonant_peak(mode)
    }

    /// `S_e / S_x^T[Ω_M]`.
    pub fn se_ratio(&self, mode: &OscillatorMode) -> f64 {
        self.s_e / resonant_peak(mode)
    }
}

/// Open-loop thermal PSD at resonance, `2k_BT/(MΓΩ_M²)`.
pub fn resonant_peak(mode: &OscillatorMode) -> f64 {
    2.0 * mode.thermal_energy() / (mode.mass() * mode.gamma() * mode.omega_m().powi(2))
}

/// Resonant Lorentzian plus flat background.
pub fn open_loop_psd_with_background(mode: &OscillatorMode, env: &NoiseEnvironment, omega: f64) -> Result<f64> {
    Ok(thermal_psd(mode, &DampingModel::Viscous, omega)? + env.s_b)
}

/// Cold-damped spectrum with the background also divided by `R[Ω]²`.
pub fn closed_loop_psd_with_background(
    mode: &OscillatorMode,
    env: &NoiseEnvironment,
    gain: FeedbackGain,
    omega: f64,
) -> Result<f64> {
    let r = noise_reduction(mode, gain, omega)?;
    Ok(closed_loop_psd(mode, gain, omega)? + env.s_b / (r * r))
}

/// Adds the electronic noise fed back by the loop, `|MΓΩgχ_fb|² S_e`.
pub fn closed_loop_psd_with_electronics(
    mode: &OscillatorMode,
    env: &NoiseEnvironment,
    gain: FeedbackGain,
    omega: f64,
) -> Result<f64> {
    let chi = closed_loop_susceptibility(mode, &DampingModel::Viscous, gain, omega)?;
    let transfer = mode.mass() * mode.gamma() * omega * gain.value() * chi.norm();
    Ok(closed_loop_psd_with_background(mode, env, gain, omega)? + transfer * transfer * env.s_e)
}

/// Cooling factor `T/T_fb` in the presence of background noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoolingFactor {
    pub value: f64,
    /// Set when the resonant area has gone negative, i.e. the feedback digs
    /// a hole below the background.
    pub negative_temperature: bool,
}

/// `(1+g) / (1 − ε_b g(2+g))`.
pub fn cooling_factor(gain: FeedbackGain, epsilon_b: f64) -> Result<CoolingFactor> {
    require_non_negative("epsilon_b", epsilon_b)?;
    let g = gain.value();
    let denominator = 1.0 - epsilon_b * g * (2.0 + g);
    Ok(CoolingFactor { value: gain.factor() / denominator, negative_temperature: denominator <= 0.0 })
}

/// Cooling factor with both background and loop electronic noise,
/// `(1+g) / (1 − ε_b g(2+g) + g² S_e/S_x^T[Ω_M])`. The electronic term is the
/// area the loop adds by driving the mode with its own noise.
pub fn cooling_factor_with_electronics(gain: FeedbackGain, epsilon_b: f64, se_ratio: f64) -> Result<CoolingFactor> {
    require_non_negative("epsilon_b", epsilon_b)?;
    require_non_negative("se_ratio", se_ratio)?;
    let g = gain.value();
    let denominator = 1.0 - epsilon_b * g * (2.0 + g) + g * g * se_ratio;
    Ok(CoolingFactor { value: gain.factor() / denominator, negative_temperature: denominator <= 0.0 })
}

/// Amplitude noise reduction at resonance when electronic noise limits the loop.
pub fn amplitude_reduction_with_electronics(gain: FeedbackGain, se_ratio: f64) -> Result<f64> {
    require_non_negative("se_ratio", se_ratio)?;
    let g = gain.value();
    Ok(gain.factor() / (1.0 + g * g * se_ratio).sqrt())
}

/// Rectangular sampling grid for [`spatial_overlap`]; fields are stored
/// row-major with `y` varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceGrid {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl SurfaceGrid {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        for (name, axis) in [("x", &x), ("y", &y)] {
            if axis.len() < 2 {
                return Err(domain(name, "need at least two grid points"));
            }
            if !axis.windows(2).all(|w| w[1] > w[0]) || !axis.iter().all(|v| v.is_finite()) {
                return Err(domain(name, "grid must be finite and strictly increasing"));
            }
        }
        Ok(Self { x, y })
    }

    /// `nx × ny` points spanning `[x0, x1] × [y0, y1]`.
    pub fn uniform(x0: f64, x1: f64, nx: usize, y0: f64, y1: f64, ny: usize) -> Result<Self> {
        let axis = |a: f64, b: f64, n: usize| -> Vec<f64> {
            (0..n).map(|i| a + (b - a) * i as f64 / (n.max(2) - 1) as f64).collect()
        };
        Self::new(axis(x0, x1, nx), axis(y0, y1, ny))
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.x.len() * self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Samples `f(x, y)` on the grid.
    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        self.x.iter().flat_map(|&x| self.y.iter().map(move |&y| (x, y))).map(|(x, y)| f(x, y)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    pub value: f64,
    /// Difference to the same integral on the grid with every other point
    /// dropped, relative to `sqrt(∫f² ∫g²)`.
    pub refinement_change: f64,
    /// False when `refinement_change` exceeds 1e-3.
    pub converged: bool,
}

fn trapezoid_2d(x: &[usize], y: &[usize], grid: &SurfaceGrid, h: impl Fn(usize) -> f64) -> f64 {
    let ny = grid.y.len();
    let weights = |idx: &[usize], axis: &[f64]| -> Vec<f64> {
        let mut w = vec![0.0; idx.len()];
        for k in 0..idx.len() - 1 {
            let d = 0.5 * (axis[idx[k + 1]] - axis[idx[k]]);
            w[k] += d;
            w[k + 1] += d;
        }
        w
    };
    let wx = weights(x, &grid.x);
    let wy = weights(y, &grid.y);
    let mut total = 0.0;
    for (a, &i) in x.iter().enumerate() {
        let row: f64 = y.iter().enumerate().map(|(b, &j)| wy[b] * h(i * ny + j)).sum();
        total += wx[a] * row;
    }
    total
}

/// Overlap integral `∫∫ f·g dx dy` of two fields sampled on `grid`.
pub fn spatial_overlap(f: &[f64], g: &[f64], grid: &SurfaceGrid) -> Result<Overlap> {
    if f.len() != grid.len() || g.len() != grid.len() {
        return Err(Error::Precondition(format!(
            "fields must have {} samples, got {} and {}",
            grid.len(),
            f.len(),
            g.len()
        )));
    }
    let all_x: Vec<usize> = (0..grid.x.len()).collect();
    let all_y: Vec<usize> = (0..grid.y.len()).collect();
    let value = trapezoid_2d(&all_x, &all_y, grid, |k| f[k] * g[k]);

    let coarse = |n: usize| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).step_by(2).collect();
        if *idx.last().unwrap() != n - 1 {
            idx.push(n - 1);
        }
        idx
    };
    let (cx, cy) = (coarse(grid.x.len()), coarse(grid.y.len()));
    let refinement = if cx.len() >= 2 && cy.len() >= 2 {
        let coarse_value = trapezoid_2d(&cx, &cy, grid, |k| f[k] * g[k]);
        let ff = trapezoid_2d(&all_x, &all_y, grid, |k| f[k] * f[k]);
        let gg = trapezoid_2d(&all_x, &all_y, grid, |k| g[k] * g[k]);
        let scale = (ff * gg).sqrt();
        if scale > 0.0 {
            (value - coarse_value).abs() / scale
        } else {
            0.0
        }
    } else {
        f64::INFINITY
    };
    Ok(Overlap { value, refinement_change: refinement, converged: refinement <= 1e-3 })
}

/// A mode and its weight `⟨u_n, v_0⟩²` in the optical readout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedMode {
    pub mode: OscillatorMode,
    pub weight: f64,
}

/// Set of acoustic modes, kept sorted by resonance frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<WeightedMode>", into = "Vec<WeightedMode>")]
pub struct ModalDecomposition {
    modes: Vec<WeightedMode>,
}

impl ModalDecomposition {
    pub fn new(modes: Vec<WeightedMode>) -> Result<Self> {
        if modes.is_empty() {
            return Err(domain("modes", "at least one mode is required"));
        }
        for m in &modes {
            require_non_negative("weight", m.weight)?;
        }
        let mut modes = modes;
        modes.sort_by(|a, b| a.mode.omega_m().total_cmp(&b.mode.omega_m()));
        Ok(Self { modes })
    }

    /// A single mode with unit weight.
    pub fn single(mode: OscillatorMode) -> Self {
        Self { modes: vec![WeightedMode { mode, weight: 1.0 }] }
    }

    pub fn modes(&self) -> &[WeightedMode] {
        &self.modes
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Index of the mode whose resonance is closest to `omega`.
    pub fn nearest(&self, omega: f64) -> usize {
        let mut best = 0;
        for (i, m) in self.modes.iter().enumerate() {
            if (m.mode.omega_m() - omega).abs() < (self.modes[best].mode.omega_m() - omega).abs() {
                best = i;
            }
        }
        best
    }

    pub(crate) fn get(&self, index: usize) -> Result<&WeightedMode> {
        self.modes.get(index).ok_or_else(|| {
            domain("resonant_mode_index", format!("{index} out of range for {} modes", self.modes.len()))
        })
    }
}

impl TryFrom<Vec<WeightedMode>> for ModalDecomposition {
    type Error = Error;

    fn try_from(modes: Vec<WeightedMode>) -> Result<Self> {
        ModalDecomposition::new(modes)
    }
}

impl From<ModalDecomposition> for Vec<WeightedMode> {
    fn from(d: ModalDecomposition) -> Self {
        d.modes
    }
}

/// `χ_eff[Ω] = Σ_n χ_n[Ω] ⟨u_n, v_0⟩²` (viscous modes).
pub fn multimode_susceptibility(decomp: &ModalDecomposition, omega: f64) -> Result<Complex64> {
    let mut sum = Complex64::new(0.0, 0.0);
    for m in &decomp.modes {
        sum += susceptibility(&m.mode, &DampingModel::Viscous, omega)? * m.weight;
    }
    Ok(sum)
}

/// Thermal PSD of the readout, `Σ_n (2k_BT_n/Ω) Im χ_n ⟨u_n, v_0⟩²`.
pub fn multimode_thermal_psd(decomp: &ModalDecomposition, omega: f64) -> Result<f64> {
    let mut sum = 0.0;
    for m in &decomp.modes {
        let chi = susceptibility(&m.mode, &DampingModel::Viscous, omega)?;
        sum += 2.0 * m.mode.thermal_energy() / omega * chi.im * m.weight;
    }
    Ok(sum)
}

/// `1 / (1/χ_eff − iMΓΩg)` with the mass and damping of the resonant mode.
pub fn multimode_closed_loop_susceptibility(
    decomp: &ModalDecomposition,
    resonant_mode_index: usize,
    gain: FeedbackGain,
    omega: f64,
) -> Result<Complex64> {
    let resonant = decomp.get(resonant_mode_index)?.mode;
    let chi = multimode_susceptibility(decomp, omega)?;
    if chi.norm() == 0.0 {
        return Err(Error::Degenerate("all overlap weights are zero".into()));
    }
    let feedback = Complex64::new(0.0, resonant.mass() * resonant.gamma() * omega * gain.value());
    Ok((chi.inv() - feedback).inv())
}

/// Readout thermal PSD with the loop closed, `|χ_fb/χ_eff|² S_x^T`.
pub fn multimode_closed_loop_psd(
    decomp: &ModalDecomposition,
    resonant_mode_index: usize,
    gain: FeedbackGain,
    omega: f64,
) -> Result<f64> {
    let ratio = multimode_closed_loop_susceptibility(decomp, resonant_mode_index, gain, omega)?
        / multimode_susceptibility(decomp, omega)?;
    Ok(ratio.norm_sqr() * multimode_thermal_psd(decomp, omega)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureProfile {
    pub omega: Vec<f64>,
    pub temperature: Vec<f64>,
    /// True when the profile is flat to 0.1%.
    pub is_equilibrium: bool,
}

/// Relative spread `(max − min)/|mean|` below which a profile counts as flat.
pub const EQUILIBRIUM_TOLERANCE: f64 = 1e-3;

/// Frequency-resolved effective temperature `T / (1 − MΓΩg / Im(1/χ_eff))`.
pub fn equilibrium_temperature_profile(
    decomp: &ModalDecomposition,
    resonant_mode_index: usize,
    gain: FeedbackGain,
    omega_grid: &[f64],
) -> Result<TemperatureProfile> {
    if omega_grid.is_empty() {
        return Err(domain("omega_grid", "empty"));
    }
    let resonant = decomp.get(resonant_mode_index)?.mode;
    let mut temperature = Vec::with_capacity(omega_grid.len());
    for &omega in omega_grid {
        require_positive("omega", omega)?;
        let inv_im = multimode_susceptibility(decomp, omega)?.inv().im;
        let loop_term = resonant.mass() * resonant.gamma() * omega * gain.value();
        temperature.push(resonant.temperature() / (1.0 - loop_term / inv_im));
    }
    let (lo, hi, sum) = temperature
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY, 0.0), |(lo, hi, s), &t| (lo.min(t), hi.max(t), s + t));
    let mean = sum / temperature.len() as f64;
    let is_equilibrium = mean != 0.0 && (hi - lo) / mean.abs() <= EQUILIBRIUM_TOLERANCE;
    Ok(TemperatureProfile { omega: omega_grid.to_vec(), temperature, is_equilibrium })
}
