//! Executes scenarios into result bundles.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde_json::{json, Map, Value};

use crate::environment::{
    closed_loop_psd_with_electronics, cooling_factor_with_electronics, CoolingFactor, NoiseEnvironment,
};
use crate::error::{Error, Result};
use crate::monomode::{
    closed_loop_susceptibility, effective_damping, to_one_sided_hz, DampingModel, FeedbackGain, OscillatorMode,
};
use crate::sim::rng::member_seed;
use crate::sim::{SimConfig, Simulator, Trajectory};
use crate::spectral::{
    calibrate_gain, effective_temperature_from_fit, estimate_epsilon_b, fit_lorentzian, normalize_gain_calibration,
    welch_psd, zero_span, LorentzianFit, Spectrum, WelchSettings,
};
use crate::transient::{
    cyclic_cooling_average, forced_envelope_on, forced_power_on, variance_along_schedule, MonochromaticDrive,
    SwitchEvent, SwitchKind,
};

use super::bundle::{Overlay, ResultBundle, Table};
use super::measure::{fit_resonance, loop_cycle, relaxation_between, scaled_guess, SpectrumSettings};
use super::scenario::{Scenario, ScenarioKind};

/// Accepted relative residual of fitted damping ratios.
pub const DAMPING_TOLERANCE: f64 = 0.05;
/// Accepted relative residual of cooling factors and resonant reductions.
pub const COOLING_TOLERANCE: f64 = 0.15;
/// Accepted relative residual of fitted time constants and calibrated gains.
pub const TIME_CONSTANT_TOLERANCE: f64 = 0.10;
/// Accepted relative residual of background ratios.
pub const EPSILON_TOLERANCE: f64 = 0.20;
/// Thermal power admitted by the lock-in relative to the expected driven
/// power; sets the dwell time per drive frequency.
pub const LOCK_IN_LEAKAGE: f64 = 2.5e-4;
/// Rows kept in time-series tables.
pub const MAX_TRACE_ROWS: usize = 4000;

/// Runs `scenario` and collects its tables, overlays and summary.
pub fn run_scenario(scenario: &Scenario) -> Result<ResultBundle> {
    scenario.validate()?;
    let ctx = Context::new(scenario)?;
    let mut out = Output::default();
    match &scenario.kind {
        ScenarioKind::CoolingSpectra { gains } => cooling_spectra(&ctx, gains, &mut out)?,
        ScenarioKind::GainSweep { gains } => gain_sweep(&ctx, gains, &mut out)?,
        ScenarioKind::HighGainDip { gain } => high_gain_dip(&ctx, *gain, &mut out)?,
        ScenarioKind::MechanicalResponse { gains, frequencies, span_widths, drive_snr_db } => {
            mechanical_response(&ctx, gains, *frequencies, *span_widths, *drive_snr_db, &mut out)?
        }
        ScenarioKind::TransientLoop { gain, on_relaxations, off_relaxations } => {
            transient_loop(&ctx, *gain, *on_relaxations, *off_relaxations, &mut out)?
        }
        ScenarioKind::TransientDrive { gain, drive_snr_db } => transient_drive(&ctx, *gain, *drive_snr_db, &mut out)?,
        ScenarioKind::CyclicCooling { gain, cool_relaxations, free_relaxations, simulated_points, cycles } => {
            cyclic_cooling(&ctx, *gain, *cool_relaxations, free_relaxations, *simulated_points, *cycles, &mut out)?
        }
    }
    Ok(ResultBundle { scenario: scenario.clone(), tables: out.tables, overlays: out.overlays, summary: out.summary })
}

#[derive(Default)]
struct Output {
    tables: Vec<Table>,
    overlays: Vec<Overlay>,
    summary: Map<String, Value>,
}

impl Output {
    fn note(&mut self, key: &str, value: Value) {
        self.summary.insert(key.into(), value);
    }
}

struct Context<'a> {
    scenario: &'a Scenario,
    mode: OscillatorMode,
    env: NoiseEnvironment,
    settings: SpectrumSettings,
    sample_rate: f64,
}

fn gain_of(g: f64) -> Result<FeedbackGain> {
    FeedbackGain::new(g)
}

fn label(g: f64) -> String {
    format!("g{g}")
}

impl<'a> Context<'a> {
    fn new(scenario: &'a Scenario) -> Result<Self> {
        let mode = scenario.resonant_mode()?;
        let env = NoiseEnvironment::from_ratios(
            &mode,
            scenario.environment.epsilon_b,
            scenario.environment.electronic_noise_ratio,
        )?;
        Ok(Self {
            scenario,
            mode,
            env,
            settings: scenario.estimator.spectrum(),
            sample_rate: scenario.base_sample_rate()?,
        })
    }

    fn config(&self, gain: FeedbackGain, duration: f64, task: u64) -> Result<SimConfig> {
        self.scenario.sim_config(gain, duration, member_seed(self.scenario.seed, task))
    }

    /// One-sided analytic spectrum [m²/Hz] of the resonant mode with
    /// background and electronic noise.
    fn theory_psd(&self, gain: FeedbackGain, f_hz: f64) -> Result<f64> {
        Ok(to_one_sided_hz(closed_loop_psd_with_electronics(&self.mode, &self.env, gain, 2.0 * PI * f_hz)?))
    }

    fn cooling_theory(&self, gain: FeedbackGain) -> Result<CoolingFactor> {
        cooling_factor_with_electronics(gain, self.env.epsilon_b(&self.mode), self.env.se_ratio(&self.mode))
    }

    fn reduction_theory(&self, gain: FeedbackGain) -> Result<f64> {
        let f = self.mode.frequency_hz();
        Ok((self.theory_psd(FeedbackGain::OPEN_LOOP, f)? / self.theory_psd(gain, f)?).sqrt())
    }

    fn runs(&self) -> usize {
        self.scenario.estimator.runs
    }

    /// Zero-span settings for a response of rate `rate` [1/s].
    fn zero_span_settings(&self, rate: f64) -> (f64, f64) {
        let e = &self.scenario.estimator;
        let rbw = e.rbw_hz.unwrap_or_else(|| (10.0 * rate / (2.0 * PI)).min(self.mode.frequency_hz() / 3.0));
        let tau = e.detector_tau_s.unwrap_or(0.05 / rate);
        (rbw, tau)
    }
}

/// Time for the zero-span filters to forget a switch.
fn zero_span_settle(rbw: f64, tau: f64) -> f64 {
    5.0 * tau + 3.0 / rbw
}

struct ThermalPoint {
    gain: f64,
    spectrum: Spectrum,
    force_spectrum: Option<Spectrum>,
    fit: std::result::Result<LorentzianFit, String>,
    /// PSD averaged over a small fraction of the expected width at resonance.
    level: f64,
}

/// Simulated thermal spectra for the open loop (first) and every nonzero
/// gain, each fitted over a band sized for its expected width.
fn thermal_sweep(ctx: &Context, gains: &[f64], record_force: bool) -> Result<Vec<ThermalPoint>> {
    let mut list = vec![0.0];
    list.extend(gains.iter().copied().filter(|&g| g != 0.0));
    let fs = ctx.sample_rate;
    let duration = ctx.settings.duration(fs);
    let raw: Vec<Result<(f64, Spectrum, Option<Spectrum>)>> = list
        .par_iter()
        .enumerate()
        .map(|(i, &g)| {
            let mut cfg = ctx.config(gain_of(g)?, duration, i as u64)?;
            cfg.record_force = record_force;
            let trajectory = Simulator::new(cfg)?.run()?;
            let welch = WelchSettings::new(ctx.settings.segment_length);
            let spectrum = welch_psd(&trajectory, &welch)?;
            let force = match &trajectory.force {
                Some(f) => Some(crate::spectral::welch_psd_of(f, trajectory.sample_rate, &welch)?),
                None => None,
            };
            Ok((g, spectrum, force))
        })
        .collect();
    let mut spectra = Vec::with_capacity(raw.len());
    for r in raw {
        spectra.push(r?);
    }

    let f0 = ctx.mode.frequency_hz();
    let level_at = |spec: &Spectrum, g: f64| -> Result<f64> {
        let half = (0.05 * effective_damping(ctx.mode.gamma(), gain_of(g)?) / (2.0 * PI)).max(1.5 * spec.spacing());
        spec.average_near(f0, half)
    };
    let (g0, open_spec, open_force) = spectra.remove(0);
    let open_fit = fit_resonance(&open_spec, &ctx.mode, ctx.mode.gamma(), &ctx.settings, None)?;
    let mut points = vec![ThermalPoint {
        gain: g0,
        level: level_at(&open_spec, 0.0)?,
        spectrum: open_spec,
        force_spectrum: open_force,
        fit: Ok(open_fit),
    }];
    let fitted: Vec<Result<ThermalPoint>> = spectra
        .into_par_iter()
        .map(|(g, spectrum, force_spectrum)| {
            let gain = gain_of(g)?;
            let expected = effective_damping(ctx.mode.gamma(), gain);
            let fit = fit_resonance(&spectrum, &ctx.mode, expected, &ctx.settings, Some((&open_fit, gain)))
                .map_err(|e| e.to_string());
            Ok(ThermalPoint { gain: g, level: level_at(&spectrum, g)?, spectrum, force_spectrum, fit })
        })
        .collect();
    for p in fitted {
        points.push(p?);
    }
    Ok(points)
}

fn open_fit(points: &[ThermalPoint]) -> Result<&LorentzianFit> {
    points[0].fit.as_ref().map_err(|e| Error::Degenerate(format!("open-loop fit failed: {e}")))
}

/// Tables shared by the thermal-spectrum kinds: fitted parameters and
/// their ratios to the open loop, and the level-based reduction.
fn thermal_tables(ctx: &Context, points: &[ThermalPoint], out: &mut Output) -> Result<()> {
    let open = *open_fit(points)?;
    let mut fits = Table::new(
        "fits",
        &[
            "gain",
            "center_hz",
            "width_hz",
            "width_error_hz",
            "peak_m2_per_hz",
            "background_m2_per_hz",
            "tilt",
            "area_m2",
            "area_error_m2",
            "effective_temperature_k",
            "damping_ratio",
            "damping_ratio_theory",
            "cooling_factor",
            "cooling_factor_theory",
        ],
    );
    let mut resonance =
        Table::new("resonance", &["gain", "level_m2_per_hz", "amplitude_reduction", "amplitude_reduction_theory"]);
    let mut cooling = Table::new("cooling", &["gain", "cooling_factor", "cooling_factor_theory"]);
    let mut sign = Table::new("temperature_sign", &["gain", "negative", "negative_theory"]);
    let open_level = open.params.evaluate(open.center());
    let mut failures = Vec::new();
    for p in points {
        let gain = gain_of(p.gain)?;
        resonance.push(vec![p.gain, p.level, (open_level / p.level).sqrt(), ctx.reduction_theory(gain)?]);
        let fit = match &p.fit {
            Ok(f) => f,
            Err(e) => {
                failures.push(json!({"gain": p.gain, "error": e}));
                continue;
            }
        };
        let temperature = effective_temperature_from_fit(fit, &ctx.mode).unwrap_or(f64::NAN);
        let theory = ctx.cooling_theory(gain)?;
        let measured = open.area / fit.area;
        // near the divergence the magnitude is ill-conditioned; only the sign is compared
        if !theory.negative_temperature {
            cooling.push(vec![p.gain, measured, theory.value]);
        }
        sign.push(vec![p.gain, f64::from(u8::from(fit.area < 0.0)), f64::from(u8::from(theory.negative_temperature))]);
        fits.push(vec![
            p.gain,
            fit.center(),
            fit.width(),
            fit.errors.width,
            fit.peak(),
            fit.background(),
            fit.params.tilt,
            fit.area,
            fit.area_error,
            temperature,
            fit.width() / open.width(),
            gain.factor(),
            measured,
            theory.value,
        ]);
    }
    out.overlays.push(Overlay::new("fits", "damping_ratio", "damping_ratio_theory", DAMPING_TOLERANCE));
    out.overlays.push(Overlay::new("cooling", "cooling_factor", "cooling_factor_theory", COOLING_TOLERANCE));
    out.overlays.push(Overlay::new("temperature_sign", "negative", "negative_theory", 0.0));
    out.overlays.push(Overlay::new(
        "resonance",
        "amplitude_reduction",
        "amplitude_reduction_theory",
        COOLING_TOLERANCE,
    ));
    let negative: Vec<f64> =
        points.iter().filter(|p| matches!(&p.fit, Ok(f) if f.area < 0.0)).map(|p| p.gain).collect();
    let predicted_negative: Vec<f64> = points
        .iter()
        .filter(|p| gain_of(p.gain).and_then(|g| ctx.cooling_theory(g)).is_ok_and(|c| c.negative_temperature))
        .map(|p| p.gain)
        .collect();
    out.note("negative_temperature_gains", json!(negative));
    out.note("negative_temperature_gains_theory", json!(predicted_negative));
    out.note("fit_failures", Value::Array(failures));
    out.note("epsilon_b_estimate", json!(estimate_epsilon_b(&open).ok()));
    out.tables.push(fits);
    out.tables.push(cooling);
    out.tables.push(sign);
    out.tables.push(resonance);
    Ok(())
}

/// Measured and analytic spectra around resonance, one column pair per gain.
fn spectra_table(ctx: &Context, points: &[ThermalPoint]) -> Result<Table> {
    let f0 = ctx.mode.frequency_hz();
    let top = points.iter().map(|p| p.gain).fold(0.0, f64::max);
    let half =
        (ctx.settings.span_widths * effective_damping(ctx.mode.gamma(), gain_of(top)?) / (2.0 * PI)).min(0.8 * f0);
    let first = points[0].spectrum.band(f0 - half, f0 + half);
    let mut columns = vec![("frequency_hz".to_string(), first.frequencies.clone())];
    for p in points {
        let band = p.spectrum.band(f0 - half, f0 + half);
        let gain = gain_of(p.gain)?;
        let theory = band.frequencies.iter().map(|&f| ctx.theory_psd(gain, f)).collect::<Result<Vec<f64>>>()?;
        columns.push((format!("psd_{}", label(p.gain)), band.psd));
        columns.push((format!("theory_{}", label(p.gain)), theory));
    }
    Table::from_columns("spectra", columns)
}

fn cooling_spectra(ctx: &Context, gains: &[f64], out: &mut Output) -> Result<()> {
    let points = thermal_sweep(ctx, gains, false)?;
    out.tables.push(spectra_table(ctx, &points)?);
    thermal_tables(ctx, &points, out)
}

fn gain_sweep(ctx: &Context, gains: &[f64], out: &mut Output) -> Result<()> {
    let points = thermal_sweep(ctx, gains, true)?;
    thermal_tables(ctx, &points, out)?;

    // relative gain from force and displacement spectra at resonance,
    // normalized against the fitted damping increase
    let f0 = ctx.mode.frequency_hz();
    let open = *open_fit(&points)?;
    let mut relative = Vec::new();
    for p in &points {
        let half =
            (0.5 * effective_damping(ctx.mode.gamma(), gain_of(p.gain)?) / (2.0 * PI)).max(1.5 * p.spectrum.spacing());
        let force = p
            .force_spectrum
            .as_ref()
            .ok_or_else(|| Error::Precondition("force was not recorded".into()))?
            .average_near(f0, half)?;
        relative.push(calibrate_gain(force, p.spectrum.average_near(f0, half)?)?);
    }
    let (mut xs, mut ratios) = (Vec::new(), Vec::new());
    for (p, r) in points.iter().zip(&relative) {
        if let Ok(fit) = &p.fit {
            xs.push(*r);
            ratios.push(fit.width() / open.width());
        }
    }
    let calibration = normalize_gain_calibration(&xs, &ratios)?;
    let columns = vec![
        ("gain".to_string(), points.iter().map(|p| p.gain).collect()),
        ("relative_gain".to_string(), relative.clone()),
        ("calibrated_gain".to_string(), relative.iter().map(|r| r * calibration.scale).collect()),
    ];
    out.tables.push(Table::from_columns("calibration", columns)?);
    out.overlays.push(Overlay::new("calibration", "calibrated_gain", "gain", TIME_CONSTANT_TOLERANCE));
    out.note("calibration_scale", json!(calibration.scale));
    Ok(())
}

fn high_gain_dip(ctx: &Context, gain: f64, out: &mut Output) -> Result<()> {
    let points = thermal_sweep(ctx, &[gain], false)?;
    out.tables.push(spectra_table(ctx, &points)?);
    let open = *open_fit(&points)?;
    let closed = points.last().expect("open and closed points");
    let g = gain_of(gain)?;
    let open_level = open.params.evaluate(open.center());
    let reduction_theory = ctx.reduction_theory(g)?;
    let epsilon = estimate_epsilon_b(&open)?;
    let mut table = Table::new(
        "resonance",
        &[
            "gain",
            "power_reduction",
            "power_reduction_theory",
            "amplitude_reduction",
            "amplitude_reduction_theory",
            "level_over_background",
            "epsilon_b",
            "epsilon_b_theory",
        ],
    );
    table.push(vec![
        gain,
        open_level / closed.level,
        reduction_theory.powi(2),
        (open_level / closed.level).sqrt(),
        reduction_theory,
        closed.level / open.background(),
        epsilon,
        ctx.env.epsilon_b(&ctx.mode),
    ]);
    out.tables.push(table);
    out.overlays.push(Overlay::new(
        "resonance",
        "amplitude_reduction",
        "amplitude_reduction_theory",
        COOLING_TOLERANCE,
    ));
    out.overlays.push(Overlay::new("resonance", "epsilon_b", "epsilon_b_theory", EPSILON_TOLERANCE));
    out.note("dip_below_background", json!(closed.level < open.background()));
    out.note("power_reduction", json!(open_level / closed.level));
    out.note("power_reduction_theory", json!(reduction_theory.powi(2)));
    if let Ok(fit) = &closed.fit {
        out.note("closed_loop_area_m2", json!(fit.area));
    }
    Ok(())
}

/// Mean square of the component of `trajectory` at angular frequency `omega`.
pub fn lock_in_power(trajectory: &Trajectory, omega: f64) -> f64 {
    let dt = 1.0 / trajectory.sample_rate;
    let n = trajectory.len() as f64;
    let z: Complex64 = trajectory
        .samples
        .iter()
        .enumerate()
        .map(|(k, &x)| x * Complex64::from_polar(1.0, -omega * (trajectory.start_time + k as f64 * dt)))
        .sum::<Complex64>()
        * (2.0 / n);
    0.5 * z.norm_sqr()
}

/// Drive amplitude whose open-loop resonant response has `snr_db` more
/// power than the thermal variance.
fn drive_amplitude(mode: &OscillatorMode, snr_db: f64) -> f64 {
    let amplitude = (2.0 * 10f64.powf(snr_db / 10.0) * mode.thermal_variance()).sqrt();
    amplitude * mode.mass() * mode.omega_m() * mode.gamma()
}

fn mechanical_response(
    ctx: &Context,
    gains: &[f64],
    points: usize,
    span_widths: f64,
    snr_db: f64,
    out: &mut Output,
) -> Result<()> {
    let thermal = thermal_sweep(ctx, gains, false)?;
    thermal_tables(ctx, &thermal, out)?;
    let f0 = ctx.mode.frequency_hz();
    let force = drive_amplitude(&ctx.mode, snr_db);
    let list: Vec<f64> = thermal.iter().map(|p| p.gain).collect();
    let mut tasks = Vec::new();
    for &g in &list {
        let rate = effective_damping(ctx.mode.gamma(), gain_of(g)?);
        let half = (span_widths * rate / (2.0 * PI)).min(0.8 * f0);
        for i in 0..points {
            tasks.push((g, f0 - half + 2.0 * half * i as f64 / (points - 1) as f64));
        }
    }
    let offset = list.len() as u64;
    let measured: Vec<Result<f64>> = tasks
        .par_iter()
        .enumerate()
        .map(|(i, &(g, f))| {
            let gain = gain_of(g)?;
            let omega = 2.0 * PI * f;
            let rate = effective_damping(ctx.mode.gamma(), gain);
            let chi = closed_loop_susceptibility(&ctx.mode, &DampingModel::Viscous, gain, omega)?;
            let response = 0.5 * (force * chi.norm()).powi(2);
            // thermal leakage into the lock-in is about PSD / dwell
            let dwell = (ctx.theory_psd(gain, f)? / (LOCK_IN_LEAKAGE * response)).max(20.0 / rate);
            let periods = (dwell * f).max(200.0).ceil();
            let mut cfg = ctx.config(gain, periods / f, offset + i as u64)?;
            cfg.drive = Some(MonochromaticDrive::new(force, omega, 0.0)?);
            let trajectory = Simulator::new(cfg)?.run()?;
            Ok(lock_in_power(&trajectory, omega))
        })
        .collect();
    let mut response = Table::new("response", &["gain", "frequency_hz", "power_m2", "power_theory_m2"]);
    for ((g, f), p) in tasks.iter().zip(measured) {
        let chi = closed_loop_susceptibility(&ctx.mode, &DampingModel::Viscous, gain_of(*g)?, 2.0 * PI * f)?;
        response.push(vec![*g, *f, p?, 0.5 * (force * chi.norm()).powi(2)]);
    }

    let band = |k: usize| {
        let rows = &response.rows[k * points..(k + 1) * points];
        Spectrum::from_values(rows.iter().map(|r| r[1]).collect(), rows.iter().map(|r| r[2]).collect(), 1)
    };
    let open = fit_lorentzian(&band(0)?, None)?;
    let mut table = Table::new(
        "response_fits",
        &[
            "gain",
            "width_hz",
            "damping_ratio",
            "damping_ratio_theory",
            "amplitude_reduction",
            "amplitude_reduction_theory",
        ],
    );
    let mut failures = Vec::new();
    for (k, &g) in list.iter().enumerate() {
        let gain = gain_of(g)?;
        let fit = if k == 0 { Ok(open) } else { fit_lorentzian(&band(k)?, Some(scaled_guess(&open, gain))) };
        let fit = match fit {
            Ok(f) => f,
            Err(e) => {
                failures.push(json!({"gain": g, "error": e.to_string()}));
                continue;
            }
        };
        table.push(vec![
            g,
            fit.width(),
            fit.width() / open.width(),
            gain.factor(),
            (open.params.evaluate(open.center()) / fit.params.evaluate(open.center())).sqrt(),
            gain.factor(),
        ]);
    }
    out.note("response_fit_failures", Value::Array(failures));
    out.tables.push(response);
    out.tables.push(table);
    out.overlays.push(Overlay::new("response", "power_m2", "power_theory_m2", COOLING_TOLERANCE));
    out.overlays.push(Overlay::new("response_fits", "damping_ratio", "damping_ratio_theory", DAMPING_TOLERANCE));
    out.overlays.push(Overlay::new(
        "response_fits",
        "amplitude_reduction",
        "amplitude_reduction_theory",
        TIME_CONSTANT_TOLERANCE,
    ));
    out.note("drive_amplitude", json!(force));
    Ok(())
}

/// Sample indices thinning `n` samples to at most [`MAX_TRACE_ROWS`].
fn thinned(n: usize) -> impl Iterator<Item = usize> {
    (0..n).step_by(n.div_ceil(MAX_TRACE_ROWS).max(1))
}

fn mean_of(series: Vec<Vec<f64>>) -> Vec<f64> {
    let runs = series.len() as f64;
    let mut mean = vec![0.0; series.first().map_or(0, Vec::len)];
    for s in &series {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= runs);
    mean
}

/// Ensemble means of the squared displacement and of the zero-span power.
fn ensemble_traces(config: SimConfig, runs: usize, rbw: f64, tau: f64) -> Result<(Trajectory, Trajectory)> {
    let center = config.resonant().frequency_hz();
    let (fs, units) = (config.sample_rate / config.decimation as f64, config.units());
    let members = Simulator::new(config)?.ensemble(runs, |_, t| {
        let squares: Vec<f64> = t.samples.iter().map(|x| x * x).collect();
        zero_span(&t, center, rbw, tau).map(|z| (squares, z.power))
    })?;
    let mut squares = Vec::with_capacity(runs);
    let mut powers = Vec::with_capacity(runs);
    for m in members {
        let (s, p) = m?;
        squares.push(s);
        powers.push(p);
    }
    Ok((Trajectory::new(mean_of(squares), fs, units)?, Trajectory::new(mean_of(powers), fs, units)?))
}

fn transient_loop(ctx: &Context, gain: f64, on_relaxations: f64, off_relaxations: f64, out: &mut Output) -> Result<()> {
    let g = gain_of(gain)?;
    let mode = &ctx.mode;
    let fast = effective_damping(mode.gamma(), g);
    let (rbw, tau) = ctx.zero_span_settings(fast);
    let settle = zero_span_settle(rbw, tau);
    let on_at = settle + 1.0 / fast;
    let off_at = on_at + on_relaxations / fast;
    let end = off_at + off_relaxations / mode.gamma();
    let mut cfg = ctx.config(g, end, 0)?;
    cfg.schedule = loop_cycle(on_at, off_at);
    let events = cfg.schedule.clone();
    let runs = ctx.runs();
    let (variance, power) = ensemble_traces(cfg, runs, rbw, tau)?;
    let times = variance.times();
    let theory = variance_along_schedule(mode, g, mode.thermal_variance(), &events, &times)?;

    let mut trace = Table::new("variance", &["time_s", "variance_m2", "variance_theory_m2", "zero_span_power_m2"]);
    for i in thinned(times.len()) {
        trace.push(vec![times[i], variance.samples[i], theory[i], power.samples[i]]);
    }

    let mut checkpoints =
        Table::new("checkpoints", &["loop_on", "time_since_switch_s", "variance_m2", "variance_theory_m2"]);
    for (on, start, rate) in [(1.0, on_at, fast), (0.0, off_at, mode.gamma())] {
        for k in 0..10 {
            let t = start + (k as f64 + 0.5) / 10.0 * 3.0 / rate;
            let i = ((t * variance.sample_rate).round() as usize).min(times.len() - 1);
            checkpoints.push(vec![on, times[i] - start, variance.samples[i], theory[i]]);
        }
    }

    let mut constants = Table::new(
        "time_constants",
        &["source", "tau_on_s", "tau_on_theory_s", "tau_off_s", "tau_off_theory_s", "ratio", "ratio_theory"],
    );
    let fit_pair = |series: &Trajectory, lag: f64| -> Result<(f64, f64)> {
        let on = relaxation_between(series, on_at, on_at + lag, off_at)?;
        let off = relaxation_between(series, off_at, off_at + lag, end)?;
        Ok((on.tau, off.tau))
    };
    let mut summary = Vec::new();
    for (source, series, lag) in [(0.0, &variance, 0.0), (1.0, &power, settle)] {
        let (on, off) = fit_pair(series, lag)?;
        constants.push(vec![source, on, 1.0 / fast, off, 1.0 / mode.gamma(), off / on, g.factor()]);
        summary.push(json!({"source": if source == 0.0 { "ensemble_variance" } else { "zero_span" }, "tau_on_s": on, "tau_off_s": off}));
    }
    let tolerance = (4.0 * (2.0 / runs as f64).sqrt()).max(0.05);
    out.tables.push(trace);
    out.tables.push(checkpoints);
    out.tables.push(constants);
    out.overlays.push(Overlay::new("checkpoints", "variance_m2", "variance_theory_m2", tolerance));
    for (m, t) in [("tau_on_s", "tau_on_theory_s"), ("tau_off_s", "tau_off_theory_s"), ("ratio", "ratio_theory")] {
        out.overlays.push(Overlay::new("time_constants", m, t, TIME_CONSTANT_TOLERANCE));
    }
    out.note("time_constants", Value::Array(summary));
    out.note("runs", json!(runs));
    out.note("loop_on_s", json!(on_at));
    out.note("loop_off_s", json!(off_at));
    out.note("rbw_hz", json!(rbw));
    out.note("detector_tau_s", json!(tau));
    Ok(())
}

fn transient_drive(ctx: &Context, gain: f64, snr_db: f64, out: &mut Output) -> Result<()> {
    let g = gain_of(gain)?;
    let mode = &ctx.mode;
    let rate = effective_damping(mode.gamma(), g);
    let (rbw, tau) = ctx.zero_span_settings(rate);
    let settle = zero_span_settle(rbw, tau);
    let on_at = settle + 1.0 / rate;
    let off_at = on_at + 8.0 / rate;
    let end = off_at + 6.0 / rate;
    let drive = MonochromaticDrive::resonant(mode, drive_amplitude(mode, snr_db), 0.0)?;
    let mut cfg = ctx.config(g, end, 0)?;
    cfg.drive = Some(drive);
    cfg.schedule = vec![SwitchEvent::new(on_at, SwitchKind::DriveOn), SwitchEvent::new(off_at, SwitchKind::DriveOff)];
    let runs = ctx.runs();
    let (_, power) = ensemble_traces(cfg, runs, rbw, tau)?;
    let times = power.times();

    let reached = forced_envelope_on(mode, g, &drive, off_at - on_at)?;
    let theory_at = |t: f64| -> Result<f64> {
        Ok(if t < on_at {
            0.0
        } else if t < off_at {
            2.0 * forced_power_on(mode, g, &drive, t - on_at)?
        } else {
            0.5 * (reached * (-0.5 * rate * (t - off_at)).exp()).powi(2)
        })
    };
    let mut trace = Table::new("zero_span", &["time_s", "power_m2", "drive_power_theory_m2"]);
    for i in thinned(times.len()) {
        trace.push(vec![times[i], power.samples[i], theory_at(times[i])?]);
    }

    let amplitude =
        Trajectory::new(power.samples.iter().map(|p| p.max(0.0).sqrt()).collect(), power.sample_rate, power.units)?;
    let on = relaxation_between(&amplitude, on_at, on_at + settle, off_at)?;
    let off = relaxation_between(&power, off_at, off_at + settle, (off_at + 4.0 / rate).min(end))?;
    let mut constants =
        Table::new("time_constants", &["tau_on_amplitude_s", "tau_on_theory_s", "tau_off_power_s", "tau_off_theory_s"]);
    constants.push(vec![on.tau, 2.0 / rate, off.tau, 1.0 / rate]);
    out.tables.push(trace);
    out.tables.push(constants);
    out.overlays.push(Overlay::new("time_constants", "tau_on_amplitude_s", "tau_on_theory_s", TIME_CONSTANT_TOLERANCE));
    out.overlays.push(Overlay::new("time_constants", "tau_off_power_s", "tau_off_theory_s", TIME_CONSTANT_TOLERANCE));
    out.note("runs", json!(runs));
    out.note("drive_on_s", json!(on_at));
    out.note("drive_off_s", json!(off_at));
    out.note("rbw_hz", json!(rbw));
    out.note("detector_tau_s", json!(tau));
    Ok(())
}

fn cyclic_cooling(
    ctx: &Context,
    gain: f64,
    cool_relaxations: f64,
    free_relaxations: &[f64],
    simulated_points: usize,
    cycles: usize,
    out: &mut Output,
) -> Result<()> {
    let g = gain_of(gain)?;
    let mode = &ctx.mode;
    let thermal = mode.thermal_variance();
    let t_cool = cool_relaxations / effective_damping(mode.gamma(), g);
    let mut duty = Table::new(
        "duty",
        &[
            "free_time_s",
            "cool_time_s",
            "duty",
            "mean_variance_ratio",
            "variance_at_loop_on_ratio",
            "variance_at_loop_off_ratio",
        ],
    );
    for &r in free_relaxations {
        let c = cyclic_cooling_average(mode, g, t_cool, r / mode.gamma())?;
        duty.push(vec![
            r / mode.gamma(),
            t_cool,
            c.duty,
            c.mean_variance / thermal,
            c.variance_at_loop_on / thermal,
            c.variance_at_loop_off / thermal,
        ]);
    }

    let n = free_relaxations.len();
    let picks: Vec<usize> = match simulated_points.min(n) {
        0 => Vec::new(),
        1 => vec![0],
        k => {
            let mut v: Vec<usize> = (0..k).map(|i| (i * (n - 1) + (k - 1) / 2) / (k - 1)).collect();
            v.dedup();
            v
        }
    };
    let mut simulated =
        Table::new("simulated", &["free_time_s", "duty", "mean_variance_ratio", "mean_variance_ratio_theory"]);
    for (task, &i) in picks.iter().enumerate() {
        let t_free = free_relaxations[i] / mode.gamma();
        let period = t_cool + t_free;
        let mut cfg = ctx.config(g, cycles as f64 * period, task as u64)?;
        cfg.schedule = (0..cycles)
            .flat_map(|c| {
                let start = c as f64 * period;
                [SwitchEvent::new(start, SwitchKind::LoopOn), SwitchEvent::new(start + t_cool, SwitchKind::LoopOff)]
            })
            .collect();
        let variance = super::measure::ensemble_variance(&cfg, ctx.runs())?;
        let kept = variance.window(period, cycles as f64 * period);
        let mean = kept.samples.iter().sum::<f64>() / kept.len() as f64;
        let theory = cyclic_cooling_average(mode, g, t_cool, t_free)?;
        simulated.push(vec![t_free, theory.duty, mean / thermal, theory.mean_variance / thermal]);
    }
    out.tables.push(duty);
    if !picks.is_empty() {
        out.tables.push(simulated);
        out.overlays.push(Overlay::new(
            "simulated",
            "mean_variance_ratio",
            "mean_variance_ratio_theory",
            TIME_CONSTANT_TOLERANCE,
        ));
    }
    out.note("cool_time_s", json!(t_cool));
    out.note("runs", json!(ctx.runs()));
    Ok(())
}
