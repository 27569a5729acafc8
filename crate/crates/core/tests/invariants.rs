//! Property tests of the closed forms, estimators and file formats.

use std::f64::consts::PI;

use colddamp::environment::{
    amplitude_reduction_with_electronics, closed_loop_psd_with_background, closed_loop_psd_with_electronics,
    cooling_factor, cooling_factor_with_electronics, multimode_closed_loop_psd, multimode_susceptibility,
    multimode_thermal_psd, ModalDecomposition, NoiseEnvironment, WeightedMode,
};
use colddamp::experiment::{preset, Scenario, ScenarioKind, Table, FIGURE_IDS};
use colddamp::monomode::{
    closed_loop_psd, from_one_sided_hz, langevin_force_psd, noise_reduction, susceptibility, thermal_psd,
    to_one_sided_hz,
};
use colddamp::sim::{io as trajectory_io, run, SimConfig, Trajectory};
use colddamp::spectral::{fit_lorentzian, model_spectrum, welch_psd_of, LorentzianParams, WelchSettings};
use colddamp::transient::{
    cyclic_cooling_average, forced_envelope_off, forced_envelope_on, forced_steady_amplitude, variance_after_loop_off,
    variance_after_loop_on, MonochromaticDrive,
};
use colddamp::{DampingModel, FeedbackGain, OscillatorMode, UnitSystem};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

/// Mass, resonance, quality factor and temperature spanning many decades.
fn any_mode() -> impl Strategy<Value = OscillatorMode> {
    (-7.0..1.0f64, 0.0..7.0f64, 0.5..5.0f64, -2.0..3.0f64).prop_map(|(m, w, q, t)| {
        let omega = 10f64.powf(w);
        OscillatorMode::new(10f64.powf(m), omega, omega / 10f64.powf(q), 10f64.powf(t)).unwrap()
    })
}

fn any_gain() -> impl Strategy<Value = FeedbackGain> {
    (0.0..100.0f64).prop_map(|g| FeedbackGain::new(g).unwrap())
}

/// Frequency between a hundredth and a hundred times the resonance.
fn around(mode: &OscillatorMode, decade: f64) -> f64 {
    mode.omega_m() * 10f64.powf(decade)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn fluctuation_dissipation_closure(mode in any_mode(), decade in -2.0..2.0f64) {
        let w = around(&mode, decade);
        let chi = susceptibility(&mode, &DampingModel::Viscous, w).unwrap();
        let force = langevin_force_psd(&mode, &DampingModel::Viscous, w).unwrap();
        let psd = thermal_psd(&mode, &DampingModel::Viscous, w).unwrap();
        prop_assert!(rel(psd, chi.norm_sqr() * force) < 1e-12);
    }

    #[test]
    fn closed_loop_times_reduction_squared_is_free_spectrum(
        mode in any_mode(), gain in any_gain(), decade in -2.0..2.0f64,
    ) {
        let w = around(&mode, decade);
        let r = noise_reduction(&mode, gain, w).unwrap();
        let closed = closed_loop_psd(&mode, gain, w).unwrap();
        prop_assert!(rel(closed * r * r, thermal_psd(&mode, &DampingModel::Viscous, w).unwrap()) < 1e-12);
    }

    #[test]
    fn resonant_level_falls_with_gain(mode in any_mode(), a in 0.0..50.0f64, step in 0.01..50.0f64) {
        let level = |g: f64| closed_loop_psd(&mode, FeedbackGain::new(g).unwrap(), mode.omega_m()).unwrap();
        prop_assert!(level(a + step) < level(a));
    }

    #[test]
    fn one_sided_conversion_round_trips(psd in 1e-40..1e10f64) {
        prop_assert!(rel(from_one_sided_hz(to_one_sided_hz(psd)), psd) < 1e-15);
    }

    #[test]
    fn background_term_is_divided_by_reduction_squared(
        mode in any_mode(), gain in any_gain(), eps in 0.0..0.05f64, decade in -2.0..2.0f64,
    ) {
        let w = around(&mode, decade);
        let env = NoiseEnvironment::from_ratios(&mode, eps, 0.0).unwrap();
        let bare = NoiseEnvironment::from_ratios(&mode, 0.0, 0.0).unwrap();
        let r = noise_reduction(&mode, gain, w).unwrap();
        let with = closed_loop_psd_with_background(&mode, &env, gain, w).unwrap();
        let without = closed_loop_psd_with_background(&mode, &bare, gain, w).unwrap();
        prop_assert!(rel(with - without, env.s_b / (r * r)) < 1e-6);
        // no electronic noise: identical to the background-only form
        prop_assert_eq!(closed_loop_psd_with_electronics(&mode, &env, gain, w).unwrap(), with);
    }

    #[test]
    fn electronic_noise_term_vanishes_consistently(gain in any_gain(), eps in 0.0..0.01f64) {
        let plain = cooling_factor(gain, eps).unwrap();
        let with = cooling_factor_with_electronics(gain, eps, 0.0).unwrap();
        prop_assert_eq!(plain, with);
        prop_assert_eq!(amplitude_reduction_with_electronics(gain, 0.0).unwrap(), gain.factor());
    }

    #[test]
    fn electronic_noise_limits_the_amplitude_reduction(gain in any_gain(), se in 1e-8..1e-1f64) {
        let r = amplitude_reduction_with_electronics(gain, se).unwrap();
        prop_assert!(r <= gain.factor());
        prop_assert!(r <= 1.0 + 1.0 / se.sqrt());
    }

    #[test]
    fn cooling_factor_sign_tracks_the_flag(gain in any_gain(), eps in 0.0..0.05f64) {
        let c = cooling_factor(gain, eps).unwrap();
        prop_assert_eq!(c.negative_temperature, c.value < 0.0 || !c.value.is_finite());
        if eps == 0.0 {
            prop_assert_eq!(c.value, gain.factor());
        }
    }

    #[test]
    fn multimode_sums_are_order_free_and_linear_in_weights(
        weights in proptest::collection::vec(0.01..2.0f64, 2..5),
        scale in 0.1..10.0f64,
        decade in -0.5..0.5f64,
        gain in any_gain(),
    ) {
        let modes: Vec<WeightedMode> = weights.iter().enumerate().map(|(i, &weight)| WeightedMode {
            mode: OscillatorMode::new(1.0, 1.0 + 0.37 * i as f64, 0.02, 1.0).unwrap(),
            weight,
        }).collect();
        let mut reversed = modes.clone();
        reversed.reverse();
        let scaled: Vec<WeightedMode> = modes.iter().map(|m| WeightedMode { weight: scale * m.weight, ..*m }).collect();
        let a = ModalDecomposition::new(modes).unwrap();
        let b = ModalDecomposition::new(reversed).unwrap();
        let c = ModalDecomposition::new(scaled).unwrap();
        let w = 10f64.powf(decade);
        prop_assert_eq!(multimode_susceptibility(&a, w).unwrap(), multimode_susceptibility(&b, w).unwrap());
        prop_assert_eq!(
            multimode_closed_loop_psd(&a, 0, gain, w).unwrap(),
            multimode_closed_loop_psd(&b, 0, gain, w).unwrap()
        );
        let chi_a = multimode_susceptibility(&a, w).unwrap();
        let chi_c = multimode_susceptibility(&c, w).unwrap();
        prop_assert!((chi_c - chi_a * scale).norm() <= 1e-12 * chi_c.norm());
        prop_assert!(rel(multimode_thermal_psd(&c, w).unwrap(), scale * multimode_thermal_psd(&a, w).unwrap()) < 1e-12);
    }

    #[test]
    fn loop_switching_variances_reach_equipartition_values(mode in any_mode(), gain in any_gain()) {
        let thermal = mode.thermal_variance();
        let cooled = thermal / gain.factor();
        prop_assert!(rel(variance_after_loop_on(&mode, gain, 0.0).unwrap(), thermal) < 1e-12);
        prop_assert!(rel(variance_after_loop_off(&mode, gain, 0.0).unwrap(), cooled) < 1e-12);
        let long_on = 60.0 / (mode.gamma() * gain.factor());
        let long_off = 60.0 / mode.gamma();
        prop_assert!(rel(variance_after_loop_on(&mode, gain, long_on).unwrap(), cooled) < 1e-12);
        prop_assert!(rel(variance_after_loop_off(&mode, gain, long_off).unwrap(), thermal) < 1e-12);
    }

    #[test]
    fn loop_switching_variances_are_monotone(mode in any_mode(), gain in any_gain(), a in 0.0..10.0f64, b in 0.0..10.0f64) {
        let (t0, t1) = (a.min(b) / mode.gamma(), a.max(b) / mode.gamma());
        prop_assert!(variance_after_loop_on(&mode, gain, t1).unwrap() <= variance_after_loop_on(&mode, gain, t0).unwrap());
        prop_assert!(variance_after_loop_off(&mode, gain, t1).unwrap() >= variance_after_loop_off(&mode, gain, t0).unwrap());
    }

    #[test]
    fn forced_envelopes_join_the_steady_amplitude(
        mode in any_mode(), gain in any_gain(), force in 1e-15..1e-3f64, phase in -PI..PI, t in 0.0..20.0f64,
    ) {
        let drive = MonochromaticDrive::resonant(&mode, force, phase).unwrap();
        let steady = forced_steady_amplitude(&mode, gain, &drive).unwrap();
        let t = t / mode.gamma();
        let on = forced_envelope_on(&mode, gain, &drive, t).unwrap();
        let off = forced_envelope_off(&mode, gain, &drive, t).unwrap();
        prop_assert_eq!(forced_envelope_on(&mode, gain, &drive, 0.0).unwrap(), 0.0);
        prop_assert!(rel(forced_envelope_off(&mode, gain, &drive, 0.0).unwrap(), steady) < 1e-12);
        // build-up and ring-down are complementary
        prop_assert!(rel(on + off, steady) < 1e-12);
    }

    #[test]
    fn cyclic_cooling_stays_between_the_two_equilibria(
        mode in any_mode(), gain in any_gain(), cool in 0.0..20.0f64, free in 0.001..20.0f64,
    ) {
        let c = cyclic_cooling_average(&mode, gain, cool / mode.gamma(), free / mode.gamma()).unwrap();
        let thermal = mode.thermal_variance();
        let cooled = thermal / gain.factor();
        let slack = 1e-9 * thermal;
        prop_assert!(c.mean_variance >= cooled - slack && c.mean_variance <= thermal + slack);
        prop_assert!(c.variance_at_loop_off <= c.variance_at_loop_on + slack);
        prop_assert!((0.0..=1.0).contains(&c.duty));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fitting_the_model_returns_its_parameters(
        width in 0.2..5.0f64, peak in 0.1..100.0f64, bg_ratio in 1e-4..0.1f64, shift in -0.5..0.5f64,
    ) {
        let truth = LorentzianParams::new(100.0 + shift, width, peak, bg_ratio * peak);
        let grid: Vec<f64> = (0..801).map(|i| 100.0 - 15.0 * width + 30.0 * width * i as f64 / 800.0).collect();
        let spec = model_spectrum(&truth, grid, 10).unwrap();
        let fit = fit_lorentzian(&spec, None).unwrap();
        prop_assert!(fit.converged);
        prop_assert!(rel(fit.params.center, truth.center) < 1e-9);
        prop_assert!(rel(fit.params.width, truth.width) < 1e-9);
        prop_assert!(rel(fit.params.peak, truth.peak) < 1e-9);
        prop_assert!(rel(fit.params.background, truth.background) < 1e-7);
    }

    #[test]
    fn welch_spectrum_integrates_to_the_sample_variance(seed in any::<u64>(), segments in 32usize..64, log_len in 11u32..13) {
        let n = 1usize << log_len;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // colored noise, so the check is not limited to a flat spectrum
        let mut state = 0.0;
        let samples: Vec<f64> = (0..n * segments).map(|_| {
            let e: f64 = StandardNormal.sample(&mut rng);
            state = 0.5 * state + e;
            state
        }).collect();
        let spec = welch_psd_of(&samples, 50.0, &WelchSettings::new(n)).unwrap();
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let variance = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / samples.len() as f64;
        prop_assert!(rel(spec.total_power(), variance) < 0.01);
    }

    #[test]
    fn trajectory_files_round_trip(
        samples in proptest::collection::vec(-1e3..1e3f64, 2..200),
        rate in 1.0..1e6f64,
        with_force in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let mut t = Trajectory::new(samples.clone(), rate, UnitSystem::Natural).unwrap();
        t.seed = seed;
        if with_force {
            t.force = Some(samples.iter().map(|v| -0.5 * v).collect());
        }
        let mut bin = Vec::new();
        trajectory_io::write_binary(&t, &mut bin).unwrap();
        prop_assert_eq!(&trajectory_io::read_binary(bin.as_slice()).unwrap(), &t);
        let mut csv = Vec::new();
        trajectory_io::write_csv(&t, &mut csv).unwrap();
        let back = trajectory_io::read_csv(csv.as_slice(), UnitSystem::Natural).unwrap();
        prop_assert_eq!(&back.samples, &t.samples);
        prop_assert_eq!(&back.force, &t.force);
        prop_assert!(rel(back.sample_rate, rate) < 1e-9);
    }

    #[test]
    fn tables_serialize_every_value(rows in proptest::collection::vec((-1e9..1e9f64, -1e-9..1e-9f64), 1..50)) {
        let mut table = Table::new("t", &["a", "b"]);
        for (a, b) in &rows {
            table.push(vec![*a, *b]);
        }
        let bytes = table.to_csv().unwrap();
        let mut reader = csv::Reader::from_reader(bytes.as_slice());
        prop_assert_eq!(reader.headers().unwrap().iter().collect::<Vec<_>>(), vec!["a", "b"]);
        let parsed: Vec<(f64, f64)> = reader.deserialize().map(|r| r.unwrap()).collect();
        prop_assert_eq!(parsed, rows);
    }

    #[test]
    fn scenarios_round_trip_through_json(index in 0usize..FIGURE_IDS.len(), seed in any::<u64>(), full in any::<bool>()) {
        let mut s = preset(FIGURE_IDS[index], full).unwrap().remove(0);
        s.seed = seed;
        if let ScenarioKind::GainSweep { gains } | ScenarioKind::CoolingSpectra { gains } = &mut s.kind {
            gains.push(0.5 + (seed % 7) as f64);
        }
        prop_assert_eq!(Scenario::from_json(&s.to_json().unwrap()).unwrap(), s);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn simulation_is_a_function_of_the_seed(seed in any::<u64>(), g in 0.0..20.0f64) {
        let mode = OscillatorMode::natural(50.0).unwrap();
        let mut cfg = SimConfig::single_mode(mode, FeedbackGain::new(g).unwrap(), 50.0);
        cfg.seed = seed;
        let a = run(&cfg).unwrap();
        let b = run(&cfg).unwrap();
        prop_assert_eq!(&a, &b);
        cfg.seed = seed.wrapping_add(1);
        prop_assert_ne!(&run(&cfg).unwrap().samples, &a.samples);
    }
}
