//! Simulator, estimators and scenario runner exercised together.

use std::f64::consts::PI;
use std::fs;

use colddamp::environment::{ModalDecomposition, WeightedMode};
use colddamp::experiment::bundle::MANIFEST_FILE;
use colddamp::experiment::measure::{simulated_spectrum, SpectrumSettings};
use colddamp::experiment::{run_scenario, verify_manifest, write_bundle, Scenario};
use colddamp::monomode::{thermal_psd, to_one_sided_hz};
use colddamp::sim::{run, SimConfig, Simulator};
use colddamp::spectral::{welch_psd, zero_span, Spectrum, WelchSettings};
use colddamp::transient::{forced_response_off, forced_response_on, MonochromaticDrive, SwitchEvent, SwitchKind};
use colddamp::{DampingModel, Error, FeedbackGain, OscillatorMode};

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

fn one_sided(mode: &OscillatorMode, f: f64) -> f64 {
    to_one_sided_hz(thermal_psd(mode, &DampingModel::Viscous, 2.0 * PI * f).unwrap())
}

#[test]
fn open_loop_spectrum_follows_the_thermal_lorentzian_bin_by_bin() {
    let mode = OscillatorMode::natural(50.0).unwrap();
    let cfg = SimConfig::single_mode(mode, FeedbackGain::OPEN_LOOP, 1.0);
    let settings = SpectrumSettings { segment_length: 16384, averages: 2000, span_widths: 10.0 };
    let spec = simulated_spectrum(&cfg, &settings).unwrap();
    let half_span = 10.0 * mode.gamma() / (2.0 * PI);
    let band = spec.band(mode.frequency_hz() - half_span, mode.frequency_hz() + half_span);
    assert!(band.len() > 100);
    let worst = band.frequencies.iter().zip(&band.psd).map(|(&f, &p)| rel(p, one_sided(&mode, f))).fold(0.0, f64::max);
    assert!(worst < 0.10, "worst bin {worst}");
}

/// Block averages, to compare two noisy spectra of the same shape.
fn blocks(spec: &Spectrum, size: usize) -> Vec<f64> {
    spec.psd.chunks_exact(size).map(|c| c.iter().sum::<f64>() / size as f64).collect()
}

#[test]
fn uncoupled_modes_add_in_the_spectrum() {
    // SI units: natural units would pin the resonant mode of each run to Ω_M = 1
    let first = OscillatorMode::new(1.0, 1.0, 0.02, 1.0).unwrap();
    let second = OscillatorMode::new(1.0, 1.3, 0.03, 1.0).unwrap();
    let two = ModalDecomposition::new(vec![
        WeightedMode { mode: first, weight: 1.0 },
        WeightedMode { mode: second, weight: 0.7 },
    ])
    .unwrap();
    let settings = SpectrumSettings { segment_length: 8192, averages: 800, span_widths: 10.0 };
    let mut both = SimConfig::single_mode(first, FeedbackGain::OPEN_LOOP, 1.0);
    both.modes = two;
    both.sample_rate = 40.0 * second.frequency_hz();
    let mut alone = both.clone();
    alone.modes = ModalDecomposition::single(first);
    alone.seed = 11;
    let mut other = both.clone();
    other.modes = ModalDecomposition::new(vec![WeightedMode { mode: second, weight: 0.7 }]).unwrap();
    other.seed = 12;

    let sum_of_parts: Vec<f64> = blocks(&simulated_spectrum(&alone, &settings).unwrap(), 32)
        .iter()
        .zip(blocks(&simulated_spectrum(&other, &settings).unwrap(), 32))
        .map(|(a, b)| a + b)
        .collect();
    let whole = blocks(&simulated_spectrum(&both, &settings).unwrap(), 32);
    // per-block scatter is about 1/sqrt(averages · block) per spectrum
    let sigma = (2.0 / (800.0 * 32.0f64)).sqrt();
    let worst = whole.iter().zip(&sum_of_parts).map(|(w, s)| rel(*w, *s)).fold(0.0, f64::max);
    assert!(worst < 6.0 * sigma + 0.01, "worst block {worst}, sigma {sigma}");
}

#[test]
fn fitted_width_grows_linearly_with_gain() {
    let doc = r#"{
        "name": "linearity",
        "seed": 3,
        "estimator": {"averages": 100},
        "kind": {"type": "gain_sweep", "gains": [0, 1, 2, 4, 8]}
    }"#;
    let bundle = run_scenario(&Scenario::from_json(doc).unwrap()).unwrap();
    let fits = bundle.table("fits").unwrap();
    let gains = fits.column("gain").unwrap();
    let widths = fits.column("width_hz").unwrap();
    let x: Vec<f64> = gains.iter().map(|g| 1.0 + g).collect();
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, widths.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(&widths).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let gamma_hz = 1.0 / 50.0 / (2.0 * PI);
    assert!(rel(slope, gamma_hz) < 0.05, "slope {slope} vs {gamma_hz}");
    assert!(intercept.abs() < 0.05 * gamma_hz, "intercept {intercept}");
}

#[test]
fn zero_span_level_matches_the_in_band_spectral_power() {
    let mode = OscillatorMode::natural(10.0).unwrap();
    let mut cfg = SimConfig::single_mode(mode, FeedbackGain::OPEN_LOOP, 1.4e6);
    cfg.seed = 5;
    let trajectory = run(&cfg).unwrap();
    let linewidth = mode.gamma() / (2.0 * PI);
    let rbw = linewidth / 5.0;
    let trace = zero_span(&trajectory, mode.frequency_hz(), rbw, 0.0).unwrap();
    let settle = 20.0 / rbw;
    let level = trace.mean_between(settle, f64::INFINITY).unwrap();
    let spec = welch_psd(&trajectory, &WelchSettings::new(65536)).unwrap();
    let f0 = mode.frequency_hz();
    let in_band = spec.integrate(f0 - 0.5 * rbw, f0 + 0.5 * rbw);
    assert!(rel(level, in_band) < 0.05, "zero span {level}, spectrum {in_band}");
}

#[test]
fn mean_driven_motion_follows_the_forced_response() {
    let mode = OscillatorMode::natural(200.0).unwrap();
    let gain = FeedbackGain::new(2.0).unwrap();
    let rate = mode.gamma() * gain.factor();
    let amplitude = 10.0;
    let drive = MonochromaticDrive::resonant(&mode, amplitude * mode.mass() * mode.omega_m() * rate, 0.4).unwrap();
    let mut cfg = SimConfig::single_mode(mode, gain, 1.0);
    let step = 1.0 / cfg.sample_rate;
    let off_at = (8.0 / rate / step).round() * step;
    cfg.duration = off_at + 8.0 / rate;
    cfg.drive = Some(drive);
    cfg.schedule = vec![SwitchEvent::new(0.0, SwitchKind::DriveOn), SwitchEvent::new(off_at, SwitchKind::DriveOff)];
    cfg.seed = 9;
    let runs = 400;
    let members = Simulator::new(cfg).unwrap().ensemble(runs, |_, t| t).unwrap();
    let len = members[0].len();
    let ring_down = MonochromaticDrive { phase: drive.phase + mode.omega_m() * off_at, ..drive };
    let mut worst: f64 = 0.0;
    for i in (0..len).step_by(7) {
        let t = members[0].time(i);
        let mean = members.iter().map(|m| m.samples[i]).sum::<f64>() / runs as f64;
        let theory = if t < off_at {
            forced_response_on(&mode, gain, &drive, t).unwrap()
        } else {
            forced_response_off(&mode, gain, &ring_down, t - off_at).unwrap()
        };
        worst = worst.max((mean - theory).abs());
    }
    // thermal scatter of the mean is 1/sqrt(runs) in units of the thermal amplitude
    let allowed = 5.0 / (runs as f64).sqrt() + 0.03 * amplitude;
    assert!(worst < allowed, "worst deviation {worst} (allowed {allowed})");
}

#[test]
fn bundles_are_reproducible_and_fully_listed() {
    let doc = r#"{
        "name": "bundle",
        "seed": 4,
        "environment": {"epsilon_b": 0.005},
        "estimator": {"segment_length": 16384, "averages": 20},
        "kind": {"type": "cooling_spectra", "gains": [0, 3]}
    }"#;
    let scenario = Scenario::from_json(doc).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let (manifest, _) = write_bundle(&run_scenario(&scenario).unwrap(), &a).unwrap();
    write_bundle(&run_scenario(&scenario).unwrap(), &b).unwrap();

    let mut on_disk: Vec<String> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != MANIFEST_FILE)
        .collect();
    on_disk.sort();
    let mut listed: Vec<String> = manifest.files.iter().map(|f| f.path.clone()).collect();
    listed.sort();
    assert_eq!(on_disk, listed);
    assert!(listed.iter().any(|p| p.ends_with(".csv")));
    for file in &listed {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }

    assert!(verify_manifest(&a).unwrap().is_empty());
    let victim = listed.iter().find(|p| p.ends_with(".csv")).unwrap();
    fs::write(a.join(victim), b"tampered\n").unwrap();
    assert_eq!(verify_manifest(&a).unwrap(), vec![victim.clone()]);
}

#[test]
fn bad_documents_name_the_offending_field() {
    let cases = [
        (r#"{"name": "x", "kind": {"type": "gain_sweep", "gains": [-1]}}"#, "kind.gains"),
        (
            r#"{"name": "x", "mode": {"temperature_k": -4}, "kind": {"type": "gain_sweep", "gains": [1]}}"#,
            "mode.temperature_k",
        ),
        (r#"{"name": "x", "kind": {"type": "warp_drive"}}"#, "kind"),
        (
            r#"{"name": "x", "estimator": {"averages": "many"}, "kind": {"type": "gain_sweep", "gains": [1]}}"#,
            "estimator.averages",
        ),
    ];
    for (doc, path) in cases {
        match Scenario::from_json(doc) {
            Err(Error::Config { path: p, .. }) => assert!(p.starts_with(path), "{p} for {doc}"),
            other => panic!("expected a config error at {path}, got {other:?}"),
        }
    }
}
