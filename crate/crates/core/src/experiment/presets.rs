//! Built-in scenarios, one per reproduced figure plus the cyclic-cooling study.

use crate::error::{Error, Result};

use super::scenario::{EnvironmentConfig, EstimatorConfig, ModeConfig, Scenario, ScenarioKind};

/// Identifiers accepted by [`preset`].
pub const FIGURE_IDS: [&str; 9] = ["fig3", "fig4", "fig5", "fig6", "fig7", "fig8", "fig9", "fig10", "sec7"];

/// Background ratio of the cooling-spectra figure.
pub const SPECTRA_EPSILON_B: f64 = 1.0 / 150.0;
/// Background ratio of the gain sweep and high-gain figures.
pub const SWEEP_EPSILON_B: f64 = 1.0 / 110.0;
/// Electronic noise over the resonant thermal level.
pub const ELECTRONIC_NOISE_RATIO: f64 = 2.2e-4;
/// Quality factor of the natural-units high-gain response sweep.
pub const RESPONSE_QUALITY_FACTOR: f64 = 100.0;
/// Gain of the loop and drive transients.
pub const TRANSIENT_GAIN: f64 = 5.2;
/// Quality factor of natural-units transient scenarios; resolves the
/// closed-loop rate from the free one by a wide margin.
pub const TRANSIENT_QUALITY_FACTOR: f64 = 200.0;
/// Ensemble size of natural-units loop transients.
pub const TRANSIENT_RUNS: usize = 20_000;
/// Ensemble size of natural-units drive transients.
pub const DRIVE_RUNS: usize = 2_000;
/// Gain and quality factor of the cyclic-cooling study.
pub const CYCLIC_GAIN: f64 = 100.0;
pub const CYCLIC_QUALITY_FACTOR: f64 = 1000.0;

/// Scenarios for figure `id`. `full` selects the silica mirror in SI units
/// instead of the natural-units desk-scale oscillator.
pub fn preset(id: &str, full: bool) -> Result<Vec<Scenario>> {
    let kind = match id {
        "fig3" => ScenarioKind::CoolingSpectra { gains: vec![0.0, 2.0, 5.0, 10.0] },
        "fig4" => ScenarioKind::GainSweep { gains: vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0] },
        "fig5" => ScenarioKind::HighGainDip { gain: 40.0 },
        "fig6" => ScenarioKind::MechanicalResponse {
            gains: vec![0.0, 1.0, 2.0, 5.0, 10.0],
            frequencies: 50,
            span_widths: 4.0,
            drive_snr_db: 30.0,
        },
        "fig7" => ScenarioKind::MechanicalResponse {
            gains: vec![0.0, 1.0, 2.0, 5.0, 10.0, 20.0, 30.0],
            frequencies: 50,
            span_widths: 4.0,
            drive_snr_db: 30.0,
        },
        "fig8" => ScenarioKind::TransientLoop { gain: TRANSIENT_GAIN, on_relaxations: 8.0, off_relaxations: 6.0 },
        "fig9" => ScenarioKind::TransientDrive { gain: 0.0, drive_snr_db: 30.0 },
        "fig10" => ScenarioKind::TransientDrive { gain: TRANSIENT_GAIN, drive_snr_db: 30.0 },
        "sec7" => ScenarioKind::CyclicCooling {
            gain: CYCLIC_GAIN,
            cool_relaxations: 5.0,
            free_relaxations: vec![0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0],
            simulated_points: 3,
            cycles: 6,
        },
        _ => {
            return Err(Error::Precondition(format!(
                "unknown figure id {id:?}; expected one of {}",
                FIGURE_IDS.join(", ")
            )))
        }
    };
    let environment = match id {
        "fig3" => EnvironmentConfig { epsilon_b: SPECTRA_EPSILON_B, ..Default::default() },
        "fig4" | "fig6" => EnvironmentConfig { epsilon_b: SWEEP_EPSILON_B, ..Default::default() },
        "fig5" | "fig7" => EnvironmentConfig {
            epsilon_b: SWEEP_EPSILON_B,
            electronic_noise_ratio: ELECTRONIC_NOISE_RATIO,
            ..Default::default()
        },
        _ => EnvironmentConfig::default(),
    };
    let transient = matches!(kind, ScenarioKind::TransientLoop { .. } | ScenarioKind::TransientDrive { .. });
    let mut estimator = EstimatorConfig::default();
    let mode = if full {
        let mirror = ModeConfig::silica_mirror();
        // 10 samples per period; 4.4 Hz bins against the 43 Hz linewidth
        estimator.sample_rate_hz = Some(10.0 * mirror.omega_m_rad_per_s / (2.0 * std::f64::consts::PI));
        estimator.segment_length = 1 << 22;
        estimator.averages = 20;
        mirror
    } else if transient {
        ModeConfig::natural(TRANSIENT_QUALITY_FACTOR)
    } else if id == "fig7" {
        // resolves widths up to 31 times the free one inside the sampled band
        estimator.segment_length = 1 << 17;
        estimator.averages = 200;
        ModeConfig::natural(RESPONSE_QUALITY_FACTOR)
    } else if matches!(kind, ScenarioKind::CyclicCooling { .. }) {
        ModeConfig::natural(CYCLIC_QUALITY_FACTOR)
    } else {
        ModeConfig::default()
    };
    match kind {
        ScenarioKind::TransientLoop { .. } => estimator.runs = TRANSIENT_RUNS,
        ScenarioKind::TransientDrive { .. } => estimator.runs = DRIVE_RUNS,
        _ => {}
    }
    Ok(vec![Scenario {
        name: if full { format!("{id}_full") } else { id.to_string() },
        seed: 0,
        output_dir: None,
        mode,
        environment,
        feedback: Default::default(),
        estimator,
        kind,
    }])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_id_builds_a_valid_scenario() {
        for id in FIGURE_IDS {
            for full in [false, true] {
                let list = preset(id, full).unwrap();
                for s in list {
                    s.validate().unwrap();
                    assert_eq!(Scenario::from_json(&s.to_json().unwrap()).unwrap(), s);
                }
            }
        }
    }

    #[test]
    fn every_kind_is_covered() {
        let mut labels: Vec<&str> = FIGURE_IDS.iter().map(|id| preset(id, false).unwrap()[0].kind.label()).collect();
        labels.sort();
        labels.dedup();
        assert_eq!(labels.len(), 7);
    }

    #[test]
    fn unknown_id_is_rejected() {
        assert!(preset("fig2", false).is_err());
    }
}
