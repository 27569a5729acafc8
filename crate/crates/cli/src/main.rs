//! `colddamp`: simulates and analyzes cold-damped oscillators, and reproduces
//! the cold-damping figures as data bundles.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use colddamp::experiment::{preset, run_scenario, write_bundle, Scenario, ScenarioKind, FIGURE_IDS};
use colddamp::sim::{io as trajectory_io, Simulator};
use colddamp::spectral::io::{read_spectrum_csv, write_fit_json, write_spectrum_csv};
use colddamp::spectral::{fit_lorentzian, fit_tilted_lorentzian, welch_psd, WelchSettings};
use colddamp::{Error, FeedbackGain, UnitSystem};

/// Default output directory when neither `--out` nor the environment sets one.
const DEFAULT_OUT: &str = "colddamp-out";

#[derive(Parser, Debug)]
#[command(name = "colddamp", version, about = "Cold damping of a mechanical oscillator by feedback")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Scenario JSON document.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed, overriding the scenario's.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "COLDDAMP_OUT")]
    out: Option<PathBuf>,
    /// Use the silica mirror in SI units instead of the desk-scale oscillator.
    #[arg(long, global = true)]
    full: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one displacement trace.
    Simulate {
        #[arg(long, default_value_t = 0.0)]
        gain: f64,
        /// Trace length [s].
        #[arg(long)]
        duration: f64,
        /// Output file; `.bin` selects the binary format, anything else CSV.
        #[arg(long)]
        output: PathBuf,
    },
    /// Welch spectrum of a simulated trace.
    Spectrum {
        input: PathBuf,
        #[arg(long, default_value_t = 65536)]
        segment_length: usize,
        /// Units of a CSV input (binary inputs carry their own).
        #[arg(long, value_enum, default_value_t = Units::Natural)]
        units: Units,
        #[arg(long)]
        output: PathBuf,
    },
    /// Lorentzian fit of a spectrum CSV.
    Fit {
        input: PathBuf,
        /// Welch averages behind the spectrum.
        #[arg(long, default_value_t = 1)]
        averages: usize,
        /// Fitted band [Hz].
        #[arg(long)]
        from_hz: Option<f64>,
        #[arg(long)]
        to_hz: Option<f64>,
        /// Also fit the numerator tilt left by background fed through the loop.
        #[arg(long)]
        tilted: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Gain sweep of thermal spectra with fits and analytic overlays.
    Sweep {
        #[arg(long, value_delimiter = ',')]
        gains: Option<Vec<f64>>,
    },
    /// Loop switching transient, or drive switching with `--drive`.
    Transient {
        #[arg(long)]
        gain: Option<f64>,
        #[arg(long)]
        drive: bool,
    },
    /// Periodic cooling bursts versus duty cycle.
    Cyclic {
        #[arg(long)]
        gain: Option<f64>,
    },
    /// Reproduce a figure as a data bundle.
    Reproduce {
        #[arg(value_parser = figure_id)]
        figure: String,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Units {
    Si,
    Natural,
}

impl From<Units> for UnitSystem {
    fn from(u: Units) -> Self {
        match u {
            Units::Si => UnitSystem::Si,
            Units::Natural => UnitSystem::Natural,
        }
    }
}

fn figure_id(s: &str) -> Result<String, String> {
    if s == "all" || FIGURE_IDS.contains(&s) {
        Ok(s.to_string())
    } else {
        Err(format!("expected one of {} or all", FIGURE_IDS.join(", ")))
    }
}

/// Failure of a command, mapped to the process exit code.
enum Failure {
    Library(Error),
    Tolerance(Vec<String>),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Library(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Library(e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot size the thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Library(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if matches!(e, Error::Config { .. }) { 2 } else { 1 })
        }
        Err(Failure::Tolerance(failures)) => {
            eprintln!("tolerance failures: {}", failures.join(", "));
            ExitCode::from(3)
        }
    }
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    let g = &cli.global;
    match &cli.command {
        Command::Simulate { gain, duration, output } => {
            let scenario = base_scenario(g, "fig4")?;
            let gain = FeedbackGain::new(*gain)?;
            let cfg = scenario.sim_config(gain, *duration, scenario.seed)?;
            let trajectory = Simulator::new(cfg)?.run()?;
            let out = BufWriter::new(File::create(output)?);
            if is_binary(output) {
                trajectory_io::write_binary(&trajectory, out)?;
            } else {
                trajectory_io::write_csv(&trajectory, out)?;
            }
            println!("wrote {} samples to {}", trajectory.len(), output.display());
        }
        Command::Spectrum { input, segment_length, units, output } => {
            let reader = BufReader::new(File::open(input)?);
            let trajectory = if is_binary(input) {
                trajectory_io::read_binary(reader)?
            } else {
                trajectory_io::read_csv(reader, (*units).into())?
            };
            let spectrum = welch_psd(&trajectory, &WelchSettings::new(*segment_length))?;
            write_spectrum_csv(&spectrum, BufWriter::new(File::create(output)?))?;
            println!("wrote {} bins ({} averages) to {}", spectrum.len(), spectrum.averages, output.display());
        }
        Command::Fit { input, averages, from_hz, to_hz, tilted, output } => {
            let spectrum = read_spectrum_csv(BufReader::new(File::open(input)?), *averages)?;
            let band = spectrum.band(from_hz.unwrap_or(f64::NEG_INFINITY), to_hz.unwrap_or(f64::INFINITY));
            let fit = if *tilted { fit_tilted_lorentzian(&band, None)? } else { fit_lorentzian(&band, None)? };
            match output {
                Some(path) => write_fit_json(&fit, BufWriter::new(File::create(path)?))?,
                None => {
                    write_fit_json(&fit, std::io::stdout().lock())?;
                    println!();
                }
            }
        }
        Command::Sweep { gains } => {
            let mut s = base_scenario(g, "fig4")?;
            if let Some(list) = gains {
                s.kind = ScenarioKind::GainSweep { gains: list.clone() };
            }
            run_all(g, vec![s])?;
        }
        Command::Transient { gain, drive } => {
            let mut s = base_scenario(g, if *drive { "fig10" } else { "fig8" })?;
            if let Some(v) = gain {
                match &mut s.kind {
                    ScenarioKind::TransientLoop { gain, .. } | ScenarioKind::TransientDrive { gain, .. } => *gain = *v,
                    _ => {}
                }
            }
            run_all(g, vec![s])?;
        }
        Command::Cyclic { gain } => {
            let mut s = base_scenario(g, "sec7")?;
            if let (Some(v), ScenarioKind::CyclicCooling { gain, .. }) = (gain, &mut s.kind) {
                *gain = *v;
            }
            run_all(g, vec![s])?;
        }
        Command::Reproduce { figure } => {
            let ids: Vec<&str> = if figure == "all" { FIGURE_IDS.to_vec() } else { vec![figure.as_str()] };
            let mut list = Vec::new();
            for id in ids {
                list.extend(preset(id, g.full)?);
            }
            run_all(g, list)?;
        }
    }
    Ok(())
}

fn is_binary(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "bin")
}

/// The `--config` scenario, or the preset `id`, with the seed override applied.
fn base_scenario(g: &Global, id: &str) -> Result<Scenario, Failure> {
    let mut s = match &g.config {
        Some(path) => Scenario::from_file(path)?,
        None => preset(id, g.full)?.remove(0),
    };
    if let Some(seed) = g.seed {
        s.seed = seed;
    }
    Ok(s)
}

fn run_all(g: &Global, scenarios: Vec<Scenario>) -> Result<(), Failure> {
    let root = g.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let mut failures = Vec::new();
    for mut s in scenarios {
        if let Some(seed) = g.seed {
            s.seed = seed;
        }
        let dir = s.output_dir.clone().unwrap_or_else(|| root.join(&s.name));
        let bundle = run_scenario(&s)?;
        let (manifest, report) = write_bundle(&bundle, &dir)?;
        println!("{} ({}) -> {} [{} files]", s.name, s.kind.label(), dir.display(), manifest.files.len());
        for r in &report.residuals {
            println!(
                "  {:<5} {}/{} vs {}: max {:.4} rms {:.4} (tolerance {})",
                if r.passed { "pass" } else { "FAIL" },
                r.table,
                r.series,
                r.theory,
                r.max_relative,
                r.rms_relative,
                r.tolerance
            );
        }
        failures.extend(report.failures().into_iter().map(|f| format!("{}:{f}", s.name)));
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Tolerance(failures))
    }
}
