//! Scenario runner reproducing the cold-damping experiments as data files.

pub mod bundle;
pub mod compare;
pub mod measure;
pub mod presets;
pub mod runner;
pub mod scenario;

pub use bundle::{verify_manifest, write_bundle, Manifest, Overlay, ResultBundle, Table};
pub use compare::{compare_with_theory, ComparisonReport, Residual};
pub use presets::{preset, FIGURE_IDS};
pub use runner::run_scenario;
pub use scenario::{EnvironmentConfig, EstimatorConfig, LoopConfig, ModeConfig, Scenario, ScenarioKind};
