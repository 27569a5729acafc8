//! Residuals of measured series against their analytic overlays.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::bundle::ResultBundle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub table: String,
    pub series: String,
    pub theory: String,
    pub max_relative: f64,
    pub rms_relative: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub residuals: Vec<Residual>,
    pub passed: bool,
}

impl ComparisonReport {
    /// Names of the series outside tolerance, as `table/series`.
    pub fn failures(&self) -> Vec<String> {
        self.residuals.iter().filter(|r| !r.passed).map(|r| format!("{}/{}", r.table, r.series)).collect()
    }
}

/// Relative residual `|m − t| / |t|`, absolute where the theory is zero.
pub fn relative_residual(measured: f64, theory: f64) -> f64 {
    let d = (measured - theory).abs();
    if theory == 0.0 {
        d
    } else {
        d / theory.abs()
    }
}

/// Max and RMS relative residual of every overlay in the bundle. A
/// non-finite measurement fails its overlay.
pub fn compare_with_theory(bundle: &ResultBundle) -> Result<ComparisonReport> {
    let mut residuals = Vec::new();
    for o in &bundle.overlays {
        let table = bundle
            .table(&o.table)
            .ok_or_else(|| Error::Precondition(format!("overlay refers to missing table `{}`", o.table)))?;
        let column = |name: &str| {
            table.column(name).ok_or_else(|| Error::Precondition(format!("table `{}` has no column `{name}`", o.table)))
        };
        let (m, t) = (column(&o.measured)?, column(&o.theory)?);
        let r: Vec<f64> = m.iter().zip(&t).map(|(&a, &b)| relative_residual(a, b)).collect();
        let max = if r.iter().any(|v| !v.is_finite()) { f64::NAN } else { r.iter().fold(0.0f64, |a, &b| a.max(b)) };
        let rms = if r.is_empty() { 0.0 } else { (r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64).sqrt() };
        residuals.push(Residual {
            table: o.table.clone(),
            series: o.measured.clone(),
            theory: o.theory.clone(),
            max_relative: max,
            rms_relative: rms,
            tolerance: o.tolerance,
            passed: max <= o.tolerance,
        });
    }
    let passed = residuals.iter().all(|r| r.passed);
    Ok(ComparisonReport { residuals, passed })
}
