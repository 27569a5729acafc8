//! Physical constants (exact 2019 SI values) and the unit system switch.

use serde::{Deserialize, Serialize};

/// Boltzmann constant [J/K].
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Planck constant [J s].
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Reduced Planck constant [J s].
pub const HBAR: f64 = PLANCK / (2.0 * std::f64::consts::PI);
/// Speed of light in vacuum [m/s].
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Unit system a mode (and everything derived from it) is expressed in.
///
/// `Natural` sets the Boltzmann constant to one; together with `M = Ω_M = 1`
/// and `T = 1` the thermal rms displacement of the mode is one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitSystem {
    #[default]
    Si,
    Natural,
}

impl UnitSystem {
    /// Value of `k_B` in this unit system.
    pub fn boltzmann(self) -> f64 {
        match self {
            UnitSystem::Si => BOLTZMANN,
            UnitSystem::Natural => 1.0,
        }
    }

    pub(crate) fn code(self) -> u32 {
        match self {
            UnitSystem::Si => 0,
            UnitSystem::Natural => 1,
        }
    }

    pub(crate) fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(UnitSystem::Si),
            1 => Some(UnitSystem::Natural),
            _ => None,
        }
    }
}
