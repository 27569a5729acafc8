//! Random streams for the simulator.
//!
//! Each noise source draws from its own ChaCha8 stream, all keyed by the
//! run's root seed. The stream number of a thermal source is derived from
//! its mode's parameters rather than its position, so adding a mode leaves
//! the streams of the others untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::monomode::OscillatorMode;

/// The SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the `index`-th member of an ensemble rooted at `root`.
pub fn member_seed(root: u64, index: u64) -> u64 {
    splitmix64(root ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// Kind of random source; the code occupies the top byte of the stream number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Source {
    /// Langevin force of a mode; `occurrence` separates identical modes.
    Thermal {
        key: u64,
        occurrence: u32,
    },
    Background,
    Electronic,
    InitialState,
}

impl Source {
    pub fn thermal(mode: &OscillatorMode, occurrence: u32) -> Self {
        let mut key = 0u64;
        for v in [mode.omega_m(), mode.gamma(), mode.mass(), mode.temperature()] {
            key = splitmix64(key ^ v.to_bits());
        }
        Source::Thermal { key, occurrence }
    }

    pub fn stream(self) -> u64 {
        let (code, low) = match self {
            Source::Thermal { key, occurrence } => (1u64, splitmix64(key ^ occurrence as u64)),
            Source::Background => (2, 0),
            Source::Electronic => (3, 0),
            Source::InitialState => (4, 0),
        };
        (code << 56) | (low & 0x00FF_FFFF_FFFF_FFFF)
    }

    pub fn rng(self, seed: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(self.stream());
        rng
    }
}
