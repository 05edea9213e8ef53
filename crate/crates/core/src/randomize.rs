//! Deterministic per-(user, campaign) test/control assignment.
//!
//! The split hash is
//!
//! ```text
//! h = finalize(seed ^ rotl(user_id * C1, 31) ^ (campaign_index * C2))
//! u = (h >> 11) / 2^53
//! arm = test  iff  u < share
//! ```
//!
//! with wrapping 64-bit multiplication, `C1 = 0x9E3779B97F4A7C15`,
//! `C2 = 0xD6E8FEB86659FD93`, and `finalize` the SplitMix64 output function
//! (`z ^= z >> 30; z *= 0xBF58476D1CE4E5B9; z ^= z >> 27;
//! z *= 0x94D049BB133111EB; z ^= z >> 31`).
//!
//! `u` keeps the top 53 bits so it is exactly representable as an `f64` and
//! always lies in `[0, 1)`. Test vectors live in
//! `tests/fixtures/split_vectors.csv`; the first row is
//! `(user 42, campaign 3, seed 7, share 0.7) -> control`.
//!
//! The same mixer derives the named random substreams used by the simulator,
//! so each user's draws depend only on `(seed, stream, user_id)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const C1: u64 = 0x9E37_79B9_7F4A_7C15;
const C2: u64 = 0xD6E8_FEB8_6659_FD93;

/// Randomization seed shared by every campaign of one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SplitSeed(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arm {
    Test,
    Control,
}

impl Arm {
    pub fn is_test(self) -> bool {
        self == Arm::Test
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Test => "test",
            Arm::Control => "control",
        }
    }
}

/// SplitMix64 output function.
pub fn finalize(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn mix(user_id: u64, campaign_index: u64, seed: u64) -> u64 {
    finalize(seed ^ user_id.wrapping_mul(C1).rotate_left(31) ^ campaign_index.wrapping_mul(C2))
}

/// Maps a hash to `[0, 1)` using its top 53 bits.
pub fn unit_interval(h: u64) -> f64 {
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn assign(user_id: u64, campaign_index: u64, seed: SplitSeed, share: f64) -> Arm {
    debug_assert!((0.0..=1.0).contains(&share), "share {share} outside [0, 1]");
    if unit_interval(mix(user_id, campaign_index, seed.0)) < share {
        Arm::Test
    } else {
        Arm::Control
    }
}

/// Fraction of `arms` in test.
pub fn empirical_share<I>(arms: I) -> Result<f64>
where
    I: IntoIterator<Item = Arm>,
{
    let (mut n, mut test) = (0usize, 0usize);
    for arm in arms {
        n += 1;
        test += arm.is_test() as usize;
    }
    if n == 0 {
        return Err(Error::invalid("empirical share of an empty assignment list"));
    }
    Ok(test as f64 / n as f64)
}

/// Named random substreams. The tags occupy the campaign slot of the mixer
/// with values no campaign index reaches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Arrivals = 0xA000_0000_0000_0001,
    Noise = 0xA000_0000_0000_0002,
    Covariates = 0xA000_0000_0000_0003,
    Oracle = 0xA000_0000_0000_0004,
    Split = 0xA000_0000_0000_0005,
    Audience = 0xA000_0000_0000_0006,
}

/// Seeded generator for `(seed, stream, key)`; `sub` separates further
/// independent draws under the same key (e.g. per focal campaign).
pub fn substream(seed: u64, stream: Stream, key: u64, sub: u64) -> ChaCha8Rng {
    let s = mix(key, stream as u64, seed);
    ChaCha8Rng::seed_from_u64(finalize(s ^ sub.wrapping_mul(C1)))
}
