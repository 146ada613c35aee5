//! Seeded, splittable random streams.
//!
//! Every consumer of randomness gets its own stream derived by hashing
//! (master seed, owner id, purpose). Streams are independent of how many
//! other streams exist, so adding a device to a scenario does not perturb
//! the draws seen by any other device.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Part of the stream derivation key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamPurpose {
    /// Device placement: position, indoor flag, wall loss.
    Placement,
    /// Application traffic phase.
    Phase,
    /// MAC-layer draws: channel selection, retransmission backoff.
    Mac,
    /// The spatially correlated shadowing field (world-level).
    ShadowField,
    /// Per-replication seed derivation (campaign-level).
    Replication,
}

impl StreamPurpose {
    fn tag(self) -> u64 {
        match self {
            StreamPurpose::Placement => 1,
            StreamPurpose::Phase => 2,
            StreamPurpose::Mac => 3,
            StreamPurpose::ShadowField => 4,
            StreamPurpose::Replication => 5,
        }
    }
}

/// Owner id used for world-level streams that belong to no device.
pub const WORLD_OWNER: u64 = u64::MAX;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive the 64-bit seed for a stream identified by (owner, purpose).
pub fn derive_seed(master_seed: u64, owner: u64, purpose: StreamPurpose) -> u64 {
    let a = splitmix64(master_seed ^ 0xa076_1d64_78bd_642f);
    let b = splitmix64(a ^ owner.wrapping_mul(0xe703_7ed1_a0b4_28db));
    splitmix64(b ^ purpose.tag().wrapping_mul(0x8ebc_6af0_9c88_c6e3))
}

/// A deterministic random stream. Same (master seed, owner, purpose) yields
/// the same draw sequence on every platform.
pub struct RngStream {
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, owner: u64, purpose: StreamPurpose) -> Self {
        RngStream {
            rng: ChaCha8Rng::seed_from_u64(derive_seed(master_seed, owner, purpose)),
        }
    }

    /// Uniform draw in [lo, hi). Degenerate ranges return lo.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        assert!(lo <= hi, "uniform range inverted: [{lo}, {hi})");
        if lo == hi {
            return lo;
        }
        self.rng.gen_range(lo..hi)
    }

    /// Uniform integer in [0, n).
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0);
        self.rng.gen_range(0..n)
    }

    /// Standard normal draw via Box-Muller (avoids a distributions dependency
    /// and keeps the draw count per sample fixed at two).
    pub fn standard_normal(&mut self) -> f64 {
        let u1: f64 = self.rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = self.rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}
