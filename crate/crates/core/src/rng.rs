//! Stream-addressed deterministic randomness.
//!
//! Every random draw in a simulation is addressed by (purpose, RSU, step,
//! trial): the address picks a dedicated ChaCha stream under the scenario's
//! master seed, so any draw can be reproduced in isolation and the schedule
//! of draws is independent of evaluation order. That makes trial-level
//! parallelism, per-RSU laziness, and common-random-number comparisons across
//! tracker variants all exact rather than approximate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geometry::RsuId;

/// What a random stream is consumed for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Purpose {
    /// Per-trial static acceleration draw and per-step state disturbance.
    Motion,
    /// Per-trial LOS fading coefficient phase (one per RSU).
    FadingLos,
    /// Per-step diffuse fading draw (one per RSU per step).
    FadingNlos,
    /// Per-step sounding noise (one per RSU per step).
    Noise,
}

impl Purpose {
    fn code(self) -> u64 {
        match self {
            Purpose::Motion => 0,
            Purpose::FadingLos => 1,
            Purpose::FadingNlos => 2,
            Purpose::Noise => 3,
        }
    }
}

/// Packs a stream address into the 64-bit ChaCha stream id:
/// purpose (2 bits) | rsu (2 bits) | step (28 bits) | trial (32 bits).
fn pack(purpose: Purpose, rsu: Option<RsuId>, step: u32, trial: u32) -> u64 {
    debug_assert!(step < 1 << 28, "step index exceeds the 28-bit stream field");
    let rsu_code = rsu.map_or(0u64, |u| u.number() as u64);
    (purpose.code() << 62) | (rsu_code << 60) | ((step as u64) << 32) | trial as u64
}

/// Dedicated RNG for one (purpose, RSU, step, trial) address under a master
/// seed. Identical addresses always produce identical draw sequences,
/// regardless of what other streams were consumed before.
pub fn stream_rng(
    master_seed: u64,
    purpose: Purpose,
    rsu: Option<RsuId>,
    step: u32,
    trial: u32,
) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(pack(purpose, rsu, step, trial));
    rng
}
