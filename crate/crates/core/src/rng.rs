//! Seeded random streams.
//!
//! Every random draw in a run descends from one `u64` seed. Named substreams
//! keep the data generator, the mixture updates and the per-cluster tree
//! sweeps independent of each other, so parallel sections never change which
//! numbers a component sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type BetRng = ChaCha8Rng;

/// Substream identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Data = 1,
    Split = 2,
    Mixture = 3,
    Init = 4,
}

pub fn stream(seed: u64, stream: Stream) -> BetRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// A child generator for one unit of parallel work (a cluster sweep).
pub fn child(seed: u64) -> BetRng {
    ChaCha8Rng::seed_from_u64(seed)
}
