//! Reproducible random-number streams.
//!
//! Every replication (and every independent purpose inside a replication,
//! like one queue's arrival stream) gets its own counter-based ChaCha
//! stream derived from the master seed. Streams never depend on how work
//! is scheduled, so results are identical for any worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Lanes available inside one replication; lane indices must stay below
/// this so that `(replication, lane)` pairs map to distinct streams.
pub const LANES_PER_REPLICATION: u64 = 1024;

/// Name of the environment variable capping the worker count.
pub const THREADS_ENV: &str = "FLOWVAR_THREADS";

/// Stream for `(replication, lane)` under the given master seed.
pub fn substream(master: u64, replication: u64, lane: u64) -> ChaCha8Rng {
    debug_assert!(lane < LANES_PER_REPLICATION);
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(replication * LANES_PER_REPLICATION + lane);
    rng
}

/// Worker-count cap from `FLOWVAR_THREADS`, if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}
