//! Deterministic seed derivation for reproducible experiment streams.
//!
//! Splitting rule: a root seed and a stream index are mixed through
//! splitmix64 (`derive_seed(root, stream) = splitmix64(root + stream * GAMMA)`)
//! and the result seeds a ChaCha12 generator. Every trial/role therefore has
//! its own reproducible stream, independent of execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// One round of splitmix64.
#[must_use]
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sub-seed for stream `stream` of the experiment rooted at `root`.
#[must_use]
pub fn derive_seed(root: u64, stream: u64) -> u64 {
    splitmix64(root.wrapping_add(stream.wrapping_mul(GAMMA)))
}

/// ChaCha12 generator for one derived stream.
#[must_use]
pub fn stream_rng(root: u64, stream: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive_seed(root, stream))
}

/// Stream index for (stage-count, trial, role) triples used by the
/// experiment drivers. Roles: 0 = calibration, 1 = test, 2 = tuning.
#[must_use]
pub fn trial_stream(n_stages: usize, trial: usize, role: u64) -> u64 {
    ((n_stages as u64) << 40) ^ ((trial as u64) << 8) ^ role
}
