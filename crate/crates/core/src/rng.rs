//! Named, independent random streams.
//!
//! Every stochastic component of an episode draws from its own stream so
//! that perturbing one (say, the adversary) leaves the draws of the others
//! untouched. A stream seed is a mix of the episode seed and a stable hash
//! of the stream name.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub const OUTCOME: &str = "outcome";
pub const EXPLORE: &str = "explore";
pub const ADVERSARY: &str = "adversary";
pub const NETGEN: &str = "netgen";
pub const QUALITY: &str = "quality";

/// FNV-1a, used only to turn stream names into stable 64-bit tags.
fn name_hash(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed for the stream `name` of the episode seeded with `seed`.
pub fn stream_seed(seed: u64, name: &str) -> u64 {
    splitmix(splitmix(seed) ^ name_hash(name))
}

pub fn stream(seed: u64, name: &str) -> StreamRng {
    StreamRng::seed_from_u64(stream_seed(seed, name))
}

/// Sub-stream keyed by an index, e.g. one per observer.
pub fn indexed_stream(seed: u64, name: &str, index: u64) -> StreamRng {
    StreamRng::seed_from_u64(splitmix(stream_seed(seed, name) ^ splitmix(index)))
}
