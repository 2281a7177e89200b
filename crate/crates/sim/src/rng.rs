//! Every random choice in the project flows from one root seed through
//! named substreams, so any component can be re-seeded or re-run in
//! isolation without disturbing the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Independent generator for (root, name).
pub fn substream(root: u64, name: &str) -> ChaCha8Rng {
    substream_indexed(root, name, 0)
}

/// Indexed family of generators, e.g. one per episode or per step.
pub fn substream_indexed(root: u64, name: &str, index: u64) -> ChaCha8Rng {
    let h = fnv1a(name.as_bytes());
    let seed = splitmix(root ^ splitmix(h ^ splitmix(index)));
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stable per-episode seed recorded in dataset manifests.
pub fn episode_seed(global_seed: u64, episode_index: u64) -> u64 {
    splitmix(global_seed ^ splitmix(fnv1a(b"episode") ^ splitmix(episode_index)))
}
