//! Keyed RNG substreams. A stream depends only on the master seed and its
//! key path, so results do not depend on execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn substream(master: u64, keys: &[u64]) -> Rng {
    let mut h = splitmix64(master ^ 0x5EED_F00D_CAFE_BEEF);
    for (depth, &k) in keys.iter().enumerate() {
        h = splitmix64(h ^ splitmix64(k.wrapping_add(depth as u64 + 1)));
    }
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_mut(8) {
        h = splitmix64(h);
        chunk.copy_from_slice(&h.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// Stable 64-bit key for a textual label (e.g. a sweep point).
pub fn label_key(label: &str) -> u64 {
    let digest = Sha256::digest(label.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}
