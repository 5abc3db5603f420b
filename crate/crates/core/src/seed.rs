//! Seed derivation.
//!
//! Every stage draws from its own stream: `stage_seed(root, label)` mixes the
//! run seed with a fixed label, and `sub_seed(stage, index)` derives per-item
//! streams with a counter. Adding a stage never perturbs another stage.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the label bytes.
fn label_hash(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn stage_seed(root: u64, label: &str) -> u64 {
    mix64(root ^ mix64(label_hash(label)))
}

pub fn sub_seed(stage: u64, index: u64) -> u64 {
    mix64(stage.wrapping_add(mix64(index.wrapping_add(0x5851_F42D_4C95_7F2D))))
}

pub fn rng_from(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
