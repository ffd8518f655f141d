//! Per-image seed derivation.
//!
//! `derive_image_seed(g, i) = splitmix64(g ^ splitmix64(i))`. Each image then
//! splits its seed into independent per-stage streams so that, for example,
//! changing how many layout candidates are rejected never perturbs the
//! expressions drawn for the same image.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One step of the SplitMix64 generator.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_image_seed(global_seed: u64, image_index: u64) -> u64 {
    splitmix64(global_seed ^ splitmix64(image_index))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Segments = 1,
    Layout = 2,
    Relight = 3,
    Labels = 4,
    Expressions = 5,
}

pub fn stage_seed(image_seed: u64, stage: Stage, attempt: u32) -> u64 {
    splitmix64(image_seed ^ splitmix64(((attempt as u64) << 8) | stage as u64))
}

pub fn stage_rng(image_seed: u64, stage: Stage, attempt: u32) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stage_seed(image_seed, stage, attempt))
}
