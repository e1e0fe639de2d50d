//! Seed derivation.
//!
//! Every random draw in the harness is keyed by a 64-bit seed derived with
//! the splitmix64 finalizer:
//!
//! ```text
//! z = x + 0x9E37_79B9_7F4A_7C15
//! z = (z ^ (z >> 30)) * 0xBF58_476D_1CE4_E5B9
//! z = (z ^ (z >> 27)) * 0x94D0_49BB_1331_11EB
//! z ^ (z >> 31)
//! ```
//!
//! Multiplication and addition wrap modulo 2^64. [`mix`] folds a second word
//! into a seed as `splitmix64(a ^ splitmix64(b))`, so derived seeds can be
//! recomputed by any implementation without sharing an RNG stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Namespace tags. Derived seeds in different namespaces never share a
/// derivation path.
pub const NS_TRAIN_PROBLEM: u64 = 0x7472_6169_6e2d_7072; // "train-pr"
pub const NS_TRAIN_SAMPLE: u64 = 0x7472_6169_6e2d_736d; // "train-sm"
pub const NS_EVAL_PROBLEM: u64 = 0x6576_616c_2d70_726f; // "eval-pro"
pub const NS_EVAL_SAMPLE: u64 = 0x6576_616c_2d73_6d70; // "eval-smp"
pub const NS_SHOTS: u64 = 0x7368_6f74_2d62_616e; // "shot-ban"
pub const NS_REROLL: u64 = 0x7265_726f_6c6c_2d2d; // "reroll--"

const TOP_BIT: u64 = 1 << 63;

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn mix(a: u64, b: u64) -> u64 {
    splitmix64(a ^ splitmix64(b))
}

/// Folds every word of `parts` into `seed`, left to right.
pub fn mix_all(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(seed, |acc, &p| mix(acc, p))
}

/// Instance seed for a training rollout. Training instance seeds always have
/// the top bit clear.
pub fn training_instance_seed(run_seed: u64, iteration: u32, rollout: u32) -> u64 {
    mix_all(NS_TRAIN_PROBLEM, &[run_seed, iteration as u64, rollout as u64]) & !TOP_BIT
}

/// Sampling seed attached to a training rollout's agent request.
pub fn rollout_seed(run_seed: u64, iteration: u32, rollout: u32) -> u64 {
    mix_all(NS_TRAIN_SAMPLE, &[run_seed, iteration as u64, rollout as u64])
}

/// First instance seed of an evaluation block. Evaluation seeds always have
/// the top bit set (so they are disjoint from training seeds) and leave room
/// for `2^32` consecutive instances without carrying into the top bit.
pub fn eval_instance_base(eval_seed: u64, tier: u8) -> u64 {
    let h = mix_all(NS_EVAL_PROBLEM, &[eval_seed, tier as u64]);
    (h & 0x3FFF_FFFF_0000_0000) | TOP_BIT
}

pub fn eval_request_seed(eval_seed: u64, instance_seed: u64, turn: u32) -> u64 {
    mix_all(NS_EVAL_SAMPLE, &[eval_seed, instance_seed, turn as u64])
}

/// Seed of the `k`-th worked example in the shot bank. Shot seeds live on the
/// evaluation side of the seed space.
pub fn shot_seed(k: u32) -> u64 {
    mix(NS_SHOTS, k as u64) | TOP_BIT
}

pub fn is_eval_seed(seed: u64) -> bool {
    seed & TOP_BIT != 0
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
