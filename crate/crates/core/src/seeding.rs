//! Deterministic seed derivation.

/// Mixes `(base, stream, index)` into an independent 64-bit seed
/// (SplitMix64 finaliser over a combined word).
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(index.wrapping_mul(0x94D0_49BB_1331_11EB))
        .wrapping_add(0x2545_F491_4F6C_DD1D);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub mod streams {
    pub const TRAIN_ENV: u64 = 1;
    pub const TRAIN_EVAL: u64 = 2;
    pub const EVAL_ENV: u64 = 3;
    pub const ATTACK: u64 = 4;
    pub const INIT: u64 = 5;
    pub const EXPLORE: u64 = 6;
    pub const REPLAY: u64 = 7;
}
