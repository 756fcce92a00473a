//! Seed derivation.
//!
//! Every random stream in the pipeline is a ChaCha8 generator whose 64-bit
//! seed is derived from the single global seed, a stream tag and an index:
//!
//! ```text
//! stream_seed = splitmix64(splitmix64(splitmix64(seed) ^ tag) ^ index)
//! ```
//!
//! so that, for example, the noise added to test source `k` does not depend
//! on how many other sources were processed before it or on which thread.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags. Changing any of these changes every downstream artifact.
pub mod stream {
    pub const SOURCES: u64 = 0x736f_7572_6365_7300;
    pub const NOISE: u64 = 0x6e6f_6973_6500_0000;
    pub const INIT: u64 = 0x696e_6974_0000_0000;
    pub const SHUFFLE: u64 = 0x7368_7566_666c_6500;
    pub const MCMC: u64 = 0x6d63_6d63_0000_0000;
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ tag) ^ index)
}

pub fn stream_rng(seed: u64, tag: u64, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, tag, index))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_differ_by_tag_and_index() {
        let a = derive_seed(7, stream::NOISE, 0);
        assert_ne!(a, derive_seed(7, stream::NOISE, 1));
        assert_ne!(a, derive_seed(7, stream::MCMC, 0));
        assert_ne!(a, derive_seed(8, stream::NOISE, 0));
        assert_eq!(a, derive_seed(7, stream::NOISE, 0));
    }
}
