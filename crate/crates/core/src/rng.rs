//! Seed derivation and the RNG type used throughout training and evaluation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer. A bijection on `u64`, so distinct inputs give
/// distinct derived seeds.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Environment seed for a training episode. Training inputs keep the top bit
/// clear; evaluation inputs set it, so the two ranges never collide.
pub fn train_episode_seed(run_seed: u64, episode: u64) -> u64 {
    let input = ((run_seed & 0x7FFF_FFFF) << 32) | (episode & 0xFFFF_FFFF);
    mix(input)
}

/// Environment seed for evaluation episode `index`.
pub fn eval_episode_seed(index: u64) -> u64 {
    mix((1u64 << 63) | index)
}

pub fn standard_normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normal_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| standard_normal(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_and_eval_seeds_are_disjoint() {
        let train: std::collections::HashSet<u64> = (0..3u64)
            .flat_map(|s| (0..2000u64).map(move |e| train_episode_seed(s, e)))
            .collect();
        assert_eq!(train.len(), 6000);
        assert!((0..2000).all(|i| !train.contains(&eval_episode_seed(i))));
    }
}
