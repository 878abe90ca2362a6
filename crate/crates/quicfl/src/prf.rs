//! Counter-based pseudo-random function shared by encoder and decoder.
//!
//! Both sides regenerate per-coordinate randomness (rotation signs, shared
//! randomness indices, private Bernoulli draws) from `(seed, index)` pairs, so
//! nothing random travels on the wire. The mixer is fixed and versioned:
//! a message written with one `PRF_VERSION` is refused by a decoder built for
//! another.

/// Version of the mixer recorded in wire headers.
pub const PRF_VERSION: u32 = 1;

/// 64-bit counter-based mixer (splitmix64 finalizer over `seed + (i+1)*phi`).
#[inline]
pub fn prf(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform draw in `[0, 1)` with 53 bits of entropy.
#[inline]
pub fn prf_uniform(seed: u64, index: u64) -> f64 {
    (prf(seed, index) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Derives an independent seed stream from a root seed and a path of tags,
/// e.g. `chain(seed, &[trial, client])`. Used so trials and clients can run
/// in any schedule while reproducing the same draws.
pub fn chain(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(seed, |acc, &tag| prf(acc, tag))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_index_sensitive() {
        assert_eq!(prf(7, 0), prf(7, 0));
        assert_ne!(prf(7, 0), prf(7, 1));
        assert_ne!(prf(7, 0), prf(8, 0));
    }

    #[test]
    fn uniform_in_unit_interval() {
        for i in 0..10_000 {
            let u = prf_uniform(42, i);
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn uniform_mean_near_half() {
        let n = 100_000;
        let mean: f64 = (0..n).map(|i| prf_uniform(3, i)).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.005, "mean {mean}");
    }

    #[test]
    fn chain_order_matters() {
        assert_ne!(chain(1, &[2, 3]), chain(1, &[3, 2]));
        assert_eq!(chain(1, &[2, 3]), chain(prf(1, 2), &[3]));
    }
}
