//! Seeded random streams and the few distributions the toolkit draws from.
//!
//! Every stochastic operation takes an explicit stream. Independent jobs get
//! their own stream via [`derive_seed`], so results never depend on the order
//! in which jobs are scheduled.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over bytes, finished with a splitmix round.
pub fn hash_bytes(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    splitmix64(h)
}

/// `hash64(seed, kind, index)`: the seed of job `index` of kind `kind`.
pub fn derive_seed(seed: u64, kind: &str, index: u64) -> u64 {
    let k = hash_bytes(kind.as_bytes());
    splitmix64(splitmix64(seed ^ k).wrapping_add(index.wrapping_mul(0xD6E8_FEB8_6659_FD93)))
}

/// Uniform draw on the open interval (0, 1).
pub fn open01<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    let bits = rng.next_u64() >> 11;
    (bits as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Unit-rate exponential draw.
pub fn exponential<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    -libm::log(open01(rng))
}

/// Standard normal draw (Box-Muller, one value per call).
pub fn normal<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    let u1 = open01(rng);
    let u2 = open01(rng);
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
}

/// Uniform integer in `0..n`.
pub fn below<R: RngCore + ?Sized>(rng: &mut R, n: usize) -> usize {
    rng.random_range(0..n)
}

/// Fisher-Yates shuffle of `0..n`.
pub fn permutation<R: RngCore + ?Sized>(rng: &mut R, n: usize) -> alloc::vec::Vec<usize> {
    let mut idx: alloc::vec::Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = below(rng, i + 1);
        idx.swap(i, j);
    }
    idx
}

/// Chooses `count` distinct indices from `0..n` (partial Fisher-Yates).
pub fn choose_distinct<R: RngCore + ?Sized>(rng: &mut R, n: usize, count: usize) -> alloc::vec::Vec<usize> {
    let count = count.min(n);
    let mut idx: alloc::vec::Vec<usize> = (0..n).collect();
    for i in 0..count {
        let j = i + below(rng, n - i);
        idx.swap(i, j);
    }
    idx.truncate(count);
    idx
}
