//! Seeded random streams. Every random draw in the library comes from a
//! ChaCha8 generator keyed by the run seed and a tuple of stream labels, so
//! results do not depend on the order in which streams are consumed.

use alloc::vec::Vec;

use nalgebra::DVector;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rand_distr::{Distribution, Open01, StandardNormal};

pub type Rng = ChaCha8Rng;

/// Stream labels.
pub mod label {
    pub const TRUTH: u64 = 1;
    pub const OBS_LAYOUT: u64 = 2;
    pub const ENKF: u64 = 3;
    pub const PARTICLE: u64 = 4;
    pub const REPLICATE: u64 = 5;
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Hashes a label tuple into a single stream id.
pub fn mix(keys: &[u64]) -> u64 {
    keys.iter().fold(0x5eed_u64, |h, &k| splitmix(h ^ splitmix(k)))
}

pub fn stream(seed: u64, keys: &[u64]) -> Rng {
    let mut r = Rng::seed_from_u64(seed);
    r.set_stream(mix(keys));
    r
}

/// Derives a child seed, for handing a seed to another component.
pub fn derive_seed(seed: u64, keys: &[u64]) -> u64 {
    stream(seed, keys).next_u64()
}

pub fn standard_normal<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normal_vector<R: RngCore + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| standard_normal(rng))
}

/// Uniform on the open interval (0, 1).
pub fn uniform<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    Open01.sample(rng)
}

/// `k` distinct indices from `0..n`, ascending.
pub fn sample_without_replacement<R: RngCore + ?Sized>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let k = k.min(n);
    for i in 0..k {
        let j = i + (rng.next_u64() % (n - i) as u64) as usize;
        idx.swap(i, j);
    }
    let mut out = idx[..k].to_vec();
    out.sort_unstable();
    out
}
