//! Seeded random streams.
//!
//! Every stochastic routine takes an explicit `u64` seed. Child streams are
//! derived by hashing the parent seed with a path of stream labels, so a
//! replicate's results depend only on `(master, replicate, stage)` and never on
//! how many other replicates or stages exist.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type SeededRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `master` and a path of labels.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p.wrapping_add(0x632B_E59B_D9B4_E019))))
}

pub fn rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn child_rng(master: u64, path: &[u64]) -> SeededRng {
    rng(derive_seed(master, path))
}

pub fn std_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn std_normal_vec<R: rand::Rng + ?Sized>(rng: &mut R, n: usize) -> nalgebra::DVector<f64> {
    nalgebra::DVector::from_fn(n, |_, _| std_normal(rng))
}

/// Stage labels used when deriving seeds; kept as constants so that stage
/// numbering never shifts when new stages are added.
pub mod stage {
    pub const PROBLEM: u64 = 1;
    pub const DESIGN: u64 = 2;
    pub const SURROGATE: u64 = 3;
    pub const ENSEMBLE: u64 = 4;
    pub const SAMPLER: u64 = 5;
    pub const DIAGNOSTICS: u64 = 6;
    pub const DATA: u64 = 7;
    pub const FIT: u64 = 8;
}
