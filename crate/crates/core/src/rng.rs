//! Seed bookkeeping.
//!
//! Every stochastic routine in this crate draws from a [`ChaCha8Rng`] built
//! from an explicit 64-bit seed, and distinct purposes (init, shuffling, data
//! generation, dropout masks) get distinct seeds derived through
//! [`derive_seed`]. This keeps whole-pipeline runs reproducible bit-for-bit
//! from a single master seed.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derives a child seed from a base seed and a stream tag (splitmix64 finalizer).
///
/// Distinct `stream` values yield statistically independent child seeds, and the
/// mapping is pure, so the same `(base, stream)` pair always names the same RNG.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Builds the crate-standard RNG for a seed.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// Stream tags. Trainers share TAG_INIT/TAG_SHUFFLE so that reductions between
// them (ERM vs. single-domain IRM, ERM vs. alpha=0 distillation) hold exactly.
pub(crate) const TAG_INIT: u64 = 1;
pub(crate) const TAG_SHUFFLE: u64 = 2;
pub(crate) const TAG_DATA: u64 = 3;
pub(crate) const TAG_TRAIN: u64 = 4;
pub(crate) const TAG_ADAPT: u64 = 5;
pub(crate) const TAG_MC: u64 = 6;
pub(crate) const TAG_STUDENT: u64 = 7;
