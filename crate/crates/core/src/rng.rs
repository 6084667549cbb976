//! Randomness sources.
//!
//! Every operation that needs randomness takes `&mut impl CryptoRngCore`.
//! Scenario mode passes a [`Drbg`] seeded from the scenario's seed so runs are
//! bit-reproducible; production code seeds it from the operating system.

use rand::SeedableRng;
pub use rand::{CryptoRng, RngCore};
pub use rand_chacha::ChaCha20Rng as Drbg;

/// Deterministic generator for scenario mode and tests.
pub fn seeded(seed: u64) -> Drbg {
    Drbg::seed_from_u64(seed)
}

/// Generator seeded from operating-system entropy.
pub fn system() -> Drbg {
    Drbg::from_entropy()
}

/// Marker for generators acceptable for key and nonce generation.
pub trait CryptoRngCore: RngCore + CryptoRng {}
impl<T: RngCore + CryptoRng + ?Sized> CryptoRngCore for T {}
