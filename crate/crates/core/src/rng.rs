//! Seeded random number generation.
//!
//! Everything stochastic in the library draws from a ChaCha8 stream seeded
//! by the caller, so experiment outputs are reproducible bit for bit. The
//! algorithm identifier below is echoed into experiment metadata.

pub use rand_chacha::ChaCha8Rng as SeededRng;

use rand::SeedableRng;

/// Identifier of the generator recorded in output metadata.
pub const RNG_ALGORITHM: &str = "chacha8";

pub fn seeded(seed: u64) -> SeededRng {
    SeededRng::seed_from_u64(seed)
}
