//! Random number sources.
//!
//! Per-pixel noise uses a counter-based generator: every draw is a pure
//! function of `(seed, element, draw)`, so the values do not depend on the
//! order in which pixels are visited. Sequential choices (initialisation,
//! batch selection) use a seeded ChaCha stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Sequential generator for initialisation and sampling.
pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Counter-based source keyed by `(seed, element, draw)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterRng {
    seed: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives an independent stream, e.g. one per image of a batch.
    pub fn fork(&self, stream: u64) -> Self {
        Self {
            seed: splitmix64(self.seed ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93)),
        }
    }

    fn bits(&self, element: u64, draw: u64) -> u64 {
        let key = self.seed
            ^ element.wrapping_mul(0x9E37_79B9_7F4A_7C15)
            ^ draw.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        splitmix64(splitmix64(key))
    }

    /// Uniform in the open interval (0, 1).
    pub fn uniform(&self, element: u64, draw: u64) -> f64 {
        // top 53 bits, shifted by half an ulp so 0 is never returned
        ((self.bits(element, draw) >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box–Muller; consumes draws `2*slot` and `2*slot+1`.
    pub fn normal(&self, element: u64, slot: u64) -> f64 {
        let u1 = self.uniform(element, 2 * slot);
        let u2 = self.uniform(element, 2 * slot + 1);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

#[inline]
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
