//! The simulator's single source of randomness.
//!
//! ChaCha8 seeded through `seed_from_u64`, consumed only via `next_u64`, with
//! uniform integers drawn by rejection sampling. Each of those steps is
//! platform independent, so a seed pins a run exactly.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

#[derive(Debug, Clone)]
pub struct DetRng(ChaCha8Rng);

impl DetRng {
    pub fn new(seed: u64) -> Self {
        DetRng(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform integer in `lo..=hi`.
    pub fn uniform_inclusive(&mut self, lo: u64, hi: u64) -> u64 {
        assert!(lo <= hi, "empty range {lo}..={hi}");
        let span = (hi - lo).wrapping_add(1);
        if span == 0 {
            return self.next_u64();
        }
        let zone = (u64::MAX / span) * span;
        loop {
            let x = self.next_u64();
            if x < zone {
                return lo + x % span;
            }
        }
    }

    /// True with probability `ppm / 1_000_000`. Always consumes one draw.
    pub fn chance_ppm(&mut self, ppm: u32) -> bool {
        self.uniform_inclusive(0, 999_999) < u64::from(ppm)
    }
}
