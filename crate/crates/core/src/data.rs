//! Seeded input generation.
//!
//! The generator is SplitMix64 seeded directly with the run seed; byte
//! streams are successive outputs in little-endian order, truncated at the
//! end of the buffer.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

pub struct DataGen(SplitMix64);

impl DataGen {
    pub fn new(seed: u64) -> Self {
        DataGen(SplitMix64::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    pub fn fill(&mut self, buf: &mut [u8]) {
        for chunk in buf.chunks_mut(8) {
            let word = self.0.next_u64().to_le_bytes();
            chunk.copy_from_slice(&word[..chunk.len()]);
        }
    }

    pub fn bytes(&mut self, n: usize) -> Vec<u8> {
        let mut v = vec![0; n];
        self.fill(&mut v);
        v
    }
}
