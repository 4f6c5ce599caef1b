//! Keyed random streams. A stream is identified by
//! `(global seed, epoch, sample index, purpose)`, so draws for one sample
//! never depend on how many draws another sample consumed.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// What a stream is used for; part of the stream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Init,
    Shuffle,
    Views,
    Pairs,
    Negatives,
    Reparam,
    HeldOut,
    Data,
    Oracle,
    Custom(u32),
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Init => 1,
            Purpose::Shuffle => 2,
            Purpose::Views => 3,
            Purpose::Pairs => 4,
            Purpose::Negatives => 5,
            Purpose::Reparam => 6,
            Purpose::HeldOut => 7,
            Purpose::Data => 8,
            Purpose::Oracle => 9,
            Purpose::Custom(c) => (1 << 32) | c as u64,
        }
    }
}

/// Deterministic random stream; the four key words form the ChaCha key.
#[derive(Debug, Clone)]
pub struct RngStream {
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, epoch: u64, index: u64, purpose: Purpose) -> Self {
        let mut key = [0u8; 32];
        for (chunk, word) in key.chunks_mut(8).zip([seed, epoch, index, purpose.tag()]) {
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        Self {
            inner: ChaCha8Rng::from_seed(key),
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
