//! Deterministic random streams.
//!
//! Every replica draws from its own ChaCha8 stream. The key is the master
//! seed (expanded by `seed_from_u64`) and the 64-bit stream id packs
//! `(task, replica, purpose)` as `task << 40 | replica << 8 | purpose`, so
//! results only depend on `(master_seed, config)` and never on the order in
//! which replicas are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for inside one replica.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Purpose {
    Measure = 1,
    WhiteNoise = 2,
    Statistics = 3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream {
    master: u64,
}

impl SeedStream {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Stream for `replica` of sub-task `task` (typically the index of ε).
    pub fn rng(&self, task: u32, replica: u32, purpose: Purpose) -> ChaCha8Rng {
        let task = u64::from(task) & 0xff_ffff;
        let stream = (task << 40) | (u64::from(replica) << 8) | purpose as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(stream);
        rng
    }
}
