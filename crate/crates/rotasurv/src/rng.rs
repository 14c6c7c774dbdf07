//! Deterministic stream derivation.
//!
//! A single 64-bit master seed has to drive every random decision in a run,
//! and the results must not depend on evaluation order or on how replications
//! are spread over worker threads. We therefore never share a generator:
//! every (replication, stratum, epoch) coordinate derives its own stream key
//! from the master seed via a SplitMix64-style mixing chain, and seeds an
//! independent ChaCha8 generator with it.
//!
//! The derivation is `key = mix(... mix(mix(master ^ tag_0) ^ tag_1) ...)`
//! where each path word is combined with its position, so `[1, 2]` and
//! `[2, 1]` derive distinct keys.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a stream key from a master seed and a path of tags.
pub fn derive_key(master: u64, path: &[u64]) -> u64 {
    let mut key = mix(master);
    for (i, &word) in path.iter().enumerate() {
        key = mix(key ^ word.wrapping_add((i as u64).wrapping_mul(0xA076_1D64_78BD_642F)));
    }
    key
}

/// Independent generator for the given derivation path.
pub fn stream(master: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_key(master, path))
}

/// Namespacing tags for derivation paths.
pub mod tag {
    /// Per-replication root.
    pub const REPLICATION: u64 = 0x01;
    /// Sample draw for (stratum, epoch).
    pub const SAMPLE: u64 = 0x02;
    /// Label permutation of a stratum (conventional rotation).
    pub const PERMUTATION: u64 = 0x03;
    /// Population synthesis.
    pub const SYNTH: u64 = 0x04;
}

/// Stream factory for one Monte Carlo replication. Every (stratum, epoch)
/// draw gets its own generator, so realized paths do not depend on the order
/// strata or epochs are visited in, nor on the worker executing them.
#[derive(Debug, Clone, Copy)]
pub struct ReplicationStreams {
    master: u64,
    replication: u64,
}

impl ReplicationStreams {
    pub fn new(master: u64, replication: u64) -> Self {
        ReplicationStreams { master, replication }
    }

    /// Generator for the sample draw of `stratum` at replacement epoch `epoch`.
    pub fn sample(&self, stratum: usize, epoch: usize) -> ChaCha8Rng {
        stream(
            self.master,
            &[tag::REPLICATION, self.replication, tag::SAMPLE, stratum as u64, epoch as u64],
        )
    }

    /// Generator for the label permutation of `stratum` (conventional rotation).
    pub fn permutation(&self, stratum: usize) -> ChaCha8Rng {
        stream(
            self.master,
            &[tag::REPLICATION, self.replication, tag::PERMUTATION, stratum as u64],
        )
    }
}
