//! Seeded random streams.
//!
//! Every run derives independent ChaCha8 streams from one `u64` seed by
//! selecting the ChaCha stream id, so the initial sample, the accelerated
//! run, the reference run and the bootstrap never share increments. Normal
//! variates come from `rand_distr::StandardNormal` (ziggurat), drawn in
//! (step, particle, channel) order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Stream = ChaCha8Rng;

/// Named substreams of a run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamId {
    Initial = 0,
    Accelerated = 1,
    Reference = 2,
    Bootstrap = 3,
    Perturbation = 4,
}

pub fn stream(seed: u64, id: StreamId) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id as u64);
    rng
}

pub fn lineage(seed: u64, id: StreamId) -> String {
    format!("chacha8:seed={seed}:stream={id:?}")
}

#[inline]
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}
