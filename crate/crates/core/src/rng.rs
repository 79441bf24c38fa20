//! Counter-based random streams.
//!
//! Every random quantity in a run is drawn from a stream keyed by
//! `(seed, step, stream)`, so a step produces the same numbers whether the
//! particles are processed serially or in parallel, and a run resumed from a
//! checkpoint continues exactly where it left off.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::scalar::Scalar;

/// Stream id reserved for minibatch index selection.
pub const BATCH_STREAM: u64 = u64::MAX;

pub fn stream_rng(seed: u64, step: u64, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&step.to_le_bytes());
    key[16..24].copy_from_slice(b"steinmix");
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

#[inline]
pub fn standard_normal<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> T {
    T::of(rng.sample::<f64, _>(StandardNormal))
}

#[inline]
pub fn uniform<T: Scalar, R: Rng + ?Sized>(rng: &mut R, low: f64, high: f64) -> T {
    T::of(rng.random_range(low..high))
}
