//! Deterministic random streams.
//!
//! Every Monte Carlo unit (realization, frame, sample batch) draws from its own
//! ChaCha stream keyed by `(master seed, domain, index)`, so results never depend
//! on how work is split across threads.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

pub type SimRng = ChaCha12Rng;

/// Stream domains, so that e.g. frame 3 and realization 3 never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Realization = 1,
    Frame = 2,
    Sample = 3,
    Interleaver = 4,
    Construction = 5,
    Cloud = 6,
}

/// Child stream for `(seed, domain, index)`.
pub fn stream(seed: u64, domain: Domain, index: u64) -> SimRng {
    let mut rng = SimRng::seed_from_u64(seed ^ (domain as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index);
    rng
}

/// Circularly symmetric complex Gaussian with `E|z|^2 = var`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let s = (0.5 * var).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}
