//! Two-user Gaussian interference channel with a relay observation.
//!
//! ```text
//! y1 = h11 sqrt(P1) x1 + h21 sqrt(P2) x2 + n1
//! y2 = h22 sqrt(P2) x2 + h12 sqrt(P1) x1 + n2
//! yr = g1  sqrt(P1) x1 + g2  sqrt(P2) x2 + nr
//! ```
//!
//! Inputs are unit-power symbols; the power scale is applied here. Noise terms
//! are circularly symmetric with `E|n|^2 = N0`.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::complex_gaussian;

/// Below this `|g1 h21 - g2 h11|` a realization is treated as rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-9;

/// Complex gains of one fading slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    pub h11: Complex64,
    pub h12: Complex64,
    pub h21: Complex64,
    pub h22: Complex64,
    pub g1: Complex64,
    pub g2: Complex64,
}

impl ChannelRealization {
    /// Six i.i.d. CN(0, 1) gains.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            h11: complex_gaussian(rng, 1.0),
            h12: complex_gaussian(rng, 1.0),
            h21: complex_gaussian(rng, 1.0),
            h22: complex_gaussian(rng, 1.0),
            g1: complex_gaussian(rng, 1.0),
            g2: complex_gaussian(rng, 1.0),
        }
    }

    /// All gains equal to one.
    pub fn unit() -> Self {
        let one = Complex64::new(1.0, 0.0);
        Self {
            h11: one,
            h12: one,
            h21: one,
            h22: one,
            g1: one,
            g2: one,
        }
    }

    /// `g1 h21 - g2 h11`; user 1's relay gain vanishes when this is zero.
    pub fn cross_determinant(&self) -> Complex64 {
        self.g1 * self.h21 - self.g2 * self.h11
    }

    /// True when the relay observation is (numerically) proportional to user 1's.
    pub fn is_rank_deficient(&self) -> bool {
        self.cross_determinant().norm() < RANK_TOLERANCE
    }

    pub fn is_finite(&self) -> bool {
        [self.h11, self.h12, self.h21, self.h22, self.g1, self.g2]
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Powers, noise level and relay rate of one operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkConfig {
    pub p1: f64,
    pub p2: f64,
    pub n0: f64,
    pub r0: u32,
}

impl LinkConfig {
    pub fn new(p1: f64, p2: f64, n0: f64, r0: u32) -> Result<Self> {
        for (name, v) in [("p1", p1), ("p2", p2), ("n0", n0)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("must be positive, got {v}")));
            }
        }
        if r0 > 2 {
            return Err(Error::UnsupportedRelayRate(r0, "0, 1, 2"));
        }
        Ok(Self { p1, p2, n0, r0 })
    }

    /// `P1 = P2 = 1`, `N0 = 10^(-snr/10)`.
    pub fn from_snr_db(snr_db: f64, r0: u32) -> Result<Self> {
        Self::new(1.0, 1.0, 10f64.powf(-snr_db / 10.0), r0)
    }

    /// `10 log10(P1 / N0)`.
    pub fn snr_db(&self) -> f64 {
        10.0 * (self.p1 / self.n0).log10()
    }

    pub fn with_r0(mut self, r0: u32) -> Self {
        self.r0 = r0;
        self
    }
}

/// Channel outputs of one use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outputs {
    pub y1: Complex64,
    pub y2: Complex64,
    pub yr: Complex64,
}

/// Noise-free part of the three outputs.
pub fn noiseless(x1: Complex64, x2: Complex64, cr: &ChannelRealization, lc: &LinkConfig) -> Outputs {
    let a1 = x1 * lc.p1.sqrt();
    let a2 = x2 * lc.p2.sqrt();
    Outputs {
        y1: cr.h11 * a1 + cr.h21 * a2,
        y2: cr.h22 * a2 + cr.h12 * a1,
        yr: cr.g1 * a1 + cr.g2 * a2,
    }
}

/// One channel use with fresh noise on every output.
pub fn transmit<R: Rng + ?Sized>(
    x1: Complex64,
    x2: Complex64,
    cr: &ChannelRealization,
    lc: &LinkConfig,
    rng: &mut R,
) -> Outputs {
    let clean = noiseless(x1, x2, cr, lc);
    Outputs {
        y1: clean.y1 + complex_gaussian(rng, lc.n0),
        y2: clean.y2 + complex_gaussian(rng, lc.n0),
        yr: clean.yr + complex_gaussian(rng, lc.n0),
    }
}

/// How channel gains evolve across channel uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fading {
    /// Fresh i.i.d. gains every use.
    Fast,
    /// One realization for all uses.
    Fixed(ChannelRealization),
}
