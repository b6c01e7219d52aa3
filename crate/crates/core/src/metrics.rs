//! Relay-enhanced bit metrics for user 1.
//!
//! Both demappers first compute a per-symbol log-metric `L(x1)` (up to a
//! constant common to all `x1`) and then marginalize it into per-bit LLRs.
//! User 2 is served by the same code after [`ChannelRealization::swap_users`].
//!
//! LLR sign convention: positive means the bit is more likely 1.

use num_complex::Complex64;

use crate::channel::{ChannelRealization, LinkConfig};
use crate::modem::Constellation;
use crate::numeric::log_sum_exp;
use crate::relay::{label_masses, CosetPartition, RelayScale};

/// LLR magnitude cap.
pub const LLR_CLIP: f64 = 50.0;
/// Probabilities are floored here before taking logs.
pub const PROB_FLOOR: f64 = 1e-300;

/// The relay's bin index together with what the destination needs to interpret it.
#[derive(Debug, Clone, Copy)]
pub struct RelayMessage<'a> {
    pub symbol: usize,
    pub d: RelayScale,
    pub partition: &'a CosetPartition,
}

/// Per-bit LLRs of one received symbol, clipped to `[-50, 50]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LlrVector(Vec<f64>);

impl LlrVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl ChannelRealization {
    /// The same slot seen from user 2 (user indices exchanged).
    pub fn swap_users(&self) -> Self {
        Self {
            h11: self.h22,
            h12: self.h21,
            h21: self.h12,
            h22: self.h11,
            g1: self.g2,
            g2: self.g1,
        }
    }
}

impl LinkConfig {
    pub fn swap_users(&self) -> Self {
        Self {
            p1: self.p2,
            p2: self.p1,
            ..*self
        }
    }
}

#[inline]
fn ln_floor(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

/// `L(x1) = log sum_x2 p(y1|x1,x2) p(x_r|x1,x2)` (constants dropped), written
/// into `out` indexed by `x1`.
pub fn matched_symbol_metrics(
    y1: Complex64,
    relay: Option<RelayMessage<'_>>,
    cr: &ChannelRealization,
    lc: &LinkConfig,
    c1: &Constellation,
    c2: &Constellation,
    out: &mut [f64],
) {
    let (s1, s2) = (lc.p1.sqrt(), lc.p2.sqrt());
    let inv_n0 = lc.n0.recip();
    let mut terms = [0.0f64; 64];
    let terms = &mut terms[..c2.order()];
    for (i, &x1) in c1.symbols().iter().enumerate() {
        let r1 = y1 - cr.h11 * s1 * x1;
        let m1 = cr.g1 * s1 * x1;
        for (t, &x2) in terms.iter_mut().zip(c2.symbols()) {
            let mut v = -(r1 - cr.h21 * s2 * x2).norm_sqr() * inv_n0;
            if let Some(rm) = relay {
                let mass = label_masses(m1 + cr.g2 * s2 * x2, lc.n0, rm.d, rm.partition).get(rm.symbol);
                v += ln_floor(mass);
            }
            *t = v;
        }
        out[i] = log_sum_exp(terms);
    }
}

/// Parameters of the Gaussian law of `Y_r` given `(X1 = x1, Y1 = y1)` when
/// `X2` is Gaussian: `mu = g1 sqrt(P1) x1 + k (y1 - h11 sqrt(P1) x1)` with
/// `k = g2 conj(h21) P2 / V`, `V = |h21|^2 P2 + N0`, and
/// `sigma^2 = N0 + |g2|^2 P2 N0 / V`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct GaussianRelayPosterior {
    pub gain: Complex64,
    pub var: f64,
    pub interference_plus_noise: f64,
}

impl GaussianRelayPosterior {
    pub fn new(cr: &ChannelRealization, lc: &LinkConfig) -> Self {
        let v = cr.h21.norm_sqr() * lc.p2 + lc.n0;
        Self {
            gain: cr.g2 * cr.h21.conj() * lc.p2 / v,
            var: lc.n0 + cr.g2.norm_sqr() * lc.p2 * lc.n0 / v,
            interference_plus_noise: v,
        }
    }

    /// `mu` for a candidate transmitted point `t1 = sqrt(P1) x1`.
    #[inline]
    pub fn mean(&self, y1: Complex64, t1: Complex64, cr: &ChannelRealization) -> Complex64 {
        cr.g1 * t1 + self.gain * (y1 - cr.h11 * t1)
    }
}

/// Mismatched log-metric `log q1(y1|x1) + log q_r(x_r|x1,y1)`: interference
/// is modeled as Gaussian with power `|h21|^2 P2` (constants dropped).
pub fn mismatched_symbol_metrics(
    y1: Complex64,
    relay: Option<RelayMessage<'_>>,
    cr: &ChannelRealization,
    lc: &LinkConfig,
    c1: &Constellation,
    out: &mut [f64],
) {
    let post = GaussianRelayPosterior::new(cr, lc);
    let s1 = lc.p1.sqrt();
    let inv_v = post.interference_plus_noise.recip();
    for (i, &x1) in c1.symbols().iter().enumerate() {
        let t1 = s1 * x1;
        let mut v = -(y1 - cr.h11 * t1).norm_sqr() * inv_v;
        if let Some(rm) = relay {
            let mass = label_masses(post.mean(y1, t1, cr), post.var, rm.d, rm.partition).get(rm.symbol);
            v += ln_floor(mass);
        }
        out[i] = v;
    }
}

/// Marginalizes symbol log-metrics into clipped bit LLRs.
pub fn llrs_from_metrics(c1: &Constellation, metrics: &[f64], out: &mut [f64]) {
    let k = c1.bits_per_symbol();
    let m = c1.order();
    for (i, o) in out.iter_mut().enumerate().take(k) {
        let shift = k - 1 - i;
        let (mut one, mut zero) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        let hi = metrics.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (mut s1, mut s0) = (0.0, 0.0);
        for (l, &v) in metrics.iter().enumerate().take(m) {
            if (l >> shift) & 1 == 1 {
                s1 += (v - hi).exp();
                one = one.max(v);
            } else {
                s0 += (v - hi).exp();
                zero = zero.max(v);
            }
        }
        let llr = if s1 > 0.0 && s0 > 0.0 {
            s1.ln() - s0.ln()
        } else {
            // one side vanished relative to the peak: fall back to max-log
            one - zero
        };
        *o = if llr.is_nan() { 0.0 } else { llr.clamp(-LLR_CLIP, LLR_CLIP) };
    }
}

/// Matched relay-enhanced LLRs (exhaustive search over both constellations).
#[allow(clippy::too_many_arguments)]
pub fn matched_llr(
    y1: Complex64,
    relay: Option<RelayMessage<'_>>,
    cr: &ChannelRealization,
    lc: &LinkConfig,
    c1: &Constellation,
    c2: &Constellation,
) -> LlrVector {
    let mut metrics = vec![0.0; c1.order()];
    matched_symbol_metrics(y1, relay, cr, lc, c1, c2, &mut metrics);
    let mut llr = vec![0.0; c1.bits_per_symbol()];
    llrs_from_metrics(c1, &metrics, &mut llr);
    LlrVector(llr)
}

/// Mismatched relay-enhanced LLRs (interference treated as Gaussian).
pub fn mismatched_llr(
    y1: Complex64,
    relay: Option<RelayMessage<'_>>,
    cr: &ChannelRealization,
    lc: &LinkConfig,
    c1: &Constellation,
) -> LlrVector {
    let mut metrics = vec![0.0; c1.order()];
    mismatched_symbol_metrics(y1, relay, cr, lc, c1, &mut metrics);
    let mut llr = vec![0.0; c1.bits_per_symbol()];
    llrs_from_metrics(c1, &metrics, &mut llr);
    LlrVector(llr)
}
