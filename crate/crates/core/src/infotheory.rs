//! Monte Carlo estimators: matched achievable rates, GMI of the mismatched
//! metric, relay conditional entropies and their small-noise behavior.
//!
//! All estimators draw realization `r` from stream `(seed, Realization, r)`
//! and its samples from `(seed, Sample, r)`, so the same seed gives the same
//! numbers whatever the thread count, and relay-on/relay-off runs with a
//! shared seed see identical fading, symbols and noise.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{transmit, ChannelRealization, Fading, LinkConfig};
use crate::error::{Error, Result};
use crate::metrics::{matched_symbol_metrics, mismatched_symbol_metrics, GaussianRelayPosterior, RelayMessage};
use crate::modem::Constellation;
use crate::numeric::{golden_section_max, log_sum_exp, mean_and_stderr, LOG2_E};
use crate::relay::{label_masses, quantize, CosetPartition, Relay, RelayScale};
use crate::rng::{complex_gaussian, stream, Domain};

/// Law of the conditional relay observation, `Y_r | (...) ~ CN(mean, var)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalGaussian {
    pub mean: Complex64,
    pub var: f64,
}

impl ConditionalGaussian {
    /// Entropy in bits of the relay label under this law.
    pub fn label_entropy(&self, d: RelayScale, cp: &CosetPartition) -> f64 {
        label_masses(self.mean, self.var, d, cp).entropy_bits()
    }
}

/// Gaussian-input laws of `Y_r` given `(X1, Y1)` and given `Y1` alone.
///
/// `t1` is the transmitted point including its power scale.
pub fn relay_given_x1_y1(cr: &ChannelRealization, lc: &LinkConfig, t1: Complex64, y1: Complex64) -> ConditionalGaussian {
    let post = GaussianRelayPosterior::new(cr, lc);
    ConditionalGaussian {
        mean: post.mean(y1, t1, cr),
        var: post.var,
    }
}

/// `mu2 = (g1 h11* P1 + g2 h21* P2) y1 / D`,
/// `sigma2^2 = N0 + (|g1 h21 - g2 h11|^2 P1 P2 + N0 (|g1|^2 P1 + |g2|^2 P2)) / D`,
/// with `D = |h11|^2 P1 + |h21|^2 P2 + N0`.
pub fn relay_given_y1(cr: &ChannelRealization, lc: &LinkConfig, y1: Complex64) -> ConditionalGaussian {
    let denom = cr.h11.norm_sqr() * lc.p1 + cr.h21.norm_sqr() * lc.p2 + lc.n0;
    let gain = (cr.g1 * cr.h11.conj() * lc.p1 + cr.g2 * cr.h21.conj() * lc.p2) / denom;
    let var = lc.n0
        + (cr.cross_determinant().norm_sqr() * lc.p1 * lc.p2
            + lc.n0 * (cr.g1.norm_sqr() * lc.p1 + cr.g2.norm_sqr() * lc.p2))
            / denom;
    ConditionalGaussian { mean: gain * y1, var }
}

/// A Monte Carlo rate (bits per channel use).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateEstimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
    /// Optimal GMI tilt (mean over realizations); absent for matched rates.
    pub s_star: Option<f64>,
    /// Realizations whose GMI tilt optimum sat on a search boundary.
    pub boundary_hits: usize,
}

/// Interfering input as known to the receiver.
#[derive(Debug, Clone, PartialEq)]
pub enum Interferer {
    Discrete(Constellation),
    /// Unit-power circularly symmetric Gaussian.
    Gaussian,
}

/// Monte Carlo budget and seeding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McConfig {
    /// Fading realizations (ignored, treated as 1, for a fixed realization).
    pub realizations: usize,
    /// Channel uses per realization.
    pub samples: usize,
    pub seed: u64,
}

impl McConfig {
    fn realizations(&self, fading: &Fading) -> usize {
        match fading {
            Fading::Fast => self.realizations.max(1),
            Fading::Fixed(_) => 1,
        }
    }
}

fn realization(fading: &Fading, seed: u64, r: usize) -> ChannelRealization {
    match fading {
        Fading::Fixed(cr) => *cr,
        Fading::Fast => ChannelRealization::sample(&mut stream(seed, Domain::Realization, r as u64)),
    }
}

/// Combines per-realization sample sets into an estimate; with a single
/// realization the per-sample spread is used, otherwise the spread of the
/// per-realization means.
fn combine(per_realization: Vec<Vec<f64>>) -> RateEstimate {
    let samples = per_realization.iter().map(Vec::len).sum();
    let (value, std_error) = if per_realization.len() == 1 {
        mean_and_stderr(&per_realization[0])
    } else {
        let means: Vec<f64> = per_realization.iter().map(|v| mean_and_stderr(v).0).collect();
        mean_and_stderr(&means)
    };
    RateEstimate {
        value,
        std_error,
        samples,
        s_star: None,
        boundary_hits: 0,
    }
}

/// One channel use for user 1, with the relay bin when a relay is present.
struct Use {
    x1: usize,
    y1: Complex64,
    relay: Option<(usize, RelayScale)>,
}

fn draw_use<R: Rng>(
    rng: &mut R,
    cr: &ChannelRealization,
    lc: &LinkConfig,
    c1: &Constellation,
    interferer: &Interferer,
    relay: Option<(&Relay, RelayScale)>,
) -> Use {
    let x1 = rng.gen_range(0..c1.order());
    let x2 = match interferer {
        Interferer::Discrete(c2) => c2.symbol(rng.gen_range(0..c2.order())),
        Interferer::Gaussian => complex_gaussian(rng, 1.0),
    };
    let out = transmit(c1.symbol(x1), x2, cr, lc, rng);
    Use {
        x1,
        y1: out.y1,
        relay: relay.map(|(r, d)| (r.quantize(out.yr, d), d)),
    }
}

fn symbol_metrics(
    u: &Use,
    relay: Option<&Relay>,
    cr: &ChannelRealization,
    lc: &LinkConfig,
    c1: &Constellation,
    interferer: &Interferer,
    mismatched: bool,
    out: &mut [f64],
) {
    let msg = relay.zip(u.relay).map(|(r, (symbol, d))| RelayMessage {
        symbol,
        d,
        partition: r.partition(),
    });
    match (interferer, mismatched) {
        (Interferer::Discrete(c2), false) => matched_symbol_metrics(u.y1, msg, cr, lc, c1, c2, out),
        // Gaussian interference: the Gaussian metric is the true likelihood
        _ => mismatched_symbol_metrics(u.y1, msg, cr, lc, c1, out),
    }
}

/// `I(X1; Y1, X_r)` for uniform `X1` under matched decoding.
///
/// Each sample contributes `log2 p(y1,x_r|x1) / p(y1,x_r)`; with fast fading
/// every realization draws fresh gains and the relay re-chooses `d`.
pub fn matched_rate(
    lc: &LinkConfig,
    c1: &Constellation,
    interferer: &Interferer,
    relay: Option<&Relay>,
    fading: &Fading,
    mc: &McConfig,
) -> RateEstimate {
    let per: Vec<Vec<f64>> = (0..mc.realizations(fading))
        .into_par_iter()
        .map(|r| {
            let cr = realization(fading, mc.seed, r);
            let d = relay.map(|rl| (rl, rl.scale(cr.g1, cr.g2, lc)));
            let mut rng = stream(mc.seed, Domain::Sample, r as u64);
            let mut metrics = vec![0.0; c1.order()];
            let ln_m1 = (c1.order() as f64).ln();
            (0..mc.samples)
                .map(|_| {
                    let u = draw_use(&mut rng, &cr, lc, c1, interferer, d);
                    symbol_metrics(&u, relay, &cr, lc, c1, interferer, false, &mut metrics);
                    (metrics[u.x1] - (log_sum_exp(&metrics) - ln_m1)) * LOG2_E
                })
                .collect()
        })
        .collect();
    combine(per)
}

/// Gaussian inputs on both users: `log2(1 + SINR)` plus the relay gain
/// `H(X_r|Y1) - H(X_r|X1,Y1)` estimated from the conditional Gaussian laws.
pub fn gaussian_input_rate(lc: &LinkConfig, relay: Option<&Relay>, fading: &Fading, mc: &McConfig) -> RateEstimate {
    let per: Vec<Vec<f64>> = (0..mc.realizations(fading))
        .into_par_iter()
        .map(|r| {
            let cr = realization(fading, mc.seed, r);
            let base = (1.0 + cr.h11.norm_sqr() * lc.p1 / (cr.h21.norm_sqr() * lc.p2 + lc.n0)).log2();
            let Some(rl) = relay else {
                return vec![base];
            };
            let d = rl.scale(cr.g1, cr.g2, lc);
            let mut rng = stream(mc.seed, Domain::Sample, r as u64);
            (0..mc.samples)
                .map(|_| {
                    let (h_y1, h_x1y1) = gaussian_entropy_sample(&mut rng, &cr, lc, d, rl.partition());
                    base + h_y1 - h_x1y1
                })
                .collect()
        })
        .collect();
    combine(per)
}

fn gaussian_entropy_sample<R: Rng>(
    rng: &mut R,
    cr: &ChannelRealization,
    lc: &LinkConfig,
    d: RelayScale,
    cp: &CosetPartition,
) -> (f64, f64) {
    let t1 = complex_gaussian(rng, lc.p1);
    let t2 = complex_gaussian(rng, lc.p2);
    let y1 = cr.h11 * t1 + cr.h21 * t2 + complex_gaussian(rng, lc.n0);
    (
        relay_given_y1(cr, lc, y1).label_entropy(d, cp),
        relay_given_x1_y1(cr, lc, t1, y1).label_entropy(d, cp),
    )
}

/// Input law for [`relay_entropies`].
#[derive(Debug, Clone, PartialEq)]
pub enum InputPair {
    Gaussian,
    Discrete(Constellation, Constellation),
}

/// `H(X_r|Y1)` and `H(X_r|X1,Y1)` estimates with standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EntropyPair {
    pub h_given_y1: f64,
    pub h_given_y1_se: f64,
    pub h_given_x1_y1: f64,
    pub h_given_x1_y1_se: f64,
}

impl EntropyPair {
    /// `I(X1; X_r | Y1)`.
    pub fn gain(&self) -> f64 {
        self.h_given_y1 - self.h_given_x1_y1
    }
}

/// Monte Carlo averages of the relay label entropy given `Y1` and given `(X1, Y1)`
/// for one realization and a fixed `d`.
pub fn relay_entropies(
    cr: &ChannelRealization,
    lc: &LinkConfig,
    inputs: &InputPair,
    d: RelayScale,
    cp: &CosetPartition,
    samples: usize,
    seed: u64,
) -> EntropyPair {
    let mut rng = stream(seed, Domain::Sample, 0);
    let mut a = Vec::with_capacity(samples);
    let mut b = Vec::with_capacity(samples);
    match inputs {
        InputPair::Gaussian => {
            for _ in 0..samples {
                let (h1, h2) = gaussian_entropy_sample(&mut rng, cr, lc, d, cp);
                a.push(h1);
                b.push(h2);
            }
        }
        InputPair::Discrete(c1, c2) => {
            let (s1, s2) = (lc.p1.sqrt(), lc.p2.sqrt());
            let masses: Vec<Vec<f64>> = c1
                .symbols()
                .iter()
                .flat_map(|&x1| {
                    c2.symbols()
                        .iter()
                        .map(move |&x2| label_masses(cr.g1 * s1 * x1 + cr.g2 * s2 * x2, lc.n0, d, cp).as_slice().to_vec())
                })
                .collect();
            let m2 = c2.order();
            let labels = cp.labels();
            let mut logw = vec![0.0; c1.order() * m2];
            for _ in 0..samples {
                let l1 = rng.gen_range(0..c1.order());
                let l2 = rng.gen_range(0..m2);
                let y1 = cr.h11 * s1 * c1.symbol(l1) + cr.h21 * s2 * c2.symbol(l2) + complex_gaussian(&mut rng, lc.n0);
                for (i, &x1) in c1.symbols().iter().enumerate() {
                    for (j, &x2) in c2.symbols().iter().enumerate() {
                        logw[i * m2 + j] = -(y1 - cr.h11 * s1 * x1 - cr.h21 * s2 * x2).norm_sqr() / lc.n0;
                    }
                }
                let mix = |range: std::ops::Range<usize>| {
                    let hi = logw[range.clone()].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut p = [0.0; crate::relay::MAX_LABELS];
                    for k in range {
                        let w = (logw[k] - hi).exp();
                        for (acc, &q) in p.iter_mut().zip(&masses[k]) {
                            *acc += w * q;
                        }
                    }
                    crate::numeric::entropy_bits(&p[..labels])
                };
                a.push(mix(0..logw.len()));
                b.push(mix(l1 * m2..(l1 + 1) * m2));
            }
        }
    }
    let (ha, sa) = mean_and_stderr(&a);
    let (hb, sb) = mean_and_stderr(&b);
    EntropyPair {
        h_given_y1: ha,
        h_given_y1_se: sa,
        h_given_x1_y1: hb,
        h_given_x1_y1_se: sb,
    }
}

/// One row of [`asymptotics_sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AsymptoticsRow {
    pub n0: f64,
    pub d: f64,
    pub entropies: EntropyPair,
}

/// Gaussian inputs, unit powers, `d = N0^alpha` for each `N0`.
pub fn asymptotics_sweep(
    alpha: f64,
    n0_list: &[f64],
    cr: &ChannelRealization,
    cp: &CosetPartition,
    samples: usize,
    seed: u64,
) -> Result<Vec<AsymptoticsRow>> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::param("alpha", format!("must lie in (0, 0.5), got {alpha}")));
    }
    n0_list
        .iter()
        .map(|&n0| {
            let lc = LinkConfig::new(1.0, 1.0, n0, cp.r0())?;
            let d = n0.powf(alpha);
            Ok(AsymptoticsRow {
                n0,
                d,
                entropies: relay_entropies(cr, &lc, &InputPair::Gaussian, RelayScale::real(d)?, cp, samples, seed),
            })
        })
        .collect()
}

/// Tilt search range for the GMI, in `ln s`.
const GMI_LOG_S: (f64, f64) = (-6.907_755_278_982_137, 6.907_755_278_982_137);
const GMI_ITERATIONS: usize = 60;

/// GMI value and optimal tilt for one batch of metric vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmiPoint {
    pub value: f64,
    pub std_error: f64,
    pub s: f64,
    pub at_boundary: bool,
}

/// `I_s = mean log2( q(x1)^s / (1/M) sum_x q(x)^s )` over a batch of
/// `(transmitted index, log-metrics)` pairs.
pub fn gmi_at(batch: &[(usize, Vec<f64>)], s: f64) -> (f64, f64) {
    let vals: Vec<f64> = batch
        .iter()
        .map(|(x1, m)| {
            let ln_m = (m.len() as f64).ln();
            let hi = m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let denom = m.iter().map(|&v| (s * (v - hi)).exp()).sum::<f64>().ln() + s * hi - ln_m;
            (s * m[*x1] - denom) * LOG2_E
        })
        .collect();
    mean_and_stderr(&vals)
}

/// Maximizes [`gmi_at`] over `s` by golden section on `ln s in [ln 1e-3, ln 1e3]`.
pub fn gmi_optimize(batch: &[(usize, Vec<f64>)]) -> GmiPoint {
    let best = golden_section_max(|ls| gmi_at(batch, ls.exp()).0, GMI_LOG_S.0, GMI_LOG_S.1, GMI_ITERATIONS);
    let (value, std_error) = gmi_at(batch, best.x.exp());
    let edge = 1e-3 * (GMI_LOG_S.1 - GMI_LOG_S.0);
    GmiPoint {
        value,
        std_error,
        s: best.x.exp(),
        at_boundary: best.x - GMI_LOG_S.0 < edge || GMI_LOG_S.1 - best.x < edge,
    }
}

fn mismatched_batch(
    cr: &ChannelRealization,
    lc: &LinkConfig,
    c1: &Constellation,
    interferer: &Interferer,
    relay: Option<&Relay>,
    samples: usize,
    seed: u64,
    r: usize,
) -> Vec<(usize, Vec<f64>)> {
    let d = relay.map(|rl| (rl, rl.scale(cr.g1, cr.g2, lc)));
    let mut rng = stream(seed, Domain::Sample, r as u64);
    (0..samples)
        .map(|_| {
            let u = draw_use(&mut rng, cr, lc, c1, interferer, d);
            let mut m = vec![0.0; c1.order()];
            symbol_metrics(&u, relay, cr, lc, c1, interferer, true, &mut m);
            (u.x1, m)
        })
        .collect()
}

/// Generalized mutual information of the mismatched (Gaussian-interference)
/// metric, with the tilt optimized separately for every realization.
pub fn gmi_rate(
    lc: &LinkConfig,
    c1: &Constellation,
    interferer: &Interferer,
    relay: Option<&Relay>,
    fading: &Fading,
    mc: &McConfig,
) -> RateEstimate {
    let points: Vec<GmiPoint> = (0..mc.realizations(fading))
        .into_par_iter()
        .map(|r| {
            let cr = realization(fading, mc.seed, r);
            gmi_optimize(&mismatched_batch(&cr, lc, c1, interferer, relay, mc.samples, mc.seed, r))
        })
        .collect();
    let values: Vec<f64> = points.iter().map(|p| p.value).collect();
    let (value, se) = if points.len() == 1 {
        (points[0].value, points[0].std_error)
    } else {
        mean_and_stderr(&values)
    };
    RateEstimate {
        value,
        std_error: se,
        samples: points.len() * mc.samples,
        s_star: Some(points.iter().map(|p| p.s).sum::<f64>() / points.len() as f64),
        boundary_hits: points.iter().filter(|p| p.at_boundary).count(),
    }
}

/// GMI at a fixed tilt `s` (no optimization), for diagnostics and tests.
pub fn gmi_rate_at(
    lc: &LinkConfig,
    c1: &Constellation,
    interferer: &Interferer,
    relay: Option<&Relay>,
    fading: &Fading,
    mc: &McConfig,
    s: f64,
) -> RateEstimate {
    let per: Vec<Vec<f64>> = (0..mc.realizations(fading))
        .into_par_iter()
        .map(|r| {
            let cr = realization(fading, mc.seed, r);
            let batch = mismatched_batch(&cr, lc, c1, interferer, relay, mc.samples, mc.seed, r);
            batch.iter().map(|b| gmi_at(std::slice::from_ref(b), s).0).collect()
        })
        .collect();
    combine(per)
}

/// Helper used by estimators and tests: a relay bin for `yr` under `d`.
pub fn relay_bin(yr: Complex64, d: RelayScale, cp: &CosetPartition) -> usize {
    quantize(yr, d, cp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relay::{Objective, RelayInputs, ScaleRule};

    fn qpsk() -> Constellation {
        Constellation::new(4).unwrap()
    }

    fn full_rank() -> ChannelRealization {
        ChannelRealization {
            h11: Complex64::new(1.0, 0.2),
            h12: Complex64::new(0.4, -0.3),
            h21: Complex64::new(0.7, 0.5),
            h22: Complex64::new(0.9, 0.1),
            g1: Complex64::new(0.8, -0.6),
            g2: Complex64::new(0.3, 1.1),
        }
    }

    fn discrete_relay(r0: u32, rule: ScaleRule) -> Relay {
        Relay::new(CosetPartition::new(r0).unwrap(), RelayInputs::discrete(&qpsk(), &qpsk()), rule)
    }

    #[test]
    fn qpsk_rate_tends_to_two_bits() {
        let lc = LinkConfig::from_snr_db(40.0, 0).unwrap();
        let mc = McConfig { realizations: 4000, samples: 5, seed: 3 };
        let r = matched_rate(&lc, &qpsk(), &Interferer::Discrete(qpsk()), None, &Fading::Fast, &mc);
        assert!((r.value - 2.0).abs() < 0.02, "{r:?}");
    }

    #[test]
    fn rate_vanishes_at_very_low_snr() {
        let lc = LinkConfig::from_snr_db(-40.0, 0).unwrap();
        let mc = McConfig { realizations: 500, samples: 10, seed: 4 };
        let r = matched_rate(&lc, &qpsk(), &Interferer::Discrete(qpsk()), None, &Fading::Fast, &mc);
        assert!(r.value.abs() < 0.01, "{r:?}");
    }

    #[test]
    fn relay_gain_matches_entropy_difference() {
        let cr = full_rank();
        let lc = LinkConfig::from_snr_db(10.0, 1).unwrap();
        let relay = discrete_relay(1, ScaleRule::Optimized(Objective::MaxMi));
        let d = relay.scale(cr.g1, cr.g2, &lc);
        let fading = Fading::Fixed(cr);
        let mc = McConfig { realizations: 1, samples: 40_000, seed: 9 };
        let on = matched_rate(&lc, &qpsk(), &Interferer::Discrete(qpsk()), Some(&relay), &fading, &mc);
        let off = matched_rate(&lc, &qpsk(), &Interferer::Discrete(qpsk()), None, &fading, &mc);
        let inputs = InputPair::Discrete(qpsk(), qpsk());
        let h = relay_entropies(&cr, &lc, &inputs, d, relay.partition(), 40_000, 77);
        let se = (on.std_error.powi(2) + off.std_error.powi(2) + h.h_given_y1_se.powi(2) + h.h_given_x1_y1_se.powi(2)).sqrt();
        let delta = on.value - off.value;
        assert!(h.gain() > 0.1, "{h:?}");
        assert!((delta - h.gain()).abs() < 3.0 * se, "delta {delta} vs {} (se {se})", h.gain());
    }

    #[test]
    fn gaussian_rate_without_relay_is_closed_form() {
        let cr = full_rank();
        let lc = LinkConfig::from_snr_db(12.0, 0).unwrap();
        let mc = McConfig { realizations: 1, samples: 100, seed: 1 };
        let r = gaussian_input_rate(&lc, None, &Fading::Fixed(cr), &mc);
        let sinr = cr.h11.norm_sqr() * lc.p1 / (cr.h21.norm_sqr() * lc.p2 + lc.n0);
        assert_eq!(r.value, (1.0 + sinr).log2());
    }

    #[test]
    fn noise_free_relay_variance_given_y1() {
        let cr = full_rank();
        let lc = LinkConfig::new(1.3, 0.7, 1e-14, 1).unwrap();
        let got = relay_given_y1(&cr, &lc, Complex64::new(0.3, 0.1)).var;
        let want = cr.cross_determinant().norm_sqr() * lc.p1 * lc.p2
            / (cr.h11.norm_sqr() * lc.p1 + cr.h21.norm_sqr() * lc.p2);
        assert!(want > 0.0);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    /// Brute-force conditional law of `Y_r` given `Y1` from the joint
    /// covariance of `(Y1, Y_r)` for Gaussian inputs.
    #[test]
    fn relay_law_given_y1_matches_joint_covariance() {
        let cr = full_rank();
        let lc = LinkConfig::new(1.3, 0.7, 0.2, 1).unwrap();
        let (a1, a2) = (cr.h11, cr.h21);
        let (b1, b2) = (cr.g1, cr.g2);
        let c11 = a1.norm_sqr() * lc.p1 + a2.norm_sqr() * lc.p2 + lc.n0;
        let crr = b1.norm_sqr() * lc.p1 + b2.norm_sqr() * lc.p2 + lc.n0;
        let cr1 = b1 * a1.conj() * lc.p1 + b2 * a2.conj() * lc.p2;
        let y1 = Complex64::new(-0.4, 0.9);
        let law = relay_given_y1(&cr, &lc, y1);
        assert!((law.mean - cr1 / c11 * y1).norm() < 1e-12);
        assert!((law.var - (crr - cr1.norm_sqr() / c11)).abs() < 1e-12);
    }

    /// `int h_b(Phi(t)) dt` in bits: expected binary entropy of a narrow
    /// Gaussian against one cell boundary, per unit of per-axis std.
    const BOUNDARY_ENTROPY: f64 = 2.606_076;

    #[test]
    fn small_noise_entropies_reach_their_limits() {
        let cr = full_rank();
        let cp = CosetPartition::new(1).unwrap();
        for n0 in [1e-6, 1e-10] {
            let lc = LinkConfig::new(1.0, 1.0, n0, 1).unwrap();
            let d = RelayScale::real(n0.powf(0.25)).unwrap();
            let h = relay_entropies(&cr, &lc, &InputPair::Gaussian, d, &cp, 4000, 5);
            assert!(h.h_given_y1 >= 0.95, "{h:?}");
            // narrow-noise law: two axes, one boundary per unit length each
            let var = relay_given_x1_y1(&cr, &lc, Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)).var;
            let s = (0.5 * var).sqrt() / d.value().re;
            let first_order = 2.0 * s * BOUNDARY_ENTROPY;
            assert!((h.h_given_x1_y1 - first_order).abs() < 0.1 * first_order + 3.0 * h.h_given_x1_y1_se, "{h:?} vs {first_order}");
            if n0 <= 1e-10 {
                assert!(h.h_given_x1_y1 <= 0.05, "{h:?}");
            }
        }
    }

    #[test]
    fn rank_deficient_relay_brings_nothing() {
        let mut cr = full_rank();
        cr.g1 = cr.h11 * Complex64::new(0.6, 0.3);
        cr.g2 = cr.h21 * Complex64::new(0.6, 0.3);
        assert!(cr.is_rank_deficient());
        let n0 = 1e-4;
        let lc = LinkConfig::new(1.0, 1.0, n0, 1).unwrap();
        let cp = CosetPartition::new(1).unwrap();
        let d = RelayScale::real(n0.powf(0.25)).unwrap();
        let h = relay_entropies(&cr, &lc, &InputPair::Gaussian, d, &cp, 4000, 5);
        assert!(h.gain().abs() < 0.05, "{h:?}");
    }

    #[test]
    fn huge_scale_gives_constant_label() {
        let cr = full_rank();
        let lc = LinkConfig::from_snr_db(10.0, 2).unwrap();
        let cp = CosetPartition::new(2).unwrap();
        let d = RelayScale::real(1e6).unwrap();
        for inputs in [InputPair::Gaussian, InputPair::Discrete(qpsk(), qpsk())] {
            let h = relay_entropies(&cr, &lc, &inputs, d, &cp, 500, 5);
            assert!(h.h_given_y1 < 1e-6 && h.h_given_x1_y1 < 1e-6, "{h:?}");
        }
    }

    #[test]
    fn entropy_estimates_are_ordered_and_bounded() {
        let lc = LinkConfig::from_snr_db(15.0, 2).unwrap();
        let cp = CosetPartition::new(2).unwrap();
        for r in 0..20 {
            let cr = ChannelRealization::sample(&mut stream(21, Domain::Realization, r));
            let d = RelayScale::new(Complex64::new(0.3, 0.1) * (r as f64 + 1.0) / 10.0).unwrap();
            for inputs in [InputPair::Gaussian, InputPair::Discrete(qpsk(), qpsk())] {
                let h = relay_entropies(&cr, &lc, &inputs, d, &cp, 2000, r);
                assert!(h.h_given_x1_y1 >= 0.0);
                assert!(h.h_given_x1_y1 <= h.h_given_y1 + 1e-12, "{h:?}");
                assert!(h.h_given_y1 <= 2.0 + 2.0 * h.h_given_y1_se, "{h:?}");
            }
        }
    }

    #[test]
    fn asymptotics_rejects_bad_alpha() {
        let cp = CosetPartition::new(1).unwrap();
        for alpha in [0.0, 0.5, 0.6, -0.1] {
            assert!(asymptotics_sweep(alpha, &[0.1], &full_rank(), &cp, 10, 0).is_err());
        }
    }

    #[test]
    fn asymptotics_sweep_is_monotone() {
        let cp = CosetPartition::new(1).unwrap();
        let n0s = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6];
        let rows = asymptotics_sweep(0.25, &n0s, &full_rank(), &cp, 4000, 8).unwrap();
        for w in rows.windows(2) {
            let (a, b) = (w[0].entropies, w[1].entropies);
            let se_y = (a.h_given_y1_se.powi(2) + b.h_given_y1_se.powi(2)).sqrt();
            let se_x = (a.h_given_x1_y1_se.powi(2) + b.h_given_x1_y1_se.powi(2)).sqrt();
            assert!(b.h_given_y1 >= a.h_given_y1 - 2.0 * se_y, "{rows:?}");
            assert!(b.h_given_x1_y1 <= a.h_given_x1_y1 + 2.0 * se_x, "{rows:?}");
        }
    }

    #[test]
    fn gmi_at_unit_tilt_equals_matched_rate_for_gaussian_interference() {
        let lc = LinkConfig::from_snr_db(15.0, 0).unwrap();
        let mc = McConfig { realizations: 200, samples: 50, seed: 12 };
        let m = matched_rate(&lc, &qpsk(), &Interferer::Gaussian, None, &Fading::Fast, &mc);
        let g = gmi_rate_at(&lc, &qpsk(), &Interferer::Gaussian, None, &Fading::Fast, &mc, 1.0);
        let se = (m.std_error.powi(2) + g.std_error.powi(2)).sqrt();
        assert!((m.value - g.value).abs() <= 3.0 * se + 1e-12, "{m:?} {g:?}");
    }

    #[test]
    fn gmi_never_beats_matched_information() {
        let lc = LinkConfig::from_snr_db(20.0, 0).unwrap();
        for r in 0..10 {
            let cr = ChannelRealization::sample(&mut stream(31, Domain::Realization, r));
            let mc = McConfig { realizations: 1, samples: 4000, seed: r };
            let fading = Fading::Fixed(cr);
            let m = matched_rate(&lc, &qpsk(), &Interferer::Discrete(qpsk()), None, &fading, &mc);
            let g = gmi_rate(&lc, &qpsk(), &Interferer::Discrete(qpsk()), None, &fading, &mc);
            let se = (m.std_error.powi(2) + g.std_error.powi(2)).sqrt();
            assert!(g.value <= m.value + 3.0 * se, "{m:?} {g:?}");
            assert!(g.s_star.unwrap() > 0.0);
        }
    }

    #[test]
    fn gmi_saturates_without_relay() {
        let mc = McConfig { realizations: 300, samples: 400, seed: 2 };
        let rate = |snr| {
            let lc = LinkConfig::from_snr_db(snr, 0).unwrap();
            gmi_rate(&lc, &qpsk(), &Interferer::Discrete(qpsk()), None, &Fading::Fast, &mc).value
        };
        let (r30, r40) = (rate(30.0), rate(40.0));
        assert!(r40 - r30 < 0.05, "{r30} {r40}");
    }

    #[test]
    fn estimates_are_seed_deterministic() {
        let lc = LinkConfig::from_snr_db(8.0, 1).unwrap();
        let relay = discrete_relay(1, ScaleRule::Cached(Objective::MaxMi));
        let mc = McConfig { realizations: 50, samples: 20, seed: 44 };
        let a = matched_rate(&lc, &qpsk(), &Interferer::Discrete(qpsk()), Some(&relay), &Fading::Fast, &mc);
        let b = matched_rate(&lc, &qpsk(), &Interferer::Discrete(qpsk()), Some(&relay), &Fading::Fast, &mc);
        assert_eq!(a, b);
    }

    #[test]
    fn standard_error_halves_with_four_times_the_samples() {
        let lc = LinkConfig::from_snr_db(5.0, 0).unwrap();
        let fading = Fading::Fixed(full_rank());
        let se = |n| {
            let mc = McConfig { realizations: 1, samples: n, seed: 6 };
            matched_rate(&lc, &qpsk(), &Interferer::Discrete(qpsk()), None, &fading, &mc).std_error
        };
        let ratio = se(10_000) / se(40_000);
        assert!((ratio - 2.0).abs() < 0.4, "{ratio}");
    }
}
