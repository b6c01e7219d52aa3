//! End-to-end BICM link for user 1: LDPC encode, interleave, Gray map, send
//! through the fading interference channel with the relay bin on the side
//! link, demap with relay-enhanced LLRs, deinterleave and decode.
//!
//! Each frame draws everything (message, interferer symbols, fading, noise)
//! from its own stream `(seed, Frame, index)` and, by default, a fresh
//! interleaver from `(seed, Interleaver, index)`. The relay noise is drawn
//! whether or not a relay is present. Runs that differ only in `R0` therefore
//! see identical messages, fading and noise.

use std::borrow::Cow;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{transmit, ChannelRealization, LinkConfig};
use crate::error::{Error, Result};
use crate::infotheory::Interferer;
use crate::ldpc::LdpcCode;
use crate::metrics::{llrs_from_metrics, matched_symbol_metrics, mismatched_symbol_metrics, RelayMessage};
use crate::modem::{Constellation, Interleaver};
use crate::relay::{Relay, RelayScale};
use crate::rng::{complex_gaussian, stream, Domain, SimRng};

/// Which demapping metric destination 1 uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    /// Exhaustive search over both constellations.
    Matched,
    /// Interference treated as Gaussian.
    Mismatched,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "matched" => Ok(Metric::Matched),
            "mismatched" => Ok(Metric::Mismatched),
            _ => Err(Error::param("metric", format!("expected matched|mismatched, got {s:?}"))),
        }
    }
}

/// Fading across the symbols of a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrameFading {
    /// Fresh gains every symbol.
    #[default]
    Fast,
    /// One realization per frame (diagnostics only).
    Block,
}

/// How codewords are interleaved.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Interleaving {
    /// A fresh seeded permutation for every codeword.
    #[default]
    PerCodeword,
    /// The same permutation for every codeword.
    Fixed(Interleaver),
}

/// Outcome of one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrameResult {
    pub bit_errors: usize,
    pub frame_error: bool,
    pub iters: usize,
    pub snr_db: f64,
}

/// A configured link: code, interleaver, constellations, metric and relay.
#[derive(Debug)]
pub struct Transceiver<'a> {
    code: &'a LdpcCode,
    interleaving: Interleaving,
    c1: Constellation,
    interferer: Interferer,
    metric: Metric,
    relay: Option<&'a Relay>,
    fading: FrameFading,
    max_iters: usize,
}

/// Per-symbol channel trace, used to check that the relay does not depend
/// on the destination's metric.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolTrace {
    pub realization: ChannelRealization,
    pub y1: Complex64,
    /// Relay bin and the scale it was quantized with.
    pub relay: Option<(usize, RelayScale)>,
}

impl<'a> Transceiver<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        code: &'a LdpcCode,
        interleaving: Interleaving,
        c1: Constellation,
        interferer: Interferer,
        metric: Metric,
        relay: Option<&'a Relay>,
        fading: FrameFading,
        max_iters: usize,
    ) -> Result<Self> {
        let k = c1.bits_per_symbol();
        if code.n() % k != 0 {
            return Err(Error::config(
                "block_length",
                format!("n = {} is not a multiple of {k} bits per symbol", code.n()),
            ));
        }
        if let Interleaving::Fixed(il) = &interleaving {
            if il.len() != code.n() {
                return Err(Error::LengthMismatch {
                    expected: code.n(),
                    actual: il.len(),
                });
            }
        }
        if max_iters == 0 {
            return Err(Error::config("max_iters", "must be positive"));
        }
        Ok(Self {
            code,
            interleaving,
            c1,
            interferer,
            metric,
            relay,
            fading,
            max_iters,
        })
    }

    /// Channel uses per frame, `n / k1`.
    pub fn symbols_per_frame(&self) -> usize {
        self.code.n() / self.c1.bits_per_symbol()
    }

    /// Interleaver of frame `index`.
    pub fn interleaver(&self, seed: u64, index: u64) -> Cow<'_, Interleaver> {
        match &self.interleaving {
            Interleaving::PerCodeword => Cow::Owned(Interleaver::for_codeword(self.code.n(), seed, index)),
            Interleaving::Fixed(il) => Cow::Borrowed(il),
        }
    }

    /// Runs frame `index` of the experiment seeded by `seed`.
    pub fn run_frame(&self, lc: &LinkConfig, seed: u64, index: u64) -> Result<FrameResult> {
        let mut rng = stream(seed, Domain::Frame, index);
        self.run_frame_with(lc, &self.interleaver(seed, index), &mut rng)
    }

    /// Runs one frame with the given interleaver, drawing all other
    /// randomness from `rng`.
    pub fn run_frame_with(&self, lc: &LinkConfig, interleaver: &Interleaver, rng: &mut SimRng) -> Result<FrameResult> {
        if interleaver.len() != self.code.n() {
            return Err(Error::LengthMismatch {
                expected: self.code.n(),
                actual: interleaver.len(),
            });
        }
        if let Some(r) = self.relay {
            if r.partition().r0() != lc.r0 {
                return Err(Error::config("r0", "relay partition disagrees with the link configuration"));
            }
        }
        let message: Vec<u8> = (0..self.code.message_len()).map(|_| rng.gen_range(0..2u8)).collect();
        let word = self.code.encode(&message)?;
        let coded = interleaver.interleave(&word)?;
        let indices = self.c1.map_bits(&coded)?;

        let k = self.c1.bits_per_symbol();
        let mut llrs = vec![0.0; self.code.n()];
        let mut metrics = vec![0.0; self.c1.order()];
        let block = ChannelRealization::sample(rng);
        for (s, &x1) in indices.iter().enumerate() {
            let trace = self.channel_use(x1, lc, &block, rng);
            let cr = &trace.realization;
            let msg = self.relay.zip(trace.relay).map(|(r, (symbol, d))| RelayMessage {
                symbol,
                d,
                partition: r.partition(),
            });
            match (&self.interferer, self.metric) {
                (Interferer::Discrete(c2), Metric::Matched) => {
                    matched_symbol_metrics(trace.y1, msg, cr, lc, &self.c1, c2, &mut metrics)
                }
                _ => mismatched_symbol_metrics(trace.y1, msg, cr, lc, &self.c1, &mut metrics),
            }
            llrs_from_metrics(&self.c1, &metrics, &mut llrs[s * k..(s + 1) * k]);
        }

        let llrs = interleaver.deinterleave(&llrs)?;
        let outcome = self.code.decode(&llrs, self.max_iters)?;
        let decoded = self.code.extract_message(&outcome.bits);
        let bit_errors = decoded.iter().zip(&message).filter(|(a, b)| a != b).count();
        Ok(FrameResult {
            bit_errors,
            frame_error: bit_errors > 0,
            iters: outcome.iterations,
            snr_db: lc.snr_db(),
        })
    }

    /// One channel use: fading, interferer, transmission and relay bin.
    /// Consumes the same randomness with or without a relay.
    fn channel_use(&self, x1: usize, lc: &LinkConfig, block: &ChannelRealization, rng: &mut SimRng) -> SymbolTrace {
        let cr = match self.fading {
            FrameFading::Fast => ChannelRealization::sample(rng),
            FrameFading::Block => *block,
        };
        let x2 = match &self.interferer {
            Interferer::Discrete(c2) => c2.symbol(rng.gen_range(0..c2.order())),
            Interferer::Gaussian => complex_gaussian(rng, 1.0),
        };
        let out = transmit(self.c1.symbol(x1), x2, &cr, lc, rng);
        // the relay sees only (g1, g2, N0) and its own observation
        let relay = self.relay.map(|r| {
            let d = r.scale(cr.g1, cr.g2, lc);
            (r.quantize(out.yr, d), d)
        });
        SymbolTrace {
            realization: cr,
            y1: out.y1,
            relay,
        }
    }

    /// Channel traces of frame `index` without demapping or decoding.
    pub fn trace_frame(&self, lc: &LinkConfig, seed: u64, index: u64) -> Result<Vec<SymbolTrace>> {
        let mut rng = stream(seed, Domain::Frame, index);
        let message: Vec<u8> = (0..self.code.message_len()).map(|_| rng.gen_range(0..2u8)).collect();
        let word = self.code.encode(&message)?;
        let indices = self.c1.map_bits(&self.interleaver(seed, index).interleave(&word)?)?;
        let block = ChannelRealization::sample(&mut rng);
        Ok(indices.iter().map(|&x1| self.channel_use(x1, lc, &block, &mut rng)).collect())
    }
}
