//! Link-level simulator for coarse network coding in a two-user interference
//! channel with an out-of-band relay.
//!
//! The relay scales its observation, rounds it to the integer lattice in the
//! complex plane and broadcasts the coset index of the rounded point (a
//! "chessboard" bin). Destinations fold that index into their initial LLRs.
//! The crate provides:
//!
//! * [`modem`]: Gray-labeled square QAM and the BICM interleaver.
//! * [`channel`]: fading realizations and the interference/relay channel.
//! * [`relay`]: coset partitions, quantizer, cell masses and the choice of `d`.
//! * [`metrics`]: matched and mismatched relay-enhanced LLRs.
//! * [`infotheory`]: Monte Carlo rates, GMI and relay entropies.
//! * [`ldpc`]: regular (3,6) LDPC codes with sum-product decoding.
//! * [`transceiver`]: the end-to-end LDPC-BICM frame.
//! * [`harness`]: experiment configuration, sweeps and CSV output.

pub mod channel;
pub mod error;
pub mod harness;
pub mod infotheory;
pub mod ldpc;
pub mod metrics;
pub mod modem;
pub mod numeric;
pub mod relay;
pub mod rng;
pub mod transceiver;

pub use channel::{ChannelRealization, Fading, LinkConfig};
pub use error::{Error, Result};
pub use metrics::{LlrVector, RelayMessage};
pub use modem::{Constellation, Interleaver};
pub use relay::{CosetPartition, DCache, InputLaw, Objective, Relay, RelayInputs, RelayScale, ScaleRule};

/// Version string echoed into output headers.
pub const VERSION: &str = concat!("coarse-nc ", env!("CARGO_PKG_VERSION"));
