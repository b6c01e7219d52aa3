//! Experiment configuration, sweeps and CSV output.
//!
//! A run is described by an [`ExperimentConfig`] (JSON file, CLI flags, or
//! both: flags win). Every output file starts with one `#`-prefixed JSON line
//! holding the tool version and the fully resolved configuration, followed by
//! a CSV table. Parallel work is keyed by realization or frame index, so the
//! CSV body is byte-identical for any thread count.

use std::io::Write;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::channel::{ChannelRealization, Fading, LinkConfig};
use crate::error::{Error, Result};
use crate::infotheory::{self, Interferer, McConfig};
use crate::ldpc::LdpcCode;
use crate::modem::Constellation;
use crate::relay::{optimize_d, CosetPartition, InputLaw, Objective, Relay, RelayInputs, ScaleRule};
use crate::rng::{stream, Domain};
use crate::transceiver::{FrameFading, FrameResult, Interleaving, Metric, Transceiver};
use crate::VERSION;

/// Experiment kinds, one per CLI subcommand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Rates,
    Gmi,
    Ber,
    OptimizeD,
    Asymptotics,
    Table1,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Rates => "rates",
            Kind::Gmi => "gmi",
            Kind::Ber => "ber",
            Kind::OptimizeD => "optimize-d",
            Kind::Asymptotics => "asymptotics",
            Kind::Table1 => "table1",
        }
    }
}

/// Lower and upper end of the minimum-SNR table search, dB.
pub const TABLE1_SNR_RANGE: (f64, f64) = (-10.0, 60.0);
/// Bisection resolution of the minimum-SNR table search, dB.
pub const TABLE1_RESOLUTION_DB: f64 = 0.05;

/// Fully resolved experiment description.
///
/// Optional counts are filled with kind-specific defaults by [`parse_config`],
/// so the echoed header always shows the values actually used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Kind,
    #[serde(default)]
    pub snr_db_list: Vec<f64>,
    #[serde(default)]
    pub r0: u32,
    #[serde(default = "default_m1")]
    pub m1: usize,
    #[serde(default)]
    pub m2: Option<usize>,
    /// Interferer is complex Gaussian instead of QAM.
    #[serde(default)]
    pub gaussian_x2: bool,
    /// Desired user is complex Gaussian too (rates only).
    #[serde(default)]
    pub gaussian_x1: bool,
    #[serde(default = "default_metric")]
    pub metric: Metric,
    #[serde(default = "default_objective")]
    pub objective: Objective,
    #[serde(default)]
    pub fading: FrameFading,
    #[serde(default)]
    pub block_length: Option<usize>,
    #[serde(default)]
    pub max_frames: Option<usize>,
    #[serde(default)]
    pub target_frame_errors: Option<usize>,
    #[serde(default)]
    pub max_iters: Option<usize>,
    #[serde(default)]
    pub samples: Option<usize>,
    #[serde(default)]
    pub realizations: Option<usize>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub n0_list: Option<Vec<f64>>,
    /// Minimum-SNR table rate threshold, bits per channel use.
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_m1() -> usize {
    4
}

fn default_metric() -> Metric {
    Metric::Matched
}

fn default_objective() -> Objective {
    Objective::MaxMi
}

fn default_seed() -> u64 {
    1
}

/// Reads an optional JSON config file and applies `overrides` on top.
///
/// Unknown keys are rejected; defaults are filled in and the result is
/// validated.
pub fn parse_config(file: Option<&Path>, overrides: Map<String, Value>) -> Result<ExperimentConfig> {
    let mut merged = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            match serde_json::from_str::<Value>(&text)? {
                Value::Object(map) => map,
                _ => return Err(Error::config("config", "top level of the config file must be an object")),
            }
        }
        None => Map::new(),
    };
    for (k, v) in overrides {
        merged.insert(k, v);
    }
    let cfg: ExperimentConfig = serde_json::from_value(Value::Object(merged)).map_err(|e| {
        let msg = e.to_string();
        let field = msg
            .split('`')
            .nth(1)
            .filter(|_| msg.starts_with("unknown field") || msg.starts_with("missing field"))
            .unwrap_or("config")
            .to_string();
        Error::config(field, msg)
    })?;
    cfg.resolve()
}

impl ExperimentConfig {
    /// A configuration of `kind` with every other field at its default.
    pub fn new(kind: Kind) -> Self {
        Self {
            kind,
            snr_db_list: Vec::new(),
            r0: 0,
            m1: default_m1(),
            m2: None,
            gaussian_x2: false,
            gaussian_x1: false,
            metric: default_metric(),
            objective: default_objective(),
            fading: FrameFading::Fast,
            block_length: None,
            max_frames: None,
            target_frame_errors: None,
            max_iters: None,
            samples: None,
            realizations: None,
            alpha: None,
            n0_list: None,
            threshold: None,
            seed: default_seed(),
            output: None,
        }
    }

    /// Fills kind-specific defaults and validates.
    pub fn resolve(mut self) -> Result<Self> {
        let (samples, realizations) = match self.kind {
            Kind::Rates | Kind::Table1 => (1, 20_000),
            Kind::Gmi => (100_000, 200),
            Kind::Asymptotics => (10_000, 1),
            Kind::OptimizeD => (1, 100),
            Kind::Ber => (1, 1),
        };
        self.samples.get_or_insert(samples);
        self.realizations.get_or_insert(realizations);
        if self.kind == Kind::Ber {
            self.block_length.get_or_insert(4000);
            self.max_frames.get_or_insert(100_000);
            self.target_frame_errors.get_or_insert(100);
            self.max_iters.get_or_insert(50);
        }
        if self.kind == Kind::Asymptotics {
            self.alpha.get_or_insert(0.25);
            self.n0_list.get_or_insert_with(|| vec![1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6]);
        }
        if self.kind == Kind::Table1 {
            self.threshold.get_or_insert(1.5);
        }
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| Err(Error::config(field, reason));
        if self.r0 > 2 {
            return bad("r0", "must be 0, 1 or 2");
        }
        if !self.gaussian_x1 && ![4, 16, 64].contains(&self.m1) {
            return bad("m1", "must be 4, 16 or 64");
        }
        if let Some(m2) = self.m2 {
            if ![4, 16, 64].contains(&m2) {
                return bad("m2", "must be 4, 16 or 64");
            }
            if self.gaussian_x2 {
                return bad("m2", "give either m2 or gaussian_x2, not both");
            }
        }
        let needs_interferer = !matches!(self.kind, Kind::Asymptotics);
        if needs_interferer && self.m2.is_none() && !self.gaussian_x2 {
            let reason = match self.metric {
                Metric::Mismatched => "required (the mismatched metric still needs the interferer's alphabet to simulate it); or set gaussian_x2",
                Metric::Matched => "required unless gaussian_x2 is set",
            };
            return bad("m2", reason);
        }
        if self.gaussian_x1 {
            if self.kind != Kind::Rates {
                return bad("gaussian_x1", "Gaussian desired input is only supported for kind `rates`");
            }
            if !self.gaussian_x2 {
                return bad("gaussian_x1", "requires gaussian_x2 (both inputs Gaussian)");
            }
        }
        if matches!(self.kind, Kind::Rates | Kind::Gmi | Kind::Ber | Kind::OptimizeD) && self.snr_db_list.is_empty() {
            return bad("snr_db_list", "must not be empty");
        }
        if self.snr_db_list.iter().any(|s| !s.is_finite()) {
            return bad("snr_db_list", "values must be finite");
        }
        if self.kind == Kind::OptimizeD {
            if self.snr_db_list.len() != 1 {
                return bad("snr_db_list", "optimize-d takes exactly one SNR");
            }
            if self.r0 == 0 {
                return bad("r0", "optimize-d needs a relay (r0 = 1 or 2)");
            }
        }
        if self.kind == Kind::Asymptotics && self.r0 == 0 {
            return bad("r0", "asymptotics needs a relay (r0 = 1 or 2)");
        }
        if self.kind == Kind::Rates && self.metric == Metric::Mismatched {
            return bad("metric", "rates are for the matched metric; use kind `gmi` for the mismatched one");
        }
        for (name, v) in [
            ("samples", self.samples),
            ("realizations", self.realizations),
            ("block_length", self.block_length),
            ("max_frames", self.max_frames),
            ("target_frame_errors", self.target_frame_errors),
            ("max_iters", self.max_iters),
        ] {
            if v == Some(0) {
                return bad(name, "must be positive");
            }
        }
        if self.kind == Kind::Ber {
            let n = self.block_length.unwrap_or(0);
            if n % 2 != 0 || n < 96 {
                return bad("block_length", "must be even and at least 96");
            }
            let k = self.m1.trailing_zeros() as usize;
            if n % k != 0 {
                return bad("block_length", "must be a multiple of the bits per symbol of m1");
            }
        }
        if let Some(a) = self.alpha {
            if !(a > 0.0 && a < 0.5) {
                return bad("alpha", "must lie in (0, 0.5)");
            }
        }
        if let Some(list) = &self.n0_list {
            if list.is_empty() || list.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
                return bad("n0_list", "must be a nonempty list of positive values");
            }
        }
        if let Some(t) = self.threshold {
            if !(t > 0.0 && t.is_finite()) {
                return bad("threshold", "must be positive");
            }
        }
        Ok(())
    }

    fn c1(&self) -> Result<Constellation> {
        Constellation::new(self.m1)
    }

    fn interferer(&self) -> Result<Interferer> {
        Ok(match self.m2 {
            Some(m2) if !self.gaussian_x2 => Interferer::Discrete(Constellation::new(m2)?),
            _ => Interferer::Gaussian,
        })
    }

    fn relay_inputs(&self) -> Result<RelayInputs> {
        let user1 = if self.gaussian_x1 { InputLaw::Gaussian } else { InputLaw::qam(self.m1)? };
        let user2 = match self.interferer()? {
            Interferer::Discrete(c) => InputLaw::Discrete(c),
            Interferer::Gaussian => InputLaw::Gaussian,
        };
        Ok(RelayInputs { user1, user2 })
    }

    /// Relay for rate `r0` (none for `r0 = 0`), choosing `d` through the cache.
    pub fn relay(&self, r0: u32) -> Result<Option<Relay>> {
        if r0 == 0 {
            return Ok(None);
        }
        Ok(Some(Relay::new(
            CosetPartition::new(r0)?,
            self.relay_inputs()?,
            ScaleRule::Cached(self.objective),
        )))
    }

    fn mc(&self) -> McConfig {
        McConfig {
            realizations: self.realizations.unwrap_or(1),
            samples: self.samples.unwrap_or(1),
            seed: self.seed,
        }
    }

    /// The `#` header line: tool version and resolved configuration.
    pub fn header_line(&self) -> Result<String> {
        let v = serde_json::json!({ "tool": VERSION, "config": self });
        Ok(format!("# {}", serde_json::to_string(&v)?))
    }
}

/// One point of a rate or GMI curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateRow {
    pub snr_db: f64,
    pub r0: u32,
    pub rate_bits: f64,
    pub std_err: f64,
    pub s_star: Option<f64>,
    /// GMI realizations whose tilt optimum hit the search boundary.
    pub boundary_hits: Option<usize>,
}

/// Matched rates (or GMI for `kind = gmi`) at every configured SNR.
pub fn run_rates(cfg: &ExperimentConfig) -> Result<Vec<RateRow>> {
    let relay = cfg.relay(cfg.r0)?;
    let interferer = cfg.interferer()?;
    let mut rows = Vec::with_capacity(cfg.snr_db_list.len());
    for &snr in &cfg.snr_db_list {
        let lc = LinkConfig::from_snr_db(snr, cfg.r0)?;
        let est = if cfg.gaussian_x1 {
            infotheory::gaussian_input_rate(&lc, relay.as_ref(), &Fading::Fast, &cfg.mc())
        } else if cfg.kind == Kind::Gmi {
            infotheory::gmi_rate(&lc, &cfg.c1()?, &interferer, relay.as_ref(), &Fading::Fast, &cfg.mc())
        } else {
            infotheory::matched_rate(&lc, &cfg.c1()?, &interferer, relay.as_ref(), &Fading::Fast, &cfg.mc())
        };
        rows.push(RateRow {
            snr_db: snr,
            r0: cfg.r0,
            rate_bits: est.value,
            std_err: est.std_error,
            s_star: est.s_star,
            boundary_hits: est.s_star.map(|_| est.boundary_hits),
        });
    }
    Ok(rows)
}

/// One SNR point of a BER curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BerRow {
    pub snr_db: f64,
    pub frames: usize,
    pub bit_errors: usize,
    pub ber: f64,
    pub fer: f64,
    pub mean_iters: f64,
}

/// Frames simulated in parallel between stopping checks.
const FRAME_BATCH: usize = 32;

/// BER/FER sweep; `on_row` is called as soon as each SNR point is finished
/// and may end the sweep early by returning `ControlFlow::Break`.
///
/// Frame `f` at every SNR uses stream `(seed, Frame, f)`, so curves for
/// different `R0` (and different SNRs) are paired. Frames run in parallel
/// batches but are tallied in index order and the stop rule (target frame
/// errors or max frames) is applied frame by frame, so the counts do not
/// depend on the thread count.
pub fn run_ber_sweep(
    cfg: &ExperimentConfig,
    on_row: &mut dyn FnMut(&BerRow) -> Result<ControlFlow<()>>,
) -> Result<Vec<BerRow>> {
    let n = cfg.block_length.unwrap_or(4000);
    let code = LdpcCode::construct(n, cfg.seed)?;
    let relay = cfg.relay(cfg.r0)?;
    let link = Transceiver::new(
        &code,
        Interleaving::PerCodeword,
        cfg.c1()?,
        cfg.interferer()?,
        cfg.metric,
        relay.as_ref(),
        cfg.fading,
        cfg.max_iters.unwrap_or(50),
    )?;
    let max_frames = cfg.max_frames.unwrap_or(100_000);
    let target = cfg.target_frame_errors.unwrap_or(100);
    let mut rows = Vec::new();
    for &snr in &cfg.snr_db_list {
        let lc = LinkConfig::from_snr_db(snr, cfg.r0)?;
        let (mut frames, mut bit_errors, mut frame_errors, mut iters) = (0usize, 0usize, 0usize, 0usize);
        'frames: while frames < max_frames {
            let start = frames;
            let end = (start + FRAME_BATCH).min(max_frames);
            let batch: Vec<FrameResult> = (start..end)
                .into_par_iter()
                .map(|f| link.run_frame(&lc, cfg.seed, f as u64))
                .collect::<Result<_>>()?;
            for r in batch {
                frames += 1;
                bit_errors += r.bit_errors;
                frame_errors += r.frame_error as usize;
                iters += r.iters;
                if frame_errors >= target {
                    break 'frames;
                }
            }
        }
        let row = BerRow {
            snr_db: snr,
            frames,
            bit_errors,
            ber: bit_errors as f64 / (frames * code.message_len()) as f64,
            fer: frame_errors as f64 / frames as f64,
            mean_iters: iters as f64 / frames as f64,
        };
        let flow = on_row(&row)?;
        rows.push(row);
        if flow.is_break() {
            break;
        }
    }
    Ok(rows)
}

/// One row of the minimum-SNR table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Table1Row {
    pub m1: usize,
    pub m2: Option<usize>,
    pub r0: u32,
    pub threshold: f64,
    /// Smallest SNR reaching the threshold (absent when unreachable).
    pub min_snr_db: Option<f64>,
    /// Improvement over `R0 = 0` (absent when either side is unreachable).
    pub gain_db: Option<f64>,
    pub reached: bool,
}

/// Smallest SNR in `[lo, hi]` at which the ensemble matched rate reaches
/// `threshold`, by bisection down to `resolution` dB.
///
/// Returns `None` when even `hi` falls short. Every evaluation uses the same
/// seed, so the curve being bisected is a fixed (common random numbers) one.
pub fn min_snr_for_rate(cfg: &ExperimentConfig, r0: u32, threshold: f64, lo: f64, hi: f64, resolution: f64) -> Result<Option<f64>> {
    let relay = cfg.relay(r0)?;
    let c1 = cfg.c1()?;
    let interferer = cfg.interferer()?;
    let rate = |snr: f64| -> Result<f64> {
        let lc = LinkConfig::from_snr_db(snr, r0)?;
        Ok(infotheory::matched_rate(&lc, &c1, &interferer, relay.as_ref(), &Fading::Fast, &cfg.mc()).value)
    };
    if rate(hi)? < threshold {
        return Ok(None);
    }
    if rate(lo)? >= threshold {
        return Ok(Some(lo));
    }
    let (mut lo, mut hi) = (lo, hi);
    while hi - lo > resolution {
        let mid = 0.5 * (lo + hi);
        if rate(mid)? >= threshold {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(0.5 * (lo + hi)))
}

/// Minimum SNR for the rate threshold at `R0 = 0, 1, 2` and gains over `R0 = 0`.
pub fn run_table1(cfg: &ExperimentConfig) -> Result<Vec<Table1Row>> {
    let threshold = cfg.threshold.unwrap_or(1.5);
    let (lo, hi) = TABLE1_SNR_RANGE;
    let mins = (0..=2)
        .map(|r0| min_snr_for_rate(cfg, r0, threshold, lo, hi, TABLE1_RESOLUTION_DB))
        .collect::<Result<Vec<_>>>()?;
    Ok(mins
        .iter()
        .enumerate()
        .map(|(r0, &m)| Table1Row {
            m1: cfg.m1,
            m2: cfg.m2,
            r0: r0 as u32,
            threshold,
            min_snr_db: m,
            gain_db: if r0 == 0 { m.map(|_| 0.0) } else { mins[0].zip(m).map(|(b, x)| b - x) },
            reached: m.is_some(),
        })
        .collect())
}

/// One relay design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptimizeDRow {
    pub realization_index: usize,
    pub g1_re: f64,
    pub g1_im: f64,
    pub g2_re: f64,
    pub g2_im: f64,
    pub d_re: f64,
    pub d_im: f64,
    pub h_cond_bits: f64,
    pub h_marg_bits: f64,
}

/// Exact (uncached) relay scale optimization for random relay gains.
pub fn run_optimize_d(cfg: &ExperimentConfig) -> Result<Vec<OptimizeDRow>> {
    let lc = LinkConfig::from_snr_db(cfg.snr_db_list[0], cfg.r0)?;
    let cp = CosetPartition::new(cfg.r0)?;
    let inputs = cfg.relay_inputs()?;
    (0..cfg.realizations.unwrap_or(1))
        .into_par_iter()
        .map(|i| {
            let cr = ChannelRealization::sample(&mut stream(cfg.seed, Domain::Realization, i as u64));
            let opt = optimize_d(cr.g1, cr.g2, &lc, &inputs, &cp, cfg.objective);
            let d = opt.d.value();
            Ok(OptimizeDRow {
                realization_index: i,
                g1_re: cr.g1.re,
                g1_im: cr.g1.im,
                g2_re: cr.g2.re,
                g2_im: cr.g2.im,
                d_re: d.re,
                d_im: d.im,
                h_cond_bits: opt.entropies.h_cond,
                h_marg_bits: opt.entropies.h_marg,
            })
        })
        .collect()
}

/// One noise level of the small-noise sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AsymptoticsCsvRow {
    pub n0: f64,
    pub d: f64,
    pub h_xr_given_y1: f64,
    pub h_xr_given_y1_se: f64,
    pub h_xr_given_x1_y1: f64,
    pub h_xr_given_x1_y1_se: f64,
}

/// First full-rank realization drawn from the seed.
pub fn full_rank_realization(seed: u64) -> ChannelRealization {
    (0..)
        .map(|i| ChannelRealization::sample(&mut stream(seed, Domain::Realization, i)))
        .find(|cr| !cr.is_rank_deficient())
        .expect("a Gaussian draw is full rank with probability one")
}

/// Relay entropies with Gaussian inputs and `d = N0^alpha` over the `N0` list.
pub fn run_asymptotics(cfg: &ExperimentConfig) -> Result<Vec<AsymptoticsCsvRow>> {
    let cr = full_rank_realization(cfg.seed);
    let cp = CosetPartition::new(cfg.r0)?;
    let rows = infotheory::asymptotics_sweep(
        cfg.alpha.unwrap_or(0.25),
        cfg.n0_list.as_deref().unwrap_or(&[]),
        &cr,
        &cp,
        cfg.samples.unwrap_or(10_000),
        cfg.seed,
    )?;
    Ok(rows
        .into_iter()
        .map(|r| AsymptoticsCsvRow {
            n0: r.n0,
            d: r.d,
            h_xr_given_y1: r.entropies.h_given_y1,
            h_xr_given_y1_se: r.entropies.h_given_y1_se,
            h_xr_given_x1_y1: r.entropies.h_given_x1_y1,
            h_xr_given_x1_y1_se: r.entropies.h_given_x1_y1_se,
        })
        .collect())
}

/// CSV writer preceded by the provenance header.
pub struct CsvSink<W: Write> {
    writer: csv::Writer<W>,
}

impl<W: Write> CsvSink<W> {
    pub fn new(mut out: W, cfg: &ExperimentConfig) -> Result<Self> {
        writeln!(out, "{}", cfg.header_line()?)?;
        Ok(Self {
            writer: csv::Writer::from_writer(out),
        })
    }

    pub fn row<T: Serialize>(&mut self, row: &T) -> Result<()> {
        self.writer.serialize(row).map_err(csv_error)?;
        self.writer.flush()?;
        Ok(())
    }

    pub fn rows<T: Serialize>(&mut self, rows: &[T]) -> Result<()> {
        rows.iter().try_for_each(|r| self.row(r))
    }
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::config("output", format!("{other:?}")),
    }
}

/// Runs the experiment and writes header plus CSV to `out`.
pub fn run_experiment<W: Write>(cfg: &ExperimentConfig, out: W) -> Result<()> {
    let mut sink = CsvSink::new(out, cfg)?;
    match cfg.kind {
        Kind::Rates | Kind::Gmi => sink.rows(&run_rates(cfg)?),
        Kind::Ber => run_ber_sweep(cfg, &mut |row| sink.row(row).map(|_| ControlFlow::Continue(()))).map(|_| ()),
        Kind::OptimizeD => sink.rows(&run_optimize_d(cfg)?),
        Kind::Asymptotics => sink.rows(&run_asymptotics(cfg)?),
        Kind::Table1 => sink.rows(&run_table1(cfg)?),
    }
}

/// Runs `f` on a dedicated pool of `threads` workers (`None`: rayon's default).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(Error::config("threads", "must be positive")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| Error::config("threads", e.to_string())),
    }
}
