//! `coarse-nc`: command-line driver for the coarse network coding simulator.
//!
//! Each subcommand maps to one experiment kind. Flags override the values of
//! an optional `--config` JSON file; the resolved configuration is echoed as
//! the first (`#`) line of the CSV output.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use coarse_nc::harness::{self, parse_config};
use serde_json::{json, Map, Value};

#[derive(Debug, Parser)]
#[command(name = "coarse-nc", version, about = "Coarse network coding relay simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Master random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output CSV path (default: stdout).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// JSON experiment file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Matched achievable rate R1 versus SNR.
    Rates(RateFlags),
    /// GMI of the mismatched metric versus SNR.
    Gmi(RateFlags),
    /// LDPC-BICM bit/frame error rates versus SNR.
    Ber(BerFlags),
    /// Relay scale choices for random relay gains.
    #[command(name = "optimize-d")]
    OptimizeD(OptimizeFlags),
    /// Relay entropies with d = N0^alpha as N0 shrinks.
    Asymptotics(AsymptoticsFlags),
    /// Minimum SNR for a target rate at R0 = 0, 1, 2.
    Table1(Table1Flags),
}

#[derive(Debug, Args)]
struct InputFlags {
    /// Desired user's QAM order (4, 16, 64).
    #[arg(long)]
    m1: Option<usize>,
    /// Interferer's QAM order.
    #[arg(long, conflicts_with = "gaussian_x2")]
    m2: Option<usize>,
    /// Gaussian interferer.
    #[arg(long)]
    gaussian_x2: bool,
    /// Relay objective when choosing d: max-mi or min-cond-entropy.
    #[arg(long)]
    objective: Option<String>,
}

#[derive(Debug, Args)]
struct RateFlags {
    /// Comma-separated SNR points in dB.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snr_db_list: Option<Vec<f64>>,
    #[arg(long)]
    r0: Option<u32>,
    #[command(flatten)]
    inputs: InputFlags,
    /// Gaussian desired input as well (rates only).
    #[arg(long)]
    gaussian_x1: bool,
    /// Channel uses per fading realization.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    realizations: Option<usize>,
}

#[derive(Debug, Args)]
struct BerFlags {
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snr_db_list: Option<Vec<f64>>,
    #[arg(long)]
    r0: Option<u32>,
    #[command(flatten)]
    inputs: InputFlags,
    /// matched or mismatched.
    #[arg(long)]
    metric: Option<String>,
    #[arg(long)]
    block_length: Option<usize>,
    #[arg(long)]
    max_frames: Option<usize>,
    #[arg(long)]
    target_frame_errors: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// fast (default) or block.
    #[arg(long)]
    fading: Option<String>,
}

#[derive(Debug, Args)]
struct OptimizeFlags {
    #[arg(long, allow_hyphen_values = true)]
    snr_db: Option<f64>,
    #[arg(long)]
    r0: Option<u32>,
    #[command(flatten)]
    inputs: InputFlags,
    #[arg(long)]
    realizations: Option<usize>,
}

#[derive(Debug, Args)]
struct AsymptoticsFlags {
    #[arg(long)]
    alpha: Option<f64>,
    /// Comma-separated noise levels.
    #[arg(long, value_delimiter = ',')]
    n0_list: Option<Vec<f64>>,
    #[arg(long)]
    r0: Option<u32>,
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Debug, Args)]
struct Table1Flags {
    #[command(flatten)]
    inputs: InputFlags,
    /// Rate threshold in bits per channel use (1.0 or 1.5 are the usual choices).
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    realizations: Option<usize>,
}

/// Collects the flags that were given into config keys.
struct Overrides(Map<String, Value>);

impl Overrides {
    fn set<T: Into<Value>>(&mut self, key: &str, v: Option<T>) -> &mut Self {
        if let Some(v) = v {
            self.0.insert(key.to_string(), v.into());
        }
        self
    }

    fn flag(&mut self, key: &str, on: bool) -> &mut Self {
        self.set(key, on.then_some(true))
    }

    fn inputs(&mut self, f: InputFlags) -> &mut Self {
        self.set("m1", f.m1)
            .set("m2", f.m2)
            .flag("gaussian_x2", f.gaussian_x2)
            .set("objective", f.objective)
    }
}

fn overrides(cli: Cli) -> (Map<String, Value>, Option<PathBuf>, Option<usize>) {
    let mut o = Overrides(Map::new());
    let kind = match cli.command {
        Command::Rates(f) => {
            rate_flags(&mut o, f);
            "rates"
        }
        Command::Gmi(f) => {
            rate_flags(&mut o, f);
            "gmi"
        }
        Command::Ber(f) => {
            o.set("snr_db_list", f.snr_db_list.map(|v| json!(v)))
                .set("r0", f.r0)
                .inputs(f.inputs)
                .set("metric", f.metric)
                .set("block_length", f.block_length)
                .set("max_frames", f.max_frames)
                .set("target_frame_errors", f.target_frame_errors)
                .set("max_iters", f.max_iters)
                .set("fading", f.fading);
            "ber"
        }
        Command::OptimizeD(f) => {
            o.set("snr_db_list", f.snr_db.map(|v| json!([v])))
                .set("r0", f.r0)
                .inputs(f.inputs)
                .set("realizations", f.realizations);
            "optimize-d"
        }
        Command::Asymptotics(f) => {
            o.set("alpha", f.alpha)
                .set("n0_list", f.n0_list.map(|v| json!(v)))
                .set("r0", f.r0)
                .set("samples", f.samples);
            "asymptotics"
        }
        Command::Table1(f) => {
            o.inputs(f.inputs)
                .set("threshold", f.threshold)
                .set("samples", f.samples)
                .set("realizations", f.realizations);
            "table1"
        }
    };
    o.set("kind", Some(kind))
        .set("seed", cli.seed)
        .set("output", cli.out.map(|p| p.to_string_lossy().into_owned()));
    (o.0, cli.config, cli.threads)
}

fn rate_flags(o: &mut Overrides, f: RateFlags) {
    o.set("snr_db_list", f.snr_db_list.map(|v| json!(v)))
        .set("r0", f.r0)
        .inputs(f.inputs)
        .flag("gaussian_x1", f.gaussian_x1)
        .set("samples", f.samples)
        .set("realizations", f.realizations);
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let (map, config_file, threads) = overrides(cli);
    let cfg = parse_config(config_file.as_deref(), map).context("invalid configuration")?;
    let out: Box<dyn Write + Send> = match &cfg.output {
        Some(path) => Box::new(BufWriter::new(
            File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout())),
    };
    harness::with_threads(threads, || harness::run_experiment(&cfg, out))?
        .with_context(|| format!("{} experiment failed", cfg.kind.name()))?;
    Ok(())
}
