//! The `eval` command line front end.

pub mod commands;
pub mod config;
pub mod decoder;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use ifid_core::diffusion::DiffusionSchedule;
use ifid_core::interp::InterpMethod;
use ifid_core::toygmm::ToyPreset;
use serde::Serialize;
use serde_json::Value;

pub use commands::{Outcome, Status};
pub use config::RunConfig;
use decoder::DecoderKind;

/// Exit status when latents were handed off for external decoding.
pub const EXIT_AWAITING_DECODE: u8 = 2;

/// Environment variable overriding the worker thread count.
pub const THREADS_ENV: &str = "EVAL_THREADS";

#[derive(Debug, Parser)]
#[command(name = "eval", version, about = "Latent diffusability metrics: rFID, iFID, gFID(t) and toy experiments")]
pub struct Cli {
    /// JSON run config, or a report whose embedded config is rerun.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// FID between data features and reconstruction features.
    Rfid(RfidArgs),
    /// FID of decoded nearest-neighbor interpolations.
    Ifid(IfidArgs),
    /// FID after noising sources to t and denoising back, for each t.
    GfidT(GfidTArgs),
    /// Isolated vs connected mixture experiment with plots.
    Toy(ToyArgs),
    /// PCC/SRCC of every metric column against a target column.
    Correlate(CorrelateArgs),
    /// Interpolate latents toward precomputed neighbors.
    Interpolate(InterpolateArgs),
    /// Exact k-nearest neighbors as a .tns1 pair plus CSV.
    NnDump(NnDumpArgs),
    /// Fréchet distance between two feature files.
    Fid(FidArgs),
    /// Scatter plot of one metric column against another.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModeArg {
    Toy,
    Real,
}

#[derive(Debug, Args, Default)]
pub struct DecoderArgs {
    #[arg(long = "decoder")]
    pub kind: Option<DecoderKind>,
    #[arg(long)]
    pub decoder_out_dim: Option<usize>,
    /// Compare 2D points through a Gaussian-bump lattice of this spacing.
    #[arg(long)]
    pub lattice_step: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct RfidArgs {
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub reconstructed: Option<PathBuf>,
    #[arg(long)]
    pub latents: Option<PathBuf>,
    #[command(flatten)]
    pub decoder: DecoderArgs,
}

#[derive(Debug, Args, Default)]
pub struct NnArgs {
    #[arg(long)]
    pub k: Option<usize>,
    /// Keep each query's own row as a candidate.
    #[arg(long)]
    pub include_self: bool,
}

#[derive(Debug, Args, Default)]
pub struct InterpArgs {
    #[arg(long)]
    pub method: Option<InterpMethod>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub k_select: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct IfidArgs {
    #[arg(long)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub latents: Option<PathBuf>,
    #[arg(long)]
    pub nn_reference: Option<PathBuf>,
    /// Split the latents into independent datasets of this many rows.
    #[arg(long)]
    pub dataset_size: Option<usize>,
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub decoder: DecoderArgs,
    #[command(flatten)]
    pub nn: NnArgs,
    #[command(flatten)]
    pub interp: InterpArgs,
}

#[derive(Debug, Args, Default)]
pub struct SamplerArgs {
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub stochastic: Option<bool>,
    #[arg(long)]
    pub eta: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct GfidTArgs {
    #[arg(long)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub sources: Option<PathBuf>,
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Comma-separated times, e.g. `0,0.1,0.2,0.4,0.6,0.8,1`.
    #[arg(long, value_delimiter = ',')]
    pub ts: Option<Vec<f64>>,
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long)]
    pub schedule: Option<DiffusionSchedule>,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[command(flatten)]
    pub decoder: DecoderArgs,
}

#[derive(Debug, Args, Default)]
pub struct ToyArgs {
    #[arg(long)]
    pub preset: Option<ToyPreset>,
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long)]
    pub train_size: Option<usize>,
    #[arg(long)]
    pub generated: Option<usize>,
    #[command(flatten)]
    pub sampler: SamplerArgs,
}

#[derive(Debug, Args, Default)]
pub struct CorrelateArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<String>,
    /// Columns to negate before correlating; repeat or comma-separate.
    #[arg(long, value_delimiter = ',')]
    pub negate: Option<Vec<String>>,
}

#[derive(Debug, Args, Default)]
pub struct InterpolateArgs {
    #[arg(long)]
    pub latents: Option<PathBuf>,
    #[arg(long)]
    pub nn_reference: Option<PathBuf>,
    #[arg(long)]
    pub nn_indices: Option<PathBuf>,
    #[arg(long)]
    pub nn_distances: Option<PathBuf>,
    #[command(flatten)]
    pub interp: InterpArgs,
}

#[derive(Debug, Args, Default)]
pub struct NnDumpArgs {
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[command(flatten)]
    pub nn: NnArgs,
}

#[derive(Debug, Args, Default)]
pub struct FidArgs {
    pub a: Option<PathBuf>,
    pub b: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct PlotArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub x: Option<String>,
    #[arg(long)]
    pub y: Option<String>,
    #[arg(long)]
    pub title: Option<String>,
    #[arg(long)]
    pub output: Option<String>,
}

/// Collects `(dotted.path, value)` overrides from flags that were given.
#[derive(Default)]
struct Overrides(Vec<(String, Value)>);

impl Overrides {
    fn set<T: Serialize>(&mut self, path: &str, value: &Option<T>) -> Result<()> {
        if let Some(v) = value {
            self.0.push((path.to_owned(), serde_json::to_value(v)?));
        }
        Ok(())
    }

    fn decoder(&mut self, d: &DecoderArgs) -> Result<()> {
        self.set("decoder.kind", &d.kind)?;
        self.set("decoder.out_dim", &d.decoder_out_dim)?;
        self.set("features.lattice_step", &d.lattice_step)
    }

    fn nn(&mut self, n: &NnArgs) -> Result<()> {
        self.set("nn.k", &n.k)?;
        self.set("nn.exclude_self", &n.include_self.then_some(false))
    }

    fn interp(&mut self, i: &InterpArgs) -> Result<()> {
        self.set("interp.method", &i.method)?;
        self.set("interp.alpha", &i.alpha)?;
        self.set("interp.k_select", &i.k_select)
    }

    fn sampler(&mut self, s: &SamplerArgs) -> Result<()> {
        self.set("sampler.steps", &s.steps)?;
        self.set("sampler.stochastic", &s.stochastic)?;
        self.set("sampler.eta", &s.eta)
    }
}

impl Cli {
    /// Merge `--config` (if any) with the flags into a resolved config.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut o = Overrides::default();
        o.set("seed", &self.seed)?;
        o.set("out_dir", &self.out_dir)?;
        let name = match &self.command {
            Command::Rfid(a) => {
                o.set("reference", &a.reference)?;
                o.set("reconstructed", &a.reconstructed)?;
                o.set("latents", &a.latents)?;
                o.decoder(&a.decoder)?;
                "rfid"
            }
            Command::Ifid(a) => {
                o.set("mode", &a.mode)?;
                o.set("latents", &a.latents)?;
                o.set("nn_reference", &a.nn_reference)?;
                o.set("dataset_size", &a.dataset_size)?;
                o.set("reference", &a.reference)?;
                o.set("resume", &a.resume)?;
                o.decoder(&a.decoder)?;
                o.nn(&a.nn)?;
                o.interp(&a.interp)?;
                "ifid"
            }
            Command::GfidT(a) => {
                o.set("mode", &a.mode)?;
                o.set("train", &a.train)?;
                o.set("sources", &a.sources)?;
                o.set("reference", &a.reference)?;
                o.set("resume", &a.resume)?;
                o.set("ts", &a.ts)?;
                o.set("bandwidth", &a.bandwidth)?;
                o.set("schedule", &a.schedule)?;
                o.sampler(&a.sampler)?;
                o.decoder(&a.decoder)?;
                "gfid-t"
            }
            Command::Toy(a) => {
                o.set("preset", &a.preset)?;
                o.set("experiment.bandwidth", &a.bandwidth)?;
                o.set("experiment.train_size", &a.train_size)?;
                o.set("experiment.generated", &a.generated)?;
                o.sampler(&a.sampler)?;
                "toy"
            }
            Command::Correlate(a) => {
                o.set("input", &a.input)?;
                o.set("target", &a.target)?;
                o.set("negate", &a.negate)?;
                "correlate"
            }
            Command::Interpolate(a) => {
                o.set("latents", &a.latents)?;
                o.set("nn_reference", &a.nn_reference)?;
                o.set("nn_indices", &a.nn_indices)?;
                o.set("nn_distances", &a.nn_distances)?;
                o.interp(&a.interp)?;
                "interpolate"
            }
            Command::NnDump(a) => {
                o.set("queries", &a.queries)?;
                o.set("reference", &a.reference)?;
                o.nn(&a.nn)?;
                "nn-dump"
            }
            Command::Fid(a) => {
                o.set("a", &a.a)?;
                o.set("b", &a.b)?;
                "fid"
            }
            Command::Plot(a) => {
                o.set("input", &a.input)?;
                o.set("x", &a.x)?;
                o.set("y", &a.y)?;
                o.set("title", &a.title)?;
                o.set("output", &a.output)?;
                "plot"
            }
        };
        let base = self.config.as_deref().map(RunConfig::load_base).transpose()?;
        RunConfig::resolve(name, base, &o.0)
    }
}

/// Parse arguments, resolve the config and run it.
pub fn run_args<I, T>(args: I) -> Result<Outcome>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    commands::run(&cli.resolve()?)
}
