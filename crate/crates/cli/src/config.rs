//! Run configurations: one tagged record per subcommand.
//!
//! A configuration file is either a bare `RunConfig` JSON object or a
//! report written by an earlier run, whose `config` field is used. Command
//! line flags are applied on top as dotted-path overrides, so the config
//! embedded in a report is always the fully resolved one.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use ifid_core::diffusion::{DiffusionSchedule, SamplerConfig};
use ifid_core::interp::InterpConfig;
use ifid_core::knn::NnConfig;
use ifid_core::toygmm::{DilemmaConfig, ToyPreset};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::decoder::{DecoderConfig, FeatureConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Decode in-process with a builtin decoder.
    #[default]
    Toy,
    /// Hand latents to an external decoder and wait for features.
    Real,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum RunConfig {
    Rfid(RfidConfig),
    Ifid(IfidConfig),
    GfidT(GfidTConfig),
    Toy(ToyConfig),
    Correlate(CorrelateConfig),
    Interpolate(InterpolateConfig),
    NnDump(NnDumpConfig),
    Fid(FidConfig),
    Plot(PlotConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RfidConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Features of the original data.
    pub reference: PathBuf,
    /// Features of the reconstructions; exclusive with `latents`.
    pub reconstructed: Option<PathBuf>,
    /// Latents to decode with the builtin decoder.
    pub latents: Option<PathBuf>,
    pub decoder: DecoderConfig,
    pub features: FeatureConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IfidConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub mode: Mode,
    pub latents: PathBuf,
    /// Set searched for neighbors; the latents themselves when absent.
    pub nn_reference: Option<PathBuf>,
    /// Treat the latents as independent datasets of this many consecutive
    /// rows and search neighbors within each; midpoints are pooled.
    pub dataset_size: Option<usize>,
    /// Features of the original data.
    pub reference: PathBuf,
    /// Features of the decoded interpolations (real mode, second phase).
    pub resume: Option<PathBuf>,
    pub decoder: DecoderConfig,
    pub features: FeatureConfig,
    pub nn: NnConfig,
    pub interp: InterpConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GfidTConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub mode: Mode,
    /// Training latents defining the empirical score.
    pub train: PathBuf,
    /// Latents that are noised to `t` and denoised back.
    pub sources: PathBuf,
    /// Features of the original data.
    pub reference: PathBuf,
    /// Directory holding `features_t<t>.tns1` files (real mode, second phase).
    pub resume: Option<PathBuf>,
    pub ts: Vec<f64>,
    pub bandwidth: f64,
    pub schedule: DiffusionSchedule,
    pub sampler: SamplerConfig,
    pub decoder: DecoderConfig,
    pub features: FeatureConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub preset: ToyPreset,
    pub experiment: DilemmaConfig,
    pub sampler: SamplerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrelateConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub input: PathBuf,
    pub target: String,
    /// Columns whose sign is flipped before correlating (e.g. PSNR).
    pub negate: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterpolateConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub latents: PathBuf,
    /// Set the neighbor indices refer to; the latents themselves when absent.
    pub nn_reference: Option<PathBuf>,
    pub nn_indices: PathBuf,
    pub nn_distances: PathBuf,
    pub interp: InterpConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NnDumpConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub queries: PathBuf,
    /// Reference set; the queries themselves when absent.
    pub reference: Option<PathBuf>,
    pub nn: NnConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FidConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub a: PathBuf,
    pub b: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub input: PathBuf,
    pub x: String,
    pub y: String,
    pub title: Option<String>,
    /// File name inside `out_dir`.
    pub output: String,
}

fn here() -> PathBuf {
    PathBuf::from(".")
}

impl Default for RfidConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: here(),
            reference: PathBuf::new(),
            reconstructed: None,
            latents: None,
            decoder: DecoderConfig::default(),
            features: FeatureConfig::default(),
        }
    }
}

impl Default for IfidConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: here(),
            mode: Mode::Toy,
            latents: PathBuf::new(),
            nn_reference: None,
            dataset_size: None,
            reference: PathBuf::new(),
            resume: None,
            decoder: DecoderConfig::default(),
            features: FeatureConfig::default(),
            nn: NnConfig::default(),
            interp: InterpConfig::default(),
        }
    }
}

impl Default for GfidTConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: here(),
            mode: Mode::Toy,
            train: PathBuf::new(),
            sources: PathBuf::new(),
            reference: PathBuf::new(),
            resume: None,
            ts: vec![0.0, 0.1, 0.2, 0.4, 0.6, 0.8, 1.0],
            bandwidth: 0.0,
            schedule: DiffusionSchedule::RectifiedFlow,
            sampler: SamplerConfig::default(),
            decoder: DecoderConfig::default(),
            features: FeatureConfig::default(),
        }
    }
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: here(),
            preset: ToyPreset::Grid25,
            experiment: DilemmaConfig::default(),
            sampler: SamplerConfig::default(),
        }
    }
}

impl Default for CorrelateConfig {
    fn default() -> Self {
        Self { seed: 0, out_dir: here(), input: PathBuf::new(), target: "gfid".into(), negate: Vec::new() }
    }
}

impl Default for InterpolateConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: here(),
            latents: PathBuf::new(),
            nn_reference: None,
            nn_indices: PathBuf::new(),
            nn_distances: PathBuf::new(),
            interp: InterpConfig::default(),
        }
    }
}

impl Default for NnDumpConfig {
    fn default() -> Self {
        Self { seed: 0, out_dir: here(), queries: PathBuf::new(), reference: None, nn: NnConfig::default() }
    }
}

impl Default for FidConfig {
    fn default() -> Self {
        Self { seed: 0, out_dir: here(), a: PathBuf::new(), b: PathBuf::new() }
    }
}

impl Default for PlotConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: here(),
            input: PathBuf::new(),
            x: String::new(),
            y: "gfid".into(),
            title: None,
            output: "plot.svg".into(),
        }
    }
}

impl RunConfig {
    pub fn command(&self) -> &'static str {
        match self {
            Self::Rfid(_) => "rfid",
            Self::Ifid(_) => "ifid",
            Self::GfidT(_) => "gfid-t",
            Self::Toy(_) => "toy",
            Self::Correlate(_) => "correlate",
            Self::Interpolate(_) => "interpolate",
            Self::NnDump(_) => "nn-dump",
            Self::Fid(_) => "fid",
            Self::Plot(_) => "plot",
        }
    }

    pub fn out_dir(&self) -> &Path {
        match self {
            Self::Rfid(c) => &c.out_dir,
            Self::Ifid(c) => &c.out_dir,
            Self::GfidT(c) => &c.out_dir,
            Self::Toy(c) => &c.out_dir,
            Self::Correlate(c) => &c.out_dir,
            Self::Interpolate(c) => &c.out_dir,
            Self::NnDump(c) => &c.out_dir,
            Self::Fid(c) => &c.out_dir,
            Self::Plot(c) => &c.out_dir,
        }
    }

    /// Resolve `command` from an optional base document and overrides.
    pub fn resolve(command: &str, base: Option<Value>, overrides: &[(String, Value)]) -> anyhow::Result<Self> {
        let mut doc = match base {
            Some(Value::Object(mut m)) => {
                // a report: take its embedded config
                if let Some(Value::Object(inner)) = m.remove("config") {
                    m = inner;
                }
                match m.get("command").and_then(Value::as_str) {
                    Some(c) if c != command => bail!("config is for {c:?}, not {command:?}"),
                    _ => {}
                }
                m
            }
            Some(_) => bail!("config must be a JSON object"),
            None => Map::new(),
        };
        doc.insert("command".into(), Value::String(command.into()));
        let mut doc = Value::Object(doc);
        for (path, value) in overrides {
            set_path(&mut doc, path, value.clone());
        }
        serde_json::from_value(doc).context("invalid configuration")
    }

    pub fn load_base(path: &Path) -> anyhow::Result<Value> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Set `a.b.c` in a JSON object, creating intermediate objects.
fn set_path(doc: &mut Value, path: &str, value: Value) {
    let mut cur = doc;
    let mut parts = path.split('.').peekable();
    while let Some(key) = parts.next() {
        if !cur.is_object() {
            *cur = Value::Object(Map::new());
        }
        let obj = cur.as_object_mut().expect("object");
        if parts.peek().is_none() {
            obj.insert(key.to_owned(), value);
            return;
        }
        cur = obj.entry(key.to_owned()).or_insert_with(|| Value::Object(Map::new()));
    }
}
