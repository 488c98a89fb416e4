//! Subcommand pipelines.
//!
//! Each command first loads and checks every input it needs, then
//! computes. Nothing is written before all inputs have parsed.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, ensure, Context, Result};
use ifid_core::diffusion::{denoise_from, gfid_t, EmpiricalScore};
use ifid_core::frechet::fid;
use ifid_core::interp::interpolate_toward;
use ifid_core::knn::{batch_nn, blockwise_self_nn, NnResult};
use ifid_core::report::MetricReport;
use ifid_core::stats::{correlate_table, correlations_to_csv, pcc, srcc, MetricTable};
use ifid_core::svg::{ScatterPlot, Series};
use ifid_core::tensorio::{self, write_atomic};
use ifid_core::toygmm::run_dilemma_experiment_with;
use ifid_core::TensorSet;
use log::info;
use sha2::{Digest, Sha256};

use crate::config::*;
use crate::decoder::{featurize, BuiltinDecoder};

/// How a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Done,
    /// Latents were handed off; rerun with `--resume` once decoded.
    AwaitingDecode,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub status: Status,
    pub report: Option<MetricReport>,
    /// Where the report was written.
    pub report_path: Option<PathBuf>,
    /// One-line human summary for stdout.
    pub summary: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Reads inputs and remembers their digests.
#[derive(Default)]
struct Inputs {
    digests: BTreeMap<String, String>,
}

impl Inputs {
    fn bytes(&mut self, name: &str, path: &Path) -> Result<Vec<u8>> {
        if path.as_os_str().is_empty() {
            bail!("missing input: {name}");
        }
        let bytes = std::fs::read(path).with_context(|| format!("{name}: cannot read {}", path.display()))?;
        self.digests.insert(name.to_owned(), sha256_hex(&bytes));
        Ok(bytes)
    }

    fn tensor(&mut self, name: &str, path: &Path) -> Result<TensorSet> {
        let bytes = self.bytes(name, path)?;
        let parsed = if path.extension().is_some_and(|e| e == "csv") {
            let text = std::str::from_utf8(&bytes).map_err(|e| anyhow!("not UTF-8: {e}"))?;
            tensorio::parse_csv_matrix(text).map_err(anyhow::Error::from)
        } else {
            TensorSet::from_bytes(&bytes).map_err(anyhow::Error::from)
        };
        parsed.with_context(|| format!("{name}: {}", path.display()))
    }

    fn text(&mut self, name: &str, path: &Path) -> Result<String> {
        let bytes = self.bytes(name, path)?;
        String::from_utf8(bytes).with_context(|| format!("{name}: {} is not UTF-8", path.display()))
    }
}

struct Writer {
    dir: PathBuf,
    digests: BTreeMap<String, String>,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir: dir.to_owned(), digests: BTreeMap::new() })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        write_atomic(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.digests.insert(name.to_owned(), sha256_hex(bytes));
        Ok(path)
    }

    fn tensor(&mut self, name: &str, t: &TensorSet) -> Result<PathBuf> {
        self.write(name, &t.to_bytes())
    }

    fn finish(
        mut self,
        mut report: MetricReport,
        cfg: &RunConfig,
        inputs: Inputs,
        started: Instant,
        summary: String,
    ) -> Result<Outcome> {
        report.config = serde_json::to_value(cfg)?;
        report.inputs = inputs.digests;
        report.outputs = std::mem::take(&mut self.digests);
        report.duration_secs = started.elapsed().as_secs_f64();
        let name = format!("{}.json", cfg.command());
        let path = self.write(&name, serde_json::to_string_pretty(&report)?.as_bytes())?;
        Ok(Outcome { status: Status::Done, report: Some(report), report_path: Some(path), summary })
    }
}

pub fn run(cfg: &RunConfig) -> Result<Outcome> {
    let started = Instant::now();
    match cfg {
        RunConfig::Rfid(c) => rfid(cfg, c, started),
        RunConfig::Ifid(c) => ifid(cfg, c, started),
        RunConfig::GfidT(c) => gfid_sweep(cfg, c, started),
        RunConfig::Toy(c) => toy(cfg, c, started),
        RunConfig::Correlate(c) => correlate(cfg, c, started),
        RunConfig::Interpolate(c) => interpolate(cfg, c, started),
        RunConfig::NnDump(c) => nn_dump(cfg, c, started),
        RunConfig::Fid(c) => fid_cmd(cfg, c, started),
        RunConfig::Plot(c) => plot(cfg, c, started),
    }
}

fn check_cols(what: &str, expected: usize, got: usize) -> Result<()> {
    ensure!(expected == got, "{what}: expected {expected} columns, got {got}");
    Ok(())
}

fn rfid(cfg: &RunConfig, c: &RfidConfig, started: Instant) -> Result<Outcome> {
    let mut inputs = Inputs::default();
    let reference = inputs.tensor("reference", &c.reference)?;
    let recon = match (&c.reconstructed, &c.latents) {
        (Some(p), None) => inputs.tensor("reconstructed", p)?,
        (None, Some(p)) => {
            let z = inputs.tensor("latents", p)?;
            let dec = BuiltinDecoder::new(&c.decoder, c.seed, z.cols());
            check_cols("decoded latents", reference.cols(), dec.out_dim())?;
            dec.decode(&z)?
        }
        _ => bail!("rfid needs exactly one of --reconstructed or --latents"),
    };
    check_cols("reconstructed features", reference.cols(), recon.cols())?;
    let map = c.features.build(&reference)?;
    let writer = Writer::new(&c.out_dir)?;

    let value = fid(&featurize(&map, reference)?, &featurize(&map, recon)?)?;
    let report = MetricReport::new("rfid").metric("rfid", value);
    writer.finish(report, cfg, inputs, started, format!("rFID = {value}"))
}

fn ids_match(expected: &TensorSet, got: &TensorSet) -> Result<TensorSet> {
    ensure!(
        expected.rows() == got.rows(),
        "resume features have {} rows, expected {}",
        got.rows(),
        expected.rows()
    );
    let Some(got_ids) = got.ids() else {
        log::warn!("resume features carry no ids; assuming row order matches");
        return Ok(got.clone());
    };
    let want = expected.resolved_ids();
    let pos: HashMap<&str, usize> = got_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let order = want
        .iter()
        .map(|id| pos.get(id.as_str()).copied().ok_or_else(|| anyhow!("id {id:?} missing from resume features")))
        .collect::<Result<Vec<_>>>()?;
    Ok(got.select(&order)?)
}

fn ifid(cfg: &RunConfig, c: &IfidConfig, started: Instant) -> Result<Outcome> {
    let mut inputs = Inputs::default();
    let latents = inputs.tensor("latents", &c.latents)?;
    let partners = match &c.nn_reference {
        Some(p) => Some(inputs.tensor("nn_reference", p)?),
        None => None,
    };
    let reference = inputs.tensor("reference", &c.reference)?;
    let resume = match (&c.resume, c.mode) {
        (Some(p), Mode::Real) => Some(inputs.tensor("resume", p)?),
        (Some(_), Mode::Toy) => bail!("--resume only applies to real mode"),
        (None, _) => None,
    };
    if let Some(p) = &partners {
        check_cols("nn_reference", latents.cols(), p.cols())?;
    }
    if let Some(size) = c.dataset_size {
        ensure!(partners.is_none(), "dataset_size and nn_reference are exclusive");
        ensure!(
            size >= 2 && latents.rows().is_multiple_of(size),
            "{} latents do not split into datasets of {size}",
            latents.rows()
        );
    }
    c.interp.validate()?;
    ensure!(
        c.interp.k_select <= c.nn.k,
        "k_select {} exceeds the neighbor count {}",
        c.interp.k_select,
        c.nn.k
    );
    let decoder = BuiltinDecoder::new(&c.decoder, c.seed, latents.cols());
    match (c.mode, &resume) {
        (Mode::Toy, _) => check_cols("decoded interpolations", reference.cols(), decoder.out_dim())?,
        (Mode::Real, Some(r)) => check_cols("resume features", reference.cols(), r.cols())?,
        (Mode::Real, None) => {}
    }
    let map = c.features.build(&reference)?;
    let mut writer = Writer::new(&c.out_dir)?;

    let interp = ifid_core::interp::InterpConfig { seed: c.seed, ..c.interp };
    let partners = partners.as_ref().unwrap_or(&latents);
    let nn = match c.dataset_size {
        Some(size) => blockwise_self_nn(&latents, &c.nn, size)?,
        None => batch_nn(&latents, partners, &c.nn)?,
    };
    let ids = latents.resolved_ids();
    let z_hat = interpolate_toward(&latents, partners, &nn, &interp)?.with_ids(ids)?;

    let features = match (c.mode, resume) {
        (Mode::Toy, _) => decoder.decode(&z_hat)?,
        (Mode::Real, Some(r)) => ids_match(&z_hat, &r)?,
        (Mode::Real, None) => {
            let path = writer.tensor("interpolated.tns1", &z_hat)?;
            let summary = format!(
                "awaiting decode: decode and featurize {} (ids preserved), then rerun with --resume <features.tns1>",
                path.display()
            );
            return Ok(Outcome { status: Status::AwaitingDecode, report: None, report_path: None, summary });
        }
    };
    let value = fid(&featurize(&map, reference)?, &featurize(&map, features)?)?;
    let report = MetricReport::new("ifid").metric("ifid", value);
    writer.finish(report, cfg, inputs, started, format!("iFID = {value}"))
}

/// Report key for one sweep entry, mirroring `t=0 (rFID) … t=1.0 (gFID)`.
pub fn sweep_key(t: f64) -> String {
    if t == 0.0 {
        "t=0 (rFID)".into()
    } else if t == 1.0 {
        "t=1.0 (gFID)".into()
    } else {
        format!("t={t}")
    }
}

fn sweep_file(prefix: &str, t: f64) -> String {
    format!("{prefix}_t{t}.tns1")
}

fn gfid_sweep(cfg: &RunConfig, c: &GfidTConfig, started: Instant) -> Result<Outcome> {
    let mut inputs = Inputs::default();
    let train = inputs.tensor("train", &c.train)?;
    let sources = inputs.tensor("sources", &c.sources)?;
    let reference = inputs.tensor("reference", &c.reference)?;
    check_cols("sources", train.cols(), sources.cols())?;
    ensure!(!c.ts.is_empty(), "empty t list");
    for &t in &c.ts {
        ensure!((0.0..=1.0).contains(&t), "t = {t} outside [0, 1]");
    }
    c.sampler.validate()?;
    let resumed = match (&c.resume, c.mode) {
        (Some(dir), Mode::Real) => {
            let mut out = Vec::with_capacity(c.ts.len());
            for &t in &c.ts {
                let name = sweep_file("features", t);
                let f = inputs.tensor(&name, &dir.join(&name))?;
                check_cols(&name, reference.cols(), f.cols())?;
                out.push(f);
            }
            Some(out)
        }
        (Some(_), Mode::Toy) => bail!("--resume only applies to real mode"),
        (None, _) => None,
    };
    let decoder = BuiltinDecoder::new(&c.decoder, c.seed, sources.cols());
    if c.mode == Mode::Toy {
        check_cols("decoded samples", reference.cols(), decoder.out_dim())?;
    }
    let map = c.features.build(&reference)?;
    let reference = featurize(&map, reference)?;
    let score = EmpiricalScore::new(&train, c.bandwidth, c.schedule)?;
    let sampler = ifid_core::diffusion::SamplerConfig { seed: c.seed, ..c.sampler };
    let mut writer = Writer::new(&c.out_dir)?;
    let ids = sources.resolved_ids();
    let sources = sources.with_ids(ids)?;

    let mut report = MetricReport::new("gfid-t");
    match (c.mode, resumed) {
        (Mode::Toy, _) => {
            for &t in &c.ts {
                let v = gfid_t(&sources, t, &score, &sampler, c.schedule, &reference, |z| featurize(&map, decoder.decode(z)?))?;
                info!("{} = {v}", sweep_key(t));
                report.metrics.insert(sweep_key(t), v);
            }
        }
        (Mode::Real, Some(features)) => {
            for (&t, f) in c.ts.iter().zip(features) {
                let denoised = denoise_from(&sources, t, &score, &sampler, c.schedule)?;
                let f = featurize(&map, ids_match(&denoised, &f)?)?;
                report.metrics.insert(sweep_key(t), fid(&reference, &f)?);
            }
        }
        (Mode::Real, None) => {
            for &t in &c.ts {
                let denoised = denoise_from(&sources, t, &score, &sampler, c.schedule)?;
                writer.tensor(&sweep_file("denoised", t), &denoised)?;
            }
            let summary = format!(
                "awaiting decode: featurize each {}/denoised_t<t>.tns1 into features_t<t>.tns1, then rerun with --resume <dir>",
                c.out_dir.display()
            );
            return Ok(Outcome { status: Status::AwaitingDecode, report: None, report_path: None, summary });
        }
    }
    let summary = report.metrics.iter().map(|(k, v)| format!("{k}: {v}")).collect::<Vec<_>>().join("\n");
    writer.finish(report, cfg, inputs, started, summary)
}

fn toy(cfg: &RunConfig, c: &ToyConfig, started: Instant) -> Result<Outcome> {
    let sampler = ifid_core::diffusion::SamplerConfig { seed: c.seed, ..c.sampler };
    sampler.validate()?;
    let mut writer = Writer::new(&c.out_dir)?;

    let outcome = run_dilemma_experiment_with(c.preset, &c.experiment, &sampler)?;
    for (stem, plot) in outcome.plots() {
        writer.write(&format!("{stem}.svg"), plot.render()?.as_bytes())?;
    }
    let report = outcome.to_report();
    let summary = format!(
        "{}: iFID isolated {:.4} vs connected {:.4} ({}); hallucination {:.4} vs {:.4} ({})",
        c.preset.name(),
        outcome.isolated.ifid,
        outcome.connected.ifid,
        pass(outcome.ifid_ordering_holds()),
        outcome.isolated.hallucination_rate,
        outcome.connected.hallucination_rate,
        pass(outcome.hallucination_ordering_holds()),
    );
    writer.finish(report, cfg, Inputs::default(), started, summary)
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "holds"
    } else {
        "FAILS"
    }
}

fn correlate(cfg: &RunConfig, c: &CorrelateConfig, started: Instant) -> Result<Outcome> {
    let mut inputs = Inputs::default();
    let text = inputs.text("input", &c.input)?;
    let mut table = MetricTable::from_csv(&text)?;
    table.column_index(&c.target)?;
    for col in &c.negate {
        table.negate(col)?;
    }
    let mut writer = Writer::new(&c.out_dir)?;

    let rows = correlate_table(&table, &c.target)?;
    writer.write("correlations.csv", correlations_to_csv(&rows).as_bytes())?;
    let mut report = MetricReport::new("correlate");
    let summary = rows
        .iter()
        .map(|r| format!("{}: PCC={:.4} SRCC={:.4} n={}", r.metric, r.pcc, r.srcc, r.n))
        .collect::<Vec<_>>()
        .join("\n");
    report.correlations = rows;
    writer.finish(report, cfg, inputs, started, summary)
}

fn interpolate(cfg: &RunConfig, c: &InterpolateConfig, started: Instant) -> Result<Outcome> {
    let mut inputs = Inputs::default();
    let latents = inputs.tensor("latents", &c.latents)?;
    let partners = match &c.nn_reference {
        Some(p) => Some(inputs.tensor("nn_reference", p)?),
        None => None,
    };
    let idx = inputs.tensor("nn_indices", &c.nn_indices)?;
    let dist = inputs.tensor("nn_distances", &c.nn_distances)?;
    let nn = NnResult::from_tensors(&idx, &dist)?;
    let interp = ifid_core::interp::InterpConfig { seed: c.seed, ..c.interp };
    interp.validate()?;
    let mut writer = Writer::new(&c.out_dir)?;

    let partners = partners.as_ref().unwrap_or(&latents);
    let z_hat = interpolate_toward(&latents, partners, &nn, &interp)?.with_ids(latents.resolved_ids())?;
    let path = writer.tensor("interpolated.tns1", &z_hat)?;
    let report = MetricReport::new("interpolate").metric("rows", z_hat.rows() as f64);
    writer.finish(report, cfg, inputs, started, format!("wrote {}", path.display()))
}

fn nn_dump(cfg: &RunConfig, c: &NnDumpConfig, started: Instant) -> Result<Outcome> {
    let mut inputs = Inputs::default();
    let queries = inputs.tensor("queries", &c.queries)?;
    let reference = match &c.reference {
        Some(p) => Some(inputs.tensor("reference", p)?),
        None => None,
    };
    if let Some(r) = &reference {
        check_cols("reference", queries.cols(), r.cols())?;
    }
    let mut writer = Writer::new(&c.out_dir)?;

    let refs = reference.as_ref().unwrap_or(&queries);
    let nn = batch_nn(&queries, refs, &c.nn)?;
    writer.tensor("nn_indices.tns1", &nn.indices_tensor()?.with_ids(queries.resolved_ids())?)?;
    writer.tensor("nn_distances.tns1", &nn.distances_tensor()?.with_ids(queries.resolved_ids())?)?;
    let mut csv = String::from("query,rank,neighbor,distance\n");
    for i in 0..nn.query_count() {
        for (r, (&j, &d)) in nn.indices_of(i).iter().zip(nn.distances_of(i)).enumerate() {
            csv.push_str(&format!("{},{},{},{d}\n", queries.id(i), r + 1, refs.id(j)));
        }
    }
    writer.write("nn_summary.csv", csv.as_bytes())?;
    let n = nn.query_count() as f64;
    let mean = (0..nn.query_count()).map(|i| nn.distances_of(i)[0]).sum::<f64>() / n;
    let report = MetricReport::new("nn-dump").metric("queries", n).metric("mean_nn_distance", mean);
    writer.finish(report, cfg, inputs, started, format!("mean nearest-neighbor distance = {mean}"))
}

fn fid_cmd(cfg: &RunConfig, c: &FidConfig, started: Instant) -> Result<Outcome> {
    let mut inputs = Inputs::default();
    let a = inputs.tensor("a", &c.a)?;
    let b = inputs.tensor("b", &c.b)?;
    check_cols("b", a.cols(), b.cols())?;
    let writer = Writer::new(&c.out_dir)?;

    let value = fid(&a, &b)?;
    let report = MetricReport::new("fid").metric("fid", value);
    writer.finish(report, cfg, inputs, started, format!("{value}"))
}

/// Title text for a metric-vs-target scatter: `PCC=0.91, SRCC=0.88`.
pub fn correlation_title(x: &[f64], y: &[f64]) -> String {
    let fmt = |r: ifid_core::Result<f64>| r.map_or_else(|_| "n/a".to_owned(), |v| format!("{v:.2}"));
    format!("PCC={}, SRCC={}", fmt(pcc(x, y)), fmt(srcc(x, y)))
}

fn plot(cfg: &RunConfig, c: &PlotConfig, started: Instant) -> Result<Outcome> {
    let mut inputs = Inputs::default();
    let text = inputs.text("input", &c.input)?;
    let table = MetricTable::from_csv(&text)?;
    let (jx, jy) = (table.column_index(&c.x)?, table.column_index(&c.y)?);
    ensure!(
        !c.output.is_empty() && Path::new(&c.output).file_name().is_some_and(|f| f == c.output.as_str()),
        "output must be a plain file name, got {:?}",
        c.output
    );
    let (mut points, mut labels) = (Vec::new(), Vec::new());
    for (label, row) in table.row_labels.iter().zip(&table.values) {
        if let (Some(x), Some(y)) = (row[jx], row[jy]) {
            points.push((x, y));
            labels.push(label.clone());
        }
    }
    ensure!(!points.is_empty(), "no rows with both {:?} and {:?}", c.x, c.y);
    let (xs, ys): (Vec<f64>, Vec<f64>) = points.iter().copied().unzip();
    let stats = correlation_title(&xs, &ys);
    let title = match &c.title {
        Some(t) => format!("{t} ({stats})"),
        None => stats,
    };
    let svg = ScatterPlot {
        title,
        x_label: c.x.clone(),
        y_label: c.y.clone(),
        series: vec![Series { name: c.x.clone(), points, labels: Some(labels), radius: None }],
    }
    .render()?;
    let mut writer = Writer::new(&c.out_dir)?;

    let path = writer.write(&c.output, svg.as_bytes())?;
    let mut report = MetricReport::new("plot").metric("n", xs.len() as f64);
    if let Ok(v) = pcc(&xs, &ys) {
        report.metrics.insert("pcc".into(), v);
    }
    if let Ok(v) = srcc(&xs, &ys) {
        report.metrics.insert("srcc".into(), v);
    }
    writer.finish(report, cfg, inputs, started, format!("wrote {}", path.display()))
}
