//! Toy Gaussian-mixture latents: generators, log-density, a hallucination
//! rate, and the isolated-versus-connected mixture experiment.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffusion::{log_sum_exp, prior_samples, sample_chains, DiffusionSchedule, EmpiricalScore, SamplerConfig};
use crate::error::{Error, Result};
use crate::frechet::fid;
use crate::interp::lerp;
use crate::knn::{self_nn, NnConfig};
use crate::report::MetricReport;
use crate::rng::{self, tag};
use crate::svg::{ScatterPlot, Series};
use crate::tensorio::TensorSet;

/// Mixture of isotropic Gaussians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmSpec {
    pub centers: Vec<Vec<f64>>,
    pub stds: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GmmSpec {
    pub fn new(centers: Vec<Vec<f64>>, stds: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let m = centers.len();
        if m == 0 {
            return Err(Error::InvalidArgument("mixture needs at least one mode".into()));
        }
        let d = centers[0].len();
        if d == 0 || centers.iter().any(|c| c.len() != d) {
            return Err(Error::InvalidArgument("mode centers must share a nonzero dimension".into()));
        }
        if stds.len() != m || weights.len() != m {
            return Err(Error::InvalidArgument("stds and weights need one entry per mode".into()));
        }
        if stds.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument("mode std must be positive".into()));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument("weights must be non-negative and sum to 1".into()));
        }
        Ok(Self { centers, stds, weights })
    }

    /// Equal weights and one shared std.
    pub fn uniform(centers: Vec<Vec<f64>>, std: f64) -> Result<Self> {
        let m = centers.len();
        Self::new(centers, vec![std; m], vec![1.0 / m as f64; m])
    }

    pub fn modes(&self) -> usize {
        self.centers.len()
    }

    pub fn dim(&self) -> usize {
        self.centers[0].len()
    }

    /// Smallest distance between two distinct mode centers.
    pub fn min_center_distance(&self) -> Option<f64> {
        let mut best: Option<f64> = None;
        for (i, a) in self.centers.iter().enumerate() {
            for b in &self.centers[i + 1..] {
                let d = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                best = Some(best.map_or(d, |v| v.min(d)));
            }
        }
        best
    }
}

/// `side × side` grid of modes with the given spacing, centered at the origin.
pub fn make_grid_gmm(side: usize, spacing: f64, std: f64) -> Result<GmmSpec> {
    if side == 0 {
        return Err(Error::InvalidArgument("grid side must be at least 1".into()));
    }
    let offset = (side - 1) as f64 / 2.0;
    let mut centers = Vec::with_capacity(side * side);
    for i in 0..side {
        for j in 0..side {
            centers.push(vec![(i as f64 - offset) * spacing, (j as f64 - offset) * spacing]);
        }
    }
    GmmSpec::uniform(centers, std)
}

/// `n` samples, row `i` drawn from the stream keyed by `(seed, i)`.
pub fn sample_gmm(spec: &GmmSpec, n: usize, seed: u64) -> Result<TensorSet> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let d = spec.dim();
    let mut data = Vec::with_capacity(n * d);
    for row in 0..n {
        let mut rng = rng::keyed(seed, tag::GMM, row as u64);
        let m = pick_mode(&spec.weights, rng.random::<f64>());
        for &c in &spec.centers[m] {
            let e: f64 = rng.sample(StandardNormal);
            data.push((c + spec.stds[m] * e) as f32);
        }
    }
    TensorSet::new(n, d, data)
}

fn pick_mode(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (m, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        acc += w;
        last = m;
        if u < acc {
            return m;
        }
    }
    last
}

/// Log mixture density via log-sum-exp over modes.
pub fn gmm_logpdf(spec: &GmmSpec, x: &[f64]) -> Result<f64> {
    if x.len() != spec.dim() {
        return Err(Error::DimensionMismatch { expected: spec.dim(), got: x.len() });
    }
    let d = x.len() as f64;
    let terms: Vec<f64> = spec
        .centers
        .iter()
        .zip(&spec.stds)
        .zip(&spec.weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|((c, &s), &w)| {
            let d2: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
            w.ln() - 0.5 * d * (2.0 * std::f64::consts::PI * s * s).ln() - d2 / (2.0 * s * s)
        })
        .collect();
    Ok(log_sum_exp(&terms))
}

/// Empirical `quantile` of `values`: the order statistic at `⌊q·n⌋`.
pub fn empirical_quantile(values: &mut [f64], quantile: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let idx = ((quantile * values.len() as f64).floor() as usize).min(values.len() - 1);
    values[idx]
}

/// Fraction of `samples` whose true log-density falls below the `quantile`
/// of the log-densities of `reference`.
pub fn hallucination_rate(samples: &TensorSet, spec: &GmmSpec, reference: &TensorSet, quantile: f64) -> Result<f64> {
    Ok(hallucination_detail(samples, spec, reference, quantile)?.0)
}

/// Rate and the log-density threshold it was measured against.
pub fn hallucination_detail(
    samples: &TensorSet,
    spec: &GmmSpec,
    reference: &TensorSet,
    quantile: f64,
) -> Result<(f64, f64)> {
    if !(0.0..1.0).contains(&quantile) {
        return Err(Error::InvalidArgument(format!("quantile {quantile} outside [0, 1)")));
    }
    let mut ref_lp = (0..reference.rows())
        .map(|i| gmm_logpdf(spec, &reference.row_f64(i)))
        .collect::<Result<Vec<_>>>()?;
    let tau = empirical_quantile(&mut ref_lp, quantile);
    let mut low = 0usize;
    for i in 0..samples.rows() {
        if gmm_logpdf(spec, &samples.row_f64(i))? < tau {
            low += 1;
        }
    }
    Ok((low as f64 / samples.rows() as f64, tau))
}

/// Fixed Gaussian-bump feature map on a square lattice.
///
/// FID on raw 2D coordinates only sees the first two moments, which midpoint
/// interpolation barely changes for either mixture. Lattice bumps respond to
/// where the mass sits, including the gaps between modes.
#[derive(Debug, Clone, PartialEq)]
pub struct RbfFeatures {
    anchors: Vec<Vec<f64>>,
    width: f64,
}

impl RbfFeatures {
    pub fn new(anchors: Vec<Vec<f64>>, width: f64) -> Result<Self> {
        if anchors.is_empty() || !(width > 0.0) {
            return Err(Error::InvalidArgument("feature map needs anchors and a positive width".into()));
        }
        Ok(Self { anchors, width })
    }

    /// Lattice at half the closest mode spacing, covering the centers with
    /// two lattice steps of margin; bump width is half the lattice step.
    pub fn for_spec(spec: &GmmSpec) -> Result<Self> {
        if spec.dim() != 2 {
            return Err(Error::InvalidArgument("lattice features are defined for 2D mixtures".into()));
        }
        let step = spec.min_center_distance().map_or(4.0 * spec.stds[0], |d| d / 2.0);
        let bound = |axis: usize, f: fn(f64, f64) -> f64, init: f64| {
            spec.centers.iter().map(|c| c[axis]).fold(init, f)
        };
        let (x0, x1) = (bound(0, f64::min, f64::INFINITY) - 2.0 * step, bound(0, f64::max, f64::NEG_INFINITY) + 2.0 * step);
        let (y0, y1) = (bound(1, f64::min, f64::INFINITY) - 2.0 * step, bound(1, f64::max, f64::NEG_INFINITY) + 2.0 * step);
        let nx = ((x1 - x0) / step).round() as usize + 1;
        let ny = ((y1 - y0) / step).round() as usize + 1;
        let mut anchors = Vec::with_capacity(nx * ny);
        for i in 0..nx {
            for j in 0..ny {
                anchors.push(vec![x0 + i as f64 * step, y0 + j as f64 * step]);
            }
        }
        Self::new(anchors, step / 2.0)
    }

    pub fn dim(&self) -> usize {
        self.anchors.len()
    }

    pub fn apply(&self, points: &TensorSet) -> Result<TensorSet> {
        let d = self.anchors[0].len();
        if points.cols() != d {
            return Err(Error::DimensionMismatch { expected: d, got: points.cols() });
        }
        let inv = 1.0 / (2.0 * self.width * self.width);
        let mut data = Vec::with_capacity(points.rows() * self.dim());
        for i in 0..points.rows() {
            let p = points.row_f64(i);
            for a in &self.anchors {
                let d2: f64 = p.iter().zip(a).map(|(x, y)| (x - y) * (x - y)).sum();
                data.push((-d2 * inv).exp() as f32);
            }
        }
        points.with_data(self.dim(), data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyPreset {
    /// 5×5 grid, spacing 1; std 0.05 (isolated) against 0.25 (connected).
    Grid25,
    /// Modes at ±(2, 0); std 0.1 (isolated) against 1.0 (connected).
    TwoMode,
}

impl std::str::FromStr for ToyPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid25" => Ok(Self::Grid25),
            "two_mode" | "two-mode" => Ok(Self::TwoMode),
            other => Err(Error::InvalidArgument(format!("unknown preset {other:?}"))),
        }
    }
}

impl ToyPreset {
    pub fn name(self) -> &'static str {
        match self {
            Self::Grid25 => "grid25",
            Self::TwoMode => "two_mode",
        }
    }

    /// The (isolated, connected) pair of mixtures.
    pub fn variants(self) -> Result<[(&'static str, GmmSpec); 2]> {
        Ok(match self {
            Self::Grid25 => [
                ("isolated", make_grid_gmm(5, 1.0, 0.05)?),
                ("connected", make_grid_gmm(5, 1.0, 0.25)?),
            ],
            Self::TwoMode => {
                let centers = vec![vec![-2.0, 0.0], vec![2.0, 0.0]];
                [
                    ("isolated", GmmSpec::uniform(centers.clone(), 0.1)?),
                    ("connected", GmmSpec::uniform(centers, 1.0)?),
                ]
            }
        })
    }
}

/// Sizes and knobs of the mixture experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DilemmaConfig {
    /// Total training latents, split into independent datasets.
    pub train_size: usize,
    /// Latents per dataset; `0` means one per mixture mode.
    pub dataset_size: usize,
    pub interp_alpha: f64,
    /// Fresh true samples used as the FID reference.
    pub eval_samples: usize,
    /// Fresh true samples used to set the log-density threshold.
    pub reference_samples: usize,
    pub generated: usize,
    pub quantile: f64,
    pub bandwidth: f64,
    pub schedule: DiffusionSchedule,
}

impl Default for DilemmaConfig {
    fn default() -> Self {
        Self {
            train_size: 1000,
            dataset_size: 0,
            interp_alpha: 0.5,
            eval_samples: 2000,
            reference_samples: 10_000,
            generated: 1000,
            quantile: 0.001,
            bandwidth: 0.3,
            schedule: DiffusionSchedule::RectifiedFlow,
        }
    }
}

/// Numbers and point sets for one mixture variant.
#[derive(Debug, Clone)]
pub struct VariantOutcome {
    pub name: &'static str,
    pub spec: GmmSpec,
    pub train: TensorSet,
    pub interpolated: TensorSet,
    pub generated: TensorSet,
    /// FID of the interpolated set against fresh true samples.
    pub ifid: f64,
    /// FID of the training set itself against the same fresh samples.
    pub rfid: f64,
    pub hallucination_rate: f64,
    pub log_density_threshold: f64,
}

#[derive(Debug, Clone)]
pub struct DilemmaOutcome {
    pub preset: ToyPreset,
    pub isolated: VariantOutcome,
    pub connected: VariantOutcome,
}

impl DilemmaOutcome {
    pub fn ifid_ordering_holds(&self) -> bool {
        self.isolated.ifid > self.connected.ifid
    }

    pub fn hallucination_ordering_holds(&self) -> bool {
        self.isolated.hallucination_rate > self.connected.hallucination_rate
    }

    pub fn to_report(&self) -> MetricReport {
        let mut r = MetricReport::new("toy");
        for v in [&self.isolated, &self.connected] {
            r.metrics.insert(format!("{}.ifid", v.name), v.ifid);
            r.metrics.insert(format!("{}.rfid", v.name), v.rfid);
            r.metrics.insert(format!("{}.hallucination_rate", v.name), v.hallucination_rate);
            r.metrics.insert(format!("{}.log_density_threshold", v.name), v.log_density_threshold);
        }
        r.checks.insert("ifid_isolated_gt_connected".into(), self.ifid_ordering_holds());
        r.checks
            .insert("hallucination_isolated_gt_connected".into(), self.hallucination_ordering_holds());
        r
    }

    /// Scatter plots keyed by file stem, `<variant>_<set>`.
    pub fn plots(&self) -> Vec<(String, ScatterPlot)> {
        let mut out = Vec::new();
        for v in [&self.isolated, &self.connected] {
            for (set, points) in [("train", &v.train), ("interpolated", &v.interpolated), ("generated", &v.generated)] {
                let pts = (0..points.rows())
                    .map(|i| (f64::from(points.row(i)[0]), f64::from(points.row(i)[1])))
                    .collect();
                let plot = ScatterPlot {
                    title: format!("{} {} ({set})", self.preset.name(), v.name),
                    x_label: "z[0]".into(),
                    y_label: "z[1]".into(),
                    series: vec![Series { name: set.into(), points: pts, labels: None, radius: Some(2.0) }],
                };
                out.push((format!("{}_{set}", v.name), plot));
            }
        }
        out
    }
}

/// Run both variants of `preset` with the default sizes.
pub fn run_dilemma_experiment(preset: ToyPreset, bandwidth: f64, sampler: &SamplerConfig) -> Result<DilemmaOutcome> {
    let cfg = DilemmaConfig { bandwidth, ..Default::default() };
    run_dilemma_experiment_with(preset, &cfg, sampler)
}

pub fn run_dilemma_experiment_with(
    preset: ToyPreset,
    cfg: &DilemmaConfig,
    sampler: &SamplerConfig,
) -> Result<DilemmaOutcome> {
    let [(n1, s1), (n2, s2)] = preset.variants()?;
    Ok(DilemmaOutcome {
        preset,
        isolated: run_variant(n1, s1, cfg, sampler)?,
        connected: run_variant(n2, s2, cfg, sampler)?,
    })
}

/// Midpoints between each latent and its nearest neighbor within its own
/// dataset, pooled over the datasets in `train` (consecutive blocks of
/// `dataset_size` rows).
pub fn pooled_interpolation(train: &TensorSet, dataset_size: usize, alpha: f64) -> Result<TensorSet> {
    if dataset_size < 2 || !train.rows().is_multiple_of(dataset_size) {
        return Err(Error::InvalidArgument(format!(
            "{} rows do not split into datasets of {dataset_size}",
            train.rows()
        )));
    }
    let mut data = Vec::with_capacity(train.rows() * train.cols());
    for start in (0..train.rows()).step_by(dataset_size) {
        let block = train.select(&(start..start + dataset_size).collect::<Vec<_>>())?;
        let nn = self_nn(&block, &NnConfig { k: 1, exclude_self: true })?;
        for i in 0..block.rows() {
            let partner = block.row_f64(nn.indices_of(i)[0]);
            data.extend(lerp(&block.row_f64(i), &partner, alpha)?.into_iter().map(|v| v as f32));
        }
    }
    TensorSet::new(train.rows(), train.cols(), data)
}

fn run_variant(name: &'static str, spec: GmmSpec, cfg: &DilemmaConfig, sampler: &SamplerConfig) -> Result<VariantOutcome> {
    let seed = sampler.seed;
    let size = if cfg.dataset_size == 0 { spec.modes().max(2) } else { cfg.dataset_size };
    let datasets = cfg.train_size / size;
    if datasets == 0 {
        return Err(Error::InvalidArgument(format!("train_size {} below dataset size {size}", cfg.train_size)));
    }
    let train = sample_gmm(&spec, datasets * size, rng::derive(seed, 1))?;
    let fresh = sample_gmm(&spec, cfg.eval_samples, rng::derive(seed, 2))?;
    let reference = sample_gmm(&spec, cfg.reference_samples, rng::derive(seed, 3))?;

    let interpolated = pooled_interpolation(&train, size, cfg.interp_alpha)?;
    let features = RbfFeatures::for_spec(&spec)?;
    let fresh_f = features.apply(&fresh)?;
    let ifid = fid(&fresh_f, &features.apply(&interpolated)?)?;
    let rfid = fid(&fresh_f, &features.apply(&train)?)?;

    let score = EmpiricalScore::new(&train, cfg.bandwidth, cfg.schedule)?;
    let starts = prior_samples(cfg.generated, spec.dim(), rng::derive(seed, 4))?;
    let gen_cfg = SamplerConfig { t_start: 1.0, ..*sampler };
    let generated = sample_chains(&starts, &gen_cfg, &score, cfg.schedule)?;
    let (rate, tau) = hallucination_detail(&generated, &spec, &reference, cfg.quantile)?;

    Ok(VariantOutcome {
        name,
        spec,
        train,
        interpolated,
        generated,
        ifid,
        rfid,
        hallucination_rate: rate,
        log_density_threshold: tau,
    })
}
