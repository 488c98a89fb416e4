//! Forward noising, the closed-form empirical score, a deterministic
//! x₀-prediction sampler and the gFID(t) protocol.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frechet::fid;
use crate::rng::{self, tag};
use crate::tensorio::TensorSet;

/// Where a sampler asked to start at `t = 1` actually starts.
pub const T_MAX_CLIP: f64 = 1.0 - 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffusionSchedule {
    /// `α_t = 1 − t`, `σ_t = t`.
    #[default]
    RectifiedFlow,
    /// `α_t = cos(πt/2)`, `σ_t = sin(πt/2)`.
    VpCosine,
}

impl DiffusionSchedule {
    pub fn alpha(self, t: f64) -> f64 {
        match self {
            Self::RectifiedFlow => 1.0 - t,
            Self::VpCosine => (std::f64::consts::FRAC_PI_2 * t).cos(),
        }
    }

    pub fn sigma(self, t: f64) -> f64 {
        match self {
            Self::RectifiedFlow => t,
            Self::VpCosine => (std::f64::consts::FRAC_PI_2 * t).sin(),
        }
    }
}

impl std::str::FromStr for DiffusionSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rectified_flow" | "rectified-flow" => Ok(Self::RectifiedFlow),
            "vp_cosine" | "vp-cosine" => Ok(Self::VpCosine),
            other => Err(Error::InvalidArgument(format!("unknown schedule {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub steps: usize,
    pub t_start: f64,
    pub seed: u64,
    pub stochastic: bool,
    /// Fraction of the predicted noise kept per step in stochastic mode; the
    /// rest is fresh noise of variance `σ_{t'}² (1 − η²)`.
    pub eta: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { steps: 100, t_start: 1.0, seed: 0, stochastic: false, eta: 0.0 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument("steps must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.t_start) {
            return Err(Error::InvalidArgument(format!("t_start {} outside [0, 1]", self.t_start)));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::InvalidArgument(format!("eta {} outside [0, 1]", self.eta)));
        }
        Ok(())
    }
}

/// A score function `s(z_t, t)`.
pub trait Score: Sync {
    fn dim(&self) -> usize;
    fn score(&self, z_t: &[f64], t: f64) -> Result<Vec<f64>>;
}

/// The empirical score of a finite training set, optionally smoothed.
///
/// With bandwidth `h` the training points are treated as Gaussians of
/// variance `h`, so the mixture components at time `t` have variance
/// `σ_t² + α_t² h`. At `h = 0` this is the exact empirical score.
#[derive(Debug, Clone)]
pub struct EmpiricalScore {
    train: Vec<f64>,
    rows: usize,
    dim: usize,
    bandwidth: f64,
    schedule: DiffusionSchedule,
}

impl EmpiricalScore {
    pub fn new(train_set: &TensorSet, bandwidth: f64, schedule: DiffusionSchedule) -> Result<Self> {
        if !(bandwidth >= 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidArgument(format!("bandwidth {bandwidth} must be >= 0")));
        }
        Ok(Self {
            train: train_set.to_f64(),
            rows: train_set.rows(),
            dim: train_set.cols(),
            bandwidth,
            schedule,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    fn point(&self, k: usize) -> &[f64] {
        &self.train[k * self.dim..(k + 1) * self.dim]
    }

    /// Posterior weights `w_k(z_t)`: softmax of `−‖z_t − α_t z_k‖² / 2v_t`
    /// with `v_t = σ_t² + α_t² h`.
    pub fn weights(&self, z_t: &[f64], t: f64) -> Result<Vec<f64>> {
        let var = self.variance(t)?;
        if z_t.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: z_t.len() });
        }
        let alpha = self.schedule.alpha(t);
        let logits: Vec<f64> = (0..self.rows)
            .map(|k| {
                let d2: f64 = z_t
                    .iter()
                    .zip(self.point(k))
                    .map(|(z, x)| {
                        let diff = z - alpha * x;
                        diff * diff
                    })
                    .sum();
                -d2 / (2.0 * var)
            })
            .collect();
        Ok(softmax(&logits))
    }

    fn variance(&self, t: f64) -> Result<f64> {
        let (a, s) = (self.schedule.alpha(t), self.schedule.sigma(t));
        let var = s * s + a * a * self.bandwidth;
        if var <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "score undefined at t = {t}: component variance is 0"
            )));
        }
        Ok(var)
    }
}

impl Score for EmpiricalScore {
    fn dim(&self) -> usize {
        self.dim
    }

    fn score(&self, z_t: &[f64], t: f64) -> Result<Vec<f64>> {
        let w = self.weights(z_t, t)?;
        let var = self.variance(t)?;
        let alpha = self.schedule.alpha(t);
        let mut pull = vec![0.0f64; self.dim];
        for (k, &wk) in w.iter().enumerate() {
            for (p, x) in pull.iter_mut().zip(self.point(k)) {
                *p += wk * x;
            }
        }
        Ok(z_t.iter().zip(&pull).map(|(z, p)| (alpha * p - z) / var).collect())
    }
}

/// Softmax with max subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `log Σ exp(x_i)` with max subtraction.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Draw `z_t ~ N(α_t z, σ_t² I)` from the stream keyed by `(seed, row)`.
pub fn forward_sample(z: &[f64], t: f64, sched: DiffusionSchedule, seed: u64, row: u64) -> Vec<f64> {
    if t == 0.0 {
        return z.to_vec();
    }
    let (alpha, sigma) = (sched.alpha(t), sched.sigma(t));
    let mut rng = rng::keyed(seed, tag::FORWARD, row);
    z.iter()
        .map(|&x| {
            let eps: f64 = rng.sample(StandardNormal);
            alpha * x + sigma * eps
        })
        .collect()
}

/// Integrate from `cfg.t_start` down to 0 on a uniform grid.
///
/// Each step predicts `x̂₀ = (z_t + σ_t² s)/α_t` and `ε̂ = −σ_t s`, then
/// re-noises to the next grid time. `chain` keys the fresh noise of the
/// stochastic mode.
pub fn reverse_sample(
    z_start: &[f64],
    cfg: &SamplerConfig,
    score: &dyn Score,
    sched: DiffusionSchedule,
    chain: u64,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if z_start.len() != score.dim() {
        return Err(Error::DimensionMismatch { expected: score.dim(), got: z_start.len() });
    }
    if cfg.t_start == 0.0 {
        return Ok(z_start.to_vec());
    }
    let t0 = if cfg.t_start >= 1.0 { T_MAX_CLIP } else { cfg.t_start };
    let mut noise = cfg.stochastic.then(|| rng::keyed(cfg.seed, tag::SAMPLER, chain));

    let mut z = z_start.to_vec();
    for i in 0..cfg.steps {
        let t = t0 * (1.0 - i as f64 / cfg.steps as f64);
        let t_next = t0 * (1.0 - (i + 1) as f64 / cfg.steps as f64);
        let (alpha, sigma) = (sched.alpha(t), sched.sigma(t));
        if alpha <= 0.0 {
            return Err(Error::Numerical(format!("alpha_t = {alpha} at t = {t}")));
        }
        let s = score.score(&z, t)?;
        let (alpha_next, sigma_next) = (sched.alpha(t_next), sched.sigma(t_next));
        for (zj, sj) in z.iter_mut().zip(&s) {
            let x0 = (*zj + sigma * sigma * sj) / alpha;
            let eps = -sigma * sj;
            *zj = match noise.as_mut() {
                None => alpha_next * x0 + sigma_next * eps,
                Some(rng) => {
                    let fresh: f64 = rng.sample(StandardNormal);
                    let keep = cfg.eta;
                    alpha_next * x0 + sigma_next * (keep * eps + (1.0 - keep * keep).sqrt() * fresh)
                }
            };
        }
    }
    Ok(z)
}

/// Run independent chains, one per row of `starts`.
pub fn sample_chains(
    starts: &TensorSet,
    cfg: &SamplerConfig,
    score: &dyn Score,
    sched: DiffusionSchedule,
) -> Result<TensorSet> {
    let rows: Vec<Vec<f32>> = (0..starts.rows())
        .into_par_iter()
        .map(|i| {
            reverse_sample(&starts.row_f64(i), cfg, score, sched, i as u64)
                .map(|z| z.into_iter().map(|v| v as f32).collect())
        })
        .collect::<Result<_>>()?;
    starts.with_data(starts.cols(), rows.concat())
}

/// Draw `n` prior samples `ε ~ N(0, I)` for unconditional generation.
pub fn prior_samples(n: usize, dim: usize, seed: u64) -> Result<TensorSet> {
    let mut data = Vec::with_capacity(n * dim);
    for row in 0..n {
        let mut rng = rng::keyed(seed, tag::PRIOR, row as u64);
        data.extend((0..dim).map(|_| rng.sample::<f64, _>(StandardNormal) as f32));
    }
    TensorSet::new(n, dim, data)
}

/// Noise every source row to time `t`, denoise from `t`, and return the FID
/// between `features_a` and the feature map of the results.
pub fn gfid_t<F>(
    sources: &TensorSet,
    t: f64,
    score: &dyn Score,
    sampler: &SamplerConfig,
    sched: DiffusionSchedule,
    features_a: &TensorSet,
    feature_map: F,
) -> Result<f64>
where
    F: Fn(&TensorSet) -> Result<TensorSet>,
{
    let denoised = denoise_from(sources, t, score, sampler, sched)?;
    fid(features_a, &feature_map(&denoised)?)
}

/// The sample set `Φ(z_t, t)` behind [`gfid_t`].
pub fn denoise_from(
    sources: &TensorSet,
    t: f64,
    score: &dyn Score,
    sampler: &SamplerConfig,
    sched: DiffusionSchedule,
) -> Result<TensorSet> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("t = {t} outside [0, 1]")));
    }
    let cfg = SamplerConfig { t_start: t, ..*sampler };
    cfg.validate()?;
    let rows: Vec<Vec<f32>> = (0..sources.rows())
        .into_par_iter()
        .map(|i| {
            let z_t = forward_sample(&sources.row_f64(i), t, sched, sampler.seed, i as u64);
            reverse_sample(&z_t, &cfg, score, sched, i as u64)
                .map(|z| z.into_iter().map(|v| v as f32).collect())
        })
        .collect::<Result<_>>()?;
    sources.with_data(sources.cols(), rows.concat())
}
