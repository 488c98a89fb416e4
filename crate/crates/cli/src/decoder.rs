//! Fixed stand-in decoders for toy pipelines.

use clap::ValueEnum;
use ifid_core::rng::{self, tag};
use ifid_core::toygmm::RbfFeatures;
use ifid_core::{Result, TensorSet};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    #[default]
    #[value(name = "identity")]
    Identity,
    /// `tanh(W z)` with `W` entries drawn from `N(0, 1/D_latent)`.
    #[value(name = "random_linear_tanh")]
    RandomLinearTanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    pub kind: DecoderKind,
    /// Output width of `random_linear_tanh`; defaults to the latent width.
    pub out_dim: Option<usize>,
}

#[derive(Debug, Clone)]
pub enum BuiltinDecoder {
    Identity { dim: usize },
    RandomLinearTanh { weights: Vec<f64>, d_in: usize, d_out: usize },
}

impl BuiltinDecoder {
    /// Deterministic in `(kind, seed, d_in, d_out)`: row `r` of `W` comes
    /// from the decoder stream keyed by `(seed, r)`.
    pub fn new(cfg: &DecoderConfig, seed: u64, d_in: usize) -> Self {
        match cfg.kind {
            DecoderKind::Identity => Self::Identity { dim: d_in },
            DecoderKind::RandomLinearTanh => {
                let d_out = cfg.out_dim.unwrap_or(d_in);
                let scale = 1.0 / (d_in as f64).sqrt();
                let mut weights = Vec::with_capacity(d_in * d_out);
                for r in 0..d_out {
                    let mut g = rng::keyed(seed, tag::DECODER, r as u64);
                    weights.extend((0..d_in).map(|_| scale * g.sample::<f64, _>(StandardNormal)));
                }
                Self::RandomLinearTanh { weights, d_in, d_out }
            }
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Self::Identity { dim } => *dim,
            Self::RandomLinearTanh { d_out, .. } => *d_out,
        }
    }

    pub fn decode(&self, latents: &TensorSet) -> Result<TensorSet> {
        match self {
            Self::Identity { .. } => Ok(latents.clone()),
            Self::RandomLinearTanh { weights, d_in, d_out } => {
                if latents.cols() != *d_in {
                    return Err(ifid_core::Error::DimensionMismatch { expected: *d_in, got: latents.cols() });
                }
                let mut data = Vec::with_capacity(latents.rows() * d_out);
                for i in 0..latents.rows() {
                    let z = latents.row_f64(i);
                    for w in weights.chunks_exact(*d_in) {
                        let dot: f64 = w.iter().zip(&z).map(|(a, b)| a * b).sum();
                        data.push(dot.tanh() as f32);
                    }
                }
                latents.with_data(*d_out, data)
            }
        }
    }
}

/// Optional fixed feature map applied to both sides of an FID.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Spacing of a Gaussian-bump lattice over 2D points (bump width is half
    /// the spacing); raw values are used when absent.
    pub lattice_step: Option<f64>,
}

impl FeatureConfig {
    /// Lattice covering the bounding box of `reference` with two steps of
    /// margin.
    pub fn build(&self, reference: &TensorSet) -> Result<Option<RbfFeatures>> {
        let Some(step) = self.lattice_step else {
            return Ok(None);
        };
        if !(step > 0.0) || reference.cols() != 2 {
            return Err(ifid_core::Error::InvalidArgument(format!(
                "lattice features need 2D points and a positive step (got {} columns, step {step})",
                reference.cols()
            )));
        }
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for i in 0..reference.rows() {
            for (a, v) in reference.row_f64(i).into_iter().enumerate() {
                lo[a] = lo[a].min(v);
                hi[a] = hi[a].max(v);
            }
        }
        let counts: Vec<usize> = (0..2).map(|a| ((hi[a] - lo[a]) / step).ceil() as usize + 5).collect();
        if counts[0] * counts[1] > 1 << 16 {
            return Err(ifid_core::Error::InvalidArgument(format!("lattice step {step} is too fine for the data range")));
        }
        let mut anchors = Vec::with_capacity(counts[0] * counts[1]);
        for i in 0..counts[0] {
            for j in 0..counts[1] {
                anchors.push(vec![lo[0] + (i as f64 - 2.0) * step, lo[1] + (j as f64 - 2.0) * step]);
            }
        }
        RbfFeatures::new(anchors, step / 2.0).map(Some)
    }
}

/// Apply an optional feature map.
pub fn featurize(map: &Option<RbfFeatures>, t: TensorSet) -> Result<TensorSet> {
    match map {
        Some(f) => f.apply(&t),
        None => Ok(t),
    }
}
