//! Latent interpolation kernels and construction of the interpolated set.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knn::NnResult;
use crate::rng::{self, tag};
use crate::tensorio::TensorSet;

/// Angles below this are treated as parallel and interpolated linearly.
pub const SLERP_PARALLEL_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterpMethod {
    Linear,
    Spherical,
    Mask,
}

impl std::str::FromStr for InterpMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "spherical" | "slerp" => Ok(Self::Spherical),
            "mask" => Ok(Self::Mask),
            other => Err(Error::InvalidArgument(format!("unknown interpolation method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InterpConfig {
    pub method: InterpMethod,
    pub alpha: f64,
    pub seed: u64,
    /// Number of nearest neighbors the partner is drawn from.
    pub k_select: usize,
}

impl Default for InterpConfig {
    fn default() -> Self {
        Self { method: InterpMethod::Linear, alpha: 0.5, seed: 0, k_select: 1 }
    }
}

impl InterpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidArgument(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.k_select == 0 {
            return Err(Error::InvalidArgument("k_select must be at least 1".into()));
        }
        Ok(())
    }
}

fn check_dims(z1: &[f64], z2: &[f64]) -> Result<()> {
    if z1.len() != z2.len() {
        return Err(Error::DimensionMismatch { expected: z1.len(), got: z2.len() });
    }
    Ok(())
}

/// `(1 - alpha) z1 + alpha z2`; the endpoints are returned verbatim.
pub fn lerp(z1: &[f64], z2: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_dims(z1, z2)?;
    if alpha == 0.0 {
        return Ok(z1.to_vec());
    }
    if alpha == 1.0 {
        return Ok(z2.to_vec());
    }
    Ok(z1.iter().zip(z2).map(|(a, b)| (1.0 - alpha) * a + alpha * b).collect())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Great-circle interpolation about the origin.
pub fn slerp(z1: &[f64], z2: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_dims(z1, z2)?;
    let (n1, n2) = (norm(z1), norm(z2));
    if n1 == 0.0 || n2 == 0.0 {
        return Err(Error::InvalidArgument("slerp of a zero-norm vector".into()));
    }
    if alpha == 0.0 {
        return Ok(z1.to_vec());
    }
    if alpha == 1.0 {
        return Ok(z2.to_vec());
    }
    let dot: f64 = z1.iter().zip(z2).map(|(a, b)| a * b).sum();
    let theta = (dot / (n1 * n2)).clamp(-1.0, 1.0).acos();
    if theta < SLERP_PARALLEL_EPS {
        return lerp(z1, z2, alpha);
    }
    if std::f64::consts::PI - theta < SLERP_PARALLEL_EPS {
        return Err(Error::UndefinedSphericalPath { row: None });
    }
    let s = theta.sin();
    let (w1, w2) = (((1.0 - alpha) * theta).sin() / s, (alpha * theta).sin() / s);
    Ok(z1.iter().zip(z2).map(|(a, b)| w1 * a + w2 * b).collect())
}

/// Per-coordinate Bernoulli(`alpha`) mix, taking `z2[j]` where the mask is
/// set. The mask is a function of `(seed, row)` only.
pub fn mask_interp(z1: &[f64], z2: &[f64], alpha: f64, seed: u64, row: u64) -> Result<Vec<f64>> {
    check_dims(z1, z2)?;
    let mut rng = rng::keyed(seed, tag::MASK, row);
    Ok(z1
        .iter()
        .zip(z2)
        .map(|(&a, &b)| if rng.random::<f64>() < alpha { b } else { a })
        .collect())
}

pub fn interpolate(cfg: &InterpConfig, z1: &[f64], z2: &[f64], row: u64) -> Result<Vec<f64>> {
    match cfg.method {
        InterpMethod::Linear => lerp(z1, z2, cfg.alpha),
        InterpMethod::Spherical => slerp(z1, z2, cfg.alpha),
        InterpMethod::Mask => mask_interp(z1, z2, cfg.alpha, cfg.seed, row),
    }
}

/// Index of the partner chosen for query `row` among its neighbors.
pub fn partner_slot(seed: u64, row: u64, k_select: usize) -> usize {
    if k_select <= 1 {
        return 0;
    }
    rng::keyed(seed, tag::PARTNER, row).random_range(0..k_select)
}

/// Interpolate every latent toward one of its nearest neighbors.
///
/// `nn` must have been computed with `latents` (or a set with the same row
/// order) as the reference set.
pub fn interpolate_set(latents: &TensorSet, nn: &NnResult, cfg: &InterpConfig) -> Result<TensorSet> {
    interpolate_toward(latents, latents, nn, cfg)
}

/// Like [`interpolate_set`], but neighbor indices refer to rows of
/// `partners`, the set `nn` was searched against.
pub fn interpolate_toward(
    latents: &TensorSet,
    partners: &TensorSet,
    nn: &NnResult,
    cfg: &InterpConfig,
) -> Result<TensorSet> {
    cfg.validate()?;
    if partners.cols() != latents.cols() {
        return Err(Error::DimensionMismatch { expected: latents.cols(), got: partners.cols() });
    }
    if nn.query_count() != latents.rows() {
        return Err(Error::DimensionMismatch { expected: latents.rows(), got: nn.query_count() });
    }
    if nn.k < cfg.k_select {
        return Err(Error::InvalidArgument(format!(
            "k_select = {} exceeds neighbor count {}",
            cfg.k_select, nn.k
        )));
    }
    let d = latents.cols();
    let rows: Vec<Vec<f32>> = (0..latents.rows())
        .into_par_iter()
        .map(|i| {
            let slot = partner_slot(cfg.seed, i as u64, cfg.k_select);
            let j = nn.indices_of(i)[slot];
            if j >= partners.rows() {
                return Err(Error::InvalidArgument(format!("neighbor index {j} out of range")));
            }
            let out = interpolate(cfg, &latents.row_f64(i), &partners.row_f64(j), i as u64)
                .map_err(|e| match e {
                    Error::UndefinedSphericalPath { .. } => Error::UndefinedSphericalPath { row: Some(i) },
                    Error::InvalidArgument(m) => Error::InvalidArgument(format!("row {i}: {m}")),
                    other => other,
                })?;
            Ok(out.into_iter().map(|v| v as f32).collect())
        })
        .collect::<Result<_>>()?;
    latents.with_data(d, rows.concat())
}
