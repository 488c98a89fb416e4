//! Exact nearest-neighbor search under the L2 distance.
//!
//! The scan is blocked over reference rows. Each block produces a partial
//! top-K list and the lists are merged in block order, so the result is the
//! same for any thread count. Candidates are ordered by `(squared distance,
//! index)`, which gives lowest-index tie-breaking; the square root is taken
//! only on output.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorio::TensorSet;

const REF_BLOCK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NnConfig {
    pub k: usize,
    /// Skip the query's own row when queries and references are the same set.
    pub exclude_self: bool,
}

impl Default for NnConfig {
    fn default() -> Self {
        Self { k: 1, exclude_self: true }
    }
}

/// Per-query top-K reference indices and distances, row-major `N × K`.
#[derive(Debug, Clone, PartialEq)]
pub struct NnResult {
    pub k: usize,
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
}

impl NnResult {
    pub fn query_count(&self) -> usize {
        self.indices.len() / self.k
    }

    pub fn indices_of(&self, query: usize) -> &[usize] {
        &self.indices[query * self.k..(query + 1) * self.k]
    }

    pub fn distances_of(&self, query: usize) -> &[f64] {
        &self.distances[query * self.k..(query + 1) * self.k]
    }

    /// Indices as a float32 tensor (exact for indices below 2^24).
    pub fn indices_tensor(&self) -> Result<TensorSet> {
        TensorSet::new(
            self.query_count(),
            self.k,
            self.indices.iter().map(|&i| i as f32).collect(),
        )
    }

    pub fn distances_tensor(&self) -> Result<TensorSet> {
        TensorSet::new(
            self.query_count(),
            self.k,
            self.distances.iter().map(|&d| d as f32).collect(),
        )
    }

    /// Rebuild from the tensor pair written by [`NnResult::indices_tensor`]
    /// and [`NnResult::distances_tensor`].
    pub fn from_tensors(indices: &TensorSet, distances: &TensorSet) -> Result<Self> {
        if indices.rows() != distances.rows() || indices.cols() != distances.cols() {
            return Err(Error::InvalidArgument("index and distance tensors differ in shape".into()));
        }
        let idx = indices
            .data()
            .iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(Error::InvalidArgument(format!("invalid neighbor index {v}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            k: indices.cols(),
            indices: idx,
            distances: distances.data().iter().map(|&d| f64::from(d)).collect(),
        })
    }
}

/// Squared L2 distance accumulated in `f64`, left to right.
#[inline]
pub fn squared_l2(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = f64::from(*x) - f64::from(*y);
        acc += d * d;
    }
    acc
}

/// Bounded sorted list of the K best `(squared distance, index)` pairs.
#[derive(Debug, Clone)]
struct TopK {
    k: usize,
    items: Vec<(f64, usize)>,
}

impl TopK {
    fn new(k: usize) -> Self {
        Self { k, items: Vec::with_capacity(k + 1) }
    }

    #[inline]
    fn worse(a: (f64, usize), b: (f64, usize)) -> bool {
        a.0 > b.0 || (a.0 == b.0 && a.1 > b.1)
    }

    #[inline]
    fn push(&mut self, cand: (f64, usize)) {
        if self.items.len() == self.k {
            if !Self::worse(*self.items.last().unwrap(), cand) {
                return;
            }
            self.items.pop();
        }
        let pos = self.items.partition_point(|&it| !Self::worse(it, cand));
        self.items.insert(pos, cand);
    }

    fn merge(mut self, other: TopK) -> TopK {
        for it in other.items {
            self.push(it);
        }
        self
    }
}

fn check_k(k: usize, refs: usize, excluded: bool) -> Result<()> {
    let usable = refs - usize::from(excluded);
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if k > usable {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the {usable} usable reference rows"
        )));
    }
    Ok(())
}

fn scan_block(query: &[f32], refs: &TensorSet, range: std::ops::Range<usize>, k: usize, exclude: Option<usize>) -> TopK {
    let mut top = TopK::new(k);
    for j in range {
        if Some(j) == exclude {
            continue;
        }
        top.push((squared_l2(query, refs.row(j)), j));
    }
    top
}

fn search_one(query: &[f32], refs: &TensorSet, k: usize, exclude: Option<usize>) -> TopK {
    let m = refs.rows();
    if m <= REF_BLOCK {
        return scan_block(query, refs, 0..m, k, exclude);
    }
    let blocks: Vec<TopK> = (0..m.div_ceil(REF_BLOCK))
        .into_par_iter()
        .map(|b| scan_block(query, refs, b * REF_BLOCK..((b + 1) * REF_BLOCK).min(m), k, exclude))
        .collect();
    blocks.into_iter().reduce(TopK::merge).unwrap()
}

/// The `cfg.k` nearest reference rows to `query`, never returning
/// `exclude_index`.
pub fn top_k(
    query: &[f32],
    refs: &TensorSet,
    cfg: &NnConfig,
    exclude_index: Option<usize>,
) -> Result<(Vec<usize>, Vec<f64>)> {
    if query.len() != refs.cols() {
        return Err(Error::DimensionMismatch { expected: refs.cols(), got: query.len() });
    }
    let excluded = exclude_index.is_some_and(|i| i < refs.rows());
    check_k(cfg.k, refs.rows(), excluded)?;
    let top = search_one(query, refs, cfg.k, exclude_index);
    Ok(top.items.into_iter().map(|(d2, j)| (j, d2.sqrt())).unzip())
}

/// Nearest neighbors for every query row.
///
/// Self-exclusion applies only when `cfg.exclude_self` is set and `queries`
/// and `refs` are the same object; use [`self_nn`] for the common case.
pub fn batch_nn(queries: &TensorSet, refs: &TensorSet, cfg: &NnConfig) -> Result<NnResult> {
    let aliased = std::ptr::eq(queries, refs);
    batch_nn_inner(queries, refs, cfg, cfg.exclude_self && aliased)
}

/// Nearest neighbors of a set within itself.
pub fn self_nn(latents: &TensorSet, cfg: &NnConfig) -> Result<NnResult> {
    batch_nn(latents, latents, cfg)
}

/// Nearest neighbors within consecutive blocks of `block` rows, each block
/// treated as an independent dataset. Indices refer to rows of `latents`.
pub fn blockwise_self_nn(latents: &TensorSet, cfg: &NnConfig, block: usize) -> Result<NnResult> {
    if block == 0 || !latents.rows().is_multiple_of(block) {
        return Err(Error::InvalidArgument(format!(
            "{} rows do not split into blocks of {block}",
            latents.rows()
        )));
    }
    let mut indices = Vec::with_capacity(latents.rows() * cfg.k);
    let mut distances = Vec::with_capacity(latents.rows() * cfg.k);
    for start in (0..latents.rows()).step_by(block) {
        let part = latents.select(&(start..start + block).collect::<Vec<_>>())?;
        let nn = self_nn(&part, cfg)?;
        indices.extend(nn.indices.iter().map(|j| j + start));
        distances.extend(nn.distances);
    }
    Ok(NnResult { k: cfg.k, indices, distances })
}

fn batch_nn_inner(queries: &TensorSet, refs: &TensorSet, cfg: &NnConfig, exclude: bool) -> Result<NnResult> {
    if queries.cols() != refs.cols() {
        return Err(Error::DimensionMismatch { expected: refs.cols(), got: queries.cols() });
    }
    check_k(cfg.k, refs.rows(), exclude)?;
    let k = cfg.k;
    let per_query: Vec<TopK> = (0..queries.rows())
        .into_par_iter()
        .map(|i| search_one(queries.row(i), refs, k, exclude.then_some(i)))
        .collect();
    let mut indices = Vec::with_capacity(queries.rows() * k);
    let mut distances = Vec::with_capacity(queries.rows() * k);
    for top in per_query {
        for (d2, j) in top.items {
            indices.push(j);
            distances.push(d2.sqrt());
        }
    }
    Ok(NnResult { k, indices, distances })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn refs3() -> TensorSet {
        TensorSet::new(3, 2, vec![0.0, 0.0, 1.0, 0.0, 5.0, 5.0]).unwrap()
    }

    #[test]
    fn excluded_self_finds_next() {
        let cfg = NnConfig { k: 1, exclude_self: true };
        let (idx, dist) = top_k(&[0.0, 0.0], &refs3(), &cfg, Some(0)).unwrap();
        assert_eq!(idx, vec![1]);
        assert_eq!(dist, vec![1.0]);
    }

    #[test]
    fn self_is_nearest_without_exclusion() {
        let cfg = NnConfig { k: 1, exclude_self: false };
        let (idx, dist) = top_k(&[0.0, 0.0], &refs3(), &cfg, None).unwrap();
        assert_eq!(idx, vec![0]);
        assert_eq!(dist, vec![0.0]);
    }

    #[test]
    fn ties_break_to_lowest_index() {
        let refs = TensorSet::new(5, 1, vec![10.0, 9.0, 2.0, 8.0, -2.0]).unwrap();
        let cfg = NnConfig { k: 2, exclude_self: false };
        let (idx, dist) = top_k(&[0.0], &refs, &cfg, None).unwrap();
        assert_eq!(idx, vec![2, 4]);
        assert_eq!(dist, vec![2.0, 2.0]);
    }

    #[test]
    fn k_too_large() {
        let cfg = NnConfig { k: 3, exclude_self: true };
        assert!(top_k(&[0.0, 0.0], &refs3(), &cfg, Some(0)).is_err());
        let cfg = NnConfig { k: 3, exclude_self: false };
        assert!(top_k(&[0.0, 0.0], &refs3(), &cfg, None).is_ok());
    }

    #[test]
    fn dimension_mismatch() {
        let q = TensorSet::new(1, 3, vec![0.0; 3]).unwrap();
        assert!(matches!(
            batch_nn(&q, &refs3(), &NnConfig::default()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn self_exclusion_by_identity_not_distance() {
        // duplicated rows: each one's nearest neighbor is its twin at distance 0
        let t = TensorSet::new(4, 1, vec![1.0, 1.0, 7.0, 7.0]).unwrap();
        let nn = self_nn(&t, &NnConfig::default()).unwrap();
        assert_eq!(nn.indices, vec![1, 0, 3, 2]);
        assert_eq!(nn.distances, vec![0.0; 4]);
    }

    #[test]
    fn tensor_pair_roundtrip() {
        let t = TensorSet::new(4, 1, vec![1.0, 2.0, 4.0, 8.0]).unwrap();
        let nn = self_nn(&t, &NnConfig { k: 2, exclude_self: true }).unwrap();
        let back = NnResult::from_tensors(&nn.indices_tensor().unwrap(), &nn.distances_tensor().unwrap()).unwrap();
        assert_eq!(back.indices, nn.indices);
        assert_eq!(back.k, 2);
    }
}
