//! Mutual information between a discrete symbol and a continuous vector
//! (nearest-neighbor estimator), plus plug-in estimators for discrete data.
//! All values are in nats.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::digamma;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    KnnRoss,
    PluginDiscrete,
    Partitioning,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MIEstimate {
    /// Estimate clamped at zero.
    pub value: f64,
    /// Estimate before clamping.
    pub raw: f64,
    pub estimator: Estimator,
    /// Neighbor count for the kNN estimator.
    pub k: Option<usize>,
    pub n_samples: usize,
}

impl MIEstimate {
    fn new(raw: f64, estimator: Estimator, k: Option<usize>, n_samples: usize) -> Self {
        Self { value: raw.max(0.0), raw, estimator, k, n_samples }
    }

    pub fn bits(&self) -> f64 {
        self.value / std::f64::consts::LN_2
    }

    /// A zero estimate, for inputs that carry no information by construction.
    pub fn zero(estimator: Estimator, n_samples: usize) -> Self {
        Self::new(0.0, estimator, None, n_samples)
    }
}

fn chebyshev(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs()))
}

/// `(distance, index)` lexicographic order.
fn key_cmp(a: (f64, usize), b: (f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Nearest-neighbor estimate of `I(B; X)` for discrete `B` and real vector `X`:
///
/// `ψ(N) − ⟨ψ(N_b)⟩ + ψ(k) − ⟨ψ(m_i)⟩`
///
/// where `N_b` is the size of point `i`'s class and `m_i` counts the points of
/// any class ranked before `i`'s `k`-th same-class neighbor, plus `i` itself.
/// Distances are max-norm; equal distances are ordered by index.
pub fn mi_disc_cont<S: Ord + Sync>(symbols: &[S], points: &[Vec<f64>], k: usize) -> Result<MIEstimate> {
    let n = symbols.len();
    if points.len() != n {
        return Err(Error::Size(format!("{n} symbols but {} points", points.len())));
    }
    if k == 0 {
        return Err(Error::Argument("k must be at least 1".into()));
    }
    if n < 2 * (k + 1) {
        return Err(Error::Estimation(format!("{n} samples is too few for k = {k}")));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Size("points have differing dimensions".into()));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite coordinate".into()));
    }
    let mut class_of = vec![0usize; n];
    let mut sizes: Vec<usize> = Vec::new();
    {
        let mut ids: BTreeMap<&S, usize> = BTreeMap::new();
        for (i, s) in symbols.iter().enumerate() {
            let next = ids.len();
            let id = *ids.entry(s).or_insert(next);
            if id == sizes.len() {
                sizes.push(0);
            }
            sizes[id] += 1;
            class_of[i] = id;
        }
    }
    if let Some(small) = sizes.iter().find(|&&c| c <= k) {
        return Err(Error::Estimation(format!("a class has {small} members, needs more than k = {k}")));
    }
    let per_point: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let dist: Vec<f64> = points.iter().map(|p| chebyshev(&points[i], p)).collect();
            let mut same: Vec<(f64, usize)> =
                (0..n).filter(|&j| j != i && class_of[j] == class_of[i]).map(|j| (dist[j], j)).collect();
            let (_, kth, _) = same.select_nth_unstable_by(k - 1, |a, b| key_cmp(*a, *b));
            let kth = *kth;
            let inside = (0..n).filter(|&j| j != i && key_cmp((dist[j], j), kth) == Ordering::Less).count();
            (digamma(sizes[class_of[i]] as f64), digamma((inside + 1) as f64))
        })
        .collect();
    let nf = n as f64;
    let mean_nb = per_point.iter().map(|p| p.0).sum::<f64>() / nf;
    let mean_m = per_point.iter().map(|p| p.1).sum::<f64>() / nf;
    let raw = digamma(nf) - mean_nb + digamma(k as f64) - mean_m;
    Ok(MIEstimate::new(raw, Estimator::KnnRoss, Some(k), n))
}

/// Scalar convenience wrapper around [`mi_disc_cont`].
pub fn mi_disc_scalar<S: Ord + Sync>(symbols: &[S], values: &[f64], k: usize) -> Result<MIEstimate> {
    let points: Vec<Vec<f64>> = values.iter().map(|&v| vec![v]).collect();
    mi_disc_cont(symbols, &points, k)
}

/// Mutual information of the empirical joint distribution of `(a, b)`.
pub fn mi_plugin_discrete<A: Ord, B: Ord>(pairs: &[(A, B)]) -> Result<MIEstimate> {
    if pairs.is_empty() {
        return Err(Error::Estimation("no samples".into()));
    }
    let mut joint: BTreeMap<(&A, &B), usize> = BTreeMap::new();
    let mut pa: BTreeMap<&A, usize> = BTreeMap::new();
    let mut pb: BTreeMap<&B, usize> = BTreeMap::new();
    for (a, b) in pairs {
        *joint.entry((a, b)).or_default() += 1;
        *pa.entry(a).or_default() += 1;
        *pb.entry(b).or_default() += 1;
    }
    let n = pairs.len() as f64;
    let raw = joint
        .iter()
        .map(|((a, b), &c)| {
            let c = c as f64;
            c / n * (c * n / (pa[a] as f64 * pb[b] as f64)).ln()
        })
        .sum::<f64>();
    Ok(MIEstimate::new(raw, Estimator::PluginDiscrete, None, pairs.len()))
}

/// Plug-in estimate after cutting the real axis into `2^depth` cells of
/// (nearly) equal occupancy. Ties are ranked by index.
pub fn mi_partitioning<S: Ord>(symbols: &[S], values: &[f64], depth: u32) -> Result<MIEstimate> {
    let n = symbols.len();
    if values.len() != n {
        return Err(Error::Size(format!("{n} symbols but {} values", values.len())));
    }
    if n == 0 {
        return Err(Error::Estimation("no samples".into()));
    }
    if depth > 20 {
        return Err(Error::Argument(format!("partition depth {depth} is too large")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite value".into()));
    }
    let cells = 1usize << depth;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| key_cmp((values[a], a), (values[b], b)));
    let mut cell = vec![0usize; n];
    for (rank, &i) in order.iter().enumerate() {
        cell[i] = rank * cells / n;
    }
    let pairs: Vec<(&S, usize)> = symbols.iter().zip(cell).collect();
    let est = mi_plugin_discrete(&pairs)?;
    Ok(MIEstimate { estimator: Estimator::Partitioning, ..est })
}
