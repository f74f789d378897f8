//! Information-theoretic bounds on the fairness generalization gap in the
//! supersample setting: subset enumeration, the XOR selection patterns,
//! loss pairs and loss differences, group-imbalance coefficients and the
//! estimated bound values.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{counts_of, inverse_shifted_harmonic, SelectionVector, SuperSample};
use crate::error::{Error, Result};
use crate::fairness::{FairnessMetric, Scored};
use crate::miest::{mi_disc_cont, mi_partitioning, Estimator, MIEstimate};

/// A subset `u` of `m` supersample pair indices, sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SubsetContext {
    u: Vec<usize>,
}

impl SubsetContext {
    pub fn new(mut u: Vec<usize>, n: usize) -> Result<Self> {
        u.sort_unstable();
        if u.is_empty() {
            return Err(Error::Argument("a subset needs at least one index".into()));
        }
        if u.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Argument("subset indices must be distinct".into()));
        }
        if u.last().is_some_and(|&i| i >= n) {
            return Err(Error::Size(format!("subset index out of range for {n} pairs")));
        }
        Ok(Self { u })
    }

    /// The whole index range `0..n`.
    pub fn full(n: usize) -> Self {
        Self { u: (0..n).collect() }
    }

    pub fn indices(&self) -> &[usize] {
        &self.u
    }

    pub fn m(&self) -> usize {
        self.u.len()
    }

    /// `u₁`, the anchor of the XOR pattern.
    pub fn first(&self) -> usize {
        self.u[0]
    }
}

/// `C(n, m)`, saturating at `u128::MAX`.
pub fn binomial(n: usize, m: usize) -> u128 {
    if m > n {
        return 0;
    }
    let m = m.min(n - m);
    let mut c: u128 = 1;
    for i in 0..m {
        c = match c.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    c
}

/// All `m`-subsets of `0..n` in lexicographic order when there are at most
/// `budget` of them, otherwise `budget` distinct uniformly drawn subsets.
pub fn subsets<R: Rng + ?Sized>(n: usize, m: usize, budget: usize, rng: &mut R) -> Result<Vec<SubsetContext>> {
    if m == 0 || m > n {
        return Err(Error::Argument(format!("subset size {m} must lie in 1..={n}")));
    }
    if budget == 0 {
        return Err(Error::Argument("subset budget must be positive".into()));
    }
    if binomial(n, m) <= budget as u128 {
        let mut out = Vec::new();
        let mut cur: Vec<usize> = (0..m).collect();
        loop {
            out.push(SubsetContext { u: cur.clone() });
            let Some(pos) = (0..m).rev().find(|&i| cur[i] < n - m + i) else {
                break;
            };
            cur[pos] += 1;
            for i in pos + 1..m {
                cur[i] = cur[i - 1] + 1;
            }
        }
        return Ok(out);
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(budget);
    while out.len() < budget {
        let mut u = index::sample(rng, n, m).into_vec();
        u.sort_unstable();
        if seen.insert(u.clone()) {
            out.push(SubsetContext { u });
        }
    }
    Ok(out)
}

/// `Φ_u = (R_{u₁} ⊕ R_{uᵢ})_{i ≥ 2}` and the masks `Φ⁻ = 0 ⊗ Φ`, `Φ⁺ = 1 ⊗ Φ`
/// with `b ⊗ Φ = (b, Φ ⊕ b)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhiPattern {
    pub phi: Vec<u8>,
    pub minus: Vec<u8>,
    pub plus: Vec<u8>,
}

pub fn phi_of(r: &SelectionVector, u: &SubsetContext) -> Result<PhiPattern> {
    let bits = r.bits();
    if u.indices().iter().any(|&i| i >= bits.len()) {
        return Err(Error::Size(format!("subset index out of range for a selection vector of length {}", bits.len())));
    }
    let r1 = bits[u.first()];
    let phi: Vec<u8> = u.indices()[1..].iter().map(|&i| r1 ^ bits[i]).collect();
    let mask = |b: u8| std::iter::once(b).chain(phi.iter().map(|p| p ^ b)).collect::<Vec<u8>>();
    Ok(PhiPattern { minus: mask(0), plus: mask(1), phi })
}

/// Losses on the `Φ⁻` and `Φ⁺` selections of a subset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPair {
    pub l_minus: f64,
    pub l_plus: f64,
    /// `l_plus − l_minus`.
    pub delta: f64,
    pub r_u1: u8,
}

/// Scores of both members of every supersample pair.
pub type ScoredPairs = [[Scored; 2]];

fn masked_loss(scored: &ScoredPairs, u: &SubsetContext, mask: &[u8], metric: FairnessMetric, num_classes: usize) -> f64 {
    let items: Vec<Scored> = u.indices().iter().zip(mask).map(|(&i, &b)| scored[i][usize::from(b)]).collect();
    metric.loss(&items, num_classes)
}

fn check_scored(scored: &ScoredPairs, u: &SubsetContext) -> Result<()> {
    if u.indices().iter().any(|&i| i >= scored.len()) {
        return Err(Error::Size(format!("subset index out of range for {} scored pairs", scored.len())));
    }
    Ok(())
}

/// `(ℓ(Φ⁻ selection), ℓ(Φ⁺ selection))` over the pairs in `u`.
pub fn loss_pair(
    scored: &ScoredPairs,
    r: &SelectionVector,
    u: &SubsetContext,
    metric: FairnessMetric,
    num_classes: usize,
) -> Result<LossPair> {
    check_scored(scored, u)?;
    let phi = phi_of(r, u)?;
    let l_minus = masked_loss(scored, u, &phi.minus, metric, num_classes);
    let l_plus = masked_loss(scored, u, &phi.plus, metric, num_classes);
    Ok(LossPair { l_minus, l_plus, delta: l_plus - l_minus, r_u1: r.bits()[u.first()] })
}

/// `(ℓ(V⁰_u), ℓ(V¹_u))`: the loss on the first and on the second member of
/// every pair in `u`.
pub fn loss_sides(scored: &ScoredPairs, u: &SubsetContext, metric: FairnessMetric, num_classes: usize) -> Result<[f64; 2]> {
    check_scored(scored, u)?;
    let zeros = vec![0u8; u.m()];
    let ones = vec![1u8; u.m()];
    Ok([masked_loss(scored, u, &zeros, metric, num_classes), masked_loss(scored, u, &ones, metric, num_classes)])
}

/// `(n₀^{S_u}, n₁^{S_u}, n₀^{S̄_u}, n₁^{S̄_u})`.
pub fn dp_counts(ss: &SuperSample, r: &SelectionVector, u: &SubsetContext) -> Result<[usize; 4]> {
    split_counts(ss, r, u).map(|(s, sbar)| [s.dp[0], s.dp[1], sbar.dp[0], sbar.dp[1]])
}

/// `(min_{t,y} n_{t,y}^{S_u}, min_{t,y} n_{t,y}^{S̄_u})`.
pub fn eo_min_counts(ss: &SuperSample, r: &SelectionVector, u: &SubsetContext) -> Result<[usize; 2]> {
    split_counts(ss, r, u).map(|(s, sbar)| [s.min_subgroup(), sbar.min_subgroup()])
}

fn split_counts(
    ss: &SuperSample,
    r: &SelectionVector,
    u: &SubsetContext,
) -> Result<(crate::data::GroupCounts, crate::data::GroupCounts)> {
    if r.len() != ss.n() {
        return Err(Error::Size(format!("selection vector has length {}, supersample has {} pairs", r.len(), ss.n())));
    }
    if u.indices().iter().any(|&i| i >= ss.n()) {
        return Err(Error::Size("subset index out of range".into()));
    }
    let pick = |side: fn(u8) -> u8| {
        counts_of(
            u.indices().iter().map(|&i| {
                let s = &ss.pair(i)[usize::from(side(r.bits()[i]))];
                (s.t, s.y)
            }),
            ss.num_classes(),
        )
    };
    Ok((pick(|b| b), pick(|b| 1 - b)))
}

fn mean_of<T>(items: &[T], f: impl Fn(&T) -> f64) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::Argument("coefficient of an empty draw list".into()));
    }
    Ok(items.iter().map(f).sum::<f64>() / items.len() as f64)
}

/// Empirical mean over selection draws of `(Σᵢ 1/(countᵢ + 2))²`.
pub fn coeff_dp(counts: &[[usize; 4]]) -> Result<f64> {
    mean_of(counts, |c| inverse_shifted_harmonic(c).powi(2))
}

/// Empirical mean over selection draws of `(1/(min_S + 2) + 1/(min_S̄ + 2))²`.
pub fn coeff_eo(mins: &[[usize; 2]]) -> Result<f64> {
    mean_of(mins, |c| inverse_shifted_harmonic(c).powi(2))
}

/// The bound families this crate knows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundKind {
    /// DP, mutual information between weights and a data subset.
    DpMi,
    /// DP, conditional mutual information between weights and selection bits.
    DpCmi,
    /// DP, predictions vs selection bits.
    #[serde(rename = "dp-fcmi")]
    DpFCmi,
    /// DP, the loss pair vs selection bits.
    #[serde(rename = "dp-ecmi")]
    DpECmi,
    /// DP, the loss difference vs the anchor selection bit.
    #[serde(rename = "dp-deltal")]
    DpDeltaL,
    /// EO, mutual information between weights and a data subset.
    EoMi,
    /// EO, the loss difference vs the anchor selection bit.
    #[serde(rename = "eo-deltal")]
    EoDeltaL,
}

impl BoundKind {
    pub const ALL: [BoundKind; 7] =
        [Self::DpMi, Self::DpCmi, Self::DpFCmi, Self::DpECmi, Self::DpDeltaL, Self::EoMi, Self::EoDeltaL];

    pub fn name(self) -> &'static str {
        match self {
            Self::DpMi => "dp-mi",
            Self::DpCmi => "dp-cmi",
            Self::DpFCmi => "dp-fcmi",
            Self::DpECmi => "dp-ecmi",
            Self::DpDeltaL => "dp-deltal",
            Self::EoMi => "eo-mi",
            Self::EoDeltaL => "eo-deltal",
        }
    }

    /// The factor in front of the coefficient: `m/2` for DP, `2m` for EO.
    pub fn scale(self, m: usize) -> f64 {
        match self {
            Self::EoMi | Self::EoDeltaL => 2.0 * m as f64,
            _ => m as f64 / 2.0,
        }
    }

    fn min_m(self) -> usize {
        match self {
            Self::EoDeltaL => 4,
            _ => 2,
        }
    }
}

impl fmt::Display for BoundKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BoundKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| Error::Argument(format!("unknown bound `{s}`")))
    }
}

/// The scalar multiplying the information term, `scale(m) · E[term]`.
///
/// Each entry of `counts` is one realization:
/// - `DpMi`: `[n₀, n₁]` of the subset, term `(1/(n₀+2) + 1/(n₁+2))²`;
/// - the other DP kinds: the four train/ghost group counts, term `(Σ 1/(c+2))²`;
/// - `EoMi`: every `n_{t,y}` of the subset, term `1/(min + 2)²`;
/// - `EoDeltaL`: `[min_S, min_S̄]`, term `(1/(min_S+2) + 1/(min_S̄+2))²`.
pub fn coeff_only(kind: BoundKind, m: usize, counts: &[Vec<usize>]) -> Result<f64> {
    if m < kind.min_m() {
        return Err(Error::Argument(format!("{kind} needs m ≥ {}", kind.min_m())));
    }
    let arity = match kind {
        BoundKind::DpMi | BoundKind::EoDeltaL => Some(2),
        BoundKind::DpCmi | BoundKind::DpFCmi | BoundKind::DpECmi | BoundKind::DpDeltaL => Some(4),
        BoundKind::EoMi => None,
    };
    if let Some(bad) = counts.iter().find(|c| arity.map_or(c.is_empty(), |a| c.len() != a)) {
        return Err(Error::Argument(format!("{kind} expects {} counts per draw, got {}", arity.unwrap_or(1), bad.len())));
    }
    let mean = match kind {
        BoundKind::EoMi => mean_of(counts, |c| {
            let min = *c.iter().min().expect("non-empty");
            (1.0 / (min as f64 + 2.0)).powi(2)
        })?,
        _ => mean_of(counts, |c| inverse_shifted_harmonic(c).powi(2))?,
    };
    Ok(kind.scale(m) * mean)
}

/// `√(scale · coefficient · max(mi, 0))`.
pub fn bound_value(scale: f64, coefficient: f64, mi: f64) -> f64 {
    (scale * coefficient * mi.max(0.0)).sqrt()
}

/// How information terms are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiConfig {
    pub estimator: Estimator,
    /// Neighbor count for the kNN estimator.
    pub k: usize,
    /// Partition depth for the partitioning estimator.
    pub depth: u32,
}

impl Default for MiConfig {
    fn default() -> Self {
        Self { estimator: Estimator::KnnRoss, k: 3, depth: 2 }
    }
}

impl MiConfig {
    fn scalar(&self, bits: &[u8], values: &[f64]) -> Result<MIEstimate> {
        // A constant variable carries no information.
        if bits.len() == values.len() && values.windows(2).all(|w| w[0] == w[1]) && values.iter().all(|v| v.is_finite()) {
            return Ok(MIEstimate::zero(self.estimator, values.len()));
        }
        match self.estimator {
            Estimator::KnnRoss => {
                let pts: Vec<Vec<f64>> = values.iter().map(|&v| vec![v]).collect();
                mi_disc_cont(bits, &pts, self.k)
            }
            Estimator::Partitioning => mi_partitioning(bits, values, self.depth),
            Estimator::PluginDiscrete => Err(Error::Argument("the plug-in estimator needs discrete inputs".into())),
        }
    }
}

/// Selection draws collected for one subset within one supersample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaDraws {
    pub delta: Vec<f64>,
    pub r_u1: Vec<u8>,
    /// Group-imbalance coefficient averaged over the same draws.
    pub coeff: f64,
}

/// Selection draws of the loss pair for one subset within one supersample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideDraws {
    pub losses: Vec<[f64; 2]>,
    /// `R_u` packed into an integer, first subset element most significant.
    pub r_u: Vec<u64>,
    pub coeff: f64,
}

/// One supersample's contribution to a bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZBound {
    /// Position of the supersample draw in the input.
    pub z: usize,
    /// Mean over subsets of the per-subset bound.
    pub value: f64,
    pub coefficient: f64,
    pub mi: f64,
    /// Subsets averaged over.
    pub subsets: usize,
    /// Subsets whose information term could not be estimated, e.g. because
    /// one selection class had at most `k` draws.
    pub dropped: usize,
}

/// A bound estimate averaged over supersample draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundEstimate {
    pub kind: BoundKind,
    pub m: usize,
    /// Mean of the per-supersample values.
    pub value: f64,
    /// Population standard deviation of the per-supersample values.
    pub std: f64,
    /// Mean coefficient across supersamples.
    pub coefficient: f64,
    /// Mean information estimate (nats) across supersamples.
    pub mi: f64,
    pub per_z: Vec<ZBound>,
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn assemble(kind: BoundKind, m: usize, per_z: Vec<ZBound>) -> Result<BoundEstimate> {
    if per_z.is_empty() {
        return Err(Error::Argument("no supersample draws".into()));
    }
    let values: Vec<f64> = per_z.iter().map(|z| z.value).collect();
    let (value, std) = mean_std(&values);
    let coefficient = per_z.iter().map(|z| z.coefficient).sum::<f64>() / per_z.len() as f64;
    let mi = per_z.iter().map(|z| z.mi).sum::<f64>() / per_z.len() as f64;
    Ok(BoundEstimate { kind, m, value, std, coefficient, mi, per_z })
}

/// Averages the per-subset bound within each supersample, then across
/// supersamples. `term` returns the scale, the coefficient and the information
/// estimate of one subset. Subsets whose estimate fails with an estimation
/// error are dropped, and so are supersamples left without any subset.
fn average_subsets<T>(
    kind: BoundKind,
    m: usize,
    per_z: &[Vec<T>],
    term: impl Fn(&T) -> Result<(f64, f64, Result<MIEstimate>)>,
) -> Result<BoundEstimate> {
    let mut zs = Vec::with_capacity(per_z.len());
    for (z, subsets) in per_z.iter().enumerate() {
        if subsets.is_empty() {
            return Err(Error::Argument("a supersample draw has no subsets".into()));
        }
        let mut acc = ZBound { z, value: 0.0, coefficient: 0.0, mi: 0.0, subsets: 0, dropped: 0 };
        for s in subsets {
            let (scale, coeff, mi) = term(s)?;
            let mi = match mi {
                Ok(mi) => mi,
                Err(Error::Estimation(_)) => {
                    acc.dropped += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            acc.value += bound_value(scale, coeff, mi.value);
            acc.coefficient += coeff;
            acc.mi += mi.value;
            acc.subsets += 1;
        }
        if acc.subsets == 0 {
            continue;
        }
        let k = acc.subsets as f64;
        acc.value /= k;
        acc.coefficient /= k;
        acc.mi /= k;
        zs.push(acc);
    }
    if zs.is_empty() && !per_z.is_empty() {
        return Err(Error::Estimation("no supersample draw has enough selection draws in every class".into()));
    }
    assemble(kind, m, zs)
}

fn delta_bound(kind: BoundKind, per_z: &[Vec<DeltaDraws>], m: usize, cfg: &MiConfig) -> Result<BoundEstimate> {
    if m < kind.min_m() {
        return Err(Error::Argument(format!("{kind} needs m ≥ {}", kind.min_m())));
    }
    let scale = kind.scale(m);
    average_subsets(kind, m, per_z, |s: &DeltaDraws| {
        if s.delta.len() != s.r_u1.len() {
            return Err(Error::Size("loss differences and selection bits differ in length".into()));
        }
        Ok((scale, s.coeff, cfg.scalar(&s.r_u1, &s.delta)))
    })
}

/// `√((m/2) · E_R[1/ℍ²] · I(ΔL; R_{u₁}))`, averaged over subsets and then
/// over supersamples.
pub fn bound_deltal_dp(per_z: &[Vec<DeltaDraws>], m: usize, cfg: &MiConfig) -> Result<BoundEstimate> {
    delta_bound(BoundKind::DpDeltaL, per_z, m, cfg)
}

/// `√(2m · E_R[1/ℍ̄²] · I(ΔL; R_{u₁}))` with `ℍ̄` built from the smallest
/// `(t, y)` subgroups; requires `m ≥ 4`.
pub fn bound_deltal_eo(per_z: &[Vec<DeltaDraws>], m: usize, cfg: &MiConfig) -> Result<BoundEstimate> {
    delta_bound(BoundKind::EoDeltaL, per_z, m, cfg)
}

/// Largest subset size for which the loss-pair bound is estimated.
pub const MAX_ECMI_M: usize = 5;

/// `√((m/2) · E_R[1/ℍ²] · I(L_u; R_u))` with the whole selection pattern
/// `R_u` as the discrete symbol.
pub fn bound_ecmi_dp(per_z: &[Vec<SideDraws>], m: usize, cfg: &MiConfig) -> Result<BoundEstimate> {
    if !(2..=MAX_ECMI_M).contains(&m) {
        return Err(Error::Argument(format!("the loss-pair bound is estimated only for 2 ≤ m ≤ {MAX_ECMI_M}")));
    }
    let scale = BoundKind::DpECmi.scale(m);
    average_subsets(BoundKind::DpECmi, m, per_z, |s: &SideDraws| {
        if s.losses.len() != s.r_u.len() {
            return Err(Error::Size("loss pairs and selection patterns differ in length".into()));
        }
        let pts: Vec<Vec<f64>> = s.losses.iter().map(|l| l.to_vec()).collect();
        Ok((scale, s.coeff, mi_disc_cont(&s.r_u, &pts, cfg.k)))
    })
}

/// Packs `R_u` into an integer, first subset element most significant.
pub fn pack_bits(r: &SelectionVector, u: &SubsetContext) -> u64 {
    u.indices().iter().fold(0u64, |acc, &i| (acc << 1) | u64::from(r.bits()[i]))
}
