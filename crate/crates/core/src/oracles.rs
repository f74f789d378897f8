//! Exhaustive numerical checks of the concentration and bounded-difference
//! inequalities behind the bounds, on small discrete instances.
//!
//! The fairness losses depend on a sample only through the multiset of its
//! `(t, y, prediction)` values, so instances are enumerated as count vectors
//! over a finite set of sample types.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{binomial, loss_pair, loss_sides, SubsetContext};
use crate::data::{inverse_shifted_harmonic, Dataset, Sample, SelectionVector, SuperSample};
use crate::error::{Error, Result};
use crate::fairness::{score_model, FairnessMetric, ScoreMode, Scored};
use crate::miest::mi_plugin_discrete;
use crate::trainer::{train, Arch, Method, Model, Optimizer, TrainConfig};

pub const DEFAULT_BUDGET: u64 = 1_000_000;
pub const SLACK_TOLERANCE: f64 = -1e-12;
pub const LAMBDA_GRID: [f64; 11] = [-4.0, -2.0, -1.0, -0.5, -0.1, 0.0, 0.1, 0.5, 1.0, 2.0, 4.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Lemma {
    /// Variance of the DP loss vs `(m/4)·E[β²]`.
    Variance,
    /// DP loss sensitivity vs `1/ℍ(n₀, n₁)`.
    DpSensitivity,
    /// Log-MGF of the train/ghost DP difference vs `(λ²m/8)·E[1/ℍ²]`.
    Mgf,
    /// EO loss sensitivity vs `2/min(n_{t,y}+2)`.
    EoSensitivity,
    /// Multiclass TV loss sensitivity vs `2/min(n_{t,y}+2)`.
    MulticlassSensitivity,
}

impl Lemma {
    pub const ALL: [Lemma; 5] =
        [Self::Variance, Self::DpSensitivity, Self::Mgf, Self::EoSensitivity, Self::MulticlassSensitivity];

    pub fn name(self) -> &'static str {
        match self {
            Self::Variance => "variance",
            Self::DpSensitivity => "dp-sensitivity",
            Self::Mgf => "mgf",
            Self::EoSensitivity => "eo-sensitivity",
            Self::MulticlassSensitivity => "multiclass-sensitivity",
        }
    }
}

impl fmt::Display for Lemma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Outcome of one oracle check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub lemma: Lemma,
    /// Largest left-hand side seen.
    pub max_observed: f64,
    /// Right-hand side at the configuration attaining `max_observed`.
    pub bound: f64,
    /// Smallest `rhs − lhs` over every configuration checked.
    pub slack: f64,
    pub instances_checked: u64,
    pub pass: bool,
}

impl OracleReport {
    fn empty(lemma: Lemma) -> Self {
        Self { lemma, max_observed: f64::NEG_INFINITY, bound: f64::INFINITY, slack: f64::INFINITY, instances_checked: 0, pass: true }
    }

    fn observe(&mut self, lhs: f64, rhs: f64) {
        if lhs > self.max_observed || (lhs == self.max_observed && rhs < self.bound) {
            self.max_observed = lhs;
            self.bound = rhs;
        }
        self.slack = self.slack.min(rhs - lhs);
        self.instances_checked += 1;
        self.pass = self.slack >= SLACK_TOLERANCE;
    }

    /// Combines reports of the same lemma.
    pub fn merge(mut self, other: &OracleReport) -> Self {
        if other.max_observed > self.max_observed || (other.max_observed == self.max_observed && other.bound < self.bound) {
            self.max_observed = other.max_observed;
            self.bound = other.bound;
        }
        self.slack = self.slack.min(other.slack);
        self.instances_checked += other.instances_checked;
        self.pass = self.pass && other.pass;
        self
    }
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<24} {} max_observed={:.6} bound={:.6} slack={:.3e} checked={}",
            self.lemma.name(),
            if self.pass { "PASS" } else { "FAIL" },
            self.max_observed,
            self.bound,
            self.slack,
            self.instances_checked
        )
    }
}

/// Which single-coordinate replacements the sensitivity checks consider.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ReplacementScope {
    /// Only replacements that keep the sensitive attribute (and label) fixed.
    FixedCounts,
    /// Every replacement, including ones that move a sample between groups.
    #[default]
    AllCases,
}

/// Calls `f` on every vector of `k` non-negative counts summing to `m`.
fn for_each_composition(m: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k == 0 {
        return;
    }
    let mut c = vec![0usize; k];
    c[0] = m;
    loop {
        f(&c);
        // Move one unit right from the last non-zero slot before the tail,
        // gathering the tail into the slot after it.
        let Some(j) = (0..k - 1).rev().find(|&i| c[i] > 0) else {
            break;
        };
        let tail = c[k - 1];
        c[k - 1] = 0;
        c[j] -= 1;
        c[j + 1] = tail + 1;
    }
}

fn compositions(m: usize, k: usize) -> u128 {
    binomial(m + k - 1, k - 1)
}

fn check_budget(evals: u128, budget: u64) -> Result<()> {
    if evals > u128::from(budget) {
        return Err(Error::Argument(format!("instance needs {evals} evaluations, budget is {budget}")));
    }
    Ok(())
}

/// Sup over every multiset of `m` types and every allowed single replacement
/// of `|loss(v) − loss(ṽ)|` against `bound(v)`.
fn sensitivity_sweep(
    lemma: Lemma,
    m: usize,
    k: usize,
    budget: u64,
    allowed: impl Fn(usize, usize) -> bool,
    loss: impl Fn(&[usize]) -> f64,
    bound: impl Fn(&[usize]) -> f64,
) -> Result<OracleReport> {
    if m == 0 || k == 0 {
        return Err(Error::Argument("need at least one sample and one type".into()));
    }
    check_budget(compositions(m, k) * (m.min(k) * k) as u128, budget)?;
    let mut report = OracleReport::empty(lemma);
    let mut scratch = vec![0usize; k];
    for_each_composition(m, k, |c| {
        let g = loss(c);
        let rhs = bound(c);
        scratch.copy_from_slice(c);
        for from in (0..k).filter(|&i| c[i] > 0) {
            for to in (0..k).filter(|&j| j != from && allowed(from, j)) {
                scratch[from] -= 1;
                scratch[to] += 1;
                report.observe((g - loss(&scratch)).abs(), rhs);
                scratch[from] += 1;
                scratch[to] -= 1;
            }
        }
    });
    if report.instances_checked == 0 {
        report.max_observed = 0.0;
        report.bound = 0.0;
        report.slack = 0.0;
    }
    Ok(report)
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Argument("prediction grid is empty".into()));
    }
    if grid.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Argument("prediction grid values must lie in [0, 1]".into()));
    }
    Ok(())
}

/// DP loss of a count vector over `(t, f)` types, `type = t·G + g`.
fn dp_of_counts(c: &[usize], grid: &[f64]) -> f64 {
    let g = grid.len();
    let mut sum = [0.0f64; 2];
    let mut n = [0usize; 2];
    for (k, &cnt) in c.iter().enumerate() {
        let t = k / g;
        sum[t] += cnt as f64 * grid[k % g];
        n[t] += cnt;
    }
    (sum[0] / (n[0] as f64 + 2.0) - sum[1] / (n[1] as f64 + 2.0)).abs()
}

fn dp_group_counts(c: &[usize], g: usize) -> [usize; 2] {
    [c[..g].iter().sum(), c[g..].iter().sum()]
}

/// Bounded differences of the DP loss: every `v` of `m` samples with
/// predictions in `grid`, every single replacement, against `1/ℍ(n₀, n₁)` of `v`.
pub fn check_lemma3(m: usize, grid: &[f64], scope: ReplacementScope, budget: u64) -> Result<OracleReport> {
    validate_grid(grid)?;
    let g = grid.len();
    sensitivity_sweep(
        Lemma::DpSensitivity,
        m,
        2 * g,
        budget,
        |a, b| scope == ReplacementScope::AllCases || a / g == b / g,
        |c| dp_of_counts(c, grid),
        |c| inverse_shifted_harmonic(&dp_group_counts(c, g)),
    )
}

/// EO loss of a count vector over `(t, y, f)` types, `type = (t·2 + y)·G + g`.
fn eo_of_counts(c: &[usize], grid: &[f64]) -> f64 {
    let g = grid.len();
    let mut total = 0.0;
    for y in 0..2 {
        let mut sum = [0.0f64; 2];
        let mut n = [0usize; 2];
        for t in 0..2 {
            for j in 0..g {
                let cnt = c[(t * 2 + y) * g + j];
                sum[t] += cnt as f64 * grid[j];
                n[t] += cnt;
            }
        }
        total += (sum[0] / (n[0] as f64 + 2.0) - sum[1] / (n[1] as f64 + 2.0)).abs();
    }
    total
}

fn min_cell(c: &[usize], cells: usize, per_cell: usize) -> usize {
    (0..cells).map(|cell| c[cell * per_cell..(cell + 1) * per_cell].iter().sum::<usize>()).min().unwrap_or(0)
}

/// Bounded differences of the EO loss against `2/min_{t,y}(n_{t,y}+2)` of `v`.
pub fn check_lemma5(m: usize, grid: &[f64], scope: ReplacementScope, budget: u64) -> Result<OracleReport> {
    validate_grid(grid)?;
    let g = grid.len();
    sensitivity_sweep(
        Lemma::EoSensitivity,
        m,
        4 * g,
        budget,
        |a, b| scope == ReplacementScope::AllCases || a / g == b / g,
        |c| eo_of_counts(c, grid),
        |c| 2.0 / (min_cell(c, 4, g) as f64 + 2.0),
    )
}

/// Bounded differences of the summed TV loss over `C` classes, with types
/// `(t, y, ŷ)` restricted to `allowed_labels × allowed_preds`. The bound
/// `2/min_{t,y}(n_{t,y}+2)` ranges over all `2·C` cells.
pub fn check_multiclass_sensitivity(
    m: usize,
    num_classes: usize,
    allowed_labels: &[usize],
    allowed_preds: &[usize],
    scope: ReplacementScope,
    budget: u64,
) -> Result<OracleReport> {
    if num_classes < 2 {
        return Err(Error::Argument("need at least two classes".into()));
    }
    if allowed_labels.is_empty() || allowed_preds.is_empty() {
        return Err(Error::Argument("label and prediction grids must be non-empty".into()));
    }
    if allowed_labels.iter().chain(allowed_preds).any(|&v| v >= num_classes) {
        return Err(Error::Argument("grid values must be below the class count".into()));
    }
    let (ly, lp) = (allowed_labels.len(), allowed_preds.len());
    let decode = move |k: usize| (k / (ly * lp), allowed_labels[(k / lp) % ly], allowed_preds[k % lp]);
    let loss = |c: &[usize]| {
        let mut h = vec![vec![[0usize; 2]; num_classes]; num_classes];
        let mut n = vec![[0usize; 2]; num_classes];
        for (k, &cnt) in c.iter().enumerate() {
            let (t, y, p) = decode(k);
            h[y][p][t] += cnt;
            n[y][t] += cnt;
        }
        (0..num_classes)
            .map(|y| {
                let d0 = n[y][0] as f64 + 2.0;
                let d1 = n[y][1] as f64 + 2.0;
                0.5 * h[y].iter().map(|cell| (cell[0] as f64 / d0 - cell[1] as f64 / d1).abs()).sum::<f64>()
            })
            .sum::<f64>()
    };
    let bound = |c: &[usize]| {
        let mut n = vec![[0usize; 2]; num_classes];
        for (k, &cnt) in c.iter().enumerate() {
            let (t, y, _) = decode(k);
            n[y][t] += cnt;
        }
        let min = n.iter().flat_map(|row| row.iter().copied()).min().unwrap_or(0);
        2.0 / (min as f64 + 2.0)
    };
    sensitivity_sweep(
        Lemma::MulticlassSensitivity,
        m,
        2 * ly * lp,
        budget,
        |a, b| {
            let (ta, ya, _) = decode(a);
            let (tb, yb, _) = decode(b);
            scope == ReplacementScope::AllCases || (ta == tb && ya == yb)
        },
        loss,
        bound,
    )
}

/// Exact check of `Var(g(V)) ≤ (m/4)·E[β²]` for the DP loss of `m` i.i.d.
/// samples whose `(t, f)` type has probabilities `probs` (length `2·|grid|`,
/// type `t·G + g`), with `β = 1/ℍ(n₀, n₁)` of the realized counts.
pub fn check_lemma2(m: usize, grid: &[f64], probs: &[f64], budget: u64) -> Result<OracleReport> {
    validate_grid(grid)?;
    let k = 2 * grid.len();
    if probs.len() != k {
        return Err(Error::Size(format!("expected {k} type probabilities, got {}", probs.len())));
    }
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Argument("type probabilities must form a distribution".into()));
    }
    if m == 0 {
        return Err(Error::Argument("m must be positive".into()));
    }
    check_budget(compositions(m, k), budget)?;
    let ln_fact: Vec<f64> = (0..=m).scan(0.0, |acc, i| {
        if i > 0 {
            *acc += (i as f64).ln();
        }
        Some(*acc)
    })
    .collect();
    let mut rows: Vec<(f64, f64, f64)> = Vec::new();
    for_each_composition(m, k, |c| {
        let mut lp = ln_fact[m];
        for (i, &cnt) in c.iter().enumerate() {
            if cnt > 0 {
                if probs[i] == 0.0 {
                    return;
                }
                lp += cnt as f64 * probs[i].ln() - ln_fact[cnt];
            }
        }
        let beta = inverse_shifted_harmonic(&dp_group_counts(c, grid.len()));
        rows.push((lp.exp(), dp_of_counts(c, grid), beta * beta));
    });
    let mass: f64 = rows.iter().map(|r| r.0).sum();
    let mean: f64 = rows.iter().map(|r| r.0 * r.1).sum::<f64>() / mass;
    let var: f64 = rows.iter().map(|r| r.0 * (r.1 - mean).powi(2)).sum::<f64>() / mass;
    let e_beta2: f64 = rows.iter().map(|r| r.0 * r.2).sum::<f64>() / mass;
    let mut report = OracleReport::empty(Lemma::Variance);
    report.observe(var, m as f64 / 4.0 * e_beta2);
    report.instances_checked = rows.len() as u64;
    Ok(report)
}

/// Exact check over all `2^m` selections of
/// `log E_R[exp(λ(ℓ(S) − ℓ(S̄)))] ≤ (λ²m/8)·E_R[1/ℍ(n₀^S, n₁^S, n₀^S̄, n₁^S̄)²]`
/// for DP on a scored supersample of `m` pairs, at every `λ` in `lambdas`.
pub fn check_lemma4(scored: &[[Scored; 2]], lambdas: &[f64], budget: u64) -> Result<OracleReport> {
    let m = scored.len();
    if m == 0 || m > 20 {
        return Err(Error::Argument(format!("supersample size {m} must lie in 1..=20")));
    }
    check_budget((1u128 << m) * lambdas.len().max(1) as u128, budget)?;
    let u = SubsetContext::full(m);
    let mut diffs = Vec::with_capacity(1 << m);
    let mut e_inv_h2 = 0.0;
    for code in 0..(1u64 << m) {
        let r = SelectionVector::from_index(m, code);
        let lp = loss_pair(scored, &r, &u, FairnessMetric::Dp, 2)?;
        // ℓ(S) − ℓ(S̄), whichever side Φ⁻ names.
        let train_minus_test = if lp.r_u1 == 0 { -lp.delta } else { lp.delta };
        diffs.push(train_minus_test);
        let mut c = [0usize; 4];
        for (i, &b) in r.bits().iter().enumerate() {
            c[usize::from(scored[i][usize::from(b)].t)] += 1;
            c[2 + usize::from(scored[i][usize::from(1 - b)].t)] += 1;
        }
        e_inv_h2 += inverse_shifted_harmonic(&c).powi(2);
    }
    let count = diffs.len() as f64;
    e_inv_h2 /= count;
    let mut report = OracleReport::empty(Lemma::Mgf);
    for &lambda in lambdas {
        let max = diffs.iter().map(|d| lambda * d).fold(f64::NEG_INFINITY, f64::max);
        let lhs = max + (diffs.iter().map(|d| (lambda * d - max).exp()).sum::<f64>() / count).ln();
        report.observe(lhs, lambda * lambda * m as f64 / 8.0 * e_inv_h2);
    }
    Ok(report)
}

/// Settings for randomized oracle sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub instances: usize,
    pub max_m: usize,
    pub max_grid: usize,
    pub budget: u64,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self { instances: 1000, max_m: 10, max_grid: 3, budget: DEFAULT_BUDGET, seed: 0 }
    }
}

fn random_grid<R: Rng + ?Sized>(rng: &mut R, max: usize) -> Vec<f64> {
    let size = rng.random_range(1..=max.max(1));
    // Endpoints attain the extreme cases, so include them often.
    (0..size)
        .map(|_| match rng.random_range(0..4) {
            0 => 0.0,
            1 => 1.0,
            _ => (rng.random::<f64>() * 1000.0).round() / 1000.0,
        })
        .collect()
}

/// Largest `m ≤ max_m` whose sweep fits the budget.
fn fit_m(max_m: usize, budget: u64, cost: impl Fn(usize) -> u128) -> usize {
    (1..=max_m).rev().find(|&m| cost(m) <= u128::from(budget)).unwrap_or(1)
}

fn sub_seed(seed: u64, lemma: Lemma, i: usize) -> u64 {
    let mut z = seed ^ (lemma as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (i as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn random_instance(lemma: Lemma, cfg: &SuiteConfig, i: usize) -> Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, lemma, i));
    let grid = random_grid(&mut rng, cfg.max_grid);
    let g = grid.len();
    match lemma {
        Lemma::DpSensitivity | Lemma::EoSensitivity => {
            let k = if lemma == Lemma::DpSensitivity { 2 * g } else { 4 * g };
            let top = fit_m(cfg.max_m, cfg.budget, |m| compositions(m, k) * (m.min(k) * k) as u128);
            let m = rng.random_range(1..=top);
            if lemma == Lemma::DpSensitivity {
                check_lemma3(m, &grid, ReplacementScope::AllCases, cfg.budget)
            } else {
                check_lemma5(m, &grid, ReplacementScope::AllCases, cfg.budget)
            }
        }
        Lemma::MulticlassSensitivity => {
            let c = rng.random_range(2..=4usize);
            let pick = |rng: &mut ChaCha8Rng| {
                let size = rng.random_range(1..=c.min(cfg.max_grid.max(1)));
                let mut v = rand::seq::index::sample(rng, c, size).into_vec();
                v.sort_unstable();
                v
            };
            let labels = pick(&mut rng);
            let preds = pick(&mut rng);
            let k = 2 * labels.len() * preds.len();
            let top = fit_m(cfg.max_m, cfg.budget, |m| compositions(m, k) * (m.min(k) * k) as u128);
            let m = rng.random_range(1..=top);
            check_multiclass_sensitivity(m, c, &labels, &preds, ReplacementScope::AllCases, cfg.budget)
        }
        Lemma::Variance => {
            let k = 2 * g;
            let top = fit_m(cfg.max_m, cfg.budget, |m| compositions(m, k));
            let m = rng.random_range(1..=top);
            // Random weights, some types switched off.
            let mut w: Vec<f64> = (0..k).map(|_| if rng.random_bool(0.25) { 0.0 } else { rng.random::<f64>() }).collect();
            if w.iter().all(|&x| x == 0.0) {
                w[0] = 1.0;
            }
            let s: f64 = w.iter().sum();
            let probs: Vec<f64> = w.iter().map(|x| x / s).collect();
            check_lemma2(m, &grid, &probs, cfg.budget)
        }
        Lemma::Mgf => {
            let top = fit_m(cfg.max_m, cfg.budget, |m| (1u128 << m) * LAMBDA_GRID.len() as u128);
            let m = rng.random_range(1..=top);
            let scored: Vec<[Scored; 2]> = (0..m)
                .map(|_| {
                    let mut s = || {
                        let score = grid[rng.random_range(0..g)];
                        Scored { score, class: usize::from(score > 0.5), t: rng.random_range(0..2), y: 0 }
                    };
                    [s(), s()]
                })
                .collect();
            check_lemma4(&scored, &LAMBDA_GRID, cfg.budget)
        }
    }
}

/// Runs `cfg.instances` random instances of one check and merges the reports.
pub fn run_suite(lemma: Lemma, cfg: &SuiteConfig) -> Result<OracleReport> {
    if cfg.instances == 0 {
        return Err(Error::Argument("at least one instance is required".into()));
    }
    let reports: Vec<OracleReport> =
        (0..cfg.instances).into_par_iter().map(|i| random_instance(lemma, cfg, i)).collect::<Result<_>>()?;
    Ok(reports.iter().skip(1).fold(reports[0].clone(), |acc, r| acc.merge(r)))
}

/// Information terms of the supersample chain on an exhaustively enumerable
/// instance, all in nats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainInformation {
    /// `I(ΔL; R₁)`.
    pub delta_vs_anchor: f64,
    /// `I(L_u; R_u)`.
    pub losses_vs_selection: f64,
    /// `I(F_u; R_u)`.
    pub predictions_vs_selection: f64,
}

impl ChainInformation {
    pub fn ordered(&self) -> bool {
        self.delta_vs_anchor <= self.losses_vs_selection && self.losses_vs_selection <= self.predictions_vs_selection
    }
}

fn quantize(v: f64) -> i64 {
    (v * 1e9).round() as i64
}

/// A 4-pair supersample with binary features, labels and groups.
pub fn chain_instance(seed: u64) -> Result<SuperSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample = |rng: &mut ChaCha8Rng| {
        let x = vec![f64::from(rng.random_range(0..2u8)), f64::from(rng.random_range(0..2u8))];
        let t = rng.random_range(0..2u8);
        let y = usize::from(rng.random_bool(if x[0] > 0.5 { 0.8 } else { 0.3 }));
        Sample::new(x, t, y)
    };
    let pairs = (0..4).map(|_| [sample(&mut rng), sample(&mut rng)]).collect();
    SuperSample::from_pairs(pairs, 2, 2)
}

/// Trains full-batch logistic regression on every selection of `ss` and
/// computes the three information terms exactly with plug-in estimates over
/// the uniform distribution of `R`.
pub fn check_data_processing(ss: &SuperSample, metric: FairnessMetric) -> Result<ChainInformation> {
    let n = ss.n();
    if n == 0 || n > 12 {
        return Err(Error::Argument(format!("supersample size {n} must lie in 1..=12")));
    }
    let cfg = TrainConfig {
        method: Method::Erm,
        lambda: 0.0,
        epochs: 200,
        batch_size: n,
        learning_rate: 0.5,
        optimizer: Optimizer::Sgd,
        balanced: false,
        seed: 0,
    };
    let init = Model::zeros(Arch::LogReg, ss.feature_dim(), ss.num_classes())?;
    let u = SubsetContext::full(n);
    let mut delta_rows = Vec::new();
    let mut loss_rows = Vec::new();
    let mut pred_rows = Vec::new();
    for code in 0..(1u64 << n) {
        let r = SelectionVector::from_index(n, code);
        let (train_set, _) = crate::data::split(ss, &r)?;
        let model = train(&init, &train_set, &cfg)?;
        let all: Dataset = ss.to_dataset();
        let flat = score_model(&model, all.iter(), ScoreMode::Soft);
        let scored: Vec<[Scored; 2]> = flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        let lp = loss_pair(&scored, &r, &u, metric, ss.num_classes())?;
        let sides = loss_sides(&scored, &u, metric, ss.num_classes())?;
        delta_rows.push((quantize(lp.delta), lp.r_u1));
        loss_rows.push(((quantize(sides[0]), quantize(sides[1])), code));
        pred_rows.push((flat.iter().map(|s| quantize(s.score)).collect::<Vec<_>>(), code));
    }
    Ok(ChainInformation {
        delta_vs_anchor: mi_plugin_discrete(&delta_rows)?.raw,
        losses_vs_selection: mi_plugin_discrete(&loss_rows)?.raw,
        predictions_vs_selection: mi_plugin_discrete(&pred_rows)?.raw,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compositions_are_complete_and_distinct() {
        for (m, k) in [(0, 1), (3, 1), (2, 2), (4, 3), (5, 4), (3, 6)] {
            let mut seen = std::collections::BTreeSet::new();
            for_each_composition(m, k, |c| {
                assert_eq!(c.iter().sum::<usize>(), m);
                assert!(seen.insert(c.to_vec()));
            });
            assert_eq!(seen.len() as u128, compositions(m, k), "m={m} k={k}");
        }
    }

    #[test]
    fn lemma3_two_samples_binary_grid() {
        let r = check_lemma3(2, &[0.0, 1.0], ReplacementScope::FixedCounts, DEFAULT_BUDGET).unwrap();
        assert!((r.max_observed - 1.0 / 3.0).abs() < 1e-15);
        assert!((r.bound - 2.0 / 3.0).abs() < 1e-15);
        assert!(r.pass);
        let all = check_lemma3(2, &[0.0, 1.0], ReplacementScope::AllCases, DEFAULT_BUDGET).unwrap();
        assert!((all.max_observed - 0.5).abs() < 1e-15);
        assert!(all.pass);
    }

    #[test]
    fn lemma3_four_balanced_and_constant() {
        assert!(check_lemma3(4, &[0.0, 0.5, 1.0], ReplacementScope::AllCases, DEFAULT_BUDGET).unwrap().pass);
        // Constant predictions: only group moves change the loss.
        let fixed = check_lemma3(4, &[0.7], ReplacementScope::FixedCounts, DEFAULT_BUDGET).unwrap();
        assert_eq!(fixed.instances_checked, 0);
        let swaps = check_lemma3(4, &[0.7], ReplacementScope::AllCases, DEFAULT_BUDGET).unwrap();
        assert!(swaps.max_observed > 0.0 && swaps.pass);
    }

    #[test]
    fn lemma5_cases() {
        for scope in [ReplacementScope::FixedCounts, ReplacementScope::AllCases] {
            assert!(check_lemma5(4, &[0.0, 1.0], scope, DEFAULT_BUDGET).unwrap().pass);
            assert!(check_lemma5(6, &[0.0, 0.5, 1.0], scope, 10 * DEFAULT_BUDGET).unwrap().pass);
        }
    }

    #[test]
    fn budget_is_enforced() {
        assert!(check_lemma5(10, &[0.0, 0.5, 1.0], ReplacementScope::AllCases, DEFAULT_BUDGET).is_err());
    }

    #[test]
    fn lemma2_cases() {
        // Point mass: zero variance.
        let r = check_lemma2(5, &[0.3], &[1.0, 0.0], DEFAULT_BUDGET).unwrap();
        assert_eq!(r.max_observed, 0.0);
        assert!(r.pass);
        let r = check_lemma2(3, &[0.0, 1.0], &[0.25; 4], DEFAULT_BUDGET).unwrap();
        assert!(r.pass && r.max_observed > 0.0);
        let r = check_lemma2(6, &[0.0, 1.0], &[0.45, 0.35, 0.15, 0.05], DEFAULT_BUDGET).unwrap();
        assert!(r.pass);
    }

    /// Variance by brute force over all ordered sequences.
    #[test]
    fn lemma2_variance_matches_sequence_enumeration() {
        let grid = [0.0, 0.4, 1.0];
        let probs = [0.1, 0.2, 0.3, 0.15, 0.05, 0.2];
        let m = 4;
        let mut ev = 0.0;
        let mut ev2 = 0.0;
        for code in 0..6usize.pow(m as u32) {
            let mut c = [0usize; 6];
            let mut p = 1.0;
            let mut x = code;
            for _ in 0..m {
                c[x % 6] += 1;
                p *= probs[x % 6];
                x /= 6;
            }
            let g = dp_of_counts(&c, &grid);
            ev += p * g;
            ev2 += p * g * g;
        }
        let r = check_lemma2(m, &grid, &probs, DEFAULT_BUDGET).unwrap();
        assert!((r.max_observed - (ev2 - ev * ev)).abs() < 1e-14);
    }

    #[test]
    fn lemma4_cases() {
        let s = |score, t| Scored { score, class: 0, t, y: 0 };
        // Symmetric pairs: the difference is always zero.
        let sym: Vec<[Scored; 2]> = (0..5).map(|i| [s(0.2 * i as f64, (i % 2) as u8); 2]).collect();
        let r = check_lemma4(&sym, &LAMBDA_GRID, DEFAULT_BUDGET).unwrap();
        assert!(r.max_observed.abs() < 1e-15 && r.pass);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let inst: Vec<[Scored; 2]> = (0..10)
            .map(|_| [s(rng.random(), rng.random_range(0..2)), s(rng.random(), rng.random_range(0..2))])
            .collect();
        let r = check_lemma4(&inst, &LAMBDA_GRID, DEFAULT_BUDGET).unwrap();
        assert!(r.pass, "{r}");
        let zero = check_lemma4(&inst, &[0.0], DEFAULT_BUDGET).unwrap();
        assert_eq!((zero.max_observed, zero.bound), (0.0, 0.0));
    }

    #[test]
    fn multiclass_cases() {
        let r = check_multiclass_sensitivity(4, 4, &[0, 1, 2, 3], &[0, 1, 2, 3], ReplacementScope::AllCases, 20 * DEFAULT_BUDGET)
            .unwrap();
        assert!(r.pass, "{r}");
        let r = check_multiclass_sensitivity(5, 2, &[0, 1], &[0, 1], ReplacementScope::AllCases, DEFAULT_BUDGET).unwrap();
        assert!(r.pass, "{r}");
        // Identical histograms per group stay within the bound.
        let r = check_multiclass_sensitivity(4, 4, &[2], &[1], ReplacementScope::AllCases, DEFAULT_BUDGET).unwrap();
        assert!(r.pass);
    }

    #[test]
    fn suites_pass_on_a_few_instances() {
        let cfg = SuiteConfig { instances: 20, seed: 3, ..SuiteConfig::default() };
        for lemma in Lemma::ALL {
            let r = run_suite(lemma, &cfg).unwrap();
            assert!(r.pass, "{r}");
        }
    }

    #[test]
    fn chain_ordering_on_enumerable_instance() {
        let ss = chain_instance(0).unwrap();
        let info = check_data_processing(&ss, FairnessMetric::Dp).unwrap();
        assert!(info.ordered(), "{info:?}");
    }
}
