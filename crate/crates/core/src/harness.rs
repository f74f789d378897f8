//! Experiment grids: supersample draws crossed with selection draws, one
//! trained model per cell, gap measurement, bound estimation, the
//! batch-balancing comparison and result emission.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{
    bound_deltal_dp, bound_deltal_eo, coeff_dp, coeff_eo, dp_counts, eo_min_counts, loss_pair, mean_std, subsets,
    BoundEstimate, DeltaDraws, MiConfig, SubsetContext,
};
use crate::data::{draw_supersample, load_csv, Dataset, Sample, Schema, SelectionVector, SuperSample};
use crate::error::{Error, Result};
use crate::fairness::{score_model, FairnessMetric, ScoreMode, Scored};
use crate::oracles::SuiteConfig;
use crate::trainer::{grad_check_coords, train, Arch, Batch, Method, Model, Optimizer, TrainConfig};

/// Directory holding the bundled datasets and schemas.
pub fn default_data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `compas`, `adult`, or a path to a CSV file (which then needs `schema`).
    pub dataset: String,
    /// Sensitive attribute variant of a bundled dataset, e.g. `gender`.
    pub sensitive: String,
    pub schema: Option<PathBuf>,
    pub data_dir: PathBuf,
    pub metric: FairnessMetric,
    pub method: Method,
    /// Penalty weight; the method's default when absent.
    pub lambda: Option<f64>,
    pub n: Vec<usize>,
    /// Supersample draws per `n`.
    pub m1: usize,
    /// Selection draws per supersample.
    pub m2: usize,
    /// Subset size for the bounds; `n` when absent.
    pub m: Option<usize>,
    pub subset_budget: usize,
    pub mi: MiConfig,
    pub balanced: bool,
    pub seed: u64,
    pub arch: Arch,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub score_mode: ScoreMode,
    /// Repeats per cell of the balancing comparison.
    pub repeats: usize,
    /// Methods compared with and without batch balancing.
    pub table1_methods: Vec<Method>,
    /// Smallest Pearson correlation the scatter check accepts.
    pub min_correlation: f64,
    pub oracles: SuiteConfig,
    pub grad_check: GradCheckConfig,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: "compas".into(),
            sensitive: "gender".into(),
            schema: None,
            data_dir: default_data_dir(),
            metric: FairnessMetric::Dp,
            method: Method::DiffDp,
            lambda: None,
            n: vec![250, 500, 1000, 1500, 2000, 2500],
            m1: 21,
            m2: 50,
            m: None,
            subset_budget: 30,
            mi: MiConfig::default(),
            balanced: false,
            seed: 0,
            arch: Arch::mlp64(),
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-3,
            score_mode: ScoreMode::Soft,
            repeats: 10,
            table1_methods: vec![Method::DiffDp, Method::Hsic, Method::PRemover],
            min_correlation: 0.7,
            oracles: SuiteConfig::default(),
            grad_check: GradCheckConfig::default(),
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda.unwrap_or_else(|| self.method.default_lambda())
    }

    /// CSV and schema paths this configuration reads.
    pub fn sources(&self) -> Result<(PathBuf, PathBuf)> {
        if let Some(schema) = &self.schema {
            return Ok((PathBuf::from(&self.dataset), schema.clone()));
        }
        let file = match self.dataset.as_str() {
            "compas" => "compas-scores-two-years.csv",
            "adult" => "adult.data",
            other => {
                return Err(Error::Config(format!("dataset `{other}` is not bundled; give a schema for it")));
            }
        };
        let schema = self.data_dir.join(format!("{}_{}.json", self.dataset, self.sensitive));
        if !schema.exists() {
            return Err(Error::Config(format!("no schema for sensitive attribute `{}` of {}", self.sensitive, self.dataset)));
        }
        Ok((self.data_dir.join(file), schema))
    }

    pub fn load(&self) -> Result<Dataset> {
        let (csv, schema) = self.sources()?;
        load_csv(csv, &Schema::from_path(schema)?)
    }

    pub fn train_config(&self, method: Method, lambda: f64, balanced: bool, seed: u64) -> TrainConfig {
        TrainConfig {
            method,
            lambda,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            optimizer: Optimizer::default(),
            balanced,
            seed,
        }
    }

    /// Subset size used at sample size `n`.
    pub fn m_at(&self, n: usize) -> usize {
        self.m.unwrap_or(n)
    }

    /// Checks that need no training, against a dataset of `rows` samples.
    pub fn validate(&self, rows: usize) -> Result<()> {
        if self.m1 == 0 || self.m2 == 0 {
            return Err(Error::Config("m1 and m2 must be at least 1".into()));
        }
        if self.n.is_empty() || self.n.contains(&0) {
            return Err(Error::Config("the n grid must be non-empty and positive".into()));
        }
        if let Some(&n) = self.n.iter().find(|&&n| 2 * n > rows) {
            return Err(Error::Config(format!("n = {n} needs {} rows, the dataset has {rows}", 2 * n)));
        }
        if self.subset_budget == 0 {
            return Err(Error::Config("subset budget must be positive".into()));
        }
        self.train_config(self.method, self.lambda(), self.balanced, 0).validate()
    }

    fn validate_bounds(&self) -> Result<()> {
        let min_m = if self.metric == FairnessMetric::Dp {
            2
        } else if self.metric == FairnessMetric::TvMulticlass {
            return Err(Error::Config("bounds are implemented for dp, eo and eopp".into()));
        } else {
            4
        };
        for &n in &self.n {
            let m = self.m_at(n);
            if m < min_m || m > n {
                return Err(Error::Config(format!("subset size {m} must lie in {min_m}..={n}")));
            }
        }
        if self.m2 < 2 * (self.mi.k + 1) {
            return Err(Error::Config(format!("m2 = {} is too few selection draws for k = {}", self.m2, self.mi.k)));
        }
        Ok(())
    }
}

/// Deterministic seed for a position in the grid.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };
    path.iter().fold(mix(master), |acc, &p| mix(acc ^ mix(p)))
}

const TAG_SUPERSAMPLE: u64 = 1;
const TAG_SUBSETS: u64 = 2;
const TAG_SELECTION: u64 = 3;
const TAG_INIT: u64 = 4;
const TAG_TRAIN: u64 = 5;
const TAG_SPLIT: u64 = 6;

/// One trained model: supersample `z_index`, selection `r_index`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub n: usize,
    pub z_index: usize,
    pub r_index: usize,
    pub seed: u64,
    pub digest: String,
    pub train_loss: f64,
    pub test_loss: f64,
    /// `test_loss − train_loss`.
    pub gap: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    /// Loss difference per subset.
    pub delta: Vec<f64>,
    /// First selection bit per subset.
    pub r_u1: Vec<u8>,
    /// Group counts per subset: four DP counts, or the two smallest
    /// subgroup sizes for label-conditional metrics.
    pub counts: Vec<Vec<usize>>,
}

fn accuracy(scored: &[&Scored]) -> f64 {
    if scored.is_empty() {
        return f64::NAN;
    }
    scored.iter().filter(|s| s.class == s.y).count() as f64 / scored.len() as f64
}

struct Draw {
    n: usize,
    z: usize,
    ss: SuperSample,
    subsets: Vec<SubsetContext>,
}

fn run_cells(cfg: &ExperimentConfig, data: &Dataset, with_subsets: bool) -> Result<Vec<CellRecord>> {
    cfg.validate(data.len())?;
    let lambda = cfg.lambda();
    let mut draws = Vec::new();
    for &n in &cfg.n {
        for z in 0..cfg.m1 {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[n as u64, z as u64, TAG_SUPERSAMPLE]));
            let ss = draw_supersample(data, n, &mut rng)?;
            let subsets = if with_subsets {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[n as u64, z as u64, TAG_SUBSETS]));
                subsets(n, cfg.m_at(n), cfg.subset_budget, &mut rng)?
            } else {
                Vec::new()
            };
            draws.push(Draw { n, z, ss, subsets });
        }
    }
    let jobs: Vec<(usize, usize)> = (0..draws.len()).flat_map(|d| (0..cfg.m2).map(move |r| (d, r))).collect();
    jobs.par_iter()
        .map(|&(d, r_index)| {
            let draw = &draws[d];
            let seed = derive_seed(cfg.seed, &[draw.n as u64, draw.z as u64, r_index as u64]);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[TAG_SELECTION]));
            let r = SelectionVector::random(draw.n, &mut rng);
            run_cell(cfg, draw, r_index, seed, &r, lambda)
        })
        .collect()
}

fn run_cell(
    cfg: &ExperimentConfig,
    draw: &Draw,
    r_index: usize,
    seed: u64,
    r: &SelectionVector,
    lambda: f64,
) -> Result<CellRecord> {
    let ss = &draw.ss;
    let (train_set, _) = crate::data::split(ss, r)?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[TAG_INIT]));
    let init = Model::init(cfg.arch.clone(), ss.feature_dim(), ss.num_classes(), &mut init_rng)?;
    let tcfg = cfg.train_config(cfg.method, lambda, cfg.balanced, derive_seed(seed, &[TAG_TRAIN]));
    let model = train(&init, &train_set, &tcfg)?;
    let all = ss.to_dataset();
    let flat = score_model(&model, all.iter(), cfg.score_mode);
    let scored: Vec<[Scored; 2]> = flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
    let bits = r.bits();
    let train_items: Vec<Scored> = scored.iter().zip(bits).map(|(p, &b)| p[usize::from(b)]).collect();
    let test_items: Vec<Scored> = scored.iter().zip(bits).map(|(p, &b)| p[usize::from(1 - b)]).collect();
    let c = ss.num_classes();
    let train_loss = cfg.metric.loss(&train_items, c);
    let test_loss = cfg.metric.loss(&test_items, c);
    let mut delta = Vec::with_capacity(draw.subsets.len());
    let mut r_u1 = Vec::with_capacity(draw.subsets.len());
    let mut counts = Vec::with_capacity(draw.subsets.len());
    for u in &draw.subsets {
        let lp = loss_pair(&scored, r, u, cfg.metric, c)?;
        delta.push(lp.delta);
        r_u1.push(lp.r_u1);
        counts.push(if cfg.metric == FairnessMetric::Dp {
            dp_counts(ss, r, u)?.to_vec()
        } else {
            eo_min_counts(ss, r, u)?.to_vec()
        });
    }
    Ok(CellRecord {
        n: draw.n,
        z_index: draw.z,
        r_index,
        seed,
        digest: model.digest(),
        train_loss,
        test_loss,
        gap: test_loss - train_loss,
        train_accuracy: accuracy(&train_items.iter().collect::<Vec<_>>()),
        test_accuracy: accuracy(&test_items.iter().collect::<Vec<_>>()),
        delta,
        r_u1,
        counts,
    })
}

/// Aggregates for one `n`. Means and (population) standard deviations run
/// over supersamples of the per-supersample mean over selections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSummary {
    pub n: usize,
    pub cells: usize,
    pub mean_gap: f64,
    pub std_gap: f64,
    /// Mean over supersamples of `|mean gap|`.
    pub mean_abs_gap: f64,
    pub std_abs_gap: f64,
    pub mean_train_loss: f64,
    pub mean_test_loss: f64,
    pub mean_train_accuracy: f64,
    pub mean_test_accuracy: f64,
}

fn group_by_n_z(records: &[CellRecord]) -> BTreeMap<usize, BTreeMap<usize, Vec<&CellRecord>>> {
    let mut out: BTreeMap<usize, BTreeMap<usize, Vec<&CellRecord>>> = BTreeMap::new();
    for r in records {
        out.entry(r.n).or_default().entry(r.z_index).or_default().push(r);
    }
    for zs in out.values_mut() {
        for cells in zs.values_mut() {
            cells.sort_by_key(|c| c.r_index);
        }
    }
    out
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, count) = values.into_iter().fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    sum / count as f64
}

/// Mean over selections of the gap, one value per supersample, for size `n`.
pub fn per_z_gaps(records: &[CellRecord], n: usize) -> Vec<f64> {
    group_by_n_z(records)
        .get(&n)
        .map(|zs| zs.values().map(|cells| mean(cells.iter().map(|c| c.gap))).collect())
        .unwrap_or_default()
}

/// Recomputes the per-`n` summaries from raw records.
pub fn summarize(records: &[CellRecord]) -> Vec<GapSummary> {
    group_by_n_z(records)
        .into_iter()
        .map(|(n, zs)| {
            let per_z: Vec<f64> = zs.values().map(|cells| mean(cells.iter().map(|c| c.gap))).collect();
            let abs: Vec<f64> = per_z.iter().map(|g| g.abs()).collect();
            let (mean_gap, std_gap) = mean_std(&per_z);
            let (mean_abs_gap, std_abs_gap) = mean_std(&abs);
            let all: Vec<&&CellRecord> = zs.values().flatten().collect();
            GapSummary {
                n,
                cells: all.len(),
                mean_gap,
                std_gap,
                mean_abs_gap,
                std_abs_gap,
                mean_train_loss: mean(all.iter().map(|c| c.train_loss)),
                mean_test_loss: mean(all.iter().map(|c| c.test_loss)),
                mean_train_accuracy: mean(all.iter().map(|c| c.train_accuracy)),
                mean_test_accuracy: mean(all.iter().map(|c| c.test_accuracy)),
            }
        })
        .collect()
}

/// Every `(n, z, r)` cell of the grid appears exactly once.
pub fn check_complete(cfg: &ExperimentConfig, records: &[CellRecord]) -> Result<()> {
    let mut seen: BTreeMap<(usize, usize, usize), usize> = BTreeMap::new();
    for r in records {
        *seen.entry((r.n, r.z_index, r.r_index)).or_default() += 1;
    }
    let expected = cfg.n.len() * cfg.m1 * cfg.m2;
    if seen.len() != expected || seen.values().any(|&c| c != 1) || records.len() != expected {
        return Err(Error::Data(format!("expected {expected} distinct cells, got {} records", records.len())));
    }
    for &n in &cfg.n {
        for z in 0..cfg.m1 {
            for r in 0..cfg.m2 {
                if !seen.contains_key(&(n, z, r)) {
                    return Err(Error::Data(format!("cell (n={n}, z={z}, r={r}) is missing")));
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub records: Vec<CellRecord>,
    pub summary: Vec<GapSummary>,
}

/// Trains one model per `(n, z, r)` cell and measures train/test fairness.
pub fn run_gap_experiment(cfg: &ExperimentConfig, data: &Dataset) -> Result<GapReport> {
    let records = run_cells(cfg, data, false)?;
    check_complete(cfg, &records)?;
    let summary = summarize(&records);
    Ok(GapReport { records, summary })
}

/// A bound estimate paired with the gaps it should dominate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub n: usize,
    pub bound: BoundEstimate,
    pub gap: GapSummary,
    /// `|mean gap|` per supersample, aligned with `bound.per_z`.
    pub per_z_abs_gap: Vec<f64>,
}

impl BoundRow {
    pub fn dominates(&self) -> bool {
        self.bound.value > self.gap.mean_abs_gap
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub records: Vec<CellRecord>,
    pub rows: Vec<BoundRow>,
}

impl BoundReport {
    /// Per-supersample `(bound, |gap|)` points across the whole grid.
    pub fn scatter_points(&self) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .flat_map(|row| row.bound.per_z.iter().zip(&row.per_z_abs_gap).map(|(b, g)| (b.value, *g)))
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.rows.iter().all(|r| r.bound.value.is_finite() && r.bound.value >= 0.0)
    }
}

/// Bound estimates from already collected cell records.
pub fn bounds_from_records(cfg: &ExperimentConfig, records: &[CellRecord]) -> Result<Vec<BoundRow>> {
    cfg.validate_bounds()?;
    let summaries = summarize(records);
    let grouped = group_by_n_z(records);
    let mut rows = Vec::new();
    for summary in summaries {
        let zs = &grouped[&summary.n];
        let per_z: Vec<Vec<DeltaDraws>> = zs
            .values()
            .map(|cells| {
                let subsets = cells[0].delta.len();
                (0..subsets)
                    .map(|j| {
                        let coeff = if cfg.metric == FairnessMetric::Dp {
                            let c: Vec<[usize; 4]> =
                                cells.iter().map(|c| [c.counts[j][0], c.counts[j][1], c.counts[j][2], c.counts[j][3]]).collect();
                            coeff_dp(&c)
                        } else {
                            let c: Vec<[usize; 2]> = cells.iter().map(|c| [c.counts[j][0], c.counts[j][1]]).collect();
                            coeff_eo(&c)
                        }?;
                        Ok(DeltaDraws {
                            delta: cells.iter().map(|c| c.delta[j]).collect(),
                            r_u1: cells.iter().map(|c| c.r_u1[j]).collect(),
                            coeff,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let m = cfg.m_at(summary.n);
        let bound = if cfg.metric == FairnessMetric::Dp {
            bound_deltal_dp(&per_z, m, &cfg.mi)?
        } else {
            bound_deltal_eo(&per_z, m, &cfg.mi)?
        };
        let abs_gaps: Vec<f64> = per_z_gaps(records, summary.n).iter().map(|g| g.abs()).collect();
        let per_z_abs_gap = bound.per_z.iter().map(|zb| abs_gaps[zb.z]).collect();
        rows.push(BoundRow { n: summary.n, bound, gap: summary, per_z_abs_gap });
    }
    Ok(rows)
}

/// Runs the gap grid, collecting loss differences per subset, and estimates
/// the loss-difference bound for every `n`.
pub fn run_bound_experiment(cfg: &ExperimentConfig, data: &Dataset) -> Result<BoundReport> {
    cfg.validate_bounds()?;
    let records = run_cells(cfg, data, true)?;
    check_complete(cfg, &records)?;
    let rows = bounds_from_records(cfg, &records)?;
    Ok(BoundReport { records, rows })
}

/// Pearson correlation and least-squares line `y = slope·x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatterStats {
    pub r: f64,
    pub slope: f64,
    pub intercept: f64,
    pub points: usize,
}

pub fn scatter_stats(pairs: &[(f64, f64)]) -> Result<ScatterStats> {
    if pairs.len() < 2 {
        return Err(Error::Degenerate("correlation needs at least two points".into()));
    }
    if pairs.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::Degenerate("non-finite point".into()));
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = pairs.iter().map(|p| (p.1 - my).powi(2)).sum();
    let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("a coordinate is constant; correlation is undefined".into()));
    }
    let slope = sxy / sxx;
    Ok(ScatterStats { r: sxy / (sxx * syy).sqrt(), slope, intercept: my - slope * mx, points: pairs.len() })
}

/// Test fairness of one model trained with and without batch balancing on
/// the same split and initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Record {
    pub n: usize,
    pub method: Method,
    pub repeat: usize,
    pub seed: u64,
    pub unbalanced: f64,
    pub balanced: f64,
    pub unbalanced_accuracy: f64,
    pub balanced_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Summary {
    pub n: usize,
    pub method: Method,
    pub repeats: usize,
    pub mean_unbalanced: f64,
    pub mean_balanced: f64,
    /// Repeats where balancing gave the lower test value.
    pub balanced_wins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Report {
    pub records: Vec<Table1Record>,
    pub summary: Vec<Table1Summary>,
}

/// Plain split: `n` training samples, the rest of the dataset for testing.
fn plain_split(data: &Dataset, n: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok((data.subset(&idx[..n])?, data.subset(&idx[n..])?))
}

fn test_fairness(cfg: &ExperimentConfig, model: &Model, test: &Dataset) -> (f64, f64) {
    let scored = score_model(model, test.iter(), cfg.score_mode);
    (cfg.metric.loss(&scored, test.num_classes()), accuracy(&scored.iter().collect::<Vec<_>>()))
}

/// Compares test fairness with and without batch balancing.
pub fn run_table1(cfg: &ExperimentConfig, data: &Dataset) -> Result<Table1Report> {
    if cfg.repeats == 0 || cfg.table1_methods.is_empty() {
        return Err(Error::Config("need at least one repeat and one method".into()));
    }
    if let Some(&n) = cfg.n.iter().find(|&&n| n == 0 || n >= data.len()) {
        return Err(Error::Config(format!("n = {n} leaves no test data from {} rows", data.len())));
    }
    let jobs: Vec<(usize, Method, usize)> = cfg
        .n
        .iter()
        .flat_map(|&n| cfg.table1_methods.iter().flat_map(move |&m| (0..cfg.repeats).map(move |r| (n, m, r))))
        .collect();
    let records: Vec<Table1Record> = jobs
        .par_iter()
        .map(|&(n, method, repeat)| {
            let seed = derive_seed(cfg.seed, &[n as u64, repeat as u64, TAG_SPLIT]);
            let (train_set, test_set) = plain_split(data, n, seed)?;
            let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[TAG_INIT]));
            let init = Model::init(cfg.arch.clone(), data.feature_dim(), data.num_classes(), &mut init_rng)?;
            let lambda = cfg.lambda.unwrap_or_else(|| method.default_lambda());
            let run = |balanced| -> Result<(f64, f64)> {
                let tcfg = cfg.train_config(method, lambda, balanced, derive_seed(seed, &[TAG_TRAIN]));
                let model = train(&init, &train_set, &tcfg)?;
                Ok(test_fairness(cfg, &model, &test_set))
            };
            let (unbalanced, unbalanced_accuracy) = run(false)?;
            let (balanced, balanced_accuracy) = run(true)?;
            Ok(Table1Record { n, method, repeat, seed, unbalanced, balanced, unbalanced_accuracy, balanced_accuracy })
        })
        .collect::<Result<_>>()?;
    let mut summary = Vec::new();
    for &n in &cfg.n {
        for &method in &cfg.table1_methods {
            let rows: Vec<&Table1Record> = records.iter().filter(|r| r.n == n && r.method == method).collect();
            summary.push(Table1Summary {
                n,
                method,
                repeats: rows.len(),
                mean_unbalanced: mean(rows.iter().map(|r| r.unbalanced)),
                mean_balanced: mean(rows.iter().map(|r| r.balanced)),
                balanced_wins: rows.iter().filter(|r| r.balanced < r.unbalanced).count(),
            });
        }
    }
    Ok(Table1Report { records, summary })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradCheckConfig {
    pub batches: usize,
    pub batch_size: usize,
    pub step: f64,
    /// Parameters probed per batch; all of them when absent.
    pub coords: Option<usize>,
    pub tolerance: f64,
    pub archs: Vec<Arch>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { batches: 100, batch_size: 64, step: 1e-5, coords: Some(64), tolerance: 1e-4, archs: vec![Arch::LogReg, Arch::mlp64()] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckRow {
    pub method: Method,
    pub arch: Arch,
    pub batches: usize,
    pub max_relative_error: f64,
    pub pass: bool,
}

/// Analytic vs central-difference gradients of every method's objective on
/// random minibatches of `data`, each with a freshly initialized model.
pub fn run_grad_check(cfg: &ExperimentConfig, data: &Dataset) -> Result<Vec<GradCheckRow>> {
    let gc = &cfg.grad_check;
    if gc.batches == 0 || gc.batch_size == 0 || data.is_empty() {
        return Err(Error::Config("grad check needs batches, a batch size and data".into()));
    }
    let mut jobs = Vec::new();
    for (a, arch) in gc.archs.iter().enumerate() {
        for method in Method::ALL {
            jobs.push((a, arch.clone(), method));
        }
    }
    jobs.par_iter()
        .map(|(a, arch, method)| {
            let mut worst: f64 = 0.0;
            for b in 0..gc.batches {
                let seed = derive_seed(cfg.seed, &[*a as u64, *method as u64, b as u64]);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let model = Model::init(arch.clone(), data.feature_dim(), data.num_classes(), &mut rng)?;
                let idx = rand::seq::index::sample(&mut rng, data.len(), gc.batch_size.min(data.len())).into_vec();
                let batch = Batch::from_indices(data, &idx);
                let coords: Vec<usize> = match gc.coords {
                    Some(c) if c < model.num_params() => {
                        let mut v = rand::seq::index::sample(&mut rng, model.num_params(), c).into_vec();
                        v.sort_unstable();
                        v
                    }
                    _ => (0..model.num_params()).collect(),
                };
                let tcfg = TrainConfig::for_method(*method);
                worst = worst.max(grad_check_coords(&model, &batch, &tcfg, gc.step, &coords)?);
            }
            Ok(GradCheckRow {
                method: *method,
                arch: arch.clone(),
                batches: gc.batches,
                max_relative_error: worst,
                pass: worst < gc.tolerance,
            })
        })
        .collect()
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// One row of plot data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub n: usize,
    pub mean_gap: f64,
    pub std_gap: f64,
    pub mean_bound: Option<f64>,
    pub std_bound: Option<f64>,
}

pub fn write_plot_csv(path: impl AsRef<Path>, rows: &[PlotRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn gap_plot_rows(summary: &[GapSummary]) -> Vec<PlotRow> {
    summary
        .iter()
        .map(|s| PlotRow { n: s.n, mean_gap: s.mean_abs_gap, std_gap: s.std_abs_gap, mean_bound: None, std_bound: None })
        .collect()
}

pub fn bound_plot_rows(rows: &[BoundRow]) -> Vec<PlotRow> {
    rows.iter()
        .map(|r| PlotRow {
            n: r.n,
            mean_gap: r.gap.mean_abs_gap,
            std_gap: r.gap.std_abs_gap,
            mean_bound: Some(r.bound.value),
            std_bound: Some(r.bound.std),
        })
        .collect()
}

/// Writes cell records, summaries and plot data for a gap run into `dir`.
pub fn emit_gaps(dir: impl AsRef<Path>, report: &GapReport) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_jsonl(dir.join("cells.jsonl"), &report.records)?;
    write_jsonl(dir.join("summary.jsonl"), &report.summary)?;
    write_plot_csv(dir.join("gaps.csv"), &gap_plot_rows(&report.summary))
}

/// Writes cell records, bound rows and plot data for a bound run into `dir`.
pub fn emit_bounds(dir: impl AsRef<Path>, report: &BoundReport) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_jsonl(dir.join("cells.jsonl"), &report.records)?;
    write_jsonl(dir.join("bounds.jsonl"), &report.rows)?;
    write_plot_csv(dir.join("bounds.csv"), &bound_plot_rows(&report.rows))
}

pub fn emit_table1(dir: impl AsRef<Path>, report: &Table1Report) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_jsonl(dir.join("table1_runs.jsonl"), &report.records)?;
    write_jsonl(dir.join("table1.jsonl"), &report.summary)?;
    let mut w = csv::Writer::from_path(dir.join("table1.csv"))?;
    for s in &report.summary {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

/// A small synthetic dataset whose label depends on the features and whose
/// groups are imbalanced, for examples and tests.
pub fn synthetic_dataset(rows: usize, dim: usize, seed: u64) -> Result<Dataset> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..rows)
        .map(|_| {
            let t = u8::from(rng.random_bool(0.7));
            let x: Vec<f64> = (0..dim).map(|j| rng.random::<f64>() * 2.0 - 1.0 + if j == 0 { 0.5 * f64::from(t) } else { 0.0 }).collect();
            let logit = 2.0 * x[0] - x.get(1).copied().unwrap_or(0.0);
            let y = usize::from(rng.random::<f64>() < 1.0 / (1.0 + (-logit).exp()));
            Sample::new(x, t, y)
        })
        .collect();
    Dataset::new(samples, dim, 2)
}
