//! Group-fairness empirical risks and the fairness generalization gap.
//!
//! Every loss normalizes a group sum by `count + 2`, so empty groups are valid
//! inputs and contribute zero.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::trainer::Model;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FairnessMetric {
    /// Demographic parity.
    Dp,
    /// Equalized odds (sum over both labels).
    Eo,
    /// Equal opportunity (positive label only).
    Eopp,
    /// Total-variation equalized odds over predicted classes, summed over labels.
    TvMulticlass,
}

impl FairnessMetric {
    pub fn name(self) -> &'static str {
        match self {
            Self::Dp => "dp",
            Self::Eo => "eo",
            Self::Eopp => "eopp",
            Self::TvMulticlass => "tv-multiclass",
        }
    }

    /// Bounded-difference family: DP uses group counts, the others the
    /// smallest `(t, y)` subgroup.
    pub fn is_separation(self) -> bool {
        !matches!(self, Self::Dp)
    }

    /// Loss of already-scored samples.
    pub fn loss(self, items: &[Scored], num_classes: usize) -> f64 {
        match self {
            Self::Dp => group_gap(items.iter().map(|s| (s.t, s.score))),
            Self::Eo => (0..2).map(|y| label_term(items, y)).sum(),
            Self::Eopp => label_term(items, 1),
            Self::TvMulticlass => tv_aggregate_scored(items, num_classes),
        }
    }
}

impl std::str::FromStr for FairnessMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dp" => Ok(Self::Dp),
            "eo" | "eodd" => Ok(Self::Eo),
            "eopp" => Ok(Self::Eopp),
            "tv" | "tv-multiclass" => Ok(Self::TvMulticlass),
            other => Err(Error::Argument(format!("unknown fairness metric '{other}'"))),
        }
    }
}

/// Whether losses see the raw score or a thresholded 0/1 decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreMode {
    #[default]
    Soft,
    Hard { threshold: f64 },
}

impl ScoreMode {
    pub fn apply(self, score: f64) -> f64 {
        match self {
            Self::Soft => score,
            Self::Hard { threshold } => f64::from(u8::from(score >= threshold)),
        }
    }
}

/// A sample reduced to what the fairness losses read.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    /// Prediction in `[0, 1]`.
    pub score: f64,
    /// Predicted class (used by the total-variation loss).
    pub class: usize,
    pub t: u8,
    pub y: usize,
}

/// Scores every sample of `d` with a binary predictor. The predicted class is
/// `1` iff the score exceeds `0.5` (ties go to the lower class).
pub fn score_dataset(predict: impl Fn(&[f64]) -> f64, d: &Dataset, mode: ScoreMode) -> Vec<Scored> {
    d.iter()
        .map(|s| {
            let p = predict(&s.x);
            Scored { score: mode.apply(p), class: usize::from(p > 0.5), t: s.t, y: s.y }
        })
        .collect()
}

/// Scores samples with a trained model. The class is the model's argmax, so
/// binary models predict `1` iff the score exceeds `0.5`.
pub fn score_model<'a>(m: &Model, samples: impl IntoIterator<Item = &'a Sample>, mode: ScoreMode) -> Vec<Scored> {
    let samples: Vec<&Sample> = samples.into_iter().collect();
    if m.is_binary() {
        let xs: Vec<&[f64]> = samples.iter().map(|s| s.x.as_slice()).collect();
        let p = m.scores(&xs);
        samples
            .iter()
            .zip(p)
            .map(|(s, p)| Scored { score: mode.apply(p), class: usize::from(p > 0.5), t: s.t, y: s.y })
            .collect()
    } else {
        samples
            .iter()
            .map(|s| {
                let probs = m.predict_proba(&s.x).unwrap_or_else(|_| vec![0.0; m.num_classes()]);
                let class = crate::trainer::argmax(&probs);
                Scored { score: mode.apply(probs[1]), class, t: s.t, y: s.y }
            })
            .collect()
    }
}

/// `| Σ_{t=0} f / (n₀+2) − Σ_{t=1} f / (n₁+2) |`.
fn group_gap(items: impl Iterator<Item = (u8, f64)>) -> f64 {
    let mut sum = [0.0f64; 2];
    let mut count = [0usize; 2];
    for (t, f) in items {
        sum[usize::from(t)] += f;
        count[usize::from(t)] += 1;
    }
    (sum[0] / (count[0] as f64 + 2.0) - sum[1] / (count[1] as f64 + 2.0)).abs()
}

fn label_term(items: &[Scored], y: usize) -> f64 {
    group_gap(items.iter().filter(|s| s.y == y).map(|s| (s.t, s.score)))
}

/// Demographic-parity risk of raw scores.
pub fn dp_loss_scores(scores: &[f64], t: &[u8]) -> f64 {
    group_gap(t.iter().copied().zip(scores.iter().copied()))
}

pub fn dp_loss(predict: impl Fn(&[f64]) -> f64, d: &Dataset) -> f64 {
    group_gap(d.iter().map(|s| (s.t, predict(&s.x))))
}

/// The `Y = y` term of the equalized-odds risk.
pub fn eo_label_term(predict: impl Fn(&[f64]) -> f64, d: &Dataset, y: usize) -> f64 {
    group_gap(d.iter().filter(|s| s.y == y).map(|s| (s.t, predict(&s.x))))
}

pub fn eo_loss(predict: impl Fn(&[f64]) -> f64, d: &Dataset) -> f64 {
    eo_label_term(&predict, d, 0) + eo_label_term(&predict, d, 1)
}

pub fn eopp_loss(predict: impl Fn(&[f64]) -> f64, d: &Dataset) -> f64 {
    eo_label_term(predict, d, 1)
}

/// `½ Σ_c | n_{0,y,c}/(n_{0,y}+2) − n_{1,y,c}/(n_{1,y}+2) |` for one true label.
pub fn tv_multiclass_loss(predict_class: impl Fn(&[f64]) -> usize, d: &Dataset, y: usize) -> f64 {
    let items: Vec<Scored> = d
        .iter()
        .map(|s| Scored { score: 0.0, class: predict_class(&s.x), t: s.t, y: s.y })
        .collect();
    tv_label_term(&items, y, d.num_classes())
}

/// Sum of [`tv_multiclass_loss`] over all labels; lies in `[0, C]`.
pub fn tv_aggregate(predict_class: impl Fn(&[f64]) -> usize, d: &Dataset) -> f64 {
    let items: Vec<Scored> = d
        .iter()
        .map(|s| Scored { score: 0.0, class: predict_class(&s.x), t: s.t, y: s.y })
        .collect();
    tv_aggregate_scored(&items, d.num_classes())
}

fn tv_label_term(items: &[Scored], y: usize, num_classes: usize) -> f64 {
    let classes = num_classes.max(items.iter().map(|s| s.class + 1).max().unwrap_or(0));
    let mut hist = vec![[0usize; 2]; classes];
    let mut n = [0usize; 2];
    for s in items.iter().filter(|s| s.y == y) {
        hist[s.class][usize::from(s.t)] += 1;
        n[usize::from(s.t)] += 1;
    }
    let d0 = n[0] as f64 + 2.0;
    let d1 = n[1] as f64 + 2.0;
    0.5 * hist.iter().map(|h| (h[0] as f64 / d0 - h[1] as f64 / d1).abs()).sum::<f64>()
}

fn tv_aggregate_scored(items: &[Scored], num_classes: usize) -> f64 {
    (0..num_classes).map(|y| tv_label_term(items, y, num_classes)).sum()
}

/// Monte Carlo estimate of the population fairness risk: the mean of the
/// empirical risk over `reps` fresh size-`n` draws (without replacement) from
/// `heldout`. This is an expectation over datasets of size `n`, not the risk
/// of the whole held-out set.
pub fn pop_risk_estimate<R: Rng + ?Sized>(
    predict: impl Fn(&[f64]) -> f64,
    metric: FairnessMetric,
    heldout: &Dataset,
    n: usize,
    reps: usize,
    rng: &mut R,
) -> Result<f64> {
    if n > heldout.len() {
        return Err(Error::Size(format!("cannot draw {n} samples from a held-out set of {}", heldout.len())));
    }
    if reps == 0 {
        return Err(Error::Argument("reps must be at least 1".into()));
    }
    let scored = score_dataset(predict, heldout, ScoreMode::Soft);
    let mut total = 0.0;
    for _ in 0..reps {
        let draw: Vec<Scored> = index::sample(rng, heldout.len(), n).into_iter().map(|i| scored[i]).collect();
        total += metric.loss(&draw, heldout.num_classes());
    }
    Ok(total / reps as f64)
}

/// Train and test fairness risks of one model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapRecord {
    pub train_loss: f64,
    pub test_loss: f64,
    /// `test_loss − train_loss`.
    pub gap: f64,
}

impl GapRecord {
    pub fn new(train_loss: f64, test_loss: f64) -> Self {
        Self { train_loss, test_loss, gap: test_loss - train_loss }
    }

    /// `train − test`, the supersample-definition orientation.
    pub fn train_minus_test(&self) -> f64 {
        -self.gap
    }
}

pub fn gap(
    predict: impl Fn(&[f64]) -> f64,
    metric: FairnessMetric,
    train: &Dataset,
    test: &Dataset,
    mode: ScoreMode,
) -> GapRecord {
    let tr = score_dataset(&predict, train, mode);
    let te = score_dataset(&predict, test, mode);
    GapRecord::new(metric.loss(&tr, train.num_classes()), metric.loss(&te, test.num_classes()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Sample;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Dataset whose single feature *is* the prediction.
    fn scored(items: &[(u8, usize, f64)]) -> Dataset {
        Dataset::from_samples(items.iter().map(|&(t, y, f)| Sample::new(vec![f], t, y)).collect()).unwrap()
    }

    fn ident(x: &[f64]) -> f64 {
        x[0]
    }

    #[test]
    fn dp_examples() {
        assert_eq!(dp_loss(ident, &scored(&[(0, 0, 0.5), (1, 0, 0.5)])), 0.0);
        assert!((dp_loss(ident, &scored(&[(0, 0, 1.0)])) - 1.0 / 3.0).abs() < 1e-15);
        let d = scored(&[(0, 0, 1.0), (0, 0, 1.0), (1, 0, 0.0)]);
        assert!((dp_loss(ident, &d) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn eo_examples() {
        let d = scored(&[(0, 0, 0.9), (1, 0, 0.2), (0, 0, 0.4)]);
        assert_eq!(eo_loss(ident, &d), dp_loss(ident, &d));
        let sym = scored(&[(0, 0, 0.3), (1, 0, 0.3), (0, 1, 0.8), (1, 1, 0.8)]);
        assert_eq!(eo_loss(ident, &sym), 0.0);

        // y=0: group0 {0.9, 0.1}, group1 {0.5}; y=1: group0 {0.7}, group1 {0.2, 0.6}
        let d = scored(&[(0, 0, 0.9), (0, 0, 0.1), (1, 0, 0.5), (0, 1, 0.7), (1, 1, 0.2), (1, 1, 0.6)]);
        let y0 = (1.0f64 / 4.0 - 0.5 / 3.0).abs();
        let y1 = (0.7f64 / 3.0 - 0.8 / 4.0).abs();
        assert!((eo_loss(ident, &d) - (y0 + y1)).abs() < 1e-15);
        assert!((eopp_loss(ident, &d) - y1).abs() < 1e-15);
        assert!((eo_loss(ident, &d) - eo_label_term(ident, &d, 0) - eopp_loss(ident, &d)).abs() < 1e-15);
    }

    #[test]
    fn eopp_edge_cases() {
        let no_pos = scored(&[(0, 0, 0.9), (1, 0, 0.1)]);
        assert_eq!(eopp_loss(ident, &no_pos), 0.0);
        let all_pos = scored(&[(0, 1, 0.9), (1, 1, 0.1), (1, 1, 0.4)]);
        assert_eq!(eopp_loss(ident, &all_pos), dp_loss(ident, &all_pos));
    }

    fn class_data(items: &[(u8, usize, usize)], c: usize) -> Dataset {
        let samples = items.iter().map(|&(t, y, k)| Sample::new(vec![k as f64], t, y)).collect();
        Dataset::new(samples, 1, c).unwrap()
    }

    fn class_of(x: &[f64]) -> usize {
        x[0] as usize
    }

    #[test]
    fn tv_examples() {
        let same = class_data(&[(0, 0, 1), (1, 0, 1), (0, 0, 2), (1, 0, 2)], 4);
        assert_eq!(tv_multiclass_loss(class_of, &same, 0), 0.0);
        assert_eq!(tv_aggregate(class_of, &same), 0.0);
        assert_eq!(tv_multiclass_loss(class_of, &same, 3), 0.0);

        // y = 2; group 0 predicts {0, 1}, group 1 predicts {2, 3, 3}: disjoint supports.
        let d = class_data(&[(0, 2, 0), (0, 2, 1), (1, 2, 2), (1, 2, 3), (1, 2, 3)], 4);
        let want = 0.5 * (1.0 / 4.0 + 1.0 / 4.0 + 1.0 / 5.0 + 2.0 / 5.0);
        assert!((tv_multiclass_loss(class_of, &d, 2) - want).abs() < 1e-15);
        assert!((tv_aggregate(class_of, &d) - want).abs() < 1e-15);
    }

    #[test]
    fn pop_risk_of_constant_predictor() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let samples: Vec<Sample> = (0..400).map(|i| Sample::new(vec![0.0], (i % 2) as u8, 0)).collect();
        let d = Dataset::from_samples(samples).unwrap();
        let c = 0.7;
        let single = pop_risk_estimate(|_| c, FairnessMetric::Dp, &d, 40, 1, &mut rng).unwrap();
        // one draw: c · |n0/(n0+2) − n1/(n1+2)| for the realized counts
        assert!(single <= c * (40.0 / 42.0 - 0.0));
        let many = pop_risk_estimate(|_| c, FairnessMetric::Dp, &d, 40, 500, &mut rng).unwrap();
        assert!(many < 0.05);
        assert!(pop_risk_estimate(|_| c, FairnessMetric::Dp, &d, 401, 1, &mut rng).is_err());
    }

    #[test]
    fn gap_sign_and_identity() {
        let d = scored(&[(0, 0, 0.9), (1, 0, 0.1), (0, 1, 0.6)]);
        let g = gap(ident, FairnessMetric::Dp, &d, &d, ScoreMode::Soft);
        assert_eq!(g.gap, 0.0);
        let train = scored(&[(0, 0, 0.5), (1, 0, 0.5)]);
        let g = gap(ident, FairnessMetric::Dp, &train, &d, ScoreMode::Soft);
        assert!(g.gap > 0.0);
        assert_eq!(g.train_minus_test(), -g.gap);
    }

    #[test]
    fn hard_threshold_mode() {
        let d = scored(&[(0, 0, 0.9), (1, 0, 0.2)]);
        let g = gap(ident, FairnessMetric::Dp, &d, &d, ScoreMode::Hard { threshold: 0.5 });
        assert!((g.train_loss - 1.0 / 3.0).abs() < 1e-15);
    }
}
