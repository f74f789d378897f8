//! Samples, datasets, supersamples and group bookkeeping.
//!
//! A [`SuperSample`] holds `n` pairs `(z⁰ᵢ, z¹ᵢ)`; a [`SelectionVector`] `r`
//! picks `z^{rᵢ}ᵢ` for training and leaves the other element of each pair as
//! the ghost (test) sample.

mod csv;

use std::ops::Add;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use self::csv::{load_csv, load_csv_reader, ColumnRole, Filter, FilterOp, Schema};

/// Variance below which a column is treated as constant during standardization.
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// One observation: standardized features, binary sensitive attribute and label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub t: u8,
    pub y: usize,
}

impl Sample {
    pub fn new(x: Vec<f64>, t: u8, y: usize) -> Self {
        Self { x, t, y }
    }
}

/// Ordered, index-addressable collection of samples sharing one feature dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    samples: Vec<Sample>,
    feature_dim: usize,
    num_classes: usize,
}

impl Dataset {
    /// Builds a dataset, checking `t ∈ {0,1}`, `y < num_classes` and a constant
    /// feature dimension. An empty sample list is allowed; `feature_dim` is
    /// then taken as given.
    pub fn new(samples: Vec<Sample>, feature_dim: usize, num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Data(format!("need at least 2 classes, got {num_classes}")));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.x.len() != feature_dim {
                return Err(Error::Data(format!(
                    "sample {i} has {} features, expected {feature_dim}",
                    s.x.len()
                )));
            }
            if s.t > 1 {
                return Err(Error::Data(format!("sample {i} has sensitive value {}", s.t)));
            }
            if s.y >= num_classes {
                return Err(Error::Data(format!(
                    "sample {i} has label {} but num_classes = {num_classes}",
                    s.y
                )));
            }
        }
        Ok(Self { samples, feature_dim, num_classes })
    }

    /// Binary-label dataset whose feature dimension is read off the first sample.
    pub fn from_samples(samples: Vec<Sample>) -> Result<Self> {
        let dim = samples.first().map_or(0, |s| s.x.len());
        Self::new(samples, dim, 2)
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, i: usize) -> Option<&Sample> {
        self.samples.get(i)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Sample> {
        self.samples.iter()
    }

    /// Dataset made of the given indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut out = Vec::with_capacity(indices.len());
        for &i in indices {
            let s = self
                .samples
                .get(i)
                .ok_or_else(|| Error::Size(format!("index {i} out of range for {} samples", self.len())))?;
            out.push(s.clone());
        }
        Ok(Self { samples: out, feature_dim: self.feature_dim, num_classes: self.num_classes })
    }

    /// Concatenation of two datasets with matching shapes.
    pub fn concat(&self, other: &Dataset) -> Result<Self> {
        if self.feature_dim != other.feature_dim || self.num_classes != other.num_classes {
            return Err(Error::Data("cannot concatenate datasets of different shapes".into()));
        }
        let mut samples = self.samples.clone();
        samples.extend(other.samples.iter().cloned());
        Ok(Self { samples, feature_dim: self.feature_dim, num_classes: self.num_classes })
    }

    pub fn sensitive(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.y).collect()
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a Sample;
    type IntoIter = std::slice::Iter<'a, Sample>;

    fn into_iter(self) -> Self::IntoIter {
        self.samples.iter()
    }
}

/// `n` ordered pairs of samples drawn without replacement from one source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperSample {
    pairs: Vec<[Sample; 2]>,
    /// Source positions of each pair element.
    source: Vec<[usize; 2]>,
    feature_dim: usize,
    num_classes: usize,
}

impl SuperSample {
    /// Pairs built directly, e.g. for synthetic instances. Source indices are
    /// assigned as `(2i, 2i+1)`.
    pub fn from_pairs(pairs: Vec<[Sample; 2]>, feature_dim: usize, num_classes: usize) -> Result<Self> {
        let flat: Vec<Sample> = pairs.iter().flat_map(|p| p.iter().cloned()).collect();
        Dataset::new(flat, feature_dim, num_classes)?;
        let source = (0..pairs.len()).map(|i| [2 * i, 2 * i + 1]).collect();
        Ok(Self { pairs, source, feature_dim, num_classes })
    }

    pub fn n(&self) -> usize {
        self.pairs.len()
    }

    pub fn pairs(&self) -> &[[Sample; 2]] {
        &self.pairs
    }

    pub fn pair(&self, i: usize) -> &[Sample; 2] {
        &self.pairs[i]
    }

    pub fn source_indices(&self) -> &[[usize; 2]] {
        &self.source
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// All `2n` samples, pair by pair.
    pub fn to_dataset(&self) -> Dataset {
        let samples = self.pairs.iter().flat_map(|p| p.iter().cloned()).collect();
        Dataset { samples, feature_dim: self.feature_dim, num_classes: self.num_classes }
    }

    /// Samples `z^{bᵢ}ᵢ` for `i` in `indices`, where `bits[j]` is the mask bit
    /// for `indices[j]`.
    pub fn select(&self, indices: &[usize], bits: &[u8]) -> Result<Dataset> {
        if indices.len() != bits.len() {
            return Err(Error::Size(format!(
                "{} indices but {} mask bits",
                indices.len(),
                bits.len()
            )));
        }
        let mut samples = Vec::with_capacity(indices.len());
        for (&i, &b) in indices.iter().zip(bits) {
            let pair = self
                .pairs
                .get(i)
                .ok_or_else(|| Error::Size(format!("pair index {i} out of range for n = {}", self.n())))?;
            samples.push(pair[usize::from(b & 1)].clone());
        }
        Ok(Dataset { samples, feature_dim: self.feature_dim, num_classes: self.num_classes })
    }
}

/// Draws `2n` samples uniformly without replacement and pairs them positionally
/// over the shuffled order: pair `i` is `(draw[2i], draw[2i+1])`.
pub fn draw_supersample<R: Rng + ?Sized>(d: &Dataset, n: usize, rng: &mut R) -> Result<SuperSample> {
    if 2 * n > d.len() {
        return Err(Error::Size(format!("supersample of n = {n} needs {} samples, dataset has {}", 2 * n, d.len())));
    }
    let drawn = index::sample(rng, d.len(), 2 * n).into_vec();
    let mut pairs = Vec::with_capacity(n);
    let mut source = Vec::with_capacity(n);
    for chunk in drawn.chunks_exact(2) {
        pairs.push([d.samples[chunk[0]].clone(), d.samples[chunk[1]].clone()]);
        source.push([chunk[0], chunk[1]]);
    }
    Ok(SuperSample { pairs, source, feature_dim: d.feature_dim, num_classes: d.num_classes })
}

/// The Bernoulli mask `r ∈ {0,1}ⁿ` of the supersample construction.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SelectionVector {
    bits: Vec<u8>,
}

impl SelectionVector {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::Argument(format!("selection bit {b} is not in {{0,1}}")));
        }
        Ok(Self { bits })
    }

    pub fn zeros(n: usize) -> Self {
        Self { bits: vec![0; n] }
    }

    /// `n` independent fair coin flips.
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        Self { bits: (0..n).map(|_| u8::from(rng.random::<bool>())).collect() }
    }

    /// The `i`-th vector in lexicographic enumeration of `{0,1}ⁿ`, bit 0 most
    /// significant.
    pub fn from_index(n: usize, code: u64) -> Self {
        let bits = (0..n).map(|i| ((code >> (n - 1 - i)) & 1) as u8).collect();
        Self { bits }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn complement(&self) -> Self {
        Self { bits: self.bits.iter().map(|b| 1 - b).collect() }
    }
}

/// Splits a supersample into `(train, test)`: train takes `z^{rᵢ}ᵢ`, test the
/// other element of each pair; both keep pair order.
pub fn split(ss: &SuperSample, r: &SelectionVector) -> Result<(Dataset, Dataset)> {
    if r.len() != ss.n() {
        return Err(Error::Size(format!("selection vector has length {}, supersample has n = {}", r.len(), ss.n())));
    }
    let idx: Vec<usize> = (0..ss.n()).collect();
    let train = ss.select(&idx, r.bits())?;
    let test = ss.select(&idx, r.complement().bits())?;
    Ok((train, test))
}

/// Per-group sample counts: `n_t` for demographic parity and `n_{t,y}` for
/// equalized odds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupCounts {
    pub dp: [usize; 2],
    /// Indexed `[y][t]`.
    pub eo: Vec<[usize; 2]>,
}

impl GroupCounts {
    pub fn zeros(num_classes: usize) -> Self {
        Self { dp: [0, 0], eo: vec![[0, 0]; num_classes] }
    }

    pub fn n_t(&self, t: u8) -> usize {
        self.dp[usize::from(t)]
    }

    pub fn n_ty(&self, t: u8, y: usize) -> usize {
        self.eo.get(y).map_or(0, |row| row[usize::from(t)])
    }

    pub fn total(&self) -> usize {
        self.dp[0] + self.dp[1]
    }

    /// `min_{t,y} n_{t,y}` over every `(t, y)` cell, empty cells included.
    pub fn min_subgroup(&self) -> usize {
        self.eo.iter().flat_map(|row| row.iter().copied()).min().unwrap_or(0)
    }

    /// Accumulates one sample.
    pub fn record(&mut self, t: u8, y: usize) {
        let t = usize::from(t);
        self.dp[t] += 1;
        if y >= self.eo.len() {
            self.eo.resize(y + 1, [0, 0]);
        }
        self.eo[y][t] += 1;
    }
}

impl Add for GroupCounts {
    type Output = GroupCounts;

    fn add(mut self, rhs: GroupCounts) -> GroupCounts {
        if rhs.eo.len() > self.eo.len() {
            self.eo.resize(rhs.eo.len(), [0, 0]);
        }
        self.dp[0] += rhs.dp[0];
        self.dp[1] += rhs.dp[1];
        for (row, other) in self.eo.iter_mut().zip(rhs.eo) {
            row[0] += other[0];
            row[1] += other[1];
        }
        self
    }
}

pub fn group_counts(d: &Dataset) -> GroupCounts {
    counts_of(d.iter().map(|s| (s.t, s.y)), d.num_classes())
}

/// Counts over arbitrary `(t, y)` pairs.
pub fn counts_of(items: impl IntoIterator<Item = (u8, usize)>, num_classes: usize) -> GroupCounts {
    let mut counts = GroupCounts::zeros(num_classes);
    for (t, y) in items {
        counts.record(t, y);
    }
    counts
}

/// `ℍ(a₁,…,a_k) = 1 / Σᵢ 1/(aᵢ + 2)`.
pub fn shifted_harmonic_mean(counts: &[usize]) -> Result<f64> {
    if counts.is_empty() {
        return Err(Error::Argument("shifted harmonic mean of an empty list".into()));
    }
    Ok(1.0 / inverse_shifted_harmonic(counts))
}

/// `1/ℍ(a₁,…,a_k) = Σᵢ 1/(aᵢ + 2)`; the bounded-difference constant of the
/// shifted group-mean losses. Zero for an empty list.
pub fn inverse_shifted_harmonic(counts: &[usize]) -> f64 {
    counts.iter().map(|&a| 1.0 / (a as f64 + 2.0)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn toy(n: usize) -> Dataset {
        let samples = (0..n).map(|i| Sample::new(vec![i as f64], (i % 2) as u8, (i / 2) % 2)).collect();
        Dataset::from_samples(samples).unwrap()
    }

    #[test]
    fn harmonic_examples() {
        assert_eq!(shifted_harmonic_mean(&[2, 2]).unwrap(), 2.0);
        assert_eq!(shifted_harmonic_mean(&[0, 0]).unwrap(), 1.0);
        assert!((shifted_harmonic_mean(&[3, 5]).unwrap() - 35.0 / 12.0).abs() < 1e-12);
        assert!(shifted_harmonic_mean(&[]).is_err());
    }

    #[test]
    fn harmonic_of_equal_arguments() {
        for a in 0..20usize {
            for k in 1..6 {
                let h = shifted_harmonic_mean(&vec![a; k]).unwrap();
                assert!((h - (a as f64 + 2.0) / k as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn supersample_of_two_is_the_only_pairing() {
        let d = toy(2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ss = draw_supersample(&d, 1, &mut rng).unwrap();
        let mut src = ss.source_indices()[0];
        src.sort();
        assert_eq!(src, [0, 1]);
    }

    #[test]
    fn supersample_is_seeded() {
        let d = toy(50);
        let a = draw_supersample(&d, 10, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = draw_supersample(&d, 10, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn supersample_indices_are_distinct() {
        let d = toy(5000);
        let ss = draw_supersample(&d, 100, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let all: HashSet<usize> = ss.source_indices().iter().flat_map(|p| p.iter().copied()).collect();
        assert_eq!(all.len(), 200);
    }

    #[test]
    fn supersample_too_large() {
        let d = toy(9);
        assert!(matches!(draw_supersample(&d, 5, &mut ChaCha8Rng::seed_from_u64(0)), Err(Error::Size(_))));
    }

    #[test]
    fn split_all_zeros_takes_first_elements() {
        let d = toy(20);
        let ss = draw_supersample(&d, 10, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let (train, test) = split(&ss, &SelectionVector::zeros(10)).unwrap();
        for i in 0..10 {
            assert_eq!(train.samples()[i], ss.pair(i)[0]);
            assert_eq!(test.samples()[i], ss.pair(i)[1]);
        }
        let (train2, test2) = split(&ss, &SelectionVector::zeros(10).complement()).unwrap();
        assert_eq!(train2, test);
        assert_eq!(test2, train);
    }

    #[test]
    fn split_length_mismatch() {
        let d = toy(20);
        let ss = draw_supersample(&d, 10, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(matches!(split(&ss, &SelectionVector::zeros(9)), Err(Error::Size(_))));
    }

    #[test]
    fn counts_examples() {
        let empty = Dataset::from_samples(vec![]).unwrap();
        let c = group_counts(&empty);
        assert_eq!(c.dp, [0, 0]);
        assert_eq!(c.min_subgroup(), 0);

        let d = Dataset::from_samples(vec![
            Sample::new(vec![0.0], 0, 1),
            Sample::new(vec![0.0], 1, 0),
            Sample::new(vec![0.0], 1, 1),
        ])
        .unwrap();
        let c = group_counts(&d);
        assert_eq!(c.dp, [1, 2]);
        assert_eq!(c.n_ty(1, 1), 1);
        assert_eq!(c.n_ty(0, 0), 0);
    }

    #[test]
    fn selection_index_enumeration() {
        let r = SelectionVector::from_index(3, 0b101);
        assert_eq!(r.bits(), &[1, 0, 1]);
        assert!(SelectionVector::new(vec![0, 2]).is_err());
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(vec![Sample::new(vec![1.0], 2, 0)], 1, 2).is_err());
        assert!(Dataset::new(vec![Sample::new(vec![1.0], 0, 2)], 1, 2).is_err());
        assert!(Dataset::new(vec![Sample::new(vec![1.0, 2.0], 0, 0)], 1, 2).is_err());
    }
}
