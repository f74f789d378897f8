//! Fairness-regularized minibatch training.

mod model;
mod objective;
pub mod penalty;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

pub use model::{Arch, Model};
pub(crate) use model::argmax;
pub use objective::{grad_check, grad_check_coords, objective, objective_with, penalty_for, Batch, PenaltyContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Erm,
    DiffDp,
    DiffEopp,
    DiffEodd,
    Hsic,
    PRemover,
}

impl Method {
    pub const ALL: [Method; 6] = [Self::Erm, Self::DiffDp, Self::DiffEopp, Self::DiffEodd, Self::Hsic, Self::PRemover];

    pub fn name(self) -> &'static str {
        match self {
            Self::Erm => "erm",
            Self::DiffDp => "diffdp",
            Self::DiffEopp => "diffeopp",
            Self::DiffEodd => "diffeodd",
            Self::Hsic => "hsic",
            Self::PRemover => "premover",
        }
    }

    pub fn default_lambda(self) -> f64 {
        match self {
            Self::Erm => 0.0,
            Self::DiffDp | Self::DiffEopp | Self::DiffEodd => 2.0,
            Self::Hsic => 400.0,
            Self::PRemover => 0.4,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace(['-', '_'], "");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == key)
            .ok_or_else(|| Error::Argument(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Self::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub method: Method,
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub balanced: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Erm,
            lambda: 0.0,
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-3,
            optimizer: Optimizer::default(),
            balanced: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Defaults with the method's usual penalty weight.
    pub fn for_method(method: Method) -> Self {
        Self { method, lambda: method.default_lambda(), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be finite and non-negative, got {}", self.lambda)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        Ok(())
    }
}

/// One epoch of minibatch index lists.
///
/// Unbalanced: a uniform shuffle cut into chunks of `batch_size`.
/// Balanced: `⌈N / b⌉` batches, each with `⌈b/2⌉` indices from group `t = 0`
/// and `⌊b/2⌋` from `t = 1`, drawn without replacement from a shuffled pool
/// that is reshuffled whenever it runs out.
pub fn batch_iter<R: Rng + ?Sized>(d: &Dataset, cfg: &TrainConfig, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let n = d.len();
    if !cfg.balanced {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        return Ok(order.chunks(cfg.batch_size).map(<[usize]>::to_vec).collect());
    }
    let mut pools: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, s) in d.iter().enumerate() {
        pools[usize::from(s.t)].push(i);
    }
    if pools.iter().any(Vec::is_empty) {
        return Err(Error::Config("balanced batches need both sensitive groups to be non-empty".into()));
    }
    let want = [cfg.batch_size.div_ceil(2), cfg.batch_size / 2];
    let mut cursor = [0usize; 2];
    for p in &mut pools {
        p.shuffle(rng);
    }
    let mut out = Vec::with_capacity(n.div_ceil(cfg.batch_size));
    for _ in 0..n.div_ceil(cfg.batch_size) {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for g in 0..2 {
            for _ in 0..want[g] {
                if cursor[g] == pools[g].len() {
                    pools[g].shuffle(rng);
                    cursor[g] = 0;
                }
                batch.push(pools[g][cursor[g]]);
                cursor[g] += 1;
            }
        }
        out.push(batch);
    }
    Ok(out)
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

/// Runs `cfg.epochs` epochs of minibatch updates from `init`.
pub fn train(init: &Model, d: &Dataset, cfg: &TrainConfig) -> Result<Model> {
    cfg.validate()?;
    if d.feature_dim() != init.input_dim() {
        return Err(Error::Size(format!("dataset has {} features, model expects {}", d.feature_dim(), init.input_dim())));
    }
    let mut model = init.clone();
    if cfg.epochs == 0 {
        return Ok(model);
    }
    if d.is_empty() {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = model.num_params();
    let mut adam = AdamState { m: vec![0.0; k], v: vec![0.0; k], step: 0 };
    for _ in 0..cfg.epochs {
        for idx in batch_iter(d, cfg, &mut rng)? {
            let batch = Batch::from_indices(d, &idx);
            let (_, grad) = objective(&model, &batch, cfg)?;
            step(&mut model, &grad, cfg, &mut adam);
        }
    }
    Ok(model)
}

fn step(model: &mut Model, grad: &[f64], cfg: &TrainConfig, st: &mut AdamState) {
    let lr = cfg.learning_rate;
    match cfg.optimizer {
        Optimizer::Sgd => {
            for (w, g) in model.params_mut().iter_mut().zip(grad) {
                *w -= lr * g;
            }
        }
        Optimizer::Adam { beta1, beta2, eps } => {
            st.step += 1;
            let c1 = 1.0 - beta1.powi(st.step);
            let c2 = 1.0 - beta2.powi(st.step);
            for (j, w) in model.params_mut().iter_mut().enumerate() {
                st.m[j] = beta1 * st.m[j] + (1.0 - beta1) * grad[j];
                st.v[j] = beta2 * st.v[j] + (1.0 - beta2) * grad[j] * grad[j];
                *w -= lr * (st.m[j] / c1) / ((st.v[j] / c2).sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Sample;
    use crate::fairness::dp_loss;

    fn biased(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..n)
            .map(|_| {
                let t: u8 = rng.random_range(0..2);
                let x0: f64 = rng.random::<f64>() * 2.0 - 1.0 + 1.5 * f64::from(t);
                let x1: f64 = rng.random::<f64>() * 2.0 - 1.0;
                let y = usize::from(x0 + 0.3 * x1 > 0.7);
                Sample { x: vec![x0, x1], t, y }
            })
            .collect();
        Dataset::from_samples(samples).unwrap()
    }

    fn skewed(n0: usize, n1: usize) -> Dataset {
        let samples = (0..n0 + n1).map(|i| Sample { x: vec![i as f64], t: u8::from(i >= n0), y: i % 2 }).collect();
        Dataset::from_samples(samples).unwrap()
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!("DiffDP".parse::<Method>().unwrap(), Method::DiffDp);
        assert!("nope".parse::<Method>().is_err());
    }

    #[test]
    fn balanced_batches_have_declared_group_counts() {
        let d = skewed(90, 10);
        let cfg = TrainConfig { batch_size: 8, balanced: true, ..TrainConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batches = batch_iter(&d, &cfg, &mut rng).unwrap();
        assert_eq!(batches.len(), 13);
        let mut minority_hits = 0;
        for b in &batches {
            let ones = b.iter().filter(|&&i| d.samples()[i].t == 1).count();
            assert_eq!(ones, 4);
            assert_eq!(b.len() - ones, 4);
            minority_hits += ones;
        }
        // 52 draws from a pool of 10 must repeat.
        assert!(minority_hits > 10);
    }

    #[test]
    fn odd_batch_gives_extra_slot_to_group_zero() {
        let d = skewed(20, 20);
        let cfg = TrainConfig { batch_size: 7, balanced: true, ..TrainConfig::default() };
        let batches = batch_iter(&d, &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        for b in batches {
            assert_eq!(b.iter().filter(|&&i| d.samples()[i].t == 0).count(), 4);
        }
    }

    #[test]
    fn unbalanced_epoch_is_a_permutation() {
        let d = skewed(30, 7);
        let cfg = TrainConfig { batch_size: 8, ..TrainConfig::default() };
        let mut all: Vec<usize> = batch_iter(&d, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap().concat();
        all.sort_unstable();
        assert_eq!(all, (0..37).collect::<Vec<_>>());
    }

    #[test]
    fn balanced_with_empty_group_is_config_error() {
        let d = skewed(5, 0);
        let cfg = TrainConfig { balanced: true, ..TrainConfig::default() };
        assert!(matches!(batch_iter(&d, &cfg, &mut ChaCha8Rng::seed_from_u64(0)), Err(Error::Config(_))));
    }

    #[test]
    fn zero_epochs_returns_init() {
        let d = biased(20, 0);
        let init = Model::init(Arch::mlp64(), 2, 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        assert_eq!(train(&init, &d, &cfg).unwrap(), init);
    }

    #[test]
    fn full_batch_logreg_loss_decreases_monotonically() {
        let d = Dataset::from_samples(vec![Sample { x: vec![1.0], t: 0, y: 1 }, Sample { x: vec![-1.0], t: 1, y: 0 }]).unwrap();
        let cfg = TrainConfig { epochs: 1, batch_size: 2, learning_rate: 0.5, optimizer: Optimizer::Sgd, ..TrainConfig::default() };
        let batch = Batch::from_samples(d.iter());
        let mut m = Model::zeros(Arch::LogReg, 1, 2).unwrap();
        let mut prev = objective(&m, &batch, &cfg).unwrap().0;
        for _ in 0..50 {
            m = train(&m, &d, &cfg).unwrap();
            let cur = objective(&m, &batch, &cfg).unwrap().0;
            assert!(cur < prev);
            prev = cur;
        }
    }

    #[test]
    fn zero_lambda_matches_erm_trajectory() {
        let d = biased(100, 1);
        let init = Model::init(Arch::mlp64(), 2, 2, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let base = TrainConfig { epochs: 3, seed: 4, ..TrainConfig::default() };
        let erm = train(&init, &d, &base).unwrap();
        for method in Method::ALL {
            let cfg = TrainConfig { method, lambda: 0.0, ..base.clone() };
            assert_eq!(train(&init, &d, &cfg).unwrap().params(), erm.params());
        }
    }

    #[test]
    fn training_is_seed_deterministic() {
        let d = biased(80, 2);
        let init = Model::init(Arch::mlp64(), 2, 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let cfg = TrainConfig { epochs: 2, seed: 11, ..TrainConfig::for_method(Method::Hsic) };
        assert_eq!(train(&init, &d, &cfg).unwrap().digest(), train(&init, &d, &cfg).unwrap().digest());
    }

    #[test]
    fn heavy_diffdp_removes_training_gap() {
        let d = biased(400, 3);
        let init = Model::zeros(Arch::LogReg, 2, 2).unwrap();
        let erm = train(&init, &d, &TrainConfig { epochs: 60, learning_rate: 0.05, ..TrainConfig::default() }).unwrap();
        let fair = TrainConfig { method: Method::DiffDp, lambda: 1e3, epochs: 60, learning_rate: 0.05, ..TrainConfig::default() };
        let fair = train(&init, &d, &fair).unwrap();
        let erm_dp = dp_loss(|x| erm.score(x), &d);
        let fair_dp = dp_loss(|x| fair.score(x), &d);
        assert!(erm_dp > 0.1, "{erm_dp}");
        assert!(fair_dp < 0.01, "{fair_dp}");
    }
}
