use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};

use super::model::{sigmoid, softmax, Model};
use super::penalty::{self, PenaltyValue};
use super::{Method, TrainConfig};

/// A minibatch viewed as parallel columns.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub xs: Vec<&'a [f64]>,
    pub t: Vec<u8>,
    pub y: Vec<usize>,
}

impl<'a> Batch<'a> {
    pub fn from_samples<I: IntoIterator<Item = &'a Sample>>(samples: I) -> Self {
        let mut b = Batch { xs: Vec::new(), t: Vec::new(), y: Vec::new() };
        for s in samples {
            b.xs.push(&s.x);
            b.t.push(s.t);
            b.y.push(s.y);
        }
        b
    }

    pub fn from_indices(d: &'a Dataset, idx: &[usize]) -> Self {
        Self::from_samples(idx.iter().map(|&i| &d.samples()[i]))
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }
}

/// Quantities the penalty treats as constants: the HSIC kernel bandwidths.
/// [`objective`] derives them from the current predictions; finite
/// differencing must hold them fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyContext {
    pub bandwidth_pred: f64,
    pub bandwidth_sensitive: f64,
}

impl PenaltyContext {
    pub fn at(m: &Model, batch: &Batch<'_>) -> Self {
        Self::from_scores(&m.scores(&batch.xs), &batch.t)
    }

    pub fn from_scores(p: &[f64], t: &[u8]) -> Self {
        let t: Vec<f64> = t.iter().map(|&v| f64::from(v)).collect();
        Self { bandwidth_pred: penalty::median_bandwidth(p), bandwidth_sensitive: penalty::median_bandwidth(&t) }
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn penalty_for(method: Method, p: &[f64], batch: &Batch<'_>, ctx: &PenaltyContext) -> PenaltyValue {
    match method {
        Method::Erm => PenaltyValue { value: 0.0, grad: vec![0.0; p.len()] },
        Method::DiffDp => penalty::diffdp(p, &batch.t),
        Method::DiffEopp => penalty::diffeopp(p, &batch.t, &batch.y),
        Method::DiffEodd => penalty::diffeodd(p, &batch.t, &batch.y),
        Method::Hsic => penalty::hsic(p, &batch.t, ctx.bandwidth_pred, ctx.bandwidth_sensitive),
        Method::PRemover => penalty::premover(p, &batch.t),
    }
}

/// Mean cross-entropy plus `λ · penalty`, and its gradient.
/// Penalty constants are taken from the current predictions.
pub fn objective(m: &Model, batch: &Batch<'_>, cfg: &TrainConfig) -> Result<(f64, Vec<f64>)> {
    evaluate(m, batch, cfg, None)
}

/// [`objective`] with explicit penalty constants.
pub fn objective_with(m: &Model, batch: &Batch<'_>, cfg: &TrainConfig, ctx: &PenaltyContext) -> Result<(f64, Vec<f64>)> {
    evaluate(m, batch, cfg, Some(ctx))
}

fn evaluate(m: &Model, batch: &Batch<'_>, cfg: &TrainConfig, ctx: Option<&PenaltyContext>) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    if let Some(x) = batch.xs.iter().find(|x| x.len() != m.input_dim()) {
        return Err(Error::Size(format!("feature vector has length {}, model expects {}", x.len(), m.input_dim())));
    }
    if let Some(&y) = batch.y.iter().find(|&&y| y >= m.num_classes()) {
        return Err(Error::Data(format!("label {y} out of range for {} classes", m.num_classes())));
    }
    let penalized = cfg.lambda != 0.0 && cfg.method != Method::Erm;
    if penalized && !m.is_binary() {
        return Err(Error::Config("fairness penalties need a binary model".into()));
    }
    let b = batch.len() as f64;
    let trace = m.forward(&batch.xs);
    let z = trace.logits();
    let mut loss = 0.0;
    let mut dlogits = vec![0.0; z.len()];
    if m.is_binary() {
        let mut p = Vec::with_capacity(batch.len());
        for (i, &zi) in z.iter().enumerate() {
            let y = batch.y[i] as f64;
            loss += softplus(zi) - y * zi;
            let pi = sigmoid(zi);
            dlogits[i] = (pi - y) / b;
            p.push(pi);
        }
        loss /= b;
        if penalized {
            let ctx = match ctx {
                Some(c) => *c,
                None if cfg.method == Method::Hsic => PenaltyContext::from_scores(&p, &batch.t),
                None => PenaltyContext { bandwidth_pred: penalty::BANDWIDTH_FLOOR, bandwidth_sensitive: penalty::BANDWIDTH_FLOOR },
            };
            let pen = penalty_for(cfg.method, &p, batch, &ctx);
            loss += cfg.lambda * pen.value;
            for i in 0..p.len() {
                dlogits[i] += cfg.lambda * pen.grad[i] * p[i] * (1.0 - p[i]);
            }
        }
    } else {
        let k = m.num_outputs();
        for (i, zi) in z.chunks_exact(k).enumerate() {
            let max = zi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + zi.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - zi[batch.y[i]];
            let s = softmax(zi);
            for c in 0..k {
                let onehot = if c == batch.y[i] { 1.0 } else { 0.0 };
                dlogits[i * k + c] = (s[c] - onehot) / b;
            }
        }
        loss /= b;
    }
    let mut grad = vec![0.0; m.num_params()];
    m.backward(&trace, &dlogits, &mut grad);
    Ok((loss, grad))
}

/// Largest per-coordinate relative error between the analytic gradient and
/// central differences with step `h`. Relative errors use
/// `max(|analytic|, |numeric|, 1e-6)` as denominator, so coordinates whose
/// gradient is essentially zero are compared in absolute terms.
pub fn grad_check(m: &Model, batch: &Batch<'_>, cfg: &TrainConfig, h: f64) -> Result<f64> {
    let all: Vec<usize> = (0..m.num_params()).collect();
    grad_check_coords(m, batch, cfg, h, &all)
}

/// [`grad_check`] restricted to the parameter indices in `coords`.
pub fn grad_check_coords(m: &Model, batch: &Batch<'_>, cfg: &TrainConfig, h: f64, coords: &[usize]) -> Result<f64> {
    if let Some(&j) = coords.iter().find(|&&j| j >= m.num_params()) {
        return Err(Error::Argument(format!("parameter index {j} out of range")));
    }
    let ctx = PenaltyContext::at(m, batch);
    let (_, analytic) = objective_with(m, batch, cfg, &ctx)?;
    let mut probe = m.clone();
    let mut worst: f64 = 0.0;
    for &j in coords {
        let w = m.params()[j];
        probe.params_mut()[j] = w + h;
        let (up, _) = objective_with(&probe, batch, cfg, &ctx)?;
        probe.params_mut()[j] = w - h;
        let (down, _) = objective_with(&probe, batch, cfg, &ctx)?;
        probe.params_mut()[j] = w;
        let numeric = (up - down) / (2.0 * h);
        let denom = analytic[j].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[j] - numeric).abs() / denom);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::model::Arch;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(x: Vec<f64>, t: u8, y: usize) -> Sample {
        Sample { x, t, y }
    }

    #[test]
    fn single_sample_logreg_gradient_by_hand() {
        let m = Model::zeros(Arch::LogReg, 2, 2).unwrap().with_params(vec![0.5, -1.0, 0.25]).unwrap();
        let s = [sample(vec![2.0, 1.0], 1, 1)];
        let batch = Batch::from_samples(&s);
        let cfg = TrainConfig { method: Method::DiffDp, lambda: 3.0, ..TrainConfig::default() };
        let (loss, grad) = objective(&m, &batch, &cfg).unwrap();
        let z: f64 = 0.5 * 2.0 - 1.0 + 0.25;
        let p = 1.0 / (1.0 + (-z).exp());
        assert!((loss - (-p.ln())).abs() < 1e-12);
        let want = [(p - 1.0) * 2.0, (p - 1.0) * 1.0, p - 1.0];
        for (g, w) in grad.iter().zip(want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_lambda_is_plain_cross_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = Model::init(Arch::mlp64(), 3, 2, &mut rng).unwrap();
        let s: Vec<Sample> = (0..10).map(|i| sample(vec![i as f64 * 0.1, -0.3, 1.0], (i % 2) as u8, (i % 3 == 0) as usize)).collect();
        let batch = Batch::from_samples(&s);
        let erm = objective(&m, &batch, &TrainConfig { method: Method::Erm, ..TrainConfig::default() }).unwrap();
        for method in Method::ALL {
            let cfg = TrainConfig { method, lambda: 0.0, ..TrainConfig::default() };
            assert_eq!(objective(&m, &batch, &cfg).unwrap(), erm);
        }
    }

    #[test]
    fn stationary_point_has_tiny_absolute_error() {
        // Symmetric labels at zero weights: the cross-entropy gradient vanishes.
        let m = Model::zeros(Arch::LogReg, 1, 2).unwrap();
        let s = [sample(vec![1.0], 0, 1), sample(vec![1.0], 1, 0)];
        let batch = Batch::from_samples(&s);
        let cfg = TrainConfig { method: Method::Erm, ..TrainConfig::default() };
        let (_, g) = objective(&m, &batch, &cfg).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-15));
        assert!(grad_check(&m, &batch, &cfg, 1e-5).unwrap() * 1e-6 < 1e-8);
    }

    #[test]
    fn multiclass_penalty_is_rejected() {
        let m = Model::zeros(Arch::LogReg, 1, 3).unwrap();
        let s = [sample(vec![1.0], 0, 2)];
        let batch = Batch::from_samples(&s);
        let cfg = TrainConfig { method: Method::Hsic, lambda: 1.0, ..TrainConfig::default() };
        assert!(matches!(objective(&m, &batch, &cfg), Err(Error::Config(_))));
        let cfg = TrainConfig { method: Method::Erm, ..TrainConfig::default() };
        assert!(grad_check(&m, &batch, &cfg, 1e-5).unwrap() < 1e-6);
    }

    #[test]
    fn empty_batch_is_an_error() {
        let m = Model::zeros(Arch::LogReg, 1, 2).unwrap();
        let batch = Batch::from_samples(&[]);
        assert!(objective(&m, &batch, &TrainConfig::default()).is_err());
    }
}
