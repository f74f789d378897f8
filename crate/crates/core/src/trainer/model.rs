//! Fully connected classifiers with tanh hidden layers and hand-written
//! backpropagation. Logistic regression is the zero-hidden-layer case.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arch {
    LogReg,
    Mlp { hidden: Vec<usize> },
}

impl Arch {
    /// One hidden layer of 64 tanh units.
    pub fn mlp64() -> Self {
        Self::Mlp { hidden: vec![64] }
    }

    fn hidden(&self) -> &[usize] {
        match self {
            Self::LogReg => &[],
            Self::Mlp { hidden } => hidden,
        }
    }
}

/// A classifier `f(w, x)`: logistic output for two classes (one logit),
/// softmax over `C` logits otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    arch: Arch,
    input_dim: usize,
    num_classes: usize,
    params: Vec<f64>,
}

/// Per-layer activations of one forward pass over a batch.
pub(crate) struct Trace {
    /// `acts[0]` holds the inputs, `acts[l]` the tanh output of hidden layer
    /// `l`, the last entry the logits. Each is `batch × width`, row-major.
    acts: Vec<Vec<f64>>,
    batch: usize,
}

impl Trace {
    pub(crate) fn logits(&self) -> &[f64] {
        self.acts.last().expect("trace has at least one layer")
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Model {
    /// All parameters zero.
    pub fn zeros(arch: Arch, input_dim: usize, num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Argument("a classifier needs at least two classes".into()));
        }
        if arch.hidden().iter().any(|&h| h == 0) {
            return Err(Error::Argument("hidden layers must be non-empty".into()));
        }
        let mut m = Self { arch, input_dim, num_classes, params: Vec::new() };
        m.params = vec![0.0; m.num_params()];
        Ok(m)
    }

    /// Uniform `±1/√fan_in` initialization for weights and biases.
    pub fn init<R: Rng + ?Sized>(arch: Arch, input_dim: usize, num_classes: usize, rng: &mut R) -> Result<Self> {
        let mut m = Self::zeros(arch, input_dim, num_classes)?;
        let mut offset = 0;
        for (fan_in, fan_out) in m.layer_dims() {
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            for p in &mut m.params[offset..offset + fan_out * (fan_in + 1)] {
                *p = rng.random_range(-bound..bound);
            }
            offset += fan_out * (fan_in + 1);
        }
        Ok(m)
    }

    pub fn with_params(&self, params: Vec<f64>) -> Result<Self> {
        if params.len() != self.num_params() {
            return Err(Error::Size(format!("expected {} parameters, got {}", self.num_params(), params.len())));
        }
        Ok(Self { params, ..self.clone() })
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_outputs(&self) -> usize {
        if self.num_classes == 2 {
            1
        } else {
            self.num_classes
        }
    }

    pub fn is_binary(&self) -> bool {
        self.num_classes == 2
    }

    /// `(fan_in, fan_out)` for each affine layer.
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_dim];
        widths.extend_from_slice(self.arch.hidden());
        widths.push(self.num_outputs());
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| o * (i + 1)).sum()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::Size(format!("feature vector has length {}, model expects {}", x.len(), self.input_dim)));
        }
        Ok(())
    }

    pub(crate) fn forward(&self, xs: &[&[f64]]) -> Trace {
        let batch = xs.len();
        let dims = self.layer_dims();
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(dims.len() + 1);
        acts.push(xs.iter().flat_map(|x| x.iter().copied()).collect());
        let mut offset = 0;
        for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let w = &self.params[offset..offset + fan_out * fan_in];
            let b = &self.params[offset + fan_out * fan_in..offset + fan_out * (fan_in + 1)];
            offset += fan_out * (fan_in + 1);
            let input = &acts[l];
            let mut out = vec![0.0; batch * fan_out];
            let last = l + 1 == dims.len();
            for s in 0..batch {
                let xin = &input[s * fan_in..(s + 1) * fan_in];
                let row_out = &mut out[s * fan_out..(s + 1) * fan_out];
                for (o, slot) in row_out.iter_mut().enumerate() {
                    let wr = &w[o * fan_in..(o + 1) * fan_in];
                    let z = b[o] + dot(wr, xin);
                    *slot = if last { z } else { tanh(z) };
                }
            }
            acts.push(out);
        }
        Trace { acts, batch }
    }

    /// Accumulates `∂L/∂w` into `grad` given `∂L/∂logits` (`batch × outputs`).
    pub(crate) fn backward(&self, trace: &Trace, dlogits: &[f64], grad: &mut [f64]) {
        let batch = trace.batch;
        let dims = self.layer_dims();
        let mut offsets = Vec::with_capacity(dims.len());
        let mut acc = 0;
        for &(i, o) in &dims {
            offsets.push(acc);
            acc += o * (i + 1);
        }
        let mut delta = dlogits.to_vec();
        for l in (0..dims.len()).rev() {
            let (fan_in, fan_out) = dims[l];
            let off = offsets[l];
            let input = &trace.acts[l];
            let w = &self.params[off..off + fan_out * fan_in];
            {
                let (gw, gb) = grad[off..off + fan_out * (fan_in + 1)].split_at_mut(fan_out * fan_in);
                for s in 0..batch {
                    let xin = &input[s * fan_in..(s + 1) * fan_in];
                    for o in 0..fan_out {
                        let d = delta[s * fan_out + o];
                        if d == 0.0 {
                            continue;
                        }
                        gb[o] += d;
                        for (g, x) in gw[o * fan_in..(o + 1) * fan_in].iter_mut().zip(xin) {
                            *g += d * x;
                        }
                    }
                }
            }
            if l == 0 {
                break;
            }
            // Propagate through W and the tanh of the previous layer.
            let mut prev = vec![0.0; batch * fan_in];
            for s in 0..batch {
                let p = &mut prev[s * fan_in..(s + 1) * fan_in];
                for o in 0..fan_out {
                    let d = delta[s * fan_out + o];
                    if d == 0.0 {
                        continue;
                    }
                    for (slot, wv) in p.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                        *slot += d * wv;
                    }
                }
                for (slot, a) in p.iter_mut().zip(&input[s * fan_in..(s + 1) * fan_in]) {
                    *slot *= 1.0 - a * a;
                }
            }
            delta = prev;
        }
    }

    /// Class probabilities (length `C`).
    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let trace = self.forward(&[x]);
        Ok(self.probs_from_logits(trace.logits()))
    }

    fn probs_from_logits(&self, z: &[f64]) -> Vec<f64> {
        if self.is_binary() {
            let p = sigmoid(z[0]);
            vec![1.0 - p, p]
        } else {
            softmax(z)
        }
    }

    /// `f(w, x) ∈ [0, 1]`: the positive-class probability for binary models,
    /// the probability of class 1 otherwise.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.score(x))
    }

    /// Unchecked [`Model::predict`] for hot loops.
    pub fn score(&self, x: &[f64]) -> f64 {
        let trace = self.forward(&[x]);
        let z = trace.logits();
        if self.is_binary() {
            sigmoid(z[0])
        } else {
            softmax(z)[1]
        }
    }

    /// Scores for many inputs at once.
    pub fn scores(&self, xs: &[&[f64]]) -> Vec<f64> {
        if xs.is_empty() {
            return Vec::new();
        }
        let trace = self.forward(xs);
        let k = self.num_outputs();
        trace
            .logits()
            .chunks_exact(k)
            .map(|z| if k == 1 { sigmoid(z[0]) } else { softmax(z)[1] })
            .collect()
    }

    /// Argmax class; ties go to the lowest index.
    pub fn predict_class(&self, x: &[f64]) -> Result<usize> {
        let p = self.predict_proba(x)?;
        Ok(argmax(&p))
    }

    /// SHA-256 of the checkpoint bytes, hex encoded.
    pub fn digest(&self) -> String {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf).expect("writing to a Vec cannot fail");
        Sha256::digest(&buf).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// `tanh` through one `exp`; absolute error below 1e-15.
fn tanh(x: f64) -> f64 {
    1.0 - 2.0 / ((2.0 * x).exp() + 1.0)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for j in 0..4 {
            acc[j] += x[j] * y[j];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub(crate) fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub(crate) fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

const MAGIC: &[u8; 4] = b"FGMD";
const VERSION: u32 = 1;

impl Model {
    /// Binary checkpoint: magic, version, arch descriptor, then the parameters
    /// as little-endian IEEE-754 bits. Round-trips bit-exactly.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        let hidden = self.arch.hidden();
        let kind: u8 = match self.arch {
            Arch::LogReg => 0,
            Arch::Mlp { .. } => 1,
        };
        w.write_all(&[kind])?;
        for v in [self.input_dim, self.num_classes, hidden.len()] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        for &h in hidden {
            w.write_all(&(h as u64).to_le_bytes())?;
        }
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for p in &self.params {
            w.write_all(&p.to_bits().to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Data("not a model checkpoint".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != VERSION {
            return Err(Error::Data(format!("unsupported checkpoint version {version}")));
        }
        let mut kind = [0u8; 1];
        r.read_exact(&mut kind)?;
        let read_u64 = |r: &mut R| -> Result<u64> {
            let mut b8 = [0u8; 8];
            r.read_exact(&mut b8)?;
            Ok(u64::from_le_bytes(b8))
        };
        let input_dim = read_u64(&mut r)? as usize;
        let num_classes = read_u64(&mut r)? as usize;
        let layers = read_u64(&mut r)? as usize;
        if layers > 1024 {
            return Err(Error::Data(format!("implausible hidden layer count {layers}")));
        }
        let hidden = (0..layers).map(|_| read_u64(&mut r).map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let arch = match kind[0] {
            0 if hidden.is_empty() => Arch::LogReg,
            1 => Arch::Mlp { hidden },
            k => return Err(Error::Data(format!("unknown architecture tag {k}"))),
        };
        let shell = Self::zeros(arch, input_dim, num_classes)?;
        let count = read_u64(&mut r)? as usize;
        if count != shell.num_params() {
            return Err(Error::Size(format!("checkpoint holds {count} parameters, architecture needs {}", shell.num_params())));
        }
        let params = (0..count).map(|_| read_u64(&mut r).map(f64::from_bits)).collect::<Result<Vec<_>>>()?;
        shell.with_params(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_logreg_predicts_half() {
        let m = Model::zeros(Arch::LogReg, 3, 2).unwrap();
        assert_eq!(m.predict(&[1.0, -2.0, 0.5]).unwrap(), 0.5);
        assert!(m.predict(&[1.0]).is_err());
    }

    #[test]
    fn large_logit_saturates_monotonically() {
        let m = Model::zeros(Arch::LogReg, 1, 2).unwrap().with_params(vec![1.0, 0.0]).unwrap();
        let mut last = 0.0;
        for x in [0.0, 1.0, 5.0, 20.0, 40.0, 800.0] {
            let p = m.predict(&[x]).unwrap();
            assert!(p >= last && p <= 1.0);
            last = p;
        }
        assert_eq!(last, 1.0);
    }

    #[test]
    fn seeded_mlp_is_bit_identical() {
        let a = Model::init(Arch::mlp64(), 5, 2, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = Model::init(Arch::mlp64(), 5, 2, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let x = [0.3, -1.0, 2.0, 0.0, 0.7];
        assert_eq!(a.predict(&x).unwrap().to_bits(), b.predict(&x).unwrap().to_bits());
        assert_eq!(a.num_params(), 64 * 6 + 65);
    }

    #[test]
    fn multiclass_probs_form_a_simplex() {
        let m = Model::init(Arch::Mlp { hidden: vec![4] }, 2, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let p = m.predict_proba(&[0.5, -0.5]).unwrap();
        assert_eq!(p.len(), 4);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(m.predict_class(&[0.5, -0.5]).unwrap() < 4);
    }

    #[test]
    fn argmax_ties_pick_lowest() {
        assert_eq!(argmax(&[0.25, 0.25, 0.5, 0.5]), 2);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let m = Model::init(Arch::Mlp { hidden: vec![3, 2] }, 4, 3, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let mut buf = Vec::new();
        m.write_checkpoint(&mut buf).unwrap();
        let back = Model::read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        assert!(back.params().iter().zip(m.params()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(Model::read_checkpoint(&b"nope"[..]).is_err());
    }
}
