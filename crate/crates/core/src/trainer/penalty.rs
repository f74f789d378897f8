//! Differentiable fairness penalties on a batch of soft predictions.
//!
//! Each function returns the penalty value and its gradient with respect to
//! the predictions `p`.

/// Smoothing added to group counts in the gap penalties.
pub const COUNT_EPS: f64 = 1e-8;
/// Smoothing inside the logarithms of the prejudice index.
pub const LOG_EPS: f64 = 1e-8;
/// Lower bound on the median-heuristic kernel bandwidth.
pub const BANDWIDTH_FLOOR: f64 = 0.1;

/// Value and gradient with respect to the batch predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyValue {
    pub value: f64,
    pub grad: Vec<f64>,
}

impl PenaltyValue {
    fn zero(n: usize) -> Self {
        Self { value: 0.0, grad: vec![0.0; n] }
    }
}

/// `|mean_{t=0} p − mean_{t=1} p|` over the samples where `mask` holds.
/// Zero when either group is empty.
fn masked_gap(p: &[f64], t: &[u8], mask: impl Fn(usize) -> bool) -> PenaltyValue {
    let mut sum = [0.0f64; 2];
    let mut count = [0usize; 2];
    for i in (0..p.len()).filter(|&i| mask(i)) {
        sum[usize::from(t[i])] += p[i];
        count[usize::from(t[i])] += 1;
    }
    let mut out = PenaltyValue::zero(p.len());
    if count[0] == 0 || count[1] == 0 {
        return out;
    }
    let d0 = count[0] as f64 + COUNT_EPS;
    let d1 = count[1] as f64 + COUNT_EPS;
    let diff = sum[0] / d0 - sum[1] / d1;
    out.value = diff.abs();
    let sign = if diff > 0.0 {
        1.0
    } else if diff < 0.0 {
        -1.0
    } else {
        0.0
    };
    for i in (0..p.len()).filter(|&i| mask(i)) {
        out.grad[i] = if t[i] == 0 { sign / d0 } else { -sign / d1 };
    }
    out
}

pub fn diffdp(p: &[f64], t: &[u8]) -> PenaltyValue {
    masked_gap(p, t, |_| true)
}

/// The demographic-parity gap among positive-label samples.
pub fn diffeopp(p: &[f64], t: &[u8], y: &[usize]) -> PenaltyValue {
    masked_gap(p, t, |i| y[i] == 1)
}

/// Sum of the per-label gaps for `y ∈ {0, 1}`.
pub fn diffeodd(p: &[f64], t: &[u8], y: &[usize]) -> PenaltyValue {
    let a = masked_gap(p, t, |i| y[i] == 0);
    let b = masked_gap(p, t, |i| y[i] == 1);
    PenaltyValue { value: a.value + b.value, grad: a.grad.iter().zip(&b.grad).map(|(u, v)| u + v).collect() }
}

/// Median of pairwise absolute differences, floored at [`BANDWIDTH_FLOOR`].
pub fn median_bandwidth(values: &[f64]) -> f64 {
    let mut d: Vec<f64> = Vec::with_capacity(values.len() * values.len().saturating_sub(1) / 2);
    for i in 0..values.len() {
        for j in i + 1..values.len() {
            d.push((values[i] - values[j]).abs());
        }
    }
    if d.is_empty() {
        return BANDWIDTH_FLOOR;
    }
    let mid = d.len() / 2;
    let odd = d.len() % 2 == 1;
    let (below, &mut upper, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    let median = if odd {
        upper
    } else {
        0.5 * (below.iter().copied().fold(f64::NEG_INFINITY, f64::max) + upper)
    };
    median.max(BANDWIDTH_FLOOR)
}

fn gaussian(a: f64, b: f64, bw: f64) -> f64 {
    (-(a - b).powi(2) / (2.0 * bw * bw)).exp()
}

/// Biased empirical HSIC `tr(K H L H) / b²` with Gaussian kernels on the
/// predictions (bandwidth `bw_p`) and on the sensitive attribute (`bw_t`).
/// Bandwidths are inputs, so the gradient treats them as constants.
pub fn hsic(p: &[f64], t: &[u8], bw_p: f64, bw_t: f64) -> PenaltyValue {
    let b = p.len();
    if b < 2 {
        return PenaltyValue::zero(b);
    }
    let bf = b as f64;
    // Centered sensitive-attribute kernel M = H L H.
    let mut l = vec![0.0; b * b];
    for i in 0..b {
        for j in 0..b {
            l[i * b + j] = gaussian(f64::from(t[i]), f64::from(t[j]), bw_t);
        }
    }
    let row_mean: Vec<f64> = (0..b).map(|i| l[i * b..(i + 1) * b].iter().sum::<f64>() / bf).collect();
    let grand = row_mean.iter().sum::<f64>() / bf;
    let mut value = 0.0;
    let mut grad = vec![0.0; b];
    let inv_bw2 = 1.0 / (bw_p * bw_p);
    // Σ K∘M = Σ (K − 1)∘M since M sums to zero.
    for i in 0..b {
        for j in i + 1..b {
            let m = l[i * b + j] - row_mean[i] - row_mean[j] + grand;
            let km1 = (-(p[i] - p[j]).powi(2) / (2.0 * bw_p * bw_p)).exp_m1();
            let k = km1 + 1.0;
            value += 2.0 * km1 * m;
            // K_ij and K_ji both move with p_i and with p_j.
            let g = -2.0 * m * k * (p[i] - p[j]) * inv_bw2;
            grad[i] += g;
            grad[j] -= g;
        }
    }
    let scale = 1.0 / (bf * bf);
    grad.iter_mut().for_each(|g| *g *= scale);
    PenaltyValue { value: value * scale, grad }
}

/// Plug-in prejudice index `Σ_{t,c} P̂(t,c) ln(P̂(c|t) / P̂(c))`, where
/// `P̂(c=1|t)` is the mean prediction in group `t` and `P̂(t)` the group share.
pub fn premover(p: &[f64], t: &[u8]) -> PenaltyValue {
    let b = p.len();
    let mut sum = [0.0f64; 2];
    let mut count = [0usize; 2];
    for i in 0..b {
        sum[usize::from(t[i])] += p[i];
        count[usize::from(t[i])] += 1;
    }
    if b == 0 {
        return PenaltyValue::zero(0);
    }
    let pi = [count[0] as f64 / b as f64, count[1] as f64 / b as f64];
    let q = [
        if count[0] > 0 { sum[0] / count[0] as f64 } else { 0.0 },
        if count[1] > 0 { sum[1] / count[1] as f64 } else { 0.0 },
    ];
    // a[t][c] = P̂(c | t), s[c] = P̂(c)
    let a = [[1.0 - q[0], q[0]], [1.0 - q[1], q[1]]];
    let s = [pi[0] * a[0][0] + pi[1] * a[1][0], pi[0] * a[0][1] + pi[1] * a[1][1]];
    let mut value = 0.0;
    let mut dq = [0.0f64; 2];
    for tt in 0..2 {
        if count[tt] == 0 {
            continue;
        }
        for c in 0..2 {
            let atc = a[tt][c];
            value += pi[tt] * atc * ((atc + LOG_EPS).ln() - (s[c] + LOG_EPS).ln());
            // direct term plus the path through s_c
            let direct = pi[tt] * ((atc + LOG_EPS).ln() - (s[c] + LOG_EPS).ln() + atc / (atc + LOG_EPS));
            let via_s = -pi[tt] * s[c] / (s[c] + LOG_EPS);
            let da_dq = if c == 1 { 1.0 } else { -1.0 };
            dq[tt] += (direct + via_s) * da_dq;
        }
    }
    let grad = (0..b)
        .map(|i| {
            let tt = usize::from(t[i]);
            dq[tt] / count[tt] as f64
        })
        .collect();
    PenaltyValue { value, grad }
}
