//! Scalar kernels shared by the plain decode path and the differentiable
//! requery path. Both must produce bit-identical values for the same
//! inputs, so every forward computation funnels through these functions.

pub(crate) const LN_EPS: f64 = 1e-5;

/// y = W x + b, with W row-major (rows of length `x.len()`).
pub(crate) fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut Vec<f64>) {
    let d_in = x.len();
    let d_out = b.len();
    debug_assert_eq!(w.len(), d_in * d_out);
    out.clear();
    out.reserve(d_out);
    for r in 0..d_out {
        let row = &w[r * d_in..(r + 1) * d_in];
        let mut acc = b[r];
        for (wi, xi) in row.iter().zip(x) {
            acc += wi * xi;
        }
        out.push(acc);
    }
}

/// x^T y for equal-length slices.
pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Layer normalization with learned scale and shift. Returns (mean, rstd)
/// for use by backward passes.
pub(crate) fn layer_norm(g: &[f64], b: &[f64], x: &[f64], out: &mut Vec<f64>) -> (f64, f64) {
    let d = x.len();
    let mean = x.iter().sum::<f64>() / d as f64;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
    let rstd = 1.0 / (var + LN_EPS).sqrt();
    out.clear();
    out.reserve(d);
    for i in 0..d {
        out.push((x[i] - mean) * rstd * g[i] + b[i]);
    }
    (mean, rstd)
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

/// Tanh-approximated GELU.
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

/// Derivative of the tanh-approximated GELU.
pub(crate) fn gelu_prime(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Multi-head scaled dot-product attention of one query against cached
/// keys/values. `out` gets the concatenated head outputs; `save_probs`, if
/// given, receives the per-head attention weights laid out `[h * n_pos + j]`.
pub(crate) fn attention(
    q: &[f64],
    keys: &[&[f64]],
    values: &[&[f64]],
    n_heads: usize,
    out: &mut Vec<f64>,
    mut save_probs: Option<&mut Vec<f64>>,
) {
    let d = q.len();
    let n_pos = keys.len();
    debug_assert!(n_pos > 0);
    debug_assert_eq!(d % n_heads, 0);
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    out.clear();
    out.resize(d, 0.0);
    if let Some(p) = save_probs.as_deref_mut() {
        p.clear();
        p.reserve(n_heads * n_pos);
    }
    let mut scores = Vec::with_capacity(n_pos);
    for h in 0..n_heads {
        let lo = h * dh;
        let hi = lo + dh;
        scores.clear();
        for k in keys {
            scores.push(dot(&q[lo..hi], &k[lo..hi]) * scale);
        }
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for s in scores.iter_mut() {
            *s = (*s - max).exp();
            denom += *s;
        }
        for (j, s) in scores.iter().enumerate() {
            let p = s / denom;
            if let Some(buf) = save_probs.as_deref_mut() {
                buf.push(p);
            }
            let vrow = &values[j][lo..hi];
            for (o, vi) in out[lo..hi].iter_mut().zip(vrow) {
                *o += p * vi;
            }
        }
    }
}

/// Temperature softmax with max-subtraction; writes a distribution that
/// sums to 1 (up to rounding).
pub(crate) fn softmax_t(logits: &[f64], temperature: f64, out: &mut Vec<f64>) {
    debug_assert!(temperature > 0.0);
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    out.clear();
    out.reserve(logits.len());
    let mut denom = 0.0;
    for &l in logits {
        let e = ((l - max) / temperature).exp();
        denom += e;
        out.push(e);
    }
    for o in out.iter_mut() {
        *o /= denom;
    }
}
