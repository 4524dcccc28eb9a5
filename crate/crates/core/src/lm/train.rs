//! Full-sequence training: forward, hand-written backprop, and Adam.
//!
//! The forward pass here recomputes attention over the whole prefix at every
//! position with its own loops, independent of the incremental cache path in
//! the parent module. That independence is deliberate: tests compare the two
//! paths to validate cache bookkeeping, so they must not share shortcuts.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{preprocess, Dataset, Vocab};
use crate::lm::math::{gelu, gelu_prime, LN_EPS};
use crate::lm::{LmError, LmHyper, LmModel};
use crate::corpus::PreprocessConfig;

#[derive(Clone, Debug)]
pub struct TrainLmConfig {
    pub hyper: LmHyper,
    pub preprocess: PreprocessConfig,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainLmConfig {
    fn default() -> Self {
        TrainLmConfig {
            hyper: LmHyper::default(),
            preprocess: PreprocessConfig::default(),
            epochs: 30,
            lr: 3e-3,
            batch_size: 16,
            seed: 0,
        }
    }
}

/// Encodes a dataset into id sequences `[BOS, tokens.., EOS]`, truncated to
/// the context length. Examples the preprocessor drops contribute nothing.
pub(crate) fn encode_sequences(
    ds: &Dataset,
    vocab: &Vocab,
    cfg: &PreprocessConfig,
    ctx_len: usize,
) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    for ex in ds.examples() {
        if let Some(tokens) = preprocess(&ex.text, cfg) {
            let mut seq = Vec::with_capacity(tokens.len() + 2);
            seq.push(Vocab::BOS);
            seq.extend(vocab.encode(&tokens));
            seq.push(Vocab::EOS);
            seq.truncate(ctx_len);
            if seq.len() >= 2 {
                out.push(seq);
            }
        }
    }
    out
}

/// Trains a model on the dataset's text. See [`train_lm_traced`] for the
/// loss trace.
pub fn train_lm(ds: &Dataset, vocab: Vocab, cfg: &TrainLmConfig) -> Result<LmModel, LmError> {
    train_lm_traced(ds, vocab, cfg).map(|(m, _)| m)
}

/// Trains a model and returns the mean per-token loss of each epoch.
pub fn train_lm_traced(
    ds: &Dataset,
    vocab: Vocab,
    cfg: &TrainLmConfig,
) -> Result<(LmModel, Vec<f64>), LmError> {
    if cfg.epochs == 0 {
        return Err(LmError::BadConfig("epochs must be at least 1".into()));
    }
    let mut model = LmModel::init(cfg.hyper, vocab, cfg.preprocess.clone(), cfg.seed)?;
    let sequences = encode_sequences(ds, model.vocab(), &cfg.preprocess, cfg.hyper.ctx_len);
    if sequences.is_empty() {
        return Err(LmError::NoSequences);
    }
    let batch_size = cfg.batch_size.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    let mut adam = Adam::new(model.params.len(), cfg.lr);
    let mut grad = vec![0.0; model.params.len()];
    let mut losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_nll = 0.0;
        let mut epoch_events = 0usize;
        for chunk in order.chunks(batch_size) {
            grad.fill(0.0);
            let events: usize = chunk.iter().map(|&i| sequences[i].len() - 1).sum();
            if events == 0 {
                continue;
            }
            let scale = 1.0 / events as f64;
            for &i in chunk {
                let acts = forward_full(&model, &sequences[i]);
                epoch_nll += sequence_nll(&acts);
                backward_full(&model, &acts, scale, &mut grad);
            }
            epoch_events += events;
            adam.update(&mut model.params, &grad);
        }
        let mean = epoch_nll / epoch_events.max(1) as f64;
        if !mean.is_finite() {
            return Err(LmError::Diverged { epoch });
        }
        losses.push(mean);
    }
    Ok((model, losses))
}

/// exp(mean next-token negative log-likelihood) over the dataset, end-of-
/// sequence events included. Always at least 1.
pub fn nn_perplexity(model: &LmModel, ds: &Dataset) -> Result<f64, LmError> {
    let sequences = encode_sequences(
        ds,
        model.vocab(),
        model.preprocess_config(),
        model.hyper().ctx_len,
    );
    let mut nll = 0.0;
    let mut events = 0usize;
    for seq in &sequences {
        let acts = forward_full(model, seq);
        nll += sequence_nll(&acts);
        events += seq.len() - 1;
    }
    if events == 0 {
        return Err(LmError::NoEvents);
    }
    Ok((nll / events as f64).exp())
}

struct LayerActs {
    ln1_stats: Vec<(f64, f64)>,
    a1: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    /// Attention weights per position i, laid out `[h * (i+1) + j]`.
    probs: Vec<Vec<f64>>,
    attn: Vec<Vec<f64>>,
    res1: Vec<Vec<f64>>,
    ln2_stats: Vec<(f64, f64)>,
    a2: Vec<Vec<f64>>,
    ffn_pre: Vec<Vec<f64>>,
}

pub(crate) struct FullActs {
    seq: Vec<u32>,
    /// Hidden states entering each layer; `streams[n_layers]` is the final.
    streams: Vec<Vec<Vec<f64>>>,
    layers: Vec<LayerActs>,
    lnf_stats: Vec<(f64, f64)>,
    hf: Vec<Vec<f64>>,
    pub(crate) logits: Vec<Vec<f64>>,
}

fn matvec(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let d_in = x.len();
    b.iter()
        .enumerate()
        .map(|(r, &br)| {
            let row = &w[r * d_in..(r + 1) * d_in];
            br + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

fn layer_norm_full(g: &[f64], b: &[f64], x: &[f64]) -> (Vec<f64>, (f64, f64)) {
    let d = x.len() as f64;
    let mean = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let rstd = 1.0 / (var + LN_EPS).sqrt();
    let y = x
        .iter()
        .zip(g.iter().zip(b))
        .map(|(&xi, (&gi, &bi))| (xi - mean) * rstd * gi + bi)
        .collect();
    (y, (mean, rstd))
}

/// Whole-sequence forward pass with full attention recomputed per position.
pub(crate) fn forward_full(model: &LmModel, seq: &[u32]) -> FullActs {
    let hy = model.hyper();
    let d = hy.d_model;
    let n_heads = hy.n_heads;
    let dh = d / n_heads;
    let att_scale = 1.0 / (dh as f64).sqrt();
    let s = seq.len();

    let mut streams = Vec::with_capacity(hy.n_layers + 1);
    let mut h0 = Vec::with_capacity(s);
    for (i, &t) in seq.iter().enumerate() {
        let e = model.embedding(t);
        let p = model.pos_embedding(i);
        h0.push(e.iter().zip(p).map(|(a, b)| a + b).collect::<Vec<f64>>());
    }
    streams.push(h0);

    let mut layers = Vec::with_capacity(hy.n_layers);
    for lr in &model.layout.layers {
        let h_in = streams.last().unwrap();
        let mut la = LayerActs {
            ln1_stats: Vec::with_capacity(s),
            a1: Vec::with_capacity(s),
            q: Vec::with_capacity(s),
            k: Vec::with_capacity(s),
            v: Vec::with_capacity(s),
            probs: Vec::with_capacity(s),
            attn: Vec::with_capacity(s),
            res1: Vec::with_capacity(s),
            ln2_stats: Vec::with_capacity(s),
            a2: Vec::with_capacity(s),
            ffn_pre: Vec::with_capacity(s),
        };
        for i in 0..s {
            let (a1, st) = layer_norm_full(model.p(&lr.ln1_g), model.p(&lr.ln1_b), &h_in[i]);
            la.q.push(matvec(model.p(&lr.wq), model.p(&lr.bq), &a1));
            la.k.push(matvec(model.p(&lr.wk), model.p(&lr.bk), &a1));
            la.v.push(matvec(model.p(&lr.wv), model.p(&lr.bv), &a1));
            la.a1.push(a1);
            la.ln1_stats.push(st);
        }
        let mut h_out = Vec::with_capacity(s);
        for i in 0..s {
            // Causal attention over positions 0..=i, one head at a time.
            let n = i + 1;
            let mut probs = vec![0.0; n_heads * n];
            let mut attn = vec![0.0; d];
            for h in 0..n_heads {
                let lo = h * dh;
                let hi = lo + dh;
                let mut scores = Vec::with_capacity(n);
                for j in 0..n {
                    let sdot: f64 = la.q[i][lo..hi]
                        .iter()
                        .zip(&la.k[j][lo..hi])
                        .map(|(a, b)| a * b)
                        .sum();
                    scores.push(sdot * att_scale);
                }
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut denom = 0.0;
                for sc in scores.iter_mut() {
                    *sc = (*sc - max).exp();
                    denom += *sc;
                }
                for j in 0..n {
                    let p = scores[j] / denom;
                    probs[h * n + j] = p;
                    for (o, vv) in attn[lo..hi].iter_mut().zip(&la.v[j][lo..hi]) {
                        *o += p * vv;
                    }
                }
            }
            let proj = matvec(model.p(&lr.wo), model.p(&lr.bo), &attn);
            let res1: Vec<f64> = h_in[i].iter().zip(&proj).map(|(a, b)| a + b).collect();
            let (a2, st2) = layer_norm_full(model.p(&lr.ln2_g), model.p(&lr.ln2_b), &res1);
            let pre = matvec(model.p(&lr.w1), model.p(&lr.b1), &a2);
            let act: Vec<f64> = pre.iter().map(|&x| gelu(x)).collect();
            let ffn = matvec(model.p(&lr.w2), model.p(&lr.b2), &act);
            h_out.push(res1.iter().zip(&ffn).map(|(a, b)| a + b).collect::<Vec<f64>>());
            la.probs.push(probs);
            la.attn.push(attn);
            la.res1.push(res1);
            la.ln2_stats.push(st2);
            la.a2.push(a2);
            la.ffn_pre.push(pre);
        }
        layers.push(la);
        streams.push(h_out);
    }

    let mut lnf_stats = Vec::with_capacity(s);
    let mut hf = Vec::with_capacity(s);
    let mut logits = Vec::with_capacity(s);
    let last = streams.last().unwrap().clone();
    for x in &last {
        let (y, st) = layer_norm_full(
            model.p(&model.layout.lnf_g),
            model.p(&model.layout.lnf_b),
            x,
        );
        logits.push(matvec(
            model.p(&model.layout.w_out),
            model.p(&model.layout.b_out),
            &y,
        ));
        hf.push(y);
        lnf_stats.push(st);
    }

    FullActs {
        seq: seq.to_vec(),
        streams,
        layers,
        lnf_stats,
        hf,
        logits,
    }
}

fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + x.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

/// Total next-token negative log-likelihood of the sequence.
pub(crate) fn sequence_nll(acts: &FullActs) -> f64 {
    let mut nll = 0.0;
    for i in 0..acts.seq.len() - 1 {
        let target = acts.seq[i + 1] as usize;
        nll += log_sum_exp(&acts.logits[i]) - acts.logits[i][target];
    }
    nll
}

fn ln_backward(
    x: &[f64],
    stats: (f64, f64),
    g: &[f64],
    dy: &[f64],
    dx: &mut [f64],
    grad: &mut [f64],
    g_range: &std::ops::Range<usize>,
    b_range: &std::ops::Range<usize>,
) {
    let (mean, rstd) = stats;
    let d = x.len() as f64;
    let mut sum_gdy = 0.0;
    let mut sum_gdyx = 0.0;
    for i in 0..x.len() {
        let xhat = (x[i] - mean) * rstd;
        let gdy = g[i] * dy[i];
        sum_gdy += gdy;
        sum_gdyx += gdy * xhat;
        grad[g_range.start + i] += dy[i] * xhat;
        grad[b_range.start + i] += dy[i];
    }
    let m1 = sum_gdy / d;
    let m2 = sum_gdyx / d;
    for i in 0..x.len() {
        let xhat = (x[i] - mean) * rstd;
        dx[i] += rstd * (g[i] * dy[i] - m1 - xhat * m2);
    }
}

/// dW += dy (x)^T, dx += W^T dy, db += dy, for y = W x + b. Weight and bias
/// gradients accumulate into `grad` at the given layout ranges.
fn affine_backward(
    w: &[f64],
    x: &[f64],
    dy: &[f64],
    grad: &mut [f64],
    w_range: &std::ops::Range<usize>,
    b_range: &std::ops::Range<usize>,
    dx: &mut [f64],
) {
    let d_in = x.len();
    for (r, &dyr) in dy.iter().enumerate() {
        grad[b_range.start + r] += dyr;
        let g_row = &mut grad[w_range.start + r * d_in..w_range.start + (r + 1) * d_in];
        let w_row = &w[r * d_in..(r + 1) * d_in];
        for c in 0..d_in {
            g_row[c] += dyr * x[c];
            dx[c] += dyr * w_row[c];
        }
    }
}

/// Accumulates d(loss)/d(params) into `grad` for one sequence, where the
/// loss is `scale` times the summed next-token NLL.
pub(crate) fn backward_full(model: &LmModel, acts: &FullActs, scale: f64, grad: &mut [f64]) {
    let hy = *model.hyper();
    let d = hy.d_model;
    let n_heads = hy.n_heads;
    let dh = d / n_heads;
    let att_scale = 1.0 / (dh as f64).sqrt();
    let s = acts.seq.len();
    let lay = &model.layout;

    let mut d_stream = vec![vec![0.0; d]; s];
    // Output head and final norm.
    for i in 0..s - 1 {
        let target = acts.seq[i + 1] as usize;
        let lse = log_sum_exp(&acts.logits[i]);
        let mut dhf = vec![0.0; d];
        for v in 0..model.vocab_len() {
            let p = (acts.logits[i][v] - lse).exp();
            let mut dl = p * scale;
            if v == target {
                dl -= scale;
            }
            grad[lay.b_out.start + v] += dl;
            let w_row = lay.w_out.start + v * d;
            for c in 0..d {
                grad[w_row + c] += dl * acts.hf[i][c];
                dhf[c] += dl * model.params[w_row + c];
            }
        }
        let x = &acts.streams[hy.n_layers][i];
        ln_backward(
            x,
            acts.lnf_stats[i],
            model.p(&lay.lnf_g),
            &dhf,
            &mut d_stream[i],
            grad,
            &lay.lnf_g,
            &lay.lnf_b,
        );
    }

    for (l, lr) in lay.layers.iter().enumerate().rev() {
        let la = &acts.layers[l];
        let h_in = &acts.streams[l];
        let mut d_res1 = vec![vec![0.0; d]; s];
        let mut d_prev = vec![vec![0.0; d]; s];

        // FFN and LN2, positions independent.
        for i in 0..s {
            let dtop = d_stream[i].clone();
            for c in 0..d {
                d_res1[i][c] += dtop[c];
            }
            let act: Vec<f64> = la.ffn_pre[i].iter().map(|&x| gelu(x)).collect();
            let mut dact = vec![0.0; hy.d_ff];
            affine_backward(model.p(&lr.w2), &act, &dtop, grad, &lr.w2, &lr.b2, &mut dact);
            let dpre: Vec<f64> = dact
                .iter()
                .zip(&la.ffn_pre[i])
                .map(|(&da, &pre)| da * gelu_prime(pre))
                .collect();
            let mut da2 = vec![0.0; d];
            affine_backward(model.p(&lr.w1), &la.a2[i], &dpre, grad, &lr.w1, &lr.b1, &mut da2);
            ln_backward(
                &la.res1[i],
                la.ln2_stats[i],
                model.p(&lr.ln2_g),
                &da2,
                &mut d_res1[i],
                grad,
                &lr.ln2_g,
                &lr.ln2_b,
            );
        }

        // Attention output projection; residual into the layer input.
        let mut d_attn = vec![vec![0.0; d]; s];
        for i in 0..s {
            for c in 0..d {
                d_prev[i][c] += d_res1[i][c];
            }
            affine_backward(
                model.p(&lr.wo),
                &la.attn[i],
                &d_res1[i],
                grad,
                &lr.wo,
                &lr.bo,
                &mut d_attn[i],
            );
        }

        // Attention core: accumulate dq per query and dk/dv across queries.
        let mut dq = vec![vec![0.0; d]; s];
        let mut dk = vec![vec![0.0; d]; s];
        let mut dv = vec![vec![0.0; d]; s];
        for i in 0..s {
            let n = i + 1;
            for h in 0..n_heads {
                let lo = h * dh;
                let probs = &la.probs[i][h * n..(h + 1) * n];
                let mut dp = vec![0.0; n];
                for j in 0..n {
                    let mut acc = 0.0;
                    for c in 0..dh {
                        dv[j][lo + c] += probs[j] * d_attn[i][lo + c];
                        acc += la.v[j][lo + c] * d_attn[i][lo + c];
                    }
                    dp[j] = acc;
                }
                let dot_pp: f64 = dp.iter().zip(probs).map(|(a, b)| a * b).sum();
                for j in 0..n {
                    let ds = probs[j] * (dp[j] - dot_pp) * att_scale;
                    for c in 0..dh {
                        dq[i][lo + c] += ds * la.k[j][lo + c];
                        dk[j][lo + c] += ds * la.q[i][lo + c];
                    }
                }
            }
        }

        // q/k/v projections back to the normed input, then LN1.
        for i in 0..s {
            let mut da1 = vec![0.0; d];
            affine_backward(model.p(&lr.wq), &la.a1[i], &dq[i], grad, &lr.wq, &lr.bq, &mut da1);
            affine_backward(model.p(&lr.wk), &la.a1[i], &dk[i], grad, &lr.wk, &lr.bk, &mut da1);
            affine_backward(model.p(&lr.wv), &la.a1[i], &dv[i], grad, &lr.wv, &lr.bv, &mut da1);
            ln_backward(
                &h_in[i],
                la.ln1_stats[i],
                model.p(&lr.ln1_g),
                &da1,
                &mut d_prev[i],
                grad,
                &lr.ln1_g,
                &lr.ln1_b,
            );
        }
        d_stream = d_prev;
    }

    // Embedding tables.
    for (i, &t) in acts.seq.iter().enumerate() {
        let tok_base = lay.tok_emb.start + t as usize * d;
        let pos_base = lay.pos_emb.start + i * d;
        for c in 0..d {
            grad[tok_base + c] += d_stream[i][c];
            grad[pos_base + c] += d_stream[i][c];
        }
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    lr: f64,
}

impl Adam {
    fn new(n: usize, lr: f64) -> Adam {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t as i32);
        let c2 = 1.0 - B2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * g;
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + EPS);
        }
    }
}
