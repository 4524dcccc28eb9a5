//! Reverse-mode differentiation of decode-time rewards with respect to
//! cached attention keys and values.
//!
//! This is a deliberately small tape, not a general autodiff framework: it
//! covers exactly the operations a guided-decoding reward needs (the
//! transformer requery path plus a handful of scalar reductions). Nodes are
//! vector-valued; scalars are length-1 vectors. Leaves are cache entries;
//! model weights are constants, so no weight gradients are ever computed.
//!
//! Forward evaluation runs eagerly through the same kernels as the plain
//! requery path, which keeps tape values bit-identical to [`requery`]
//! (checked by tests).
//!
//! [`requery`]: crate::lm::requery

use std::ops::Range;

use crate::lm::math;
use crate::lm::{KvCache, LmError, LmModel};

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TapeNode(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Slot {
    K { layer: usize, pos: usize },
    V { layer: usize, pos: usize },
}

enum Op {
    /// Cache entry; the value was snapshotted when the leaf was created.
    Leaf(Slot),
    /// Fixed vector; no gradient flows into it.
    Const,
    /// y = W x + b with model weights; the bias needs no backward state.
    Affine { w: Range<usize>, x: TapeNode },
    Add(TapeNode, TapeNode),
    LayerNorm { g: Range<usize>, x: TapeNode },
    Gelu(TapeNode),
    /// Multi-head attention of one query over per-position key/value nodes.
    Attention { q: TapeNode, keys: Vec<TapeNode>, values: Vec<TapeNode> },
    SoftmaxT { x: TapeNode, t: f64 },
    /// Expected embedding under a distribution: sum_v p[v] * emb[v].
    EmbExpect { p: TapeNode },
    /// Cosine similarity against a fixed token embedding (scalar output).
    CosEmb { x: TapeNode, token: u32 },
    /// ln(eps + (1 + x) / 2) for scalar x.
    LogShiftHalf { x: TapeNode, eps: f64 },
    /// Scalar x[idx].
    Pick { x: TapeNode, idx: usize },
    /// Elementwise ln(max(x, floor)); gradient is zero where clamped.
    LogFloor { x: TapeNode, floor: f64 },
    /// Scalar dot with a fixed vector.
    DotConst { x: TapeNode, c: Vec<f64> },
    /// Scalar linear combination: sum_i coef[i] * xs[i] (plus a constant).
    LinComb { xs: Vec<TapeNode>, coef: Vec<f64> },
    MulScalar(TapeNode, TapeNode),
}

enum Aux {
    None,
    LnStats(f64, f64),
    /// Attention probabilities, laid out `[head * n_pos + j]`.
    Probs(Vec<f64>),
    /// (norm of x, cosine value) for CosEmb.
    Cos(f64, f64),
}

/// Leaf handles for every entry of a cache, `[layer][pos]`.
pub struct CacheLeaves {
    pub(crate) k: Vec<Vec<TapeNode>>,
    pub(crate) v: Vec<Vec<TapeNode>>,
}

impl CacheLeaves {
    pub fn key(&self, layer: usize, pos: usize) -> TapeNode {
        self.k[layer][pos]
    }

    pub fn value(&self, layer: usize, pos: usize) -> TapeNode {
        self.v[layer][pos]
    }

    pub fn n_pos(&self) -> usize {
        self.k.first().map_or(0, |l| l.len())
    }
}

/// Gradient of a scalar with respect to every cache entry; same shape as
/// the cache itself.
#[derive(Clone, Debug)]
pub struct CacheGrad {
    k: Vec<Vec<Vec<f64>>>,
    v: Vec<Vec<Vec<f64>>>,
}

impl CacheGrad {
    fn zeros(n_layers: usize, n_pos: usize, d: usize) -> CacheGrad {
        CacheGrad {
            k: vec![vec![vec![0.0; d]; n_pos]; n_layers],
            v: vec![vec![vec![0.0; d]; n_pos]; n_layers],
        }
    }

    pub fn key(&self, layer: usize, pos: usize) -> &[f64] {
        &self.k[layer][pos]
    }

    pub fn value(&self, layer: usize, pos: usize) -> &[f64] {
        &self.v[layer][pos]
    }

    pub fn n_layers(&self) -> usize {
        self.k.len()
    }

    pub fn n_pos(&self) -> usize {
        self.k.first().map_or(0, |l| l.len())
    }

    /// Frobenius norm over all entries.
    pub fn frobenius_norm(&self) -> f64 {
        let mut acc = 0.0;
        for grid in [&self.k, &self.v] {
            for layer in grid {
                for vec in layer {
                    for &x in vec {
                        acc += x * x;
                    }
                }
            }
        }
        acc.sqrt()
    }

    pub fn is_finite(&self) -> bool {
        [&self.k, &self.v].iter().all(|grid| {
            grid.iter()
                .all(|layer| layer.iter().all(|v| v.iter().all(|x| x.is_finite())))
        })
    }

    /// cache += scale * grad, entry by entry.
    pub fn apply_scaled(&self, cache: &mut KvCache, scale: f64) {
        for layer in 0..self.k.len() {
            for pos in 0..self.k[layer].len() {
                for (c, g) in cache.key_mut(layer, pos).iter_mut().zip(&self.k[layer][pos]) {
                    *c += scale * g;
                }
                for (c, g) in cache
                    .value_mut(layer, pos)
                    .iter_mut()
                    .zip(&self.v[layer][pos])
                {
                    *c += scale * g;
                }
            }
        }
    }
}

/// A reverse-mode tape rooted at one model and one cache snapshot.
pub struct RewardTape<'m> {
    model: &'m LmModel,
    ops: Vec<Op>,
    vals: Vec<Vec<f64>>,
    aux: Vec<Aux>,
}

impl<'m> RewardTape<'m> {
    pub fn new(model: &'m LmModel) -> RewardTape<'m> {
        RewardTape {
            model,
            ops: Vec::new(),
            vals: Vec::new(),
            aux: Vec::new(),
        }
    }

    /// Creates one leaf per cache entry, snapshotting current values.
    pub fn cache_leaves(&mut self, cache: &KvCache) -> CacheLeaves {
        let mut k = Vec::with_capacity(cache.n_layers());
        let mut v = Vec::with_capacity(cache.n_layers());
        for layer in 0..cache.n_layers() {
            let mut krow = Vec::with_capacity(cache.len());
            let mut vrow = Vec::with_capacity(cache.len());
            for pos in 0..cache.len() {
                krow.push(self.push(
                    Op::Leaf(Slot::K { layer, pos }),
                    cache.key(layer, pos).to_vec(),
                    Aux::None,
                ));
                vrow.push(self.push(
                    Op::Leaf(Slot::V { layer, pos }),
                    cache.value(layer, pos).to_vec(),
                    Aux::None,
                ));
            }
            k.push(krow);
            v.push(vrow);
        }
        CacheLeaves { k, v }
    }

    fn push(&mut self, op: Op, val: Vec<f64>, aux: Aux) -> TapeNode {
        self.ops.push(op);
        self.vals.push(val);
        self.aux.push(aux);
        TapeNode(self.ops.len() - 1)
    }

    pub fn value(&self, node: TapeNode) -> &[f64] {
        &self.vals[node.0]
    }

    pub fn scalar(&self, node: TapeNode) -> f64 {
        debug_assert_eq!(self.vals[node.0].len(), 1);
        self.vals[node.0][0]
    }

    pub fn constant(&mut self, v: Vec<f64>) -> TapeNode {
        self.push(Op::Const, v, Aux::None)
    }

    pub fn affine(&mut self, w: Range<usize>, b: Range<usize>, x: TapeNode) -> TapeNode {
        let mut out = Vec::new();
        math::affine(self.model.p(&w), self.model.p(&b), &self.vals[x.0], &mut out);
        self.push(Op::Affine { w, x }, out, Aux::None)
    }

    pub fn add(&mut self, a: TapeNode, b: TapeNode) -> TapeNode {
        let out = self.vals[a.0]
            .iter()
            .zip(&self.vals[b.0])
            .map(|(x, y)| x + y)
            .collect();
        self.push(Op::Add(a, b), out, Aux::None)
    }

    pub fn layer_norm(&mut self, g: Range<usize>, b: Range<usize>, x: TapeNode) -> TapeNode {
        let mut out = Vec::new();
        let stats = math::layer_norm(self.model.p(&g), self.model.p(&b), &self.vals[x.0], &mut out);
        self.push(Op::LayerNorm { g, x }, out, Aux::LnStats(stats.0, stats.1))
    }

    pub fn gelu(&mut self, x: TapeNode) -> TapeNode {
        let out = self.vals[x.0].iter().map(|&v| math::gelu(v)).collect();
        self.push(Op::Gelu(x), out, Aux::None)
    }

    pub fn attention(&mut self, q: TapeNode, keys: Vec<TapeNode>, values: Vec<TapeNode>) -> TapeNode {
        let kref: Vec<&[f64]> = keys.iter().map(|n| self.vals[n.0].as_slice()).collect();
        let vref: Vec<&[f64]> = values.iter().map(|n| self.vals[n.0].as_slice()).collect();
        let mut out = Vec::new();
        let mut probs = Vec::new();
        math::attention(
            &self.vals[q.0],
            &kref,
            &vref,
            self.model.hyper().n_heads,
            &mut out,
            Some(&mut probs),
        );
        self.push(Op::Attention { q, keys, values }, out, Aux::Probs(probs))
    }

    pub fn softmax_t(&mut self, x: TapeNode, t: f64) -> TapeNode {
        let mut out = Vec::new();
        math::softmax_t(&self.vals[x.0], t, &mut out);
        self.push(Op::SoftmaxT { x, t }, out, Aux::None)
    }

    pub fn emb_expect(&mut self, p: TapeNode) -> TapeNode {
        let d = self.model.hyper().d_model;
        let mut out = vec![0.0; d];
        for (v, &pv) in self.vals[p.0].iter().enumerate() {
            let row = self.model.embedding(v as u32);
            for (o, e) in out.iter_mut().zip(row) {
                *o += pv * e;
            }
        }
        self.push(Op::EmbExpect { p }, out, Aux::None)
    }

    pub fn cos_emb(&mut self, x: TapeNode, token: u32) -> TapeNode {
        let xv = &self.vals[x.0];
        let c = self.model.embedding(token);
        let nx = math::dot(xv, xv).sqrt();
        let nc = math::dot(c, c).sqrt();
        let cos = if nx > 0.0 && nc > 0.0 {
            math::dot(xv, c) / (nx * nc)
        } else {
            0.0
        };
        self.push(Op::CosEmb { x, token }, vec![cos], Aux::Cos(nx, cos))
    }

    pub fn log_shift_half(&mut self, x: TapeNode, eps: f64) -> TapeNode {
        let v = (eps + (1.0 + self.scalar(x)) / 2.0).ln();
        self.push(Op::LogShiftHalf { x, eps }, vec![v], Aux::None)
    }

    pub fn pick(&mut self, x: TapeNode, idx: usize) -> TapeNode {
        let v = self.vals[x.0][idx];
        self.push(Op::Pick { x, idx }, vec![v], Aux::None)
    }

    pub fn log_floor(&mut self, x: TapeNode, floor: f64) -> TapeNode {
        let out = self.vals[x.0].iter().map(|&v| v.max(floor).ln()).collect();
        self.push(Op::LogFloor { x, floor }, out, Aux::None)
    }

    pub fn dot_const(&mut self, x: TapeNode, c: Vec<f64>) -> TapeNode {
        let v = math::dot(&self.vals[x.0], &c);
        self.push(Op::DotConst { x, c }, vec![v], Aux::None)
    }

    pub fn lin_comb(&mut self, xs: Vec<TapeNode>, coef: Vec<f64>, bias: f64) -> TapeNode {
        debug_assert_eq!(xs.len(), coef.len());
        let v = bias
            + xs.iter()
                .zip(&coef)
                .map(|(n, c)| c * self.scalar(*n))
                .sum::<f64>();
        self.push(Op::LinComb { xs, coef }, vec![v], Aux::None)
    }

    pub fn mul(&mut self, a: TapeNode, b: TapeNode) -> TapeNode {
        let v = self.scalar(a) * self.scalar(b);
        self.push(Op::MulScalar(a, b), vec![v], Aux::None)
    }

    /// Rebuilds the requery forward pass as tape nodes: the distribution
    /// over the next token after the first `n_pos` positions, querying with
    /// `token` (the token at position `n_pos - 1`). Matches what
    /// [`crate::lm::requery`] plus [`crate::lm::softmax_with_temperature`]
    /// would produce on the same cache, bit for bit.
    pub fn requery_dist(
        &mut self,
        leaves: &CacheLeaves,
        token: u32,
        n_pos: usize,
        temperature: f64,
    ) -> TapeNode {
        debug_assert!(n_pos >= 1 && n_pos <= leaves.n_pos());
        let model = self.model;
        let pos = n_pos - 1;
        let h0: Vec<f64> = model
            .embedding(token)
            .iter()
            .zip(model.pos_embedding(pos))
            .map(|(a, b)| a + b)
            .collect();
        let mut h = self.constant(h0);
        let layers = model.layout.layers.clone();
        for (l, lr) in layers.iter().enumerate() {
            let a1 = self.layer_norm(lr.ln1_g.clone(), lr.ln1_b.clone(), h);
            let q = self.affine(lr.wq.clone(), lr.bq.clone(), a1);
            let keys = leaves.k[l][..n_pos].to_vec();
            let values = leaves.v[l][..n_pos].to_vec();
            let attn = self.attention(q, keys, values);
            let proj = self.affine(lr.wo.clone(), lr.bo.clone(), attn);
            h = self.add(h, proj);
            let a2 = self.layer_norm(lr.ln2_g.clone(), lr.ln2_b.clone(), h);
            let pre = self.affine(lr.w1.clone(), lr.b1.clone(), a2);
            let act = self.gelu(pre);
            let ffn = self.affine(lr.w2.clone(), lr.b2.clone(), act);
            h = self.add(h, ffn);
        }
        let lay = &model.layout;
        let hf = self.layer_norm(lay.lnf_g.clone(), lay.lnf_b.clone(), h);
        let logits = self.affine(lay.w_out.clone(), lay.b_out.clone(), hf);
        self.softmax_t(logits, temperature)
    }

    /// Reverse pass from a scalar `output` node; returns the gradient with
    /// respect to every cache leaf. The gradient grid has the shape of the
    /// cache the leaves were created from. Errors if any component is
    /// non-finite.
    pub fn backward(&self, output: TapeNode) -> Result<CacheGrad, LmError> {
        debug_assert_eq!(self.vals[output.0].len(), 1, "output must be scalar");
        let model = self.model;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.ops.len()];
        grads[output.0] = Some(vec![1.0]);

        let mut n_layers = 0;
        let mut n_pos = 0;
        for op in &self.ops {
            if let Op::Leaf(Slot::K { layer, pos } | Slot::V { layer, pos }) = op {
                n_layers = n_layers.max(layer + 1);
                n_pos = n_pos.max(pos + 1);
            }
        }
        let mut out = CacheGrad::zeros(n_layers, n_pos, model.hyper().d_model);

        for id in (0..=output.0).rev() {
            let dy = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            let add_to = |grads: &mut Vec<Option<Vec<f64>>>, node: TapeNode, contrib: &[f64]| {
                let slot = grads[node.0].get_or_insert_with(|| vec![0.0; contrib.len()]);
                for (a, b) in slot.iter_mut().zip(contrib) {
                    *a += b;
                }
            };
            match &self.ops[id] {
                Op::Leaf(slot) => {
                    let target = match slot {
                        Slot::K { layer, pos } => &mut out.k[*layer][*pos],
                        Slot::V { layer, pos } => &mut out.v[*layer][*pos],
                    };
                    for (t, g) in target.iter_mut().zip(&dy) {
                        *t += g;
                    }
                }
                Op::Const => {}
                Op::Affine { w, x, .. } => {
                    let d_in = self.vals[x.0].len();
                    let wm = model.p(w);
                    let mut dx = vec![0.0; d_in];
                    for (r, &dyr) in dy.iter().enumerate() {
                        let row = &wm[r * d_in..(r + 1) * d_in];
                        for c in 0..d_in {
                            dx[c] += dyr * row[c];
                        }
                    }
                    add_to(&mut grads, *x, &dx);
                }
                Op::Add(a, b) => {
                    add_to(&mut grads, *a, &dy);
                    add_to(&mut grads, *b, &dy);
                }
                Op::LayerNorm { g, x, .. } => {
                    let (mean, rstd) = match self.aux[id] {
                        Aux::LnStats(m, r) => (m, r),
                        _ => unreachable!(),
                    };
                    let xv = &self.vals[x.0];
                    let gm = model.p(g);
                    let d = xv.len() as f64;
                    let mut sum_gdy = 0.0;
                    let mut sum_gdyx = 0.0;
                    for i in 0..xv.len() {
                        let xhat = (xv[i] - mean) * rstd;
                        let gdy = gm[i] * dy[i];
                        sum_gdy += gdy;
                        sum_gdyx += gdy * xhat;
                    }
                    let m1 = sum_gdy / d;
                    let m2 = sum_gdyx / d;
                    let dx: Vec<f64> = (0..xv.len())
                        .map(|i| {
                            let xhat = (xv[i] - mean) * rstd;
                            rstd * (gm[i] * dy[i] - m1 - xhat * m2)
                        })
                        .collect();
                    add_to(&mut grads, *x, &dx);
                }
                Op::Gelu(x) => {
                    let dx: Vec<f64> = self.vals[x.0]
                        .iter()
                        .zip(&dy)
                        .map(|(&xi, &g)| math::gelu_prime(xi) * g)
                        .collect();
                    add_to(&mut grads, *x, &dx);
                }
                Op::Attention { q, keys, values } => {
                    let probs = match &self.aux[id] {
                        Aux::Probs(p) => p,
                        _ => unreachable!(),
                    };
                    let n_heads = model.hyper().n_heads;
                    let d = self.vals[q.0].len();
                    let dh = d / n_heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let n = keys.len();
                    let mut dq = vec![0.0; d];
                    let mut dk = vec![vec![0.0; d]; n];
                    let mut dv = vec![vec![0.0; d]; n];
                    for h in 0..n_heads {
                        let lo = h * dh;
                        let ph = &probs[h * n..(h + 1) * n];
                        let mut dp = vec![0.0; n];
                        for j in 0..n {
                            let vj = &self.vals[values[j].0][lo..lo + dh];
                            let mut acc = 0.0;
                            for c in 0..dh {
                                dv[j][lo + c] += ph[j] * dy[lo + c];
                                acc += vj[c] * dy[lo + c];
                            }
                            dp[j] = acc;
                        }
                        let dot_pp: f64 = dp.iter().zip(ph).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            let ds = ph[j] * (dp[j] - dot_pp) * scale;
                            let kj = &self.vals[keys[j].0][lo..lo + dh];
                            let qv = &self.vals[q.0][lo..lo + dh];
                            for c in 0..dh {
                                dq[lo + c] += ds * kj[c];
                                dk[j][lo + c] += ds * qv[c];
                            }
                        }
                    }
                    add_to(&mut grads, *q, &dq);
                    for (j, node) in keys.iter().enumerate() {
                        add_to(&mut grads, *node, &dk[j]);
                    }
                    for (j, node) in values.iter().enumerate() {
                        add_to(&mut grads, *node, &dv[j]);
                    }
                }
                Op::SoftmaxT { x, t } => {
                    let y = &self.vals[id];
                    let dot: f64 = dy.iter().zip(y).map(|(a, b)| a * b).sum();
                    let dx: Vec<f64> = y
                        .iter()
                        .zip(&dy)
                        .map(|(&yi, &gi)| yi * (gi - dot) / t)
                        .collect();
                    add_to(&mut grads, *x, &dx);
                }
                Op::EmbExpect { p } => {
                    let n = self.vals[p.0].len();
                    let mut dp = vec![0.0; n];
                    for (v, slot) in dp.iter_mut().enumerate() {
                        *slot = math::dot(model.embedding(v as u32), &dy);
                    }
                    add_to(&mut grads, *p, &dp);
                }
                Op::CosEmb { x, token } => {
                    let (nx, cos) = match self.aux[id] {
                        Aux::Cos(n, c) => (n, c),
                        _ => unreachable!(),
                    };
                    if nx > 0.0 {
                        let xv = &self.vals[x.0];
                        let c = model.embedding(*token);
                        let nc = math::dot(c, c).sqrt();
                        if nc > 0.0 {
                            let dx: Vec<f64> = xv
                                .iter()
                                .zip(c)
                                .map(|(&xi, &ci)| dy[0] * (ci / (nx * nc) - cos * xi / (nx * nx)))
                                .collect();
                            add_to(&mut grads, *x, &dx);
                        }
                    }
                }
                Op::LogShiftHalf { x, eps } => {
                    let xv = self.vals[x.0][0];
                    let dx = dy[0] * 0.5 / (eps + (1.0 + xv) / 2.0);
                    add_to(&mut grads, *x, &[dx]);
                }
                Op::Pick { x, idx } => {
                    let mut dx = vec![0.0; self.vals[x.0].len()];
                    dx[*idx] = dy[0];
                    add_to(&mut grads, *x, &dx);
                }
                Op::LogFloor { x, floor } => {
                    let dx: Vec<f64> = self.vals[x.0]
                        .iter()
                        .zip(&dy)
                        .map(|(&xi, &g)| if xi > *floor { g / xi } else { 0.0 })
                        .collect();
                    add_to(&mut grads, *x, &dx);
                }
                Op::DotConst { x, c } => {
                    let dx: Vec<f64> = c.iter().map(|&ci| ci * dy[0]).collect();
                    add_to(&mut grads, *x, &dx);
                }
                Op::LinComb { xs, coef } => {
                    for (node, &c) in xs.iter().zip(coef) {
                        add_to(&mut grads, *node, &[c * dy[0]]);
                    }
                }
                Op::MulScalar(a, b) => {
                    let av = self.scalar(*a);
                    let bv = self.scalar(*b);
                    add_to(&mut grads, *a, &[bv * dy[0]]);
                    add_to(&mut grads, *b, &[av * dy[0]]);
                }
            }
        }

        if !out.is_finite() {
            return Err(LmError::NonFiniteGradient);
        }
        Ok(out)
    }
}

/// Builds a scalar reward over the cache with `build` and returns its value
/// together with its gradient with respect to every cache entry.
pub fn reward_gradient<F>(
    model: &LmModel,
    cache: &KvCache,
    build: F,
) -> Result<(f64, CacheGrad), LmError>
where
    F: FnOnce(&mut RewardTape<'_>, &CacheLeaves) -> TapeNode,
{
    let mut tape = RewardTape::new(model);
    let leaves = tape.cache_leaves(cache);
    let root = build(&mut tape, &leaves);
    let value = tape.scalar(root);
    if !value.is_finite() {
        return Err(LmError::NonFiniteGradient);
    }
    let grad = tape.backward(root)?;
    Ok((value, grad))
}

/// Forward-only evaluation of the same kind of reward closure.
pub fn reward_value<F>(model: &LmModel, cache: &KvCache, build: F) -> f64
where
    F: FnOnce(&mut RewardTape<'_>, &CacheLeaves) -> TapeNode,
{
    let mut tape = RewardTape::new(model);
    let leaves = tape.cache_leaves(cache);
    let root = build(&mut tape, &leaves);
    tape.scalar(root)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{PreprocessConfig, Vocab};
    use crate::lm::{requery, softmax_with_temperature, step, LmHyper};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model_and_cache(seed: u64, n_tokens: usize) -> (LmModel, KvCache, Vec<u32>) {
        let hyper = LmHyper {
            d_model: 12,
            n_layers: 2,
            n_heads: 2,
            ctx_len: 8,
            d_ff: 20,
        };
        let vocab = Vocab::from_tokens((0..9).map(|i| format!("t{i}"))).unwrap();
        let model =
            LmModel::init(hyper, vocab, PreprocessConfig::without_stopwords(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        let mut cache = KvCache::for_model(&model);
        let mut tokens = vec![0u32];
        step(&model, 0, &mut cache).unwrap();
        for _ in 1..n_tokens {
            let t = rng.random_range(0..model.vocab_len() as u32);
            step(&model, t, &mut cache).unwrap();
            tokens.push(t);
        }
        (model, cache, tokens)
    }

    /// A composite scalar exercising every op the guided reward uses.
    fn composite(tape: &mut RewardTape<'_>, leaves: &CacheLeaves, tokens: &[u32]) -> TapeNode {
        let t = tokens.len();
        let dist = tape.requery_dist(leaves, tokens[t - 1], t, 0.8);
        let e = tape.emb_expect(dist);
        let cos = tape.cos_emb(e, 4);
        let gain = tape.log_shift_half(cos, 0.01);
        let picked = tape.pick(dist, 3);
        let older = tape.requery_dist(leaves, tokens[t - 2], t - 1, 0.8);
        let logs = tape.log_floor(older, 1e-12);
        let klish = tape.dot_const(logs, vec![-0.25; logs_len(tape, logs)]);
        let prod = tape.mul(gain, picked);
        tape.lin_comb(vec![prod, klish, gain], vec![1.0, 0.5, 0.25], 0.1)
    }

    fn logs_len(tape: &RewardTape<'_>, node: TapeNode) -> usize {
        tape.value(node).len()
    }

    #[test]
    fn tape_requery_matches_plain_requery_bitwise() {
        let (model, cache, tokens) = model_and_cache(11, 5);
        let plain = requery(&model, *tokens.last().unwrap(), &cache).unwrap();
        let plain_dist = softmax_with_temperature(&plain, 0.7);
        let mut tape = RewardTape::new(&model);
        let leaves = tape.cache_leaves(&cache);
        let dist = tape.requery_dist(&leaves, *tokens.last().unwrap(), tokens.len(), 0.7);
        for (a, b) in tape.value(dist).iter().zip(&plain_dist) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn tape_requery_matches_historical_positions() {
        // Rebuilding the forward for an earlier step must reproduce what a
        // fresh requery on a truncated cache would say.
        let (model, cache, tokens) = model_and_cache(13, 6);
        let mut short = KvCache::for_model(&model);
        for &t in &tokens[..4] {
            step(&model, t, &mut short).unwrap();
        }
        let plain = requery(&model, tokens[3], &short).unwrap();
        let plain_dist = softmax_with_temperature(&plain, 1.0);
        let mut tape = RewardTape::new(&model);
        let leaves = tape.cache_leaves(&cache);
        let dist = tape.requery_dist(&leaves, tokens[3], 4, 1.0);
        for (a, b) in tape.value(dist).iter().zip(&plain_dist) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn composite_gradient_matches_finite_differences() {
        let (model, mut cache, tokens) = model_and_cache(7, 5);
        let (value, grad) =
            reward_gradient(&model, &cache, |t, l| composite(t, l, &tokens)).unwrap();
        assert!(value.is_finite());

        let h = 1e-6;
        let mut checked = 0usize;
        for layer in 0..cache.n_layers() {
            for pos in 0..cache.len() {
                for kind in 0..2 {
                    for dim in 0..model.hyper().d_model {
                        let orig = if kind == 0 {
                            cache.key(layer, pos)[dim]
                        } else {
                            cache.value(layer, pos)[dim]
                        };
                        let set = |c: &mut KvCache, val: f64| {
                            if kind == 0 {
                                c.key_mut(layer, pos)[dim] = val;
                            } else {
                                c.value_mut(layer, pos)[dim] = val;
                            }
                        };
                        set(&mut cache, orig + h);
                        let up = reward_value(&model, &cache, |t, l| composite(t, l, &tokens));
                        set(&mut cache, orig - h);
                        let down = reward_value(&model, &cache, |t, l| composite(t, l, &tokens));
                        set(&mut cache, orig);
                        let fd = (up - down) / (2.0 * h);
                        let an = if kind == 0 {
                            grad.key(layer, pos)[dim]
                        } else {
                            grad.value(layer, pos)[dim]
                        };
                        let tol = 1e-8 + 1e-5 * an.abs().max(fd.abs());
                        assert!(
                            (fd - an).abs() <= tol,
                            "layer {layer} pos {pos} kind {kind} dim {dim}: fd {fd} vs {an}"
                        );
                        checked += 1;
                    }
                }
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn log_floor_gradient_is_zero_below_floor() {
        let (model, cache, _) = model_and_cache(3, 2);
        let (_, grad) = reward_gradient(&model, &cache, |tape, leaves| {
            let x = leaves.key(0, 0);
            // Shift entries so some fall below the floor.
            let floored = tape.log_floor(x, 0.05);
            let n = tape.value(floored).len();
            tape.dot_const(floored, vec![1.0; n])
        })
        .unwrap();
        let key = cache.key(0, 0);
        for (dim, &x) in key.iter().enumerate() {
            let g = grad.key(0, 0)[dim];
            if x <= 0.05 {
                assert_eq!(g, 0.0, "dim {dim} below floor must have zero grad");
            } else {
                assert!((g - 1.0 / x).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn frobenius_norm_matches_hand_computation() {
        let (model, cache, _) = model_and_cache(5, 2);
        let (_, grad) = reward_gradient(&model, &cache, |tape, leaves| {
            let k = leaves.key(0, 0);
            tape.pick(k, 0)
        })
        .unwrap();
        // Only one entry of one leaf gets gradient 1.
        assert!((grad.frobenius_norm() - 1.0).abs() < 1e-12);
        assert_eq!(grad.key(0, 0)[0], 1.0);
        assert_eq!(grad.key(1, 0)[0], 0.0);
    }

    #[test]
    fn apply_scaled_perturbs_cache() {
        let (model, mut cache, _) = model_and_cache(6, 3);
        let before = cache.key(0, 1)[2];
        let (_, grad) = reward_gradient(&model, &cache, |tape, leaves| {
            let k = leaves.key(0, 1);
            tape.pick(k, 2)
        })
        .unwrap();
        grad.apply_scaled(&mut cache, 0.5);
        assert!((cache.key(0, 1)[2] - (before + 0.5)).abs() < 1e-15);
    }

    #[test]
    fn unused_leaves_get_zero_gradient() {
        let (model, cache, tokens) = model_and_cache(9, 4);
        // Reward touching only the first 2 positions: later leaves are dead.
        let (_, grad) = reward_gradient(&model, &cache, |tape, leaves| {
            let dist = tape.requery_dist(leaves, tokens[1], 2, 1.0);
            tape.pick(dist, 0)
        })
        .unwrap();
        for layer in 0..cache.n_layers() {
            for pos in 2..cache.len() {
                assert!(grad.key(layer, pos).iter().all(|&g| g == 0.0));
                assert!(grad.value(layer, pos).iter().all(|&g| g == 0.0));
            }
        }
    }
}
