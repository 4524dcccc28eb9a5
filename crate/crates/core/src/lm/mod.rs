//! A small causal transformer language model with an externally visible,
//! externally *editable* attention cache.
//!
//! Decoding exposes two entry points: [`step`] appends a token's key/value
//! vectors to the cache and returns next-token logits, while [`requery`]
//! recomputes those logits from the cache as it currently stands, without
//! writing anything. Guided generation perturbs cached vectors between the
//! two, so `requery` must see exactly what `step` wrote; both run through
//! the same kernels and agree bit-for-bit on an untouched cache.
//!
//! Everything on this path is `f64`: gradient checks against central
//! finite differences need more headroom than `f32` offers.

mod autodiff;
pub(crate) mod math;
mod ngram;
mod train;

pub use autodiff::{reward_gradient, reward_value, CacheGrad, CacheLeaves, RewardTape, TapeNode};
pub use ngram::{train_ngram, ngram_perplexity, NgramLm};
pub use train::{nn_perplexity, train_lm, train_lm_traced, TrainLmConfig};

use std::fs;
use std::ops::Range;
use std::path::Path;

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{CorpusError, PreprocessConfig, Vocab};

#[derive(Debug, Error)]
pub enum LmError {
    #[error("context window exceeded: position {pos} >= {ctx_len}")]
    ContextOverflow { pos: usize, ctx_len: usize },
    #[error("token id {0} out of vocabulary range")]
    BadToken(u32),
    #[error("invalid model configuration: {0}")]
    BadConfig(String),
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },
    #[error("no trainable sequences after preprocessing")]
    NoSequences,
    #[error("perplexity undefined: no scoring events")]
    NoEvents,
    #[error("gradient is not finite")]
    NonFiniteGradient,
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Architecture hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LmHyper {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ctx_len: usize,
    pub d_ff: usize,
}

impl Default for LmHyper {
    fn default() -> Self {
        LmHyper {
            d_model: 64,
            n_layers: 2,
            n_heads: 2,
            ctx_len: 32,
            d_ff: 256,
        }
    }
}

impl LmHyper {
    pub fn validate(&self) -> Result<(), LmError> {
        if self.d_model == 0 || self.n_layers == 0 || self.n_heads == 0 || self.ctx_len == 0 {
            return Err(LmError::BadConfig("all dimensions must be positive".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(LmError::BadConfig(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_ff == 0 {
            return Err(LmError::BadConfig("d_ff must be positive".into()));
        }
        Ok(())
    }
}

/// Parameter slice ranges inside the flat parameter vector. The order here
/// is the on-disk checkpoint order.
#[derive(Clone, Debug)]
pub(crate) struct LayerRanges {
    pub ln1_g: Range<usize>,
    pub ln1_b: Range<usize>,
    pub wq: Range<usize>,
    pub bq: Range<usize>,
    pub wk: Range<usize>,
    pub bk: Range<usize>,
    pub wv: Range<usize>,
    pub bv: Range<usize>,
    pub wo: Range<usize>,
    pub bo: Range<usize>,
    pub ln2_g: Range<usize>,
    pub ln2_b: Range<usize>,
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
}

#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub tok_emb: Range<usize>,
    pub pos_emb: Range<usize>,
    pub layers: Vec<LayerRanges>,
    pub lnf_g: Range<usize>,
    pub lnf_b: Range<usize>,
    pub w_out: Range<usize>,
    pub b_out: Range<usize>,
    pub total: usize,
}

impl Layout {
    fn new(hyper: &LmHyper, vocab_len: usize) -> Layout {
        let d = hyper.d_model;
        let mut at = 0usize;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let tok_emb = take(vocab_len * d);
        let pos_emb = take(hyper.ctx_len * d);
        let mut layers = Vec::with_capacity(hyper.n_layers);
        for _ in 0..hyper.n_layers {
            layers.push(LayerRanges {
                ln1_g: take(d),
                ln1_b: take(d),
                wq: take(d * d),
                bq: take(d),
                wk: take(d * d),
                bk: take(d),
                wv: take(d * d),
                bv: take(d),
                wo: take(d * d),
                bo: take(d),
                ln2_g: take(d),
                ln2_b: take(d),
                w1: take(hyper.d_ff * d),
                b1: take(hyper.d_ff),
                w2: take(d * hyper.d_ff),
                b2: take(d),
            });
        }
        let lnf_g = take(d);
        let lnf_b = take(d);
        let w_out = take(vocab_len * d);
        let b_out = take(vocab_len);
        Layout {
            tok_emb,
            pos_emb,
            layers,
            lnf_g,
            lnf_b,
            w_out,
            b_out,
            total: at,
        }
    }
}

/// The language model: a pre-LN causal transformer decoder with learned
/// positional embeddings, carrying its vocabulary and preprocessing rules
/// so checkpoints are self-contained.
#[derive(Clone, Debug)]
pub struct LmModel {
    hyper: LmHyper,
    vocab: Vocab,
    preprocess: PreprocessConfig,
    pub(crate) params: Vec<f64>,
    pub(crate) layout: Layout,
}

impl LmModel {
    /// A freshly initialized (untrained) model: weights and embeddings are
    /// seeded Gaussian noise (sd 0.02), biases zero, norm scales one.
    pub fn init(
        hyper: LmHyper,
        vocab: Vocab,
        preprocess: PreprocessConfig,
        seed: u64,
    ) -> Result<LmModel, LmError> {
        hyper.validate()?;
        let layout = Layout::new(&hyper, vocab.len());
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill_normal = |r: &Range<usize>, p: &mut [f64]| {
            for v in &mut p[r.clone()] {
                *v = 0.02 * normal_sample(&mut rng);
            }
        };
        fill_normal(&layout.tok_emb, &mut params);
        fill_normal(&layout.pos_emb, &mut params);
        for l in &layout.layers {
            for r in [&l.wq, &l.wk, &l.wv, &l.wo, &l.w1, &l.w2] {
                fill_normal(r, &mut params);
            }
            for r in [&l.ln1_g, &l.ln2_g] {
                params[r.clone()].fill(1.0);
            }
        }
        params[layout.lnf_g.clone()].fill(1.0);
        fill_normal(&layout.w_out, &mut params);
        Ok(LmModel {
            hyper,
            vocab,
            preprocess,
            params,
            layout,
        })
    }

    pub fn hyper(&self) -> &LmHyper {
        &self.hyper
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn preprocess_config(&self) -> &PreprocessConfig {
        &self.preprocess
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab.len()
    }

    pub(crate) fn p(&self, r: &Range<usize>) -> &[f64] {
        &self.params[r.clone()]
    }

    /// Token embedding row.
    pub fn embedding(&self, token: u32) -> &[f64] {
        let d = self.hyper.d_model;
        let base = self.layout.tok_emb.start + token as usize * d;
        &self.params[base..base + d]
    }

    pub(crate) fn pos_embedding(&self, pos: usize) -> &[f64] {
        let d = self.hyper.d_model;
        let base = self.layout.pos_emb.start + pos * d;
        &self.params[base..base + d]
    }

    fn check_token(&self, token: u32) -> Result<(), LmError> {
        if (token as usize) < self.vocab.len() {
            Ok(())
        } else {
            Err(LmError::BadToken(token))
        }
    }

    /// Serializes the model: a versioned header (architecture, vocabulary,
    /// preprocessing rules) followed by the parameter block as little-endian
    /// f64 in layout order.
    pub fn save(&self, path: &Path) -> Result<(), LmError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<LmModel, LmError> {
        let bytes = fs::read(path)?;
        LmModel::from_bytes(&bytes)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        push_u32(&mut out, CHECKPOINT_VERSION);
        for v in [
            self.hyper.d_model,
            self.hyper.n_layers,
            self.hyper.n_heads,
            self.hyper.ctx_len,
            self.hyper.d_ff,
        ] {
            push_u32(&mut out, v as u32);
        }
        let words = self.vocab.words();
        push_u32(&mut out, words.len() as u32);
        for w in words {
            push_str(&mut out, w);
        }
        push_u32(&mut out, self.preprocess.max_tokens as u32);
        let flags = (self.preprocess.strip_punctuation as u8)
            | (self.preprocess.drop_hashtags as u8) << 1
            | (self.preprocess.drop_urls as u8) << 2;
        out.push(flags);
        let mut stopwords: Vec<&String> = self.preprocess.stopwords().iter().collect();
        stopwords.sort();
        push_u32(&mut out, stopwords.len() as u32);
        for w in stopwords {
            push_str(&mut out, w);
        }
        push_u32(&mut out, self.params.len() as u32);
        for v in &self.params {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<LmModel, LmError> {
        let mut r = ByteReader::new(bytes);
        let magic = r.take(4)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(LmError::Checkpoint(format!(
                "bad magic {magic:?}, not a model checkpoint"
            )));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(LmError::Checkpoint(format!(
                "unsupported version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let hyper = LmHyper {
            d_model: r.u32()? as usize,
            n_layers: r.u32()? as usize,
            n_heads: r.u32()? as usize,
            ctx_len: r.u32()? as usize,
            d_ff: r.u32()? as usize,
        };
        hyper.validate().map_err(|e| LmError::Checkpoint(e.to_string()))?;
        let n_words = r.u32()? as usize;
        let mut words = Vec::with_capacity(n_words);
        for _ in 0..n_words {
            words.push(r.string()?);
        }
        let vocab =
            Vocab::from_tokens(words).map_err(|e| LmError::Checkpoint(e.to_string()))?;
        let max_tokens = r.u32()? as usize;
        let flags = r.u8()?;
        let n_stop = r.u32()? as usize;
        let mut stopwords = Vec::with_capacity(n_stop);
        for _ in 0..n_stop {
            stopwords.push(r.string()?);
        }
        let mut preprocess = PreprocessConfig::new(max_tokens, std::iter::empty::<&str>());
        preprocess.strip_punctuation = flags & 1 != 0;
        preprocess.drop_hashtags = flags & 2 != 0;
        preprocess.drop_urls = flags & 4 != 0;
        preprocess.set_stopwords(stopwords);
        let n_params = r.u32()? as usize;
        let layout = Layout::new(&hyper, vocab.len());
        if n_params != layout.total {
            return Err(LmError::Checkpoint(format!(
                "parameter count {n_params} does not match architecture ({})",
                layout.total
            )));
        }
        let mut params = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            params.push(r.f64()?);
        }
        r.expect_end()?;
        Ok(LmModel {
            hyper,
            vocab,
            preprocess,
            params,
            layout,
        })
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"LXB\x01";
const CHECKPOINT_VERSION: u32 = 1;

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_str(out: &mut Vec<u8>, s: &str) {
    push_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> ByteReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, at: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], LmError> {
        if self.at + n > self.bytes.len() {
            return Err(LmError::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, LmError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, LmError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, LmError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, LmError> {
        let n = self.u32()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec())
            .map_err(|e| LmError::Checkpoint(format!("bad utf-8 in checkpoint: {e}")))
    }

    fn expect_end(&self) -> Result<(), LmError> {
        if self.at == self.bytes.len() {
            Ok(())
        } else {
            Err(LmError::Checkpoint(format!(
                "{} trailing bytes",
                self.bytes.len() - self.at
            )))
        }
    }
}

/// Box-Muller standard normal draw; two uniform draws per sample keeps the
/// stream layout simple and deterministic.
fn normal_sample(rng: &mut ChaCha8Rng) -> f64 {
    let u1 = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    let u2 = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    let r = (-2.0 * (1.0 - u1).max(f64::MIN_POSITIVE).ln()).sqrt();
    r * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Per-layer cached attention keys and values, indexed `[layer][pos]`.
/// Entries are plain data: guided decoding reads and overwrites them.
#[derive(Clone, Debug)]
pub struct KvCache {
    k: Vec<Vec<Vec<f64>>>,
    v: Vec<Vec<Vec<f64>>>,
    len: usize,
}

impl KvCache {
    pub fn new(n_layers: usize) -> KvCache {
        KvCache {
            k: vec![Vec::new(); n_layers],
            v: vec![Vec::new(); n_layers],
            len: 0,
        }
    }

    pub fn for_model(model: &LmModel) -> KvCache {
        KvCache::new(model.hyper.n_layers)
    }

    /// Number of positions filled.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn n_layers(&self) -> usize {
        self.k.len()
    }

    pub fn key(&self, layer: usize, pos: usize) -> &[f64] {
        &self.k[layer][pos]
    }

    pub fn value(&self, layer: usize, pos: usize) -> &[f64] {
        &self.v[layer][pos]
    }

    /// Mutable access for external perturbation (policy updates, gradient
    /// checks). Lengths must not change.
    pub fn key_mut(&mut self, layer: usize, pos: usize) -> &mut [f64] {
        &mut self.k[layer][pos]
    }

    pub fn value_mut(&mut self, layer: usize, pos: usize) -> &mut [f64] {
        &mut self.v[layer][pos]
    }

    fn push(&mut self, layer: usize, k: Vec<f64>, v: Vec<f64>) {
        self.k[layer].push(k);
        self.v[layer].push(v);
    }
}

/// Temperature softmax over logits. Precondition: `temperature > 0`.
pub fn softmax_with_temperature(logits: &[f64], temperature: f64) -> Vec<f64> {
    assert!(
        temperature > 0.0 && temperature.is_finite(),
        "temperature must be positive and finite"
    );
    let mut out = Vec::new();
    math::softmax_t(logits, temperature, &mut out);
    out
}

/// Feeds one token at the next cache position: appends that position's
/// keys/values for every layer and returns the next-token logits.
pub fn step(model: &LmModel, token: u32, cache: &mut KvCache) -> Result<Vec<f64>, LmError> {
    model.check_token(token)?;
    let pos = cache.len;
    if pos >= model.hyper.ctx_len {
        return Err(LmError::ContextOverflow {
            pos,
            ctx_len: model.hyper.ctx_len,
        });
    }
    let logits = forward_last(model, token, pos, CacheRef::Append(cache));
    cache.len += 1;
    Ok(logits)
}

/// Recomputes the logits for the last filled position directly from the
/// cache, without writing to it. On an unmodified cache this returns
/// exactly what [`step`] returned for that position; after the cache has
/// been perturbed it reflects the perturbation.
pub fn requery(model: &LmModel, last_token: u32, cache: &KvCache) -> Result<Vec<f64>, LmError> {
    model.check_token(last_token)?;
    if cache.len == 0 {
        return Err(LmError::BadConfig("requery on empty cache".into()));
    }
    let pos = cache.len - 1;
    Ok(forward_last(model, last_token, pos, CacheRef::Read(cache)))
}

/// Like [`requery`] but for a historical position: recomputes the logits
/// that followed the first `n_pos` cached positions, with `token` the token
/// at position `n_pos - 1`. Later cache entries are ignored.
pub fn requery_at(
    model: &LmModel,
    token: u32,
    cache: &KvCache,
    n_pos: usize,
) -> Result<Vec<f64>, LmError> {
    model.check_token(token)?;
    if n_pos == 0 || n_pos > cache.len {
        return Err(LmError::BadConfig(format!(
            "requery position {n_pos} outside cache of length {}",
            cache.len
        )));
    }
    Ok(forward_last(model, token, n_pos - 1, CacheRef::Read(cache)))
}

enum CacheRef<'a> {
    Append(&'a mut KvCache),
    Read(&'a KvCache),
}

/// Shared forward pass for the last position. In `Append` mode each layer's
/// keys/values are computed and pushed before attending (the step path); in
/// `Read` mode they already exist (the requery path). Attention always reads
/// from the cache through one code path, so the two modes perform identical
/// arithmetic on identical values.
fn forward_last(model: &LmModel, token: u32, pos: usize, mut cache: CacheRef<'_>) -> Vec<f64> {
    let d = model.hyper.d_model;
    let mut h = vec![0.0; d];
    for (hi, (te, pe)) in h
        .iter_mut()
        .zip(model.embedding(token).iter().zip(model.pos_embedding(pos)))
    {
        *hi = te + pe;
    }
    let mut a1 = Vec::new();
    let mut q = Vec::new();
    let mut buf = Vec::new();
    let mut attn = Vec::new();

    for (l, lr) in model.layout.layers.iter().enumerate() {
        math::layer_norm(model.p(&lr.ln1_g), model.p(&lr.ln1_b), &h, &mut a1);
        if let CacheRef::Append(c) = &mut cache {
            let mut k = Vec::new();
            let mut v = Vec::new();
            math::affine(model.p(&lr.wk), model.p(&lr.bk), &a1, &mut k);
            math::affine(model.p(&lr.wv), model.p(&lr.bv), &a1, &mut v);
            c.push(l, k, v);
        }
        math::affine(model.p(&lr.wq), model.p(&lr.bq), &a1, &mut q);
        {
            let c: &KvCache = match &cache {
                CacheRef::Append(c) => c,
                CacheRef::Read(c) => c,
            };
            let keys: Vec<&[f64]> = c.k[l][..=pos].iter().map(|x| x.as_slice()).collect();
            let vals: Vec<&[f64]> = c.v[l][..=pos].iter().map(|x| x.as_slice()).collect();
            math::attention(&q, &keys, &vals, model.hyper.n_heads, &mut attn, None);
        }
        math::affine(model.p(&lr.wo), model.p(&lr.bo), &attn, &mut buf);
        for (a, b) in h.iter_mut().zip(&buf) {
            *a += b;
        }
        math::layer_norm(model.p(&lr.ln2_g), model.p(&lr.ln2_b), &h, &mut a1);
        math::affine(model.p(&lr.w1), model.p(&lr.b1), &a1, &mut buf);
        for x in buf.iter_mut() {
            *x = math::gelu(*x);
        }
        math::affine(model.p(&lr.w2), model.p(&lr.b2), &buf, &mut q);
        for (a, b) in h.iter_mut().zip(&q) {
            *a += b;
        }
    }

    let mut hf = Vec::new();
    math::layer_norm(model.p(&model.layout.lnf_g), model.p(&model.layout.lnf_b), &h, &mut hf);
    let mut logits = Vec::new();
    math::affine(model.p(&model.layout.w_out), model.p(&model.layout.b_out), &hf, &mut logits);
    logits
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::corpus::{Dataset, LabeledExample};

    pub(crate) fn tiny_vocab(n_words: usize) -> Vocab {
        Vocab::from_tokens((0..n_words).map(|i| format!("w{i}"))).unwrap()
    }

    pub(crate) fn tiny_model(seed: u64) -> LmModel {
        let hyper = LmHyper {
            d_model: 16,
            n_layers: 2,
            n_heads: 2,
            ctx_len: 12,
            d_ff: 32,
        };
        LmModel::init(hyper, tiny_vocab(9), PreprocessConfig::without_stopwords(), seed).unwrap()
    }

    #[test]
    fn hyper_validation_rejects_bad_heads() {
        let hyper = LmHyper {
            d_model: 10,
            n_heads: 3,
            ..LmHyper::default()
        };
        assert!(matches!(
            LmModel::init(hyper, tiny_vocab(4), PreprocessConfig::without_stopwords(), 0),
            Err(LmError::BadConfig(_))
        ));
    }

    #[test]
    fn step_then_requery_is_bit_identical() {
        let model = tiny_model(3);
        let mut cache = KvCache::for_model(&model);
        let tokens = [0u32, 5, 3, 7, 3, 8];
        let mut last = Vec::new();
        for &t in &tokens {
            last = step(&model, t, &mut cache).unwrap();
            let again = requery(&model, t, &cache).unwrap();
            assert_eq!(last.len(), again.len());
            for (a, b) in last.iter().zip(&again) {
                assert_eq!(a.to_bits(), b.to_bits(), "step and requery disagree");
            }
        }
        assert_eq!(cache.len(), tokens.len());
        assert_eq!(last.len(), model.vocab_len());
    }

    #[test]
    fn requery_at_matches_requery_on_truncated_cache() {
        let model = tiny_model(9);
        let tokens = [0u32, 5, 3, 7, 4];
        let mut full = KvCache::for_model(&model);
        for &t in &tokens {
            step(&model, t, &mut full).unwrap();
        }
        for n_pos in 1..=tokens.len() {
            let mut short = KvCache::for_model(&model);
            for &t in &tokens[..n_pos] {
                step(&model, t, &mut short).unwrap();
            }
            let truncated = requery(&model, tokens[n_pos - 1], &short).unwrap();
            let historical = requery_at(&model, tokens[n_pos - 1], &full, n_pos).unwrap();
            for (a, b) in truncated.iter().zip(&historical) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        assert!(requery_at(&model, 0, &full, 0).is_err());
        assert!(requery_at(&model, 0, &full, tokens.len() + 1).is_err());
    }

    #[test]
    fn requery_sees_cache_perturbations() {
        let model = tiny_model(4);
        let mut cache = KvCache::for_model(&model);
        for &t in &[0u32, 4, 6] {
            step(&model, t, &mut cache).unwrap();
        }
        let base = requery(&model, 6, &cache).unwrap();
        cache.value_mut(1, 1)[2] += 0.25;
        let bumped = requery(&model, 6, &cache).unwrap();
        assert!(base.iter().zip(&bumped).any(|(a, b)| a != b));
    }

    #[test]
    fn context_overflow_is_reported() {
        let model = tiny_model(5);
        let mut cache = KvCache::for_model(&model);
        for i in 0..model.hyper().ctx_len {
            step(&model, (i % 4) as u32, &mut cache).unwrap();
        }
        assert!(matches!(
            step(&model, 0, &mut cache),
            Err(LmError::ContextOverflow { .. })
        ));
    }

    #[test]
    fn bad_token_is_rejected() {
        let model = tiny_model(6);
        let mut cache = KvCache::for_model(&model);
        assert!(matches!(
            step(&model, 10_000, &mut cache),
            Err(LmError::BadToken(10_000))
        ));
    }

    #[test]
    fn softmax_temperature_contract() {
        let dist = softmax_with_temperature(&[0.0, 1.0, -2.0], 0.7);
        assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(dist.iter().all(|&p| p > 0.0));
    }

    #[test]
    #[should_panic(expected = "temperature must be positive")]
    fn softmax_rejects_zero_temperature() {
        softmax_with_temperature(&[0.0, 1.0], 0.0);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let model = tiny_model(7);
        let bytes = model.to_bytes();
        let back = LmModel::from_bytes(&bytes).unwrap();
        assert_eq!(back.hyper(), model.hyper());
        assert_eq!(back.vocab(), model.vocab());
        assert_eq!(back.preprocess_config(), model.preprocess_config());
        assert_eq!(back.params.len(), model.params.len());
        for (a, b) in back.params.iter().zip(&model.params) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        // Same logits after reload.
        let mut c1 = KvCache::for_model(&model);
        let mut c2 = KvCache::for_model(&back);
        let l1 = step(&model, 3, &mut c1).unwrap();
        let l2 = step(&back, 3, &mut c2).unwrap();
        assert_eq!(l1, l2);
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let model = tiny_model(8);
        let mut bytes = model.to_bytes();
        bytes[0] ^= 0xff;
        assert!(matches!(
            LmModel::from_bytes(&bytes),
            Err(LmError::Checkpoint(_))
        ));
        let bytes = model.to_bytes();
        assert!(matches!(
            LmModel::from_bytes(&bytes[..bytes.len() - 3]),
            Err(LmError::Checkpoint(_))
        ));
        let mut bytes = model.to_bytes();
        bytes[4] = 99; // version field
        assert!(matches!(
            LmModel::from_bytes(&bytes),
            Err(LmError::Checkpoint(_))
        ));
    }

    #[test]
    fn checkpoint_preserves_default_preprocess() {
        let ds = Dataset::new(vec![
            LabeledExample::new("alpha beta gamma", "x"),
            LabeledExample::new("beta gamma delta", "y"),
        ])
        .unwrap();
        let cfg = PreprocessConfig::default();
        let vocab = Vocab::build(&ds, &cfg, 1).unwrap();
        let hyper = LmHyper {
            d_model: 8,
            n_layers: 1,
            n_heads: 1,
            ctx_len: 8,
            d_ff: 16,
        };
        let model = LmModel::init(hyper, vocab, cfg.clone(), 0).unwrap();
        let back = LmModel::from_bytes(&model.to_bytes()).unwrap();
        assert_eq!(back.preprocess_config(), &cfg);
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = tiny_model(42);
        let b = tiny_model(42);
        let c = tiny_model(43);
        assert_eq!(a.params, b.params);
        assert_ne!(a.params, c.params);
    }
}
