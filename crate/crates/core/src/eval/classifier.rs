//! Downstream classifiers used to judge augmentation quality.
//!
//! Two deliberately different architectures so an augmentation effect can
//! be checked for classifier-agnosticism: a bag-of-embeddings linear model
//! and a small convolutional-window model. Both train with plain
//! per-example SGD and are deterministic for a fixed seed.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::EvalError;
use crate::corpus::{preprocess, Dataset, PreprocessConfig, Vocab};

/// Architecture tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Arch {
    /// Mean word embedding into a linear softmax layer.
    Bag,
    /// Width-3 convolution over embeddings, max-pooled, linear softmax.
    Conv,
}

impl Arch {
    pub fn label(self) -> &'static str {
        match self {
            Arch::Bag => "bag",
            Arch::Conv => "conv",
        }
    }

    /// Stable id for seed derivation.
    pub(crate) fn id(self) -> u64 {
        match self {
            Arch::Bag => 1,
            Arch::Conv => 2,
        }
    }
}

const BAG_DIM: usize = 32;
const CONV_DIM: usize = 24;
const CONV_FILTERS: usize = 24;
const CONV_WINDOW: usize = 3;
const EPOCHS: usize = 18;
const BAG_LR: f64 = 0.25;
const CONV_LR: f64 = 0.06;

/// A trained text classifier. Parameters live in one flat vector; the
/// layout depends on the architecture.
pub struct ClassifierModel {
    arch: Arch,
    vocab: Vocab,
    classes: Vec<String>,
    preprocess: PreprocessConfig,
    params: Vec<f64>,
}

struct BagLayout {
    dim: usize,
}

impl BagLayout {
    fn emb(&self, v: usize) -> std::ops::Range<usize> {
        v * self.dim..(v + 1) * self.dim
    }
    fn w(&self, vocab: usize, class: usize) -> std::ops::Range<usize> {
        let base = vocab * self.dim + class * self.dim;
        base..base + self.dim
    }
    fn bias(&self, vocab: usize, n_classes: usize) -> usize {
        vocab * self.dim + n_classes * self.dim
    }
    fn total(&self, vocab: usize, n_classes: usize) -> usize {
        self.bias(vocab, n_classes) + n_classes
    }
}

struct ConvLayout {
    dim: usize,
    filters: usize,
}

impl ConvLayout {
    fn emb(&self, v: usize) -> std::ops::Range<usize> {
        v * self.dim..(v + 1) * self.dim
    }
    fn filter(&self, vocab: usize, f: usize) -> std::ops::Range<usize> {
        let width = CONV_WINDOW * self.dim;
        let base = vocab * self.dim + f * width;
        base..base + width
    }
    fn filter_bias(&self, vocab: usize) -> usize {
        vocab * self.dim + self.filters * CONV_WINDOW * self.dim
    }
    fn out(&self, vocab: usize, class: usize) -> std::ops::Range<usize> {
        let base = self.filter_bias(vocab) + self.filters + class * self.filters;
        base..base + self.filters
    }
    fn out_bias(&self, vocab: usize, n_classes: usize) -> usize {
        self.filter_bias(vocab) + self.filters + n_classes * self.filters
    }
    fn total(&self, vocab: usize, n_classes: usize) -> usize {
        self.out_bias(vocab, n_classes) + n_classes
    }
}

fn softmax_inplace(logits: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        sum += *l;
    }
    for l in logits.iter_mut() {
        *l /= sum;
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

impl ClassifierModel {
    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    fn encode(&self, text: &str) -> Vec<u32> {
        match preprocess(text, &self.preprocess) {
            Some(tokens) => tokens
                .iter()
                .map(|t| self.vocab.id_or_unk(t))
                .collect(),
            None => Vec::new(),
        }
    }

    /// Class probabilities for a text. Texts that preprocess to nothing
    /// get the all-zero feature vector, so the bias decides.
    pub fn probabilities(&self, text: &str) -> Vec<f64> {
        let ids = self.encode(text);
        let mut logits = match self.arch {
            Arch::Bag => bag_forward(&self.params, &ids, self.vocab.len(), self.classes.len()).0,
            Arch::Conv => {
                conv_forward(&self.params, &ids, self.vocab.len(), self.classes.len()).0
            }
        };
        softmax_inplace(&mut logits);
        logits
    }

    /// Predicted class label; ties break toward the lower class index.
    pub fn predict(&self, text: &str) -> &str {
        let probs = self.probabilities(text);
        &self.classes[argmax(&probs)]
    }
}

fn bag_forward(
    params: &[f64],
    ids: &[u32],
    vocab: usize,
    n_classes: usize,
) -> (Vec<f64>, Vec<f64>) {
    let layout = BagLayout { dim: BAG_DIM };
    let mut avg = vec![0.0; BAG_DIM];
    if !ids.is_empty() {
        for &id in ids {
            let e = &params[layout.emb(id as usize)];
            for (a, &x) in avg.iter_mut().zip(e) {
                *a += x;
            }
        }
        let inv = 1.0 / ids.len() as f64;
        for a in avg.iter_mut() {
            *a *= inv;
        }
    }
    let mut logits = vec![0.0; n_classes];
    for (c, logit) in logits.iter_mut().enumerate() {
        let w = &params[layout.w(vocab, c)];
        *logit = params[layout.bias(vocab, n_classes) + c]
            + w.iter().zip(&avg).map(|(a, b)| a * b).sum::<f64>();
    }
    (logits, avg)
}

/// Returns (logits, pooled features, argmax window per filter, window
/// activations kept for the backward pass).
#[allow(clippy::type_complexity)]
fn conv_forward(
    params: &[f64],
    ids: &[u32],
    vocab: usize,
    n_classes: usize,
) -> (Vec<f64>, Vec<f64>, Vec<usize>, Vec<Vec<f64>>) {
    let layout = ConvLayout {
        dim: CONV_DIM,
        filters: CONV_FILTERS,
    };
    // Zero-padded on the right so even 1-token texts give one window.
    let n_windows = ids.len().max(CONV_WINDOW) - CONV_WINDOW + 1;
    let mut acts = vec![vec![0.0; n_windows]; CONV_FILTERS];
    for w in 0..n_windows {
        let mut window = vec![0.0; CONV_WINDOW * CONV_DIM];
        for k in 0..CONV_WINDOW {
            if let Some(&id) = ids.get(w + k) {
                window[k * CONV_DIM..(k + 1) * CONV_DIM]
                    .copy_from_slice(&params[layout.emb(id as usize)]);
            }
        }
        for f in 0..CONV_FILTERS {
            let filt = &params[layout.filter(vocab, f)];
            let pre = params[layout.filter_bias(vocab) + f]
                + filt.iter().zip(&window).map(|(a, b)| a * b).sum::<f64>();
            acts[f][w] = pre.max(0.0);
        }
    }
    let mut pooled = vec![0.0; CONV_FILTERS];
    let mut best = vec![0usize; CONV_FILTERS];
    for f in 0..CONV_FILTERS {
        let b = argmax(&acts[f]);
        best[f] = b;
        pooled[f] = acts[f][b];
    }
    let mut logits = vec![0.0; n_classes];
    for (c, logit) in logits.iter_mut().enumerate() {
        let u = &params[layout.out(vocab, c)];
        *logit = params[layout.out_bias(vocab, n_classes) + c]
            + u.iter().zip(&pooled).map(|(a, b)| a * b).sum::<f64>();
    }
    (logits, pooled, best, acts)
}

/// Trains a classifier on `train`; deterministic for a fixed seed.
pub fn train_classifier(
    arch: Arch,
    train: &Dataset,
    seed: u64,
) -> Result<ClassifierModel, EvalError> {
    let populated = train.class_counts().iter().filter(|&&c| c > 0).count();
    if populated < 2 {
        return Err(EvalError::DegenerateTrainSet(format!(
            "{populated} populated class(es), need at least 2"
        )));
    }
    let cfg = PreprocessConfig::default();
    let vocab = Vocab::build(train, &cfg, 1)?;
    let classes: Vec<String> = train.classes().to_vec();
    let v = vocab.len();
    let c = classes.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = match arch {
        Arch::Bag => BagLayout { dim: BAG_DIM }.total(v, c),
        Arch::Conv => ConvLayout {
            dim: CONV_DIM,
            filters: CONV_FILTERS,
        }
        .total(v, c),
    };
    let mut params: Vec<f64> = (0..total).map(|_| 0.1 * (rng.random::<f64>() - 0.5)).collect();

    let encoded: Vec<(Vec<u32>, usize)> = train
        .examples()
        .iter()
        .filter_map(|ex| {
            let tokens = preprocess(&ex.text, &cfg)?;
            let ids: Vec<u32> = tokens.iter().map(|t| vocab.id_or_unk(t)).collect();
            let label = classes.iter().position(|l| l == &ex.label)?;
            Some((ids, label))
        })
        .collect();
    if encoded.is_empty() {
        return Err(EvalError::DegenerateTrainSet(
            "no example survives preprocessing".into(),
        ));
    }

    let mut order: Vec<usize> = (0..encoded.len()).collect();
    for _ in 0..EPOCHS {
        order.shuffle(&mut rng);
        for &i in &order {
            let (ids, label) = &encoded[i];
            match arch {
                Arch::Bag => bag_step(&mut params, ids, *label, v, c),
                Arch::Conv => conv_step(&mut params, ids, *label, v, c),
            }
        }
    }
    Ok(ClassifierModel {
        arch,
        vocab,
        classes,
        preprocess: cfg,
        params,
    })
}

fn bag_step(params: &mut [f64], ids: &[u32], label: usize, vocab: usize, n_classes: usize) {
    let layout = BagLayout { dim: BAG_DIM };
    let (mut probs, avg) = bag_forward(params, ids, vocab, n_classes);
    softmax_inplace(&mut probs);
    probs[label] -= 1.0; // dL/dlogits
    let mut davg = vec![0.0; BAG_DIM];
    for (cl, &d) in probs.iter().enumerate() {
        let range = layout.w(vocab, cl);
        for (j, a) in avg.iter().enumerate() {
            davg[j] += d * params[range.start + j];
            params[range.start + j] -= BAG_LR * d * a;
        }
        params[layout.bias(vocab, n_classes) + cl] -= BAG_LR * d;
    }
    if !ids.is_empty() {
        let inv = 1.0 / ids.len() as f64;
        for &id in ids {
            let range = layout.emb(id as usize);
            for (j, &g) in davg.iter().enumerate() {
                params[range.start + j] -= BAG_LR * g * inv;
            }
        }
    }
}

fn conv_step(params: &mut [f64], ids: &[u32], label: usize, vocab: usize, n_classes: usize) {
    let layout = ConvLayout {
        dim: CONV_DIM,
        filters: CONV_FILTERS,
    };
    let (mut probs, pooled, best, acts) = conv_forward(params, ids, vocab, n_classes);
    softmax_inplace(&mut probs);
    probs[label] -= 1.0;
    let mut dpooled = vec![0.0; CONV_FILTERS];
    for (cl, &d) in probs.iter().enumerate() {
        let range = layout.out(vocab, cl);
        for (f, p) in pooled.iter().enumerate() {
            dpooled[f] += d * params[range.start + f];
            params[range.start + f] -= CONV_LR * d * p;
        }
        params[layout.out_bias(vocab, n_classes) + cl] -= CONV_LR * d;
    }
    for f in 0..CONV_FILTERS {
        // Gradient flows only through the pooled window, and only when
        // its pre-activation cleared the ReLU.
        if acts[f][best[f]] <= 0.0 || dpooled[f] == 0.0 {
            continue;
        }
        let w = best[f];
        let d = dpooled[f];
        let filt_range = layout.filter(vocab, f);
        for k in 0..CONV_WINDOW {
            if let Some(&id) = ids.get(w + k) {
                let emb_range = layout.emb(id as usize);
                for j in 0..CONV_DIM {
                    let fi = filt_range.start + k * CONV_DIM + j;
                    let ei = emb_range.start + j;
                    let (fw, ev) = (params[fi], params[ei]);
                    params[fi] -= CONV_LR * d * ev;
                    params[ei] -= CONV_LR * d * fw;
                }
            }
        }
        params[layout.filter_bias(vocab) + f] -= CONV_LR * d;
    }
}

/// Unweighted mean of per-class F1 over the test set's class list. A class
/// with no true and no predicted rows contributes 0.
pub fn macro_f1(model: &ClassifierModel, test: &Dataset) -> f64 {
    let classes = test.classes();
    let mut tp = vec![0usize; classes.len()];
    let mut fp = vec![0usize; classes.len()];
    let mut fn_ = vec![0usize; classes.len()];
    for ex in test.examples() {
        let pred = model.predict(&ex.text);
        let truth = classes.iter().position(|c| c == &ex.label);
        let predicted = classes.iter().position(|c| c == pred);
        match (truth, predicted) {
            (Some(t), Some(p)) if t == p => tp[t] += 1,
            (Some(t), Some(p)) => {
                fn_[t] += 1;
                fp[p] += 1;
            }
            (Some(t), None) => fn_[t] += 1,
            (None, Some(p)) => fp[p] += 1,
            (None, None) => {}
        }
    }
    let mut sum = 0.0;
    for i in 0..classes.len() {
        let denom = 2 * tp[i] + fp[i] + fn_[i];
        if denom > 0 {
            sum += 2.0 * tp[i] as f64 / denom as f64;
        }
    }
    sum / classes.len() as f64
}
