//! Experiment harness: data-starvation sweeps, original/boosted ratio
//! sweeps, and a naive edit-based augmentation baseline, all reported as
//! deterministic TSV with embedded configuration.
//!
//! One experiment call fixes a single train/test split and evaluates every
//! requested condition against the same test set; augmented datasets are
//! shared across classifier architectures so the architecture comparison
//! sees identical data. Seeds for each condition derive from the condition
//! shape (original count, boosted count, repeat, architecture), which makes
//! overlapping conditions of different experiments land on the same seeds.

pub mod classifier;
pub mod synth;

pub use classifier::{macro_f1, train_classifier, Arch, ClassifierModel};
pub use synth::{synth_corpus, synth_corpus_with_vocab, SynthConfig, SynthVocab};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::augment::{boost, mix_seed, plan_boost, AugmentError, BoostPlan};
use crate::corpus::{
    split_stratified, starve, CorpusError, Dataset, LabeledExample, Provenance, Vocab,
};
use crate::guide::{GuideConfig, GuideError};
use crate::lm::{train_lm, train_ngram, LmError, LmModel, TrainLmConfig};
use crate::salience::{build_lexicon, count, SalienceError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid evaluation configuration: {0}")]
    BadConfig(String),
    #[error("degenerate training set: {0}")]
    DegenerateTrainSet(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Salience(#[from] SalienceError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Guide(#[from] GuideError),
}

/// How a condition's training data was assembled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    /// Starved originals only.
    Original,
    /// Originals plus guided generations.
    Guided,
    /// Originals plus random delete/swap edits of originals.
    Naive,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Original => "original",
            Method::Guided => "guided",
            Method::Naive => "naive",
        }
    }
}

/// Per-token edit probabilities for the naive baseline.
#[derive(Clone, Copy, Debug)]
pub struct NaiveEdit {
    pub delete_prob: f64,
    pub swap_prob: f64,
}

impl Default for NaiveEdit {
    fn default() -> Self {
        NaiveEdit {
            delete_prob: 0.1,
            swap_prob: 0.1,
        }
    }
}

/// Everything an experiment needs beyond the dataset and condition grid.
#[derive(Clone, Debug)]
pub struct EvalConfig {
    /// Held-out share; the test split is fixed per experiment.
    pub test_fraction: f64,
    /// The generator LM trains on at most this many examples of the train
    /// split (stratified subsample), standing in for pretraining.
    pub lm_train_cap: usize,
    pub lm: TrainLmConfig,
    pub guide: GuideConfig,
    pub lexicon_size: usize,
    pub lexicon_min_count: u64,
    pub ngram_order: usize,
    pub naive: NaiveEdit,
    pub max_attempts: u32,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let lm = TrainLmConfig::default();
        EvalConfig {
            test_fraction: 0.2,
            lm_train_cap: 1400,
            lm,
            guide: GuideConfig {
                max_len: 14,
                ..GuideConfig::default()
            },
            lexicon_size: 24,
            lexicon_min_count: 2,
            ngram_order: 3,
            naive: NaiveEdit::default(),
            max_attempts: 10,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(EvalError::BadConfig(format!(
                "test_fraction must be in (0,1), got {}",
                self.test_fraction
            )));
        }
        if self.lm_train_cap == 0 {
            return Err(EvalError::BadConfig("lm_train_cap must be positive".into()));
        }
        if self.lexicon_size == 0 {
            return Err(EvalError::BadConfig("lexicon_size must be positive".into()));
        }
        if !(1..=5).contains(&self.ngram_order) {
            return Err(EvalError::BadConfig(format!(
                "ngram_order must be 1..=5, got {}",
                self.ngram_order
            )));
        }
        for (name, p) in [
            ("delete_prob", self.naive.delete_prob),
            ("swap_prob", self.naive.swap_prob),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(EvalError::BadConfig(format!(
                    "{name} must be in [0,1), got {p}"
                )));
            }
        }
        if self.max_attempts == 0 {
            return Err(EvalError::BadConfig("max_attempts must be positive".into()));
        }
        self.guide
            .validate()
            .map_err(|e| EvalError::BadConfig(e.to_string()))?;
        Ok(())
    }

    /// Flat dump embedded in every report for reproducibility.
    fn to_kv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("test_fraction={}\n", self.test_fraction));
        out.push_str(&format!("lm_train_cap={}\n", self.lm_train_cap));
        out.push_str(&format!("lm.d_model={}\n", self.lm.hyper.d_model));
        out.push_str(&format!("lm.n_layers={}\n", self.lm.hyper.n_layers));
        out.push_str(&format!("lm.n_heads={}\n", self.lm.hyper.n_heads));
        out.push_str(&format!("lm.ctx_len={}\n", self.lm.hyper.ctx_len));
        out.push_str(&format!("lm.d_ff={}\n", self.lm.hyper.d_ff));
        out.push_str(&format!("lm.epochs={}\n", self.lm.epochs));
        out.push_str(&format!("lm.lr={}\n", self.lm.lr));
        out.push_str(&format!("lm.batch_size={}\n", self.lm.batch_size));
        for line in self.guide.to_kv().lines() {
            out.push_str(&format!("guide.{line}\n"));
        }
        out.push_str(&format!("lexicon_size={}\n", self.lexicon_size));
        out.push_str(&format!("lexicon_min_count={}\n", self.lexicon_min_count));
        out.push_str(&format!("ngram_order={}\n", self.ngram_order));
        out.push_str(&format!("naive.delete_prob={}\n", self.naive.delete_prob));
        out.push_str(&format!("naive.swap_prob={}\n", self.naive.swap_prob));
        out.push_str(&format!("max_attempts={}\n", self.max_attempts));
        out.push_str(&format!("seed={}\n", self.seed));
        out
    }
}

/// One (condition, repeat, architecture) measurement.
#[derive(Clone, Debug)]
pub struct ConditionRow {
    /// Human-readable condition, e.g. "f=0.05" or "75/25".
    pub label: String,
    pub fraction: Option<f64>,
    pub ratio: Option<(u32, u32)>,
    pub method: Method,
    pub arch: Arch,
    pub repeat: usize,
    pub n_original: usize,
    pub n_boosted: usize,
    pub clf_seed: u64,
    pub macro_f1: f64,
    /// Perplexity of the whole assembled train set under the held-out
    /// n-gram model (ratio experiment only).
    pub ppl_mixed: Option<f64>,
    /// Perplexity of the generated rows alone.
    pub ppl_boost: Option<f64>,
    /// Generation slots left unfilled after the attempt budget.
    pub unfilled: usize,
}

/// Mean/stddev aggregate over the repeats of one condition.
#[derive(Clone, Debug)]
pub struct SummaryRow {
    pub label: String,
    pub method: Method,
    pub arch: Arch,
    pub n: usize,
    pub mean_f1: f64,
    pub std_f1: f64,
    pub mean_ppl_boost: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub kind: String,
    pub rows: Vec<ConditionRow>,
    /// Flat key=value dump of the configuration that produced the rows.
    pub config: String,
    pub version: String,
    /// SHA-256 of the serialized test split; equal hashes mean the exact
    /// same held-out data.
    pub test_sha256: String,
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| format!("{v:.6}"))
}

impl ExperimentReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# kind={}\n", self.kind));
        out.push_str(&format!("# version={}\n", self.version));
        out.push_str(&format!("# test_sha256={}\n", self.test_sha256));
        for line in self.config.lines() {
            out.push_str(&format!("# {line}\n"));
        }
        out.push_str(
            "label\tfraction\tratio\tmethod\tarch\trepeat\tn_original\tn_boosted\tclf_seed\tmacro_f1\tppl_mixed\tppl_boost\tunfilled\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{}\t{}\t{}\n",
                r.label,
                r.fraction.map_or(String::new(), |f| f.to_string()),
                r.ratio
                    .map_or(String::new(), |(o, b)| format!("{o}/{b}")),
                r.method.label(),
                r.arch.label(),
                r.repeat,
                r.n_original,
                r.n_boosted,
                r.clf_seed,
                r.macro_f1,
                fmt_opt(r.ppl_mixed),
                fmt_opt(r.ppl_boost),
                r.unfilled,
            ));
        }
        out
    }

    /// Per-condition aggregates in first-appearance order.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut keys: Vec<(String, Method, Arch)> = Vec::new();
        for r in &self.rows {
            let key = (r.label.clone(), r.method, r.arch);
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
        keys.into_iter()
            .map(|(label, method, arch)| {
                let f1s: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| r.label == label && r.method == method && r.arch == arch)
                    .map(|r| r.macro_f1)
                    .collect();
                let ppls: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| r.label == label && r.method == method && r.arch == arch)
                    .filter_map(|r| r.ppl_boost)
                    .collect();
                let n = f1s.len();
                let mean = f1s.iter().sum::<f64>() / n as f64;
                let std = if n > 1 {
                    (f1s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64)
                        .sqrt()
                } else {
                    0.0
                };
                SummaryRow {
                    label,
                    method,
                    arch,
                    n,
                    mean_f1: mean,
                    std_f1: std,
                    mean_ppl_boost: if ppls.is_empty() {
                        None
                    } else {
                        Some(ppls.iter().sum::<f64>() / ppls.len() as f64)
                    },
                }
            })
            .collect()
    }

    pub fn summary_tsv(&self) -> String {
        let mut out =
            String::from("label\tmethod\tarch\tn\tmean_f1\tstd_f1\tmean_ppl_boost\n");
        for s in self.summary() {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{}\n",
                s.label,
                s.method.label(),
                s.arch.label(),
                s.n,
                s.mean_f1,
                s.std_f1,
                fmt_opt(s.mean_ppl_boost),
            ));
        }
        out
    }

    /// Mean macro-F1 over the repeats of one condition.
    pub fn mean_f1(&self, label: &str, method: Method, arch: Arch) -> Option<f64> {
        self.summary()
            .into_iter()
            .find(|s| s.label == label && s.method == method && s.arch == arch)
            .map(|s| s.mean_f1)
    }

    /// Mean boosted-rows perplexity of one condition.
    pub fn mean_ppl_boost(&self, label: &str) -> Option<f64> {
        let ppls: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.label == label)
            .filter_map(|r| r.ppl_boost)
            .collect();
        if ppls.is_empty() {
            None
        } else {
            Some(ppls.iter().sum::<f64>() / ppls.len() as f64)
        }
    }

    /// Mean mixed perplexity of one condition.
    pub fn mean_ppl_mixed(&self, label: &str) -> Option<f64> {
        let ppls: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.label == label)
            .filter_map(|r| r.ppl_mixed)
            .collect();
        if ppls.is_empty() {
            None
        } else {
            Some(ppls.iter().sum::<f64>() / ppls.len() as f64)
        }
    }
}

fn sha256_hex(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

// Tags keeping derived seed streams apart.
const TAG_SPLIT: u64 = 0x51;
const TAG_LM_SAMPLE: u64 = 0x52;
const TAG_LM_TRAIN: u64 = 0x53;
const TAG_STARVE: u64 = 0x54;
const TAG_BOOST: u64 = 0x55;
const TAG_CLF: u64 = 0x56;
const TAG_NAIVE: u64 = 0x57;

/// Trains the generator LM on a stratified subsample of the train split
/// (its vocabulary still covers the whole split).
fn train_shared_lm(train: &Dataset, cfg: &EvalConfig) -> Result<LmModel, EvalError> {
    let sample = if train.len() > cfg.lm_train_cap {
        starve(
            train,
            cfg.lm_train_cap as f64 / train.len() as f64,
            mix_seed(&[cfg.seed, TAG_LM_SAMPLE]),
        )?
    } else {
        train.clone()
    };
    let vocab = Vocab::build(train, &cfg.lm.preprocess, 1)?;
    let mut lm_cfg = cfg.lm.clone();
    lm_cfg.seed = mix_seed(&[cfg.seed, TAG_LM_TRAIN]);
    Ok(train_lm(&sample, vocab, &lm_cfg)?)
}

fn class_distribution_of(ds: &Dataset) -> Vec<(String, f64)> {
    ds.classes()
        .iter()
        .cloned()
        .zip(ds.class_distribution())
        .collect()
}

/// Starvation sweep: per (fraction, repeat, method), starve the train
/// split to `fraction` of the WHOLE dataset, optionally augment back to
/// the full train size, then score every architecture on the shared test
/// split. Fractions above the train share just use the whole train split.
pub fn starvation_experiment(
    ds: &Dataset,
    fractions: &[f64],
    repeats: usize,
    archs: &[Arch],
    methods: &[Method],
    cfg: &EvalConfig,
) -> Result<ExperimentReport, EvalError> {
    cfg.validate()?;
    if fractions.is_empty() || archs.is_empty() || methods.is_empty() || repeats == 0 {
        return Err(EvalError::BadConfig(
            "fractions, architectures, methods, and repeats must be non-empty".into(),
        ));
    }
    for &f in fractions {
        if !(f > 0.0 && f <= 1.0) {
            return Err(EvalError::BadConfig(format!(
                "fraction {f} outside (0, 1]"
            )));
        }
    }
    let (train, test) =
        split_stratified(ds, cfg.test_fraction, mix_seed(&[cfg.seed, TAG_SPLIT]))?;
    let test_sha256 = sha256_hex(&test.to_jsonl());
    let lm = if methods.contains(&Method::Guided) {
        Some(train_shared_lm(&train, cfg)?)
    } else {
        None
    };
    let distribution = class_distribution_of(&train);

    let mut rows = Vec::new();
    for &fraction in fractions {
        let target = (fraction * ds.len() as f64).round() as usize;
        let starve_frac = (target as f64 / train.len() as f64).min(1.0);
        for repeat in 0..repeats {
            let starved = starve(
                &train,
                starve_frac,
                mix_seed(&[cfg.seed, TAG_STARVE, target as u64, repeat as u64]),
            )?;
            let lexicon = if methods.iter().any(|m| *m != Method::Original) {
                let table = count(&starved, &cfg.lm.preprocess)?;
                Some(build_lexicon(
                    &table,
                    cfg.lexicon_size,
                    cfg.lexicon_min_count,
                )?)
            } else {
                None
            };
            for &method in methods {
                let (assembled, n_boosted, unfilled) = match method {
                    Method::Original => (starved.clone(), 0, 0),
                    Method::Guided | Method::Naive => {
                        let mut plan = plan_boost(
                            &starved,
                            train.len(),
                            &distribution,
                            cfg.guide.clone(),
                            mix_seed(&[
                                cfg.seed,
                                TAG_BOOST,
                                starved.len() as u64,
                                repeat as u64,
                            ]),
                        )?;
                        plan.max_attempts = cfg.max_attempts;
                        if method == Method::Guided {
                            let model = lm.as_ref().expect("LM trained for guided runs");
                            let out =
                                boost(&starved, &plan, model, lexicon.as_ref().unwrap())?;
                            let unfilled =
                                out.exhausted.iter().map(|e| e.missing).sum::<usize>();
                            let n = out.dataset.len() - starved.len();
                            (out.dataset, n, unfilled)
                        } else {
                            let out = naive_baseline_augment(&starved, &plan, &cfg.naive)?;
                            let n = out.len() - starved.len();
                            (out, n, 0)
                        }
                    }
                };
                for &arch in archs {
                    let clf_seed = mix_seed(&[
                        cfg.seed,
                        TAG_CLF,
                        starved.len() as u64,
                        (assembled.len() - starved.len()) as u64,
                        repeat as u64,
                        arch.id(),
                    ]);
                    let model = train_classifier(arch, &assembled, clf_seed)?;
                    rows.push(ConditionRow {
                        label: format!("f={fraction}"),
                        fraction: Some(fraction),
                        ratio: None,
                        method,
                        arch,
                        repeat,
                        n_original: starved.len(),
                        n_boosted,
                        clf_seed,
                        macro_f1: macro_f1(&model, &test),
                        ppl_mixed: None,
                        ppl_boost: None,
                        unfilled,
                    });
                }
            }
        }
    }
    Ok(ExperimentReport {
        kind: "starvation".into(),
        rows,
        config: cfg.to_kv(),
        version: env!("CARGO_PKG_VERSION").into(),
        test_sha256,
    })
}

/// Ratio sweep: the train set size stays fixed while the original/boosted
/// mix varies. Each ratio pair states original and boosted percentages and
/// must sum to 100. Guided generation only; records macro-F1 plus the
/// perplexity of the assembled set and of its generated rows under an
/// n-gram model fit to the original train split.
pub fn ratio_experiment(
    ds: &Dataset,
    ratios: &[(u32, u32)],
    repeats: usize,
    archs: &[Arch],
    cfg: &EvalConfig,
) -> Result<ExperimentReport, EvalError> {
    cfg.validate()?;
    if ratios.is_empty() || archs.is_empty() || repeats == 0 {
        return Err(EvalError::BadConfig(
            "ratios, architectures, and repeats must be non-empty".into(),
        ));
    }
    for &(o, b) in ratios {
        if o + b != 100 || o == 0 {
            return Err(EvalError::BadConfig(format!(
                "ratio {o}/{b} must be positive-original and sum to 100"
            )));
        }
    }
    let (train, test) =
        split_stratified(ds, cfg.test_fraction, mix_seed(&[cfg.seed, TAG_SPLIT]))?;
    let test_sha256 = sha256_hex(&test.to_jsonl());
    let needs_lm = ratios.iter().any(|&(_, b)| b > 0);
    let lm = if needs_lm {
        Some(train_shared_lm(&train, cfg)?)
    } else {
        None
    };
    // The quality question here is about generation, not data scarcity, so
    // the lexicon comes from the full train split.
    let lexicon = if needs_lm {
        let table = count(&train, &cfg.lm.preprocess)?;
        Some(build_lexicon(
            &table,
            cfg.lexicon_size,
            cfg.lexicon_min_count,
        )?)
    } else {
        None
    };
    let ngram_vocab = Vocab::build(&train, &cfg.lm.preprocess, 1)?;
    let ngram = train_ngram(
        &train,
        ngram_vocab,
        cfg.lm.preprocess.clone(),
        cfg.ngram_order,
    )?;
    let distribution = class_distribution_of(&train);

    let mut rows = Vec::new();
    for &(orig_pct, boost_pct) in ratios {
        let n_orig = ((orig_pct as f64 / 100.0) * train.len() as f64).round() as usize;
        let starve_frac = (n_orig as f64 / train.len() as f64).min(1.0);
        for repeat in 0..repeats {
            let starved = starve(
                &train,
                starve_frac,
                mix_seed(&[cfg.seed, TAG_STARVE, n_orig as u64, repeat as u64]),
            )?;
            let mut plan = plan_boost(
                &starved,
                train.len(),
                &distribution,
                cfg.guide.clone(),
                mix_seed(&[cfg.seed, TAG_BOOST, starved.len() as u64, repeat as u64]),
            )?;
            plan.max_attempts = cfg.max_attempts;
            let (assembled, unfilled) = if plan.total_boost() > 0 {
                let out = boost(
                    &starved,
                    &plan,
                    lm.as_ref().expect("LM trained when boosting"),
                    lexicon.as_ref().unwrap(),
                )?;
                (
                    out.dataset,
                    out.exhausted.iter().map(|e| e.missing).sum::<usize>(),
                )
            } else {
                (starved.clone(), 0)
            };
            let n_boosted = assembled.len() - starved.len();
            let ppl_mixed = Some(crate::lm::ngram_perplexity(&ngram, &assembled)?);
            let ppl_boost = boosted_subset(&assembled)?
                .map(|b| crate::lm::ngram_perplexity(&ngram, &b))
                .transpose()?;
            for &arch in archs {
                let clf_seed = mix_seed(&[
                    cfg.seed,
                    TAG_CLF,
                    starved.len() as u64,
                    n_boosted as u64,
                    repeat as u64,
                    arch.id(),
                ]);
                let model = train_classifier(arch, &assembled, clf_seed)?;
                rows.push(ConditionRow {
                    label: format!("{orig_pct}/{boost_pct}"),
                    fraction: None,
                    ratio: Some((orig_pct, boost_pct)),
                    method: if boost_pct == 0 {
                        Method::Original
                    } else {
                        Method::Guided
                    },
                    arch,
                    repeat,
                    n_original: starved.len(),
                    n_boosted,
                    clf_seed,
                    macro_f1: macro_f1(&model, &test),
                    ppl_mixed,
                    ppl_boost,
                    unfilled,
                });
            }
        }
    }
    Ok(ExperimentReport {
        kind: "ratio".into(),
        rows,
        config: cfg.to_kv(),
        version: env!("CARGO_PKG_VERSION").into(),
        test_sha256,
    })
}

/// The generated rows of an assembled dataset, or None when it has none.
fn boosted_subset(ds: &Dataset) -> Result<Option<Dataset>, EvalError> {
    let rows: Vec<LabeledExample> = ds
        .examples()
        .iter()
        .filter(|ex| ex.provenance == Provenance::Boosted)
        .cloned()
        .collect();
    if rows.is_empty() {
        return Ok(None);
    }
    Ok(Some(Dataset::with_classes(
        rows,
        ds.classes().to_vec(),
        ds.tag(),
    )?))
}

/// Edit-based augmentation baseline: fills the plan's per-class targets by
/// sampling starved examples of the class and applying per-token random
/// deletions, then random adjacent swaps. Every generated row is tagged as
/// boosted. Deterministic for a fixed plan seed.
pub fn naive_baseline_augment(
    starved: &Dataset,
    plan: &BoostPlan,
    edit: &NaiveEdit,
) -> Result<Dataset, EvalError> {
    let mut examples = starved.examples().to_vec();
    for (ci, t) in plan.targets.iter().enumerate() {
        if t.boost == 0 {
            continue;
        }
        let sources: Vec<&LabeledExample> = starved
            .examples()
            .iter()
            .filter(|ex| ex.label == t.class)
            .collect();
        if sources.is_empty() {
            return Err(EvalError::DegenerateTrainSet(format!(
                "naive augmentation has no source examples for class {:?}",
                t.class
            )));
        }
        for slot in 0..t.boost {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
                plan.seed,
                TAG_NAIVE,
                ci as u64,
                slot as u64,
            ]));
            let source = sources[rng.random_range(0..sources.len())];
            let mut tokens: Vec<&str> = source.text.split_whitespace().collect();
            tokens.retain(|_| rng.random::<f64>() >= edit.delete_prob);
            if tokens.is_empty() {
                // Deleting everything would make an empty row; keep the
                // source text instead.
                tokens = source.text.split_whitespace().collect();
            }
            for i in 0..tokens.len().saturating_sub(1) {
                if rng.random::<f64>() < edit.swap_prob {
                    tokens.swap(i, i + 1);
                }
            }
            examples.push(LabeledExample::boosted(tokens.join(" "), t.class.clone()));
        }
    }
    let classes: Vec<String> = plan.targets.iter().map(|t| t.class.clone()).collect();
    Ok(Dataset::with_classes(examples, classes, starved.tag())?)
}
