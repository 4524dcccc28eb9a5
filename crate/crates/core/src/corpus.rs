//! Labeled datasets: ingestion, preprocessing, stratified splitting,
//! starvation subsampling, and vocabulary construction.
//!
//! Splits and subsamples use largest-remainder apportionment per class so
//! realized counts stay within one example of the ideal quota, and they
//! preserve the original relative order of the surviving examples.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default stopword list shipped with the crate (English, ~170 words).
pub const DEFAULT_STOPWORDS: &str = include_str!("../assets/stopwords_en.txt");

pub const BOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("fraction {0} out of range (0, 1]")]
    BadFraction(f64),
    #[error("cannot stratify: class {class:?} has {count} example(s), need at least 2")]
    StratifyImpossible { class: String, count: usize },
    #[error("starved subset would be empty for class {class:?}")]
    StarvedClassEmpty { class: String },
    #[error("vocabulary is empty after filtering (min_count {min_count})")]
    EmptyVocab { min_count: usize },
    #[error("label {label:?} is not in the class set")]
    UnknownLabel { label: String },
    #[error("unsupported input format {0:?} (expected jsonl, csv, or tsv)")]
    UnknownFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Where an example came from: the source corpus or a generation pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Original,
    Boosted,
}

impl Default for Provenance {
    fn default() -> Self {
        Provenance::Original
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub text: String,
    pub label: String,
    #[serde(default)]
    pub provenance: Provenance,
    /// Reference into the per-row diagnostics stream, set on generated rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diag_id: Option<String>,
}

impl LabeledExample {
    pub fn new(text: impl Into<String>, label: impl Into<String>) -> Self {
        LabeledExample {
            text: text.into(),
            label: label.into(),
            provenance: Provenance::Original,
            diag_id: None,
        }
    }

    pub fn boosted(text: impl Into<String>, label: impl Into<String>) -> Self {
        LabeledExample {
            text: text.into(),
            label: label.into(),
            provenance: Provenance::Boosted,
            diag_id: None,
        }
    }
}

/// Which stage of the experiment pipeline a dataset belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitTag {
    Full,
    Train,
    Test,
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitTag::Full => write!(f, "full"),
            SplitTag::Train => write!(f, "train"),
            SplitTag::Test => write!(f, "test"),
        }
    }
}

/// An ordered collection of labeled examples with a stable class set.
///
/// The class set is fixed at construction (first-appearance order) and is
/// carried through splits and subsamples even when a subset happens to lose
/// all examples of some class.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    examples: Vec<LabeledExample>,
    classes: Vec<String>,
    tag: SplitTag,
}

/// Input file format for [`Dataset::ingest`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputFormat {
    Jsonl,
    Csv,
    Tsv,
}

impl std::str::FromStr for InputFormat {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, CorpusError> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(InputFormat::Jsonl),
            "csv" => Ok(InputFormat::Csv),
            "tsv" => Ok(InputFormat::Tsv),
            other => Err(CorpusError::UnknownFormat(other.to_string())),
        }
    }
}

impl InputFormat {
    pub fn from_path(path: &Path) -> Result<Self, CorpusError> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or_default();
        ext.parse()
    }
}

impl Dataset {
    /// Builds a dataset from examples; the class set is the labels in first
    /// appearance order.
    pub fn new(examples: Vec<LabeledExample>) -> Result<Self, CorpusError> {
        Self::with_tag(examples, SplitTag::Full)
    }

    pub fn with_tag(examples: Vec<LabeledExample>, tag: SplitTag) -> Result<Self, CorpusError> {
        if examples.is_empty() {
            return Err(CorpusError::EmptyDataset);
        }
        let mut classes = Vec::new();
        for ex in &examples {
            if ex.label.is_empty() {
                return Err(CorpusError::UnknownLabel {
                    label: String::new(),
                });
            }
            if !classes.contains(&ex.label) {
                classes.push(ex.label.clone());
            }
        }
        Ok(Dataset {
            examples,
            classes,
            tag,
        })
    }

    /// Builds a dataset with an explicit class set; every label must belong
    /// to it. Used when a subset must keep the parent's class set.
    pub fn with_classes(
        examples: Vec<LabeledExample>,
        classes: Vec<String>,
        tag: SplitTag,
    ) -> Result<Self, CorpusError> {
        if examples.is_empty() {
            return Err(CorpusError::EmptyDataset);
        }
        for ex in &examples {
            if !classes.contains(&ex.label) {
                return Err(CorpusError::UnknownLabel {
                    label: ex.label.clone(),
                });
            }
        }
        Ok(Dataset {
            examples,
            classes,
            tag,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn tag(&self) -> SplitTag {
        self.tag
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }

    /// Per-class example counts, aligned with [`Dataset::classes`].
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.classes.len()];
        for ex in &self.examples {
            if let Some(i) = self.class_index(&ex.label) {
                counts[i] += 1;
            }
        }
        counts
    }

    /// Fraction of total mass per class, aligned with [`Dataset::classes`].
    pub fn class_distribution(&self) -> Vec<f64> {
        let counts = self.class_counts();
        let total = self.len() as f64;
        counts.iter().map(|&c| c as f64 / total).collect()
    }

    fn subset(&self, indices: &[usize], tag: SplitTag) -> Result<Dataset, CorpusError> {
        let examples = indices.iter().map(|&i| self.examples[i].clone()).collect();
        Dataset::with_classes(examples, self.classes.clone(), tag)
    }

    /// Reads a dataset from a file, inferring the format from the extension
    /// unless one is given.
    pub fn ingest(path: &Path, format: Option<InputFormat>) -> Result<Dataset, CorpusError> {
        let format = match format {
            Some(f) => f,
            None => InputFormat::from_path(path)?,
        };
        let file = File::open(path)?;
        Self::ingest_reader(file, format)
    }

    pub fn ingest_reader<R: Read>(reader: R, format: InputFormat) -> Result<Dataset, CorpusError> {
        match format {
            InputFormat::Jsonl => Self::from_jsonl(reader),
            InputFormat::Csv => Self::from_delimited(reader, b','),
            InputFormat::Tsv => Self::from_delimited(reader, b'\t'),
        }
    }

    pub fn from_jsonl<R: Read>(reader: R) -> Result<Dataset, CorpusError> {
        let reader = BufReader::new(reader);
        let mut examples = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let ex: LabeledExample =
                serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRow {
                    line: i + 1,
                    reason: e.to_string(),
                })?;
            if ex.label.is_empty() {
                return Err(CorpusError::MalformedRow {
                    line: i + 1,
                    reason: "empty label".to_string(),
                });
            }
            examples.push(ex);
        }
        Dataset::new(examples)
    }

    fn from_delimited<R: Read>(reader: R, delimiter: u8) -> Result<Dataset, CorpusError> {
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .flexible(false)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| CorpusError::MalformedRow {
                line: 1,
                reason: e.to_string(),
            })?
            .clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let text_col = col("text").ok_or_else(|| CorpusError::MalformedRow {
            line: 1,
            reason: "missing required column \"text\"".to_string(),
        })?;
        let label_col = col("label").ok_or_else(|| CorpusError::MalformedRow {
            line: 1,
            reason: "missing required column \"label\"".to_string(),
        })?;
        let prov_col = col("provenance");

        let mut examples = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(|e| CorpusError::MalformedRow {
                line: e
                    .position()
                    .map(|p| p.line() as usize)
                    .unwrap_or(examples.len() + 2),
                reason: e.to_string(),
            })?;
            let line = record
                .position()
                .map(|p| p.line() as usize)
                .unwrap_or(examples.len() + 2);
            let field = |idx: usize| -> Result<&str, CorpusError> {
                record.get(idx).ok_or_else(|| CorpusError::MalformedRow {
                    line,
                    reason: format!("missing field at column {idx}"),
                })
            };
            let label = field(label_col)?;
            if label.is_empty() {
                return Err(CorpusError::MalformedRow {
                    line,
                    reason: "empty label".to_string(),
                });
            }
            let provenance = match prov_col {
                Some(idx) => match field(idx)? {
                    "" | "original" => Provenance::Original,
                    "boosted" => Provenance::Boosted,
                    other => {
                        return Err(CorpusError::MalformedRow {
                            line,
                            reason: format!("unknown provenance {other:?}"),
                        })
                    }
                },
                None => Provenance::Original,
            };
            examples.push(LabeledExample {
                text: field(text_col)?.to_string(),
                label: label.to_string(),
                provenance,
                diag_id: None,
            });
        }
        Dataset::new(examples)
    }

    /// Serializes to JSON-lines with a stable key order; byte-identical for
    /// equal datasets.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for ex in &self.examples {
            out.push_str(&serde_json::to_string(ex).expect("row serialization cannot fail"));
            out.push('\n');
        }
        out
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<(), CorpusError> {
        let mut file = File::create(path)?;
        file.write_all(self.to_jsonl().as_bytes())?;
        Ok(())
    }

    /// Applies preprocessing to every example, dropping the ones that come
    /// out empty or over-long. Surviving rows hold the normalized text.
    pub fn clean(&self, cfg: &PreprocessConfig) -> Result<(Dataset, CleanStats), CorpusError> {
        let mut kept = Vec::new();
        let mut dropped = 0usize;
        for ex in &self.examples {
            match preprocess(&ex.text, cfg) {
                Some(tokens) => kept.push(LabeledExample {
                    text: tokens.join(" "),
                    label: ex.label.clone(),
                    provenance: ex.provenance,
                    diag_id: ex.diag_id.clone(),
                }),
                None => dropped += 1,
            }
        }
        if kept.is_empty() {
            return Err(CorpusError::EmptyDataset);
        }
        let ds = Dataset::with_classes(kept, self.classes.clone(), self.tag)?;
        let stats = CleanStats {
            kept: ds.len(),
            dropped,
        };
        Ok((ds, stats))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CleanStats {
    pub kept: usize,
    pub dropped: usize,
}

/// Text normalization and filtering rules applied before any counting,
/// training, or scoring.
#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessConfig {
    /// Examples longer than this after filtering are dropped.
    pub max_tokens: usize,
    pub strip_punctuation: bool,
    pub drop_hashtags: bool,
    pub drop_urls: bool,
    // Stored normalized with the same rules applied to tokens, so matching
    // is exact. Mutate only through the provided methods.
    stopwords: HashSet<String>,
}

impl PreprocessConfig {
    pub fn new<I, S>(max_tokens: usize, stopwords: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut cfg = PreprocessConfig {
            max_tokens,
            strip_punctuation: true,
            drop_hashtags: true,
            drop_urls: true,
            stopwords: HashSet::new(),
        };
        cfg.set_stopwords(stopwords);
        cfg
    }

    /// Like `default()` but with an empty stopword list.
    pub fn without_stopwords() -> Self {
        PreprocessConfig::new(30, std::iter::empty::<&str>())
    }

    pub fn stopwords(&self) -> &HashSet<String> {
        &self.stopwords
    }

    /// Replaces the stopword list; entries are normalized with the active
    /// punctuation rule so they match post-normalization tokens.
    pub fn set_stopwords<I, S>(&mut self, stopwords: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        self.stopwords = stopwords
            .into_iter()
            .filter_map(|w| normalize_token(w.as_ref(), self.strip_punctuation))
            .collect();
    }

    pub fn parse_stopword_file(content: &str) -> Vec<String> {
        content
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_string)
            .collect()
    }
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig::new(30, Self::parse_stopword_file(DEFAULT_STOPWORDS))
    }
}

fn normalize_token(raw: &str, strip_punctuation: bool) -> Option<String> {
    let lower = raw.to_lowercase();
    let token: String = if strip_punctuation {
        lower.chars().filter(|c| !c.is_ascii_punctuation()).collect()
    } else {
        lower
    };
    if token.is_empty() {
        None
    } else {
        Some(token)
    }
}

/// Normalizes one raw text into tokens, or `None` if the example should be
/// dropped (nothing left, or longer than `cfg.max_tokens`).
///
/// Steps per whitespace-separated token: drop URLs and hashtags, lowercase,
/// strip ASCII punctuation, drop stopwords and empty residues. The function
/// is idempotent: feeding the joined output back in reproduces it.
pub fn preprocess(text: &str, cfg: &PreprocessConfig) -> Option<Vec<String>> {
    let mut out = Vec::new();
    for raw in text.split_whitespace() {
        let lower = raw.to_lowercase();
        if cfg.drop_urls
            && (lower.starts_with("http://")
                || lower.starts_with("https://")
                || lower.starts_with("www."))
        {
            continue;
        }
        if cfg.drop_hashtags && lower.starts_with('#') {
            continue;
        }
        let token = match normalize_token(raw, cfg.strip_punctuation) {
            Some(t) => t,
            None => continue,
        };
        if cfg.stopwords.contains(&token) {
            continue;
        }
        out.push(token);
    }
    if out.is_empty() || out.len() > cfg.max_tokens {
        None
    } else {
        Some(out)
    }
}

/// Apportions `target` slots across classes proportionally to `counts`,
/// flooring quotas and handing leftover slots to the largest remainders
/// (ties broken by class order). The result sums to `target` exactly.
pub(crate) fn largest_remainder(counts: &[usize], target: usize) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    debug_assert!(target <= total, "target exceeds population");
    if total == 0 {
        return vec![0; counts.len()];
    }
    let mut alloc = Vec::with_capacity(counts.len());
    let mut remainders = Vec::with_capacity(counts.len());
    for (i, &c) in counts.iter().enumerate() {
        let quota = target as f64 * c as f64 / total as f64;
        let floor = quota.floor() as usize;
        alloc.push(floor.min(c));
        remainders.push((quota - floor as f64, i));
    }
    let assigned: usize = alloc.iter().sum();
    let mut left = target.saturating_sub(assigned);
    remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    for &(_, i) in remainders.iter().cycle().take(remainders.len() * 2) {
        if left == 0 {
            break;
        }
        if alloc[i] < counts[i] {
            alloc[i] += 1;
            left -= 1;
        }
    }
    debug_assert_eq!(alloc.iter().sum::<usize>(), target);
    alloc
}

/// Draws `alloc[c]` examples of each class uniformly at random (seeded),
/// returning picked and remaining indices, both in original dataset order.
fn pick_per_class(
    ds: &Dataset,
    alloc: &[usize],
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::new();
    let mut rest = Vec::new();
    for (ci, class) in ds.classes().iter().enumerate() {
        let mut indices: Vec<usize> = ds
            .examples
            .iter()
            .enumerate()
            .filter(|(_, ex)| &ex.label == class)
            .map(|(i, _)| i)
            .collect();
        indices.shuffle(&mut rng);
        let take = alloc[ci].min(indices.len());
        picked.extend_from_slice(&indices[..take]);
        rest.extend_from_slice(&indices[take..]);
    }
    picked.sort_unstable();
    rest.sort_unstable();
    (picked, rest)
}

/// Splits into train and test, keeping each class's test share within one
/// example of `test_fraction * class_count` and at least one example of
/// every class on each side. Original relative order is preserved.
pub fn split_stratified(
    ds: &Dataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), CorpusError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(CorpusError::BadFraction(test_fraction));
    }
    let counts = ds.class_counts();
    for (ci, &c) in counts.iter().enumerate() {
        if c < 2 {
            return Err(CorpusError::StratifyImpossible {
                class: ds.classes[ci].clone(),
                count: c,
            });
        }
    }
    // Per-class rounding deviates from the exact share by at most 0.5, and
    // the clamps only bind when the exact share is within 1 of the boundary,
    // so every class stays within one example of its ideal on both sides.
    let alloc: Vec<usize> = counts
        .iter()
        .map(|&c| ((test_fraction * c as f64).round() as usize).clamp(1, c - 1))
        .collect();
    let (test_idx, train_idx) = pick_per_class(ds, &alloc, seed);
    let train = ds.subset(&train_idx, SplitTag::Train)?;
    let test = ds.subset(&test_idx, SplitTag::Test)?;
    Ok((train, test))
}

/// Subsamples to `round(fraction * len)` examples, stratified by class via
/// largest remainder. `fraction == 1.0` returns the dataset unchanged.
/// Errors if any class's share comes out as zero.
pub fn starve(ds: &Dataset, fraction: f64, seed: u64) -> Result<Dataset, CorpusError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CorpusError::BadFraction(fraction));
    }
    let counts = ds.class_counts();
    let target = (fraction * ds.len() as f64).round() as usize;
    let alloc = largest_remainder(&counts, target.min(ds.len()));
    for (ci, &a) in alloc.iter().enumerate() {
        if a == 0 && counts[ci] > 0 {
            return Err(CorpusError::StarvedClassEmpty {
                class: ds.classes[ci].clone(),
            });
        }
    }
    let (picked, _) = pick_per_class(ds, &alloc, seed);
    ds.subset(&picked, ds.tag)
}

/// Token-to-id mapping with three reserved entries: beginning of sequence,
/// end of sequence, and unknown.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub const BOS: u32 = 0;
    pub const EOS: u32 = 1;
    pub const UNK: u32 = 2;

    /// Builds a vocabulary from the preprocessed text of `ds`. Tokens seen
    /// fewer than `min_count` times are excluded; surviving tokens get ids
    /// in (count desc, token asc) order starting at 3.
    pub fn build(
        ds: &Dataset,
        cfg: &PreprocessConfig,
        min_count: usize,
    ) -> Result<Vocab, CorpusError> {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for ex in ds.examples() {
            if let Some(tokens) = preprocess(&ex.text, cfg) {
                for t in tokens {
                    // Reserved literals cannot be claimed by corpus text.
                    if t == BOS_TOKEN || t == EOS_TOKEN || t == UNK_TOKEN {
                        continue;
                    }
                    *counts.entry(t).or_insert(0) += 1;
                }
            }
        }
        let mut entries: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count)
            .collect();
        if entries.is_empty() {
            return Err(CorpusError::EmptyVocab { min_count });
        }
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Vocab::from_tokens(entries.into_iter().map(|(t, _)| t))
    }

    /// Builds a vocabulary from an already-ordered token list (ids 3..).
    pub fn from_tokens<I, S>(tokens: I) -> Result<Vocab, CorpusError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all = vec![
            BOS_TOKEN.to_string(),
            EOS_TOKEN.to_string(),
            UNK_TOKEN.to_string(),
        ];
        all.extend(tokens.into_iter().map(Into::into));
        let mut index = HashMap::with_capacity(all.len());
        for (i, t) in all.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(CorpusError::MalformedRow {
                    line: i + 1,
                    reason: format!("duplicate vocabulary token {t:?}"),
                });
            }
        }
        if all.len() <= 3 {
            return Err(CorpusError::EmptyVocab { min_count: 0 });
        }
        Ok(Vocab { tokens: all, index })
    }

    /// Total number of ids, reserved entries included.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(Self::UNK)
    }

    /// Non-reserved tokens in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[3..]
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.id_or_unk(t)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<&str> {
        ids.iter().map(|&i| self.token(i)).collect()
    }

    pub fn decode_text(&self, ids: &[u32]) -> String {
        self.decode(ids).join(" ")
    }
}
