//! Flat `key=value` run configuration shared by every subcommand.
//!
//! One file describes a whole run: paths, preprocessing, generator model,
//! guidance, and experiment grids. Command-line flags override file values,
//! and the merged result is written next to the outputs so a run can be
//! reproduced from its artifacts alone.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::corpus::{InputFormat, PreprocessConfig};
use crate::eval::{Arch, Method, NaiveEdit};
use crate::guide::GuideConfig;
use crate::lm::TrainLmConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    /// Every problem found in one pass, never just the first.
    #[error("invalid configuration:\n{}", problems.join("\n"))]
    Invalid { problems: Vec<String> },
}

/// Where preprocessing stopwords come from. Kept symbolic so the effective
/// config can be re-read to reproduce the run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StopwordSource {
    /// The compiled-in English list.
    Default,
    /// No stopword filtering at all.
    None,
    /// One word per line, `#` comments allowed.
    File(PathBuf),
}

impl StopwordSource {
    fn render(&self) -> String {
        match self {
            StopwordSource::Default => "default".into(),
            StopwordSource::None => "none".into(),
            StopwordSource::File(p) => p.display().to_string(),
        }
    }
}

/// Experiment grid parameters for the eval subcommands.
#[derive(Clone, Debug)]
pub struct EvalParams {
    pub test_fraction: f64,
    pub ngram_order: usize,
    pub max_attempts: u32,
    pub naive: NaiveEdit,
    pub fractions: Vec<f64>,
    pub ratios: Vec<(u32, u32)>,
    pub repeats: usize,
    pub archs: Vec<Arch>,
    pub methods: Vec<Method>,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams {
            test_fraction: 0.2,
            ngram_order: 3,
            max_attempts: 10,
            naive: NaiveEdit::default(),
            fractions: vec![0.05, 0.1, 0.2, 0.4],
            ratios: vec![(100, 0), (75, 25), (50, 50), (25, 75)],
            repeats: 5,
            archs: vec![Arch::Bag, Arch::Conv],
            methods: vec![Method::Original, Method::Guided],
        }
    }
}

/// Everything a run needs, resolved from defaults, then the config file,
/// then command-line flags, in that order.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub out: PathBuf,
    /// Generator checkpoint; defaults to `<out>/lm.ckpt` when unset.
    pub checkpoint: Option<PathBuf>,
    /// Lexicon table; defaults to `<out>/lexicon.tsv` when unset.
    pub lexicon: Option<PathBuf>,
    pub seed: u64,
    /// Worker threads for generation; 0 keeps the library default.
    pub jobs: usize,
    pub preprocess: PreprocessConfig,
    pub stopwords: StopwordSource,
    pub lm: TrainLmConfig,
    /// The generator trains on at most this many examples.
    pub lm_train_cap: usize,
    pub guide: GuideConfig,
    pub salience_size: usize,
    pub salience_min_count: u64,
    pub eval: EvalParams,
    /// Forced input format for ingest; autodetected from the extension
    /// when unset.
    pub ingest_format: Option<InputFormat>,
    /// `(examples, classes)`: ingest generates a synthetic corpus instead
    /// of reading a file.
    pub synth: Option<(usize, usize)>,
    /// Target size the boost command grows the dataset to.
    pub boost_full_size: Option<usize>,
    /// Per-class target proportions for boost; the dataset's own
    /// distribution when unset.
    pub boost_distribution: Option<Vec<(String, f64)>>,
    /// Reference corpus the ppl command trains its n-gram judge on.
    pub ppl_train: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            out: PathBuf::from("out"),
            checkpoint: None,
            lexicon: None,
            seed: 0,
            jobs: 0,
            preprocess: PreprocessConfig::default(),
            stopwords: StopwordSource::Default,
            lm: TrainLmConfig::default(),
            lm_train_cap: 1400,
            guide: GuideConfig {
                max_len: 14,
                ..GuideConfig::default()
            },
            salience_size: 24,
            salience_min_count: 2,
            eval: EvalParams::default(),
            ingest_format: None,
            synth: None,
            boost_full_size: None,
            boost_distribution: None,
            ppl_train: None,
        }
    }
}

pub fn parse_fractions(s: &str) -> Result<Vec<f64>, String> {
    let out = split_list(s)
        .map(|p| {
            p.parse::<f64>()
                .ok()
                .filter(|f| f.is_finite() && *f > 0.0 && *f <= 1.0)
                .ok_or_else(|| format!("bad fraction {p:?}, want a number in (0, 1]"))
        })
        .collect::<Result<Vec<f64>, String>>()?;
    if out.is_empty() {
        return Err("empty fraction list".into());
    }
    Ok(out)
}

pub fn parse_ratios(s: &str) -> Result<Vec<(u32, u32)>, String> {
    let out = split_list(s)
        .map(|p| {
            let bad = || format!("bad ratio {p:?}, want original/boosted like 75/25");
            let (o, b) = p.split_once('/').ok_or_else(bad)?;
            let o: u32 = o.trim().parse().map_err(|_| bad())?;
            let b: u32 = b.trim().parse().map_err(|_| bad())?;
            Ok((o, b))
        })
        .collect::<Result<Vec<(u32, u32)>, String>>()?;
    if out.is_empty() {
        return Err("empty ratio list".into());
    }
    Ok(out)
}

pub fn parse_archs(s: &str) -> Result<Vec<Arch>, String> {
    let out = split_list(s)
        .map(|p| match p {
            "bag" => Ok(Arch::Bag),
            "conv" => Ok(Arch::Conv),
            other => Err(format!("unknown architecture {other:?}, want bag or conv")),
        })
        .collect::<Result<Vec<Arch>, String>>()?;
    if out.is_empty() {
        return Err("empty architecture list".into());
    }
    Ok(out)
}

pub fn parse_methods(s: &str) -> Result<Vec<Method>, String> {
    let out = split_list(s)
        .map(|p| match p {
            "original" => Ok(Method::Original),
            "guided" => Ok(Method::Guided),
            "naive" => Ok(Method::Naive),
            other => Err(format!(
                "unknown method {other:?}, want original, guided, or naive"
            )),
        })
        .collect::<Result<Vec<Method>, String>>()?;
    if out.is_empty() {
        return Err("empty method list".into());
    }
    Ok(out)
}

/// Parses `class=share,class=share`; shares must be finite and nonnegative.
pub fn parse_distribution(s: &str) -> Result<Vec<(String, f64)>, String> {
    let out = split_list(s)
        .map(|p| {
            let bad = || format!("bad distribution entry {p:?}, want class=share");
            let (class, share) = p.split_once('=').ok_or_else(bad)?;
            let share: f64 = share.trim().parse().map_err(|_| bad())?;
            if !share.is_finite() || share < 0.0 {
                return Err(format!("share for {class:?} must be nonnegative"));
            }
            Ok((class.trim().to_string(), share))
        })
        .collect::<Result<Vec<(String, f64)>, String>>()?;
    if out.is_empty() {
        return Err("empty distribution".into());
    }
    Ok(out)
}

/// Parses the `EXAMPLESxCLASSES` shape of a synthetic corpus, e.g. `4000x2`.
pub fn parse_synth(s: &str) -> Result<(usize, usize), String> {
    let bad = || format!("bad synthetic shape {s:?}, want EXAMPLESxCLASSES like 4000x2");
    let (n, c) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let n: usize = n.trim().parse().map_err(|_| bad())?;
    let c: usize = c.trim().parse().map_err(|_| bad())?;
    Ok((n, c))
}

fn split_list(s: &str) -> impl Iterator<Item = &str> {
    s.split(',').map(str::trim).filter(|p| !p.is_empty())
}

fn render_fractions(fs: &[f64]) -> String {
    fs.iter()
        .map(f64::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn render_ratios(rs: &[(u32, u32)]) -> String {
    rs.iter()
        .map(|(o, b)| format!("{o}/{b}"))
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    /// Reads and merges a config file over the defaults. Problems are
    /// collected and reported together.
    pub fn from_file(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = RunConfig::default();
        cfg.merge_text(&text)?;
        Ok(cfg)
    }

    /// Applies `key=value` lines on top of the current values. Unknown
    /// keys, repeated keys, and unparsable values are all hard errors,
    /// listed exhaustively.
    pub fn merge_text(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut problems = Vec::new();
        let mut seen = HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                problems.push(format!("line {}: expected key=value", lineno + 1));
                continue;
            };
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                problems.push(format!("line {}: repeated key {key:?}", lineno + 1));
                continue;
            }
            if let Err(e) = self.set(key, value) {
                problems.push(format!("line {}: {e}", lineno + 1));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid { problems })
        }
    }

    /// Sets one key. Empty values clear optional keys and are rejected for
    /// scalar ones.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn scalar<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
            value
                .parse()
                .map_err(|_| format!("bad value {value:?} for {key}"))
        }
        fn opt_path(value: &str) -> Option<PathBuf> {
            if value.is_empty() {
                None
            } else {
                Some(PathBuf::from(value))
            }
        }
        match key {
            "dataset" => self.dataset = opt_path(value),
            "out" => {
                if value.is_empty() {
                    return Err("out must not be empty".into());
                }
                self.out = PathBuf::from(value);
            }
            "checkpoint" => self.checkpoint = opt_path(value),
            "lexicon" => self.lexicon = opt_path(value),
            "seed" => self.seed = scalar(key, value)?,
            "jobs" => self.jobs = scalar(key, value)?,
            "preprocess.max_tokens" => self.preprocess.max_tokens = scalar(key, value)?,
            "preprocess.strip_punctuation" => {
                self.preprocess.strip_punctuation = scalar(key, value)?
            }
            "preprocess.drop_hashtags" => self.preprocess.drop_hashtags = scalar(key, value)?,
            "preprocess.drop_urls" => self.preprocess.drop_urls = scalar(key, value)?,
            "preprocess.stopwords" => {
                self.stopwords = match value {
                    "default" | "" => StopwordSource::Default,
                    "none" => StopwordSource::None,
                    path => StopwordSource::File(PathBuf::from(path)),
                };
                self.apply_stopwords()?;
            }
            "lm.d_model" => self.lm.hyper.d_model = scalar(key, value)?,
            "lm.n_layers" => self.lm.hyper.n_layers = scalar(key, value)?,
            "lm.n_heads" => self.lm.hyper.n_heads = scalar(key, value)?,
            "lm.ctx_len" => self.lm.hyper.ctx_len = scalar(key, value)?,
            "lm.d_ff" => self.lm.hyper.d_ff = scalar(key, value)?,
            "lm.epochs" => self.lm.epochs = scalar(key, value)?,
            "lm.lr" => self.lm.lr = scalar(key, value)?,
            "lm.batch_size" => self.lm.batch_size = scalar(key, value)?,
            "lm.train_cap" => self.lm_train_cap = scalar(key, value)?,
            "guide.beta0" => self.guide.beta0 = scalar(key, value)?,
            "guide.sigma" => self.guide.sigma = scalar(key, value)?,
            "guide.k" => self.guide.k = scalar(key, value)?,
            "guide.eta" => self.guide.eta = scalar(key, value)?,
            "guide.temperature" => self.guide.temperature = scalar(key, value)?,
            "guide.max_len" => self.guide.max_len = scalar(key, value)?,
            "guide.num_rollouts" => self.guide.num_rollouts = scalar(key, value)?,
            "guide.epsilon" => self.guide.epsilon = scalar(key, value)?,
            "guide.prompt" => {
                self.guide.prompt = if value.is_empty() {
                    None
                } else {
                    Some(value.to_string())
                };
            }
            "salience.size" => self.salience_size = scalar(key, value)?,
            "salience.min_count" => self.salience_min_count = scalar(key, value)?,
            "eval.test_fraction" => self.eval.test_fraction = scalar(key, value)?,
            "eval.ngram_order" => self.eval.ngram_order = scalar(key, value)?,
            "eval.max_attempts" => self.eval.max_attempts = scalar(key, value)?,
            "eval.naive_delete_prob" => self.eval.naive.delete_prob = scalar(key, value)?,
            "eval.naive_swap_prob" => self.eval.naive.swap_prob = scalar(key, value)?,
            "eval.fractions" => self.eval.fractions = parse_fractions(value)?,
            "eval.ratios" => self.eval.ratios = parse_ratios(value)?,
            "eval.repeats" => self.eval.repeats = scalar(key, value)?,
            "eval.archs" => self.eval.archs = parse_archs(value)?,
            "eval.methods" => self.eval.methods = parse_methods(value)?,
            "ingest.format" => {
                self.ingest_format = match value {
                    "auto" | "" => None,
                    other => Some(other.parse().map_err(|_| {
                        format!("bad value {other:?} for ingest.format, want jsonl, csv, tsv, or auto")
                    })?),
                };
            }
            "ingest.synth" => {
                self.synth = match value {
                    "off" | "" => None,
                    shape => Some(parse_synth(shape)?),
                };
            }
            "boost.full_size" => {
                self.boost_full_size = if value.is_empty() {
                    None
                } else {
                    Some(scalar(key, value)?)
                };
            }
            "boost.distribution" => {
                self.boost_distribution = if value.is_empty() {
                    None
                } else {
                    Some(parse_distribution(value)?)
                };
            }
            "ppl.train" => self.ppl_train = opt_path(value),
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    /// Reloads the stopword set from the configured source.
    fn apply_stopwords(&mut self) -> Result<(), String> {
        match &self.stopwords {
            StopwordSource::Default => {
                self.preprocess
                    .set_stopwords(PreprocessConfig::default().stopwords().iter().cloned());
            }
            StopwordSource::None => {
                self.preprocess.set_stopwords(Vec::<String>::new());
            }
            StopwordSource::File(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| format!("cannot read stopword file {}: {e}", path.display()))?;
                self.preprocess
                    .set_stopwords(PreprocessConfig::parse_stopword_file(&text));
            }
        }
        Ok(())
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out.join("lm.ckpt"))
    }

    pub fn lexicon_path(&self) -> PathBuf {
        self.lexicon
            .clone()
            .unwrap_or_else(|| self.out.join("lexicon.tsv"))
    }

    /// Every key in file syntax, in schema order. Parsing this text back
    /// reproduces the config (stopword files are referenced, not inlined).
    pub fn to_kv(&self) -> String {
        fn opt(p: &Option<PathBuf>) -> String {
            p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
        }
        let mut s = String::new();
        let _ = writeln!(s, "dataset={}", opt(&self.dataset));
        let _ = writeln!(s, "out={}", self.out.display());
        let _ = writeln!(s, "checkpoint={}", opt(&self.checkpoint));
        let _ = writeln!(s, "lexicon={}", opt(&self.lexicon));
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "jobs={}", self.jobs);
        let _ = writeln!(s, "preprocess.max_tokens={}", self.preprocess.max_tokens);
        let _ = writeln!(
            s,
            "preprocess.strip_punctuation={}",
            self.preprocess.strip_punctuation
        );
        let _ = writeln!(s, "preprocess.drop_hashtags={}", self.preprocess.drop_hashtags);
        let _ = writeln!(s, "preprocess.drop_urls={}", self.preprocess.drop_urls);
        let _ = writeln!(s, "preprocess.stopwords={}", self.stopwords.render());
        let _ = writeln!(s, "lm.d_model={}", self.lm.hyper.d_model);
        let _ = writeln!(s, "lm.n_layers={}", self.lm.hyper.n_layers);
        let _ = writeln!(s, "lm.n_heads={}", self.lm.hyper.n_heads);
        let _ = writeln!(s, "lm.ctx_len={}", self.lm.hyper.ctx_len);
        let _ = writeln!(s, "lm.d_ff={}", self.lm.hyper.d_ff);
        let _ = writeln!(s, "lm.epochs={}", self.lm.epochs);
        let _ = writeln!(s, "lm.lr={}", self.lm.lr);
        let _ = writeln!(s, "lm.batch_size={}", self.lm.batch_size);
        let _ = writeln!(s, "lm.train_cap={}", self.lm_train_cap);
        s.push_str(&prefix_lines("guide.", &self.guide.to_kv()));
        let _ = writeln!(s, "salience.size={}", self.salience_size);
        let _ = writeln!(s, "salience.min_count={}", self.salience_min_count);
        let _ = writeln!(s, "eval.test_fraction={}", self.eval.test_fraction);
        let _ = writeln!(s, "eval.ngram_order={}", self.eval.ngram_order);
        let _ = writeln!(s, "eval.max_attempts={}", self.eval.max_attempts);
        let _ = writeln!(s, "eval.naive_delete_prob={}", self.eval.naive.delete_prob);
        let _ = writeln!(s, "eval.naive_swap_prob={}", self.eval.naive.swap_prob);
        let _ = writeln!(s, "eval.fractions={}", render_fractions(&self.eval.fractions));
        let _ = writeln!(s, "eval.ratios={}", render_ratios(&self.eval.ratios));
        let _ = writeln!(s, "eval.repeats={}", self.eval.repeats);
        let _ = writeln!(
            s,
            "eval.archs={}",
            self.eval
                .archs
                .iter()
                .map(|a| a.label())
                .collect::<Vec<_>>()
                .join(",")
        );
        let _ = writeln!(
            s,
            "eval.methods={}",
            self.eval
                .methods
                .iter()
                .map(|m| m.label())
                .collect::<Vec<_>>()
                .join(",")
        );
        let _ = writeln!(
            s,
            "ingest.format={}",
            match self.ingest_format {
                None => "auto".into(),
                Some(InputFormat::Jsonl) => "jsonl".to_string(),
                Some(InputFormat::Csv) => "csv".to_string(),
                Some(InputFormat::Tsv) => "tsv".to_string(),
            }
        );
        let _ = writeln!(
            s,
            "ingest.synth={}",
            self.synth
                .map(|(n, c)| format!("{n}x{c}"))
                .unwrap_or_else(|| "off".into())
        );
        let _ = writeln!(
            s,
            "boost.full_size={}",
            self.boost_full_size.map(|v| v.to_string()).unwrap_or_default()
        );
        let _ = writeln!(
            s,
            "boost.distribution={}",
            self.boost_distribution
                .as_ref()
                .map(|d| {
                    d.iter()
                        .map(|(c, r)| format!("{c}={r}"))
                        .collect::<Vec<_>>()
                        .join(",")
                })
                .unwrap_or_default()
        );
        let _ = writeln!(s, "ppl.train={}", opt(&self.ppl_train));
        s
    }

    /// Assembles the evaluation config the experiment runners take. The
    /// run-level preprocessing policy also governs LM training.
    pub fn eval_config(&self) -> crate::eval::EvalConfig {
        let mut lm = self.lm.clone();
        lm.preprocess = self.preprocess.clone();
        lm.seed = self.seed;
        crate::eval::EvalConfig {
            test_fraction: self.eval.test_fraction,
            lm_train_cap: self.lm_train_cap,
            lm,
            guide: self.guide.clone(),
            lexicon_size: self.salience_size,
            lexicon_min_count: self.salience_min_count,
            ngram_order: self.eval.ngram_order,
            naive: self.eval.naive.clone(),
            max_attempts: self.eval.max_attempts,
            seed: self.seed,
        }
    }
}

fn prefix_lines(prefix: &str, body: &str) -> String {
    let mut out = String::new();
    for line in body.lines() {
        out.push_str(prefix);
        out.push_str(line);
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_kv() {
        let cfg = RunConfig::default();
        let mut back = RunConfig::default();
        back.merge_text(&cfg.to_kv()).unwrap();
        assert_eq!(back.to_kv(), cfg.to_kv());
    }

    #[test]
    fn every_rendered_key_is_recognized() {
        let mut cfg = RunConfig::default();
        cfg.dataset = Some(PathBuf::from("d.jsonl"));
        cfg.checkpoint = Some(PathBuf::from("m.ckpt"));
        cfg.lexicon = Some(PathBuf::from("l.tsv"));
        cfg.synth = Some((4000, 2));
        cfg.boost_full_size = Some(800);
        cfg.boost_distribution = Some(vec![("a".into(), 0.5), ("b".into(), 0.5)]);
        cfg.ppl_train = Some(PathBuf::from("t.jsonl"));
        cfg.guide.prompt = Some("hello".into());
        let mut back = RunConfig::default();
        back.merge_text(&cfg.to_kv()).unwrap();
        assert_eq!(back.to_kv(), cfg.to_kv());
        assert_eq!(back.synth, Some((4000, 2)));
        assert_eq!(back.boost_full_size, Some(800));
    }

    #[test]
    fn unknown_and_repeated_keys_are_all_reported() {
        let mut cfg = RunConfig::default();
        let err = cfg
            .merge_text("bogus=1\nseed=2\nseed=3\nwat\n")
            .unwrap_err();
        match err {
            ConfigError::Invalid { problems } => {
                assert_eq!(problems.len(), 3);
                assert!(problems[0].contains("unknown key"));
                assert!(problems[1].contains("repeated key"));
                assert!(problems[2].contains("expected key=value"));
            }
            other => panic!("expected Invalid, got {other}"),
        }
        // The valid line still applied even though the merge failed.
        assert_eq!(cfg.seed, 2);
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let mut cfg = RunConfig::default();
        cfg.merge_text("# a comment\n\n  seed = 9\n").unwrap();
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn stopword_source_none_empties_the_set() {
        let mut cfg = RunConfig::default();
        assert!(!cfg.preprocess.stopwords().is_empty());
        cfg.set("preprocess.stopwords", "none").unwrap();
        assert!(cfg.preprocess.stopwords().is_empty());
        cfg.set("preprocess.stopwords", "default").unwrap();
        assert!(cfg.preprocess.stopwords().contains("the"));
    }

    #[test]
    fn list_parsers_reject_garbage() {
        assert!(parse_fractions("0.5,nope").is_err());
        assert!(parse_fractions("0.0").is_err());
        assert!(parse_ratios("75-25").is_err());
        assert!(parse_archs("bag,dense").is_err());
        assert!(parse_methods("guided,magic").is_err());
        assert!(parse_distribution("a=0.5,b").is_err());
        assert!(parse_distribution("a=-1").is_err());
        assert!(parse_synth("4000").is_err());
        assert_eq!(parse_synth("4000x2").unwrap(), (4000, 2));
        assert_eq!(parse_ratios("100/0, 25/75").unwrap(), vec![(100, 0), (25, 75)]);
    }

    #[test]
    fn guide_keys_route_into_guide_config() {
        let mut cfg = RunConfig::default();
        cfg.merge_text("guide.k=5\nguide.eta=0.5\nguide.prompt=so good\n")
            .unwrap();
        assert_eq!(cfg.guide.k, 5);
        assert_eq!(cfg.guide.eta, 0.5);
        assert_eq!(cfg.guide.prompt.as_deref(), Some("so good"));
    }

    #[test]
    fn eval_config_carries_run_seed_and_preprocess() {
        let mut cfg = RunConfig::default();
        cfg.merge_text("seed=77\npreprocess.max_tokens=9\n").unwrap();
        let ec = cfg.eval_config();
        assert_eq!(ec.seed, 77);
        assert_eq!(ec.lm.seed, 77);
        assert_eq!(ec.lm.preprocess.max_tokens, 9);
    }
}
