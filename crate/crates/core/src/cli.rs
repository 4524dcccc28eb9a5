//! Command-line entry points: one subcommand per pipeline stage.
//!
//! Resolution order for every setting is defaults, then `--config` file,
//! then flags. Each run writes its artifacts plus two sidecars into the
//! output directory: `effective_config.txt` (the merged configuration,
//! byte-stable across reruns) and `run_meta.json` (timestamps and
//! warnings; the only artifact allowed to differ between identical runs).
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime error,
//! 4 finished with warnings.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use crate::augment::{boost, mix_seed, plan_boost, BoostPlan};
use crate::config::{ConfigError, RunConfig};
use crate::corpus::{starve, Dataset, Vocab};
use crate::eval::{
    ratio_experiment, starvation_experiment, synth_corpus, ExperimentReport, SynthConfig,
};
use crate::lm::{ngram_perplexity, train_lm_traced, train_ngram, LmModel};
use crate::salience::{build_lexicon, count, Lexicon};

#[derive(Parser, Debug)]
#[command(
    name = "lexboost",
    version,
    about = "Grow starved labeled text datasets by lexically guided generation"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct CommonArgs {
    /// key=value config file; flags override file values
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Master seed for every derived random stream
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for generation (0 = all cores)
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Print the resolved plan and exit without writing anything
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// Output directory
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Read a labeled corpus (jsonl/csv/tsv), clean it, write dataset.jsonl
    Ingest(IngestArgs),
    /// Score per-class word salience, write lexicon.tsv
    Lexicon(LexiconArgs),
    /// Train the generator model, write a checkpoint and loss log
    TrainLm(TrainLmArgs),
    /// Generate examples until the dataset reaches its planned size
    Boost(BoostArgs),
    /// Starvation grid: train classifiers on restricted fractions
    EvalStarve(EvalStarveArgs),
    /// Ratio grid: fixed-size original/boosted mixes
    EvalRatio(EvalRatioArgs),
    /// Perplexity of a dataset under a held-out n-gram judge
    Ppl(PplArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Lexicon(_) => "lexicon",
            Command::TrainLm(_) => "train-lm",
            Command::Boost(_) => "boost",
            Command::EvalStarve(_) => "eval-starve",
            Command::EvalRatio(_) => "eval-ratio",
            Command::Ppl(_) => "ppl",
        }
    }
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Input corpus; jsonl needs {"text","label"} rows, csv/tsv a header
    /// with text and label columns
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,
    /// Force the input format instead of trusting the extension
    #[arg(long, value_name = "jsonl|csv|tsv")]
    pub format: Option<String>,
    /// Generate a synthetic corpus instead, e.g. 4000x2
    #[arg(long, value_name = "NxC", conflicts_with_all = ["input", "format"])]
    pub synth: Option<String>,
}

#[derive(Args, Debug)]
pub struct LexiconArgs {
    /// Labeled dataset to score
    #[arg(long, value_name = "FILE")]
    pub dataset: Option<PathBuf>,
    /// Words kept per class
    #[arg(long)]
    pub size: Option<usize>,
    /// Ignore words seen fewer times than this in a class
    #[arg(long)]
    pub min_count: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrainLmArgs {
    /// Training corpus
    #[arg(long, value_name = "FILE")]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Where to write the checkpoint (default <out>/lm.ckpt)
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BoostArgs {
    /// Starved dataset to grow
    #[arg(long, value_name = "FILE")]
    pub dataset: Option<PathBuf>,
    /// Generator checkpoint (default <out>/lm.ckpt)
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Salience lexicon (default <out>/lexicon.tsv)
    #[arg(long, value_name = "FILE")]
    pub lexicon: Option<PathBuf>,
    /// Total dataset size to grow to
    #[arg(long, value_name = "N")]
    pub full_size: Option<usize>,
    /// Target class proportions, e.g. alpha=0.5,beta=0.5
    /// (default: the dataset's own distribution)
    #[arg(long, value_name = "LIST")]
    pub distribution: Option<String>,
    /// Retry rounds per unfilled slot
    #[arg(long, value_name = "N")]
    pub max_attempts: Option<u32>,
    /// Skip the confirmation prompt after the plan table
    #[arg(long)]
    pub yes: bool,
}

#[derive(Args, Debug)]
pub struct EvalStarveArgs {
    /// Full labeled dataset the grid starves down
    #[arg(long, value_name = "FILE")]
    pub dataset: Option<PathBuf>,
    /// Comma-separated fractions of the dataset, e.g. 0.05,0.1
    #[arg(long, value_name = "LIST")]
    pub fractions: Option<String>,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Classifier architectures, e.g. bag,conv
    #[arg(long, value_name = "LIST")]
    pub archs: Option<String>,
    /// Training-set variants, e.g. original,guided,naive
    #[arg(long, value_name = "LIST")]
    pub methods: Option<String>,
}

#[derive(Args, Debug)]
pub struct EvalRatioArgs {
    /// Full labeled dataset the grid resamples
    #[arg(long, value_name = "FILE")]
    pub dataset: Option<PathBuf>,
    /// Comma-separated original/boosted mixes, e.g. 100/0,75/25
    #[arg(long, value_name = "LIST")]
    pub ratios: Option<String>,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Classifier architectures, e.g. bag,conv
    #[arg(long, value_name = "LIST")]
    pub archs: Option<String>,
}

#[derive(Args, Debug)]
pub struct PplArgs {
    /// Dataset to score
    #[arg(long, value_name = "FILE")]
    pub dataset: Option<PathBuf>,
    /// Corpus the n-gram judge trains on
    #[arg(long, value_name = "FILE")]
    pub train: Option<PathBuf>,
    /// Judge n-gram order (1..=5)
    #[arg(long)]
    pub order: Option<usize>,
}

#[derive(Debug)]
pub enum CliError {
    /// Every problem found, reported together. Exit 2.
    Config(Vec<String>),
    /// Failure during execution. Exit 3.
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Invalid { problems } => CliError::Config(problems),
            io @ ConfigError::Io { .. } => CliError::Config(vec![io.to_string()]),
        }
    }
}

/// Parses argv and runs; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // clap exits 2 on usage errors (unknown flags included) and 0 for
        // --help/--version.
        Err(e) => e.exit(),
    };
    let command = cli.command.name();
    match execute(cli) {
        Ok(warnings) if warnings.is_empty() => 0,
        Ok(warnings) => {
            let payload = serde_json::json!({ "command": command, "exit": 4, "warnings": warnings });
            eprintln!("{payload}");
            4
        }
        Err(CliError::Config(problems)) => {
            eprintln!("configuration errors:");
            for p in &problems {
                eprintln!("  {p}");
            }
            let payload = serde_json::json!({ "command": command, "exit": 2, "errors": problems });
            eprintln!("{payload}");
            2
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            let payload =
                serde_json::json!({ "command": command, "exit": 3, "errors": [format!("{e:#}")] });
            eprintln!("{payload}");
            3
        }
    }
}

/// Runs one parsed invocation and returns its warnings.
pub fn execute(cli: Cli) -> Result<Vec<String>, CliError> {
    let cfg = resolve_config(&cli)?;
    if cfg.jobs > 0 {
        // Only fails if a pool already exists, which keeps the earlier
        // width; a process runs exactly one command, so that is benign.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build_global();
    }
    let started = unix_now();
    let dry_run = cli.common.dry_run;
    let warnings = match &cli.command {
        Command::Ingest(_) => cmd_ingest(&cfg, dry_run)?,
        Command::Lexicon(_) => cmd_lexicon(&cfg, dry_run)?,
        Command::TrainLm(_) => cmd_train_lm(&cfg, dry_run)?,
        Command::Boost(args) => cmd_boost(&cfg, dry_run, args.yes)?,
        Command::EvalStarve(_) => cmd_eval_starve(&cfg, dry_run)?,
        Command::EvalRatio(_) => cmd_eval_ratio(&cfg, dry_run)?,
        Command::Ppl(_) => cmd_ppl(&cfg, dry_run)?,
    };
    if !dry_run {
        write_sidecars(&cfg, cli.command.name(), started, &warnings)?;
    }
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    Ok(warnings)
}

/// Merges defaults, the config file, global flags, and subcommand flags.
fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.common.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.common.seed {
        cfg.seed = seed;
    }
    if let Some(jobs) = cli.common.jobs {
        cfg.jobs = jobs;
    }
    if let Some(out) = &cli.common.out {
        cfg.out = out.clone();
    }

    let mut problems = Vec::new();
    let mut set = |cfg: &mut RunConfig, key: &str, value: &str| {
        if let Err(e) = cfg.set(key, value) {
            problems.push(format!("--{}: {e}", key.replace('.', "-")));
        }
    };
    match &cli.command {
        Command::Ingest(a) => {
            if let Some(p) = &a.input {
                cfg.dataset = Some(p.clone());
            }
            if let Some(f) = &a.format {
                set(&mut cfg, "ingest.format", f);
            }
            if let Some(s) = &a.synth {
                set(&mut cfg, "ingest.synth", s);
            }
        }
        Command::Lexicon(a) => {
            if let Some(p) = &a.dataset {
                cfg.dataset = Some(p.clone());
            }
            if let Some(n) = a.size {
                set(&mut cfg, "salience.size", &n.to_string());
            }
            if let Some(n) = a.min_count {
                set(&mut cfg, "salience.min_count", &n.to_string());
            }
        }
        Command::TrainLm(a) => {
            if let Some(p) = &a.dataset {
                cfg.dataset = Some(p.clone());
            }
            if let Some(n) = a.epochs {
                set(&mut cfg, "lm.epochs", &n.to_string());
            }
            if let Some(p) = &a.checkpoint {
                cfg.checkpoint = Some(p.clone());
            }
        }
        Command::Boost(a) => {
            if let Some(p) = &a.dataset {
                cfg.dataset = Some(p.clone());
            }
            if let Some(p) = &a.checkpoint {
                cfg.checkpoint = Some(p.clone());
            }
            if let Some(p) = &a.lexicon {
                cfg.lexicon = Some(p.clone());
            }
            if let Some(n) = a.full_size {
                cfg.boost_full_size = Some(n);
            }
            if let Some(d) = &a.distribution {
                set(&mut cfg, "boost.distribution", d);
            }
            if let Some(n) = a.max_attempts {
                set(&mut cfg, "eval.max_attempts", &n.to_string());
            }
        }
        Command::EvalStarve(a) => {
            if let Some(p) = &a.dataset {
                cfg.dataset = Some(p.clone());
            }
            if let Some(v) = &a.fractions {
                set(&mut cfg, "eval.fractions", v);
            }
            if let Some(n) = a.repeats {
                set(&mut cfg, "eval.repeats", &n.to_string());
            }
            if let Some(v) = &a.archs {
                set(&mut cfg, "eval.archs", v);
            }
            if let Some(v) = &a.methods {
                set(&mut cfg, "eval.methods", v);
            }
        }
        Command::EvalRatio(a) => {
            if let Some(p) = &a.dataset {
                cfg.dataset = Some(p.clone());
            }
            if let Some(v) = &a.ratios {
                set(&mut cfg, "eval.ratios", v);
            }
            if let Some(n) = a.repeats {
                set(&mut cfg, "eval.repeats", &n.to_string());
            }
            if let Some(v) = &a.archs {
                set(&mut cfg, "eval.archs", v);
            }
        }
        Command::Ppl(a) => {
            if let Some(p) = &a.dataset {
                cfg.dataset = Some(p.clone());
            }
            if let Some(p) = &a.train {
                cfg.ppl_train = Some(p.clone());
            }
            if let Some(n) = a.order {
                set(&mut cfg, "eval.ngram_order", &n.to_string());
            }
        }
    }
    validate_for(&cli.command, &cfg, &mut problems);
    if problems.is_empty() {
        Ok(cfg)
    } else {
        Err(CliError::Config(problems))
    }
}

/// Checks everything the command needs before any work starts, collecting
/// all failures rather than stopping at the first.
fn validate_for(command: &Command, cfg: &RunConfig, problems: &mut Vec<String>) {
    fn need_file(problems: &mut Vec<String>, what: &str, path: &Path) {
        if !path.is_file() {
            problems.push(format!("{what} {} is not a readable file", path.display()));
        }
    }
    fn need_dataset(problems: &mut Vec<String>, cfg: &RunConfig) {
        match &cfg.dataset {
            Some(p) => need_file(problems, "dataset", p),
            None => problems.push("no dataset given (flag --dataset or key dataset)".into()),
        }
    }
    match command {
        Command::Ingest(_) => {
            match (&cfg.synth, &cfg.dataset) {
                (None, None) => {
                    problems.push("ingest needs --input FILE or --synth NxC".into());
                }
                (None, Some(p)) => need_file(problems, "input", p),
                (Some((n, c)), _) => {
                    let synth = SynthConfig {
                        n_examples: *n,
                        n_classes: *c,
                        seed: cfg.seed,
                        ..SynthConfig::default()
                    };
                    if let Err(e) = synth.validate() {
                        problems.push(format!("--synth: {e}"));
                    }
                }
            }
        }
        Command::Lexicon(_) => {
            need_dataset(problems, cfg);
            if cfg.salience_size == 0 {
                problems.push("salience.size must be positive".into());
            }
        }
        Command::TrainLm(_) => {
            need_dataset(problems, cfg);
            if let Err(e) = cfg.lm.hyper.validate() {
                problems.push(e.to_string());
            }
            if cfg.lm.epochs == 0 {
                problems.push("lm.epochs must be at least 1".into());
            }
            if cfg.lm_train_cap == 0 {
                problems.push("lm.train_cap must be positive".into());
            }
        }
        Command::Boost(_) => {
            need_dataset(problems, cfg);
            need_file(problems, "checkpoint", &cfg.checkpoint_path());
            need_file(problems, "lexicon", &cfg.lexicon_path());
            if cfg.boost_full_size.is_none() {
                problems.push("boost needs --full-size N (key boost.full_size)".into());
            }
            if let Err(e) = cfg.guide.validate() {
                problems.push(e.to_string());
            }
            if cfg.eval.max_attempts == 0 {
                problems.push("eval.max_attempts must be positive".into());
            }
        }
        Command::EvalStarve(_) | Command::EvalRatio(_) => {
            need_dataset(problems, cfg);
            if cfg.eval.repeats == 0 {
                problems.push("eval.repeats must be at least 1".into());
            }
            if let Err(e) = cfg.eval_config().validate() {
                problems.push(e.to_string());
            }
        }
        Command::Ppl(_) => {
            need_dataset(problems, cfg);
            match &cfg.ppl_train {
                Some(p) => need_file(problems, "judge train corpus", p),
                None => problems.push("ppl needs --train FILE (key ppl.train)".into()),
            }
            if !(1..=5).contains(&cfg.eval.ngram_order) {
                problems.push(format!(
                    "eval.ngram_order must be 1..=5, got {}",
                    cfg.eval.ngram_order
                ));
            }
        }
    }
}

fn cmd_ingest(cfg: &RunConfig, dry_run: bool) -> Result<Vec<String>, CliError> {
    let source = match (&cfg.synth, &cfg.dataset) {
        (Some((n, c)), _) => format!("synthetic corpus, {n} examples x {c} classes"),
        (None, Some(p)) => format!("file {}", p.display()),
        (None, None) => unreachable!("validated"),
    };
    let out_path = cfg.out.join("dataset.jsonl");
    if dry_run {
        println!("would ingest {source}");
        println!("would write {}", out_path.display());
        return Ok(Vec::new());
    }
    let raw = match (&cfg.synth, &cfg.dataset) {
        (Some((n, c)), _) => {
            let synth = SynthConfig {
                n_examples: *n,
                n_classes: *c,
                seed: cfg.seed,
                ..SynthConfig::default()
            };
            synth_corpus(&synth).map_err(|e| CliError::Runtime(e.into()))?
        }
        (None, Some(path)) => Dataset::ingest(path, cfg.ingest_format)
            .with_context(|| format!("ingesting {}", path.display()))
            .map_err(CliError::Runtime)?,
        (None, None) => unreachable!("validated"),
    };
    let (clean, stats) = raw
        .clean(&cfg.preprocess)
        .context("cleaning")
        .map_err(CliError::Runtime)?;
    ensure_out(&cfg.out)?;
    clean
        .save_jsonl(&out_path)
        .context("writing dataset")
        .map_err(CliError::Runtime)?;
    println!(
        "ingested {} examples across {} classes ({} dropped by preprocessing)",
        clean.len(),
        clean.classes().len(),
        stats.dropped
    );
    println!("wrote {}", out_path.display());
    Ok(Vec::new())
}

fn cmd_lexicon(cfg: &RunConfig, dry_run: bool) -> Result<Vec<String>, CliError> {
    let dataset = cfg.dataset.as_ref().expect("validated");
    let out_path = cfg.lexicon_path();
    if dry_run {
        println!(
            "would score salience over {} and keep the top {} words per class (min count {})",
            dataset.display(),
            cfg.salience_size,
            cfg.salience_min_count
        );
        println!("would write {}", out_path.display());
        return Ok(Vec::new());
    }
    let ds = load_dataset(dataset)?;
    let table = count(&ds, &cfg.preprocess)
        .context("counting words")
        .map_err(CliError::Runtime)?;
    let lexicon = build_lexicon(&table, cfg.salience_size, cfg.salience_min_count)
        .context("building lexicon")
        .map_err(CliError::Runtime)?;
    ensure_out(&cfg.out)?;
    if let Some(dir) = out_path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(e.into()))?;
    }
    lexicon
        .save(&out_path)
        .context("writing lexicon")
        .map_err(CliError::Runtime)?;
    let mut warnings = Vec::new();
    for class in lexicon.classes() {
        let n = lexicon.entry(class).map_or(0, |e| e.len());
        println!("class {class}: {n} words");
        if n < cfg.salience_size {
            warnings.push(format!(
                "class {class}: only {n} of {} requested words cleared the count floor",
                cfg.salience_size
            ));
        }
    }
    println!("wrote {}", out_path.display());
    Ok(warnings)
}

fn cmd_train_lm(cfg: &RunConfig, dry_run: bool) -> Result<Vec<String>, CliError> {
    let dataset = cfg.dataset.as_ref().expect("validated");
    let ckpt_path = cfg.checkpoint_path();
    let log_path = cfg.out.join("train_log.tsv");
    if dry_run {
        let h = &cfg.lm.hyper;
        println!(
            "would train on {} (cap {} examples): d_model {}, {} layers, {} heads, ctx {}, ffn {}, {} epochs",
            dataset.display(),
            cfg.lm_train_cap,
            h.d_model,
            h.n_layers,
            h.n_heads,
            h.ctx_len,
            h.d_ff,
            cfg.lm.epochs
        );
        println!("would write {} and {}", ckpt_path.display(), log_path.display());
        return Ok(Vec::new());
    }
    let ds = load_dataset(dataset)?;
    // Vocabulary comes from the full corpus even when training is capped,
    // so later guidance can reference words the sample missed.
    let vocab = Vocab::build(&ds, &cfg.preprocess, 1)
        .context("building vocabulary")
        .map_err(CliError::Runtime)?;
    let train_ds = if ds.len() > cfg.lm_train_cap {
        let frac = cfg.lm_train_cap as f64 / ds.len() as f64;
        starve(&ds, frac, mix_seed(&[cfg.seed, 0x1b]))
            .context("subsampling")
            .map_err(CliError::Runtime)?
    } else {
        ds
    };
    let mut lm_cfg = cfg.lm.clone();
    lm_cfg.preprocess = cfg.preprocess.clone();
    lm_cfg.seed = cfg.seed;
    println!(
        "training on {} examples, vocabulary {} words",
        train_ds.len(),
        vocab.len()
    );
    let (model, losses) = train_lm_traced(&train_ds, vocab, &lm_cfg)
        .context("training")
        .map_err(CliError::Runtime)?;
    ensure_out(&cfg.out)?;
    if let Some(dir) = ckpt_path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(e.into()))?;
    }
    model
        .save(&ckpt_path)
        .context("writing checkpoint")
        .map_err(CliError::Runtime)?;
    let mut log = String::from("epoch\tmean_nll\tppl\n");
    for (i, nll) in losses.iter().enumerate() {
        log.push_str(&format!("{}\t{:.6}\t{:.3}\n", i + 1, nll, nll.exp()));
    }
    std::fs::write(&log_path, log).map_err(|e| CliError::Runtime(e.into()))?;
    let last = losses.last().expect("at least one epoch");
    println!("final train perplexity {:.3}", last.exp());
    println!("wrote {} and {}", ckpt_path.display(), log_path.display());
    Ok(Vec::new())
}

/// Reads one stdin line after the plan table; only an explicit y/yes
/// proceeds, so piped runs without --yes stop at EOF instead of running.
fn confirm_proceed() -> bool {
    println!("proceed with generation? [y/N]");
    let mut line = String::new();
    if std::io::stdin().read_line(&mut line).is_err() {
        return false;
    }
    matches!(line.trim().to_ascii_lowercase().as_str(), "y" | "yes")
}

/// Resolves the boost plan from config and dataset; shared by the dry run
/// and the real run.
fn resolve_plan(cfg: &RunConfig, ds: &Dataset) -> Result<BoostPlan, CliError> {
    let full_size = cfg.boost_full_size.expect("validated");
    let distribution = match &cfg.boost_distribution {
        Some(d) => d.clone(),
        None => ds
            .classes()
            .iter()
            .cloned()
            .zip(ds.class_distribution())
            .collect(),
    };
    let mut plan = plan_boost(
        ds,
        full_size,
        &distribution,
        cfg.guide.clone(),
        mix_seed(&[cfg.seed, 0x2b]),
    )
    .context("planning")
    .map_err(CliError::Runtime)?;
    plan.max_attempts = cfg.eval.max_attempts;
    Ok(plan)
}

fn cmd_boost(cfg: &RunConfig, dry_run: bool, yes: bool) -> Result<Vec<String>, CliError> {
    let dataset = cfg.dataset.as_ref().expect("validated");
    let ds = load_dataset(dataset)?;
    let plan = resolve_plan(cfg, &ds)?;
    print!("{}", plan.render_table());
    if dry_run {
        return Ok(Vec::new());
    }
    if !yes && !confirm_proceed() {
        return Err(CliError::Runtime(anyhow::anyhow!(
            "aborted at the confirmation prompt; pass --yes to skip it"
        )));
    }
    let model = LmModel::load(&cfg.checkpoint_path())
        .with_context(|| format!("loading checkpoint {}", cfg.checkpoint_path().display()))
        .map_err(CliError::Runtime)?;
    let lexicon = Lexicon::load(&cfg.lexicon_path())
        .with_context(|| format!("loading lexicon {}", cfg.lexicon_path().display()))
        .map_err(CliError::Runtime)?;
    let outcome = boost(&ds, &plan, &model, &lexicon)
        .context("generating")
        .map_err(CliError::Runtime)?;
    ensure_out(&cfg.out)?;
    let data_path = cfg.out.join("boosted.jsonl");
    outcome
        .dataset
        .save_jsonl(&data_path)
        .context("writing boosted dataset")
        .map_err(CliError::Runtime)?;
    let diag_path = cfg.out.join("diagnostics.jsonl");
    let mut diag = String::new();
    for row in &outcome.rows {
        diag.push_str(&serde_json::to_string(row).expect("diagnostics serialize"));
        diag.push('\n');
    }
    std::fs::write(&diag_path, diag).map_err(|e| CliError::Runtime(e.into()))?;
    println!(
        "generated {} of {} planned examples; dataset now {} examples",
        outcome.rows.len(),
        plan.total_boost(),
        outcome.dataset.len()
    );
    println!("wrote {} and {}", data_path.display(), diag_path.display());
    let warnings = outcome
        .exhausted
        .iter()
        .map(|e| {
            format!(
                "class {}: {} slots unfilled after {} attempts",
                e.class, e.missing, plan.max_attempts
            )
        })
        .collect();
    Ok(warnings)
}

/// Writes an experiment report pair (full grid plus per-condition summary)
/// and returns warnings for unfilled generation slots.
fn write_report(
    cfg: &RunConfig,
    report: &ExperimentReport,
    stem: &str,
) -> Result<Vec<String>, CliError> {
    ensure_out(&cfg.out)?;
    let grid_path = cfg.out.join(format!("{stem}.tsv"));
    let summary_path = cfg.out.join(format!("{stem}_summary.tsv"));
    std::fs::write(&grid_path, report.to_tsv()).map_err(|e| CliError::Runtime(e.into()))?;
    std::fs::write(&summary_path, report.summary_tsv())
        .map_err(|e| CliError::Runtime(e.into()))?;
    print!("{}", report.summary_tsv());
    println!("wrote {} and {}", grid_path.display(), summary_path.display());
    let mut warnings = Vec::new();
    for row in &report.rows {
        if row.unfilled > 0 {
            warnings.push(format!(
                "condition {} repeat {} ({}, {}): {} planned examples never generated",
                row.label,
                row.repeat,
                row.method.label(),
                row.arch.label(),
                row.unfilled
            ));
        }
    }
    Ok(warnings)
}

fn grid_line(cfg: &RunConfig, conditions: usize) -> String {
    format!(
        "{} conditions x {} repeats, architectures {}, seed {}",
        conditions,
        cfg.eval.repeats,
        cfg.eval
            .archs
            .iter()
            .map(|a| a.label())
            .collect::<Vec<_>>()
            .join(","),
        cfg.seed
    )
}

fn cmd_eval_starve(cfg: &RunConfig, dry_run: bool) -> Result<Vec<String>, CliError> {
    let dataset = cfg.dataset.as_ref().expect("validated");
    if dry_run {
        println!(
            "would starve {} to fractions {:?} and compare methods {}",
            dataset.display(),
            cfg.eval.fractions,
            cfg.eval
                .methods
                .iter()
                .map(|m| m.label())
                .collect::<Vec<_>>()
                .join(",")
        );
        println!(
            "{}",
            grid_line(cfg, cfg.eval.fractions.len() * cfg.eval.methods.len())
        );
        println!("would write {}", cfg.out.join("starvation.tsv").display());
        return Ok(Vec::new());
    }
    let ds = load_dataset(dataset)?;
    let report = starvation_experiment(
        &ds,
        &cfg.eval.fractions,
        cfg.eval.repeats,
        &cfg.eval.archs,
        &cfg.eval.methods,
        &cfg.eval_config(),
    )
    .context("running starvation grid")
    .map_err(CliError::Runtime)?;
    write_report(cfg, &report, "starvation")
}

fn cmd_eval_ratio(cfg: &RunConfig, dry_run: bool) -> Result<Vec<String>, CliError> {
    let dataset = cfg.dataset.as_ref().expect("validated");
    if dry_run {
        println!(
            "would rebuild {} at original/boosted mixes {}",
            dataset.display(),
            cfg.eval
                .ratios
                .iter()
                .map(|(o, b)| format!("{o}/{b}"))
                .collect::<Vec<_>>()
                .join(",")
        );
        println!("{}", grid_line(cfg, cfg.eval.ratios.len()));
        println!("would write {}", cfg.out.join("ratio.tsv").display());
        return Ok(Vec::new());
    }
    let ds = load_dataset(dataset)?;
    let report = ratio_experiment(
        &ds,
        &cfg.eval.ratios,
        cfg.eval.repeats,
        &cfg.eval.archs,
        &cfg.eval_config(),
    )
    .context("running ratio grid")
    .map_err(CliError::Runtime)?;
    write_report(cfg, &report, "ratio")
}

fn cmd_ppl(cfg: &RunConfig, dry_run: bool) -> Result<Vec<String>, CliError> {
    let dataset = cfg.dataset.as_ref().expect("validated");
    let train = cfg.ppl_train.as_ref().expect("validated");
    let out_path = cfg.out.join("ppl.txt");
    if dry_run {
        println!(
            "would train an order-{} judge on {} and score {}",
            cfg.eval.ngram_order,
            train.display(),
            dataset.display()
        );
        println!("would write {}", out_path.display());
        return Ok(Vec::new());
    }
    let score_ds = load_dataset(dataset)?;
    let train_ds = load_dataset(train)?;
    let vocab = Vocab::build(&train_ds, &cfg.preprocess, 1)
        .context("building judge vocabulary")
        .map_err(CliError::Runtime)?;
    let judge = train_ngram(
        &train_ds,
        vocab,
        cfg.preprocess.clone(),
        cfg.eval.ngram_order,
    )
    .context("training judge")
    .map_err(CliError::Runtime)?;
    let ppl = ngram_perplexity(&judge, &score_ds)
        .context("scoring")
        .map_err(CliError::Runtime)?;
    ensure_out(&cfg.out)?;
    std::fs::write(&out_path, format!("{ppl:.6}\n")).map_err(|e| CliError::Runtime(e.into()))?;
    println!("perplexity {ppl:.3} over {} examples", score_ds.len());
    println!("wrote {}", out_path.display());
    Ok(Vec::new())
}

fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    Dataset::ingest(path, None)
        .with_context(|| format!("loading {}", path.display()))
        .map_err(CliError::Runtime)
}

fn ensure_out(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))
        .map_err(CliError::Runtime)
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Writes `effective_config.txt` and `run_meta.json`. The config dump is
/// byte-stable for identical runs; timestamps live only in the meta file.
fn write_sidecars(
    cfg: &RunConfig,
    command: &str,
    started: u64,
    warnings: &[String],
) -> Result<(), CliError> {
    ensure_out(&cfg.out)?;
    std::fs::write(cfg.out.join("effective_config.txt"), cfg.to_kv())
        .map_err(|e| CliError::Runtime(e.into()))?;
    let meta = serde_json::json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "started_unix": started,
        "finished_unix": unix_now(),
        "warnings": warnings,
    });
    std::fs::write(
        cfg.out.join("run_meta.json"),
        format!("{}\n", serde_json::to_string_pretty(&meta).expect("meta serialize")),
    )
    .map_err(|e| CliError::Runtime(e.into()))?;
    Ok(())
}
