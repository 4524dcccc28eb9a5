//! End-to-end checks of the command-line pipeline: every stage is driven
//! through the real binary, and artifacts are validated by re-loading them
//! with the library.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use lexboost::corpus::{Dataset, Provenance};
use lexboost::lm::LmModel;
use lexboost::salience::Lexicon;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_lexboost")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout:\n{}\nstderr:\n{}",
        stdout(out),
        stderr(out)
    );
}

/// Decoding settings small enough that a full chain runs in seconds.
const MICRO_CONF: &str = "\
lm.d_model = 32
lm.n_layers = 1
lm.n_heads = 2
lm.ctx_len = 16
lm.d_ff = 64
lm.epochs = 3
guide.k = 1
guide.max_len = 6
guide.num_rollouts = 2
salience.size = 8
salience.min_count = 1
";

struct Fixture {
    #[allow(dead_code)]
    dir: tempfile::TempDir,
    conf: PathBuf,
    dataset: PathBuf,
    checkpoint: PathBuf,
    lexicon: PathBuf,
}

/// Ingests a synthetic corpus, scores its lexicon, and trains a tiny
/// generator once; read-only for every test.
fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dir = tempfile::tempdir().expect("tempdir");
        let conf = dir.path().join("micro.conf");
        std::fs::write(&conf, MICRO_CONF).unwrap();
        let out = dir.path().join("base");
        let c = conf.to_str().unwrap();
        let o = out.to_str().unwrap();
        let r = run(&["ingest", "--synth", "200x2", "--seed", "5", "--out", o]);
        assert_exit(&r, 0);
        let dataset = out.join("dataset.jsonl");
        let d = dataset.to_str().unwrap();
        let r = run(&["lexicon", "--config", c, "--dataset", d, "--out", o]);
        assert_exit(&r, 0);
        let r = run(&["train-lm", "--config", c, "--dataset", d, "--out", o]);
        assert_exit(&r, 0);
        Fixture {
            conf,
            dataset,
            checkpoint: out.join("lm.ckpt"),
            lexicon: out.join("lexicon.tsv"),
            dir,
        }
    })
}

/// Runs boost against the shared fixture with extra args appended.
fn run_boost(out_dir: &Path, extra: &[&str]) -> Output {
    let f = fixture();
    let mut args = vec![
        "boost",
        "--config",
        f.conf.to_str().unwrap(),
        "--dataset",
        f.dataset.to_str().unwrap(),
        "--checkpoint",
        f.checkpoint.to_str().unwrap(),
        "--lexicon",
        f.lexicon.to_str().unwrap(),
        "--full-size",
        "240",
    ];
    args.extend(["--out", out_dir.to_str().unwrap()]);
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn fixture_artifacts_reload_cleanly() {
    let f = fixture();
    let ds = Dataset::ingest(&f.dataset, None).unwrap();
    assert_eq!(ds.len(), 200);
    assert_eq!(ds.classes(), ["alpha", "beta"]);
    let lexicon = Lexicon::load(&f.lexicon).unwrap();
    assert_eq!(lexicon.classes(), ["alpha", "beta"]);
    assert_eq!(lexicon.entry("alpha").unwrap().len(), 8);
    let model = LmModel::load(&f.checkpoint).unwrap();
    assert_eq!(model.hyper().d_model, 32);
    // Every lexicon word must have survived into the generator vocabulary.
    for class in lexicon.classes() {
        for (word, _) in lexicon.entry(class).unwrap() {
            assert!(model.vocab().id(word).is_some(), "{word} missing");
        }
    }
}

#[test]
fn ingest_csv_cleans_and_writes_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("raw.csv");
    std::fs::write(
        &csv,
        "text,label\nThe SPICY noodle soup slaps,food\nrain delays the late train again,weather\n\
a,food\nsunny and warm all weekend,weather\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let r = run(&[
        "ingest",
        "--input",
        csv.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_exit(&r, 0);
    // "a" collapses to nothing after cleaning and is dropped.
    assert!(stdout(&r).contains("1 dropped"), "{}", stdout(&r));
    let ds = Dataset::ingest(&out.join("dataset.jsonl"), None).unwrap();
    assert_eq!(ds.len(), 3);
    assert_eq!(ds.classes(), ["food", "weather"]);
}

#[test]
fn boost_grows_dataset_to_plan() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let r = run_boost(&out, &[]);
    assert_exit(&r, 0);
    let boosted = Dataset::ingest(&out.join("boosted.jsonl"), None).unwrap();
    assert_eq!(boosted.len(), 240);
    let generated: Vec<_> = boosted
        .examples()
        .iter()
        .filter(|ex| ex.provenance == Provenance::Boosted)
        .collect();
    assert_eq!(generated.len(), 40);
    // One diagnostics row per generated example, in the same order.
    let diag = std::fs::read_to_string(out.join("diagnostics.jsonl")).unwrap();
    let rows: Vec<serde_json::Value> = diag
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.len(), generated.len());
    for (row, ex) in rows.iter().zip(&generated) {
        assert_eq!(
            row["id"].as_str().unwrap(),
            ex.diag_id.as_deref().unwrap()
        );
        assert!(row["steps"].as_array().unwrap().len() <= 6);
    }
    // The effective config reproduces the run byte for byte.
    let rerun = dir.path().join("rerun");
    let r = run(&[
        "boost",
        "--config",
        out.join("effective_config.txt").to_str().unwrap(),
        "--out",
        rerun.to_str().unwrap(),
    ]);
    assert_exit(&r, 0);
    assert_eq!(
        std::fs::read(out.join("boosted.jsonl")).unwrap(),
        std::fs::read(rerun.join("boosted.jsonl")).unwrap()
    );
}

#[test]
fn boost_dry_run_prints_plan_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let r = run_boost(&out, &["--dry-run"]);
    assert_exit(&r, 0);
    let text = stdout(&r);
    assert!(text.contains("class"), "{text}");
    assert!(text.contains("alpha              100      20     120"), "{text}");
    assert!(text.contains("total              200      40     240"), "{text}");
    assert!(!out.exists(), "dry run must not create the output directory");
}

#[test]
fn boost_output_is_independent_of_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let one = dir.path().join("one");
    let many = dir.path().join("many");
    assert_exit(&run_boost(&one, &["--jobs", "1"]), 0);
    assert_exit(&run_boost(&many, &["--jobs", "4"]), 0);
    assert_eq!(
        std::fs::read(one.join("boosted.jsonl")).unwrap(),
        std::fs::read(many.join("boosted.jsonl")).unwrap()
    );
    assert_eq!(
        std::fs::read(one.join("diagnostics.jsonl")).unwrap(),
        std::fs::read(many.join("diagnostics.jsonl")).unwrap()
    );
}

#[test]
fn rerun_changes_only_the_metadata_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_exit(&run_boost(&out, &[]), 0);
    let mut first = std::collections::BTreeMap::new();
    for entry in std::fs::read_dir(&out).unwrap() {
        let path = entry.unwrap().path();
        first.insert(path.clone(), std::fs::read(&path).unwrap());
    }
    std::thread::sleep(std::time::Duration::from_millis(1100));
    assert_exit(&run_boost(&out, &[]), 0);
    for (path, bytes) in &first {
        let now = std::fs::read(path).unwrap();
        if path.file_name().unwrap() == "run_meta.json" {
            continue;
        }
        assert_eq!(&now, bytes, "{} changed across identical runs", path.display());
    }
}

#[test]
fn config_errors_are_exhaustive_and_exit_2() {
    let r = run(&["boost", "--dataset", "nope.jsonl"]);
    assert_exit(&r, 2);
    let err = stderr(&r);
    for needle in ["nope.jsonl", "checkpoint", "lexicon", "full-size"] {
        assert!(err.contains(needle), "missing {needle} in:\n{err}");
    }
    // The last stderr line is machine readable.
    let json_line = err.lines().rev().find(|l| l.starts_with('{')).unwrap();
    let v: serde_json::Value = serde_json::from_str(json_line).unwrap();
    assert_eq!(v["exit"], 2);
    assert!(v["errors"].as_array().unwrap().len() >= 4);
}

#[test]
fn unknown_flags_and_subcommands_exit_2() {
    assert_exit(&run(&["ingest", "--frobnicate"]), 2);
    assert_exit(&run(&["explode"]), 2);
    let r = run(&["--help"]);
    assert_exit(&r, 0);
    assert!(stdout(&r).contains("eval-starve"));
}

#[test]
fn bad_config_file_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("bad.conf");
    std::fs::write(&conf, "seed=1\nmystery.knob=7\n").unwrap();
    let r = run(&[
        "ingest",
        "--config",
        conf.to_str().unwrap(),
        "--synth",
        "100x2",
    ]);
    assert_exit(&r, 2);
    assert!(stderr(&r).contains("unknown key"), "{}", stderr(&r));
}

#[test]
fn corrupt_checkpoint_is_a_runtime_error() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let fake = dir.path().join("lm.ckpt");
    std::fs::write(&fake, b"not a checkpoint").unwrap();
    let r = run(&[
        "boost",
        "--config",
        f.conf.to_str().unwrap(),
        "--dataset",
        f.dataset.to_str().unwrap(),
        "--checkpoint",
        fake.to_str().unwrap(),
        "--lexicon",
        f.lexicon.to_str().unwrap(),
        "--full-size",
        "240",
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_exit(&r, 3);
    assert!(stderr(&r).contains("loading checkpoint"), "{}", stderr(&r));
}

#[test]
fn exhausted_slots_warn_and_exit_4() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("tight.conf");
    // Short, cold generations repeat quickly, and a single attempt per
    // slot leaves the surplus unfilled.
    std::fs::write(
        &conf,
        "guide.k = 0\nguide.max_len = 3\nguide.temperature = 0.4\nguide.num_rollouts = 1\n\
eval.max_attempts = 1\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let r = run(&[
        "boost",
        "--config",
        conf.to_str().unwrap(),
        "--dataset",
        f.dataset.to_str().unwrap(),
        "--checkpoint",
        f.checkpoint.to_str().unwrap(),
        "--lexicon",
        f.lexicon.to_str().unwrap(),
        "--full-size",
        "360",
        "--seed",
        "11",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_exit(&r, 4);
    assert!(stderr(&r).contains("unfilled"), "{}", stderr(&r));
    // Warnings land in the metadata sidecar, and the dataset still holds
    // everything that was generated.
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("run_meta.json")).unwrap())
            .unwrap();
    assert!(!meta["warnings"].as_array().unwrap().is_empty());
    let boosted = Dataset::ingest(&out.join("boosted.jsonl"), None).unwrap();
    assert!(boosted.len() > 200 && boosted.len() < 360, "{}", boosted.len());
}

#[test]
fn eval_starve_writes_one_row_per_condition_and_repeat() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let r = run(&[
        "eval-starve",
        "--config",
        f.conf.to_str().unwrap(),
        "--dataset",
        f.dataset.to_str().unwrap(),
        "--fractions",
        "0.4",
        "--repeats",
        "2",
        "--archs",
        "bag",
        "--methods",
        "original,guided",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_exit(&r, 0);
    let tsv = std::fs::read_to_string(out.join("starvation.tsv")).unwrap();
    let data_rows: Vec<&str> = tsv
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("label"))
        .collect();
    // fractions x methods x archs x repeats.
    assert_eq!(data_rows.len(), 4, "{tsv}");
    for method in ["original", "guided"] {
        let per_condition = data_rows
            .iter()
            .filter(|l| l.split('\t').nth(3) == Some(method))
            .count();
        assert_eq!(per_condition, 2, "{tsv}");
    }
    let summary = std::fs::read_to_string(out.join("starvation_summary.tsv")).unwrap();
    assert!(summary.contains("f=0.4"), "{summary}");
}

#[test]
fn eval_ratio_records_perplexities() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let r = run(&[
        "eval-ratio",
        "--config",
        f.conf.to_str().unwrap(),
        "--dataset",
        f.dataset.to_str().unwrap(),
        "--ratios",
        "100/0,50/50",
        "--repeats",
        "1",
        "--archs",
        "bag",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_exit(&r, 0);
    let tsv = std::fs::read_to_string(out.join("ratio.tsv")).unwrap();
    let rows: Vec<&str> = tsv
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("label"))
        .collect();
    assert_eq!(rows.len(), 2, "{tsv}");
    let mixed: Vec<&str> = rows
        .iter()
        .find(|l| l.starts_with("50/50"))
        .unwrap()
        .split('\t')
        .collect();
    // Columns: ... macro_f1 ppl_mixed ppl_boost unfilled.
    let ppl_mixed: f64 = mixed[10].parse().unwrap();
    let ppl_boost: f64 = mixed[11].parse().unwrap();
    assert!(ppl_mixed.is_finite() && ppl_mixed > 1.0);
    assert!(ppl_boost.is_finite() && ppl_boost > 1.0);
}

#[test]
fn ppl_scores_a_dataset() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let r = run(&[
        "ppl",
        "--dataset",
        f.dataset.to_str().unwrap(),
        "--train",
        f.dataset.to_str().unwrap(),
        "--order",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_exit(&r, 0);
    let text = std::fs::read_to_string(out.join("ppl.txt")).unwrap();
    let ppl: f64 = text.trim().parse().unwrap();
    assert!(ppl.is_finite() && ppl > 1.0, "{ppl}");
}
