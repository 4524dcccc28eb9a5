//! Temporary calibration probe, not part of the shipped suite.

use std::time::Instant;

use lexboost::augment::{boost, mix_seed, plan_boost};
use lexboost::corpus::{split_stratified, starve, Dataset, Vocab};
use lexboost::eval::{
    macro_f1, naive_baseline_augment, synth_corpus_with_vocab, train_classifier, Arch, NaiveEdit,
    SynthConfig, SynthVocab,
};
use lexboost::guide::GuideConfig;
use lexboost::lm::{train_lm, TrainLmConfig};
use lexboost::salience::{build_lexicon, count};

/// Is `w` evidence for class `ci`: an own marker, or a filler whose style
/// rank under `ci` beats its rank under every other class.
fn aligned(sv: &SynthVocab, n_classes: usize, ci: usize, w: &str) -> Option<bool> {
    if let Some(owner) = sv.marker_class(w) {
        return Some(owner == ci);
    }
    let rank = sv.styled_rank(ci, w)?;
    Some((0..n_classes).filter(|&o| o != ci).all(|o| rank < sv.styled_rank(o, w).unwrap()))
}

/// Majority style vote of a sentence's filler tokens for class `ci`.
fn style_vote(sv: &SynthVocab, n_classes: usize, ci: usize, text: &str) -> i64 {
    let mut vote = 0i64;
    for tok in text.split_whitespace() {
        if sv.marker_class(tok).is_some() {
            continue;
        }
        match aligned(sv, n_classes, ci, tok) {
            Some(true) => vote += 1,
            Some(false) => vote -= 1,
            None => {}
        }
    }
    vote
}

fn lex_report(sv: &SynthVocab, starved: &Dataset, n: usize, mc: u64) -> String {
    let pre = TrainLmConfig::default().preprocess.clone();
    let table = count(starved, &pre).unwrap();
    let lex = build_lexicon(&table, n, mc).unwrap();
    let ncl = lex.classes().len();
    let mut own = 0;
    let mut good_fill = 0;
    let mut bad = 0;
    let mut slots = 0;
    for (ci, class) in lex.classes().iter().enumerate() {
        for (w, _) in lex.entry(class).unwrap() {
            slots += 1;
            match (sv.marker_class(w), aligned(sv, ncl, ci, w)) {
                (Some(o), _) if o == ci => own += 1,
                (None, Some(true)) => good_fill += 1,
                _ => bad += 1,
            }
        }
    }
    format!("lex{n} mc{mc}: own {own} fill+ {good_fill} bad {bad} of {slots}")
}

#[test]
#[ignore]
fn shapes() {
    // Fast corpus-shape sweep, no LM. Want: starved bag baseline in the
    // 0.78-0.90 band, a clear gap to full, naive failing to close it, and
    // a starved lexicon of markers plus style-aligned fillers only.
    let base = SynthConfig::default();
    let shapes: Vec<(&str, SynthConfig)> = vec![
        ("P055 (default)", base.clone()),
        ("P040", SynthConfig { filler_style_weight: 0.40, ..base.clone() }),
        ("P070", SynthConfig { filler_style_weight: 0.70, ..base.clone() }),
        ("P055s30", SynthConfig { styled_zipf_offset: 30.0, ..base.clone() }),
        ("P055m13", SynthConfig { max_markers: 3, ..base.clone() }),
        ("P055f320", SynthConfig { filler_count: 320, ..base.clone() }),
    ];
    for (name, cfg) in &shapes {
        let (ds, sv) = synth_corpus_with_vocab(cfg).unwrap();
        let (train, test) = split_stratified(&ds, 0.2, mix_seed(&[0, 0x51])).unwrap();
        let starved = starve(&train, 200.0 / train.len() as f64, mix_seed(&[0, 0x54])).unwrap();

        let seen = |d: &Dataset| {
            let mut s = std::collections::HashSet::new();
            for ex in d.examples() {
                for tok in ex.text.split_whitespace() {
                    if sv.marker_class(tok).is_some() {
                        s.insert(tok.to_string());
                    }
                }
            }
            s
        };
        let starved_seen = seen(&starved);
        let train_seen = seen(&train);
        let blind = test
            .examples()
            .iter()
            .filter(|ex| {
                ex.text
                    .split_whitespace()
                    .filter(|t| sv.marker_class(t).is_some())
                    .all(|t| !starved_seen.contains(t))
            })
            .count();

        let dist: Vec<(String, f64)> = starved
            .classes()
            .iter()
            .cloned()
            .zip(starved.class_distribution())
            .collect();
        let plan =
            plan_boost(&starved, train.len(), &dist, GuideConfig::default(), mix_seed(&[9, 9]))
                .unwrap();
        let naive = naive_baseline_augment(&starved, &plan, &NaiveEdit::default()).unwrap();

        let f1 = |arch: Arch, data: &Dataset| {
            let mut s = 0.0;
            for seed in 0..3u64 {
                s += macro_f1(&train_classifier(arch, data, seed).unwrap(), &test);
            }
            s / 3.0
        };
        println!(
            "{name}: bag starved {:.3} full {:.3} naive {:.3} | conv starved {:.3} naive {:.3} | markers {}/{} blind {:.3} | {} | {}",
            f1(Arch::Bag, &starved),
            f1(Arch::Bag, &train),
            f1(Arch::Bag, &naive),
            f1(Arch::Conv, &starved),
            f1(Arch::Conv, &naive),
            starved_seen.len(),
            train_seen.len(),
            blind as f64 / test.len() as f64,
            lex_report(&sv, &starved, 8, 2),
            lex_report(&sv, &starved, 16, 2),
        );
    }
}

#[test]
#[ignore]
fn calibrate() {
    // Each grid row is (eta, k, sigma, temperature); k=0 rows measure the
    // LM's intrinsic class coherence with no guidance at all.
    let grid: Vec<(f64, usize, f64, f64)> = vec![
        (0.8, 0, 0.5, 1.0),
        (0.8, 3, 1.0, 1.0),
        (0.4, 3, 1.0, 1.0),
        (0.8, 3, 1.0, 0.7),
    ];
    let base = SynthConfig::default();
    // (name, corpus, lm cap, epochs)
    let scenarios: Vec<(&str, SynthConfig, usize, usize)> = vec![
        ("P055/1400", base.clone(), 1400, 30),
        ("P040/1400", SynthConfig { filler_style_weight: 0.40, ..base.clone() }, 1400, 30),
        ("P070/1400", SynthConfig { filler_style_weight: 0.70, ..base.clone() }, 1400, 30),
    ];
    let pre = TrainLmConfig::default().preprocess.clone();
    for (scen, cfg, cap, epochs) in &scenarios {
        let (ds, sv) = synth_corpus_with_vocab(cfg).unwrap();
        let ncl = ds.classes().len();
        let (train, test) = split_stratified(&ds, 0.2, mix_seed(&[0, 0x51])).unwrap();
        let starved = starve(&train, 200.0 / train.len() as f64, mix_seed(&[0, 0x54])).unwrap();
        let t0 = Instant::now();
        let vocab = Vocab::build(&train, &pre, 1).unwrap();
        let lm_sub = if *cap >= train.len() {
            train.clone()
        } else {
            starve(&train, *cap as f64 / train.len() as f64, mix_seed(&[0, 0x53])).unwrap()
        };
        let lm_cfg = TrainLmConfig { epochs: *epochs, ..TrainLmConfig::default() };
        let model = train_lm(&lm_sub, vocab, &lm_cfg).unwrap();
        println!(
            "[{scen}] LM on {} ({} vocab, {} epochs): {:.0?}",
            lm_sub.len(),
            model.vocab().len(),
            epochs,
            t0.elapsed()
        );

        let table = count(&starved, &pre).unwrap();
        let lexicon = build_lexicon(&table, 8, 2).unwrap();
        println!("[{scen}] {}", lex_report(&sv, &starved, 8, 2));
        let oracle = train_classifier(Arch::Bag, &train, 1).unwrap();
        println!(
            "[{scen}] bag oracle f1 {:.3}, starved bag {:.3} conv {:.3}",
            macro_f1(&oracle, &test),
            macro_f1(&train_classifier(Arch::Bag, &starved, 1).unwrap(), &test),
            macro_f1(&train_classifier(Arch::Conv, &starved, 1).unwrap(), &test)
        );

        let dist: Vec<(String, f64)> = starved
            .classes()
            .iter()
            .cloned()
            .zip(starved.class_distribution())
            .collect();
        for &(eta, k, sigma, temperature) in &grid {
            let guide = GuideConfig {
                eta,
                k,
                sigma,
                temperature,
                max_len: 14,
                ..GuideConfig::default()
            };
            let plan = plan_boost(
                &starved,
                starved.len() + 120,
                &dist,
                guide,
                mix_seed(&[7, k as u64, (eta * 100.0) as u64, (temperature * 10.0) as u64]),
            )
            .unwrap();
            let t3 = Instant::now();
            let outcome = boost(&starved, &plan, &model, &lexicon).unwrap();
            let n_gen = outcome.rows.len();
            let per_gen = t3.elapsed().as_secs_f64() / n_gen.max(1) as f64;
            let mut agree = 0usize;
            let mut own_m = 0usize;
            let mut foreign_m = 0usize;
            let mut style_ok = 0usize;
            let mut kl_sum = 0.0;
            let mut steps = 0usize;
            for row in &outcome.rows {
                for s in &row.steps {
                    kl_sum += s.kl;
                    steps += 1;
                }
            }
            let boosted_rows: Vec<_> =
                outcome.dataset.examples().iter().skip(starved.len()).collect();
            for ex in &boosted_rows {
                if oracle.predict(&ex.text) == ex.label {
                    agree += 1;
                }
                let target = outcome.dataset.class_index(&ex.label).unwrap();
                let mut own = false;
                let mut foreign = false;
                for tok in ex.text.split_whitespace() {
                    match sv.marker_class(tok) {
                        Some(c) if c == target => own = true,
                        Some(_) => foreign = true,
                        None => {}
                    }
                }
                own_m += usize::from(own);
                foreign_m += usize::from(foreign);
                style_ok += usize::from(style_vote(&sv, ncl, target, &ex.text) > 0);
            }
            let nb = boosted_rows.len() as f64;
            println!(
                "[{scen}] eta {eta} k {k} sig {sigma} T {temperature}: {:.0}ms/gen agree {:.2} own {:.2} foreign {:.2} style+ {:.2} KL {:.3}",
                per_gen * 1e3,
                agree as f64 / nb,
                own_m as f64 / nb,
                foreign_m as f64 / nb,
                style_ok as f64 / nb,
                if steps == 0 { 0.0 } else { kl_sum / steps as f64 },
            );
        }
    }
}

#[test]
#[ignore]
fn fullboost() {
    // Full-scale boost for one setting, downstream F1 on both archs.
    // Env overrides: CAL_STYLE, CAL_ETA, CAL_K, CAL_SIGMA, CAL_T, CAL_LEX.
    let envf = |k: &str, d: f64| -> f64 {
        std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d)
    };
    let style = envf("CAL_STYLE", 0.55);
    let eta = envf("CAL_ETA", 0.8);
    let k = envf("CAL_K", 3.0) as usize;
    let sigma = envf("CAL_SIGMA", 1.0);
    let temperature = envf("CAL_T", 1.0);
    let lex_n = envf("CAL_LEX", 8.0) as usize;

    let cfg = SynthConfig { filler_style_weight: style, ..SynthConfig::default() };
    let (ds, sv) = synth_corpus_with_vocab(&cfg).unwrap();
    let ncl = ds.classes().len();
    let (train, test) = split_stratified(&ds, 0.2, mix_seed(&[0, 0x51])).unwrap();
    let starved = starve(&train, 200.0 / train.len() as f64, mix_seed(&[0, 0x54])).unwrap();
    let pre = TrainLmConfig::default().preprocess.clone();
    let vocab = Vocab::build(&train, &pre, 1).unwrap();
    let lm_sub = starve(&train, 1400.0 / train.len() as f64, mix_seed(&[0, 0x53])).unwrap();
    let t0 = Instant::now();
    let model = train_lm(&lm_sub, vocab, &TrainLmConfig::default()).unwrap();
    println!("LM: {:.0?}", t0.elapsed());

    let table = count(&starved, &pre).unwrap();
    let lexicon = build_lexicon(&table, lex_n, 2).unwrap();
    let dist: Vec<(String, f64)> = starved
        .classes()
        .iter()
        .cloned()
        .zip(starved.class_distribution())
        .collect();
    let guide = GuideConfig { eta, k, sigma, temperature, max_len: 14, ..GuideConfig::default() };
    let plan = plan_boost(&starved, train.len(), &dist, guide, mix_seed(&[11, 4])).unwrap();
    let t1 = Instant::now();
    let outcome = boost(&starved, &plan, &model, &lexicon).unwrap();
    println!(
        "boost: {} gens in {:.0?} ({:.0}ms/gen)",
        outcome.rows.len(),
        t1.elapsed(),
        t1.elapsed().as_secs_f64() * 1e3 / outcome.rows.len().max(1) as f64
    );

    let oracle = train_classifier(Arch::Bag, &train, 1).unwrap();
    let boosted_rows: Vec<_> = outcome.dataset.examples().iter().skip(starved.len()).collect();
    let mut agree = 0usize;
    let mut style_ok = 0usize;
    let mut new_types = std::collections::HashSet::new();
    let starved_seen: std::collections::HashSet<String> = starved
        .examples()
        .iter()
        .flat_map(|e| e.text.split_whitespace().map(|t| t.to_string()))
        .filter(|t| sv.marker_class(t).is_some())
        .collect();
    for ex in &boosted_rows {
        if oracle.predict(&ex.text) == ex.label {
            agree += 1;
        }
        let target = outcome.dataset.class_index(&ex.label).unwrap();
        style_ok += usize::from(style_vote(&sv, ncl, target, &ex.text) > 0);
        for tok in ex.text.split_whitespace() {
            if sv.marker_class(tok) == Some(target) && !starved_seen.contains(tok) {
                new_types.insert(tok.to_string());
            }
        }
    }
    println!(
        "agree {:.3} style+ {:.3} new own marker types {}",
        agree as f64 / boosted_rows.len() as f64,
        style_ok as f64 / boosted_rows.len() as f64,
        new_types.len()
    );

    let naive = naive_baseline_augment(&starved, &plan, &NaiveEdit::default()).unwrap();
    for arch in [Arch::Bag, Arch::Conv] {
        let f1 = |data: &Dataset| {
            let mut s = 0.0;
            for seed in 0..3u64 {
                s += macro_f1(&train_classifier(arch, data, seed).unwrap(), &test);
            }
            s / 3.0
        };
        println!(
            "{arch:?}: starved {:.3} boosted {:.3} naive {:.3} full {:.3}",
            f1(&starved),
            f1(&outcome.dataset),
            f1(&naive),
            f1(&train)
        );
    }
}
