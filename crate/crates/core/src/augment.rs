//! Dataset boosting: orchestrates guided generation into an augmented
//! dataset that hits a target size and class distribution.
//!
//! Planning and generation are separate so a plan can be shown (and
//! confirmed) before any compute is spent. Generation runs in parallel
//! rounds with per-slot derived seeds; acceptance is a sequential pass in
//! a fixed order, so results do not depend on thread scheduling.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::corpus::{Dataset, LabeledExample};
use crate::guide::{
    generate_conditional, resolve_lexicon, GuideConfig, GuideError, StepDiag,
};
use crate::lm::LmModel;
use crate::salience::Lexicon;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("full training size {full} is smaller than the starved set ({starved})")]
    FullSizeTooSmall { full: usize, starved: usize },
    #[error("class {class:?} already holds {have} examples but the distribution allows {allowed}")]
    ImpossiblePlan {
        class: String,
        have: usize,
        allowed: usize,
    },
    #[error("bad class distribution: {0}")]
    BadDistribution(String),
    #[error("plan does not match the dataset: {0}")]
    PlanMismatch(String),
    #[error("max_attempts must be at least 1")]
    ZeroAttempts,
    #[error(transparent)]
    Guide(#[from] GuideError),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
}

/// Deduplication applied to generated texts. Originals are never
/// deduplicated; repeats in source data are legitimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DedupPolicy {
    /// Reject a generation whose text exactly matches an earlier one.
    Exact,
    /// Keep every non-empty generation.
    None,
}

/// Per-class slice of a boost plan.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassTarget {
    pub class: String,
    /// Examples already present in the starved set.
    pub have: usize,
    /// Examples to generate.
    pub boost: usize,
}

/// A fully resolved augmentation plan: how many examples to generate per
/// class, and with what decoding configuration.
#[derive(Clone, Debug)]
pub struct BoostPlan {
    pub targets: Vec<ClassTarget>,
    pub dedup: DedupPolicy,
    pub max_attempts: u32,
    pub guide: GuideConfig,
    pub seed: u64,
}

impl BoostPlan {
    pub fn total_boost(&self) -> usize {
        self.targets.iter().map(|t| t.boost).sum()
    }

    pub fn total_size(&self) -> usize {
        self.targets.iter().map(|t| t.have + t.boost).sum()
    }

    /// Plain-text table for interactive confirmation.
    pub fn render_table(&self) -> String {
        let mut out = String::from("class            have   boost   total\n");
        for t in &self.targets {
            out.push_str(&format!(
                "{:<16} {:>5} {:>7} {:>7}\n",
                t.class,
                t.have,
                t.boost,
                t.have + t.boost
            ));
        }
        out.push_str(&format!(
            "{:<16} {:>5} {:>7} {:>7}\n",
            "total",
            self.total_size() - self.total_boost(),
            self.total_boost(),
            self.total_size()
        ));
        out
    }
}

/// Builds the plan that grows `starved` to `full_train_size` examples with
/// per-class proportions matching `class_distribution` within one example.
/// Every class of `starved` must appear in the distribution; distribution
/// classes absent from `starved` get generated from scratch.
pub fn plan_boost(
    starved: &Dataset,
    full_train_size: usize,
    class_distribution: &[(String, f64)],
    guide: GuideConfig,
    seed: u64,
) -> Result<BoostPlan, AugmentError> {
    if full_train_size < starved.len() {
        return Err(AugmentError::FullSizeTooSmall {
            full: full_train_size,
            starved: starved.len(),
        });
    }
    if class_distribution.is_empty() {
        return Err(AugmentError::BadDistribution("no classes".into()));
    }
    let mut names = HashSet::new();
    for (class, ratio) in class_distribution {
        if !names.insert(class.as_str()) {
            return Err(AugmentError::BadDistribution(format!(
                "class {class:?} repeats"
            )));
        }
        if !ratio.is_finite() || *ratio < 0.0 {
            return Err(AugmentError::BadDistribution(format!(
                "ratio {ratio} for class {class:?}"
            )));
        }
    }
    let total_ratio: f64 = class_distribution.iter().map(|(_, r)| r).sum();
    if (total_ratio - 1.0).abs() > 1e-6 {
        return Err(AugmentError::BadDistribution(format!(
            "ratios sum to {total_ratio}, expected 1"
        )));
    }
    for class in starved.classes() {
        if !names.contains(class.as_str()) {
            return Err(AugmentError::BadDistribution(format!(
                "dataset class {class:?} missing from the distribution"
            )));
        }
    }

    // Largest-remainder allocation of the full size over the ratios.
    let quotas: Vec<f64> = class_distribution
        .iter()
        .map(|(_, r)| r * full_train_size as f64)
        .collect();
    let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    // Fractional parts sum to the shortfall, so it is below the class count.
    let short = full_train_size - alloc.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..alloc.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then_with(|| a.cmp(&b))
    });
    for &i in order.iter().take(short) {
        alloc[i] += 1;
    }

    let starved_counts = starved.class_counts();
    let mut targets = Vec::with_capacity(class_distribution.len());
    for (i, (class, _)) in class_distribution.iter().enumerate() {
        let have = starved
            .class_index(class)
            .map_or(0, |ci| starved_counts[ci]);
        if alloc[i] < have {
            return Err(AugmentError::ImpossiblePlan {
                class: class.clone(),
                have,
                allowed: alloc[i],
            });
        }
        targets.push(ClassTarget {
            class: class.clone(),
            have,
            boost: alloc[i] - have,
        });
    }
    Ok(BoostPlan {
        targets,
        dedup: DedupPolicy::Exact,
        max_attempts: 10,
        guide,
        seed,
    })
}

/// Derives an independent seed from an ordered list of stream components
/// (splitmix64 chaining). Equal inputs give equal seeds; any change to any
/// component decorrelates the stream.
pub fn mix_seed(parts: &[u64]) -> u64 {
    fn splitmix64(mut x: u64) -> u64 {
        x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
        x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x ^ (x >> 31)
    }
    let mut h = 0x243F_6A88_85A3_08D3u64;
    for &p in parts {
        h = splitmix64(h ^ p);
    }
    h
}

/// Per-generated-row diagnostics, referenced from the dataset by id.
#[derive(Clone, Debug, Serialize)]
pub struct RowDiag {
    pub id: String,
    pub class: String,
    /// Slot index within the class.
    pub index: usize,
    /// Seed of the accepted generation.
    pub seed: u64,
    /// 1-based attempt that produced the accepted text.
    pub attempt: u32,
    pub steps: Vec<StepDiag>,
}

/// A class whose target could not be filled within the attempt budget.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ExhaustedClass {
    pub class: String,
    pub missing: usize,
}

/// Result of a boost run: the augmented dataset, per-row diagnostics for
/// the generated examples, and any unfilled targets.
pub struct BoostOutcome {
    pub dataset: Dataset,
    pub rows: Vec<RowDiag>,
    /// Non-empty when some slots stayed unfilled; the dataset is then
    /// smaller than planned but otherwise valid.
    pub exhausted: Vec<ExhaustedClass>,
}

/// Generates the planned examples and merges them after the originals.
///
/// Slots are retried with fresh derived seeds when a generation comes out
/// empty or (under exact dedup) repeats an earlier generated text; after
/// `max_attempts` rounds the slot is abandoned and reported. Output order:
/// the starved examples unchanged, then generated rows by (class, slot).
pub fn boost(
    starved: &Dataset,
    plan: &BoostPlan,
    model: &LmModel,
    lexicons: &Lexicon,
) -> Result<BoostOutcome, AugmentError> {
    if plan.max_attempts == 0 {
        return Err(AugmentError::ZeroAttempts);
    }
    let starved_counts = starved.class_counts();
    for t in &plan.targets {
        let have = starved
            .class_index(&t.class)
            .map_or(0, |ci| starved_counts[ci]);
        if have != t.have {
            return Err(AugmentError::PlanMismatch(format!(
                "plan expects {} existing examples of class {:?}, dataset has {have}",
                t.have, t.class
            )));
        }
        if t.boost > 0 {
            resolve_lexicon(model, lexicons, &t.class)?;
        }
    }
    for class in starved.classes() {
        if !plan.targets.iter().any(|t| &t.class == class) {
            return Err(AugmentError::PlanMismatch(format!(
                "dataset class {class:?} missing from the plan"
            )));
        }
    }

    // (class index in plan, slot) pairs still needing a text, in final
    // output order. Parallel generation per round; sequential acceptance.
    let mut pending: Vec<(usize, usize)> = plan
        .targets
        .iter()
        .enumerate()
        .flat_map(|(ci, t)| (0..t.boost).map(move |i| (ci, i)))
        .collect();
    let mut seen: HashSet<String> = HashSet::new();
    let mut accepted: Vec<((usize, usize), LabeledExample, RowDiag)> = Vec::new();
    for attempt in 1..=plan.max_attempts {
        if pending.is_empty() {
            break;
        }
        let candidates: Vec<_> = pending
            .par_iter()
            .map(|&(ci, slot)| {
                let class = &plan.targets[ci].class;
                let seed =
                    mix_seed(&[plan.seed, ci as u64, slot as u64, u64::from(attempt)]);
                let gen = generate_conditional(model, lexicons, class, &plan.guide, seed);
                ((ci, slot), seed, gen)
            })
            .collect();
        let mut still = Vec::new();
        for ((ci, slot), seed, gen) in candidates {
            let g = gen?;
            let fresh = match plan.dedup {
                DedupPolicy::Exact => !seen.contains(&g.text),
                DedupPolicy::None => true,
            };
            if g.empty || !fresh {
                still.push((ci, slot));
                continue;
            }
            if plan.dedup == DedupPolicy::Exact {
                seen.insert(g.text.clone());
            }
            let class = plan.targets[ci].class.clone();
            let id = format!("boost-{ci}-{slot}");
            let mut example = LabeledExample::boosted(g.text, class.clone());
            example.diag_id = Some(id.clone());
            accepted.push((
                (ci, slot),
                example,
                RowDiag {
                    id,
                    class,
                    index: slot,
                    seed,
                    attempt,
                    steps: g.steps,
                },
            ));
        }
        pending = still;
    }

    let mut exhausted: Vec<ExhaustedClass> = Vec::new();
    for (ci, t) in plan.targets.iter().enumerate() {
        let missing = pending.iter().filter(|&&(c, _)| c == ci).count();
        if missing > 0 {
            exhausted.push(ExhaustedClass {
                class: t.class.clone(),
                missing,
            });
        }
    }

    accepted.sort_by_key(|(key, _, _)| *key);
    let mut examples: Vec<LabeledExample> = starved.examples().to_vec();
    let mut rows = Vec::with_capacity(accepted.len());
    for (_, example, diag) in accepted {
        examples.push(example);
        rows.push(diag);
    }
    let classes: Vec<String> = plan.targets.iter().map(|t| t.class.clone()).collect();
    let dataset = Dataset::with_classes(examples, classes, starved.tag())?;
    Ok(BoostOutcome {
        dataset,
        rows,
        exhausted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{preprocess, Provenance, SplitTag};
    use crate::lm::tests::tiny_model;
    use proptest::prelude::*;

    fn dist(pairs: &[(&str, f64)]) -> Vec<(String, f64)> {
        pairs.iter().map(|(c, r)| (c.to_string(), *r)).collect()
    }

    fn toy_dataset(a: usize, b: usize) -> Dataset {
        let mut ex = Vec::new();
        for i in 0..a {
            ex.push(LabeledExample::new(format!("alpha text {i}"), "A"));
        }
        for i in 0..b {
            ex.push(LabeledExample::new(format!("beta text {i}"), "B"));
        }
        Dataset::with_classes(ex, vec!["A".into(), "B".into()], SplitTag::Train).unwrap()
    }

    fn toy_lexicon() -> Lexicon {
        Lexicon::from_entries(vec![
            ("A".into(), vec![("w1".into(), 1.0), ("w2".into(), 0.5)]),
            ("B".into(), vec![("w7".into(), 1.0), ("w8".into(), 0.5)]),
        ])
    }

    fn fast_guide() -> GuideConfig {
        GuideConfig {
            k: 1,
            eta: 0.2,
            max_len: 5,
            num_rollouts: 2,
            ..GuideConfig::default()
        }
    }

    #[test]
    fn plan_targets_complete_the_distribution() {
        let ds = toy_dataset(5, 5);
        let plan = plan_boost(
            &ds,
            100,
            &dist(&[("A", 0.5), ("B", 0.5)]),
            GuideConfig::default(),
            7,
        )
        .unwrap();
        assert_eq!(plan.targets[0], ClassTarget { class: "A".into(), have: 5, boost: 45 });
        assert_eq!(plan.targets[1], ClassTarget { class: "B".into(), have: 5, boost: 45 });
        assert_eq!(plan.total_size(), 100);
    }

    #[test]
    fn plan_with_full_size_equal_to_starved_is_a_no_op() {
        let ds = toy_dataset(6, 6);
        let plan = plan_boost(
            &ds,
            12,
            &dist(&[("A", 0.5), ("B", 0.5)]),
            GuideConfig::default(),
            0,
        )
        .unwrap();
        assert_eq!(plan.total_boost(), 0);
    }

    #[test]
    fn overfull_class_is_an_impossible_plan() {
        let ds = toy_dataset(90, 0);
        let err = plan_boost(
            &ds,
            100,
            &dist(&[("A", 0.5), ("B", 0.5)]),
            GuideConfig::default(),
            0,
        )
        .unwrap_err();
        match err {
            AugmentError::ImpossiblePlan { class, have, allowed } => {
                assert_eq!(class, "A");
                assert_eq!(have, 90);
                assert_eq!(allowed, 50);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn plan_rejects_bad_inputs() {
        let ds = toy_dataset(5, 5);
        let g = GuideConfig::default;
        assert!(matches!(
            plan_boost(&ds, 4, &dist(&[("A", 0.5), ("B", 0.5)]), g(), 0),
            Err(AugmentError::FullSizeTooSmall { .. })
        ));
        for bad in [
            dist(&[("A", 0.6), ("B", 0.6)]),
            dist(&[("A", 1.5), ("B", -0.5)]),
            dist(&[("A", 0.5), ("A", 0.5)]),
            dist(&[("A", 1.0)]),
            dist(&[]),
        ] {
            assert!(
                matches!(
                    plan_boost(&ds, 100, &bad, g(), 0),
                    Err(AugmentError::BadDistribution(_))
                ),
                "{bad:?} should be rejected"
            );
        }
    }

    #[test]
    fn plan_covers_classes_absent_from_the_dataset() {
        let ds = toy_dataset(4, 0);
        // Class B only exists in the target distribution.
        let only_a = Dataset::new(ds.examples()[..4].to_vec()).unwrap();
        let plan = plan_boost(
            &only_a,
            10,
            &dist(&[("A", 0.4), ("B", 0.6)]),
            GuideConfig::default(),
            0,
        )
        .unwrap();
        assert_eq!(plan.targets[0].boost, 0);
        assert_eq!(plan.targets[1], ClassTarget { class: "B".into(), have: 0, boost: 6 });
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn plan_allocation_stays_within_one_of_the_quota(
            raw in prop::collection::vec(0.05..1.0f64, 2..6),
            full in 10usize..400,
        ) {
            let total: f64 = raw.iter().sum();
            let ratios: Vec<(String, f64)> = raw
                .iter()
                .enumerate()
                .map(|(i, r)| (format!("c{i}"), r / total))
                .collect();
            // Tiny starved set: one example of the first class.
            let ds = Dataset::with_classes(
                vec![LabeledExample::new("x", "c0")],
                ratios.iter().map(|(c, _)| c.clone()).collect(),
                SplitTag::Train,
            )
            .unwrap();
            let plan = plan_boost(&ds, full, &ratios, GuideConfig::default(), 0);
            prop_assume!(plan.is_ok()); // c0 quota below 1 is legitimately impossible
            let plan = plan.unwrap();
            prop_assert_eq!(plan.total_size(), full);
            for (t, (_, r)) in plan.targets.iter().zip(&ratios) {
                let quota = r * full as f64;
                let got = (t.have + t.boost) as f64;
                prop_assert!((got - quota).abs() < 1.0, "{got} vs quota {quota}");
            }
        }
    }

    #[test]
    fn zero_target_boost_returns_the_dataset_unchanged() {
        let ds = toy_dataset(3, 3);
        let model = tiny_model(40);
        let plan = plan_boost(
            &ds,
            6,
            &dist(&[("A", 0.5), ("B", 0.5)]),
            fast_guide(),
            1,
        )
        .unwrap();
        let out = boost(&ds, &plan, &model, &toy_lexicon()).unwrap();
        assert_eq!(out.dataset.examples(), ds.examples());
        assert!(out.rows.is_empty());
        assert!(out.exhausted.is_empty());
    }

    #[test]
    fn boost_fills_targets_exactly_with_tagged_rows() {
        let ds = toy_dataset(3, 2);
        let model = tiny_model(41);
        let plan = plan_boost(
            &ds,
            12,
            &dist(&[("A", 0.5), ("B", 0.5)]),
            fast_guide(),
            5,
        )
        .unwrap();
        let out = boost(&ds, &plan, &model, &toy_lexicon()).unwrap();
        assert!(out.exhausted.is_empty(), "{:?}", out.exhausted);
        assert_eq!(out.dataset.len(), 12);
        let counts = out.dataset.class_counts();
        assert_eq!(counts, vec![6, 6]);
        // Originals first and untouched, generated rows tagged and lined
        // up with their diagnostics.
        assert_eq!(&out.dataset.examples()[..5], ds.examples());
        for (ex, row) in out.dataset.examples()[5..].iter().zip(&out.rows) {
            assert_eq!(ex.provenance, Provenance::Boosted);
            assert_eq!(ex.diag_id.as_deref(), Some(row.id.as_str()));
            assert_eq!(ex.label, row.class);
            let tokens = preprocess(&ex.text, model.preprocess_config()).unwrap();
            assert!(tokens.len() <= plan.guide.max_len);
        }
        assert_eq!(out.rows.len(), 7);
    }

    #[test]
    fn boost_is_deterministic_for_a_fixed_seed() {
        let ds = toy_dataset(2, 2);
        let model = tiny_model(42);
        let plan = plan_boost(
            &ds,
            10,
            &dist(&[("A", 0.5), ("B", 0.5)]),
            fast_guide(),
            9,
        )
        .unwrap();
        let a = boost(&ds, &plan, &model, &toy_lexicon()).unwrap();
        let b = boost(&ds, &plan, &model, &toy_lexicon()).unwrap();
        assert_eq!(a.dataset.to_jsonl(), b.dataset.to_jsonl());
        assert_eq!(a.rows.len(), b.rows.len());
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert_eq!(x.id, y.id);
            assert_eq!(x.seed, y.seed);
            assert_eq!(x.attempt, y.attempt);
        }
    }

    #[test]
    fn near_deterministic_decoding_exhausts_the_attempt_budget() {
        // At a very low temperature every seed produces the argmax text,
        // so exact dedup can accept only one generation per class.
        let ds = toy_dataset(1, 1);
        let model = tiny_model(43);
        let mut guide = fast_guide();
        guide.k = 0;
        guide.temperature = 1e-3;
        let mut plan = plan_boost(
            &ds,
            10,
            &dist(&[("A", 0.5), ("B", 0.5)]),
            guide,
            3,
        )
        .unwrap();
        plan.max_attempts = 4;
        let out = boost(&ds, &plan, &model, &toy_lexicon()).unwrap();
        assert!(!out.exhausted.is_empty());
        let missing: usize = out.exhausted.iter().map(|e| e.missing).sum();
        assert_eq!(out.dataset.len(), 10 - missing);
        // Disabling dedup fills every slot with the repeated text.
        plan.dedup = DedupPolicy::None;
        let out = boost(&ds, &plan, &model, &toy_lexicon()).unwrap();
        assert!(out.exhausted.is_empty());
        assert_eq!(out.dataset.len(), 10);
    }

    #[test]
    fn boost_rejects_mismatched_plans_and_missing_lexicons() {
        let ds = toy_dataset(3, 3);
        let model = tiny_model(44);
        let plan = plan_boost(
            &ds,
            10,
            &dist(&[("A", 0.5), ("B", 0.5)]),
            fast_guide(),
            0,
        )
        .unwrap();
        // Same plan against a different dataset.
        let other = toy_dataset(4, 2);
        assert!(matches!(
            boost(&other, &plan, &model, &toy_lexicon()),
            Err(AugmentError::PlanMismatch(_))
        ));
        // Lexicon without class B.
        let partial = Lexicon::from_entries(vec![(
            "A".into(),
            vec![("w1".into(), 1.0)],
        )]);
        assert!(matches!(
            boost(&ds, &plan, &model, &partial),
            Err(AugmentError::Guide(GuideError::MissingLexicon(_)))
        ));
        let mut broken = plan.clone();
        broken.max_attempts = 0;
        assert!(matches!(
            boost(&ds, &broken, &model, &toy_lexicon()),
            Err(AugmentError::ZeroAttempts)
        ));
    }

    #[test]
    fn mix_seed_separates_streams() {
        let base = mix_seed(&[1, 2, 3, 4]);
        assert_ne!(base, mix_seed(&[1, 2, 3, 5]));
        assert_ne!(base, mix_seed(&[1, 2, 4, 3]));
        assert_ne!(base, mix_seed(&[2, 1, 3, 4]));
        assert_eq!(base, mix_seed(&[1, 2, 3, 4]));
    }

    #[test]
    fn plan_table_lists_every_class_and_totals() {
        let ds = toy_dataset(5, 5);
        let plan = plan_boost(
            &ds,
            40,
            &dist(&[("A", 0.5), ("B", 0.5)]),
            GuideConfig::default(),
            0,
        )
        .unwrap();
        let table = plan.render_table();
        assert!(table.contains("A"));
        assert!(table.contains("B"));
        assert!(table.lines().last().unwrap().contains("40"));
    }
}
