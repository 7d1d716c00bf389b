//! Bootstrap few-shot optimizer: the designed refund fixture, degenerate
//! pools and no-regression over generated fixtures.

mod common;

use std::collections::HashSet;
use std::time::Instant;

use common::{bundle, fast_options, plain_rules, rule, shot};
use darklabel_core::engine::label_each;
use darklabel_core::llm::{CostTable, MockProvider};
use darklabel_core::optimizer::{
    bootstrap_fewshot, collect_validated, optimize_report, OptimizationConfig, OptimizationOutcome,
    ValidatedExample,
};
use darklabel_core::prompt::PromptBundle;
use darklabel_core::workbook::LabelScale;
use darklabel_core::{Error, GoldItem, GoldSet};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ex(text: &str, label: &str) -> ValidatedExample {
    ValidatedExample {
        text: text.into(),
        human_label: label.into(),
    }
}

fn optimize(
    b: &PromptBundle,
    examples: &[ValidatedExample],
    config: &OptimizationConfig,
) -> darklabel_core::Result<OptimizationOutcome> {
    let rt = tokio::runtime::Runtime::new().unwrap();
    rt.block_on(bootstrap_fewshot(
        b,
        examples,
        &MockProvider::shipped(),
        config,
        &fast_options(),
        &CostTable::default(),
    ))
}

fn teacher_labels(b: &PromptBundle, texts: &[&str]) -> Vec<Option<String>> {
    let rt = tokio::runtime::Runtime::new().unwrap();
    rt.block_on(label_each(
        &MockProvider::shipped(),
        b,
        texts,
        &fast_options(),
        &CostTable::default(),
    ))
    .unwrap()
    .into_iter()
    .map(|o| o.ok().map(|a| a.label))
    .collect()
}

/// Index 0 is the only refund example the lexicon already gets right; 1 and
/// 2 read as Neutral until a refund demo is in the prompt.
fn refund_examples() -> Vec<ValidatedExample> {
    vec![
        ex("refund bad", "Negative"),
        ex("refund please", "Negative"),
        ex("where is my refund", "Negative"),
        ex("great wonderful evening", "Extremely Positive"),
        ex("good coffee", "Positive"),
        ex("the meeting is at noon", "Neutral"),
        ex("bad weather", "Negative"),
        ex("terrible awful service", "Extremely Negative"),
        ex("nice view", "Positive"),
        ex("awful queue", "Negative"),
    ]
}

#[test]
fn refund_demo_flips_two_of_five_dev_items() {
    let start = Instant::now();
    let config = OptimizationConfig {
        max_demos: 4,
        num_candidate_sets: 8,
        dev_fraction: 0.5,
        seed: 10,
    };
    let b = bundle(plain_rules(), Vec::new());
    let out = optimize(&b, &refund_examples(), &config).unwrap();

    // the seed puts the demo in train and both Neutral-reading items in dev
    assert!(out.split.train.contains(&0));
    assert!(out.split.dev.contains(&1) && out.split.dev.contains(&2));
    assert_eq!(out.split.dev.len(), 5);

    assert_eq!(out.baseline_dev_acc, 3.0 / 5.0);
    assert_eq!(out.dev_acc, 5.0 / 5.0);
    assert_eq!(out.dev_acc, out.baseline_dev_acc + 0.4);
    assert!(out.demos.iter().any(|d| d.text == "refund bad"));
    // a set scores full marks exactly when it carries the refund demo
    for s in &out.scores[1..] {
        let has_refund = s.demos.iter().any(|d| d.text == "refund bad");
        assert_eq!(s.dev_acc, if has_refund { 1.0 } else { 0.6 });
    }
    assert_eq!(out.optimized.shots_snapshot.len(), out.demos.len());
    assert!(start.elapsed().as_secs_f64() < 60.0);
}

#[test]
fn teacher_wrong_everywhere_returns_baseline() {
    // every item reads Neutral to the lexicon but is labeled otherwise
    let examples: Vec<ValidatedExample> = (0..8)
        .map(|i| {
            ex(
                &format!("plain statement number {i}"),
                if i % 2 == 0 { "Positive" } else { "Negative" },
            )
        })
        .collect();
    let b = bundle(plain_rules(), vec![shot("user shot", "Neutral")]);
    let out = optimize(&b, &examples, &OptimizationConfig::default()).unwrap();
    assert!(out.candidate_pool.is_empty());
    assert_eq!(out.optimized, b);
    assert_eq!(out.dev_acc, out.baseline_dev_acc);
    assert_eq!(out.scores.len(), 1);
}

#[test]
fn perfect_teacher_evaluates_two_demo_sets() {
    let examples = vec![
        ex("good", "Positive"),
        ex("bad", "Negative"),
        ex("great wonderful", "Extremely Positive"),
        ex("terrible awful", "Extremely Negative"),
        ex("noon", "Neutral"),
        ex("nice", "Positive"),
        ex("awful", "Negative"),
        ex("tuesday", "Neutral"),
    ];
    let config = OptimizationConfig {
        max_demos: 2,
        ..OptimizationConfig::default()
    };
    let b = bundle(plain_rules(), Vec::new());
    let out = optimize(&b, &examples, &config).unwrap();
    assert_eq!(out.candidate_pool.len(), out.split.train.len());
    assert!(out.scores.iter().any(|s| s.demos.len() == 2));
    assert!(out.dev_acc >= out.baseline_dev_acc);
    // ties go to the smaller set, so the baseline wins here
    assert!(out.demos.is_empty());
}

#[test]
fn too_few_examples() {
    let b = bundle(plain_rules(), Vec::new());
    assert!(matches!(
        optimize(
            &b,
            &[ex("good", "Positive")],
            &OptimizationConfig::default()
        ),
        Err(Error::TooFewExamples(1))
    ));
    let config = OptimizationConfig {
        dev_fraction: 1.0,
        ..OptimizationConfig::default()
    };
    assert!(matches!(
        optimize(&b, &refund_examples(), &config),
        Err(Error::NoDevItems)
    ));
}

const WORDS: &[&str] = &[
    "good", "great", "love", "nice", "bad", "awful", "terrible", "hate", "refund", "delayed",
    "outage", "shipping", "monday", "coffee", "train", "phone", "noon", "store",
];

fn random_fixture(
    rng: &mut ChaCha8Rng,
) -> (PromptBundle, Vec<ValidatedExample>, OptimizationConfig) {
    let scale = LabelScale::sentiment5();
    let mut rules = plain_rules();
    if rng.gen_bool(0.3) {
        let w = WORDS.choose(rng).unwrap();
        let l = scale.labels().choose(rng).unwrap();
        rules.push(rule(l, &format!("contains(\"{w}\") => force"), 9));
    }
    let mut seen = HashSet::new();
    let n = rng.gen_range(2..16);
    let mut examples = Vec::new();
    while examples.len() < n {
        let len = rng.gen_range(1..5);
        let text: Vec<&str> = (0..len).map(|_| *WORDS.choose(rng).unwrap()).collect();
        let text = format!("{} #{}", text.join(" "), examples.len());
        if seen.insert(text.clone()) {
            let label = scale.labels().choose(rng).unwrap().clone();
            examples.push(ValidatedExample {
                text,
                human_label: label,
            });
        }
    }
    let config = OptimizationConfig {
        max_demos: rng.gen_range(0..6),
        num_candidate_sets: rng.gen_range(1..9),
        dev_fraction: rng.gen_range(0.1..0.9),
        seed: rng.gen(),
    };
    (bundle(rules, Vec::new()), examples, config)
}

#[test]
fn never_regresses_on_one_hundred_generated_fixtures() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xD0C5);
    let mut improved = 0;
    for case in 0..100 {
        let (b, examples, config) = random_fixture(&mut rng);
        let out = optimize(&b, &examples, &config).unwrap();
        assert!(out.dev_acc >= out.baseline_dev_acc, "case {case}");
        let best = out
            .scores
            .iter()
            .map(|s| s.dev_acc)
            .fold(f64::MIN, f64::max);
        assert_eq!(out.dev_acc, best, "case {case}");
        improved += usize::from(out.dev_acc > out.baseline_dev_acc);

        let mut all: Vec<usize> = out
            .split
            .train
            .iter()
            .chain(&out.split.dev)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..examples.len()).collect::<Vec<_>>(), "case {case}");
        assert!(!out.split.train.is_empty() && !out.split.dev.is_empty());

        // chosen demos are teacher-correct under the input prompt
        let texts: Vec<&str> = out.demos.iter().map(|d| d.text.as_str()).collect();
        for (d, t) in out.demos.iter().zip(teacher_labels(&b, &texts)) {
            assert_eq!(t.as_deref(), Some(d.human_label.as_str()), "case {case}");
        }
        assert!(out.demos.len() <= config.max_demos);

        if case % 10 == 0 {
            assert_eq!(
                optimize(&b, &examples, &config).unwrap(),
                out,
                "case {case}"
            );
        }
    }
    assert!(
        improved > 0,
        "fixtures should sometimes leave room to improve"
    );
    assert!(start.elapsed().as_secs_f64() < 60.0);
}

#[test]
fn before_after_report_on_a_gold_set() {
    let b = bundle(plain_rules(), Vec::new());
    let config = OptimizationConfig {
        dev_fraction: 0.5,
        seed: 10,
        ..OptimizationConfig::default()
    };
    let out = optimize(&b, &refund_examples(), &config).unwrap();
    let gold = GoldSet::new(
        vec![
            GoldItem {
                text: "refund overdue".into(),
                gold_label: "Negative".into(),
            },
            GoldItem {
                text: "good tea".into(),
                gold_label: "Positive".into(),
            },
        ],
        LabelScale::sentiment5(),
    )
    .unwrap();
    let rt = tokio::runtime::Runtime::new().unwrap();
    let cmp = rt
        .block_on(optimize_report(
            &b,
            &out.optimized,
            &gold,
            &MockProvider::shipped(),
            &fast_options(),
            &CostTable::default(),
        ))
        .unwrap();
    assert_eq!((cmp.acc_before, cmp.acc_after), (Some(0.5), Some(1.0)));
    assert_eq!((cmp.mse_before, cmp.mse_after), (Some(0.5), Some(0.0)));
}

#[test]
fn validated_examples_from_a_workbook() {
    let mut wb = darklabel_core::Workbook::new("w", LabelScale::sentiment5());
    wb.add_shot("refund bad", "Negative", darklabel_core::ShotSource::Manual)
        .unwrap();
    wb.add_shot(
        "good coffee",
        "Positive",
        darklabel_core::ShotSource::Manual,
    )
    .unwrap();
    let examples = collect_validated(&wb);
    assert_eq!(
        examples,
        vec![ex("refund bad", "Negative"), ex("good coffee", "Positive")]
    );
}
