//! Bootstrap few-shot optimization.
//!
//! The current prompt labels a train split; the examples it already gets
//! right become demo candidates. Seeded random demo subsets (plus the empty
//! set) are appended to the prompt's shots and scored on a dev split, and the
//! best scoring prompt wins. Because the empty set is always scored, the
//! result never does worse on dev than the input prompt.

use std::collections::{HashMap, HashSet};

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::debug;

use crate::engine::{label_each, AnnotationOptions};
use crate::error::{Error, Result};
use crate::evaluation::{accuracy, evaluate_session, GoldSet, IterationName};
use crate::llm::{CostTable, Provider};
use crate::prompt::PromptBundle;
use crate::workbook::{Shot, ShotSource, Workbook};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidatedExample {
    pub text: String,
    pub human_label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizationConfig {
    pub max_demos: usize,
    pub num_candidate_sets: usize,
    pub dev_fraction: f64,
    pub seed: u64,
}

impl Default for OptimizationConfig {
    fn default() -> Self {
        OptimizationConfig {
            max_demos: 4,
            num_candidate_sets: 8,
            dev_fraction: 0.3,
            seed: 0,
        }
    }
}

/// Shots plus task results a human labeled or agreed with, one per text. A
/// human label beats an agreed LLM label for the same text.
pub fn collect_validated(workbook: &Workbook) -> Vec<ValidatedExample> {
    // text -> (index into out, is human)
    let mut seen: HashMap<String, (usize, bool)> = HashMap::new();
    let mut out: Vec<ValidatedExample> = Vec::new();
    let mut offer = |text: &str, label: &str, human: bool| match seen.get(text).copied() {
        None => {
            seen.insert(text.to_owned(), (out.len(), human));
            out.push(ValidatedExample {
                text: text.to_owned(),
                human_label: label.to_owned(),
            });
        }
        Some((i, false)) if human => {
            out[i].human_label = label.to_owned();
            seen.insert(text.to_owned(), (i, true));
        }
        Some(_) => {}
    };
    for shot in &workbook.shots {
        offer(&shot.text, &shot.gold_label, true);
    }
    for task in &workbook.tasks {
        for r in &task.results {
            if let Some(h) = &r.human_label {
                offer(&r.text, h, true);
            } else if let (true, Some(l)) = (r.agree, &r.llm_label) {
                offer(&r.text, l, false);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
}

/// Seeded shuffle, then the first `round(n * dev_fraction)` (at least one,
/// at most `n - 1`) indices go to dev.
pub fn split_examples(n: usize, dev_fraction: f64, rng: &mut ChaCha8Rng) -> Result<Split> {
    if n < 2 {
        return Err(Error::TooFewExamples(n));
    }
    if !(dev_fraction > 0.0 && dev_fraction < 1.0) {
        return Err(Error::NoDevItems);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let dev_len = ((n as f64 * dev_fraction).round() as usize).clamp(1, n - 1);
    let dev = order[..dev_len].to_vec();
    let train = order[dev_len..].to_vec();
    Ok(Split { train, dev })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub demos: Vec<ValidatedExample>,
    pub dev_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationOutcome {
    pub optimized: PromptBundle,
    pub dev_acc: f64,
    pub baseline_dev_acc: f64,
    /// Demos appended to the prompt's shots.
    pub demos: Vec<ValidatedExample>,
    pub split: Split,
    /// Teacher-correct train examples.
    pub candidate_pool: Vec<ValidatedExample>,
    /// Every evaluated set in generation order; the first is the empty set.
    pub scores: Vec<CandidateScore>,
}

fn demo_shots(demos: &[ValidatedExample]) -> Vec<Shot> {
    demos
        .iter()
        .map(|d| Shot {
            text: d.text.clone(),
            gold_label: d.human_label.clone(),
            source: ShotSource::Manual,
        })
        .collect()
}

async fn dev_accuracy(
    bundle: &PromptBundle,
    dev: &[&ValidatedExample],
    provider: &dyn Provider,
    options: &AnnotationOptions,
    costs: &CostTable,
) -> Result<f64> {
    let texts: Vec<&str> = dev.iter().map(|e| e.text.as_str()).collect();
    let gold: Vec<&str> = dev.iter().map(|e| e.human_label.as_str()).collect();
    let outcomes = label_each(provider, bundle, &texts, options, costs).await?;
    let pred: Vec<Option<String>> = outcomes
        .into_iter()
        .map(|o| o.ok().map(|a| a.label))
        .collect();
    let pred: Vec<Option<&str>> = pred.iter().map(Option::as_deref).collect();
    accuracy(&pred, &gold)
}

pub async fn bootstrap_fewshot(
    bundle: &PromptBundle,
    examples: &[ValidatedExample],
    provider: &dyn Provider,
    config: &OptimizationConfig,
    options: &AnnotationOptions,
    costs: &CostTable,
) -> Result<OptimizationOutcome> {
    for e in examples {
        bundle.label_scale.require(&e.human_label)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let split = split_examples(examples.len(), config.dev_fraction, &mut rng)?;
    let train: Vec<&ValidatedExample> = split.train.iter().map(|&i| &examples[i]).collect();
    let dev: Vec<&ValidatedExample> = split.dev.iter().map(|&i| &examples[i]).collect();

    let train_texts: Vec<&str> = train.iter().map(|e| e.text.as_str()).collect();
    let teacher = label_each(provider, bundle, &train_texts, options, costs).await?;
    let pool: Vec<ValidatedExample> = train
        .iter()
        .zip(&teacher)
        .filter(|(e, t)| matches!(t, Ok(a) if a.label == e.human_label))
        .map(|(e, _)| (*e).clone())
        .collect();
    debug!(pool = pool.len(), train = train.len(), "teacher pass done");

    let mut sets: Vec<Vec<usize>> = vec![Vec::new()];
    let size = config.max_demos.min(pool.len());
    if size > 0 {
        let mut seen: HashSet<Vec<usize>> = HashSet::new();
        for _ in 0..config.num_candidate_sets {
            let mut picked = index::sample(&mut rng, pool.len(), size).into_vec();
            picked.sort_unstable();
            if seen.insert(picked.clone()) {
                sets.push(picked);
            }
        }
    }

    let mut scores = Vec::with_capacity(sets.len());
    let mut best: Option<(usize, f64)> = None;
    for (gen, set) in sets.iter().enumerate() {
        let demos: Vec<ValidatedExample> = set.iter().map(|&i| pool[i].clone()).collect();
        let candidate = bundle.with_extra_shots(&demo_shots(&demos));
        let acc = dev_accuracy(&candidate, &dev, provider, options, costs).await?;
        let better = match best {
            None => true,
            Some((b, best_acc)) => acc > best_acc || (acc == best_acc && set.len() < sets[b].len()),
        };
        if better {
            best = Some((gen, acc));
        }
        scores.push(CandidateScore {
            demos,
            dev_acc: acc,
        });
    }
    let (best_gen, dev_acc) = best.expect("the empty set is always scored");
    let demos = scores[best_gen].demos.clone();
    Ok(OptimizationOutcome {
        optimized: bundle.with_extra_shots(&demo_shots(&demos)),
        dev_acc,
        baseline_dev_acc: scores[0].dev_acc,
        demos,
        split,
        candidate_pool: pool,
        scores,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeComparison {
    pub acc_before: Option<f64>,
    pub acc_after: Option<f64>,
    pub mse_before: Option<f64>,
    pub mse_after: Option<f64>,
}

/// Gold-set ACC and MSE before and after optimization.
pub async fn optimize_report(
    before: &PromptBundle,
    after: &PromptBundle,
    gold: &GoldSet,
    provider: &dyn Provider,
    options: &AnnotationOptions,
    costs: &CostTable,
) -> Result<OptimizeComparison> {
    let bundles = [
        (IterationName::Initial, before.clone()),
        (IterationName::Revision(1), after.clone()),
    ];
    let report = evaluate_session::<f64>(&bundles, gold, provider, options, costs).await?;
    if let Some(e) = report.rows.iter().find_map(|r| r.error.clone()) {
        return Err(Error::Transport(e));
    }
    Ok(OptimizeComparison {
        acc_before: report.rows[0].acc,
        acc_after: report.rows[1].acc,
        mse_before: report.rows[0].mse,
        mse_after: report.rows[1].mse,
    })
}
