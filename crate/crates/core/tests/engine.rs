//! Annotation runs against the mock provider, observed through a counting
//! wrapper.

mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use async_trait::async_trait;
use common::{fast_options, plain_rules};
use darklabel_core::llm::{ChatRequest, Completion, CostTable, MockProvider, Provider};
use darklabel_core::prompt::INSTRUCTION_MARKER;
use darklabel_core::workbook::{LabelScale, NewRow, QuestionId, Workbook};
use darklabel_core::{sampling, start_annotation, Error, ProgressState, ProgressTracker};

#[derive(Clone, Default)]
struct Counting {
    inner: MockProvider,
    calls: Arc<AtomicUsize>,
    instruction_calls: Arc<AtomicUsize>,
}

#[async_trait]
impl Provider for Counting {
    fn model(&self) -> &str {
        self.inner.model()
    }

    async fn complete(&self, request: &ChatRequest) -> darklabel_core::Result<Completion> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if request
            .last_user_message()
            .is_some_and(|m| m.contains(INSTRUCTION_MARKER))
        {
            self.instruction_calls.fetch_add(1, Ordering::SeqCst);
        }
        self.inner.complete(request).await
    }
}

fn workbook(rows: &[(&str, &str)]) -> Workbook {
    let mut wb = Workbook::new("engine", LabelScale::sentiment5());
    wb.import_dataset(rows.iter().map(|(g, t)| NewRow::new(*g, *t)))
        .unwrap();
    wb.index_data_ids().unwrap();
    for q in QuestionId::USER_ANSWERED {
        wb.set_context_answer(q, "tweets about daily life").unwrap();
    }
    for r in plain_rules() {
        wb.upsert_rule(&r.label, r.rule_text, r.position).unwrap();
    }
    wb
}

fn annotate(wb: &mut Workbook, provider: &dyn Provider, show: bool) -> darklabel_core::Result<u32> {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let options = darklabel_core::AnnotationOptions {
        show_explanations: show,
        ..fast_options()
    };
    let progress = ProgressTracker::new();
    let r = rt.block_on(start_annotation(
        wb,
        provider,
        &CostTable::default(),
        &options,
        &progress,
    ));
    if r.is_ok() {
        assert_eq!(progress.get(), ProgressState::Done);
    }
    r
}

const TEN: [(&str, &str); 10] = [
    ("a", "great wonderful day"),
    ("b", "good coffee"),
    ("c", "bus at noon"),
    ("d", "bad traffic"),
    ("e", "terrible awful food"),
    ("f", "nice view"),
    ("g", "slow wifi"),
    ("h", "love it"),
    ("i", "meeting moved"),
    ("j", "hate mondays"),
];

#[test]
fn ten_single_instance_groups() {
    let mut wb = workbook(&TEN);
    sampling::sequential_sample(&mut wb, &sampling::GroupRange::new("a", "j")).unwrap();
    let provider = Counting::default();
    let n = annotate(&mut wb, &provider, true).unwrap();
    let task = wb.task(n).unwrap();
    assert_eq!(task.results.len(), 10);
    assert!(task
        .results
        .iter()
        .all(|r| r.parse_error.is_none() && r.llm_label.is_some()));
    assert!(task.total_cost > 0.0);
    assert!(task.usage_is_estimate);
    assert_eq!(
        task.results[0].llm_label.as_deref(),
        Some("Extremely Positive")
    );
    assert_eq!(provider.calls.load(Ordering::SeqCst), 11);
    assert_eq!(provider.instruction_calls.load(Ordering::SeqCst), 1);
    let ids: Vec<u32> = task.results.iter().map(|r| r.data_id).collect();
    assert_eq!(ids, (1..=10).collect::<Vec<_>>());

    // unchanged context reuses the cached instruction
    annotate(&mut wb, &provider, true).unwrap();
    assert_eq!(provider.calls.load(Ordering::SeqCst), 21);
    assert_eq!(provider.instruction_calls.load(Ordering::SeqCst), 1);
    assert_eq!(wb.dashboard().len(), 2);

    wb.set_context_answer(QuestionId::Q5, "changed").unwrap();
    annotate(&mut wb, &provider, true).unwrap();
    assert_eq!(provider.instruction_calls.load(Ordering::SeqCst), 2);
}

#[test]
fn one_group_of_three_is_one_call() {
    let mut wb = workbook(&[
        ("conv", "good start"),
        ("conv", "bad middle"),
        ("conv", "terrible awful end"),
    ]);
    sampling::random_sample(&mut wb, 1, 0).unwrap();
    let provider = Counting::default();
    let n = annotate(&mut wb, &provider, false).unwrap();
    assert_eq!(provider.calls.load(Ordering::SeqCst), 2);
    let task = wb.task(n).unwrap();
    let labels: Vec<_> = task
        .results
        .iter()
        .map(|r| r.llm_label.clone().unwrap())
        .collect();
    assert_eq!(labels, ["Positive", "Negative", "Extremely Negative"]);
    // stored, but hidden from the display view
    assert!(task.results.iter().all(|r| r.llm_explanation.is_some()));
    assert!(task
        .visible_results()
        .iter()
        .all(|r| r.llm_explanation.is_none()));
}

#[test]
fn preconditions_leave_no_task() {
    let mut wb = workbook(&TEN);
    let provider = Counting::default();
    assert!(matches!(
        annotate(&mut wb, &provider, true),
        Err(Error::EmptyWorkingSample)
    ));
    sampling::random_sample(&mut wb, 2, 1).unwrap();
    wb.set_context_answer(QuestionId::Q3, "").unwrap();
    assert!(matches!(
        annotate(&mut wb, &provider, true),
        Err(Error::MissingAnswer(QuestionId::Q3))
    ));
    wb.rulebook.clear();
    assert!(matches!(
        annotate(&mut wb, &provider, true),
        Err(Error::EmptyRulebook)
    ));
    assert!(wb.tasks.is_empty());
    assert_eq!(provider.calls.load(Ordering::SeqCst), 0);
}

#[test]
fn mock_runs_are_identical_apart_from_timestamps() {
    let run = || {
        let mut wb = workbook(&TEN);
        sampling::random_sample(&mut wb, 6, 3).unwrap();
        let n = annotate(&mut wb, &MockProvider::shipped(), true).unwrap();
        let mut task = wb.task(n).unwrap().clone();
        task.created_at = common::epoch();
        task.prompt_bundle.instructional.generated_at = common::epoch();
        serde_json::to_string(&task).unwrap()
    };
    assert_eq!(run(), run());
}
