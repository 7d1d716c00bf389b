//! Turns the working sample into a task record: instruction generation,
//! per-group prompts, bounded concurrent dispatch with retries, parsing and
//! cost accounting.

mod parse;
mod progress;

use std::collections::HashMap;
use std::time::Duration;

use chrono::Utc;
use futures::stream::{self, StreamExt};
use rand::Rng;
use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use crate::error::{Error, Result};
use crate::llm::{self, compute_cost, ChatRequest, Completion, CostTable, Provider, Usage};
use crate::prompt::{
    build_instruction_request, compose_annotation_prompt, context_digest, snapshot_bundle,
    Instance, InstructionalPrompt, PromptBundle,
};
use crate::workbook::{
    AnnotationResult, ContextAnswer, QuestionId, SampleEntry, TaskRecord, Workbook,
};

pub use parse::{
    parse_multi_response, parse_single_response, MultiParse, ParseError, ParsedAnswer,
};
pub use progress::{ProgressState, ProgressTracker};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnotationOptions {
    pub show_explanations: bool,
    pub max_in_flight: usize,
    /// Retries after the first attempt, so each group gets
    /// `max_retries + 1` calls at most.
    pub max_retries: u32,
    pub temperature: f32,
    /// First backoff step; doubles per attempt, with full jitter.
    #[serde(with = "millis")]
    pub backoff_base: Duration,
}

impl Default for AnnotationOptions {
    fn default() -> Self {
        AnnotationOptions {
            show_explanations: true,
            max_in_flight: 4,
            max_retries: 2,
            temperature: 0.0,
            backoff_base: Duration::from_secs(1),
        }
    }
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// Outcome of one instance inside a group request.
pub type InstanceOutcome = std::result::Result<ParsedAnswer, String>;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupOutcome {
    /// In the group's instance order.
    pub answers: Vec<InstanceOutcome>,
    pub usage: Usage,
    pub cost: f64,
    pub calls: u32,
    pub usage_is_estimate: bool,
}

fn backoff_delay(base: Duration, attempt: u32) -> Duration {
    let cap = base.saturating_mul(1u32 << attempt.min(16));
    if cap.is_zero() {
        return Duration::ZERO;
    }
    rand::thread_rng().gen_range(Duration::ZERO..=cap)
}

/// Sends `request` until it parses, retrying transport failures and rate
/// limits with exponential backoff and re-sending once on a parse failure.
/// Usage and cost of every attempt are accumulated.
pub async fn retry_group(
    provider: &dyn Provider,
    request: &ChatRequest,
    attempt_budget: u32,
    backoff_base: Duration,
    costs: &CostTable,
    parse: impl Fn(&str) -> Vec<InstanceOutcome>,
) -> std::result::Result<GroupOutcome, (Error, GroupOutcome)> {
    let budget = attempt_budget.max(1);
    let mut acc = GroupOutcome {
        answers: Vec::new(),
        usage: Usage::default(),
        cost: 0.0,
        calls: 0,
        usage_is_estimate: false,
    };
    let mut parse_retry_used = false;
    let mut attempt = 0;
    loop {
        attempt += 1;
        acc.calls += 1;
        match llm::complete(provider, request).await {
            Ok(Completion {
                text,
                usage,
                usage_is_estimate,
            }) => {
                acc.usage += usage;
                acc.usage_is_estimate |= usage_is_estimate;
                acc.cost +=
                    compute_cost(usage, &request.model, costs).map_err(|e| (e, acc.clone()))?;
                let answers = parse(&text);
                let failed = answers.iter().any(Result::is_err);
                acc.answers = answers;
                if failed && !parse_retry_used && attempt < budget {
                    parse_retry_used = true;
                    debug!("parse failure, re-sending group prompt");
                    continue;
                }
                return Ok(acc);
            }
            Err(e @ (Error::Transport(_) | Error::RateLimited { .. })) if attempt < budget => {
                let mut delay = backoff_delay(backoff_base, attempt - 1);
                if let Error::RateLimited {
                    retry_after: Some(after),
                } = &e
                {
                    delay = delay.max(*after);
                }
                warn!(attempt, ?delay, error = %e, "retrying provider call");
                tokio::time::sleep(delay).await;
            }
            Err(e) => return Err((e, acc)),
        }
    }
}

/// Labels groups of instances with one request per group, at most
/// `max_in_flight` at a time. Outcomes come back in input order.
pub async fn annotate_groups(
    provider: &dyn Provider,
    bundle: &PromptBundle,
    groups: &[Vec<Instance<'_>>],
    options: &AnnotationOptions,
    costs: &CostTable,
    on_group_done: &(dyn Fn(usize) + Send + Sync),
) -> Result<Vec<GroupOutcome>> {
    let mut prepared = Vec::with_capacity(groups.len());
    for group in groups {
        let prompt = compose_annotation_prompt(bundle, group)?;
        let request =
            ChatRequest::user(provider.model(), prompt).with_temperature(options.temperature);
        request.validate()?;
        prepared.push((request, group.len()));
    }
    let scale = &bundle.label_scale;
    let budget = options.max_retries + 1;
    let prepared = &prepared;
    // Indices rather than borrowed items keep the stream's future Send for
    // callers that spawn it.
    let mut outcomes: Vec<(usize, GroupOutcome)> = stream::iter(0..prepared.len())
        .map(|i| async move {
            let (request, n) = &prepared[i];
            let n = *n;
            let parse = move |text: &str| -> Vec<InstanceOutcome> {
                if n == 1 {
                    vec![parse_single_response(text, scale).map_err(|e| e.to_string())]
                } else {
                    let expected: Vec<usize> = (1..=n).collect();
                    let multi = parse_multi_response(text, &expected, scale);
                    if multi.discarded > 0 {
                        warn!(
                            discarded = multi.discarded,
                            "extra fragments in group response"
                        );
                    }
                    multi
                        .results
                        .into_iter()
                        .map(|(_, r)| r.map_err(|e| e.to_string()))
                        .collect()
                }
            };
            let outcome = match retry_group(
                provider,
                request,
                budget,
                options.backoff_base,
                costs,
                parse,
            )
            .await
            {
                Ok(o) => o,
                Err((e, mut partial)) => {
                    let msg = format!("provider failure: {e}");
                    partial.answers = vec![Err(msg); n];
                    partial
                }
            };
            on_group_done(n);
            (i, outcome)
        })
        .buffer_unordered(options.max_in_flight.max(1))
        .collect()
        .await;
    outcomes.sort_by_key(|(i, _)| *i);
    Ok(outcomes.into_iter().map(|(_, o)| o).collect())
}

/// Everything a task run needs, captured from the workbook up front so the
/// workbook is not borrowed while requests are in flight.
#[derive(Debug, Clone)]
pub struct AnnotationPlan {
    pub task_number: u32,
    pub sample: Vec<SampleEntry>,
    pub context: Vec<ContextAnswer>,
    pub cached_instruction: Option<InstructionalPrompt>,
    base: Workbook,
}

/// Checks the preconditions for a task and snapshots its inputs.
pub fn plan_annotation(workbook: &Workbook) -> Result<AnnotationPlan> {
    if workbook.working_sample.is_empty() {
        return Err(Error::EmptyWorkingSample);
    }
    if workbook.rulebook.is_empty() {
        return Err(Error::EmptyRulebook);
    }
    for q in QuestionId::USER_ANSWERED {
        if workbook.context_answer(q).trim().is_empty() {
            return Err(Error::MissingAnswer(q));
        }
    }
    let digest = context_digest(&workbook.context);
    let cached_instruction = workbook
        .tasks
        .iter()
        .rev()
        .map(|t| &t.prompt_bundle.instructional)
        .find(|i| i.source_context_digest == digest)
        .cloned();
    let base = Workbook {
        dataset: Vec::new(),
        tasks: Vec::new(),
        working_sample: Vec::new(),
        ..workbook.clone()
    };
    Ok(AnnotationPlan {
        task_number: workbook.next_task_number(),
        sample: workbook.working_sample.clone(),
        context: workbook.context.clone(),
        cached_instruction,
        base,
    })
}

/// Groups sample entries by group id, in first-appearance order. Returns the
/// groups and, for each, the sample positions of its members.
fn group_sample(sample: &[SampleEntry]) -> Vec<Vec<usize>> {
    let mut order: Vec<Vec<usize>> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (pos, entry) in sample.iter().enumerate() {
        let slot = *index.entry(entry.group_id.as_str()).or_insert_with(|| {
            order.push(Vec::new());
            order.len() - 1
        });
        order[slot].push(pos);
    }
    order
}

/// Runs a planned task against the provider. Never touches the workbook.
pub async fn run_annotation(
    plan: &AnnotationPlan,
    provider: &dyn Provider,
    costs: &CostTable,
    options: &AnnotationOptions,
    progress: &ProgressTracker,
) -> Result<TaskRecord> {
    let result = run_inner(plan, provider, costs, options, progress).await;
    match &result {
        Ok(_) => progress.advance(ProgressState::Done),
        Err(e) => progress.advance(ProgressState::Failed {
            reason: e.to_string(),
        }),
    }
    result
}

async fn run_inner(
    plan: &AnnotationPlan,
    provider: &dyn Provider,
    costs: &CostTable,
    options: &AnnotationOptions,
    progress: &ProgressTracker,
) -> Result<TaskRecord> {
    if !costs.models.contains_key(provider.model()) {
        return Err(Error::UnknownModel(provider.model().to_owned()));
    }
    let mut total_usage = Usage::default();
    let mut total_cost = 0.0;
    let mut estimate = false;

    let instructional = match &plan.cached_instruction {
        Some(cached) => cached.clone(),
        None => {
            progress.advance(ProgressState::GeneratingInstructionalPrompt);
            let request =
                ChatRequest::user(provider.model(), build_instruction_request(&plan.context)?)
                    .with_temperature(options.temperature);
            let outcome = retry_group(
                provider,
                &request,
                options.max_retries + 1,
                options.backoff_base,
                costs,
                |text| {
                    if text.trim().is_empty() {
                        vec![Err("empty instruction".to_owned())]
                    } else {
                        vec![Ok(ParsedAnswer {
                            label: String::new(),
                            explanation: text.trim().to_owned(),
                        })]
                    }
                },
            )
            .await
            .map_err(|(e, _)| e)?;
            total_usage += outcome.usage;
            total_cost += outcome.cost;
            estimate |= outcome.usage_is_estimate;
            let text = match outcome.answers.into_iter().next() {
                Some(Ok(a)) => a.explanation,
                _ => {
                    return Err(Error::ProviderError {
                        status: 200,
                        body: "empty instructional prompt".into(),
                    })
                }
            };
            InstructionalPrompt {
                text,
                generated_at: Utc::now(),
                source_context_digest: context_digest(&plan.context),
            }
        }
    };
    let bundle = snapshot_bundle(&plan.base, instructional)?;

    let group_positions = group_sample(&plan.sample);
    let groups: Vec<Vec<Instance<'_>>> = group_positions
        .iter()
        .map(|positions| {
            positions
                .iter()
                .map(|&p| {
                    let e = &plan.sample[p];
                    Instance {
                        data_id: e.data_id,
                        group_id: &e.group_id,
                        text: &e.text,
                    }
                })
                .collect()
        })
        .collect();

    let total = plan.sample.len();
    progress.advance(ProgressState::Annotating { done: 0, total });
    let done = std::sync::atomic::AtomicUsize::new(0);
    let on_done = |n: usize| {
        let d = done.fetch_add(n, std::sync::atomic::Ordering::SeqCst) + n;
        progress.advance(ProgressState::Annotating { done: d, total });
    };
    let outcomes = annotate_groups(provider, &bundle, &groups, options, costs, &on_done).await?;

    let mut results: Vec<Option<AnnotationResult>> = vec![None; total];
    for (positions, outcome) in group_positions.iter().zip(outcomes) {
        total_usage += outcome.usage;
        total_cost += outcome.cost;
        estimate |= outcome.usage_is_estimate;
        for (&pos, answer) in positions.iter().zip(outcome.answers) {
            let entry = &plan.sample[pos];
            let (llm_label, llm_explanation, parse_error) = match answer {
                Ok(a) => (Some(a.label), Some(a.explanation), None),
                Err(e) => (None, None, Some(e)),
            };
            results[pos] = Some(AnnotationResult {
                data_id: entry.data_id,
                group_id: entry.group_id.clone(),
                text: entry.text.clone(),
                llm_label,
                llm_explanation,
                parse_error,
                human_label: None,
                agree: false,
                gold_shot_flag: false,
                keep_flag: entry.keep_pin,
            });
        }
    }

    Ok(TaskRecord {
        task_number: plan.task_number,
        created_at: Utc::now(),
        prompt_bundle: bundle,
        show_explanations: options.show_explanations,
        model: provider.model().to_owned(),
        temperature: options.temperature,
        results: results
            .into_iter()
            .map(|r| r.expect("every position filled"))
            .collect(),
        total_cost,
        total_usage,
        usage_is_estimate: estimate,
    })
}

/// Plans, runs and commits one annotation task, returning its number.
pub async fn start_annotation(
    workbook: &mut Workbook,
    provider: &dyn Provider,
    costs: &CostTable,
    options: &AnnotationOptions,
    progress: &ProgressTracker,
) -> Result<u32> {
    let plan = plan_annotation(workbook)?;
    progress.reset(ProgressState::Idle);
    let record = run_annotation(&plan, provider, costs, options, progress).await?;
    workbook.append_task(record)
}

/// Labels each text as its own single-instance group. Used for gold-set
/// replay and by the optimizer.
pub async fn label_each(
    provider: &dyn Provider,
    bundle: &PromptBundle,
    texts: &[&str],
    options: &AnnotationOptions,
    costs: &CostTable,
) -> Result<Vec<InstanceOutcome>> {
    let ids: Vec<String> = (0..texts.len()).map(|i| i.to_string()).collect();
    let groups: Vec<Vec<Instance<'_>>> = texts
        .iter()
        .zip(&ids)
        .enumerate()
        .map(|(i, (t, g))| {
            vec![Instance {
                data_id: i as u32 + 1,
                group_id: g,
                text: t,
            }]
        })
        .collect();
    let outcomes = annotate_groups(provider, bundle, &groups, options, costs, &|_| {}).await?;
    Ok(outcomes
        .into_iter()
        .map(|o| {
            o.answers
                .into_iter()
                .next()
                .unwrap_or_else(|| Err("no answer".into()))
        })
        .collect())
}
