//! The operations both front ends call. Every HTTP handler and every CLI
//! subcommand is a thin wrapper over one method of [`Service`].

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use darklabel_core::engine::{plan_annotation, run_annotation, AnnotationPlan};
use darklabel_core::evaluation::{evaluate_session, iteration_names, rule_similarity_report};
use darklabel_core::io::{read_dataset_csv, read_gold_csv, task_csv_string};
use darklabel_core::optimizer::OptimizeComparison;
use darklabel_core::workbook::{
    ContextAnswer, DashboardRow, PromotionReport, SampleEntry, Validation,
};
use darklabel_core::{
    bootstrap_fewshot, clear_sample, collect_validated, optimize_report, random_sample,
    sequential_sample, AnnotationOptions, AnnotationResult, CostTable, Error as CoreError, GoldSet,
    GroupRange, LabelRule, LabelScale, OptimizationConfig, ProgressState, ProgressTracker,
    PromptBundle, Provider, QuestionId, RuleSimilarityReport, SessionEvaluation, Shot, ShotSource,
    TaskRecord, TrigramEmbedder, ValidatedExample, Workbook,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::task::JoinHandle;
use tracing::{info, warn};

use crate::config::ServerConfig;
use crate::error::{Result, ServiceError};
use crate::store::{Actor, Store, WorkbookSummary};

/// Every operation the service exposes, named as in the action log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    CreateWorkbook,
    ListWorkbooks,
    GetWorkbook,
    DeleteWorkbook,
    ImportDataset,
    IndexDataset,
    GetContext,
    SetContext,
    GetRules,
    PutRules,
    GetShots,
    AddShots,
    Sample,
    GetSample,
    Annotate,
    Progress,
    ListTasks,
    GetTask,
    ExportTask,
    Validate,
    PromoteShots,
    Evaluate,
    GetEvaluation,
    RuleSimilarity,
    Optimize,
    Health,
}

impl Op {
    pub const ALL: [Op; 26] = [
        Op::CreateWorkbook,
        Op::ListWorkbooks,
        Op::GetWorkbook,
        Op::DeleteWorkbook,
        Op::ImportDataset,
        Op::IndexDataset,
        Op::GetContext,
        Op::SetContext,
        Op::GetRules,
        Op::PutRules,
        Op::GetShots,
        Op::AddShots,
        Op::Sample,
        Op::GetSample,
        Op::Annotate,
        Op::Progress,
        Op::ListTasks,
        Op::GetTask,
        Op::ExportTask,
        Op::Validate,
        Op::PromoteShots,
        Op::Evaluate,
        Op::GetEvaluation,
        Op::RuleSimilarity,
        Op::Optimize,
        Op::Health,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Op::CreateWorkbook => "create_workbook",
            Op::ListWorkbooks => "list_workbooks",
            Op::GetWorkbook => "get_workbook",
            Op::DeleteWorkbook => "delete_workbook",
            Op::ImportDataset => "import_dataset",
            Op::IndexDataset => "index_dataset",
            Op::GetContext => "get_context",
            Op::SetContext => "set_context",
            Op::GetRules => "get_rules",
            Op::PutRules => "put_rules",
            Op::GetShots => "get_shots",
            Op::AddShots => "add_shots",
            Op::Sample => "sample",
            Op::GetSample => "get_sample",
            Op::Annotate => "annotate",
            Op::Progress => "progress",
            Op::ListTasks => "list_tasks",
            Op::GetTask => "get_task",
            Op::ExportTask => "export_task",
            Op::Validate => "validate",
            Op::PromoteShots => "promote_shots",
            Op::Evaluate => "evaluate",
            Op::GetEvaluation => "get_evaluation",
            Op::RuleSimilarity => "rule_similarity",
            Op::Optimize => "optimize",
            Op::Health => "health",
        }
    }
}

// ---- parameters and results ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateWorkbook {
    pub id: String,
    #[serde(default)]
    pub name: Option<String>,
    /// Ordered label scale; the five-point sentiment scale when absent.
    #[serde(default)]
    pub labels: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportReport {
    pub imported: usize,
    pub total_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexReport {
    pub indexed: usize,
}

/// Answers keyed by question id (`Q1`..`Q5`).
pub type ContextUpdate = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleInput {
    pub label: String,
    pub rule_text: String,
    pub position: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleKey {
    pub label: String,
    pub position: i64,
}

/// Removals run first, then upserts, all or nothing.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RulesUpdate {
    pub upsert: Vec<RuleInput>,
    pub remove: Vec<RuleKey>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewShot {
    pub text: String,
    pub gold_label: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AddShots {
    pub shots: Vec<NewShot>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AddShotsReport {
    pub added: usize,
    pub duplicates: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum SampleRequest {
    Random {
        n: usize,
        #[serde(default)]
        seed: Option<u64>,
    },
    Sequential {
        from: String,
        to: String,
    },
    Clear,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleReport {
    pub size: usize,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnotateRequest {
    pub show_explanations: Option<bool>,
    pub concurrency: Option<usize>,
    pub retries: Option<u32>,
    pub temperature: Option<f32>,
}

impl AnnotateRequest {
    pub fn options(&self, defaults: &AnnotationOptions) -> AnnotationOptions {
        AnnotationOptions {
            show_explanations: self.show_explanations.unwrap_or(defaults.show_explanations),
            max_in_flight: self.concurrency.unwrap_or(defaults.max_in_flight).max(1),
            max_retries: self.retries.unwrap_or(defaults.max_retries),
            temperature: self.temperature.unwrap_or(defaults.temperature),
            backoff_base: defaults.backoff_base,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressView {
    #[serde(flatten)]
    pub state: ProgressState,
    pub notification: String,
}

impl From<ProgressState> for ProgressView {
    fn from(state: ProgressState) -> Self {
        ProgressView {
            notification: state.notification(),
            state,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidateRequest {
    pub data_id: u32,
    #[serde(flatten)]
    pub update: Validation,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateRequest {
    /// Gold CSV text (`text,gold_label`). When absent the workbook's last
    /// uploaded gold set is used.
    pub gold_csv: Option<String>,
    /// Tasks whose prompts are replayed, in order; all tasks when absent.
    pub tasks: Option<Vec<u32>>,
    pub end_of_session: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub id: u32,
    pub created_at: DateTime<Utc>,
    pub tasks: Vec<u32>,
    pub gold_items: usize,
    pub report: SessionEvaluation,
    pub report_csv: String,
    /// Present when at least two prompts were compared.
    pub rule_similarity: Option<RuleSimilarityReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizeRequest {
    pub max_demos: usize,
    pub candidates: usize,
    pub dev: f64,
    pub seed: Option<u64>,
    /// Adds the chosen demos to the workbook's shots.
    pub apply: bool,
    /// Task whose prompt is optimized; the latest when absent.
    pub task: Option<u32>,
    /// Gold CSV for the before/after comparison; falls back to the stored
    /// gold set, and the comparison is skipped when there is none.
    pub gold_csv: Option<String>,
}

impl Default for OptimizeRequest {
    fn default() -> Self {
        let c = OptimizationConfig::default();
        OptimizeRequest {
            max_demos: c.max_demos,
            candidates: c.num_candidate_sets,
            dev: c.dev_fraction,
            seed: None,
            apply: false,
            task: None,
            gold_csv: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeResult {
    pub task: u32,
    pub seed: u64,
    pub examples: usize,
    pub train: usize,
    pub dev: usize,
    pub baseline_dev_acc: f64,
    pub dev_acc: f64,
    pub demos: Vec<ValidatedExample>,
    pub candidates_scored: usize,
    pub shots_added: usize,
    pub comparison: Option<OptimizeComparison>,
    pub optimized_prompt: PromptBundle,
}

impl OptimizeResult {
    /// `metric,before,after` for the gold comparison plus the dev scores.
    pub fn to_csv(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from("metric,before,after\n");
        out.push_str(&format!(
            "dev_acc,{},{}\n",
            self.baseline_dev_acc, self.dev_acc
        ));
        if let Some(c) = &self.comparison {
            out.push_str(&format!(
                "gold_acc,{},{}\n",
                f(c.acc_before),
                f(c.acc_after)
            ));
            out.push_str(&format!(
                "gold_mse,{},{}\n",
                f(c.mse_before),
                f(c.mse_after)
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
    pub model: String,
}

// ---- service ----

/// Per-workbook coordination. `write` serializes mutations; `running` marks
/// an annotation task in flight, during which mutations are refused.
#[derive(Default)]
struct Slot {
    write: tokio::sync::Mutex<()>,
    progress: ProgressTracker,
    running: AtomicBool,
    touched: AtomicBool,
}

/// Clears the in-flight flag however the annotation task ends.
struct RunningGuard(Arc<Slot>);

impl Drop for RunningGuard {
    fn drop(&mut self) {
        self.0.running.store(false, Ordering::SeqCst);
    }
}

pub struct AnnotationHandle {
    pub task_number: u32,
    handle: JoinHandle<Result<u32>>,
}

impl AnnotationHandle {
    /// Waits for the task to be committed to the workbook.
    pub async fn wait(self) -> Result<u32> {
        self.handle
            .await
            .map_err(|e| ServiceError::Internal(format!("annotation task aborted: {e}")))?
    }
}

pub struct Service {
    store: Store,
    provider: Arc<dyn Provider>,
    costs: CostTable,
    config: ServerConfig,
    slots: Mutex<HashMap<String, Arc<Slot>>>,
}

fn json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

fn canonical_label(scale: &LabelScale, raw: &str) -> Result<String> {
    scale
        .canonical(raw)
        .map(str::to_owned)
        .ok_or_else(|| CoreError::UnknownLabel(raw.to_owned()).into())
}

impl Service {
    pub fn new(
        store: Store,
        provider: Arc<dyn Provider>,
        costs: CostTable,
        config: ServerConfig,
    ) -> Self {
        Service {
            store,
            provider,
            costs,
            config,
            slots: Mutex::new(HashMap::new()),
        }
    }

    /// Validates the config and builds the provider, cost table and store it
    /// names.
    pub fn from_config(config: ServerConfig) -> Result<Self> {
        config.validate()?;
        let store = Store::open(&config.state_dir)?;
        let provider = config.build_provider()?;
        let costs = config.load_costs()?;
        Ok(Service::new(store, provider, costs, config))
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    fn slot(&self, id: &str) -> Arc<Slot> {
        self.slots
            .lock()
            .expect("slot map lock")
            .entry(id.to_owned())
            .or_default()
            .clone()
    }

    pub fn is_annotating(&self, id: &str) -> bool {
        self.slots
            .lock()
            .expect("slot map lock")
            .get(id)
            .is_some_and(|s| s.running.load(Ordering::SeqCst))
    }

    fn log(&self, id: &str, actor: Actor, op: Op, params: &Value) -> Result<()> {
        self.store.log_action(id, actor, op.name(), params)?;
        info!(workbook = id, op = op.name(), ?actor, "action");
        Ok(())
    }

    /// Loads, mutates, saves and logs under the workbook's write lock. The
    /// closure's error leaves the stored workbook untouched.
    async fn mutate<T>(
        &self,
        id: &str,
        actor: Actor,
        op: Op,
        params: Value,
        f: impl FnOnce(&mut Workbook) -> Result<T>,
    ) -> Result<T> {
        let slot = self.slot(id);
        if slot.running.load(Ordering::SeqCst) {
            return Err(ServiceError::AnnotationInFlight);
        }
        let _guard = slot.write.lock().await;
        if slot.running.load(Ordering::SeqCst) {
            return Err(ServiceError::AnnotationInFlight);
        }
        let mut wb = self.store.load(id)?;
        let out = f(&mut wb)?;
        self.store.save(id, &wb)?;
        self.log(id, actor, op, &params)?;
        Ok(out)
    }

    fn read<T>(&self, id: &str, f: impl FnOnce(&Workbook) -> Result<T>) -> Result<T> {
        f(&self.store.load(id)?)
    }

    pub fn health(&self) -> Health {
        Health {
            status: "ok".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            model: self.provider.model().to_owned(),
        }
    }

    pub fn create_workbook(&self, actor: Actor, req: &CreateWorkbook) -> Result<WorkbookSummary> {
        let scale = match &req.labels {
            Some(labels) => LabelScale::new(labels.iter().map(String::as_str))?,
            None => LabelScale::sentiment5(),
        };
        let name = req.name.clone().unwrap_or_else(|| req.id.clone());
        let wb = Workbook::new(name.clone(), scale);
        self.store.create(&req.id, &wb)?;
        self.log(&req.id, actor, Op::CreateWorkbook, &json(req))?;
        Ok(WorkbookSummary {
            id: req.id.clone(),
            name,
            rows: 0,
            tasks: 0,
        })
    }

    pub fn list_workbooks(&self) -> Result<Vec<WorkbookSummary>> {
        self.store.list()
    }

    pub fn get_workbook(&self, id: &str) -> Result<Workbook> {
        self.store.load(id)
    }

    pub async fn delete_workbook(&self, id: &str) -> Result<()> {
        let slot = self.slot(id);
        if slot.running.load(Ordering::SeqCst) {
            return Err(ServiceError::AnnotationInFlight);
        }
        let _guard = slot.write.lock().await;
        self.store.delete(id)?;
        self.slots.lock().expect("slot map lock").remove(id);
        Ok(())
    }

    pub async fn import_dataset(&self, id: &str, actor: Actor, csv: &str) -> Result<ImportReport> {
        let rows = read_dataset_csv(csv.as_bytes())?;
        let params = serde_json::json!({ "csv_sha256": crate::store::params_digest(&Value::String(csv.to_owned())) });
        self.mutate(id, actor, Op::ImportDataset, params, |wb| {
            let imported = wb.import_dataset(rows)?;
            Ok(ImportReport {
                imported,
                total_rows: wb.dataset.len(),
            })
        })
        .await
    }

    pub async fn index_dataset(&self, id: &str, actor: Actor) -> Result<IndexReport> {
        self.mutate(id, actor, Op::IndexDataset, Value::Null, |wb| {
            Ok(IndexReport {
                indexed: wb.index_data_ids()?,
            })
        })
        .await
    }

    pub fn get_context(&self, id: &str) -> Result<Vec<ContextAnswer>> {
        self.read(id, |wb| Ok(wb.context.clone()))
    }

    pub async fn set_context(
        &self,
        id: &str,
        actor: Actor,
        update: &ContextUpdate,
    ) -> Result<Vec<ContextAnswer>> {
        let parsed: Vec<(QuestionId, String)> = update
            .iter()
            .map(|(k, v)| Ok((k.parse::<QuestionId>()?, v.clone())))
            .collect::<Result<_>>()?;
        self.mutate(id, actor, Op::SetContext, json(update), |wb| {
            for (q, answer) in parsed {
                wb.set_context_answer(q, answer)?;
            }
            Ok(wb.context.clone())
        })
        .await
    }

    /// The rule book with labels in scale order and rules in position order.
    pub fn get_rules(&self, id: &str) -> Result<Vec<LabelRule>> {
        self.read(id, |wb| Ok(sorted_rules(wb)))
    }

    pub async fn put_rules(
        &self,
        id: &str,
        actor: Actor,
        update: &RulesUpdate,
    ) -> Result<Vec<LabelRule>> {
        self.mutate(id, actor, Op::PutRules, json(update), |wb| {
            for key in &update.remove {
                let label = canonical_label(&wb.label_scale, &key.label)?;
                wb.remove_rule(&label, key.position)?;
            }
            for rule in &update.upsert {
                let label = canonical_label(&wb.label_scale, &rule.label)?;
                wb.upsert_rule(&label, rule.rule_text.clone(), rule.position)?;
            }
            Ok(sorted_rules(wb))
        })
        .await
    }

    pub fn get_shots(&self, id: &str) -> Result<Vec<Shot>> {
        self.read(id, |wb| Ok(wb.shots.clone()))
    }

    pub async fn add_shots(
        &self,
        id: &str,
        actor: Actor,
        req: &AddShots,
    ) -> Result<AddShotsReport> {
        self.mutate(id, actor, Op::AddShots, json(req), |wb| {
            let mut report = AddShotsReport {
                added: 0,
                duplicates: 0,
            };
            for shot in &req.shots {
                let label = canonical_label(&wb.label_scale, &shot.gold_label)?;
                if wb.add_shot(shot.text.clone(), &label, ShotSource::Manual)? {
                    report.added += 1;
                } else {
                    report.duplicates += 1;
                }
            }
            Ok(report)
        })
        .await
    }

    pub async fn sample(
        &self,
        id: &str,
        actor: Actor,
        req: &SampleRequest,
    ) -> Result<SampleReport> {
        let default_seed = self.config.default_seed;
        self.mutate(id, actor, Op::Sample, json(req), |wb| match req {
            SampleRequest::Random { n, seed } => {
                let seed = seed.unwrap_or(default_seed);
                Ok(SampleReport {
                    size: random_sample(wb, *n, seed)?,
                    seed: Some(seed),
                })
            }
            SampleRequest::Sequential { from, to } => Ok(SampleReport {
                size: sequential_sample(wb, &GroupRange::new(from.clone(), to.clone()))?,
                seed: None,
            }),
            SampleRequest::Clear => {
                clear_sample(wb);
                Ok(SampleReport {
                    size: 0,
                    seed: None,
                })
            }
        })
        .await
    }

    pub fn get_sample(&self, id: &str) -> Result<Vec<SampleEntry>> {
        self.read(id, |wb| Ok(wb.working_sample.clone()))
    }

    /// Checks the preconditions, then runs the task in the background. The
    /// task is committed to the workbook when the returned handle resolves.
    pub async fn annotate(
        self: &Arc<Self>,
        id: &str,
        actor: Actor,
        req: &AnnotateRequest,
    ) -> Result<AnnotationHandle> {
        let slot = self.slot(id);
        let guard = slot.write.lock().await;
        if slot.running.swap(true, Ordering::SeqCst) {
            return Err(ServiceError::AnnotationInFlight);
        }
        let running = RunningGuard(slot.clone());
        let plan = self.read(id, |wb| Ok(plan_annotation(wb)?))?;
        self.log(id, actor, Op::Annotate, &json(req))?;
        slot.progress.reset(ProgressState::Idle);
        slot.touched.store(true, Ordering::SeqCst);
        drop(guard);

        let options = req.options(&self.config.annotation_defaults());
        let task_number = plan.task_number;
        let svc = Arc::clone(self);
        let id = id.to_owned();
        let handle = tokio::spawn(async move {
            let result = svc.finish_annotation(&id, &plan, &options, &slot).await;
            drop(running);
            result
        });
        Ok(AnnotationHandle {
            task_number,
            handle,
        })
    }

    async fn finish_annotation(
        &self,
        id: &str,
        plan: &AnnotationPlan,
        options: &AnnotationOptions,
        slot: &Slot,
    ) -> Result<u32> {
        let record = run_annotation(
            plan,
            self.provider.as_ref(),
            &self.costs,
            options,
            &slot.progress,
        )
        .await;
        let _guard = slot.write.lock().await;
        let committed = record.map_err(ServiceError::from).and_then(|record| {
            let mut wb = self.store.load(id)?;
            let n = wb.append_task(record)?;
            self.store.save(id, &wb)?;
            Ok(n)
        });
        if let Err(e) = &committed {
            warn!(workbook = id, error = %e, "annotation failed");
            slot.progress.advance(ProgressState::Failed {
                reason: e.to_string(),
            });
        }
        if let Err(e) = self.store.save_progress(id, &slot.progress.get()) {
            warn!(workbook = id, error = %e, "could not record progress");
        }
        committed
    }

    /// Live state while this process has annotated the workbook, otherwise
    /// the state recorded when the last run finished.
    pub fn progress(&self, id: &str) -> Result<ProgressView> {
        let slot = self.slot(id);
        if slot.touched.load(Ordering::SeqCst) {
            self.store.load(id)?;
            return Ok(slot.progress.get().into());
        }
        Ok(self
            .store
            .load_progress(id)?
            .unwrap_or(ProgressState::Idle)
            .into())
    }

    pub fn list_tasks(&self, id: &str) -> Result<Vec<DashboardRow>> {
        self.read(id, |wb| Ok(wb.dashboard()))
    }

    /// The task as displayed: explanations are blanked when the task hides
    /// them.
    pub fn get_task(&self, id: &str, task: u32) -> Result<TaskRecord> {
        self.read(id, |wb| {
            let mut record = wb.task(task)?.clone();
            record.results = record.visible_results();
            Ok(record)
        })
    }

    pub fn export_task(&self, id: &str, task: u32) -> Result<String> {
        self.read(id, |wb| Ok(task_csv_string(wb.task(task)?)?))
    }

    pub async fn validate(
        &self,
        id: &str,
        actor: Actor,
        task: u32,
        req: &ValidateRequest,
    ) -> Result<AnnotationResult> {
        let mut params = json(req);
        params["task"] = task.into();
        self.mutate(id, actor, Op::Validate, params, |wb| {
            let mut update = req.update.clone();
            if let Some(h) = update.human_label.as_deref().filter(|h| !h.is_empty()) {
                update.human_label = Some(canonical_label(&wb.label_scale, h)?);
            }
            wb.record_validation(task, req.data_id, &update)?;
            let record = wb.task(task)?;
            let mut result = record
                .result(req.data_id)
                .cloned()
                .ok_or(CoreError::UnknownDataId(req.data_id))?;
            if !record.show_explanations {
                result.llm_explanation = None;
            }
            Ok(result)
        })
        .await
    }

    pub async fn promote_shots(
        &self,
        id: &str,
        actor: Actor,
        task: u32,
    ) -> Result<PromotionReport> {
        self.mutate(
            id,
            actor,
            Op::PromoteShots,
            serde_json::json!({ "task": task }),
            |wb| Ok(wb.promote_gold_shots(task)?),
        )
        .await
    }

    fn gold_set(
        &self,
        id: &str,
        scale: &LabelScale,
        upload: Option<&str>,
    ) -> Result<Option<GoldSet>> {
        let csv = match upload {
            Some(csv) => {
                let gold = read_gold_csv(csv.as_bytes(), scale)?;
                self.store.save_gold(id, csv)?;
                return Ok(Some(gold));
            }
            None => self.store.load_gold(id)?,
        };
        csv.map(|c| Ok(read_gold_csv(c.as_bytes(), scale)?))
            .transpose()
    }

    fn task_bundles(wb: &Workbook, tasks: Option<&[u32]>) -> Result<(Vec<u32>, Vec<PromptBundle>)> {
        let numbers: Vec<u32> = match tasks {
            Some(t) => t.to_vec(),
            None => wb.tasks.iter().map(|t| t.task_number).collect(),
        };
        if numbers.is_empty() {
            return Err(ServiceError::BadRequest(
                "no tasks to evaluate; run annotate first".into(),
            ));
        }
        let bundles = numbers
            .iter()
            .map(|&n| Ok(wb.task(n)?.prompt_bundle.clone()))
            .collect::<Result<_>>()?;
        Ok((numbers, bundles))
    }

    /// Replays the chosen tasks' prompts against the gold set and stores
    /// the report as a numbered evaluation.
    pub async fn evaluate(
        &self,
        id: &str,
        actor: Actor,
        req: &EvaluateRequest,
    ) -> Result<EvaluationRecord> {
        let wb = self.store.load(id)?;
        let (tasks, bundles) = Self::task_bundles(&wb, req.tasks.as_deref())?;
        let gold = self
            .gold_set(id, &wb.label_scale, req.gold_csv.as_deref())?
            .ok_or_else(|| {
                ServiceError::BadRequest("no gold set: upload one with gold_csv".into())
            })?;
        let names = iteration_names(bundles.len(), req.end_of_session);
        let named: Vec<_> = names.into_iter().zip(bundles.iter().cloned()).collect();
        let options = self.config.annotation_defaults();
        let report: SessionEvaluation =
            evaluate_session(&named, &gold, self.provider.as_ref(), &options, &self.costs).await?;
        let rule_similarity = if bundles.len() >= 2 {
            Some(rule_similarity_report(&bundles, &TrigramEmbedder)?)
        } else {
            None
        };
        let report_csv = report.to_csv();
        let (_, record) = self.store.save_evaluation(id, |k| EvaluationRecord {
            id: k,
            created_at: Utc::now(),
            tasks,
            gold_items: gold.len(),
            report,
            report_csv,
            rule_similarity,
        })?;
        let mut params = json(req);
        params["evaluation"] = record.id.into();
        self.log(id, actor, Op::Evaluate, &params)?;
        Ok(record)
    }

    pub fn get_evaluation(&self, id: &str, k: u32) -> Result<EvaluationRecord> {
        self.store.load_evaluation(id, k)
    }

    /// Edit and semantic similarity between consecutive task rule books.
    pub fn rule_similarity(&self, id: &str, tasks: Option<&[u32]>) -> Result<RuleSimilarityReport> {
        let wb = self.store.load(id)?;
        let (_, bundles) = Self::task_bundles(&wb, tasks)?;
        Ok(rule_similarity_report(&bundles, &TrigramEmbedder)?)
    }

    /// Bootstrap few-shot search over the workbook's validated examples,
    /// starting from a task's prompt.
    pub async fn optimize(
        &self,
        id: &str,
        actor: Actor,
        req: &OptimizeRequest,
    ) -> Result<OptimizeResult> {
        if req.apply && self.is_annotating(id) {
            return Err(ServiceError::AnnotationInFlight);
        }
        let wb = self.store.load(id)?;
        let task = match req.task {
            Some(n) => n,
            None => wb.tasks.last().map(|t| t.task_number).ok_or_else(|| {
                ServiceError::BadRequest("no task to optimize; run annotate first".into())
            })?,
        };
        let bundle = wb.task(task)?.prompt_bundle.clone();
        let examples = collect_validated(&wb);
        let seed = req.seed.unwrap_or(self.config.default_seed);
        let config = OptimizationConfig {
            max_demos: req.max_demos,
            num_candidate_sets: req.candidates,
            dev_fraction: req.dev,
            seed,
        };
        let options = self.config.annotation_defaults();
        let provider = self.provider.as_ref();
        let outcome =
            bootstrap_fewshot(&bundle, &examples, provider, &config, &options, &self.costs).await?;
        let comparison = match self.gold_set(id, &wb.label_scale, req.gold_csv.as_deref())? {
            Some(gold) => Some(
                optimize_report(
                    &bundle,
                    &outcome.optimized,
                    &gold,
                    provider,
                    &options,
                    &self.costs,
                )
                .await?,
            ),
            None => None,
        };
        let mut params = json(req);
        params["seed"] = seed.into();
        let shots_added = if req.apply {
            let demos = outcome.demos.clone();
            self.mutate(id, actor, Op::Optimize, params, |wb| {
                let mut added = 0;
                for d in &demos {
                    added += usize::from(wb.add_shot(
                        d.text.clone(),
                        &d.human_label,
                        ShotSource::Manual,
                    )?);
                }
                Ok(added)
            })
            .await?
        } else {
            self.log(id, actor, Op::Optimize, &params)?;
            0
        };
        Ok(OptimizeResult {
            task,
            seed,
            examples: examples.len(),
            train: outcome.split.train.len(),
            dev: outcome.split.dev.len(),
            baseline_dev_acc: outcome.baseline_dev_acc,
            dev_acc: outcome.dev_acc,
            demos: outcome.demos,
            candidates_scored: outcome.scores.len(),
            shots_added,
            comparison,
            optimized_prompt: outcome.optimized,
        })
    }
}

fn sorted_rules(wb: &Workbook) -> Vec<LabelRule> {
    wb.label_scale
        .labels()
        .iter()
        .flat_map(|l| wb.rules_for(l).into_iter().cloned())
        .collect()
}
