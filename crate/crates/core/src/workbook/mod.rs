//! The workbook: dataset, task context, rule book, shots, working sample and
//! task records, plus the operations that mutate them.

mod persist;
mod scale;

use std::collections::HashSet;
use std::fmt;

use chrono::{DateTime, Utc};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::llm::Usage;
use crate::prompt::{bundle_digest, PromptBundle};

pub use persist::{load_workbook, save_workbook, SCHEMA_VERSION};
pub use scale::LabelScale;

/// The fixed answer for the task-type question.
pub const TASK_TYPE_ANSWER: &str = "single-class";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QuestionId {
    Q1,
    Q2,
    Q3,
    Q4,
    Q5,
    #[serde(rename = "Q6_TASK_TYPE")]
    Q6TaskType,
}

impl QuestionId {
    pub const ALL: [QuestionId; 6] = [
        QuestionId::Q1,
        QuestionId::Q2,
        QuestionId::Q3,
        QuestionId::Q4,
        QuestionId::Q5,
        QuestionId::Q6TaskType,
    ];

    pub const USER_ANSWERED: [QuestionId; 5] = [
        QuestionId::Q1,
        QuestionId::Q2,
        QuestionId::Q3,
        QuestionId::Q4,
        QuestionId::Q5,
    ];

    pub fn question_text(self) -> &'static str {
        match self {
            QuestionId::Q1 => "What is the purpose of annotating this data? Common answers include gaining insight about something, wanting to compare something, wanting to create prompts, etc. Try to give us more details about your higher-level goal.",
            QuestionId::Q2 => "How do you want to use the annotated data? Common answers include further analysis, training an AI model, presenting it to people, or using it in some downstream tasks inside some computer system. Try to give us more details about the use cases of the annotated data.",
            QuestionId::Q3 => "What are these data? Please tell us more about the source and the characteristics of the data. For example, \"These are real-world product reviews written by Amazon users. We obtained this dataset by downloading it from Kaggle.\" or \"This is the transcript of interviews of our participants. Each interview is about 30 minutes long. The interview is about their experience in creative writing.\" or \"These are tweets posted on Twitter between Jan 2024 to March 2024.\"",
            QuestionId::Q4 => "What is the size of each data instance (each row)? For example, \"Each instance is a tweet.\", \"Each instance is one Amazon product review.\", or \"Each instance is one sentence from the interview transcript.\"",
            QuestionId::Q5 => "Is there anything particular you want us to mention in the prompt? We will add all the context you mentioned in this tab to the prompt for LLMs. Please mention anything you want the LLMs to be aware of.",
            QuestionId::Q6TaskType => "Is it a single-class or multi-class labeling task? [required]",
        }
    }
}

impl fmt::Display for QuestionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QuestionId::Q6TaskType => f.write_str("Q6_TASK_TYPE"),
            other => write!(f, "{other:?}"),
        }
    }
}

impl std::str::FromStr for QuestionId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "Q1" => Ok(QuestionId::Q1),
            "Q2" => Ok(QuestionId::Q2),
            "Q3" => Ok(QuestionId::Q3),
            "Q4" => Ok(QuestionId::Q4),
            "Q5" => Ok(QuestionId::Q5),
            "Q6" | "Q6_TASK_TYPE" => Ok(QuestionId::Q6TaskType),
            other => Err(Error::InvalidRequest(format!("unknown question {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub data_id: Option<u32>,
    pub group_id: String,
    pub text: String,
    #[serde(default)]
    pub extras: IndexMap<String, String>,
}

/// One record handed to [`Workbook::import_dataset`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NewRow {
    pub group_id: String,
    pub text: String,
    #[serde(default)]
    pub extras: IndexMap<String, String>,
}

impl NewRow {
    pub fn new(group_id: impl Into<String>, text: impl Into<String>) -> Self {
        NewRow {
            group_id: group_id.into(),
            text: text.into(),
            extras: IndexMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextAnswer {
    pub question_id: QuestionId,
    pub question_text: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRule {
    pub label: String,
    pub rule_text: String,
    pub position: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ShotSource {
    Manual,
    Promoted { task_number: u32, data_id: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shot {
    pub text: String,
    pub gold_label: String,
    pub source: ShotSource,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub data_id: u32,
    pub group_id: String,
    pub text: String,
    pub keep_pin: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationResult {
    pub data_id: u32,
    pub group_id: String,
    pub text: String,
    pub llm_label: Option<String>,
    pub llm_explanation: Option<String>,
    pub parse_error: Option<String>,
    pub human_label: Option<String>,
    pub agree: bool,
    pub gold_shot_flag: bool,
    pub keep_flag: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_number: u32,
    pub created_at: DateTime<Utc>,
    pub prompt_bundle: PromptBundle,
    pub show_explanations: bool,
    pub model: String,
    pub temperature: f32,
    pub results: Vec<AnnotationResult>,
    pub total_cost: f64,
    pub total_usage: Usage,
    /// Set when the provider only estimates token counts (the mock does).
    #[serde(default)]
    pub usage_is_estimate: bool,
}

impl TaskRecord {
    /// Results as shown to the user: explanations are stored either way and
    /// only hidden here.
    pub fn visible_results(&self) -> Vec<AnnotationResult> {
        self.results
            .iter()
            .cloned()
            .map(|mut r| {
                if !self.show_explanations {
                    r.llm_explanation = None;
                }
                r
            })
            .collect()
    }

    pub fn result(&self, data_id: u32) -> Option<&AnnotationResult> {
        self.results.iter().find(|r| r.data_id == data_id)
    }
}

/// Partial update applied by [`Workbook::record_validation`]. `None` leaves a
/// field untouched; an empty `human_label` clears it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    #[serde(default)]
    pub human_label: Option<String>,
    #[serde(default)]
    pub agree: Option<bool>,
    #[serde(default)]
    pub gold_shot: Option<bool>,
    #[serde(default)]
    pub keep: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromotionReport {
    pub promoted: usize,
    pub skipped_duplicates: usize,
    /// Data ids flagged as gold shots that carried neither a human nor an
    /// LLM label.
    pub skipped_unlabeled: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DashboardRow {
    pub task_number: u32,
    pub task_tab: String,
    pub created_at: DateTime<Utc>,
    pub prompt_digest: String,
    pub total_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workbook {
    pub name: String,
    pub label_scale: LabelScale,
    pub dataset: Vec<DatasetRow>,
    pub context: Vec<ContextAnswer>,
    pub rulebook: Vec<LabelRule>,
    pub shots: Vec<Shot>,
    pub working_sample: Vec<SampleEntry>,
    pub tasks: Vec<TaskRecord>,
}

impl Workbook {
    pub fn new(name: impl Into<String>, label_scale: LabelScale) -> Self {
        let context = QuestionId::ALL
            .iter()
            .map(|&q| ContextAnswer {
                question_id: q,
                question_text: q.question_text().to_owned(),
                answer: if q == QuestionId::Q6TaskType {
                    TASK_TYPE_ANSWER.to_owned()
                } else {
                    String::new()
                },
            })
            .collect();
        Workbook {
            name: name.into(),
            label_scale,
            dataset: Vec::new(),
            context,
            rulebook: Vec::new(),
            shots: Vec::new(),
            working_sample: Vec::new(),
            tasks: Vec::new(),
        }
    }

    pub fn next_task_number(&self) -> u32 {
        self.tasks.len() as u32 + 1
    }

    /// Appends rows unindexed. One empty text rejects the whole batch.
    pub fn import_dataset<I>(&mut self, records: I) -> Result<usize>
    where
        I: IntoIterator<Item = NewRow>,
    {
        let rows: Vec<NewRow> = records.into_iter().collect();
        if let Some(pos) = rows.iter().position(|r| r.text.trim().is_empty()) {
            return Err(Error::RowRejected(pos + 1));
        }
        let n = rows.len();
        self.dataset.extend(rows.into_iter().map(|r| DatasetRow {
            data_id: None,
            group_id: r.group_id,
            text: r.text,
            extras: r.extras,
        }));
        Ok(n)
    }

    /// Numbers every row by its 1-based position. Rows inserted earlier in
    /// the dataset shift later ids.
    pub fn index_data_ids(&mut self) -> Result<usize> {
        if self.dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for (i, row) in self.dataset.iter_mut().enumerate() {
            row.data_id = Some(i as u32 + 1);
        }
        Ok(self.dataset.len())
    }

    pub fn is_indexed(&self) -> bool {
        !self.dataset.is_empty() && self.dataset.iter().all(|r| r.data_id.is_some())
    }

    pub fn row(&self, data_id: u32) -> Option<&DatasetRow> {
        self.dataset.iter().find(|r| r.data_id == Some(data_id))
    }

    /// Distinct group ids in first-appearance order.
    pub fn groups(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.dataset
            .iter()
            .map(|r| r.group_id.as_str())
            .filter(|g| seen.insert(*g))
            .collect()
    }

    pub fn context_answer(&self, q: QuestionId) -> &str {
        self.context
            .iter()
            .find(|c| c.question_id == q)
            .map(|c| c.answer.as_str())
            .unwrap_or("")
    }

    pub fn set_context_answer(&mut self, q: QuestionId, answer: impl Into<String>) -> Result<()> {
        if q == QuestionId::Q6TaskType {
            return Err(Error::ReadOnlyQuestion(q));
        }
        let answer = answer.into();
        match self.context.iter_mut().find(|c| c.question_id == q) {
            Some(c) => c.answer = answer,
            None => self.context.push(ContextAnswer {
                question_id: q,
                question_text: q.question_text().to_owned(),
                answer,
            }),
        }
        Ok(())
    }

    pub fn upsert_rule(
        &mut self,
        label: &str,
        rule_text: impl Into<String>,
        position: i64,
    ) -> Result<()> {
        self.label_scale.require(label)?;
        let rule_text = rule_text.into();
        if rule_text.trim().is_empty() {
            return Err(Error::EmptyRule);
        }
        match self
            .rulebook
            .iter_mut()
            .find(|r| r.label == label && r.position == position)
        {
            Some(r) => r.rule_text = rule_text,
            None => self.rulebook.push(LabelRule {
                label: label.to_owned(),
                rule_text,
                position,
            }),
        }
        Ok(())
    }

    pub fn remove_rule(&mut self, label: &str, position: i64) -> Result<()> {
        self.label_scale.require(label)?;
        let before = self.rulebook.len();
        self.rulebook
            .retain(|r| !(r.label == label && r.position == position));
        if self.rulebook.len() == before {
            return Err(Error::RemoveMissing {
                label: label.to_owned(),
                position,
            });
        }
        Ok(())
    }

    /// Rules for one label in position order.
    pub fn rules_for(&self, label: &str) -> Vec<&LabelRule> {
        let mut rules: Vec<_> = self.rulebook.iter().filter(|r| r.label == label).collect();
        rules.sort_by_key(|r| r.position);
        rules
    }

    /// Returns whether the shot was appended; a duplicate `(text, label)` is
    /// a no-op.
    pub fn add_shot(
        &mut self,
        text: impl Into<String>,
        gold_label: &str,
        source: ShotSource,
    ) -> Result<bool> {
        self.label_scale.require(gold_label)?;
        let text = text.into();
        if self.has_shot(&text, gold_label) {
            return Ok(false);
        }
        self.shots.push(Shot {
            text,
            gold_label: gold_label.to_owned(),
            source,
        });
        Ok(true)
    }

    fn has_shot(&self, text: &str, label: &str) -> bool {
        self.shots
            .iter()
            .any(|s| s.text == text && s.gold_label == label)
    }

    pub fn task(&self, task_number: u32) -> Result<&TaskRecord> {
        self.tasks
            .iter()
            .find(|t| t.task_number == task_number)
            .ok_or(Error::UnknownTask(task_number))
    }

    fn task_mut(&mut self, task_number: u32) -> Result<&mut TaskRecord> {
        self.tasks
            .iter_mut()
            .find(|t| t.task_number == task_number)
            .ok_or(Error::UnknownTask(task_number))
    }

    pub fn record_validation(
        &mut self,
        task_number: u32,
        data_id: u32,
        update: &Validation,
    ) -> Result<()> {
        let human_label = match update.human_label.as_deref() {
            Some("") => Some(None),
            Some(l) => {
                self.label_scale.require(l)?;
                Some(Some(l.to_owned()))
            }
            None => None,
        };
        let task = self.task_mut(task_number)?;
        let result = task
            .results
            .iter_mut()
            .find(|r| r.data_id == data_id)
            .ok_or(Error::UnknownDataId(data_id))?;
        if let Some(h) = human_label {
            result.human_label = h;
        }
        if let Some(a) = update.agree {
            result.agree = a;
        }
        if let Some(g) = update.gold_shot {
            result.gold_shot_flag = g;
        }
        if let Some(k) = update.keep {
            result.keep_flag = k;
            self.set_pin(data_id, k)?;
        }
        Ok(())
    }

    /// Pins or unpins a working-sample entry. Pinning an instance that is not
    /// in the working sample adds it.
    pub fn set_pin(&mut self, data_id: u32, pinned: bool) -> Result<()> {
        if let Some(entry) = self
            .working_sample
            .iter_mut()
            .find(|e| e.data_id == data_id)
        {
            entry.keep_pin = pinned;
            return Ok(());
        }
        if !pinned {
            return Ok(());
        }
        let row = self.row(data_id).ok_or(Error::UnknownDataId(data_id))?;
        let entry = SampleEntry {
            data_id,
            group_id: row.group_id.clone(),
            text: row.text.clone(),
            keep_pin: true,
        };
        self.working_sample.push(entry);
        Ok(())
    }

    /// Appends a shot for every gold-flagged result of the task. The human
    /// label wins over the LLM label.
    pub fn promote_gold_shots(&mut self, task_number: u32) -> Result<PromotionReport> {
        let candidates: Vec<(String, Option<String>, u32)> = self
            .task(task_number)?
            .results
            .iter()
            .filter(|r| r.gold_shot_flag)
            .map(|r| {
                let label = r.human_label.clone().or_else(|| r.llm_label.clone());
                (r.text.clone(), label, r.data_id)
            })
            .collect();
        let mut report = PromotionReport::default();
        for (text, label, data_id) in candidates {
            let Some(label) = label else {
                report.skipped_unlabeled.push(data_id);
                continue;
            };
            let source = ShotSource::Promoted {
                task_number,
                data_id,
            };
            if self.add_shot(text, &label, source)? {
                report.promoted += 1;
            } else {
                report.skipped_duplicates += 1;
            }
        }
        Ok(report)
    }

    pub fn dashboard(&self) -> Vec<DashboardRow> {
        self.tasks
            .iter()
            .map(|t| DashboardRow {
                task_number: t.task_number,
                task_tab: format!("Task {}", t.task_number),
                created_at: t.created_at,
                prompt_digest: bundle_digest(&t.prompt_bundle),
                total_cost: t.total_cost,
            })
            .collect()
    }

    /// Appends a finished task. Task numbers must continue the sequence.
    pub fn append_task(&mut self, task: TaskRecord) -> Result<u32> {
        if task.task_number != self.next_task_number() {
            return Err(Error::InvalidWorkbook(format!(
                "task number {} does not follow {}",
                task.task_number,
                self.tasks.len()
            )));
        }
        let n = task.task_number;
        self.tasks.push(task);
        Ok(n)
    }

    /// Checks the cross-field invariants. Run after loading from disk.
    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(Error::InvalidWorkbook(m));
        let mut ids = HashSet::new();
        for (i, row) in self.dataset.iter().enumerate() {
            if row.text.trim().is_empty() {
                return invalid(format!("dataset row {} has empty text", i + 1));
            }
            if let Some(id) = row.data_id {
                if !ids.insert(id) {
                    return invalid(format!("duplicate data id {id}"));
                }
            }
        }
        let mut rule_keys = HashSet::new();
        for rule in &self.rulebook {
            self.label_scale.require(&rule.label)?;
            if rule.rule_text.trim().is_empty() {
                return invalid(format!("empty rule for {:?}", rule.label));
            }
            if !rule_keys.insert((rule.label.as_str(), rule.position)) {
                return invalid(format!(
                    "duplicate rule position {} for {:?}",
                    rule.position, rule.label
                ));
            }
        }
        let mut shot_keys = HashSet::new();
        for shot in &self.shots {
            self.label_scale.require(&shot.gold_label)?;
            if !shot_keys.insert((shot.text.as_str(), shot.gold_label.as_str())) {
                return invalid(format!("duplicate shot {:?}", shot.text));
            }
        }
        for entry in &self.working_sample {
            if self.row(entry.data_id).is_none() {
                return invalid(format!("sample entry {} has no dataset row", entry.data_id));
            }
        }
        for (i, task) in self.tasks.iter().enumerate() {
            if task.task_number != i as u32 + 1 {
                return invalid(format!(
                    "task numbers not contiguous at {}",
                    task.task_number
                ));
            }
            for r in &task.results {
                if r.llm_label.is_some() == r.parse_error.is_some() {
                    return invalid(format!(
                        "task {} result {} must carry exactly one of label/parse error",
                        task.task_number, r.data_id
                    ));
                }
            }
        }
        if let Some(c) = self
            .context
            .iter()
            .find(|c| c.question_text != c.question_id.question_text())
        {
            return invalid(format!("question text for {} was altered", c.question_id));
        }
        Ok(())
    }
}
