//! Command-line front end. Each subcommand builds the parameters of one
//! [`Service`] operation and prints its result: JSON for reads, CSV where a
//! file is requested.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::{ProviderKind, ServerConfig, ENV_TOKEN};
use crate::error::{Result, ServiceError};
use crate::ops::{
    AddShots, AnnotateRequest, ContextUpdate, CreateWorkbook, EvaluateRequest, NewShot, Op,
    OptimizeRequest, RuleInput, RuleKey, RulesUpdate, SampleRequest, Service, ValidateRequest,
};
use crate::store::Actor;
use darklabel_core::workbook::Validation;

#[derive(Debug, Parser)]
#[command(
    name = "darklabel",
    version,
    about = "Iterative LLM labeling workbench"
)]
pub struct Cli {
    /// State directory holding one subdirectory per workbook.
    #[arg(
        long,
        global = true,
        env = "DARKLABEL_STATE",
        default_value = "darklabel-state"
    )]
    pub state: PathBuf,
    /// Workbook id.
    #[arg(
        short,
        long,
        global = true,
        env = "DARKLABEL_WORKBOOK",
        default_value = "default"
    )]
    pub workbook: String,
    #[arg(long, global = true, value_enum, default_value_t = ProviderKind::Mock)]
    pub provider: ProviderKind,
    /// Cost table (TOML, or JSON by extension).
    #[arg(long, global = true)]
    pub costs: Option<PathBuf>,
    /// Word lists for the mock provider.
    #[arg(long, global = true)]
    pub lexicon: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 4)]
    pub concurrency_default: usize,
    /// First retry backoff step in milliseconds.
    #[arg(long, global = true, default_value_t = 1000)]
    pub backoff_ms: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a workbook.
    Init {
        #[arg(long)]
        name: Option<String>,
        /// Comma-separated label scale, least to most; five-point sentiment by default.
        #[arg(long, value_delimiter = ',')]
        labels: Option<Vec<String>>,
    },
    /// List workbooks.
    List,
    /// Print the whole workbook as JSON.
    Show,
    /// Delete the workbook and its history.
    Delete,
    /// Append rows from a CSV file with `group_id,text` columns.
    Import { csv: PathBuf },
    /// Assign data ids.
    Index,
    /// Answers to the context questions.
    #[command(subcommand)]
    Context(ContextCmd),
    /// Per-label rules.
    #[command(subcommand)]
    Rules(RulesCmd),
    /// Labeled examples shown in the prompt.
    #[command(subcommand)]
    Shots(ShotsCmd),
    /// Choose the rows the next annotation covers.
    #[command(subcommand)]
    Sample(SampleCmd),
    /// Annotate the working sample as a new task.
    Annotate {
        #[arg(long, value_enum, default_value_t = OnOff::On)]
        explanations: OnOff,
        #[arg(long)]
        concurrency: Option<usize>,
        #[arg(long)]
        retries: Option<u32>,
        #[arg(long)]
        temperature: Option<f32>,
    },
    /// Show the state of the last annotation run.
    Progress,
    /// List tasks (the dashboard).
    Tasks,
    /// Print one task as JSON.
    Task {
        #[arg(long)]
        task: u32,
    },
    /// Record a human judgement on one result.
    Validate {
        #[arg(long)]
        task: u32,
        #[arg(long)]
        data_id: u32,
        /// Corrected label; an empty string clears it.
        #[arg(long)]
        human: Option<String>,
        #[arg(long)]
        agree: Option<bool>,
        #[arg(long)]
        gold_shot: Option<bool>,
        #[arg(long)]
        keep: Option<bool>,
    },
    /// Turn a task's gold-flagged results into shots.
    Promote {
        #[arg(long)]
        task: u32,
    },
    /// Replay stored prompts against gold labels.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Bootstrap few-shot optimization of the latest task's prompt.
    Optimize {
        #[arg(long, default_value_t = 4)]
        max_demos: usize,
        #[arg(long, default_value_t = 8)]
        candidates: usize,
        #[arg(long, default_value_t = 0.3)]
        dev: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        task: Option<u32>,
        /// Gold CSV for a before/after comparison.
        #[arg(long)]
        gold: Option<PathBuf>,
        /// Add the chosen demos to the workbook's shots.
        #[arg(long)]
        apply: bool,
        /// Writes `metric,before,after` CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        /// Shared bearer token; requests without it are refused.
        #[arg(long, env = ENV_TOKEN, hide_env_values = true)]
        token: Option<String>,
    },
    /// Write a task's results as CSV.
    Export {
        #[arg(long)]
        task: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum ContextCmd {
    /// Answer one question (Q1..Q5).
    Set {
        question: String,
        answer: String,
    },
    Show,
}

#[derive(Debug, Subcommand)]
pub enum RulesCmd {
    /// Add or replace the rule at (label, position).
    Add {
        #[arg(long)]
        label: String,
        #[arg(long, default_value_t = 1)]
        position: i64,
        #[arg(long)]
        text: String,
    },
    Remove {
        #[arg(long)]
        label: String,
        #[arg(long)]
        position: i64,
    },
    List,
}

#[derive(Debug, Subcommand)]
pub enum ShotsCmd {
    Add {
        #[arg(long)]
        text: String,
        #[arg(long)]
        label: String,
    },
    List,
}

#[derive(Debug, Subcommand)]
pub enum SampleCmd {
    /// Draw whole groups at random.
    Random {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Take a contiguous range of groups.
    Seq {
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
    },
    /// Empty the working sample, pins included.
    Clear,
    Show,
}

#[derive(Debug, Args)]
pub struct TaskSelection {
    /// Replay every task's prompt in task order (the default).
    #[arg(long)]
    pub bundles_from_tasks: bool,
    /// Replay only these tasks, in this order.
    #[arg(long, value_delimiter = ',')]
    pub tasks: Option<Vec<u32>>,
}

#[derive(Debug, Subcommand)]
pub enum EvalCmd {
    /// Replay task prompts against a gold set; writes the ACC/MSE report.
    Session {
        /// Gold CSV (`text,gold_label`); the last uploaded one when omitted.
        #[arg(long)]
        gold: Option<PathBuf>,
        #[command(flatten)]
        selection: TaskSelection,
        /// Name the last row EndOfSession.
        #[arg(long)]
        end_of_session: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Similarity between consecutive task rule books.
    RulesSimilarity {
        #[command(flatten)]
        selection: TaskSelection,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a stored evaluation.
    Show {
        #[arg(long)]
        id: u32,
    },
}

impl Cli {
    /// The service operation this invocation performs.
    pub fn op(&self) -> Op {
        match &self.command {
            Command::Init { .. } => Op::CreateWorkbook,
            Command::List => Op::ListWorkbooks,
            Command::Show => Op::GetWorkbook,
            Command::Delete => Op::DeleteWorkbook,
            Command::Import { .. } => Op::ImportDataset,
            Command::Index => Op::IndexDataset,
            Command::Context(ContextCmd::Set { .. }) => Op::SetContext,
            Command::Context(ContextCmd::Show) => Op::GetContext,
            Command::Rules(RulesCmd::List) => Op::GetRules,
            Command::Rules(_) => Op::PutRules,
            Command::Shots(ShotsCmd::Add { .. }) => Op::AddShots,
            Command::Shots(ShotsCmd::List) => Op::GetShots,
            Command::Sample(SampleCmd::Show) => Op::GetSample,
            Command::Sample(_) => Op::Sample,
            Command::Annotate { .. } => Op::Annotate,
            Command::Progress => Op::Progress,
            Command::Tasks => Op::ListTasks,
            Command::Task { .. } => Op::GetTask,
            Command::Validate { .. } => Op::Validate,
            Command::Promote { .. } => Op::PromoteShots,
            Command::Eval(EvalCmd::Session { .. }) => Op::Evaluate,
            Command::Eval(EvalCmd::RulesSimilarity { .. }) => Op::RuleSimilarity,
            Command::Eval(EvalCmd::Show { .. }) => Op::GetEvaluation,
            Command::Optimize { .. } => Op::Optimize,
            Command::Serve { .. } => Op::Health,
            Command::Export { .. } => Op::ExportTask,
        }
    }

    pub fn config(&self) -> ServerConfig {
        let (bind, token) = match &self.command {
            Command::Serve { bind, token } => (bind.clone(), token.clone()),
            _ => (ServerConfig::default().bind, None),
        };
        ServerConfig {
            bind,
            state_dir: self.state.clone(),
            provider: self.provider,
            costs_path: self.costs.clone(),
            lexicon_path: self.lexicon.clone(),
            default_concurrency: self.concurrency_default,
            backoff_base_ms: self.backoff_ms,
            token,
            ..ServerConfig::default()
        }
    }
}

/// One argv per operation, exercising it from the command line.
pub fn example_argv(op: Op) -> Vec<&'static str> {
    let tail: &[&str] = match op {
        Op::CreateWorkbook => &["init", "--name", "Tweets"],
        Op::ListWorkbooks => &["list"],
        Op::GetWorkbook => &["show"],
        Op::DeleteWorkbook => &["delete"],
        Op::ImportDataset => &["import", "data.csv"],
        Op::IndexDataset => &["index"],
        Op::GetContext => &["context", "show"],
        Op::SetContext => &["context", "set", "Q1", "insight"],
        Op::GetRules => &["rules", "list"],
        Op::PutRules => &["rules", "add", "--label", "Negative", "--text", "angry"],
        Op::GetShots => &["shots", "list"],
        Op::AddShots => &["shots", "add", "--text", "ugh", "--label", "Negative"],
        Op::Sample => &["sample", "random", "--n", "10", "--seed", "42"],
        Op::GetSample => &["sample", "show"],
        Op::Annotate => &["annotate", "--explanations", "off", "--concurrency", "4"],
        Op::Progress => &["progress"],
        Op::ListTasks => &["tasks"],
        Op::GetTask => &["task", "--task", "1"],
        Op::ExportTask => &["export", "--task", "1", "--out", "t.csv"],
        Op::Validate => &[
            "validate",
            "--task",
            "1",
            "--data-id",
            "3",
            "--agree",
            "true",
        ],
        Op::PromoteShots => &["promote", "--task", "1"],
        Op::Evaluate => &[
            "eval",
            "session",
            "--gold",
            "gold.csv",
            "--bundles-from-tasks",
            "--out",
            "r.csv",
        ],
        Op::GetEvaluation => &["eval", "show", "--id", "1"],
        Op::RuleSimilarity => &["eval", "rules-similarity", "--out", "s.csv"],
        Op::Optimize => &[
            "optimize",
            "--max-demos",
            "4",
            "--candidates",
            "8",
            "--dev",
            "0.3",
            "--seed",
            "7",
        ],
        Op::Health => &["serve", "--bind", "127.0.0.1:0"],
    };
    std::iter::once("darklabel")
        .chain(tail.iter().copied())
        .collect()
}

/// A closed pipe (`darklabel show | head`) is not an error.
fn write_stdout(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    write_stdout(&format!("{}\n", serde_json::to_string_pretty(value)?))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| ServiceError::BadRequest(format!("cannot read {}: {e}", path.display())))
}

/// Writes to `out` when given, else prints.
fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, text)?;
            eprintln!("wrote {}", path.display());
        }
        None => write_stdout(text)?,
    }
    Ok(())
}

pub async fn run(cli: Cli) -> Result<()> {
    let service = Arc::new(Service::from_config(cli.config())?);
    let id = cli.workbook.as_str();
    let svc = &service;
    let actor = Actor::Cli;
    match cli.command {
        Command::Init { name, labels } => {
            let req = CreateWorkbook {
                id: id.to_owned(),
                name,
                labels,
            };
            print_json(&svc.create_workbook(actor, &req)?)
        }
        Command::List => print_json(&svc.list_workbooks()?),
        Command::Show => print_json(&svc.get_workbook(id)?),
        Command::Delete => {
            svc.delete_workbook(id).await?;
            eprintln!("deleted {id}");
            Ok(())
        }
        Command::Import { csv } => {
            print_json(&svc.import_dataset(id, actor, &read_text(&csv)?).await?)
        }
        Command::Index => print_json(&svc.index_dataset(id, actor).await?),
        Command::Context(ContextCmd::Set { question, answer }) => {
            let update: ContextUpdate = [(question, answer)].into_iter().collect();
            print_json(&svc.set_context(id, actor, &update).await?)
        }
        Command::Context(ContextCmd::Show) => print_json(&svc.get_context(id)?),
        Command::Rules(RulesCmd::Add {
            label,
            position,
            text,
        }) => {
            let update = RulesUpdate {
                upsert: vec![RuleInput {
                    label,
                    rule_text: text,
                    position,
                }],
                remove: Vec::new(),
            };
            print_json(&svc.put_rules(id, actor, &update).await?)
        }
        Command::Rules(RulesCmd::Remove { label, position }) => {
            let update = RulesUpdate {
                upsert: Vec::new(),
                remove: vec![RuleKey { label, position }],
            };
            print_json(&svc.put_rules(id, actor, &update).await?)
        }
        Command::Rules(RulesCmd::List) => print_json(&svc.get_rules(id)?),
        Command::Shots(ShotsCmd::Add { text, label }) => {
            let req = AddShots {
                shots: vec![NewShot {
                    text,
                    gold_label: label,
                }],
            };
            print_json(&svc.add_shots(id, actor, &req).await?)
        }
        Command::Shots(ShotsCmd::List) => print_json(&svc.get_shots(id)?),
        Command::Sample(cmd) => {
            let req = match cmd {
                SampleCmd::Random { n, seed } => SampleRequest::Random { n, seed },
                SampleCmd::Seq { from, to } => SampleRequest::Sequential { from, to },
                SampleCmd::Clear => SampleRequest::Clear,
                SampleCmd::Show => return print_json(&svc.get_sample(id)?),
            };
            print_json(&svc.sample(id, actor, &req).await?)
        }
        Command::Annotate {
            explanations,
            concurrency,
            retries,
            temperature,
        } => {
            let req = AnnotateRequest {
                show_explanations: Some(explanations == OnOff::On),
                concurrency,
                retries,
                temperature,
            };
            let handle = svc.annotate(id, actor, &req).await?;
            let task_number = handle.wait().await?;
            eprintln!("{}", svc.progress(id)?.notification);
            print_json(
                &svc.list_tasks(id)?
                    .into_iter()
                    .find(|t| t.task_number == task_number),
            )
        }
        Command::Progress => print_json(&svc.progress(id)?),
        Command::Tasks => print_json(&svc.list_tasks(id)?),
        Command::Task { task } => print_json(&svc.get_task(id, task)?),
        Command::Validate {
            task,
            data_id,
            human,
            agree,
            gold_shot,
            keep,
        } => {
            let req = ValidateRequest {
                data_id,
                update: Validation {
                    human_label: human,
                    agree,
                    gold_shot,
                    keep,
                },
            };
            print_json(&svc.validate(id, actor, task, &req).await?)
        }
        Command::Promote { task } => print_json(&svc.promote_shots(id, actor, task).await?),
        Command::Eval(EvalCmd::Session {
            gold,
            selection,
            end_of_session,
            out,
        }) => {
            let req = EvaluateRequest {
                gold_csv: gold.as_deref().map(read_text).transpose()?,
                tasks: selection.tasks,
                end_of_session,
            };
            let record = svc.evaluate(id, actor, &req).await?;
            eprintln!("stored evaluation {}", record.id);
            emit(&record.report_csv, out.as_deref())
        }
        Command::Eval(EvalCmd::RulesSimilarity { selection, out }) => {
            let report = svc.rule_similarity(id, selection.tasks.as_deref())?;
            emit(&report.to_csv(), out.as_deref())
        }
        Command::Eval(EvalCmd::Show { id: k }) => print_json(&svc.get_evaluation(id, k)?),
        Command::Optimize {
            max_demos,
            candidates,
            dev,
            seed,
            task,
            gold,
            apply,
            out,
        } => {
            let req = OptimizeRequest {
                max_demos,
                candidates,
                dev,
                seed,
                apply,
                task,
                gold_csv: gold.as_deref().map(read_text).transpose()?,
            };
            let result = svc.optimize(id, actor, &req).await?;
            if let Some(path) = out.as_deref() {
                emit(&result.to_csv(), Some(path))?;
            }
            print_json(&serde_json::json!({
                "task": result.task,
                "seed": result.seed,
                "examples": result.examples,
                "train": result.train,
                "dev": result.dev,
                "baseline_dev_acc": result.baseline_dev_acc,
                "dev_acc": result.dev_acc,
                "demos": result.demos,
                "candidates_scored": result.candidates_scored,
                "shots_added": result.shots_added,
                "comparison": result.comparison,
            }))
        }
        Command::Serve { bind, .. } => crate::http::serve(service.clone(), &bind).await,
        Command::Export { task, out } => emit(&svc.export_task(id, task)?, out.as_deref()),
    }
}
