//! Core of darklabel, an iterative LLM labeling workbench.
//!
//! A [`Workbook`] holds the dataset, task context, rule book, shots, working
//! sample and every annotation task. Prompts are rendered by [`prompt`], sent
//! through a [`Provider`] by [`engine`], and measured by [`evaluation`].
//! [`MockProvider`] makes the whole loop run offline and deterministically.
//!
//! Metric code is generic over the float type; the aliases below fix it to
//! `f64` (and `f32` where that is useful).

pub mod engine;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod llm;
pub mod optimizer;
pub mod prompt;
pub mod sampling;
pub mod workbook;

pub use engine::{
    parse_multi_response, parse_single_response, start_annotation, AnnotationOptions, ParseError,
    ParsedAnswer, ProgressState, ProgressTracker,
};
pub use error::{Error, Result};
pub use evaluation::{GoldItem, GoldSet, IterationName, TrigramEmbedder};
pub use llm::{
    compute_cost, ChatRequest, Completion, CostTable, MockLexicon, MockProvider,
    OpenAiCompatProvider, Provider, Usage,
};
pub use optimizer::{
    bootstrap_fewshot, collect_validated, optimize_report, OptimizationConfig, OptimizationOutcome,
    ValidatedExample,
};
pub use prompt::{InstructionalPrompt, PromptBundle};
pub use sampling::{clear_sample, random_sample, sequential_sample, GroupRange};
pub use workbook::{
    load_workbook, save_workbook, AnnotationResult, LabelRule, LabelScale, QuestionId, Shot,
    ShotSource, TaskRecord, Workbook,
};

pub type SessionEvaluation = evaluation::SessionReport<f64>;
pub type SessionEvaluationF32 = evaluation::SessionReport<f32>;
pub type SessionEvaluationRow = evaluation::SessionRow<f64>;
pub type RuleSimilarityReport = evaluation::RuleSimilarity<f64>;
pub type RuleSimilarityReportF32 = evaluation::RuleSimilarity<f32>;
