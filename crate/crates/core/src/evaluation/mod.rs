//! Measurement: ACC/MSE replay against a gold set, agreement statistics and
//! rule-book similarity between iterations.

pub mod metrics;
pub mod session;
pub mod similarity;

pub use metrics::{accuracy, average_ranks, cohen_kappa, kendall_tau_b, mse, spearman, MseOutcome};
pub use session::{
    apply_improvement_flags, evaluate_session, iteration_names, score_predictions, GoldItem,
    GoldSet, IterationName, SessionReport, SessionRow,
};
pub use similarity::{
    concat_rules, cosine, levenshtein, normalized_edit_similarity, rule_similarity_report,
    semantic_similarity, Embedder, RuleSimilarity, SimilarityPair, TrigramEmbedder,
};
