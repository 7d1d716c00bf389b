use std::collections::HashSet;
use std::fmt;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::metrics::{accuracy, mse};
use crate::engine::{label_each, AnnotationOptions};
use crate::error::{Error, Result};
use crate::llm::{CostTable, Provider};
use crate::prompt::PromptBundle;
use crate::workbook::LabelScale;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldItem {
    pub text: String,
    pub gold_label: String,
}

/// Human-labeled items a session's prompts are replayed against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldSet {
    items: Vec<GoldItem>,
    label_scale: LabelScale,
}

impl GoldSet {
    pub fn new(items: Vec<GoldItem>, label_scale: LabelScale) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Empty);
        }
        let mut seen = HashSet::new();
        for item in &items {
            label_scale.require(&item.gold_label)?;
            if !seen.insert(item.text.as_str()) {
                return Err(Error::InvalidRequest(format!(
                    "duplicate gold text {:?}",
                    item.text
                )));
            }
        }
        Ok(GoldSet { items, label_scale })
    }

    pub fn items(&self) -> &[GoldItem] {
        &self.items
    }

    pub fn label_scale(&self) -> &LabelScale {
        &self.label_scale
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IterationName {
    Initial,
    Revision(u32),
    EndOfSession,
}

impl fmt::Display for IterationName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IterationName::Initial => f.write_str("Initial"),
            IterationName::Revision(k) => write!(f, "Revision {k}"),
            IterationName::EndOfSession => f.write_str("EndOfSession"),
        }
    }
}

/// `Initial`, then `Revision 1..`; the last one is named `EndOfSession`
/// when `end_of_session` is set and there is more than one bundle.
pub fn iteration_names(n: usize, end_of_session: bool) -> Vec<IterationName> {
    (0..n)
        .map(|i| match i {
            0 => IterationName::Initial,
            i if end_of_session && i + 1 == n => IterationName::EndOfSession,
            i => IterationName::Revision(i as u32),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRow<T> {
    pub iteration: IterationName,
    pub acc: Option<T>,
    pub mse: Option<T>,
    pub excluded: usize,
    pub parse_failure_rate: T,
    pub improved_acc_over_initial: bool,
    pub improved_mse_over_initial: bool,
    /// Per gold item, in gold order.
    pub predictions: Vec<Option<String>>,
    /// Set when the provider failed for this bundle.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport<T> {
    pub rows: Vec<SessionRow<T>>,
}

fn fmt_opt<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_default()
}

impl<T: Float + fmt::Display> SessionReport<T> {
    /// `iteration,acc,mse,excluded,improved_acc,improved_mse`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,acc,mse,excluded,improved_acc,improved_mse\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.iteration,
                fmt_opt(&r.acc),
                fmt_opt(&r.mse),
                r.excluded,
                r.improved_acc_over_initial,
                r.improved_mse_over_initial
            ));
        }
        out
    }
}

/// Scores a vector of predictions against the gold set.
pub fn score_predictions<T: Float>(
    predictions: &[Option<String>],
    gold: &GoldSet,
) -> Result<(T, Option<T>, usize)> {
    let gold_labels: Vec<&str> = gold.items.iter().map(|i| i.gold_label.as_str()).collect();
    let pred: Vec<Option<&str>> = predictions.iter().map(Option::as_deref).collect();
    let acc = accuracy::<T, _>(&pred, &gold_labels)?;
    let scale = &gold.label_scale;
    let pred_ord: Vec<Option<u32>> = pred
        .iter()
        .map(|p| p.and_then(|l| scale.ordinal(l)))
        .collect();
    let gold_ord: Vec<u32> = gold_labels
        .iter()
        .map(|l| scale.ordinal(l).expect("gold labels validated"))
        .collect();
    match mse::<T>(&pred_ord, &gold_ord) {
        Ok(m) => Ok((acc, Some(m.mse), m.excluded)),
        Err(Error::AllExcluded) => Ok((acc, None, gold.len())),
        Err(e) => Err(e),
    }
}

/// Marks rows that beat the first row: higher accuracy, lower MSE.
pub fn apply_improvement_flags<T: Float>(rows: &mut [SessionRow<T>]) {
    let Some(first) = rows.first() else { return };
    let (base_acc, base_mse) = (first.acc, first.mse);
    for (i, row) in rows.iter_mut().enumerate() {
        if i == 0 {
            row.improved_acc_over_initial = false;
            row.improved_mse_over_initial = false;
            continue;
        }
        row.improved_acc_over_initial = matches!((row.acc, base_acc), (Some(a), Some(b)) if a > b);
        row.improved_mse_over_initial = matches!((row.mse, base_mse), (Some(a), Some(b)) if a < b);
    }
}

/// Replays every bundle against the gold set, one item per request. A
/// provider failure yields a failed row instead of aborting the session.
pub async fn evaluate_session<T: Float>(
    bundles: &[(IterationName, PromptBundle)],
    gold: &GoldSet,
    provider: &dyn Provider,
    options: &AnnotationOptions,
    costs: &CostTable,
) -> Result<SessionReport<T>> {
    if bundles.is_empty() {
        return Err(Error::Empty);
    }
    let texts: Vec<&str> = gold.items.iter().map(|i| i.text.as_str()).collect();
    let mut rows = Vec::with_capacity(bundles.len());
    for (name, bundle) in bundles {
        let row = match label_each(provider, bundle, &texts, options, costs).await {
            Ok(outcomes) => {
                let predictions: Vec<Option<String>> = outcomes
                    .into_iter()
                    .map(|o| o.ok().map(|a| a.label))
                    .collect();
                let failures = predictions.iter().filter(|p| p.is_none()).count();
                let (acc, mse, excluded) = score_predictions::<T>(&predictions, gold)?;
                SessionRow {
                    iteration: *name,
                    acc: Some(acc),
                    mse,
                    excluded,
                    parse_failure_rate: T::from(failures).unwrap() / T::from(gold.len()).unwrap(),
                    improved_acc_over_initial: false,
                    improved_mse_over_initial: false,
                    predictions,
                    error: None,
                }
            }
            Err(e) => SessionRow {
                iteration: *name,
                acc: None,
                mse: None,
                excluded: gold.len(),
                parse_failure_rate: T::one(),
                improved_acc_over_initial: false,
                improved_mse_over_initial: false,
                predictions: vec![None; gold.len()],
                error: Some(e.to_string()),
            },
        };
        rows.push(row);
    }
    apply_improvement_flags(&mut rows);
    Ok(SessionReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(acc: Option<f64>, mse: Option<f64>) -> SessionRow<f64> {
        SessionRow {
            iteration: IterationName::Initial,
            acc,
            mse,
            excluded: 0,
            parse_failure_rate: 0.0,
            improved_acc_over_initial: false,
            improved_mse_over_initial: false,
            predictions: Vec::new(),
            error: None,
        }
    }

    #[test]
    fn names() {
        let n: Vec<String> = iteration_names(5, false)
            .iter()
            .map(ToString::to_string)
            .collect();
        assert_eq!(
            n,
            [
                "Initial",
                "Revision 1",
                "Revision 2",
                "Revision 3",
                "Revision 4"
            ]
        );
        assert_eq!(iteration_names(2, true)[1], IterationName::EndOfSession);
        assert_eq!(iteration_names(1, true)[0], IterationName::Initial);
    }

    #[test]
    fn flags_compare_against_first_row() {
        let mut rows = vec![
            row(Some(0.5), Some(1.0)),
            row(Some(0.6), Some(1.2)),
            row(Some(0.5), Some(0.8)),
            row(None, None),
        ];
        apply_improvement_flags(&mut rows);
        let flags: Vec<_> = rows
            .iter()
            .map(|r| (r.improved_acc_over_initial, r.improved_mse_over_initial))
            .collect();
        assert_eq!(
            flags,
            [(false, false), (true, false), (false, true), (false, false)]
        );
    }

    #[test]
    fn gold_set_validation() {
        let scale = LabelScale::new(["N", "P"]).unwrap();
        let item = |t: &str, l: &str| GoldItem {
            text: t.into(),
            gold_label: l.into(),
        };
        assert!(GoldSet::new(vec![item("a", "X")], scale.clone()).is_err());
        assert!(GoldSet::new(vec![item("a", "N"), item("a", "P")], scale.clone()).is_err());
        assert!(GoldSet::new(vec![item("a", "N")], scale).is_ok());
    }

    #[test]
    fn scoring_counts_exclusions() {
        let scale = LabelScale::new(["N", "M", "P"]).unwrap();
        let gold = GoldSet::new(
            vec![
                GoldItem {
                    text: "a".into(),
                    gold_label: "N".into(),
                },
                GoldItem {
                    text: "b".into(),
                    gold_label: "P".into(),
                },
            ],
            scale,
        )
        .unwrap();
        let (acc, mse, excluded) =
            score_predictions::<f64>(&[None, Some("N".into())], &gold).unwrap();
        assert_eq!(acc, 0.0);
        assert_eq!(mse, Some(4.0));
        assert_eq!(excluded, 1);
        let (_, mse, excluded) = score_predictions::<f64>(&[None, None], &gold).unwrap();
        assert_eq!((mse, excluded), (None, 2));
    }
}
