use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered label set. A label's ordinal is its 1-based position in the list,
/// which is what MSE is computed over.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ScaleRepr", into = "ScaleRepr")]
pub struct LabelScale {
    labels: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct ScaleRepr {
    labels: Vec<String>,
    #[serde(default)]
    ordinal: BTreeMap<String, u32>,
}

impl TryFrom<ScaleRepr> for LabelScale {
    type Error = Error;

    fn try_from(repr: ScaleRepr) -> Result<Self> {
        let scale = LabelScale::new(repr.labels)?;
        for (label, ord) in &repr.ordinal {
            if scale.ordinal(label) != Some(*ord) {
                return Err(Error::InvalidWorkbook(format!(
                    "ordinal for {label:?} does not match list order"
                )));
            }
        }
        Ok(scale)
    }
}

impl From<LabelScale> for ScaleRepr {
    fn from(scale: LabelScale) -> Self {
        let ordinal = scale.ordinals().map(|(l, o)| (l.to_owned(), o)).collect();
        ScaleRepr {
            labels: scale.labels,
            ordinal,
        }
    }
}

impl LabelScale {
    pub fn new<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.len() < 2 {
            return Err(Error::ScaleTooSmall);
        }
        let mut seen = HashSet::new();
        for label in &labels {
            if label.trim().is_empty() {
                return Err(Error::UnknownLabel(label.clone()));
            }
            if !seen.insert(label.as_str()) {
                return Err(Error::DuplicateLabel(label.clone()));
            }
        }
        Ok(LabelScale { labels })
    }

    /// The five-point sentiment scheme used in the tweet study, least to most
    /// positive.
    pub fn sentiment5() -> Self {
        LabelScale::new([
            "Extremely Negative",
            "Negative",
            "Neutral",
            "Positive",
            "Extremely Positive",
        ])
        .expect("static scale is valid")
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.labels.iter().any(|l| l == label)
    }

    pub fn ordinal(&self, label: &str) -> Option<u32> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| i as u32 + 1)
    }

    pub fn label_for_ordinal(&self, ordinal: u32) -> Option<&str> {
        let idx = usize::try_from(ordinal).ok()?.checked_sub(1)?;
        self.labels.get(idx).map(String::as_str)
    }

    pub fn ordinals(&self) -> impl Iterator<Item = (&str, u32)> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i as u32 + 1))
    }

    /// Case-insensitive lookup returning the canonical spelling.
    pub fn canonical(&self, raw: &str) -> Option<&str> {
        let raw = raw.trim();
        self.labels
            .iter()
            .find(|l| l.to_lowercase() == raw.to_lowercase())
            .map(String::as_str)
    }

    pub(crate) fn require(&self, label: &str) -> Result<()> {
        if self.contains(label) {
            Ok(())
        } else {
            Err(Error::UnknownLabel(label.to_owned()))
        }
    }
}
