#![allow(dead_code)]

use std::time::Duration;

use chrono::{DateTime, Utc};
use darklabel_core::prompt::{InstructionalPrompt, PromptBundle};
use darklabel_core::workbook::{LabelRule, LabelScale, Shot, ShotSource};
use darklabel_core::AnnotationOptions;

pub fn epoch() -> DateTime<Utc> {
    DateTime::<Utc>::from_timestamp(1_700_000_000, 0).unwrap()
}

pub fn instructional(text: &str) -> InstructionalPrompt {
    InstructionalPrompt {
        text: text.to_owned(),
        generated_at: epoch(),
        source_context_digest: "fixture".to_owned(),
    }
}

pub fn rule(label: &str, text: &str, position: i64) -> LabelRule {
    LabelRule {
        label: label.to_owned(),
        rule_text: text.to_owned(),
        position,
    }
}

pub fn shot(text: &str, label: &str) -> Shot {
    Shot {
        text: text.to_owned(),
        gold_label: label.to_owned(),
        source: ShotSource::Manual,
    }
}

pub fn bundle(rules: Vec<LabelRule>, shots: Vec<Shot>) -> PromptBundle {
    PromptBundle {
        instructional: instructional("Label the sentiment of each tweet."),
        rules_snapshot: rules,
        shots_snapshot: shots,
        label_scale: LabelScale::sentiment5(),
    }
}

/// One plain rule per label, none of them a `contains` directive.
pub fn plain_rules() -> Vec<LabelRule> {
    LabelScale::sentiment5()
        .labels()
        .iter()
        .map(|l| rule(l, &format!("The tweet reads as {}.", l.to_lowercase()), 1))
        .collect()
}

pub fn fast_options() -> AnnotationOptions {
    AnnotationOptions {
        backoff_base: Duration::from_millis(1),
        ..AnnotationOptions::default()
    }
}
