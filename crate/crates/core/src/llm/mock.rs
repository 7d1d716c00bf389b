//! Deterministic offline provider.
//!
//! The mock reads the rendered prompt back and labels each instance with
//! three rules, first match wins:
//!
//! 1. A rule line under label `L` containing `contains("w")` forces `L` when
//!    the instance contains `w` (case-insensitive substring). Labels are
//!    tried in prompt order, which is scale order.
//! 2. A shot whose text shares an anchor word with the instance lends the
//!    instance its label. Shots are tried in prompt order.
//! 3. Otherwise the sentiment score `#positive - #negative` picks the label
//!    at ordinal `clamp(mid + score, 1, N)` where `mid = (N + 1) / 2`; on the
//!    five-point scale that is `<=-2, -1, 0, +1, >=+2` for ordinals 1..5.
//!
//! Token usage is `ceil(chars / 4)` on each side and is flagged as an
//! estimate.

use std::collections::HashSet;
use std::path::Path;
use std::sync::OnceLock;

use async_trait::async_trait;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{ChatRequest, Completion, Provider, Usage};
use crate::error::{Error, Result};
use crate::prompt::{FRAGMENT_SEPARATOR, INSTRUCTION_MARKER};

pub const MOCK_MODEL: &str = "mock-lexicon-v1";

/// The instruction the mock returns for every instruction-generation request.
pub const CANNED_INSTRUCTION: &str = "Read each data instance and assign exactly one label from the label descriptions below. Follow every rule listed for a label, use the examples as guidance, and report the label together with a brief explanation in the required output format.";

const SHIPPED_LEXICON: &str = include_str!("../../fixtures/mock_lexicon.json");

const LABELS_INTRO: &str = "Below are the descriptions of various labels. Please assign the most appropriate label to each description provided.";
const SINGLE_INTRO: &str =
    "The following is the data instance need to be annotated:\ndata-instance: ";
const MULTI_INTRO: &str =
    "The following are data instances from a group that need to be annotated:\n";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockLexicon {
    pub positive: Vec<String>,
    pub negative: Vec<String>,
    /// Words that carry a shot's label over to instances sharing them.
    #[serde(default)]
    pub anchors: Vec<String>,
}

impl MockLexicon {
    /// The lexicon shipped in `fixtures/mock_lexicon.json`.
    pub fn shipped() -> Self {
        serde_json::from_str(SHIPPED_LEXICON).expect("shipped lexicon parses")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    fn set(words: &[String]) -> HashSet<String> {
        words.iter().map(|w| w.to_lowercase()).collect()
    }

    /// `(positive hits, negative hits)` counted over word occurrences.
    pub fn hits(&self, text: &str) -> (i64, i64) {
        let pos = Self::set(&self.positive);
        let neg = Self::set(&self.negative);
        tokens(text).fold((0, 0), |(p, n), t| {
            (p + pos.contains(&t) as i64, n + neg.contains(&t) as i64)
        })
    }

    pub fn score(&self, text: &str) -> i64 {
        let (p, n) = self.hits(text);
        p - n
    }
}

pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Ordinal for a sentiment score on an `n`-label scale.
pub fn score_to_ordinal(score: i64, n: usize) -> usize {
    let n = n as i64;
    let mid = (n + 1) / 2;
    (mid + score).clamp(1, n) as usize
}

/// What the mock reads back out of an annotation prompt.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParsedPrompt {
    /// Labels in prompt order with their rule lines.
    pub labels: Vec<(String, Vec<String>)>,
    pub shots: Vec<(String, String)>,
    pub instances: Vec<String>,
    pub multi: bool,
}

fn label_header() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"^Label '(.*)': Assign this label if the tweet meets any of the following criteria:$",
        )
        .unwrap()
    })
}

fn contains_directive() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"contains\("([^"]*)"\)"#).unwrap())
}

fn shot_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^Example:```(.*)''' => Label:```(.*)'''$").unwrap())
}

fn multi_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^data-instance-(\d+): ?(.*)$").unwrap())
}

pub fn parse_annotation_prompt(prompt: &str) -> Option<ParsedPrompt> {
    let labels_at = prompt.find(LABELS_INTRO)?;
    let (head, instance_part, multi) = if let Some(i) = prompt.rfind(SINGLE_INTRO) {
        (&prompt[..i], &prompt[i + SINGLE_INTRO.len()..], false)
    } else {
        let i = prompt.rfind(MULTI_INTRO)?;
        (&prompt[..i], &prompt[i + MULTI_INTRO.len()..], true)
    };
    if labels_at > head.len() {
        return None;
    }

    let mut parsed = ParsedPrompt {
        multi,
        ..Default::default()
    };
    let body = &head[labels_at + LABELS_INTRO.len()..];
    let mut lines = body.lines().skip_while(|l| l.is_empty());
    for line in lines.by_ref() {
        if line.is_empty() {
            break;
        }
        if let Some(c) = label_header().captures(line) {
            parsed.labels.push((c[1].to_owned(), Vec::new()));
        } else if let Some((_, rules)) = parsed.labels.last_mut() {
            rules.push(line.to_owned());
        }
    }
    for line in lines {
        if let Some(c) = shot_line().captures(line) {
            parsed.shots.push((c[1].to_owned(), c[2].to_owned()));
        }
    }

    if multi {
        for line in instance_part.split('\n') {
            if let Some(c) = multi_line().captures(line) {
                parsed.instances.push(c[2].to_owned());
            } else if let Some(last) = parsed.instances.last_mut() {
                last.push('\n');
                last.push_str(line);
            }
        }
    } else {
        parsed.instances.push(instance_part.to_owned());
    }
    if parsed.labels.is_empty() || parsed.instances.is_empty() {
        return None;
    }
    Some(parsed)
}

/// The label the mock assigns and a short explanation.
pub fn mock_label(
    lexicon: &MockLexicon,
    prompt: &ParsedPrompt,
    instance: &str,
) -> (String, String) {
    let lowered = instance.to_lowercase();
    for (label, rules) in &prompt.labels {
        for rule in rules {
            for c in contains_directive().captures_iter(rule) {
                let word = c[1].to_lowercase();
                if !word.is_empty() && lowered.contains(&word) {
                    return (
                        label.clone(),
                        format!("Matched rule contains(\"{}\").", &c[1]),
                    );
                }
            }
        }
    }

    let anchors = MockLexicon::set(&lexicon.anchors);
    let instance_tokens: HashSet<String> = tokens(instance).collect();
    for (text, label) in &prompt.shots {
        if let Some(a) = tokens(text).find(|t| anchors.contains(t) && instance_tokens.contains(t)) {
            return (
                label.clone(),
                format!("Shares \"{a}\" with a labeled example."),
            );
        }
    }

    let (p, n) = lexicon.hits(instance);
    let ordinal = score_to_ordinal(p - n, prompt.labels.len());
    let label = prompt.labels[ordinal - 1].0.clone();
    (
        label,
        format!("Sentiment score {} ({p} positive, {n} negative).", p - n),
    )
}

pub fn render_single_output(label: &str, explanation: &str) -> String {
    format!("ANSWER: Label: [{label}]\nEXPLANATION: {explanation}")
}

/// Fragments tagged `data-instance-k`, joined by separator lines.
pub fn render_multi_output<'a, I>(fragments: I) -> String
where
    I: IntoIterator<Item = (usize, &'a str, &'a str)>,
{
    fragments
        .into_iter()
        .map(|(k, label, explanation)| {
            format!(
                "data-instance-{k}\n{}",
                render_single_output(label, explanation)
            )
        })
        .collect::<Vec<_>>()
        .join(&format!("\n{FRAGMENT_SEPARATOR}\n"))
}

fn estimate_tokens(chars: usize) -> u64 {
    chars.div_ceil(4) as u64
}

/// Pure function of the lexicon and the request.
pub fn mock_complete(lexicon: &MockLexicon, request: &ChatRequest) -> Result<Completion> {
    let prompt = request
        .last_user_message()
        .ok_or(Error::UnrecognizedPrompt)?;
    let text = if prompt.contains(INSTRUCTION_MARKER) {
        CANNED_INSTRUCTION.to_owned()
    } else {
        let parsed = parse_annotation_prompt(prompt).ok_or(Error::UnrecognizedPrompt)?;
        let answers: Vec<(String, String)> = parsed
            .instances
            .iter()
            .map(|i| mock_label(lexicon, &parsed, i))
            .collect();
        if parsed.multi {
            render_multi_output(
                answers
                    .iter()
                    .enumerate()
                    .map(|(k, (l, e))| (k + 1, l.as_str(), e.as_str())),
            )
        } else {
            let (l, e) = &answers[0];
            render_single_output(l, e)
        }
    };
    let prompt_chars: usize = request
        .messages
        .iter()
        .map(|m| m.content.chars().count())
        .sum();
    let usage = Usage::new(
        estimate_tokens(prompt_chars),
        estimate_tokens(text.chars().count()),
    );
    Ok(Completion {
        text,
        usage,
        usage_is_estimate: true,
    })
}

#[derive(Debug, Clone)]
pub struct MockProvider {
    lexicon: MockLexicon,
    model: String,
}

impl MockProvider {
    pub fn new(lexicon: MockLexicon) -> Self {
        MockProvider {
            lexicon,
            model: MOCK_MODEL.to_owned(),
        }
    }

    pub fn shipped() -> Self {
        Self::new(MockLexicon::shipped())
    }

    pub fn lexicon(&self) -> &MockLexicon {
        &self.lexicon
    }
}

impl Default for MockProvider {
    fn default() -> Self {
        Self::shipped()
    }
}

#[async_trait]
impl Provider for MockProvider {
    fn model(&self) -> &str {
        &self.model
    }

    async fn complete(&self, request: &ChatRequest) -> Result<Completion> {
        mock_complete(&self.lexicon, request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::{compose_annotation_prompt, Instance, InstructionalPrompt, PromptBundle};
    use crate::workbook::{LabelRule, LabelScale, Shot, ShotSource};

    fn bundle(rules: &[(&str, &str)], shots: &[(&str, &str)]) -> PromptBundle {
        PromptBundle {
            instructional: InstructionalPrompt {
                text: CANNED_INSTRUCTION.into(),
                generated_at: chrono::DateTime::from_timestamp(0, 0).unwrap(),
                source_context_digest: String::new(),
            },
            rules_snapshot: rules
                .iter()
                .enumerate()
                .map(|(i, (l, t))| LabelRule {
                    label: (*l).into(),
                    rule_text: (*t).into(),
                    position: i as i64,
                })
                .collect(),
            shots_snapshot: shots
                .iter()
                .map(|(t, l)| Shot {
                    text: (*t).into(),
                    gold_label: (*l).into(),
                    source: ShotSource::Manual,
                })
                .collect(),
            label_scale: LabelScale::sentiment5(),
        }
    }

    fn run(b: &PromptBundle, texts: &[&str]) -> String {
        let instances: Vec<_> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Instance {
                data_id: i as u32 + 1,
                group_id: "g",
                text: t,
            })
            .collect();
        let prompt = compose_annotation_prompt(b, &instances).unwrap();
        mock_complete(
            &MockLexicon::shipped(),
            &ChatRequest::user(MOCK_MODEL, prompt),
        )
        .unwrap()
        .text
    }

    #[test]
    fn thresholds_on_five_point_scale() {
        let got: Vec<_> = (-4..=4).map(|s| score_to_ordinal(s, 5)).collect();
        assert_eq!(got, [1, 1, 1, 2, 3, 4, 5, 5, 5]);
        assert_eq!(score_to_ordinal(0, 2), 1);
        assert_eq!(score_to_ordinal(1, 2), 2);
    }

    #[test]
    fn two_positive_hits_give_top_label() {
        let b = bundle(&[("Neutral", "plain statements")], &[]);
        // "great" and "wonderful" are in the shipped positive list, "day" is in neither.
        assert_eq!(
            run(&b, &["great wonderful day"]),
            "ANSWER: Label: [Extremely Positive]\nEXPLANATION: Sentiment score 2 (2 positive, 0 negative)."
        );
    }

    #[test]
    fn contains_rule_overrides_lexicon() {
        let b = bundle(&[("Negative", r#"contains("refund") => force"#)], &[]);
        let out = run(&b, &["refund please, you are great and wonderful"]);
        assert!(out.starts_with("ANSWER: Label: [Negative]"), "{out}");
    }

    #[test]
    fn first_label_in_scale_order_wins() {
        let b = bundle(
            &[
                ("Positive", r#"contains("x")"#),
                ("Extremely Negative", r#"contains("x")"#),
            ],
            &[],
        );
        assert!(run(&b, &["x"]).starts_with("ANSWER: Label: [Extremely Negative]"));
    }

    #[test]
    fn anchored_shot_lends_label() {
        let b = bundle(&[("Neutral", "n")], &[("refund bad", "Negative")]);
        assert!(run(&b, &["refund please"]).starts_with("ANSWER: Label: [Negative]"));
        // no shared anchor: falls through to the lexicon
        assert!(run(&b, &["please"]).starts_with("ANSWER: Label: [Neutral]"));
    }

    #[test]
    fn group_output_has_separators() {
        let b = bundle(&[("Neutral", "n")], &[]);
        let out = run(&b, &["good", "bad", "meh"]);
        assert_eq!(out.lines().filter(|l| *l == "======").count(), 2);
        assert_eq!(out.matches("ANSWER:").count(), 3);
        assert!(out.starts_with("data-instance-1\n"));
    }

    #[test]
    fn instruction_requests_get_canned_text() {
        let req = ChatRequest::user(MOCK_MODEL, format!("... {INSTRUCTION_MARKER} ..."));
        let c = mock_complete(&MockLexicon::shipped(), &req).unwrap();
        assert_eq!(c.text, CANNED_INSTRUCTION);
        assert!(c.usage_is_estimate);
    }

    #[test]
    fn unrecognized_prompt() {
        let req = ChatRequest::user(MOCK_MODEL, "hello");
        assert!(matches!(
            mock_complete(&MockLexicon::shipped(), &req),
            Err(Error::UnrecognizedPrompt)
        ));
    }

    #[test]
    fn usage_is_quarter_of_chars_rounded_up() {
        let b = bundle(&[("Neutral", "n")], &[]);
        let prompt = compose_annotation_prompt(
            &b,
            &[Instance {
                data_id: 1,
                group_id: "g",
                text: "hi",
            }],
        )
        .unwrap();
        let c = mock_complete(
            &MockLexicon::shipped(),
            &ChatRequest::user(MOCK_MODEL, prompt.clone()),
        )
        .unwrap();
        assert_eq!(
            c.usage.prompt_tokens,
            prompt.chars().count().div_ceil(4) as u64
        );
        assert_eq!(
            c.usage.completion_tokens,
            c.text.chars().count().div_ceil(4) as u64
        );
    }

    #[test]
    fn repeated_calls_are_identical() {
        let b = bundle(&[("Neutral", "n")], &[("refund bad", "Negative")]);
        assert_eq!(
            run(&b, &["good day", "refund"]),
            run(&b, &["good day", "refund"])
        );
    }
}
