//! Reading labels back out of model output.
//!
//! Tolerated drift: keywords in any case, optional colon after `ANSWER`,
//! optional `Label:` inside the answer section, optional brackets around the
//! label, surrounding whitespace. Anything else is an error.

use std::collections::HashSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::workbook::LabelScale;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum ParseError {
    #[error("no ANSWER section")]
    NoAnswerSection,
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("no fragment for data-instance-{0}")]
    MissingFragment(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedAnswer {
    pub label: String,
    pub explanation: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiParse {
    /// One entry per expected index, in the order given.
    pub results: Vec<(usize, Result<ParsedAnswer, ParseError>)>,
    /// Fragments that matched no expected index; dropped.
    pub discarded: usize,
}

impl MultiParse {
    pub fn all_ok(&self) -> bool {
        self.results.iter().all(|(_, r)| r.is_ok())
    }
}

fn re(cell: &'static OnceLock<Regex>, pattern: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pattern).expect("static regex"))
}

fn answer_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    re(&RE, r"(?i)\banswer\b[ \t]*:?")
}

fn label_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    re(&RE, r"(?i)\blabel[ \t]*:")
}

fn explanation_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    re(&RE, r"(?i)\bexplanation\b[ \t]*:?")
}

fn separator_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    re(&RE, r"^[ \t]*={3,}[ \t]*$")
}

fn tag_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    re(&RE, r"(?i)data-instance-(\d+)")
}

pub fn parse_single_response(text: &str, scale: &LabelScale) -> Result<ParsedAnswer, ParseError> {
    let section_start = match answer_re().find(text) {
        Some(m) => m.end(),
        None => label_re()
            .find(text)
            .map(|m| m.start())
            .ok_or(ParseError::NoAnswerSection)?,
    };
    let explanation = explanation_re().find_at(text, section_start);
    let section_end = explanation.map_or(text.len(), |m| m.start());
    let section = &text[section_start..section_end];
    let after_label = match label_re().find(section) {
        Some(m) => &section[m.end()..],
        None => section,
    };
    let label = extract_label(after_label, scale)?;
    let explanation = explanation
        .map(|m| text[m.end()..].trim().to_owned())
        .unwrap_or_default();
    Ok(ParsedAnswer { label, explanation })
}

fn extract_label(raw: &str, scale: &LabelScale) -> Result<String, ParseError> {
    let raw = raw.trim_start();
    if let Some(rest) = raw.strip_prefix('[') {
        let token = match rest.find(']') {
            Some(end) => &rest[..end],
            None => rest.lines().next().unwrap_or(""),
        };
        return scale
            .canonical(token)
            .map(str::to_owned)
            .ok_or_else(|| ParseError::UnknownLabel(token.trim().to_owned()));
    }
    let line = raw.lines().next().unwrap_or("").trim();
    if let Some(label) = scale.canonical(line) {
        return Ok(label.to_owned());
    }
    // bare label followed by trailing punctuation or prose
    let lowered = line.to_lowercase();
    scale
        .labels()
        .iter()
        .filter(|l| {
            let l = l.to_lowercase();
            lowered.starts_with(&l)
                && !lowered[l.len()..]
                    .chars()
                    .next()
                    .is_some_and(char::is_alphanumeric)
        })
        .max_by_key(|l| l.len())
        .cloned()
        .ok_or_else(|| ParseError::UnknownLabel(line.to_owned()))
}

/// Splits a grouped response on `===` lines and parses each fragment.
/// Fragments are matched to `expected` by their `data-instance-k` tag, and
/// untagged fragments by position.
pub fn parse_multi_response(text: &str, expected: &[usize], scale: &LabelScale) -> MultiParse {
    let mut fragments: Vec<String> = vec![String::new()];
    for line in text.split('\n') {
        if separator_re().is_match(line) {
            fragments.push(String::new());
        } else {
            let cur = fragments.last_mut().expect("non-empty");
            if !cur.is_empty() {
                cur.push('\n');
            }
            cur.push_str(line);
        }
    }
    fragments.retain(|f| !f.trim().is_empty());

    let mut slots: Vec<Option<&str>> = vec![None; expected.len()];
    let mut untagged = Vec::new();
    let mut discarded = 0;
    for (pos, frag) in fragments.iter().enumerate() {
        let tag = tag_re()
            .captures(frag)
            .and_then(|c| c[1].parse::<usize>().ok());
        match tag {
            Some(k) => match expected.iter().position(|&e| e == k) {
                Some(slot) if slots[slot].is_none() => slots[slot] = Some(frag),
                _ => discarded += 1,
            },
            None => untagged.push((pos, frag.as_str())),
        }
    }
    let taken: HashSet<usize> = slots
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.map(|_| i))
        .collect();
    let mut free = (0..expected.len())
        .filter(|i| !taken.contains(i))
        .collect::<Vec<_>>();
    for (pos, frag) in untagged {
        let slot = if free.contains(&pos) {
            Some(pos)
        } else {
            free.first().copied()
        };
        match slot {
            Some(s) => {
                slots[s] = Some(frag);
                free.retain(|&f| f != s);
            }
            None => discarded += 1,
        }
    }

    let results = expected
        .iter()
        .zip(slots)
        .map(|(&k, frag)| {
            let parsed = match frag {
                Some(f) => parse_single_response(f, scale),
                None => Err(ParseError::MissingFragment(k)),
            };
            (k, parsed)
        })
        .collect();
    MultiParse { results, discarded }
}
