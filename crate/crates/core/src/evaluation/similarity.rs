//! How much the rule book changed between iterations: character edit
//! similarity and embedding cosine.

use std::collections::HashMap;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::PromptBundle;
use crate::workbook::{LabelRule, LabelScale};

/// Levenshtein distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 - levenshtein / max(len)`; two empty strings are identical.
pub fn normalized_edit_similarity<T: Float>(a: &str, b: &str) -> T {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return T::one();
    }
    let d = T::from(levenshtein(a, b)).expect("fits");
    T::one() - d / T::from(longest).expect("fits")
}

/// Maps texts to vectors of one shared dimension.
pub trait Embedder<T> {
    fn embed(&self, texts: &[&str]) -> Vec<Vec<T>>;
}

/// Term-frequency vectors over lowercased character trigrams, L2-normalized.
/// Strings shorter than three characters count as a single gram.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrigramEmbedder;

fn trigrams(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.to_lowercase().chars().collect();
    match chars.len() {
        0 => Vec::new(),
        1 | 2 => vec![chars.iter().collect()],
        _ => chars.windows(3).map(|w| w.iter().collect()).collect(),
    }
}

impl<T: Float> Embedder<T> for TrigramEmbedder {
    fn embed(&self, texts: &[&str]) -> Vec<Vec<T>> {
        let mut vocab: HashMap<String, usize> = HashMap::new();
        let grams: Vec<Vec<String>> = texts.iter().map(|t| trigrams(t)).collect();
        for g in grams.iter().flatten() {
            let next = vocab.len();
            vocab.entry(g.clone()).or_insert(next);
        }
        grams
            .iter()
            .map(|gs| {
                let mut v = vec![T::zero(); vocab.len()];
                for g in gs {
                    let i = vocab[g];
                    v[i] = v[i] + T::one();
                }
                let norm = v.iter().fold(T::zero(), |s, &x| s + x * x).sqrt();
                if norm > T::zero() {
                    v.iter_mut().for_each(|x| *x = *x / norm);
                }
                v
            })
            .collect()
    }
}

/// Cosine similarity; a zero vector yields 0.
pub fn cosine<T: Float>(a: &[T], b: &[T]) -> T {
    let dot = a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y);
    let na = a.iter().fold(T::zero(), |s, &x| s + x * x).sqrt();
    let nb = b.iter().fold(T::zero(), |s, &x| s + x * x).sqrt();
    if na == T::zero() || nb == T::zero() {
        return T::zero();
    }
    (dot / (na * nb)).max(-T::one()).min(T::one())
}

pub fn semantic_similarity<T: Float, E: Embedder<T> + ?Sized>(a: &str, b: &str, embedder: &E) -> T {
    if a == b {
        return T::one();
    }
    let v = embedder.embed(&[a, b]);
    cosine(&v[0], &v[1])
}

/// Every rule text joined by newlines, labels in scale order and rules in
/// position order.
pub fn concat_rules(rules: &[LabelRule], scale: &LabelScale) -> String {
    let mut parts = Vec::new();
    for label in scale.labels() {
        let mut of_label: Vec<&LabelRule> = rules.iter().filter(|r| &r.label == label).collect();
        of_label.sort_by_key(|r| r.position);
        parts.extend(of_label.into_iter().map(|r| r.rule_text.as_str()));
    }
    parts.join("\n")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityPair<T> {
    /// 1-based iteration numbers of the compared bundles.
    pub from: usize,
    pub to: usize,
    pub edit_similarity: T,
    pub semantic_similarity: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSimilarity<T> {
    pub pairs: Vec<SimilarityPair<T>>,
}

impl<T: Float + std::fmt::Display> RuleSimilarity<T> {
    /// `pair,edit_sim,semantic_sim`, one row per consecutive pair.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("pair,edit_sim,semantic_sim\n");
        for p in &self.pairs {
            out.push_str(&format!(
                "{}->{},{},{}\n",
                p.from, p.to, p.edit_similarity, p.semantic_similarity
            ));
        }
        out
    }
}

pub fn rule_similarity_report<T: Float, E: Embedder<T> + ?Sized>(
    bundles: &[PromptBundle],
    embedder: &E,
) -> Result<RuleSimilarity<T>> {
    if bundles.len() < 2 {
        return Err(Error::TooFewBundles);
    }
    let texts: Vec<String> = bundles
        .iter()
        .map(|b| concat_rules(&b.rules_snapshot, &b.label_scale))
        .collect();
    let pairs = texts
        .windows(2)
        .enumerate()
        .map(|(i, w)| SimilarityPair {
            from: i + 1,
            to: i + 2,
            edit_similarity: normalized_edit_similarity(&w[0], &w[1]),
            semantic_similarity: semantic_similarity(&w[0], &w[1], embedder),
        })
        .collect();
    Ok(RuleSimilarity { pairs })
}
