//! Two-stage prompt construction: the request that asks the model for an
//! instructional prompt, and the annotation prompt that merges that
//! instruction with the rule book, the shots and the instances to label.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::workbook::{
    ContextAnswer, LabelRule, LabelScale, QuestionId, Shot, Workbook, TASK_TYPE_ANSWER,
};

/// Literal that marks an instruction-generation request.
pub const INSTRUCTION_MARKER: &str = "concrete DETAILED task instruction";
pub const FRAGMENT_SEPARATOR: &str = "======";
pub const SINGLE_INSTANCE_PREFIX: &str = "data-instance: ";
pub const MULTI_INSTANCE_PREFIX: &str = "data-instance-";

const LABEL_HEADER_TAIL: &str =
    "': Assign this label if the tweet meets any of the following criteria:";
const SHOTS_HEADER: &str = "Please refer to the following Shots (Examples for LLMs to Learn) for annotation tasks, where each instance is corresponded with a label.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionalPrompt {
    pub text: String,
    pub generated_at: DateTime<Utc>,
    pub source_context_digest: String,
}

/// Everything that shaped one annotation task's prompt, frozen at task start.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub instructional: InstructionalPrompt,
    pub rules_snapshot: Vec<LabelRule>,
    pub shots_snapshot: Vec<Shot>,
    pub label_scale: LabelScale,
}

impl PromptBundle {
    /// Rules of one label in position order.
    pub fn rules_for(&self, label: &str) -> Vec<&LabelRule> {
        let mut rules: Vec<_> = self
            .rules_snapshot
            .iter()
            .filter(|r| r.label == label)
            .collect();
        rules.sort_by_key(|r| r.position);
        rules
    }

    /// Copy of this bundle with extra shots appended after the existing ones,
    /// skipping `(text, label)` pairs already present.
    pub fn with_extra_shots<'a, I>(&self, extra: I) -> PromptBundle
    where
        I: IntoIterator<Item = &'a Shot>,
    {
        let mut out = self.clone();
        for shot in extra {
            let dup = out
                .shots_snapshot
                .iter()
                .any(|s| s.text == shot.text && s.gold_label == shot.gold_label);
            if !dup {
                out.shots_snapshot.push(shot.clone());
            }
        }
        out
    }
}

/// An instance handed to [`compose_annotation_prompt`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance<'a> {
    pub data_id: u32,
    pub group_id: &'a str,
    pub text: &'a str,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest over the answered context, used to decide whether a cached
/// instructional prompt is still valid.
pub fn context_digest(context: &[ContextAnswer]) -> String {
    let mut buf = String::new();
    for q in QuestionId::ALL {
        let answer = context
            .iter()
            .find(|c| c.question_id == q)
            .map(|c| c.answer.as_str())
            .unwrap_or("");
        buf.push_str(&q.to_string());
        buf.push('\u{1f}');
        buf.push_str(answer);
        buf.push('\u{1e}');
    }
    sha256_hex(buf.as_bytes())
}

pub fn build_instruction_request(context: &[ContextAnswer]) -> Result<String> {
    let mut out = String::from(
        "Here are questions and corresponding answers for a task description.\n\n```\n",
    );
    for q in QuestionId::USER_ANSWERED {
        let answer = context
            .iter()
            .find(|c| c.question_id == q)
            .map(|c| c.answer.as_str())
            .unwrap_or("");
        if answer.trim().is_empty() {
            return Err(Error::MissingAnswer(q));
        }
        push_qa(&mut out, q.question_text(), answer);
    }
    push_qa(
        &mut out,
        QuestionId::Q6TaskType.question_text(),
        TASK_TYPE_ANSWER,
    );
    out.push_str("'''\n\n");
    out.push_str("Based on task questions and answers, help me generate a concrete DETAILED task instruction.\n");
    out.push_str("Provide Instruction ONLY!\n");
    out.push_str("DO NOT ADD ANY ADDITIONAL INFORMATION NOT INCLUDE IN THE PREVIOUS Q and A!!!\n");
    out.push_str("This Instruction is generated for LLM!");
    Ok(out)
}

fn push_qa(out: &mut String, question: &str, answer: &str) {
    out.push_str("Question: [");
    out.push_str(question);
    out.push_str("] Answer: [");
    out.push_str(answer);
    out.push_str("]\n");
}

/// Renders the annotation prompt. One instance uses the single-instance
/// layout; more use the grouped layout with numbered `data-instance-k` lines.
pub fn compose_annotation_prompt(
    bundle: &PromptBundle,
    instances: &[Instance<'_>],
) -> Result<String> {
    let first = instances.first().ok_or(Error::EmptyInstances)?;
    if instances.iter().any(|i| i.group_id != first.group_id) {
        return Err(Error::MixedGroups);
    }

    let mut out = String::new();
    out.push_str(&bundle.instructional.text);
    out.push_str("\n\n");
    out.push_str("Please ensure each label adheres to its following rules and regulations.\n\n");
    out.push_str("Below are the descriptions of various labels. Please assign the most appropriate label to each description provided.\n");
    for label in bundle.label_scale.labels() {
        out.push_str("Label '");
        out.push_str(label);
        out.push_str(LABEL_HEADER_TAIL);
        out.push('\n');
        for rule in bundle.rules_for(label) {
            out.push_str(&rule.rule_text);
            out.push('\n');
        }
    }
    out.push('\n');

    if !bundle.shots_snapshot.is_empty() {
        out.push_str(SHOTS_HEADER);
        out.push('\n');
        for shot in &bundle.shots_snapshot {
            out.push_str("Example:```");
            out.push_str(&shot.text);
            out.push_str("''' => Label:```");
            out.push_str(&shot.gold_label);
            out.push_str("'''\n");
        }
        out.push('\n');
    }

    out.push_str("Output Format\n");
    if instances.len() == 1 {
        out.push_str("Your output should consist of two sections: ANSWER and EXPLANATION.\n");
        out.push_str("ANSWER: Label: []\n");
        out.push_str("EXPLANATION: Provide a brief explanation for your label choice.\n");
        out.push_str("The following is the data instance need to be annotated:\n");
        out.push_str(SINGLE_INSTANCE_PREFIX);
        out.push_str(first.text);
    } else {
        out.push_str("For each labeled data instance, your output should consist of two sections: ANSWER and EXPLANATION, with the data instance id. Each label fragment should be divided by \"======\"\n");
        out.push_str("ANSWER: Label: []\n");
        out.push_str("EXPLANATION: Provide a brief explanation for your label choice.\n");
        out.push_str("The following are data instances from a group that need to be annotated:\n");
        for (k, inst) in instances.iter().enumerate() {
            if k > 0 {
                out.push('\n');
            }
            out.push_str(MULTI_INSTANCE_PREFIX);
            out.push_str(&(k + 1).to_string());
            out.push_str(": ");
            out.push_str(inst.text);
        }
    }
    Ok(out)
}

/// Freezes the workbook's rule book and shots together with an
/// instructional prompt.
pub fn snapshot_bundle(
    workbook: &Workbook,
    instructional: InstructionalPrompt,
) -> Result<PromptBundle> {
    if workbook.rulebook.is_empty() {
        return Err(Error::EmptyRulebook);
    }
    Ok(PromptBundle {
        instructional,
        rules_snapshot: workbook.rulebook.clone(),
        shots_snapshot: workbook.shots.clone(),
        label_scale: workbook.label_scale.clone(),
    })
}

/// SHA-256 over the prompt the bundle renders for a placeholder instance.
pub fn bundle_digest(bundle: &PromptBundle) -> String {
    let dummy = Instance {
        data_id: 0,
        group_id: "",
        text: "{{data_instance}}",
    };
    let rendered = compose_annotation_prompt(bundle, std::slice::from_ref(&dummy))
        .expect("one instance always renders");
    sha256_hex(rendered.as_bytes())
}
