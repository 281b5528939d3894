//! Conversion of grounded text into referent-token dialogues: the user turn
//! comes from a task template, the assistant turn wraps every grounded phrase
//! as `<p> phrase </p> <ref>`, and each `<ref>` carries the object ids of its
//! source correspondence.

mod convert;
mod referents;
mod templates;

pub use convert::{convert_embodied, convert_task, derive_referent_correspondence, render_grounded_text, source_ids};
pub use referents::{group_referents, scan_refs, GroupingMode, RefToken};
pub use templates::{AnswerTemplates, TaskTemplates, TemplateLibrary, PLACEHOLDERS};

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::caption::{MarkupError, Span};
use crate::llm::LlmError;
use crate::scene::ObjectId;

pub const REF: &str = "<ref>";
pub const P_OPEN: &str = "<p>";
pub const P_CLOSE: &str = "</p>";
pub const WITH_GROUNDING: &str = "(with grounding)";

#[derive(Debug, Error)]
pub enum InstructError {
    #[error("template library: {0}")]
    Template(String),
    #[error("{task} cannot be built from this caption: {reason}")]
    TaskMismatch { task: TaskKind, reason: String },
    #[error("{refs} <ref> tokens but {sources} source correspondences")]
    RefCount { refs: usize, sources: usize },
    #[error("text already contains a reserved token: {0:?}")]
    ReservedToken(String),
    #[error("dialogue reply: {0}")]
    Dialogue(String),
    #[error(transparent)]
    Markup(#[from] MarkupError),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Detection,
    SingleGrounding,
    MultiGrounding,
    DenseCaptioning,
    Qa,
    SceneCaptioning,
    EmbodiedDialogue,
    EmbodiedPlanning,
}

impl TaskKind {
    pub const ALL: [TaskKind; 8] = [
        TaskKind::Detection,
        TaskKind::SingleGrounding,
        TaskKind::MultiGrounding,
        TaskKind::DenseCaptioning,
        TaskKind::Qa,
        TaskKind::SceneCaptioning,
        TaskKind::EmbodiedDialogue,
        TaskKind::EmbodiedPlanning,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Detection => "detection",
            TaskKind::SingleGrounding => "single_grounding",
            TaskKind::MultiGrounding => "multi_grounding",
            TaskKind::DenseCaptioning => "dense_captioning",
            TaskKind::Qa => "qa",
            TaskKind::SceneCaptioning => "scene_captioning",
            TaskKind::EmbodiedDialogue => "embodied_dialogue",
            TaskKind::EmbodiedPlanning => "embodied_planning",
        }
    }

    /// Tasks whose answers always point at objects.
    pub fn always_grounded(self) -> bool {
        matches!(
            self,
            TaskKind::Detection
                | TaskKind::SingleGrounding
                | TaskKind::MultiGrounding
                | TaskKind::DenseCaptioning
                | TaskKind::EmbodiedDialogue
                | TaskKind::EmbodiedPlanning
        )
    }

    pub fn is_embodied(self) -> bool {
        matches!(self, TaskKind::EmbodiedDialogue | TaskKind::EmbodiedPlanning)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskKind::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown task {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
}

/// Ids behind the `pos`-th `<ref>` of turn `turn`. `phrase_span` is the
/// character range of the companion phrase inside `<p> … </p>`, if any.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferentAnnotation {
    pub turn: usize,
    pub pos: usize,
    pub ids: Vec<ObjectId>,
    pub phrase_span: Option<Span>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionSample {
    pub scene_id: String,
    pub task: TaskKind,
    pub turns: Vec<Turn>,
    pub referents: Vec<ReferentAnnotation>,
}

impl InstructionSample {
    /// Union of all referent ids, ascending.
    pub fn referenced_ids(&self) -> Vec<ObjectId> {
        let mut ids: Vec<_> = self.referents.iter().flat_map(|r| r.ids.iter().copied()).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Re-expresses the referents under another grouping mode, rewriting the
    /// `<ref>` tokens of the turns to match.
    pub fn regroup(&self, mode: GroupingMode) -> InstructionSample {
        referents::regroup_sample(self, mode)
    }
}

/// `USER: …` / `ASSISTANT: …` lines, one per turn.
pub fn render_dialogue(sample: &InstructionSample) -> String {
    sample
        .turns
        .iter()
        .map(|t| match t.role {
            Role::User => format!("USER: {}", t.text),
            Role::Assistant => format!("ASSISTANT: {}", t.text),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Inverse of [`render_dialogue`] for single-line turns.
pub fn parse_dialogue(text: &str) -> Result<Vec<Turn>, InstructError> {
    let mut turns = Vec::new();
    for line in text.lines() {
        let (role, rest) = if let Some(rest) = line.strip_prefix("USER: ") {
            (Role::User, rest)
        } else if let Some(rest) = line.strip_prefix("ASSISTANT: ") {
            (Role::Assistant, rest)
        } else {
            return Err(InstructError::Dialogue(format!("unrecognised line {line:?}")));
        };
        turns.push(Turn {
            role,
            text: rest.to_string(),
        });
    }
    Ok(turns)
}

/// Structural problems of a sample, empty when it is well formed.
pub fn check_sample(sample: &InstructionSample) -> Vec<String> {
    let mut problems = Vec::new();
    for (i, t) in sample.turns.iter().enumerate() {
        let expected = if i % 2 == 0 { Role::User } else { Role::Assistant };
        if t.role != expected {
            problems.push(format!("turn {i} should be {expected:?}"));
        }
        if t.text.contains('\n') {
            problems.push(format!("turn {i} spans several lines"));
        }
        problems.extend(referents::check_phrase_markers(&t.text).into_iter().map(|p| format!("turn {i}: {p}")));
        let refs = t.text.matches(REF).count();
        let mut positions: Vec<usize> = sample.referents.iter().filter(|r| r.turn == i).map(|r| r.pos).collect();
        positions.sort_unstable();
        if positions != (0..refs).collect::<Vec<_>>() {
            problems.push(format!(
                "turn {i} has {refs} <ref> tokens but annotations at positions {positions:?}"
            ));
        }
    }
    for r in &sample.referents {
        if r.turn >= sample.turns.len() {
            problems.push(format!("annotation for missing turn {}", r.turn));
        }
        if r.ids.is_empty() {
            problems.push(format!("annotation ({}, {}) has no ids", r.turn, r.pos));
        }
    }
    problems
}

/// Problems of a converted sample relative to the caption it came from:
/// structural problems, ids outside the caption, and an assistant answer
/// whose referents do not cover exactly the caption's grounded objects.
pub fn conversion_violations(caption: &crate::caption::GroundedCaption, sample: &InstructionSample) -> Vec<String> {
    let mut problems = check_sample(sample);
    let mut allowed: std::collections::BTreeSet<ObjectId> = source_ids(caption).into_iter().collect();
    if sample.task.is_embodied() {
        allowed.extend(caption.provenance.member_ids.iter().copied());
    }
    for id in sample.referenced_ids() {
        if !allowed.contains(&id) {
            problems.push(format!("id {id} is not in the source caption"));
        }
    }
    if !sample.task.is_embodied() {
        let answer: std::collections::BTreeSet<ObjectId> = sample
            .referents
            .iter()
            .filter(|r| r.turn == 1)
            .flat_map(|r| r.ids.iter().copied())
            .collect();
        let grounded: std::collections::BTreeSet<ObjectId> = match caption.referenced_ids() {
            ids if !ids.is_empty() => ids.into_iter().collect(),
            _ => caption.provenance.target_ids.iter().flatten().copied().collect(),
        };
        if !answer.is_empty() && answer != grounded {
            problems.push(format!("answer refers to {answer:?}, caption grounds {grounded:?}"));
        }
    }
    problems
}

pub fn read_sample_jsonl(reader: impl BufRead) -> Result<Vec<InstructionSample>, String> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", n + 1))?);
    }
    Ok(out)
}

pub fn write_sample_jsonl<'a>(
    mut writer: impl Write,
    samples: impl IntoIterator<Item = &'a InstructionSample>,
) -> std::io::Result<()> {
    for s in samples {
        serde_json::to_writer(&mut writer, s)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
