//! Grounded scene captions: local object selection, caption composition,
//! relation injection, the `[phrase id ...]` markup, validation and corpus
//! statistics.

mod compose;
mod existing;
mod markup;
mod select;
mod stats;
mod validate;

pub use compose::{
    compose_caption, condense_object_caption, fallback_compose, inject_relations,
    label_phrase, CaptionPrompts,
};
pub use existing::{detection_caption, referring_caption};
pub use markup::{parse_grounded_markup, serialize_grounded_markup, MarkupError, MarkupErrorKind};
pub use select::{select_local_scene, SelectionParams};
pub use stats::{corpus_stats, CorpusStats};
pub use validate::{validate_caption, CaptionCandidate, Rejection};

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::LlmError;
use crate::relations::{RelationError, RelationStatement};
use crate::scene::ObjectId;

/// Default upper bound (exclusive) on caption length in words.
pub const WORD_CAP: usize = 256;

#[derive(Debug, Error)]
pub enum CaptionError {
    #[error("unknown anchor object {0}")]
    UnknownAnchor(ObjectId),
    #[error("no caption or coordinate for object {0}")]
    MissingObject(ObjectId),
    #[error("invalid object phrase {0:?}")]
    BadPhrase(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Relation(#[from] RelationError),
    #[error("caption rejected: {0}")]
    Rejected(#[from] Rejection),
    #[error(transparent)]
    Markup(#[from] MarkupError),
}

/// A short descriptive phrase for one object.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectCaption {
    pub object_id: ObjectId,
    pub label: String,
    pub phrase: String,
}

impl ObjectCaption {
    pub fn new(
        object_id: ObjectId,
        label: impl Into<String>,
        phrase: impl Into<String>,
    ) -> Result<Self, CaptionError> {
        let phrase = phrase.into();
        if !markup::is_valid_phrase(&phrase) {
            return Err(CaptionError::BadPhrase(phrase));
        }
        Ok(Self {
            object_id,
            label: label.into(),
            phrase,
        })
    }
}

/// Objects around an anchor chosen for one local caption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalSelection {
    pub scene_id: String,
    pub anchor_id: ObjectId,
    /// Ascending, always contains the anchor.
    pub member_ids: Vec<ObjectId>,
    pub radius_used: f64,
}

/// Half-open character range `[start, end)` into caption text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

impl From<[usize; 2]> for Span {
    fn from(v: [usize; 2]) -> Self {
        Span::new(v[0], v[1])
    }
}

impl From<Span> for [usize; 2] {
    fn from(s: Span) -> Self {
        [s.start, s.end]
    }
}

/// Link between a character span of the caption and scene objects.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PhraseCorrespondence {
    pub span: Span,
    pub ids: Vec<ObjectId>,
}

/// Where a caption came from and any task-specific fields the instruction
/// converter needs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Provenance {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anchor_id: Option<ObjectId>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub member_ids: Vec<ObjectId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius_used: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub relations: Vec<RelationStatement>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub composer: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_ids: Option<Vec<ObjectId>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
}

/// Plain caption text plus its phrase-to-region correspondences, sorted by
/// span start and non-overlapping.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundedCaption {
    pub scene_id: String,
    pub text: String,
    pub correspondences: Vec<PhraseCorrespondence>,
    #[serde(default)]
    pub provenance: Provenance,
}

impl GroundedCaption {
    /// Text covered by a span, by character offsets.
    pub fn span_text(&self, span: Span) -> &str {
        char_slice(&self.text, span.start, span.end)
    }

    /// Union of all referenced ids, ascending.
    pub fn referenced_ids(&self) -> Vec<ObjectId> {
        let mut ids: Vec<_> = self
            .correspondences
            .iter()
            .flat_map(|c| c.ids.iter().copied())
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn to_markup(&self) -> Result<String, MarkupError> {
        serialize_grounded_markup(self)
    }
}

/// Slices `text` by character offsets, clamping to its length.
pub(crate) fn char_slice(text: &str, start: usize, end: usize) -> &str {
    let byte = |n: usize| {
        text.char_indices()
            .nth(n)
            .map_or(text.len(), |(b, _)| b)
    };
    let (s, e) = (byte(start), byte(end.max(start)));
    &text[s..e]
}

pub fn read_caption_jsonl(reader: impl BufRead) -> Result<Vec<GroundedCaption>, String> {
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

pub fn write_caption_jsonl<'a>(
    mut writer: impl Write,
    captions: impl IntoIterator<Item = &'a GroundedCaption>,
) -> std::io::Result<()> {
    for c in captions {
        serde_json::to_writer(&mut writer, c)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
