use std::fmt;

use thiserror::Error;

use super::markup::{parse_grounded_markup, MarkupError};
use super::{GroundedCaption, Provenance};
use crate::scene::{ObjectId, Scene};
use crate::tokenize::word_count;

/// Why a generated caption was filtered out.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Rejection {
    #[error("unparseable markup: {0}")]
    Parse(MarkupError),
    #[error("unknown object id {0}")]
    UnknownId(ObjectId),
    #[error("object {0} referenced more than once")]
    DuplicateId(ObjectId),
    #[error("duplicate or overlapping span at character {0}")]
    DuplicateSpan(usize),
    #[error("span [{start}, {end}) is empty or outside the text")]
    InvalidSpan { start: usize, end: usize },
    #[error("correspondence at character {0} has no ids")]
    EmptyIds(usize),
    #[error("{words} words, limit is fewer than {cap}")]
    TooLong { words: usize, cap: usize },
    #[error("caption for scene {found:?} checked against scene {expected:?}")]
    SceneMismatch { expected: String, found: String },
    #[error("correspondence for ids {0:?} was dropped")]
    LostCorrespondence(Vec<ObjectId>),
    #[error("relation object {0} is not referenced")]
    MissingRelationObject(ObjectId),
}

/// A caption awaiting validation: raw model output or an already structured
/// record.
#[derive(Debug, Clone, PartialEq)]
pub enum CaptionCandidate {
    Markup {
        scene_id: String,
        raw: String,
        provenance: Provenance,
    },
    Structured(GroundedCaption),
}

impl fmt::Display for CaptionCandidate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CaptionCandidate::Markup { raw, .. } => f.write_str(raw),
            CaptionCandidate::Structured(c) => f.write_str(&c.text),
        }
    }
}

/// Accepts a caption only if it parses, references existing objects, has
/// sorted non-overlapping spans and stays under the word cap.
pub fn validate_caption(
    candidate: CaptionCandidate,
    scene: &Scene,
    word_cap: usize,
) -> Result<GroundedCaption, Rejection> {
    let caption = match candidate {
        CaptionCandidate::Markup {
            scene_id,
            raw,
            provenance,
        } => {
            let (text, correspondences) = parse_grounded_markup(&raw).map_err(Rejection::Parse)?;
            GroundedCaption {
                scene_id,
                text,
                correspondences,
                provenance,
            }
        }
        CaptionCandidate::Structured(c) => c,
    };
    if caption.scene_id != scene.scene_id() {
        return Err(Rejection::SceneMismatch {
            expected: scene.scene_id().to_string(),
            found: caption.scene_id,
        });
    }
    let len = caption.text.chars().count();
    let mut prev_end = 0usize;
    for (i, c) in caption.correspondences.iter().enumerate() {
        let (start, end) = (c.span.start, c.span.end);
        if start >= end || end > len {
            return Err(Rejection::InvalidSpan { start, end });
        }
        if i > 0 && start < prev_end {
            return Err(Rejection::DuplicateSpan(start));
        }
        prev_end = end;
        if c.ids.is_empty() {
            return Err(Rejection::EmptyIds(start));
        }
        if let Some(&id) = c.ids.iter().find(|&&id| !scene.contains_id(id)) {
            return Err(Rejection::UnknownId(id));
        }
    }
    let words = word_count(&caption.text);
    if words >= word_cap {
        return Err(Rejection::TooLong {
            words,
            cap: word_cap,
        });
    }
    Ok(caption)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::caption::{PhraseCorrespondence, Span};
    use crate::geometry::Vec3;
    use crate::scene::{InstanceAnnotation, PointCloud, PointSet};

    fn scene() -> Scene {
        let points = (0..5).map(|i| Vec3::new(f64::from(i), 0.0, 0.0)).collect();
        let instances = (0..5u32)
            .map(|i| InstanceAnnotation {
                id: i + 1,
                label: "box".into(),
                mask: PointSet::new(vec![i as usize]),
            })
            .collect();
        Scene::new("s", PointCloud { points, colors: None }, instances).unwrap()
    }

    fn markup(raw: &str) -> CaptionCandidate {
        CaptionCandidate::Markup {
            scene_id: "s".into(),
            raw: raw.into(),
            provenance: Provenance::default(),
        }
    }

    #[test]
    fn unknown_id_rejected() {
        assert_eq!(
            validate_caption(markup("a [box 999] here"), &scene(), 256),
            Err(Rejection::UnknownId(999))
        );
    }

    #[test]
    fn long_caption_rejected() {
        let raw = format!("[a box 1] {}", "word ".repeat(298));
        assert_eq!(
            validate_caption(markup(&raw), &scene(), 256),
            Err(Rejection::TooLong {
                words: 300,
                cap: 256
            })
        );
    }

    #[test]
    fn valid_caption_accepted() {
        let c = validate_caption(markup("[two boxes 1 2] near [a box 3]."), &scene(), 256).unwrap();
        assert_eq!(c.text, "two boxes near a box.");
        assert_eq!(c.referenced_ids(), vec![1, 2, 3]);
        assert!(validate_caption(CaptionCandidate::Structured(c), &scene(), 256).is_ok());
    }

    #[test]
    fn structured_span_checks() {
        let mut c = GroundedCaption {
            scene_id: "s".into(),
            text: "a box and a box".into(),
            correspondences: vec![
                PhraseCorrespondence {
                    span: Span::new(0, 5),
                    ids: vec![1],
                },
                PhraseCorrespondence {
                    span: Span::new(0, 5),
                    ids: vec![2],
                },
            ],
            provenance: Provenance::default(),
        };
        assert_eq!(
            validate_caption(CaptionCandidate::Structured(c.clone()), &scene(), 256),
            Err(Rejection::DuplicateSpan(0))
        );
        c.correspondences[1].span = Span::new(10, 40);
        assert!(matches!(
            validate_caption(CaptionCandidate::Structured(c.clone()), &scene(), 256),
            Err(Rejection::InvalidSpan { .. })
        ));
        c.correspondences[1].span = Span::new(10, 15);
        c.correspondences[1].ids.clear();
        assert_eq!(
            validate_caption(CaptionCandidate::Structured(c.clone()), &scene(), 256),
            Err(Rejection::EmptyIds(10))
        );
        c.scene_id = "other".into();
        assert!(matches!(
            validate_caption(CaptionCandidate::Structured(c), &scene(), 256),
            Err(Rejection::SceneMismatch { .. })
        ));
        assert!(matches!(
            validate_caption(markup("a [box"), &scene(), 256),
            Err(Rejection::Parse(_))
        ));
    }
}
