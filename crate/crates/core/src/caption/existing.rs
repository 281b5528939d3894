//! Grounded versions of existing annotation types: detection labels and
//! referring expressions.

use super::{GroundedCaption, PhraseCorrespondence, Provenance, Span};
use crate::scene::{ObjectId, Scene};

/// One caption per category: the category name as text, grounded to every
/// instance carrying that label. A category with no instances yields a
/// caption without correspondences.
pub fn detection_caption(scene: &Scene, category: &str) -> GroundedCaption {
    let ids: Vec<ObjectId> = scene
        .instances()
        .iter()
        .filter(|i| i.label == category)
        .map(|i| i.id)
        .collect();
    let text = category.to_string();
    let correspondences = if ids.is_empty() {
        Vec::new()
    } else {
        vec![PhraseCorrespondence {
            span: Span::new(0, text.chars().count()),
            ids: ids.clone(),
        }]
    };
    GroundedCaption {
        scene_id: scene.scene_id().to_string(),
        text,
        correspondences,
        provenance: Provenance {
            source: Some("detection".into()),
            category: Some(category.to_string()),
            target_ids: Some(ids),
            ..Provenance::default()
        },
    }
}

/// A referring expression with its positive phrase grounded to the targets.
/// An empty target list describes a zero-target expression.
pub fn referring_caption(
    scene_id: &str,
    description: &str,
    phrase: Option<Span>,
    target_ids: &[ObjectId],
    category: Option<&str>,
) -> GroundedCaption {
    let correspondences = match phrase {
        Some(span) if !target_ids.is_empty() => vec![PhraseCorrespondence {
            span,
            ids: target_ids.to_vec(),
        }],
        _ => Vec::new(),
    };
    GroundedCaption {
        scene_id: scene_id.to_string(),
        text: description.to_string(),
        correspondences,
        provenance: Provenance {
            source: Some("referring".into()),
            category: category.map(str::to_string),
            target_ids: Some(target_ids.to_vec()),
            ..Provenance::default()
        },
    }
}
