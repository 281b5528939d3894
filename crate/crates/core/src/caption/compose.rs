use std::cell::Cell;
use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use super::markup::{is_valid_phrase, parse_grounded_markup, serialize_grounded_markup};
use super::{
    CaptionError, GroundedCaption, LocalSelection, ObjectCaption, Provenance, Rejection,
};
use crate::geometry::Vec3;
use crate::llm::{Bindings, LlmClient, LlmError, PromptSpec};
use crate::relations::{render_relation_phrase, RelationStatement};
use crate::scene::ObjectId;
use crate::tokenize::word_count;

/// Prompts used by the generation stages.
#[derive(Debug, Clone)]
pub struct CaptionPrompts {
    pub condense: PromptSpec,
    pub scene_caption: PromptSpec,
    pub relation_merge: PromptSpec,
}

impl CaptionPrompts {
    pub fn builtin() -> Self {
        Self::load(None).expect("built-in prompts parse")
    }

    /// Loads prompts from `dir` where present, built-ins otherwise.
    pub fn load(dir: Option<&Path>) -> Result<Self, LlmError> {
        Ok(Self {
            condense: PromptSpec::load(dir, "object_condense")?,
            scene_caption: PromptSpec::load(dir, "scene_caption")?,
            relation_merge: PromptSpec::load(dir, "relation_merge")?,
        })
    }
}

/// Label-template phrase with an indefinite article: `chair` -> `a chair`.
pub fn label_phrase(label: &str) -> String {
    let label = label.trim();
    let article = match label.chars().next().map(|c| c.to_ascii_lowercase()) {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    };
    format!("{article} {label}")
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Shortens a long object description into a phrase. In fallback mode, or
/// when the model's reply is not a usable phrase, the label template is used.
pub fn condense_object_caption(
    object_id: ObjectId,
    label: &str,
    long_caption: &str,
    client: &LlmClient,
    prompts: &CaptionPrompts,
) -> Result<ObjectCaption, CaptionError> {
    let bindings: Bindings = [
        ("label".to_string(), label.to_string()),
        ("caption".to_string(), long_caption.to_string()),
    ]
    .into();
    let reply = client.complete(&prompts.condense, &bindings, || label_phrase(label))?;
    let cleaned = reply
        .trim()
        .trim_matches('"')
        .trim_end_matches('.')
        .trim()
        .to_string();
    let phrase = if is_valid_phrase(&cleaned) {
        cleaned
    } else {
        label_phrase(label)
    };
    ObjectCaption::new(object_id, label, phrase)
}

/// Deterministic composer: one markup sentence per member, anchor first.
pub fn fallback_compose(selection: &LocalSelection, captions: &BTreeMap<ObjectId, &ObjectCaption>) -> String {
    let mut order = vec![selection.anchor_id];
    order.extend(
        selection
            .member_ids
            .iter()
            .copied()
            .filter(|&id| id != selection.anchor_id),
    );
    let mut sentences = Vec::with_capacity(order.len());
    for (i, id) in order.into_iter().enumerate() {
        let phrase = &captions[&id].phrase;
        sentences.push(if i == 0 {
            format!("In this area there is [{phrase} {id}].")
        } else {
            format!("There is also [{phrase} {id}].")
        });
    }
    sentences.join(" ")
}

fn check_word_cap(text: &str, word_cap: usize) -> Result<(), Rejection> {
    let words = word_count(text);
    if words >= word_cap {
        return Err(Rejection::TooLong { words, cap: word_cap });
    }
    Ok(())
}

/// Composes a grounded caption for a local selection through the
/// scene-caption prompt, or the deterministic composer in fallback mode.
///
/// The reply must parse as markup, reference only selected objects, and
/// reference each of them at most once.
pub fn compose_caption(
    selection: &LocalSelection,
    captions: &[ObjectCaption],
    coords: &BTreeMap<ObjectId, Vec3>,
    client: &LlmClient,
    prompts: &CaptionPrompts,
    word_cap: usize,
) -> Result<GroundedCaption, CaptionError> {
    let by_id: BTreeMap<ObjectId, &ObjectCaption> =
        captions.iter().map(|c| (c.object_id, c)).collect();
    let mut lines = Vec::with_capacity(selection.member_ids.len());
    for &id in &selection.member_ids {
        let caption = by_id.get(&id).ok_or(CaptionError::MissingObject(id))?;
        let p = coords.get(&id).ok_or(CaptionError::MissingObject(id))?;
        lines.push(format!(
            "ID {id}: {} ({:.2}, {:.2}, {:.2})",
            caption.phrase, p.x, p.y, p.z
        ));
    }
    let bindings: Bindings = [("objects".to_string(), lines.join("\n"))].into();
    let used_fallback = Cell::new(false);
    let raw = client.complete(&prompts.scene_caption, &bindings, || {
        used_fallback.set(true);
        fallback_compose(selection, &by_id)
    })?;

    let (text, correspondences) =
        parse_grounded_markup(raw.trim()).map_err(Rejection::Parse)?;
    let mut seen = HashSet::new();
    for c in &correspondences {
        for &id in &c.ids {
            if selection.member_ids.binary_search(&id).is_err() {
                return Err(Rejection::UnknownId(id).into());
            }
            if !seen.insert(id) {
                return Err(Rejection::DuplicateId(id).into());
            }
        }
    }
    check_word_cap(&text, word_cap)?;
    Ok(GroundedCaption {
        scene_id: selection.scene_id.clone(),
        text,
        correspondences,
        provenance: Provenance {
            source: Some("scene_caption".into()),
            anchor_id: Some(selection.anchor_id),
            member_ids: selection.member_ids.clone(),
            radius_used: Some(selection.radius_used),
            composer: Some(if used_fallback.get() { "fallback" } else { "llm" }.into()),
            ..Provenance::default()
        },
    })
}

/// Merges relation statements into a caption through the relation-merge
/// prompt, or appends one sentence per statement in fallback mode.
///
/// Every correspondence of the input caption must survive (same phrase, same
/// ids) and every object named by a statement must be referenced.
pub fn inject_relations(
    caption: &GroundedCaption,
    statements: &[RelationStatement],
    labels: &BTreeMap<ObjectId, String>,
    client: &LlmClient,
    prompts: &CaptionPrompts,
    word_cap: usize,
) -> Result<GroundedCaption, CaptionError> {
    if statements.is_empty() {
        return Ok(caption.clone());
    }
    let phrases = statements
        .iter()
        .map(|s| render_relation_phrase(s, labels))
        .collect::<Result<Vec<_>, _>>()?;
    let markup = serialize_grounded_markup(caption)?;
    let bindings: Bindings = [
        ("caption".to_string(), markup.clone()),
        (
            "relations".to_string(),
            phrases
                .iter()
                .map(|p| format!("- {p}"))
                .collect::<Vec<_>>()
                .join("\n"),
        ),
    ]
    .into();
    let raw = client.complete(&prompts.relation_merge, &bindings, || {
        let mut out = markup.clone();
        for p in &phrases {
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(&capitalize(p));
            out.push('.');
        }
        out
    })?;
    let (text, correspondences) =
        parse_grounded_markup(raw.trim()).map_err(Rejection::Parse)?;
    let merged = GroundedCaption {
        scene_id: caption.scene_id.clone(),
        text,
        correspondences,
        provenance: caption.provenance.clone(),
    };

    for c in &merged.correspondences {
        if let Some(&id) = c.ids.iter().find(|id| !labels.contains_key(id)) {
            return Err(Rejection::UnknownId(id).into());
        }
    }
    let mut pool: Vec<(&str, &[ObjectId])> = merged
        .correspondences
        .iter()
        .map(|c| (merged.span_text(c.span), c.ids.as_slice()))
        .collect();
    for old in &caption.correspondences {
        let key = (caption.span_text(old.span), old.ids.as_slice());
        match pool.iter().position(|p| *p == key) {
            Some(i) => {
                pool.swap_remove(i);
            }
            None => return Err(Rejection::LostCorrespondence(old.ids.clone()).into()),
        }
    }
    let referenced: HashSet<ObjectId> = merged.referenced_ids().into_iter().collect();
    for s in statements {
        if let Some(id) = s.ids().find(|id| !referenced.contains(id)) {
            return Err(Rejection::MissingRelationObject(id).into());
        }
    }
    check_word_cap(&merged.text, word_cap)?;
    let mut merged = merged;
    merged.provenance.relations.extend(statements.iter().cloned());
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{render_prompt, request_hash, Exchange, ReplayStore};
    use crate::relations::RelationKind;

    fn selection(ids: &[ObjectId]) -> LocalSelection {
        LocalSelection {
            scene_id: "scene0001".into(),
            anchor_id: ids[0],
            member_ids: ids.to_vec(),
            radius_used: 2.0,
        }
    }

    fn caption_set(ids: &[ObjectId]) -> (Vec<ObjectCaption>, BTreeMap<ObjectId, Vec3>) {
        let phrases = ["a white nightstand", "a wooden bed", "a tall lamp", "a desk", "a blue chair"];
        let caps = ids
            .iter()
            .enumerate()
            .map(|(i, &id)| ObjectCaption::new(id, "thing", phrases[i % phrases.len()]).unwrap())
            .collect();
        let coords = ids
            .iter()
            .map(|&id| (id, Vec3::new(f64::from(id), 0.0, 0.5)))
            .collect();
        (caps, coords)
    }

    fn prime(store: &ReplayStore, spec: &PromptSpec, bindings: &Bindings, response: &str) {
        let (system, prompt) = render_prompt(spec, bindings).unwrap();
        store
            .put(Exchange {
                hash: request_hash(&spec.name, &system, &prompt),
                name: spec.name.clone(),
                system,
                prompt,
                response: response.into(),
                timestamp: 0,
            })
            .unwrap();
    }

    fn objects_binding(ids: &[ObjectId]) -> Bindings {
        let (caps, coords) = caption_set(ids);
        let lines: Vec<String> = ids
            .iter()
            .enumerate()
            .map(|(i, id)| {
                let p = coords[id];
                format!("ID {id}: {} ({:.2}, {:.2}, {:.2})", caps[i].phrase, p.x, p.y, p.z)
            })
            .collect();
        [("objects".to_string(), lines.join("\n"))].into()
    }

    #[test]
    fn single_member_fallback() {
        let sel = selection(&[12]);
        let (caps, coords) = caption_set(&[12]);
        let c = compose_caption(
            &sel,
            &caps,
            &coords,
            &LlmClient::fallback(),
            &CaptionPrompts::builtin(),
            256,
        )
        .unwrap();
        assert_eq!(c.text, "In this area there is a white nightstand.");
        assert_eq!(c.correspondences.len(), 1);
        assert_eq!(c.correspondences[0].ids, vec![12]);
        assert_eq!(c.span_text(c.correspondences[0].span), "a white nightstand");
        assert_eq!(
            serialize_grounded_markup(&c).unwrap(),
            "In this area there is [a white nightstand 12]."
        );
        assert_eq!(c.provenance.composer.as_deref(), Some("fallback"));
    }

    #[test]
    fn missing_caption_is_an_error() {
        let sel = selection(&[1, 2]);
        let (caps, coords) = caption_set(&[1]);
        assert!(matches!(
            compose_caption(&sel, &caps, &coords, &LlmClient::fallback(), &CaptionPrompts::builtin(), 256),
            Err(CaptionError::MissingObject(2))
        ));
    }

    #[test]
    fn replayed_caption_is_validated() {
        let ids = [3, 5, 7, 8, 9];
        let sel = selection(&ids);
        let (caps, coords) = caption_set(&ids);
        let prompts = CaptionPrompts::builtin();
        let dir = tempfile::tempdir().unwrap();
        let store = ReplayStore::open(dir.path()).unwrap();
        prime(
            &store,
            &prompts.scene_caption,
            &objects_binding(&ids),
            "Next to [a wooden bed 5] stands [a white nightstand 3], lit by [a tall lamp 7]. [A desk 8] and [a blue chair 9] sit by the window.",
        );
        let client = LlmClient::replay(store, false);
        let c = compose_caption(&sel, &caps, &coords, &client, &prompts, 256).unwrap();
        assert!(c.referenced_ids().iter().all(|id| ids.contains(id)));
        assert_eq!(c.correspondences.len(), 5);
        assert_eq!(c.provenance.composer.as_deref(), Some("llm"));

        // same request, but a reply citing an object outside the selection
        let dir = tempfile::tempdir().unwrap();
        let store = ReplayStore::open(dir.path()).unwrap();
        prime(&store, &prompts.scene_caption, &objects_binding(&ids), "A [chair 42] and [a desk 8].");
        let client = LlmClient::replay(store, false);
        let err = compose_caption(&sel, &caps, &coords, &client, &prompts, 256).unwrap_err();
        assert!(matches!(err, CaptionError::Rejected(Rejection::UnknownId(42))));
    }

    #[test]
    fn duplicate_reference_rejected() {
        let ids = [3, 5];
        let sel = selection(&ids);
        let (caps, coords) = caption_set(&ids);
        let prompts = CaptionPrompts::builtin();
        let dir = tempfile::tempdir().unwrap();
        let store = ReplayStore::open(dir.path()).unwrap();
        prime(&store, &prompts.scene_caption, &objects_binding(&ids), "[a bed 5] and [the bed 5] and [a stand 3]");
        let err = compose_caption(&sel, &caps, &coords, &LlmClient::replay(store, false), &prompts, 256)
            .unwrap_err();
        assert!(matches!(err, CaptionError::Rejected(Rejection::DuplicateId(5))));
    }

    fn labels() -> BTreeMap<ObjectId, String> {
        [(2, "desk"), (4, "lamp"), (6, "chair"), (7, "sofa")]
            .into_iter()
            .map(|(k, v)| (k, v.to_string()))
            .collect()
    }

    fn base_caption() -> GroundedCaption {
        let (text, correspondences) =
            parse_grounded_markup("In this area there is [a desk 2]. There is also [a lamp 4].")
                .unwrap();
        GroundedCaption {
            scene_id: "s".into(),
            text,
            correspondences,
            provenance: Provenance::default(),
        }
    }

    #[test]
    fn inject_nothing_is_identity() {
        let c = base_caption();
        let out = inject_relations(&c, &[], &labels(), &LlmClient::fallback(), &CaptionPrompts::builtin(), 256)
            .unwrap();
        assert_eq!(out, c);
    }

    #[test]
    fn fallback_injection_appends_sentence() {
        let c = base_caption();
        let st = RelationStatement::new(RelationKind::SupportedBy, 4, vec![2]);
        let out = inject_relations(&c, &[st.clone()], &labels(), &LlmClient::fallback(), &CaptionPrompts::builtin(), 256)
            .unwrap();
        assert_eq!(
            out.to_markup().unwrap(),
            "In this area there is [a desk 2]. There is also [a lamp 4]. The [lamp 4] is supported by the [desk 2]."
        );
        assert_eq!(out.correspondences.len(), c.correspondences.len() + 2);
        assert_eq!(&out.correspondences[..2], &c.correspondences[..]);
        assert_eq!(out.provenance.relations, vec![st]);
    }

    #[test]
    fn replayed_merge_preserves_correspondences() {
        let c = base_caption();
        let statements = vec![
            RelationStatement::new(RelationKind::SupportedBy, 4, vec![2]),
            RelationStatement::new(RelationKind::Near, 6, vec![2]),
        ];
        let prompts = CaptionPrompts::builtin();
        let markup = c.to_markup().unwrap();
        let rendered: Vec<String> = statements
            .iter()
            .map(|s| format!("- {}", render_relation_phrase(s, &labels()).unwrap()))
            .collect();
        let bindings: Bindings = [
            ("caption".to_string(), markup),
            ("relations".to_string(), rendered.join("\n")),
        ]
        .into();
        let dir = tempfile::tempdir().unwrap();
        let store = ReplayStore::open(dir.path()).unwrap();
        prime(
            &store,
            &prompts.relation_merge,
            &bindings,
            "Beside [a chair 6] in this area there is [a desk 2], which supports [a lamp 4].",
        );
        let out = inject_relations(&c, &statements, &labels(), &LlmClient::replay(store, false), &prompts, 256)
            .unwrap();
        // diff oracle: every original (phrase, ids) pair appears, possibly shifted
        for old in &c.correspondences {
            let phrase = c.span_text(old.span);
            let found = out
                .correspondences
                .iter()
                .find(|n| out.span_text(n.span) == phrase && n.ids == old.ids)
                .expect("correspondence preserved");
            assert_ne!(found.span, old.span);
        }

        let dir = tempfile::tempdir().unwrap();
        let store = ReplayStore::open(dir.path()).unwrap();
        prime(&store, &prompts.relation_merge, &bindings, "A [lamp 4] on [a desk 2] near [a chair 6].");
        let err = inject_relations(&c, &statements, &labels(), &LlmClient::replay(store, false), &prompts, 256)
            .unwrap_err();
        assert!(matches!(err, CaptionError::Rejected(Rejection::LostCorrespondence(_))));
    }

    #[test]
    fn condense_fallback_and_cleanup() {
        let prompts = CaptionPrompts::builtin();
        let c = condense_object_caption(3, "armchair", "A big soft armchair.", &LlmClient::fallback(), &prompts)
            .unwrap();
        assert_eq!(c.phrase, "an armchair");
        assert_eq!(label_phrase("table"), "a table");
    }
}
