use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::referents::scan_refs;
use super::templates::TaskTemplates;
use super::{
    InstructError, InstructionSample, ReferentAnnotation, Role, TaskKind, TemplateLibrary, Turn, P_CLOSE,
    P_OPEN, REF, WITH_GROUNDING,
};
use crate::caption::{parse_grounded_markup, GroundedCaption, PhraseCorrespondence};
use crate::llm::{Bindings, LlmClient, PromptSpec};
use crate::scene::ObjectId;

/// Text for one placeholder plus the ids of the `<ref>` tokens it contains.
struct Fill {
    text: String,
    refs: Vec<Vec<ObjectId>>,
}

impl Fill {
    fn plain(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            refs: Vec::new(),
        }
    }
}

fn mismatch(task: TaskKind, reason: impl Into<String>) -> InstructError {
    InstructError::TaskMismatch {
        task,
        reason: reason.into(),
    }
}

fn check_reserved(text: &str) -> Result<(), InstructError> {
    for token in [REF, P_OPEN, P_CLOSE] {
        if text.contains(token) {
            return Err(InstructError::ReservedToken(token.to_string()));
        }
    }
    Ok(())
}

fn render(
    template: &str,
    values: &BTreeMap<&str, Fill>,
    task: TaskKind,
) -> Result<(String, Vec<Vec<ObjectId>>), InstructError> {
    let mut out = String::with_capacity(template.len() + 32);
    let mut refs = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close)
                if close > 0 && after[..close].chars().all(|c| c.is_ascii_lowercase() || c == '_') =>
            {
                let name = &after[..close];
                let fill = values
                    .get(name)
                    .ok_or_else(|| mismatch(task, format!("nothing to fill {{{name}}}")))?;
                out.push_str(&rest[..open]);
                out.push_str(&fill.text);
                refs.extend(fill.refs.iter().cloned());
                rest = &after[close + 1..];
            }
            _ => {
                out.push_str(&rest[..=open]);
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok((out, refs))
}

fn sorted_correspondences(caption: &GroundedCaption) -> Vec<&PhraseCorrespondence> {
    let mut c: Vec<_> = caption.correspondences.iter().collect();
    c.sort_by_key(|c| (c.span.start, c.span.end));
    c
}

/// Caption text with every grounded span rewritten as
/// `<p> span </p> <ref>`, and the ids of those refs in text order.
pub fn render_grounded_text(caption: &GroundedCaption) -> Result<(String, Vec<Vec<ObjectId>>), InstructError> {
    check_reserved(&caption.text)?;
    let chars: Vec<char> = caption.text.chars().collect();
    let mut out = String::with_capacity(caption.text.len() + 16 * caption.correspondences.len());
    let mut refs = Vec::new();
    let mut prev = 0;
    for c in sorted_correspondences(caption) {
        let (s, e) = (c.span.start.min(chars.len()), c.span.end.min(chars.len()));
        if s < prev || s >= e {
            return Err(InstructError::Dialogue(format!("span [{s}, {e}) overlaps or is empty")));
        }
        out.extend(&chars[prev..s]);
        out.push_str(P_OPEN);
        out.push(' ');
        out.extend(&chars[s..e]);
        out.push(' ');
        out.push_str(P_CLOSE);
        out.push(' ');
        out.push_str(REF);
        refs.push(c.ids.clone());
        prev = e;
    }
    out.extend(&chars[prev..]);
    Ok((out, refs))
}

fn category(caption: &GroundedCaption) -> String {
    caption
        .provenance
        .category
        .clone()
        .filter(|c| !c.trim().is_empty())
        .unwrap_or_else(|| "object".to_string())
}

/// Phrases and ids a grounding answer points at: the correspondences in text
/// order, or one generic referent over the target ids when the caption has
/// no phrase-level grounding.
fn grounding_sources(caption: &GroundedCaption) -> Vec<(String, Vec<ObjectId>)> {
    let sorted = sorted_correspondences(caption);
    if !sorted.is_empty() {
        return sorted
            .into_iter()
            .map(|c| (caption.span_text(c.span).to_string(), c.ids.clone()))
            .collect();
    }
    match &caption.provenance.target_ids {
        Some(ids) if !ids.is_empty() => vec![(category(caption), ids.clone())],
        _ => Vec::new(),
    }
}

/// Every id the caption points at: correspondence ids and explicit targets.
pub fn source_ids(caption: &GroundedCaption) -> Vec<ObjectId> {
    let mut ids: BTreeSet<ObjectId> = caption.referenced_ids().into_iter().collect();
    if let Some(t) = &caption.provenance.target_ids {
        ids.extend(t.iter().copied());
    }
    ids.into_iter().collect()
}

fn join_list(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

fn annotate(turn: usize, text: &str, ids: Vec<Vec<ObjectId>>) -> Result<Vec<ReferentAnnotation>, InstructError> {
    let tokens = scan_refs(text);
    if tokens.len() != ids.len() {
        return Err(InstructError::RefCount {
            refs: tokens.len(),
            sources: ids.len(),
        });
    }
    Ok(tokens
        .into_iter()
        .zip(ids)
        .enumerate()
        .map(|(pos, (tok, ids))| ReferentAnnotation {
            turn,
            pos,
            ids,
            phrase_span: tok.phrase_span,
        })
        .collect())
}

/// Annotations for the `<ref>` tokens of `rendered` (one turn), mapped
/// positionally onto the caption's correspondences in text order.
pub fn derive_referent_correspondence(
    caption: &GroundedCaption,
    rendered: &str,
    turn: usize,
) -> Result<Vec<ReferentAnnotation>, InstructError> {
    let ids = grounding_sources(caption).into_iter().map(|(_, ids)| ids).collect();
    annotate(turn, rendered, ids)
}

fn pick<'a>(rng: &mut ChaCha8Rng, list: &'a [String]) -> &'a str {
    &list[rng.gen_range(0..list.len())]
}

fn answer_list(t: &TaskTemplates, distinct_ids: usize) -> &[String] {
    match distinct_ids {
        0 => &t.answers.none,
        1 => &t.answers.single,
        _ => &t.answers.multiple,
    }
}

fn distinct(refs: &[(String, Vec<ObjectId>)]) -> usize {
    refs.iter().flat_map(|r| r.1.iter()).collect::<BTreeSet<_>>().len()
}

fn is_bare(answer: &str) -> bool {
    !answer.trim_end().ends_with(['.', '!', '?'])
}

/// Builds a single-exchange sample for a template task.
///
/// Grounding tasks and dense captioning always point at objects in the
/// answer; QA and scene captioning do so only when `grounding_requested`.
/// `" (with grounding)"` is appended to the question iff
/// `grounding_requested`.
pub fn convert_task(
    caption: &GroundedCaption,
    task: TaskKind,
    templates: &TemplateLibrary,
    grounding_requested: bool,
    seed: u64,
) -> Result<InstructionSample, InstructError> {
    if task.is_embodied() {
        return Err(mismatch(task, "embodied tasks are generated through the dialogue prompts"));
    }
    check_reserved(&caption.text)?;
    let prov = &caption.provenance;
    for text in [&prov.question, &prov.answer, &prov.category].into_iter().flatten() {
        check_reserved(text)?;
    }
    let grounded = task.always_grounded() || grounding_requested;
    let entry = templates.get(task);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut values: BTreeMap<&str, Fill> = BTreeMap::new();
    values.insert("category", Fill::plain(category(caption)));
    values.insert("description", Fill::plain(caption.text.clone()));
    if let Some(q) = &prov.question {
        values.insert("question", Fill::plain(q.clone()));
    }

    let caption_fill = if grounded {
        let (text, refs) = render_grounded_text(caption)?;
        Fill { text, refs }
    } else {
        Fill::plain(caption.text.clone())
    };
    let sources = match task {
        TaskKind::Detection | TaskKind::SingleGrounding | TaskKind::MultiGrounding => grounding_sources(caption),
        _ => sorted_correspondences(caption)
            .into_iter()
            .map(|c| (caption.span_text(c.span).to_string(), c.ids.clone()))
            .collect(),
    };
    let total_ids: usize = sources.iter().map(|s| s.1.len()).sum();
    values.insert("count", Fill::plain(total_ids.to_string()));
    let phrases: Vec<String> = sources.iter().map(|s| s.0.clone()).collect();
    values.insert(
        "phrase",
        Fill::plain(if phrases.is_empty() { category(caption) } else { join_list(&phrases) }),
    );

    // user-side {ref}: the object the question is about
    let user_target = prov
        .target_ids
        .clone()
        .filter(|t| !t.is_empty())
        .or_else(|| prov.anchor_id.map(|a| vec![a]))
        .or_else(|| sorted_correspondences(caption).first().map(|c| c.ids.clone()));

    match task {
        TaskKind::Qa => {
            let answer = prov
                .answer
                .clone()
                .ok_or_else(|| mismatch(task, "caption has no answer"))?;
            if prov.question.is_none() {
                return Err(mismatch(task, "caption has no question"));
            }
            let fill = if grounded && !caption.correspondences.is_empty() {
                caption_fill
            } else {
                Fill::plain(answer)
            };
            values.insert("answer", fill);
        }
        TaskKind::DenseCaptioning if user_target.is_none() => {
            return Err(mismatch(task, "no target object to describe"));
        }
        _ => {
            values.insert("caption", caption_fill);
        }
    }

    let question_template = pick(&mut rng, &entry.questions);
    let mut user_values = values;
    let assistant_ref = Fill {
        text: join_list(
            &sources
                .iter()
                .map(|(p, _)| format!("{P_OPEN} {p} {P_CLOSE} {REF}"))
                .collect::<Vec<_>>(),
        ),
        refs: sources.iter().map(|s| s.1.clone()).collect(),
    };
    if let Some(target) = &user_target {
        user_values.insert(
            "ref",
            Fill {
                text: REF.to_string(),
                refs: vec![target.clone()],
            },
        );
    }
    let (mut question, user_refs) = render(question_template, &user_values, task)?;
    if task == TaskKind::Qa && !entry.suffixes.is_empty() && prov.answer.as_deref().is_some_and(is_bare) {
        question = format!("{question} {}", pick(&mut rng, &entry.suffixes));
    }
    if grounding_requested {
        question = format!("{question} {WITH_GROUNDING}");
    }

    let mut values = user_values;
    values.insert("ref", assistant_ref);
    let answer_template = pick(&mut rng, answer_list(entry, distinct(&sources)));
    let (answer, assistant_refs) = render(answer_template, &values, task)?;

    let mut referents = annotate(0, &question, user_refs)?;
    referents.extend(annotate(1, &answer, assistant_refs)?);
    Ok(InstructionSample {
        scene_id: caption.scene_id.clone(),
        task,
        turns: vec![
            Turn {
                role: Role::User,
                text: question,
            },
            Turn {
                role: Role::Assistant,
                text: answer,
            },
        ],
        referents,
    })
}

/// Splits a `USER: … / ASSISTANT: …` reply into (role, text) turns. Lines
/// without a role prefix continue the current turn.
fn split_reply(reply: &str) -> Result<Vec<(Role, String)>, InstructError> {
    let mut turns: Vec<(Role, String)> = Vec::new();
    for line in reply.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if let Some(rest) = line.strip_prefix("USER:") {
            turns.push((Role::User, rest.trim().to_string()));
        } else if let Some(rest) = line.strip_prefix("ASSISTANT:") {
            turns.push((Role::Assistant, rest.trim().to_string()));
        } else if let Some(last) = turns.last_mut() {
            last.1.push(' ');
            last.1.push_str(line);
        } else {
            return Err(InstructError::Dialogue(format!("text before the first turn: {line:?}")));
        }
    }
    if turns.len() < 2 {
        return Err(InstructError::Dialogue("need at least one USER and one ASSISTANT turn".into()));
    }
    for (i, (role, text)) in turns.iter().enumerate() {
        let expected = if i % 2 == 0 { Role::User } else { Role::Assistant };
        if *role != expected {
            return Err(InstructError::Dialogue(format!("turn {i} should be {expected:?}")));
        }
        if text.is_empty() {
            return Err(InstructError::Dialogue(format!("turn {i} is empty")));
        }
    }
    if turns.len() % 2 == 1 {
        return Err(InstructError::Dialogue("dialogue ends with a USER turn".into()));
    }
    Ok(turns)
}

/// Builds an embodied dialogue or planning sample from a scene caption with
/// the given prompt. The reply's turns use the `[phrase id]` markup, which
/// becomes `<p> phrase </p> <ref>`. In fallback mode one exchange is built
/// from the task templates.
pub fn convert_embodied(
    caption: &GroundedCaption,
    task: TaskKind,
    templates: &TemplateLibrary,
    prompt: &PromptSpec,
    client: &LlmClient,
    seed: u64,
) -> Result<InstructionSample, InstructError> {
    if !task.is_embodied() {
        return Err(mismatch(task, "not an embodied task"));
    }
    check_reserved(&caption.text)?;
    let markup = caption.to_markup()?;
    let bindings: Bindings = [("Grounded scene caption".to_string(), markup.clone())].into();
    let entry = templates.get(task);
    let fallback = || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values: BTreeMap<&str, Fill> = BTreeMap::new();
        values.insert("category", Fill::plain(category(caption)));
        values.insert("caption", Fill::plain(markup.clone()));
        values.insert("description", Fill::plain(markup.clone()));
        let q = pick(&mut rng, &entry.questions);
        let a = pick(&mut rng, answer_list(entry, caption.referenced_ids().len()));
        match (render(q, &values, task), render(a, &values, task)) {
            (Ok((q, _)), Ok((a, _))) => format!("USER: {q}\nASSISTANT: {a}"),
            _ => format!("USER: {}\nASSISTANT: {markup}", entry.questions[0]),
        }
    };
    let reply = client.complete(prompt, &bindings, fallback)?;

    let mut allowed: BTreeSet<ObjectId> = source_ids(caption).into_iter().collect();
    allowed.extend(caption.provenance.member_ids.iter().copied());
    let mut turns = Vec::new();
    let mut referents = Vec::new();
    for (i, (role, raw)) in split_reply(&reply)?.into_iter().enumerate() {
        let (text, correspondences) = parse_grounded_markup(&raw)?;
        if let Some(id) = correspondences.iter().flat_map(|c| c.ids.iter()).find(|id| !allowed.contains(id)) {
            return Err(InstructError::Dialogue(format!("turn {i} mentions unknown object {id}")));
        }
        let turn_caption = GroundedCaption {
            scene_id: caption.scene_id.clone(),
            text,
            correspondences,
            provenance: Default::default(),
        };
        let (text, ids) = render_grounded_text(&turn_caption)?;
        referents.extend(annotate(i, &text, ids)?);
        turns.push(Turn { role, text });
    }
    Ok(InstructionSample {
        scene_id: caption.scene_id.clone(),
        task,
        turns,
        referents,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::caption::{Provenance, Span};
    use crate::instruct::check_sample;

    fn chair_caption() -> GroundedCaption {
        GroundedCaption {
            scene_id: "scene0000_00".into(),
            text: "A black chair with four legs.".into(),
            correspondences: vec![PhraseCorrespondence {
                span: Span::new(0, 13),
                ids: vec![4],
            }],
            provenance: Provenance {
                target_ids: Some(vec![4]),
                ..Provenance::default()
            },
        }
    }

    #[test]
    fn describe_object_example() {
        let lib = TemplateLibrary::builtin();
        let wanted = "Describe the {category} {ref} in the scene.";
        let idx = lib
            .get(TaskKind::DenseCaptioning)
            .questions
            .iter()
            .position(|q| q == wanted)
            .unwrap();
        let seed = (0..1000u64)
            .find(|&s| {
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                rng.gen_range(0..lib.get(TaskKind::DenseCaptioning).questions.len()) == idx
            })
            .unwrap();
        let s = convert_task(&chair_caption(), TaskKind::DenseCaptioning, &lib, false, seed).unwrap();
        assert_eq!(s.turns[0].text, "Describe the object <ref> in the scene.");
        assert_eq!(s.turns[1].text, "<p> A black chair </p> <ref> with four legs.");
        assert_eq!(s.referents.len(), 2);
        assert!(check_sample(&s).is_empty());
        let with = convert_task(&chair_caption(), TaskKind::DenseCaptioning, &lib, true, seed).unwrap();
        assert_eq!(with.turns[0].text, "Describe the object <ref> in the scene. (with grounding)");
    }

    #[test]
    fn derive_follows_text_order() {
        let caption = GroundedCaption {
            scene_id: "s".into(),
            text: "two chairs face a desk".into(),
            correspondences: vec![
                PhraseCorrespondence {
                    span: Span::new(16, 22),
                    ids: vec![12],
                },
                PhraseCorrespondence {
                    span: Span::new(0, 10),
                    ids: vec![3, 7],
                },
            ],
            provenance: Provenance::default(),
        };
        let (text, _) = render_grounded_text(&caption).unwrap();
        assert_eq!(text, "<p> two chairs </p> <ref> face <p> a desk </p> <ref>");
        let a = derive_referent_correspondence(&caption, &text, 1).unwrap();
        assert_eq!(a.iter().map(|r| (r.pos, r.ids.clone())).collect::<Vec<_>>(), vec![(0, vec![3, 7]), (1, vec![12])]);
        assert!(matches!(
            derive_referent_correspondence(&caption, "<ref>", 1),
            Err(InstructError::RefCount { refs: 1, sources: 2 })
        ));
        let empty = GroundedCaption::default();
        assert!(derive_referent_correspondence(&empty, "no refs", 0).unwrap().is_empty());
    }

    #[test]
    fn qa_requires_answer() {
        let lib = TemplateLibrary::builtin();
        let err = convert_task(&chair_caption(), TaskKind::Qa, &lib, false, 0).unwrap_err();
        assert!(matches!(err, InstructError::TaskMismatch { .. }));
        let mut c = chair_caption();
        c.provenance.question = Some("What color is the chair?".into());
        c.provenance.answer = Some("black".into());
        let s = convert_task(&c, TaskKind::Qa, &lib, false, 1).unwrap();
        assert_eq!(s.turns[1].text, "black");
        assert!(s.referents.is_empty());
        assert!(lib.get(TaskKind::Qa).suffixes.iter().any(|suf| s.turns[0].text.ends_with(suf.as_str())));
        let g = convert_task(&c, TaskKind::Qa, &lib, true, 1).unwrap();
        assert!(g.turns[0].text.ends_with(" (with grounding)"));
        assert_eq!(g.turns[1].text, "<p> A black chair </p> <ref> with four legs.");
    }

    #[test]
    fn embodied_is_separate() {
        let lib = TemplateLibrary::builtin();
        assert!(convert_task(&chair_caption(), TaskKind::EmbodiedPlanning, &lib, false, 0).is_err());
        let prompt = crate::llm::builtin_prompt("embodied_dialogue").unwrap();
        let s = convert_embodied(&chair_caption(), TaskKind::EmbodiedDialogue, &lib, &prompt, &LlmClient::fallback(), 3)
            .unwrap();
        assert_eq!(s.turns.len(), 2);
        assert!(check_sample(&s).is_empty());
        assert_eq!(s.referenced_ids(), vec![4]);
    }

    #[test]
    fn reply_splitting() {
        let turns = split_reply("USER: hi\nthere\nASSISTANT: [a lamp 2] is on.\n").unwrap();
        assert_eq!(turns[0].1, "hi there");
        assert!(split_reply("ASSISTANT: x\nUSER: y").is_err());
        assert!(split_reply("preamble\nUSER: x\nASSISTANT: y").is_err());
        assert!(split_reply("USER: x").is_err());
    }
}
