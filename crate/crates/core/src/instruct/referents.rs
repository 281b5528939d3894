use serde::{Deserialize, Serialize};

use super::{InstructionSample, ReferentAnnotation, Turn, P_CLOSE, P_OPEN, REF};
use crate::caption::Span;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupingMode {
    /// One `<ref>` per object.
    OneToOne,
    /// One `<ref>` may stand for several objects.
    OneToMany,
}

/// A `<ref>` occurrence: character offset and the companion phrase range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RefToken {
    pub offset: usize,
    pub phrase_span: Option<Span>,
}

/// Finds every `<ref>` in `text`. A ref directly after `<p> phrase </p> `
/// gets that phrase's character range; a ref directly after another ref
/// shares the previous one's phrase.
pub fn scan_refs(text: &str) -> Vec<RefToken> {
    let closer = format!(" {P_CLOSE} ");
    let opener = format!("{P_OPEN} ");
    let chained = format!("{REF} ");
    let mut out: Vec<RefToken> = Vec::new();
    for (byte, _) in text.match_indices(REF) {
        let prefix = &text[..byte];
        let offset = prefix.chars().count();
        let phrase_span = if let Some(body) = prefix.strip_suffix(&closer) {
            body.rfind(&opener).and_then(|open| {
                let content = &body[open + opener.len()..];
                if content.contains(P_OPEN) || content.contains(P_CLOSE) || content.contains(REF) {
                    return None;
                }
                let start = body[..open + opener.len()].chars().count();
                Some(Span::new(start, start + content.chars().count()))
            })
        } else if prefix.ends_with(&chained) {
            out.last().and_then(|prev| prev.phrase_span)
        } else {
            None
        };
        out.push(RefToken { offset, phrase_span });
    }
    out
}

/// `<p>` and `</p>` must alternate, and every `</p>` must be followed by a
/// single space and `<ref>`.
pub(crate) fn check_phrase_markers(text: &str) -> Vec<String> {
    let mut problems = Vec::new();
    let mut open = false;
    let mut i = 0;
    while i < text.len() {
        let rest = &text[i..];
        if rest.starts_with(P_CLOSE) {
            if !open {
                problems.push(format!("unmatched {P_CLOSE} at byte {i}"));
            }
            open = false;
            if !rest[P_CLOSE.len()..].starts_with(&format!(" {REF}")) {
                problems.push(format!("phrase closed at byte {i} is not followed by {REF}"));
            }
            i += P_CLOSE.len();
        } else if rest.starts_with(P_OPEN) {
            if open {
                problems.push(format!("nested {P_OPEN} at byte {i}"));
            }
            open = true;
            i += P_OPEN.len();
        } else {
            i += rest.chars().next().map_or(1, char::len_utf8);
        }
    }
    if open {
        problems.push(format!("unclosed {P_OPEN}"));
    }
    problems
}

/// Under one-to-many, annotations are kept as they are. Under one-to-one,
/// an annotation with k ids becomes k consecutive single-id annotations and
/// the positions of later refs in the same turn shift accordingly.
pub fn group_referents(annotations: &[ReferentAnnotation], mode: GroupingMode) -> Vec<ReferentAnnotation> {
    match mode {
        GroupingMode::OneToMany => annotations.to_vec(),
        GroupingMode::OneToOne => {
            let mut sorted = annotations.to_vec();
            sorted.sort_by_key(|a| (a.turn, a.pos));
            let mut out = Vec::new();
            let mut turn = usize::MAX;
            let mut next = 0;
            for a in sorted {
                if a.turn != turn {
                    turn = a.turn;
                    next = 0;
                }
                for &id in &a.ids {
                    out.push(ReferentAnnotation {
                        turn: a.turn,
                        pos: next,
                        ids: vec![id],
                        phrase_span: a.phrase_span,
                    });
                    next += 1;
                }
            }
            out
        }
    }
}

pub(crate) fn regroup_sample(sample: &InstructionSample, mode: GroupingMode) -> InstructionSample {
    if mode == GroupingMode::OneToMany {
        return sample.clone();
    }
    let turns = sample
        .turns
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut widths: Vec<(usize, usize)> = sample
                .referents
                .iter()
                .filter(|r| r.turn == i)
                .map(|r| (r.pos, r.ids.len().max(1)))
                .collect();
            widths.sort_unstable();
            let mut text = String::with_capacity(t.text.len());
            let mut last = 0;
            for (k, (byte, _)) in t.text.match_indices(REF).enumerate() {
                text.push_str(&t.text[last..byte]);
                let n = widths.get(k).map_or(1, |w| w.1);
                text.push_str(&vec![REF; n].join(" "));
                last = byte + REF.len();
            }
            text.push_str(&t.text[last..]);
            Turn { role: t.role, text }
        })
        .collect::<Vec<_>>();
    let mut referents = group_referents(&sample.referents, mode);
    for r in &mut referents {
        r.phrase_span = scan_refs(&turns[r.turn].text).get(r.pos).and_then(|tok| tok.phrase_span);
    }
    InstructionSample {
        scene_id: sample.scene_id.clone(),
        task: sample.task,
        turns,
        referents,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instruct::{check_sample, Role, TaskKind};

    fn ann(turn: usize, pos: usize, ids: &[u32]) -> ReferentAnnotation {
        ReferentAnnotation {
            turn,
            pos,
            ids: ids.to_vec(),
            phrase_span: None,
        }
    }

    #[test]
    fn scan_finds_phrases() {
        let text = "<p> two chairs </p> <ref> near <p> a désk </p> <ref> and <ref>";
        let toks = scan_refs(text);
        assert_eq!(toks.len(), 3);
        assert_eq!(toks[0].phrase_span, Some(Span::new(4, 14)));
        let chars: Vec<char> = text.chars().collect();
        let s = toks[1].phrase_span.unwrap();
        assert_eq!(chars[s.start..s.end].iter().collect::<String>(), "a désk");
        assert_eq!(toks[2].phrase_span, None);
        assert_eq!(chars[toks[2].offset..toks[2].offset + 5].iter().collect::<String>(), "<ref>");
    }

    #[test]
    fn one_to_one_expands() {
        let a = vec![ann(1, 0, &[3, 7]), ann(1, 1, &[12])];
        let g = group_referents(&a, GroupingMode::OneToOne);
        assert_eq!(g, vec![ann(1, 0, &[3]), ann(1, 1, &[7]), ann(1, 2, &[12])]);
        assert_eq!(group_referents(&a, GroupingMode::OneToMany), a);
        let singles = vec![ann(0, 0, &[1]), ann(1, 0, &[2])];
        assert_eq!(group_referents(&singles, GroupingMode::OneToOne), singles);
    }

    #[test]
    fn regroup_rewrites_tokens() {
        let sample = InstructionSample {
            scene_id: "s".into(),
            task: TaskKind::MultiGrounding,
            turns: vec![
                Turn {
                    role: Role::User,
                    text: "Find the chairs.".into(),
                },
                Turn {
                    role: Role::Assistant,
                    text: "<p> two chairs </p> <ref> and <p> a desk </p> <ref>.".into(),
                },
            ],
            referents: vec![
                ReferentAnnotation {
                    turn: 1,
                    pos: 0,
                    ids: vec![3, 7],
                    phrase_span: Some(Span::new(4, 14)),
                },
                ReferentAnnotation {
                    turn: 1,
                    pos: 1,
                    ids: vec![12],
                    phrase_span: Some(Span::new(34, 40)),
                },
            ],
        };
        assert!(check_sample(&sample).is_empty());
        let one = sample.regroup(GroupingMode::OneToOne);
        assert_eq!(one.turns[1].text, "<p> two chairs </p> <ref> <ref> and <p> a desk </p> <ref>.");
        assert!(check_sample(&one).is_empty(), "{:?}", check_sample(&one));
        assert_eq!(one.referents.len(), 3);
        assert_eq!(one.referents[1].phrase_span, Some(Span::new(4, 14)));
        assert_eq!(one.referents[2].phrase_span, Some(Span::new(40, 46)));
        assert_eq!(one.referenced_ids(), sample.referenced_ids());
    }

    #[test]
    fn marker_problems() {
        assert!(check_phrase_markers("<p> a </p> <ref>").is_empty());
        assert_eq!(check_phrase_markers("<p> a </p> b").len(), 1);
        assert_eq!(check_phrase_markers("<p> a <p> b </p> <ref>").len(), 1);
        assert_eq!(check_phrase_markers("a </p> <ref>").len(), 1);
        assert_eq!(check_phrase_markers("<p> a").len(), 1);
    }
}
