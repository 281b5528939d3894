//! `[phrase id id ...]` grounded markup.
//!
//! Inside a bracket the ids are the maximal trailing run of
//! whitespace-separated non-negative integers; everything before them
//! (trimmed) is the phrase. Offsets are in characters.

use std::fmt;

use thiserror::Error;

use super::{GroundedCaption, PhraseCorrespondence, Span};
use crate::scene::ObjectId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarkupErrorKind {
    UnclosedBracket,
    UnmatchedClose,
    NestedBracket,
    MissingIds,
    EmptyPhrase,
    IdOutOfRange,
    /// Caption text itself contains a bracket character.
    BracketInText,
    /// Phrase would be re-read as ids, or has surrounding whitespace.
    AmbiguousPhrase,
    BadSpan,
    OverlappingSpans,
    EmptyIds,
}

impl fmt::Display for MarkupErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MarkupErrorKind::UnclosedBracket => "unclosed '['",
            MarkupErrorKind::UnmatchedClose => "']' without matching '['",
            MarkupErrorKind::NestedBracket => "nested '['",
            MarkupErrorKind::MissingIds => "bracket has no trailing object ids",
            MarkupErrorKind::EmptyPhrase => "bracket has no phrase",
            MarkupErrorKind::IdOutOfRange => "object id out of range",
            MarkupErrorKind::BracketInText => "text contains a bracket",
            MarkupErrorKind::AmbiguousPhrase => "phrase cannot round-trip through markup",
            MarkupErrorKind::BadSpan => "span out of bounds or empty",
            MarkupErrorKind::OverlappingSpans => "overlapping spans",
            MarkupErrorKind::EmptyIds => "correspondence without ids",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("{kind} at character {offset}")]
pub struct MarkupError {
    pub offset: usize,
    pub kind: MarkupErrorKind,
}

fn err(offset: usize, kind: MarkupErrorKind) -> MarkupError {
    MarkupError { offset, kind }
}

fn is_id_token(t: &str) -> bool {
    !t.is_empty() && t.bytes().all(|b| b.is_ascii_digit())
}

/// Splits bracket content into (phrase, ids). `None` ids means the trailing
/// token was not numeric.
fn split_content(content: &str) -> (&str, Vec<&str>) {
    let mut rest = content.trim_end();
    let mut ids = Vec::new();
    loop {
        let start = rest
            .char_indices()
            .rev()
            .find(|(_, c)| c.is_whitespace())
            .map_or(0, |(i, c)| i + c.len_utf8());
        let token = &rest[start..];
        if !is_id_token(token) {
            break;
        }
        ids.push(token);
        rest = rest[..start].trim_end();
        if rest.is_empty() {
            break;
        }
    }
    ids.reverse();
    (rest.trim_start(), ids)
}

/// A phrase that serializes and re-parses to itself.
pub(crate) fn is_valid_phrase(phrase: &str) -> bool {
    if phrase.is_empty() || phrase.trim() != phrase || phrase.contains(['[', ']']) {
        return false;
    }
    let (back, ids) = split_content(phrase);
    ids.is_empty() && back == phrase
}

/// Strips markup, returning the plain text and one correspondence per bracket.
pub fn parse_grounded_markup(raw: &str) -> Result<(String, Vec<PhraseCorrespondence>), MarkupError> {
    let mut text = String::with_capacity(raw.len());
    let mut out_chars = 0usize;
    let mut corrs = Vec::new();
    let mut open: Option<(usize, String)> = None;
    for (pos, c) in raw.chars().enumerate() {
        match (c, &mut open) {
            ('[', None) => open = Some((pos, String::new())),
            ('[', Some(_)) => return Err(err(pos, MarkupErrorKind::NestedBracket)),
            (']', None) => return Err(err(pos, MarkupErrorKind::UnmatchedClose)),
            (']', Some((start, content))) => {
                let start = *start;
                let (phrase, id_tokens) = split_content(content);
                if id_tokens.is_empty() {
                    return Err(err(start, MarkupErrorKind::MissingIds));
                }
                if phrase.is_empty() {
                    return Err(err(start, MarkupErrorKind::EmptyPhrase));
                }
                let ids = id_tokens
                    .iter()
                    .map(|t| t.parse::<ObjectId>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| err(start, MarkupErrorKind::IdOutOfRange))?;
                let len = phrase.chars().count();
                text.push_str(phrase);
                corrs.push(PhraseCorrespondence {
                    span: Span::new(out_chars, out_chars + len),
                    ids,
                });
                out_chars += len;
                open = None;
            }
            (_, Some((_, content))) => content.push(c),
            (_, None) => {
                text.push(c);
                out_chars += 1;
            }
        }
    }
    if let Some((start, _)) = open {
        return Err(err(start, MarkupErrorKind::UnclosedBracket));
    }
    Ok((text, corrs))
}

/// Re-inserts brackets: the inverse of [`parse_grounded_markup`].
pub fn serialize_grounded_markup(caption: &GroundedCaption) -> Result<String, MarkupError> {
    if let Some(pos) = caption.text.chars().position(|c| c == '[' || c == ']') {
        return Err(err(pos, MarkupErrorKind::BracketInText));
    }
    let chars: Vec<char> = caption.text.chars().collect();
    let mut corrs: Vec<&PhraseCorrespondence> = caption.correspondences.iter().collect();
    corrs.sort_by_key(|c| (c.span.start, c.span.end));
    let mut out = String::with_capacity(caption.text.len() + 8 * corrs.len());
    let mut cursor = 0usize;
    for c in corrs {
        let Span { start, end } = c.span;
        if start >= end || end > chars.len() {
            return Err(err(start, MarkupErrorKind::BadSpan));
        }
        if start < cursor {
            return Err(err(start, MarkupErrorKind::OverlappingSpans));
        }
        if c.ids.is_empty() {
            return Err(err(start, MarkupErrorKind::EmptyIds));
        }
        let phrase: String = chars[start..end].iter().collect();
        if !is_valid_phrase(&phrase) {
            return Err(err(start, MarkupErrorKind::AmbiguousPhrase));
        }
        out.extend(&chars[cursor..start]);
        out.push('[');
        out.push_str(&phrase);
        for id in &c.ids {
            out.push(' ');
            out.push_str(&id.to_string());
        }
        out.push(']');
        cursor = end;
    }
    out.extend(&chars[cursor..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corr(s: usize, e: usize, ids: &[ObjectId]) -> PhraseCorrespondence {
        PhraseCorrespondence {
            span: Span::new(s, e),
            ids: ids.to_vec(),
        }
    }

    #[test]
    fn nightstand_example() {
        let (text, c) = parse_grounded_markup("the [white nightstand 12] here").unwrap();
        assert_eq!(text, "the white nightstand here");
        assert_eq!(c, vec![corr(4, 20, &[12])]);
        assert_eq!(&text[4..20], "white nightstand");
    }

    #[test]
    fn plural_ids() {
        // hand parse: tokens [two, brown, chairs, 3, 7]; trailing ints 3 7
        let (text, c) = parse_grounded_markup("[two brown chairs 3 7]").unwrap();
        assert_eq!(text, "two brown chairs");
        assert_eq!(c, vec![corr(0, 16, &[3, 7])]);
    }

    #[test]
    fn no_brackets_is_identity() {
        let (text, c) = parse_grounded_markup("just words, 12 of them.").unwrap();
        assert_eq!(text, "just words, 12 of them.");
        assert!(c.is_empty());
    }

    #[test]
    fn errors_carry_offsets() {
        let e = parse_grounded_markup("ab [chair 3").unwrap_err();
        assert_eq!((e.offset, e.kind), (3, MarkupErrorKind::UnclosedBracket));
        let e = parse_grounded_markup("ab ] c").unwrap_err();
        assert_eq!((e.offset, e.kind), (3, MarkupErrorKind::UnmatchedClose));
        let e = parse_grounded_markup("[a [b 1] 2]").unwrap_err();
        assert_eq!((e.offset, e.kind), (3, MarkupErrorKind::NestedBracket));
        let e = parse_grounded_markup("x [a chair]").unwrap_err();
        assert_eq!((e.offset, e.kind), (2, MarkupErrorKind::MissingIds));
        let e = parse_grounded_markup("[12]").unwrap_err();
        assert_eq!(e.kind, MarkupErrorKind::EmptyPhrase);
        let e = parse_grounded_markup("[chair 99999999999]").unwrap_err();
        assert_eq!(e.kind, MarkupErrorKind::IdOutOfRange);
    }

    #[test]
    fn unicode_offsets_are_characters() {
        let (text, c) = parse_grounded_markup("é [café table 2]").unwrap();
        assert_eq!(text, "é café table");
        assert_eq!(c[0].span, Span::new(2, 12));
    }

    #[test]
    fn adjacent_brackets_stay_separate() {
        let raw = "[red cup 1][blue cup 2] on it";
        let (text, corrs) = parse_grounded_markup(raw).unwrap();
        let cap = GroundedCaption {
            scene_id: "s".into(),
            text,
            correspondences: corrs,
            ..Default::default()
        };
        assert_eq!(cap.correspondences.len(), 2);
        assert_eq!(serialize_grounded_markup(&cap).unwrap(), raw);
    }

    #[test]
    fn serialize_rejects_unsafe_text() {
        let mut cap = GroundedCaption {
            scene_id: "s".into(),
            text: "a [weird] text".into(),
            ..Default::default()
        };
        assert_eq!(
            serialize_grounded_markup(&cap).unwrap_err().kind,
            MarkupErrorKind::BracketInText
        );
        cap.text = "room 12 is big".into();
        cap.correspondences = vec![corr(0, 7, &[1])];
        assert_eq!(
            serialize_grounded_markup(&cap).unwrap_err().kind,
            MarkupErrorKind::AmbiguousPhrase
        );
        cap.correspondences = vec![corr(0, 4, &[1]), corr(2, 6, &[2])];
        assert_eq!(
            serialize_grounded_markup(&cap).unwrap_err().kind,
            MarkupErrorKind::OverlappingSpans
        );
        cap.correspondences.clear();
        assert_eq!(serialize_grounded_markup(&cap).unwrap(), "room 12 is big");
    }

    #[test]
    fn phrase_validity() {
        assert!(is_valid_phrase("a white nightstand"));
        assert!(is_valid_phrase("2 chairs"));
        assert!(!is_valid_phrase("chair 2"));
        assert!(!is_valid_phrase(" chair"));
        assert!(!is_valid_phrase(""));
        assert!(!is_valid_phrase("a [b]"));
    }
}
