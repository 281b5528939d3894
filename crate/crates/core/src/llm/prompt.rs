use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::LlmError;

pub type Bindings = BTreeMap<String, String>;

/// A named system prompt plus a user template with `{placeholder}` slots.
///
/// Placeholder names are runs of letters, digits, spaces, `_` or `-` between
/// braces; any other brace is literal text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub name: String,
    pub system: String,
    pub user_template: String,
}

pub const BUILTIN_PROMPTS: [(&str, &str); 5] = [
    (
        "object_condense",
        include_str!("../../data/prompts/object_condense.json"),
    ),
    (
        "scene_caption",
        include_str!("../../data/prompts/scene_caption.json"),
    ),
    (
        "relation_merge",
        include_str!("../../data/prompts/relation_merge.json"),
    ),
    (
        "embodied_dialogue",
        include_str!("../../data/prompts/embodied_dialogue.json"),
    ),
    (
        "embodied_planning",
        include_str!("../../data/prompts/embodied_planning.json"),
    ),
];

pub fn builtin_prompt(name: &str) -> Result<PromptSpec, LlmError> {
    let (_, text) = BUILTIN_PROMPTS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| LlmError::UnknownPrompt(name.to_string()))?;
    serde_json::from_str(text).map_err(|e| LlmError::InvalidPrompt(e.to_string()))
}

impl PromptSpec {
    /// Loads `<dir>/<name>.json`, falling back to the built-in copy.
    pub fn load(dir: Option<&Path>, name: &str) -> Result<PromptSpec, LlmError> {
        if let Some(dir) = dir {
            let path = dir.join(format!("{name}.json"));
            if path.exists() {
                let text = std::fs::read_to_string(&path).map_err(|source| LlmError::Store {
                    path: path.display().to_string(),
                    source,
                })?;
                return serde_json::from_str(&text)
                    .map_err(|e| LlmError::InvalidPrompt(format!("{}: {e}", path.display())));
            }
        }
        builtin_prompt(name)
    }

    pub fn placeholders(&self) -> Vec<String> {
        let mut names = Vec::new();
        for text in [&self.system, &self.user_template] {
            for_each_segment(text, |seg| {
                if let Segment::Slot(name) = seg {
                    if !names.iter().any(|n| n == name) {
                        names.push(name.to_string());
                    }
                }
            });
        }
        names
    }
}

enum Segment<'a> {
    Text(&'a str),
    Slot(&'a str),
}

fn is_slot_name(s: &str) -> bool {
    !s.is_empty()
        && !s.starts_with(' ')
        && !s.ends_with(' ')
        && s
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, ' ' | '_' | '-'))
}

fn for_each_segment<'a>(text: &'a str, mut f: impl FnMut(Segment<'a>)) {
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find(['{', '}']) {
            Some(close) if after.as_bytes()[close] == b'}' && is_slot_name(&after[..close]) => {
                f(Segment::Text(&rest[..open]));
                f(Segment::Slot(&after[..close]));
                rest = &after[close + 1..];
            }
            _ => {
                f(Segment::Text(&rest[..=open]));
                rest = after;
            }
        }
    }
    f(Segment::Text(rest));
}

fn substitute(text: &str, bindings: &Bindings) -> Result<String, LlmError> {
    let mut out = String::with_capacity(text.len());
    let mut missing = None;
    for_each_segment(text, |seg| match seg {
        Segment::Text(t) => out.push_str(t),
        Segment::Slot(name) => match bindings.get(name) {
            Some(v) => out.push_str(v),
            None => {
                missing.get_or_insert_with(|| name.to_string());
            }
        },
    });
    match missing {
        Some(name) => Err(LlmError::Unbound(name)),
        None => Ok(out),
    }
}

/// Resolves both halves of a prompt. Returns `(system, user)`.
pub fn render_prompt(spec: &PromptSpec, bindings: &Bindings) -> Result<(String, String), LlmError> {
    Ok((
        substitute(&spec.system, bindings)?,
        substitute(&spec.user_template, bindings)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(user: &str) -> PromptSpec {
        PromptSpec {
            name: "t".into(),
            system: "sys".into(),
            user_template: user.into(),
        }
    }

    fn bind(pairs: &[(&str, &str)]) -> Bindings {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn no_placeholders_is_identity() {
        let s = spec("plain {not a slot!} text {");
        let (_, user) = render_prompt(&s, &Bindings::new()).unwrap();
        assert_eq!(user, "plain {not a slot!} text {");
    }

    #[test]
    fn caption_slot_is_verbatim() {
        let s = spec("Scene: {Grounded scene caption}");
        let caption = "the [white nightstand 12] is {odd} here";
        let (_, user) =
            render_prompt(&s, &bind(&[("Grounded scene caption", caption)])).unwrap();
        assert!(user.contains(caption));
        assert_eq!(user, format!("Scene: {caption}"));
    }

    #[test]
    fn adjacent_placeholders_keep_order() {
        let s = spec("<{a}{b}>");
        let (_, user) = render_prompt(&s, &bind(&[("a", "XY"), ("b", "Z")])).unwrap();
        let expected: String = ["<", "XY", "Z", ">"].concat();
        assert_eq!(user, expected);
    }

    #[test]
    fn unbound_names_the_slot() {
        let err = render_prompt(&spec("{objects}"), &Bindings::new()).unwrap_err();
        assert!(matches!(err, LlmError::Unbound(ref n) if n == "objects"));
    }

    #[test]
    fn builtins_load() {
        for (name, _) in BUILTIN_PROMPTS {
            let p = builtin_prompt(name).unwrap();
            assert_eq!(p.name, name);
            assert!(!p.placeholders().is_empty());
        }
        assert_eq!(
            builtin_prompt("embodied_dialogue").unwrap().placeholders(),
            vec!["Grounded scene caption".to_string()]
        );
    }
}
