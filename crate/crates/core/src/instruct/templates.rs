use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{InstructError, TaskKind};

/// Placeholders a template may use.
pub const PLACEHOLDERS: [&str; 8] = [
    "category",
    "phrase",
    "ref",
    "description",
    "question",
    "answer",
    "caption",
    "count",
];

const BUILTIN: &str = include_str!("../../data/templates.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerTemplates {
    pub single: Vec<String>,
    pub multiple: Vec<String>,
    pub none: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskTemplates {
    pub questions: Vec<String>,
    pub answers: AnswerTemplates,
    /// Appended to the question when the expected answer is a bare phrase.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub suffixes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TemplateLibrary {
    tasks: BTreeMap<TaskKind, TaskTemplates>,
}

/// Names between single braces, e.g. `{ref}`. Braces around anything other
/// than lowercase letters and underscores are literal text.
pub(crate) fn placeholders_of(template: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close)
                if close > 0
                    && after[..close].chars().all(|c| c.is_ascii_lowercase() || c == '_') =>
            {
                out.push(&after[..close]);
                rest = &after[close + 1..];
            }
            _ => rest = after,
        }
    }
    out
}

/// Required placeholders of a task's questions and of its grounded and
/// empty answers.
fn required(task: TaskKind) -> (&'static [&'static str], &'static [&'static str], &'static [&'static str]) {
    match task {
        TaskKind::Detection => (&["category"], &["ref"], &[]),
        TaskKind::SingleGrounding | TaskKind::MultiGrounding => (&["description"], &["ref"], &[]),
        TaskKind::DenseCaptioning => (&["ref"], &["caption"], &["caption"]),
        TaskKind::Qa => (&["question"], &["answer"], &["answer"]),
        TaskKind::SceneCaptioning | TaskKind::EmbodiedDialogue | TaskKind::EmbodiedPlanning => {
            (&[], &["caption"], &["caption"])
        }
    }
}

impl TemplateLibrary {
    pub fn builtin() -> Self {
        Self::from_json_str(BUILTIN).expect("built-in template library is valid")
    }

    pub fn load(path: &Path) -> Result<Self, InstructError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| InstructError::Template(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<Self, InstructError> {
        let lib: TemplateLibrary =
            serde_json::from_str(text).map_err(|e| InstructError::Template(e.to_string()))?;
        lib.validate()?;
        Ok(lib)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("templates serialize")
    }

    pub fn get(&self, task: TaskKind) -> &TaskTemplates {
        &self.tasks[&task]
    }

    fn validate(&self) -> Result<(), InstructError> {
        let err = |task: TaskKind, msg: String| Err(InstructError::Template(format!("{task}: {msg}")));
        for task in TaskKind::ALL {
            let Some(t) = self.tasks.get(&task) else {
                return err(task, "missing".into());
            };
            if t.questions.len() < 10 {
                return err(task, format!("{} question templates, need at least 10", t.questions.len()));
            }
            let (q_req, a_req, none_req) = required(task);
            let groups: [(&str, &[String], &[&str]); 5] = [
                ("question", &t.questions, q_req),
                ("single answer", &t.answers.single, a_req),
                ("multiple answer", &t.answers.multiple, a_req),
                ("none answer", &t.answers.none, none_req),
                ("suffix", &t.suffixes, &[]),
            ];
            for (what, list, req) in groups {
                if list.is_empty() && what != "suffix" {
                    return err(task, format!("no {what} templates"));
                }
                let mut seen = BTreeSet::new();
                for template in list {
                    if !seen.insert(template) {
                        return err(task, format!("duplicate {what} template {template:?}"));
                    }
                    let names = placeholders_of(template);
                    if let Some(bad) = names.iter().find(|n| !PLACEHOLDERS.contains(n)) {
                        return err(task, format!("unknown placeholder {{{bad}}} in {template:?}"));
                    }
                    if let Some(missing) = req.iter().find(|r| !names.contains(r)) {
                        return err(task, format!("{what} template {template:?} lacks {{{missing}}}"));
                    }
                    if names.iter().filter(|n| **n == "ref").count() > 1 {
                        return err(task, format!("{template:?} uses {{ref}} more than once"));
                    }
                    if what == "none answer" && names.contains(&"ref") {
                        return err(task, format!("none answer {template:?} must not point at objects"));
                    }
                    if what == "suffix" && !names.is_empty() {
                        return err(task, format!("suffix {template:?} takes no placeholders"));
                    }
                }
            }
        }
        Ok(())
    }
}

impl Default for TemplateLibrary {
    fn default() -> Self {
        Self::builtin()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_is_valid_and_large_enough() {
        let lib = TemplateLibrary::builtin();
        for task in TaskKind::ALL {
            let t = lib.get(task);
            assert!(t.questions.len() >= 10, "{task}");
            assert!(!t.answers.none.is_empty(), "{task}");
        }
        assert!(lib.get(TaskKind::DenseCaptioning).questions.contains(&"Describe the {category} {ref} in the scene.".to_string()));
        assert_eq!(TemplateLibrary::from_json_str(&lib.to_json_pretty()).unwrap(), lib);
    }

    #[test]
    fn placeholder_scanner() {
        assert_eq!(placeholders_of("a {ref} b {x_y} {A} {} {1}"), vec!["ref", "x_y"]);
        assert_eq!(placeholders_of("{{ref}}"), vec!["ref"]);
    }

    #[test]
    fn rejects_broken_templates() {
        let lib = TemplateLibrary::builtin();
        let mut value: serde_json::Value = serde_json::from_str(&lib.to_json_pretty()).unwrap();
        value["detection"]["questions"][0] = "Find everything {colour}.".into();
        let err = TemplateLibrary::from_json_str(&value.to_string()).unwrap_err();
        assert!(err.to_string().contains("unknown placeholder {colour}"), "{err}");

        let mut value: serde_json::Value = serde_json::from_str(&lib.to_json_pretty()).unwrap();
        value["detection"]["answers"]["single"][0] = "There it is.".into();
        let err = TemplateLibrary::from_json_str(&value.to_string()).unwrap_err();
        assert!(err.to_string().contains("lacks {ref}"), "{err}");

        let mut value: serde_json::Value = serde_json::from_str(&lib.to_json_pretty()).unwrap();
        value.as_object_mut().unwrap().remove("qa");
        assert!(TemplateLibrary::from_json_str(&value.to_string()).is_err());
    }
}
