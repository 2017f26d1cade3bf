use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("template {template}: no value for placeholder {{{placeholder}}}")]
    Unresolved { template: String, placeholder: String },
    #[error("unknown built-in template {0}")]
    Unknown(String),
}

/// Plain-text prompt with `{name}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub text: String,
    pub exemplar_slots: usize,
}

/// Final sentence every dialogue-synthesis prompt must end with.
pub const ADHERENCE_SENTENCE: &str = "Please adhere precisely to the format provided above.";

fn placeholder_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z][a-z0-9_]*)\}").expect("regex"))
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let exemplar_slots = placeholder_regex()
            .captures_iter(&text)
            .filter(|c| c[1].starts_with("exemplar"))
            .count();
        Self {
            name: name.into(),
            text,
            exemplar_slots,
        }
    }

    /// `scenario`, `expand` or `dialogue`.
    pub fn builtin(name: &str) -> Result<Self, TemplateError> {
        let text = match name {
            "scenario" => include_str!("../../templates/scenario.txt"),
            "expand" => include_str!("../../templates/expand.txt"),
            "dialogue" => include_str!("../../templates/dialogue.txt"),
            other => return Err(TemplateError::Unknown(other.into())),
        };
        Ok(Self::new(name, text))
    }

    pub fn placeholders(&self) -> Vec<String> {
        let mut names: Vec<String> = placeholder_regex()
            .captures_iter(&self.text)
            .map(|c| c[1].to_string())
            .collect();
        names.dedup();
        names
    }

    /// Substitutes every placeholder; values are inserted literally.
    pub fn instantiate(&self, values: &BTreeMap<&str, String>) -> Result<String, TemplateError> {
        if let Some(missing) = self
            .placeholders()
            .into_iter()
            .find(|p| !values.contains_key(p.as_str()))
        {
            return Err(TemplateError::Unresolved {
                template: self.name.clone(),
                placeholder: missing,
            });
        }
        Ok(placeholder_regex()
            .replace_all(&self.text, |c: &regex::Captures| values[&c[1]].clone())
            .into_owned())
    }
}
