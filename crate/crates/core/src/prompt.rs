//! The two routing prompts. Template text lives in `templates/` and is
//! substituted in a single pass, so placeholder-like text inside a menu or a
//! query is never expanded.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DESCRIPTIVE_TEMPLATE: &str = include_str!("../templates/template_descriptive.txt");
pub const FLATTENED_TEMPLATE: &str = include_str!("../templates/template_flattened.txt");

/// The instruction line both templates share.
pub const OUTPUT_INSTRUCTION: &str = "Output only the path.";

/// How the menu is presented to the routing model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutingCondition {
    DescriptiveMenu,
    FlattenedPaths,
}

impl RoutingCondition {
    pub const ALL: [RoutingCondition; 2] = [Self::DescriptiveMenu, Self::FlattenedPaths];

    /// Row label used in accuracy tables.
    pub fn table_label(self) -> &'static str {
        match self {
            Self::DescriptiveMenu => "Descriptive Menu",
            Self::FlattenedPaths => "Flattened Paths",
        }
    }
}

impl fmt::Display for RoutingCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::DescriptiveMenu => "descriptive_menu",
            Self::FlattenedPaths => "flattened_paths",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("routing context is empty")]
    EmptyContext,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptText {
    pub content: String,
    pub condition: RoutingCondition,
    pub query: String,
}

pub fn build_descriptive_prompt(menu_text: &str, query: &str) -> Result<PromptText, PromptError> {
    build(RoutingCondition::DescriptiveMenu, menu_text, query)
}

pub fn build_flattened_prompt(paths_text: &str, query: &str) -> Result<PromptText, PromptError> {
    build(RoutingCondition::FlattenedPaths, paths_text, query)
}

/// Builds the prompt for `condition` with an already rendered context.
pub fn build(condition: RoutingCondition, context: &str, query: &str) -> Result<PromptText, PromptError> {
    if query.trim().is_empty() {
        return Err(PromptError::EmptyQuery);
    }
    if context.is_empty() {
        return Err(PromptError::EmptyContext);
    }
    let query = query.strip_suffix('\n').map(|q| q.strip_suffix('\r').unwrap_or(q)).unwrap_or(query);
    let (template, slot) = match condition {
        RoutingCondition::DescriptiveMenu => (DESCRIPTIVE_TEMPLATE, "MENU"),
        RoutingCondition::FlattenedPaths => (FLATTENED_TEMPLATE, "PATHS"),
    };
    let content = fill_template(template, &[(slot, context), ("QUERY", query)]);
    Ok(PromptText { content, condition, query: query.to_string() })
}

/// Replaces `{{NAME}}` placeholders in one left-to-right pass. Unknown
/// placeholders are left as written.
pub fn fill_template(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + values.iter().map(|(_, v)| v.len()).sum::<usize>());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        match after.find("}}") {
            Some(end) => {
                let name = &after[..end];
                match values.iter().find(|(k, _)| *k == name) {
                    Some((_, value)) => out.push_str(value),
                    None => out.push_str(&rest[start..start + 2 + end + 2]),
                }
                rest = &after[end + 2..];
            }
            None => {
                out.push_str(&rest[start..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}
