//! IVR menu trees: parsing from the JSON menu document, validation,
//! flattening to terminal paths, and the two routing-context renderings.
//!
//! A menu document looks like
//!
//! ```json
//! {"name": "AgentNet IVR",
//!  "root": {"label": "Root Menu", "kind": "menu", "prompt_text": "...",
//!           "children": [{"label": "Check Balance", "digit": "1",
//!                         "kind": "action", "action_type": "self_service"}]}}
//! ```
//!
//! The root is never selected by a keypress and carries no digit. Digit `0`
//! is reserved for navigation ("return" / "repeat") options, which never
//! appear in flattened output.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::path::{Digit, DtmfPath};

/// Maximum key-sequence length of any node.
pub const MAX_DEPTH: usize = 10;

/// Separator between breadcrumb labels in flattened context lines.
pub const BREADCRUMB_SEPARATOR: &str = " -> ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Menu,
    Action,
    Navigation,
}

impl NodeKind {
    fn parse(text: &str) -> Option<Self> {
        match text {
            "menu" => Some(Self::Menu),
            "action" => Some(Self::Action),
            "navigation" => Some(Self::Navigation),
            _ => None,
        }
    }
}

/// What happens when an action option is selected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceType {
    SelfService,
    AgentHandoff,
}

impl ServiceType {
    fn parse(text: &str) -> Option<Self> {
        match text {
            "self_service" => Some(Self::SelfService),
            "agent_handoff" => Some(Self::AgentHandoff),
            _ => None,
        }
    }

    pub fn as_key(self) -> &'static str {
        match self {
            Self::SelfService => "self_service",
            Self::AgentHandoff => "agent_handoff",
        }
    }

    /// Human-facing name used in the paths table.
    pub fn display_name(self) -> &'static str {
        match self {
            Self::SelfService => "Self-service",
            Self::AgentHandoff => "Agent Handoff",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MenuNode {
    pub label: String,
    /// `None` only on the root.
    pub digit: Option<Digit>,
    pub kind: NodeKind,
    /// `Some` exactly when `kind` is [`NodeKind::Action`].
    pub action_type: Option<ServiceType>,
    pub children: Vec<MenuNode>,
    /// Spoken message of a menu node; empty for other kinds.
    pub prompt_text: String,
}

impl MenuNode {
    pub fn menu(label: impl Into<String>, digit: Option<Digit>, prompt_text: impl Into<String>, children: Vec<MenuNode>) -> Self {
        Self {
            label: label.into(),
            digit,
            kind: NodeKind::Menu,
            action_type: None,
            children,
            prompt_text: prompt_text.into(),
        }
    }

    pub fn action(label: impl Into<String>, digit: Digit, service: ServiceType) -> Self {
        Self {
            label: label.into(),
            digit: Some(digit),
            kind: NodeKind::Action,
            action_type: Some(service),
            children: Vec::new(),
            prompt_text: String::new(),
        }
    }

    pub fn navigation(label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            digit: Digit::new(0),
            kind: NodeKind::Navigation,
            action_type: None,
            children: Vec::new(),
            prompt_text: String::new(),
        }
    }

    pub fn child(&self, digit: Digit) -> Option<&MenuNode> {
        self.children.iter().find(|c| c.digit == Some(digit))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MenuTree {
    pub name: String,
    pub root: MenuNode,
}

impl MenuTree {
    /// Walks `path` digit by digit from the root.
    pub fn resolve(&self, path: &DtmfPath) -> Option<&MenuNode> {
        path.digits()
            .iter()
            .try_fold(&self.root, |node, digit| node.child(*digit))
    }

    pub fn action_count(&self) -> usize {
        fn count(node: &MenuNode) -> usize {
            usize::from(node.kind == NodeKind::Action) + node.children.iter().map(count).sum::<usize>()
        }
        count(&self.root)
    }

    /// SHA-256 of the compact menu document, hex encoded.
    pub fn content_hash(&self) -> String {
        let doc = serde_json::to_vec(&DocDocument::from(self)).expect("menu document serializes");
        hex::encode(Sha256::digest(&doc))
    }
}

/// One flattened endpoint: key sequence, labels along the way, and service type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TerminalPath {
    pub path: DtmfPath,
    pub breadcrumb: Vec<String>,
    pub service_type: ServiceType,
}

impl TerminalPath {
    pub fn breadcrumb_text(&self) -> String {
        self.breadcrumb.join(BREADCRUMB_SEPARATOR)
    }

    pub fn leaf_label(&self) -> &str {
        self.breadcrumb.last().map(String::as_str).unwrap_or_default()
    }
}

/// Where in the tree something was found: the node's key sequence, or its
/// parent's plus a child index when the node itself has no usable digit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeLocation(String);

impl NodeLocation {
    fn root() -> Self {
        Self("root".to_string())
    }

    fn of(path: Option<&DtmfPath>) -> Self {
        match path {
            Some(p) => Self(p.to_string()),
            None => Self::root(),
        }
    }

    fn indexed(parent: Option<&DtmfPath>, index: usize) -> Self {
        Self(format!("{}/children[{index}]", Self::of(parent).0))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeLocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ViolationKind {
    #[error("root must be a menu")]
    RootNotMenu,
    #[error("root must not carry a digit")]
    RootHasDigit,
    #[error("non-root node has no digit")]
    MissingDigit,
    #[error("label is empty")]
    EmptyLabel,
    #[error("digit {0} is used by more than one sibling")]
    DuplicateDigit(Digit),
    #[error("{0:?} node has children")]
    ChildrenUnderNonMenu(NodeKind),
    #[error("menu has no selectable (non-navigation) option")]
    NoSelectableOption,
    #[error("action node has no action_type")]
    MissingActionType,
    #[error("{0:?} node has an action_type")]
    UnexpectedActionType(NodeKind),
    #[error("navigation node uses digit {0}; navigation options must use 0")]
    NavigationDigit(Digit),
    #[error("{0:?} node has prompt_text")]
    UnexpectedPromptText(NodeKind),
    #[error("key sequence longer than {MAX_DEPTH}")]
    TooDeep,
}

/// One broken invariant, located by the offending node's key sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub at: NodeLocation,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "at {}: {}", self.at, self.kind)
    }
}

#[derive(Debug, Error)]
pub enum MenuError {
    #[error("malformed menu JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("at {at}: missing field(s) {}", fields.join(", "))]
    MissingFields { at: NodeLocation, fields: Vec<&'static str> },
    #[error("at {at}: unknown kind {kind:?} (expected menu, action or navigation)")]
    UnknownKind { at: NodeLocation, kind: String },
    #[error("at {at}: unknown action_type {value:?} (expected self_service or agent_handoff)")]
    UnknownActionType { at: NodeLocation, value: String },
    #[error("at {at}: digit {value:?} is not a single character 0-9")]
    InvalidDigit { at: NodeLocation, value: String },
    #[error("at {at}: digit {digit} is used by more than one child")]
    DuplicateDigit { at: NodeLocation, digit: Digit },
    #[error("at {at}: {kind:?} node has children; only menus may have children")]
    ChildUnderNonMenu { at: NodeLocation, kind: NodeKind },
    #[error("menu violates {} invariant(s): {}", .0.len(), join_violations(.0))]
    Invalid(Vec<Violation>),
}

fn join_violations(violations: &[Violation]) -> String {
    violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

// Wire shape of the menu document. Every field is optional here so that
// missing ones are reported with their node location instead of a bare
// serde message.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    root: Option<DocNode>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocNode {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    digit: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    action_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prompt_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    children: Option<Vec<DocNode>>,
}

impl From<&MenuTree> for DocDocument {
    fn from(tree: &MenuTree) -> Self {
        Self {
            name: Some(tree.name.clone()),
            root: Some(DocNode::from(&tree.root)),
        }
    }
}

impl From<&MenuNode> for DocNode {
    fn from(node: &MenuNode) -> Self {
        let kind = match node.kind {
            NodeKind::Menu => "menu",
            NodeKind::Action => "action",
            NodeKind::Navigation => "navigation",
        };
        let is_menu = node.kind == NodeKind::Menu;
        Self {
            label: Some(node.label.clone()),
            digit: node.digit.map(|d| d.to_string()),
            kind: Some(kind.to_string()),
            action_type: node.action_type.map(|t| t.as_key().to_string()),
            prompt_text: (is_menu || !node.prompt_text.is_empty()).then(|| node.prompt_text.clone()),
            children: (is_menu || !node.children.is_empty())
                .then(|| node.children.iter().map(DocNode::from).collect()),
        }
    }
}

/// Parses a menu document and checks every tree invariant.
pub fn parse_menu(document: &str) -> Result<MenuTree, MenuError> {
    let doc: DocDocument = serde_json::from_str(document)?;
    let mut missing = Vec::new();
    if doc.name.is_none() {
        missing.push("name");
    }
    if doc.root.is_none() {
        missing.push("root");
    }
    let (Some(name), Some(root)) = (doc.name, doc.root) else {
        return Err(MenuError::MissingFields { at: NodeLocation::root(), fields: missing });
    };
    let root_digit = match root.digit.as_deref() {
        Some(text) => Some(parse_digit(text).ok_or_else(|| MenuError::InvalidDigit {
            at: NodeLocation::root(),
            value: text.to_string(),
        })?),
        None => None,
    };
    let root = convert_node(root, root_digit, None, NodeLocation::root())?;
    let tree = MenuTree { name, root };
    let violations = validate_menu(&tree);
    if violations.is_empty() {
        Ok(tree)
    } else {
        Err(MenuError::Invalid(violations))
    }
}

fn convert_node(raw: DocNode, digit: Option<Digit>, path: Option<&DtmfPath>, at: NodeLocation) -> Result<MenuNode, MenuError> {
    let mut missing = Vec::new();
    if raw.label.is_none() {
        missing.push("label");
    }
    if raw.kind.is_none() {
        missing.push("kind");
    }
    let (Some(label), Some(kind_text)) = (raw.label, raw.kind) else {
        return Err(MenuError::MissingFields { at, fields: missing });
    };
    let kind = NodeKind::parse(&kind_text).ok_or_else(|| MenuError::UnknownKind {
        at: at.clone(),
        kind: kind_text.clone(),
    })?;
    let action_type = raw
        .action_type
        .map(|value| {
            ServiceType::parse(&value).ok_or_else(|| MenuError::UnknownActionType { at: at.clone(), value })
        })
        .transpose()?;
    let children = raw.children.unwrap_or_default();
    if kind != NodeKind::Menu && !children.is_empty() {
        return Err(MenuError::ChildUnderNonMenu { at, kind });
    }

    let mut seen = BTreeSet::new();
    let mut converted = Vec::with_capacity(children.len());
    for (index, child) in children.into_iter().enumerate() {
        let digit = match child.digit.as_deref() {
            Some(text) => Some(parse_digit(text).ok_or_else(|| MenuError::InvalidDigit {
                at: NodeLocation::indexed(path, index),
                value: text.to_string(),
            })?),
            None => None,
        };
        let child_path = digit.map(|d| match path {
            Some(p) => p.child(d),
            None => DtmfPath::single(d),
        });
        if let Some(d) = digit {
            if !seen.insert(d) {
                return Err(MenuError::DuplicateDigit { at: NodeLocation::of(path), digit: d });
            }
        }
        let child_at = match &child_path {
            Some(p) => NodeLocation::of(Some(p)),
            None => NodeLocation::indexed(path, index),
        };
        converted.push(convert_node(child, digit, child_path.as_ref(), child_at)?);
    }

    Ok(MenuNode {
        label,
        digit,
        kind,
        action_type,
        children: converted,
        prompt_text: raw.prompt_text.unwrap_or_default(),
    })
}

fn parse_digit(text: &str) -> Option<Digit> {
    let mut chars = text.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) => Digit::from_char(c),
        _ => None,
    }
}

/// Serializes a tree back into the menu document format (pretty-printed).
pub fn to_document(tree: &MenuTree) -> String {
    let mut text = serde_json::to_string_pretty(&DocDocument::from(tree)).expect("menu document serializes");
    text.push('\n');
    text
}

/// Lists every broken invariant. Empty means the tree is well formed.
pub fn validate_menu(tree: &MenuTree) -> Vec<Violation> {
    let mut out = Vec::new();
    let root = &tree.root;
    if root.kind != NodeKind::Menu {
        out.push(Violation { at: NodeLocation::root(), kind: ViolationKind::RootNotMenu });
    }
    if root.digit.is_some() {
        out.push(Violation { at: NodeLocation::root(), kind: ViolationKind::RootHasDigit });
    }
    check_node(root, None, NodeLocation::root(), &mut out);
    out
}

fn check_node(node: &MenuNode, path: Option<&DtmfPath>, at: NodeLocation, out: &mut Vec<Violation>) {
    let mut push = |kind| out.push(Violation { at: at.clone(), kind });
    if node.label.trim().is_empty() {
        push(ViolationKind::EmptyLabel);
    }
    if path.is_some_and(|p| p.len() > MAX_DEPTH) {
        push(ViolationKind::TooDeep);
        return;
    }
    match (node.kind, node.action_type) {
        (NodeKind::Action, None) => push(ViolationKind::MissingActionType),
        (NodeKind::Action, Some(_)) => {}
        (kind, Some(_)) => push(ViolationKind::UnexpectedActionType(kind)),
        (_, None) => {}
    }
    if node.kind != NodeKind::Menu {
        if !node.children.is_empty() {
            push(ViolationKind::ChildrenUnderNonMenu(node.kind));
        }
        if !node.prompt_text.is_empty() {
            push(ViolationKind::UnexpectedPromptText(node.kind));
        }
    }
    if node.kind == NodeKind::Navigation {
        if let Some(d) = node.digit.filter(|d| d.value() != 0) {
            push(ViolationKind::NavigationDigit(d));
        }
    }
    if node.kind == NodeKind::Menu && !node.children.iter().any(|c| c.kind != NodeKind::Navigation) {
        push(ViolationKind::NoSelectableOption);
    }

    let mut seen = BTreeSet::new();
    for (index, child) in node.children.iter().enumerate() {
        let Some(digit) = child.digit else {
            out.push(Violation { at: NodeLocation::indexed(path, index), kind: ViolationKind::MissingDigit });
            continue;
        };
        if !seen.insert(digit) {
            out.push(Violation { at: NodeLocation::of(path), kind: ViolationKind::DuplicateDigit(digit) });
        }
        let child_path = match path {
            Some(p) => p.child(digit),
            None => DtmfPath::single(digit),
        };
        check_node(child, Some(&child_path), NodeLocation::of(Some(&child_path)), out);
    }
}

/// Lists every action node as a terminal path, depth-first in document order.
pub fn flatten(tree: &MenuTree) -> Vec<TerminalPath> {
    fn walk(node: &MenuNode, path: Option<&DtmfPath>, crumbs: &mut Vec<String>, out: &mut Vec<TerminalPath>) {
        for child in &node.children {
            let Some(digit) = child.digit else { continue };
            let child_path = match path {
                Some(p) => p.child(digit),
                None => DtmfPath::single(digit),
            };
            crumbs.push(child.label.clone());
            match child.kind {
                NodeKind::Action => {
                    if let Some(service_type) = child.action_type {
                        out.push(TerminalPath {
                            path: child_path,
                            breadcrumb: crumbs.clone(),
                            service_type,
                        });
                    }
                }
                NodeKind::Menu => walk(child, Some(&child_path), crumbs, out),
                NodeKind::Navigation => {}
            }
            crumbs.pop();
        }
    }
    let mut out = Vec::new();
    walk(&tree.root, None, &mut Vec::new(), &mut out);
    out
}

/// Renders the full hierarchy as a plain-text outline: the menu name, then
/// one section per menu node (pre-order) with its spoken message. A menu
/// without a message gets one generated option line per child.
pub fn render_descriptive(tree: &MenuTree) -> String {
    let mut lines = vec![format!("IVR Menu Name: \"{}\"", tree.name)];
    render_section(&tree.root, None, &mut lines);
    lines.join("\n")
}

fn render_section(node: &MenuNode, path: Option<&DtmfPath>, lines: &mut Vec<String>) {
    let depth = path.map_or(0, DtmfPath::len);
    let pad = |n: usize| " ".repeat(n);
    lines.push(String::new());
    let header = match path {
        None => "--- Root Menu ---".to_string(),
        Some(p) if depth == 1 => format!("--- Branch {}: {} (DTMF: {p}) ---", p, node.label),
        Some(p) => format!("{}--- Sub-Menu for {} (DTMF: {p}) ---", pad(2 * (depth - 1)), node.label),
    };
    lines.push(header);

    let body_pad = pad(2 * depth + 2);
    if node.prompt_text.is_empty() {
        for child in &node.children {
            if let Some(d) = child.digit {
                lines.push(format!("{body_pad}For {}, press {d}.", child.label));
            }
        }
    } else {
        lines.push(format!("{}IVR Message:", pad(2 * depth)));
        for line in node.prompt_text.lines() {
            if line.is_empty() {
                lines.push(String::new());
            } else {
                lines.push(format!("{body_pad}{line}"));
            }
        }
    }

    for child in node.children.iter().filter(|c| c.kind == NodeKind::Menu) {
        if let Some(d) = child.digit {
            let child_path = match path {
                Some(p) => p.child(d),
                None => DtmfPath::single(d),
            };
            render_section(child, Some(&child_path), lines);
        }
    }
}

/// One `"<path>: <breadcrumb>"` line per terminal path, order preserved.
pub fn render_flattened(paths: &[TerminalPath]) -> String {
    paths
        .iter()
        .map(|p| format!("{}: {}", p.path, p.breadcrumb_text()))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Tab-separated table with a `path / breadcrumb / type` header row.
pub fn render_paths_tsv(paths: &[TerminalPath]) -> String {
    let mut out = String::from("path\tbreadcrumb\ttype\n");
    for p in paths {
        out.push_str(&format!("{}\t{}\t{}\n", p.path, p.breadcrumb_text(), p.service_type.display_name()));
    }
    out
}
