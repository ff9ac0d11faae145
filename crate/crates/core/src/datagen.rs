//! Labeled intent synthesis: base complaints per terminal path, paraphrase
//! augmentation with controlled noise, and candidate menu generation.
//!
//! Noise is requested from the generator model through the paraphrase
//! prompt; nothing is post-edited here. Which noise kinds a given variant
//! asks for is drawn from a seeded RNG before any request is sent, so the
//! prompts (and, with a deterministic backend, the dataset) depend only on
//! the seed.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use futures::stream::{self, StreamExt, TryStreamExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::menu::{self, MenuError, MenuTree, TerminalPath};
use crate::path::DtmfPath;
use crate::prompt::fill_template;
use crate::provider::{ChatRequest, Provider, ProviderError, RequestPurpose};

pub const BASE_TEMPLATE: &str = include_str!("../templates/template_gen_base.txt");
pub const AUGMENT_TEMPLATE: &str = include_str!("../templates/template_gen_augment.txt");
pub const MENU_TEMPLATE: &str = include_str!("../templates/template_gen_menu.txt");
pub const MENU_RETRY_TEMPLATE: &str = include_str!("../templates/template_gen_menu_retry.txt");

pub const DEFAULT_PER_NODE: usize = 10;
pub const DEFAULT_VARIANTS: usize = 3;
/// Extra requests per path when the first reply has too few distinct texts.
pub const DEFAULT_DEDUPE_ROUNDS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Base,
    Augmented,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentRecord {
    pub id: String,
    pub text: String,
    pub ground_truth: DtmfPath,
    pub origin: Origin,
    /// Equal to `id` for base records.
    pub base_id: String,
    /// 0 for base records, 1.. for paraphrases.
    pub variant_index: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub menu_name: String,
    pub records: Vec<IntentRecord>,
    pub per_node_base: usize,
    pub variants_per_base: usize,
}

impl Dataset {
    /// Orders records by path (in `paths` order), then variant index, then
    /// generation order, and infers the per-node and per-base counts.
    pub fn assemble(menu_name: impl Into<String>, paths: &[TerminalPath], records: Vec<IntentRecord>) -> Self {
        let rank: HashMap<&DtmfPath, usize> = paths.iter().enumerate().map(|(i, p)| (&p.path, i)).collect();
        let mut keyed: Vec<_> = records.into_iter().enumerate().collect();
        keyed.sort_by_key(|(i, r)| (rank.get(&r.ground_truth).copied().unwrap_or(usize::MAX), r.variant_index, *i));
        let records: Vec<_> = keyed.into_iter().map(|(_, r)| r).collect();
        Self::from_records(menu_name, paths.len(), records)
    }

    /// Keeps record order as given.
    pub fn from_records(menu_name: impl Into<String>, path_count: usize, records: Vec<IntentRecord>) -> Self {
        let base = records.iter().filter(|r| r.origin == Origin::Base).count();
        let augmented = records.len() - base;
        Self {
            menu_name: menu_name.into(),
            per_node_base: base.checked_div(path_count).unwrap_or(0),
            variants_per_base: augmented.checked_div(base).unwrap_or(0),
            records,
        }
    }

    pub fn base_records(&self) -> impl Iterator<Item = &IntentRecord> {
        self.records.iter().filter(|r| r.origin == Origin::Base)
    }

    /// SHA-256 of the JSONL serialization, hex encoded.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut buf = Vec::new();
        write_jsonl(&self.records, &mut buf).expect("writing to memory");
        hex::encode(Sha256::digest(&buf))
    }
}

/// Per-variant probabilities of asking the generator for each noise kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseProfile {
    pub interjection: f64,
    pub filler: f64,
    pub grammar: f64,
}

impl Default for NoiseProfile {
    fn default() -> Self {
        Self { interjection: 0.3, filler: 0.3, grammar: 0.2 }
    }
}

impl NoiseProfile {
    pub const NONE: NoiseProfile = NoiseProfile { interjection: 0.0, filler: 0.0, grammar: 0.0 };

    fn draw(&self, rng: &mut ChaCha8Rng) -> NoisePlan {
        NoisePlan {
            interjection: rng.random_bool(self.interjection.clamp(0.0, 1.0)),
            filler: rng.random_bool(self.filler.clamp(0.0, 1.0)),
            grammar: rng.random_bool(self.grammar.clamp(0.0, 1.0)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
struct NoisePlan {
    interjection: bool,
    filler: bool,
    grammar: bool,
}

impl NoisePlan {
    fn instruction(&self) -> String {
        let mut parts = Vec::new();
        if self.interjection {
            parts.push("open with a spoken interjection such as \"um\", \"uh\" or \"hey\"");
        }
        if self.filler {
            parts.push("slip in a filler phrase such as \"you know\", \"like\" or \"basically\"");
        }
        if self.grammar {
            parts.push("include a minor grammatical slip, as people make when speaking quickly");
        }
        if parts.is_empty() {
            "no added noise".to_string()
        } else {
            parts.join("; ")
        }
    }
}

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("path {path}: only {got} distinct texts of {wanted} after {rounds} request(s)")]
    NotEnoughDistinct { path: DtmfPath, wanted: usize, got: usize, rounds: usize },
    #[error("base record {base_id}: generator returned {got} paraphrase(s), {wanted} wanted")]
    TooFewVariants { base_id: String, wanted: usize, got: usize },
    #[error("record {0} is not a base record")]
    NotBase(String),
    #[error("no terminal path {0} to describe")]
    UnknownPath(DtmfPath),
    #[error("{0}")]
    InvalidArgument(&'static str),
    #[error("generated menu rejected: {0}")]
    Menu(MenuError),
    #[error("dataset line {line}: {source}")]
    Jsonl { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Case-insensitive comparison key with whitespace runs collapsed.
pub fn dedupe_key(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Reads a generator reply as a list of texts: a JSON array of strings
/// (possibly fenced or surrounded by chatter), or else one text per
/// non-empty line with list markers removed.
pub fn parse_text_list(raw: &str) -> Vec<String> {
    if let (Some(start), Some(end)) = (raw.find('['), raw.rfind(']')) {
        if start < end {
            if let Ok(items) = serde_json::from_str::<Vec<String>>(&raw[start..=end]) {
                return items.into_iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
            }
        }
    }
    raw.lines()
        .map(strip_list_marker)
        .filter(|l| !l.is_empty() && !l.starts_with("```"))
        .map(String::from)
        .collect()
}

fn strip_list_marker(line: &str) -> &str {
    let line = line.trim();
    let line = line.trim_start_matches(['-', '*', '•']).trim_start();
    let digits = line.chars().take_while(char::is_ascii_digit).count();
    let line = if digits > 0 && line[digits..].starts_with(['.', ')']) { line[digits + 1..].trim_start() } else { line };
    line.trim_matches('"').trim()
}

/// Asks for `per_node` distinct complaints per terminal path.
pub async fn generate_base_intents(
    menu_name: &str,
    paths: &[TerminalPath],
    provider: &Provider,
    per_node: usize,
) -> Result<Vec<IntentRecord>, DatagenError> {
    generate_base_intents_with(menu_name, paths, provider, per_node, DEFAULT_DEDUPE_ROUNDS).await
}

pub async fn generate_base_intents_with(
    menu_name: &str,
    paths: &[TerminalPath],
    provider: &Provider,
    per_node: usize,
    dedupe_rounds: usize,
) -> Result<Vec<IntentRecord>, DatagenError> {
    if per_node == 0 {
        return Err(DatagenError::InvalidArgument("per_node must be at least 1"));
    }
    if paths.is_empty() {
        return Err(DatagenError::InvalidArgument("no terminal paths"));
    }
    let per_path: Vec<Vec<IntentRecord>> = stream::iter(paths)
        .map(|p| base_for_path(menu_name, p, provider, per_node, dedupe_rounds))
        .buffered(provider.max_in_flight())
        .try_collect()
        .await?;
    Ok(per_path.into_iter().flatten().collect())
}

async fn base_for_path(
    menu_name: &str,
    path: &TerminalPath,
    provider: &Provider,
    per_node: usize,
    dedupe_rounds: usize,
) -> Result<Vec<IntentRecord>, DatagenError> {
    let endpoint = path.breadcrumb_text();
    let mut accepted: Vec<String> = Vec::with_capacity(per_node);
    let mut seen = HashSet::new();
    let mut round = 0;
    while accepted.len() < per_node {
        if round > dedupe_rounds {
            return Err(DatagenError::NotEnoughDistinct {
                path: path.path.clone(),
                wanted: per_node,
                got: accepted.len(),
                rounds: round,
            });
        }
        let count = per_node - accepted.len();
        let avoid = if accepted.is_empty() {
            String::new()
        } else {
            let listed: Vec<_> = accepted.iter().map(|t| format!("- {t}")).collect();
            format!("\n\nThese already exist; write different ones:\n{}", listed.join("\n"))
        };
        let count_text = count.to_string();
        let content = fill_template(
            BASE_TEMPLATE,
            &[("MENU_NAME", menu_name), ("COUNT", &count_text), ("ENDPOINT", &endpoint), ("AVOID", &avoid)],
        );
        let request = ChatRequest::new(
            content,
            RequestPurpose::BaseIntents { path: path.path.clone(), endpoint: endpoint.clone(), count, round },
        );
        let completion = provider.complete(&request).await?;
        for text in parse_text_list(&completion.raw_text) {
            if accepted.len() == per_node {
                break;
            }
            if seen.insert(dedupe_key(&text)) {
                accepted.push(text);
            }
        }
        round += 1;
    }
    let width = per_node.to_string().len().max(2);
    Ok(accepted
        .into_iter()
        .enumerate()
        .map(|(i, text)| {
            let id = format!("{}/{:0width$}", path.path, i + 1);
            IntentRecord {
                base_id: id.clone(),
                id,
                text,
                ground_truth: path.path.clone(),
                origin: Origin::Base,
                variant_index: 0,
            }
        })
        .collect())
}

/// Asks for `variants` paraphrases of every base record. Output keeps base
/// order with each record's variants grouped in index order.
pub async fn augment_intents(
    base: &[IntentRecord],
    paths: &[TerminalPath],
    provider: &Provider,
    variants: usize,
    noise: &NoiseProfile,
    seed: u64,
) -> Result<Vec<IntentRecord>, DatagenError> {
    if let Some(r) = base.iter().find(|r| r.origin != Origin::Base) {
        return Err(DatagenError::NotBase(r.id.clone()));
    }
    if variants == 0 {
        return Ok(Vec::new());
    }
    if variants > u8::MAX as usize {
        return Err(DatagenError::InvalidArgument("too many variants per base record"));
    }
    let endpoints: HashMap<&DtmfPath, String> = paths.iter().map(|p| (&p.path, p.breadcrumb_text())).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jobs = Vec::with_capacity(base.len());
    for record in base {
        let endpoint = endpoints
            .get(&record.ground_truth)
            .cloned()
            .ok_or_else(|| DatagenError::UnknownPath(record.ground_truth.clone()))?;
        let plans: Vec<NoisePlan> = (0..variants).map(|_| noise.draw(&mut rng)).collect();
        jobs.push((record, endpoint, plans));
    }
    let grouped: Vec<Vec<IntentRecord>> = stream::iter(jobs)
        .map(|(record, endpoint, plans)| paraphrase_one(record, endpoint, plans, provider))
        .buffered(provider.max_in_flight())
        .try_collect()
        .await?;
    Ok(grouped.into_iter().flatten().collect())
}

async fn paraphrase_one(
    record: &IntentRecord,
    endpoint: String,
    plans: Vec<NoisePlan>,
    provider: &Provider,
) -> Result<Vec<IntentRecord>, DatagenError> {
    let count = plans.len();
    let noise: Vec<_> = plans
        .iter()
        .enumerate()
        .map(|(i, p)| format!("Version {}: {}.", i + 1, p.instruction()))
        .collect();
    let noise = noise.join("\n");
    let count_text = count.to_string();
    let content = fill_template(
        AUGMENT_TEMPLATE,
        &[("TEXT", &record.text), ("ENDPOINT", &endpoint), ("COUNT", &count_text), ("NOISE", &noise)],
    );
    let ask = |round: usize| {
        ChatRequest::new(
            content.clone(),
            RequestPurpose::Paraphrase {
                base_id: record.id.clone(),
                base_text: record.text.clone(),
                path: record.ground_truth.clone(),
                count,
                round,
            },
        )
    };
    let base_key = dedupe_key(&record.text);
    let mut texts = parse_text_list(&provider.complete(&ask(0)).await?.raw_text);
    texts.truncate(count);
    let needs_retry = texts.len() < count || texts.iter().any(|t| dedupe_key(t) == base_key);
    if needs_retry {
        let retry = parse_text_list(&provider.complete(&ask(1)).await?.raw_text);
        for i in 0..count {
            let replace = texts.get(i).is_none_or(|t| dedupe_key(t) == base_key);
            if let (true, Some(fresh)) = (replace, retry.get(i)) {
                if i < texts.len() {
                    texts[i] = fresh.clone();
                } else if i == texts.len() {
                    texts.push(fresh.clone());
                }
            }
        }
    }
    if texts.len() < count {
        return Err(DatagenError::TooFewVariants { base_id: record.id.clone(), wanted: count, got: texts.len() });
    }
    Ok(texts
        .into_iter()
        .enumerate()
        .map(|(i, text)| {
            if dedupe_key(&text) == base_key {
                tracing::warn!(base_id = %record.id, variant = i + 1, "paraphrase still identical to its base after regeneration");
            }
            IntentRecord {
                id: format!("{}.v{}", record.id, i + 1),
                text,
                ground_truth: record.ground_truth.clone(),
                origin: Origin::Augmented,
                base_id: record.id.clone(),
                variant_index: (i + 1) as u8,
            }
        })
        .collect())
}

/// A candidate menu produced by the generator and accepted by the parser.
#[derive(Debug, Clone)]
pub struct GeneratedMenu {
    pub document: String,
    pub tree: MenuTree,
}

/// Asks the generator for a menu document. A reply that fails to parse or
/// validate gets one reformat request; a second failure is returned with
/// the parser's diagnostics.
pub async fn generate_menu(brief: &str, provider: &Provider) -> Result<GeneratedMenu, DatagenError> {
    if brief.trim().is_empty() {
        return Err(DatagenError::InvalidArgument("business brief is empty"));
    }
    let first_prompt = fill_template(MENU_TEMPLATE, &[("BRIEF", brief)]);
    let request = ChatRequest::new(first_prompt.clone(), RequestPurpose::Menu { brief: brief.to_string(), attempt: 0 });
    let raw = provider.complete(&request).await?.raw_text;
    let error = match accept_menu(&raw) {
        Ok(menu) => return Ok(menu),
        Err(e) => e,
    };
    tracing::info!(%error, "generated menu rejected, asking for a reformat");
    let retry_prompt = format!("{first_prompt}\n\n{}", fill_template(MENU_RETRY_TEMPLATE, &[("ERROR", &error.to_string())]));
    let request = ChatRequest::new(retry_prompt, RequestPurpose::Menu { brief: brief.to_string(), attempt: 1 });
    let raw = provider.complete(&request).await?.raw_text;
    accept_menu(&raw).map_err(DatagenError::Menu)
}

fn accept_menu(raw: &str) -> Result<GeneratedMenu, MenuError> {
    let json = match (raw.find('{'), raw.rfind('}')) {
        (Some(start), Some(end)) if start < end => &raw[start..=end],
        _ => raw,
    };
    let tree = menu::parse_menu(json)?;
    Ok(GeneratedMenu { document: menu::to_document(&tree), tree })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetViolation {
    DuplicateId(String),
    EmptyText(String),
    UnknownPath { id: String, path: DtmfPath },
    OriginMismatch(String),
    MissingBase { id: String, base_id: String },
    LabelChanged { id: String, base_id: String },
    BadVariantIndex { id: String, index: u8 },
    PathBaseCount { path: DtmfPath, expected: usize, found: usize },
    TotalCount { expected: usize, found: usize },
}

impl fmt::Display for DatasetViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DuplicateId(id) => write!(f, "id {id} appears more than once"),
            Self::EmptyText(id) => write!(f, "{id}: empty text"),
            Self::UnknownPath { id, path } => write!(f, "{id}: ground truth {path} is not a terminal path"),
            Self::OriginMismatch(id) => write!(f, "{id}: origin, base_id and variant_index disagree"),
            Self::MissingBase { id, base_id } => write!(f, "{id}: base record {base_id} not found"),
            Self::LabelChanged { id, base_id } => write!(f, "{id}: ground truth differs from base {base_id}"),
            Self::BadVariantIndex { id, index } => write!(f, "{id}: variant_index {index} out of range"),
            Self::PathBaseCount { path, expected, found } => {
                write!(f, "path {path}: {found} base records, expected {expected}")
            }
            Self::TotalCount { expected, found } => write!(f, "{found} records, expected {expected}"),
        }
    }
}

/// Lists every broken dataset invariant against `paths`.
pub fn validate_dataset(ds: &Dataset, paths: &[TerminalPath]) -> Vec<DatasetViolation> {
    let mut out = Vec::new();
    let known: HashSet<&DtmfPath> = paths.iter().map(|p| &p.path).collect();
    let mut ids = HashSet::new();
    let bases: HashMap<&str, &IntentRecord> =
        ds.base_records().map(|r| (r.id.as_str(), r)).collect();
    let mut per_path: BTreeMap<&DtmfPath, usize> = paths.iter().map(|p| (&p.path, 0)).collect();

    for r in &ds.records {
        if !ids.insert(r.id.as_str()) {
            out.push(DatasetViolation::DuplicateId(r.id.clone()));
        }
        if r.text.trim().is_empty() {
            out.push(DatasetViolation::EmptyText(r.id.clone()));
        }
        if !known.contains(&r.ground_truth) {
            out.push(DatasetViolation::UnknownPath { id: r.id.clone(), path: r.ground_truth.clone() });
        }
        match r.origin {
            Origin::Base => {
                if r.base_id != r.id || r.variant_index != 0 {
                    out.push(DatasetViolation::OriginMismatch(r.id.clone()));
                }
                if let Some(n) = per_path.get_mut(&r.ground_truth) {
                    *n += 1;
                }
            }
            Origin::Augmented => {
                if r.variant_index == 0 || r.base_id == r.id {
                    out.push(DatasetViolation::OriginMismatch(r.id.clone()));
                } else if usize::from(r.variant_index) > ds.variants_per_base {
                    out.push(DatasetViolation::BadVariantIndex { id: r.id.clone(), index: r.variant_index });
                }
                match bases.get(r.base_id.as_str()) {
                    None => out.push(DatasetViolation::MissingBase { id: r.id.clone(), base_id: r.base_id.clone() }),
                    Some(b) if b.ground_truth != r.ground_truth => {
                        out.push(DatasetViolation::LabelChanged { id: r.id.clone(), base_id: r.base_id.clone() })
                    }
                    Some(_) => {}
                }
            }
        }
    }
    for (path, found) in per_path {
        if found != ds.per_node_base {
            out.push(DatasetViolation::PathBaseCount { path: path.clone(), expected: ds.per_node_base, found });
        }
    }
    let expected = ds.per_node_base * paths.len() * (1 + ds.variants_per_base);
    if ds.records.len() != expected {
        out.push(DatasetViolation::TotalCount { expected, found: ds.records.len() });
    }
    out
}

pub fn read_jsonl(reader: impl BufRead) -> Result<Vec<IntentRecord>, DatagenError> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|source| DatagenError::Jsonl { line: i + 1, source })?);
    }
    Ok(records)
}

pub fn write_jsonl(records: &[IntentRecord], mut writer: impl Write) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
