//! The routing experiment: one prompt and one completion per intent, the
//! reply parsed into a DTMF path or `INVALID`.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::datagen::{Dataset, IntentRecord, Origin};
use crate::menu::{self, MenuTree};
use crate::path::{matches_grammar, DtmfPath};
use crate::prompt::{self, PromptError, RoutingCondition};
use crate::provider::{ChatRequest, Completion, Provider, ProviderConfig, ProviderError};

pub const INVALID_LABEL: &str = "INVALID";
pub const DEFAULT_ERROR_BUDGET: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseMode {
    /// The normalized reply must be a path and nothing else.
    #[default]
    Strict,
    /// Additionally accept a reply containing exactly one path-shaped token.
    Lenient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationRule {
    Trim,
    StripQuotes,
    StripTrailingPeriod,
    MapUnicodeDashes,
    LenientSalvage,
}

/// A routing prediction: a path, or `INVALID` when the reply could not be
/// read as one.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Prediction {
    Path(DtmfPath),
    Invalid,
}

impl Prediction {
    pub fn path(&self) -> Option<&DtmfPath> {
        match self {
            Self::Path(p) => Some(p),
            Self::Invalid => None,
        }
    }
}

impl fmt::Display for Prediction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Path(p) => write!(f, "{p}"),
            Self::Invalid => f.write_str(INVALID_LABEL),
        }
    }
}

impl FromStr for Prediction {
    type Err = crate::path::PathParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == INVALID_LABEL {
            Ok(Self::Invalid)
        } else {
            s.parse().map(Self::Path)
        }
    }
}

impl Serialize for Prediction {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Prediction {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedResponse {
    pub outcome: Prediction,
    pub raw_text: String,
    pub normalization_applied: Vec<NormalizationRule>,
}

const DASHES: &[char] = &[
    '\u{2010}', '\u{2011}', '\u{2012}', '\u{2013}', '\u{2014}', '\u{2015}', '\u{2212}', '\u{FE58}', '\u{FE63}',
    '\u{FF0D}',
];

const QUOTE_PAIRS: &[(char, char)] = &[('"', '"'), ('\'', '\''), ('`', '`'), ('\u{201C}', '\u{201D}'), ('\u{2018}', '\u{2019}')];

/// Normalizes a reply in a fixed order (trim, strip one pair of surrounding
/// quotes or backticks, strip one trailing period, map Unicode dashes to
/// `-`) and records which rules changed the text.
pub fn normalize(raw: &str) -> (String, Vec<NormalizationRule>) {
    let mut rules = Vec::new();
    let mut text = raw;

    let trimmed = text.trim();
    if trimmed.len() != text.len() {
        rules.push(NormalizationRule::Trim);
    }
    text = trimmed;

    let mut chars = text.chars();
    if let (Some(first), Some(last)) = (chars.next(), chars.next_back()) {
        if QUOTE_PAIRS.contains(&(first, last)) {
            text = &text[first.len_utf8()..text.len() - last.len_utf8()];
            rules.push(NormalizationRule::StripQuotes);
        }
    }

    if let Some(stripped) = text.strip_suffix('.') {
        text = stripped;
        rules.push(NormalizationRule::StripTrailingPeriod);
    }

    let mut out = text.to_string();
    if out.contains(DASHES) {
        out = out.replace(DASHES, "-");
        rules.push(NormalizationRule::MapUnicodeDashes);
    }
    (out, rules)
}

pub fn parse_dtmf_response(raw: &str) -> ParsedResponse {
    parse_dtmf_response_with(raw, ParseMode::Strict)
}

pub fn parse_dtmf_response_with(raw: &str, mode: ParseMode) -> ParsedResponse {
    let (normalized, mut rules) = normalize(raw);
    let outcome = if matches_grammar(&normalized) {
        Prediction::Path(normalized.parse().expect("grammar checked"))
    } else if mode == ParseMode::Lenient {
        match salvage_single_token(&normalized) {
            Some(path) => {
                rules.push(NormalizationRule::LenientSalvage);
                Prediction::Path(path)
            }
            None => Prediction::Invalid,
        }
    } else {
        Prediction::Invalid
    };
    ParsedResponse { outcome, raw_text: raw.to_string(), normalization_applied: rules }
}

// Maximal runs of digits and hyphens, trimmed of dangling hyphens; exactly
// one run must match the grammar.
fn salvage_single_token(text: &str) -> Option<DtmfPath> {
    let mut found = None;
    for run in text.split(|c: char| !(c.is_ascii_digit() || c == '-')) {
        let run = run.trim_matches('-');
        if matches_grammar(run) {
            if found.is_some() {
                return None;
            }
            found = Some(run);
        }
    }
    found.map(|t| t.parse().expect("grammar checked"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFilter {
    BaseOnly,
    #[default]
    All,
}

impl DatasetFilter {
    pub fn selects(self, record: &IntentRecord) -> bool {
        match self {
            Self::BaseOnly => record.origin == Origin::Base,
            Self::All => true,
        }
    }

    pub fn table_label(self) -> &'static str {
        match self {
            Self::BaseOnly => "Base Only",
            Self::All => "Augmented",
        }
    }
}

impl fmt::Display for DatasetFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::BaseOnly => "base_only",
            Self::All => "all",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingResult {
    pub intent_id: String,
    pub condition: RoutingCondition,
    pub raw_response: String,
    pub predicted: Prediction,
    pub normalization_applied: Vec<NormalizationRule>,
    pub ground_truth: DtmfPath,
    pub correct: bool,
    /// Whether the prediction is one of the menu's terminal paths.
    pub known_path: bool,
    pub latency_ms: u64,
    pub model_name: String,
    pub attempt_count: u32,
    /// Set when the provider failed and the intent was scored as `INVALID`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RoutingResult {
    pub fn parsed(&self) -> ParsedResponse {
        ParsedResponse {
            outcome: self.predicted.clone(),
            raw_text: self.raw_response.clone(),
            normalization_applied: self.normalization_applied.clone(),
        }
    }
}

/// A rendered menu for one condition plus the menu's terminal path set.
#[derive(Debug, Clone)]
pub struct RoutingContext {
    pub condition: RoutingCondition,
    pub text: String,
    pub terminal: HashSet<DtmfPath>,
}

impl RoutingContext {
    pub fn new(tree: &MenuTree, condition: RoutingCondition) -> Self {
        let paths = menu::flatten(tree);
        let text = match condition {
            RoutingCondition::DescriptiveMenu => menu::render_descriptive(tree),
            RoutingCondition::FlattenedPaths => menu::render_flattened(&paths),
        };
        Self { condition, text, terminal: paths.into_iter().map(|p| p.path).collect() }
    }
}

#[derive(Debug, Error)]
pub enum RouteError {
    #[error("intent {intent_id}: {source}")]
    Provider { intent_id: String, source: ProviderError },
    #[error("intent {intent_id}: {source}")]
    Prompt { intent_id: String, source: PromptError },
}

/// Routes free text that has no ground truth, as in an interactive session.
pub async fn route_text(
    query: &str,
    intent_id: &str,
    context: &RoutingContext,
    provider: &Provider,
    mode: ParseMode,
) -> Result<(ParsedResponse, Completion), RouteError> {
    let prompt = prompt::build(context.condition, &context.text, query)
        .map_err(|source| RouteError::Prompt { intent_id: intent_id.to_string(), source })?;
    let completion = provider
        .complete(&ChatRequest::route(prompt, intent_id))
        .await
        .map_err(|source| RouteError::Provider { intent_id: intent_id.to_string(), source })?;
    Ok((parse_dtmf_response_with(&completion.raw_text, mode), completion))
}

/// Routes one intent with exactly one completion (provider-level transport
/// retries aside).
pub async fn route_one(
    intent: &IntentRecord,
    context: &RoutingContext,
    provider: &Provider,
    mode: ParseMode,
) -> Result<RoutingResult, RouteError> {
    let (parsed, completion) = route_text(&intent.text, &intent.id, context, provider, mode).await?;
    let known_path = parsed.outcome.path().is_some_and(|p| context.terminal.contains(p));
    let correct = parsed.outcome.path() == Some(&intent.ground_truth);
    Ok(RoutingResult {
        intent_id: intent.id.clone(),
        condition: context.condition,
        raw_response: completion.raw_text,
        predicted: parsed.outcome,
        normalization_applied: parsed.normalization_applied,
        ground_truth: intent.ground_truth.clone(),
        correct,
        known_path,
        latency_ms: completion.latency.as_millis() as u64,
        model_name: completion.model_name,
        attempt_count: completion.attempt_count,
        error: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RouteOptions {
    pub filter: DatasetFilter,
    pub mode: ParseMode,
    /// Fraction of selected intents whose provider calls may fail before
    /// the run aborts.
    pub error_budget: f64,
}

impl Default for RouteOptions {
    fn default() -> Self {
        Self { filter: DatasetFilter::All, mode: ParseMode::Strict, error_budget: DEFAULT_ERROR_BUDGET }
    }
}

/// Everything needed to identify and reproduce a routing run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Content hash of every other field except `created_at`.
    pub id: String,
    pub created_at: String,
    pub condition: RoutingCondition,
    pub filter: DatasetFilter,
    pub parse_mode: ParseMode,
    pub provider: ProviderConfig,
    pub menu_name: String,
    pub menu_hash: String,
    pub dataset_hash: String,
    pub record_count: usize,
    /// Terminal paths in menu order; the confusion-matrix rows.
    pub classes: Vec<DtmfPath>,
}

#[derive(Serialize)]
struct ManifestIdentity<'a> {
    condition: RoutingCondition,
    filter: DatasetFilter,
    parse_mode: ParseMode,
    provider: &'a ProviderConfig,
    menu_hash: &'a str,
    dataset_hash: &'a str,
    record_count: usize,
}

impl RunManifest {
    pub fn new(
        tree: &MenuTree,
        dataset: &Dataset,
        condition: RoutingCondition,
        options: &RouteOptions,
        provider: &ProviderConfig,
        record_count: usize,
    ) -> Self {
        let menu_hash = tree.content_hash();
        let dataset_hash = dataset.content_hash();
        let identity = ManifestIdentity {
            condition,
            filter: options.filter,
            parse_mode: options.mode,
            provider,
            menu_hash: &menu_hash,
            dataset_hash: &dataset_hash,
            record_count,
        };
        let digest = Sha256::digest(serde_json::to_vec(&identity).expect("manifest serializes"));
        Self {
            id: hex::encode(&digest[..8]),
            created_at: timestamp(),
            condition,
            filter: options.filter,
            parse_mode: options.mode,
            provider: provider.clone(),
            menu_name: tree.name.clone(),
            menu_hash,
            dataset_hash,
            record_count,
            classes: menu::flatten(tree).into_iter().map(|p| p.path).collect(),
        }
    }
}

/// RFC 3339 UTC; honors `SOURCE_DATE_EPOCH` for reproducible output.
pub fn timestamp() -> String {
    let fixed = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|secs| chrono::DateTime::from_timestamp(secs, 0));
    fixed
        .unwrap_or_else(chrono::Utc::now)
        .to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

#[derive(Debug, Clone)]
pub struct RoutingRun {
    pub manifest: RunManifest,
    pub results: Vec<RoutingResult>,
}

#[derive(Debug, Error)]
pub enum RouteAllError {
    #[error("dataset does not fit the menu: {0}")]
    Dataset(String),
    #[error("menu is invalid: {0}")]
    Menu(String),
    #[error("{errors} provider failure(s) exceed the budget of {allowed}; last: {last}")]
    BudgetExceeded {
        errors: usize,
        allowed: usize,
        last: RouteError,
        completed: Vec<RoutingResult>,
    },
}

/// Routes every selected record under one condition. Results come back in
/// dataset order whatever order the calls complete in. Provider failures
/// within the error budget are scored as `INVALID` with `error` set.
pub async fn route_all(
    ds: &Dataset,
    condition: RoutingCondition,
    tree: &MenuTree,
    provider: &Provider,
    options: RouteOptions,
) -> Result<RoutingRun, RouteAllError> {
    let violations = menu::validate_menu(tree);
    if !violations.is_empty() {
        let text: Vec<_> = violations.iter().map(ToString::to_string).collect();
        return Err(RouteAllError::Menu(text.join("; ")));
    }
    let context = RoutingContext::new(tree, condition);
    check_records(ds, &context)?;

    let selected: Vec<&IntentRecord> = ds.records.iter().filter(|r| options.filter.selects(r)).collect();
    let manifest = RunManifest::new(tree, ds, condition, &options, provider.config(), selected.len());
    let allowed = (options.error_budget.max(0.0) * selected.len() as f64).floor() as usize;

    let mut outcomes = stream::iter(selected.iter().copied())
        .map(|record| {
            let context = &context;
            async move { (record, route_one(record, context, provider, options.mode).await) }
        })
        .buffered(provider.max_in_flight());

    let mut results = Vec::with_capacity(selected.len());
    let mut errors = 0;
    while let Some((record, outcome)) = outcomes.next().await {
        match outcome {
            Ok(result) => results.push(result),
            Err(err) => {
                errors += 1;
                tracing::warn!(error = %err, "routing call failed");
                if errors > allowed {
                    return Err(RouteAllError::BudgetExceeded { errors, allowed, last: err, completed: results });
                }
                results.push(failed_result(record, condition, provider.config(), &err));
            }
        }
    }
    Ok(RoutingRun { manifest, results })
}

fn failed_result(record: &IntentRecord, condition: RoutingCondition, config: &ProviderConfig, err: &RouteError) -> RoutingResult {
    RoutingResult {
        intent_id: record.id.clone(),
        condition,
        raw_response: String::new(),
        predicted: Prediction::Invalid,
        normalization_applied: Vec::new(),
        ground_truth: record.ground_truth.clone(),
        correct: false,
        known_path: false,
        latency_ms: 0,
        model_name: config.model_name.clone(),
        attempt_count: 0,
        error: Some(err.to_string()),
    }
}

// Record-level checks only: a subset of a dataset is routable even though
// its per-node counts no longer add up.
fn check_records(ds: &Dataset, context: &RoutingContext) -> Result<(), RouteAllError> {
    let mut ids = HashSet::new();
    for r in &ds.records {
        if !ids.insert(r.id.as_str()) {
            return Err(RouteAllError::Dataset(format!("duplicate id {}", r.id)));
        }
        if !context.terminal.contains(&r.ground_truth) {
            return Err(RouteAllError::Dataset(format!("{}: {} is not a terminal path", r.id, r.ground_truth)));
        }
    }
    Ok(())
}

pub fn read_results_jsonl(reader: impl std::io::BufRead) -> Result<Vec<RoutingResult>, (usize, String)> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| (i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| (i + 1, e.to_string()))?);
    }
    Ok(out)
}

pub fn write_results_jsonl(results: &[RoutingResult], mut writer: impl std::io::Write) -> std::io::Result<()> {
    for r in results {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;
    use std::sync::Arc;

    use super::*;
    use crate::fixtures;
    use crate::provider::mock::{KeywordBackend, OracleBackend, ScriptedBackend};
    use crate::provider::AttemptError;

    fn path(s: &str) -> DtmfPath {
        s.parse().unwrap()
    }

    #[test]
    fn parses_plain_path() {
        let p = parse_dtmf_response("1-2-3");
        assert_eq!(p.outcome, Prediction::Path(path("1-2-3")));
        assert!(p.normalization_applied.is_empty());
    }

    #[test]
    fn trims_whitespace() {
        let p = parse_dtmf_response("  2-1-9\n");
        assert_eq!(p.outcome, Prediction::Path(path("2-1-9")));
        assert_eq!(p.normalization_applied, [NormalizationRule::Trim]);
    }

    #[test]
    fn residual_text_is_invalid_in_strict_mode() {
        assert_eq!(parse_dtmf_response("The path is 1-1").outcome, Prediction::Invalid);
        let lenient = parse_dtmf_response_with("The path is 1-1", ParseMode::Lenient);
        assert_eq!(lenient.outcome, Prediction::Path(path("1-1")));
        assert_eq!(lenient.normalization_applied.last(), Some(&NormalizationRule::LenientSalvage));
        assert_eq!(parse_dtmf_response_with("1-1 or 1-2", ParseMode::Lenient).outcome, Prediction::Invalid);
        assert_eq!(parse_dtmf_response_with("press 12-3", ParseMode::Lenient).outcome, Prediction::Invalid);
    }

    #[test]
    fn maps_unicode_dashes() {
        let p = parse_dtmf_response("2\u{2013}1\u{2013}9");
        assert_eq!(p.outcome, Prediction::Path(path("2-1-9")));
        assert_eq!(p.normalization_applied, [NormalizationRule::MapUnicodeDashes]);
    }

    #[test]
    fn strips_quotes_and_period_once() {
        let p = parse_dtmf_response(" `3-4`. ");
        assert_eq!(p.outcome, Prediction::Invalid, "period sits outside the backticks");
        let p = parse_dtmf_response(" \"3-4.\" ");
        assert_eq!(p.outcome, Prediction::Path(path("3-4")));
        assert_eq!(
            p.normalization_applied,
            [NormalizationRule::Trim, NormalizationRule::StripQuotes, NormalizationRule::StripTrailingPeriod]
        );
        assert_eq!(parse_dtmf_response("''1-1''").outcome, Prediction::Invalid);
        assert_eq!(parse_dtmf_response("1-1..").outcome, Prediction::Invalid);
        assert_eq!(parse_dtmf_response("\u{201C}1-9\u{201D}").outcome, Prediction::Path(path("1-9")));
        assert_eq!(parse_dtmf_response("").outcome, Prediction::Invalid);
        assert_eq!(parse_dtmf_response("\"").outcome, Prediction::Invalid);
    }

    #[test]
    fn prediction_serde() {
        assert_eq!(serde_json::to_string(&Prediction::Invalid).unwrap(), "\"INVALID\"");
        assert_eq!(serde_json::from_str::<Prediction>("\"2-2-3\"").unwrap(), Prediction::Path(path("2-2-3")));
    }

    fn provider(backend: impl crate::provider::ChatBackend + 'static) -> Provider {
        Provider::new(
            ProviderConfig { initial_backoff_ms: 1, max_retries: 0, ..ProviderConfig::default() },
            Arc::new(backend),
        )
        .unwrap()
    }

    fn intent(id: &str, truth: &str) -> IntentRecord {
        IntentRecord {
            id: id.into(),
            text: "help me".into(),
            ground_truth: path(truth),
            origin: Origin::Base,
            base_id: id.into(),
            variant_index: 0,
        }
    }

    #[tokio::test]
    async fn route_one_outcomes() {
        let context = RoutingContext::new(&fixtures::agentnet_menu(), RoutingCondition::FlattenedPaths);
        let record = intent("x", "1-1");

        let oracle = provider(OracleBackend::new(std::slice::from_ref(&record)));
        assert!(route_one(&record, &context, &oracle, ParseMode::Strict).await.unwrap().correct);

        let wrong = route_one(&record, &context, &provider(ScriptedBackend::sequence(["9-9-9"])), ParseMode::Strict)
            .await
            .unwrap();
        assert!(!wrong.correct && !wrong.known_path);
        assert_eq!(wrong.predicted, Prediction::Path(path("9-9-9")));

        let sorry = route_one(&record, &context, &provider(ScriptedBackend::sequence(["sorry"])), ParseMode::Strict)
            .await
            .unwrap();
        assert_eq!(sorry.predicted, Prediction::Invalid);
        assert!(!sorry.correct);
    }

    #[tokio::test]
    async fn route_one_attaches_intent_id_to_errors() {
        let context = RoutingContext::new(&fixtures::agentnet_menu(), RoutingCondition::DescriptiveMenu);
        let backend = ScriptedBackend::from_results(vec![Err(AttemptError::status(500))]);
        let err = route_one(&intent("abc", "1-1"), &context, &provider(backend), ParseMode::Strict).await.unwrap_err();
        assert!(matches!(err, RouteError::Provider { ref intent_id, .. } if intent_id == "abc"));
    }

    #[tokio::test]
    async fn never_re_requests_content() {
        let context = RoutingContext::new(&fixtures::agentnet_menu(), RoutingCondition::FlattenedPaths);
        let backend = Arc::new(ScriptedBackend::sequence(["not a path", "1-1"]));
        let p = Provider::new(ProviderConfig::default(), backend.clone()).unwrap();
        let r = route_one(&intent("x", "1-1"), &context, &p, ParseMode::Strict).await.unwrap();
        assert_eq!(r.predicted, Prediction::Invalid);
        assert_eq!(backend.calls(), 1);
    }

    #[tokio::test]
    async fn filters_select_expected_counts() {
        let ds = fixtures::agentnet_dataset();
        let tree = fixtures::agentnet_menu();
        let p = provider(OracleBackend::new(&ds.records));
        let base = route_all(&ds, RoutingCondition::FlattenedPaths, &tree, &p, RouteOptions { filter: DatasetFilter::BaseOnly, ..Default::default() })
            .await
            .unwrap();
        assert_eq!(base.results.len(), 230);
        assert!(base.results.iter().all(|r| r.correct));
        assert_eq!(base.manifest.record_count, 230);
        assert_eq!(base.manifest.classes.len(), 23);
    }

    #[tokio::test]
    async fn keyword_runs_are_identical() {
        let ds = fixtures::agentnet_dataset();
        let tree = fixtures::agentnet_menu();
        let run = || async {
            let p = provider(KeywordBackend::new(&menu::flatten(&tree)));
            route_all(&ds, RoutingCondition::DescriptiveMenu, &tree, &p, RouteOptions::default()).await.unwrap()
        };
        let (a, b) = (run().await, run().await);
        assert_eq!(a.results, b.results);
        assert_eq!(a.manifest.id, b.manifest.id);
    }

    #[tokio::test]
    async fn error_budget() {
        let ds = fixtures::agentnet_dataset();
        let tree = fixtures::agentnet_menu();
        let base: Vec<_> = ds.base_records().cloned().collect();
        // 230 calls, 1% budget allows 2 failures
        let failing: HashMap<String, String> =
            base.iter().skip(2).map(|r| (r.id.clone(), r.ground_truth.to_string())).collect();
        let options = RouteOptions { filter: DatasetFilter::BaseOnly, ..Default::default() };
        let run = route_all(&ds, RoutingCondition::FlattenedPaths, &tree, &provider(ScriptedBackend::keyed(failing)), options)
            .await
            .unwrap();
        assert_eq!(run.results.len(), 230);
        let failed: Vec<_> = run.results.iter().filter(|r| r.error.is_some()).collect();
        assert_eq!(failed.len(), 2);
        assert!(failed.iter().all(|r| r.predicted == Prediction::Invalid && !r.correct));

        let failing: HashMap<String, String> =
            base.iter().skip(3).map(|r| (r.id.clone(), r.ground_truth.to_string())).collect();
        let p = Provider::new(
            ProviderConfig { max_retries: 0, max_in_flight: 1, ..ProviderConfig::default() },
            Arc::new(ScriptedBackend::keyed(failing)),
        )
        .unwrap();
        match route_all(&ds, RoutingCondition::FlattenedPaths, &tree, &p, options).await {
            Err(RouteAllError::BudgetExceeded { errors, allowed, completed, .. }) => {
                assert_eq!((errors, allowed), (3, 2));
                assert_eq!(completed.len(), 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[tokio::test]
    async fn rejects_unknown_ground_truth() {
        let mut ds = fixtures::agentnet_dataset();
        ds.records[0].ground_truth = path("9-9");
        let p = provider(OracleBackend::new(&ds.records));
        let err = route_all(&ds, RoutingCondition::FlattenedPaths, &fixtures::agentnet_menu(), &p, RouteOptions::default())
            .await
            .unwrap_err();
        assert!(matches!(err, RouteAllError::Dataset(_)));
    }

    #[test]
    fn results_jsonl_round_trip() {
        let r = RoutingResult {
            intent_id: "1-1/01".into(),
            condition: RoutingCondition::FlattenedPaths,
            raw_response: " 1-1 ".into(),
            predicted: Prediction::Path(path("1-1")),
            normalization_applied: vec![NormalizationRule::Trim],
            ground_truth: path("1-1"),
            correct: true,
            known_path: true,
            latency_ms: 12,
            model_name: "m".into(),
            attempt_count: 1,
            error: None,
        };
        let mut buf = Vec::new();
        write_results_jsonl(std::slice::from_ref(&r), &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("\"predicted\":\"1-1\"") && !text.contains("error"));
        assert_eq!(read_results_jsonl(&buf[..]).unwrap(), [r]);
    }

    #[test]
    fn timestamp_honors_source_date_epoch() {
        // only checks the format; the env var is process-global
        let ts = timestamp();
        assert!(ts.ends_with('Z') && ts.len() == 20, "{ts}");
    }
}
