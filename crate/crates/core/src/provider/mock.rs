//! Deterministic backends for tests, demos and offline runs.
//!
//! * [`OracleBackend`] answers every routing request with the ground truth.
//! * [`KeywordBackend`] routes by keyword overlap with terminal-path breadcrumbs.
//! * [`ScriptedBackend`] replays a fixed list of replies, in call order or
//!   keyed by intent id.
//! * [`StubGeneratorBackend`] answers generation requests with numbered stub texts.
//! * [`FnBackend`] wraps a closure.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use async_trait::async_trait;

use super::{AttemptError, ChatBackend, ChatRequest, ProviderConfig, RequestPurpose};
use crate::datagen::IntentRecord;
use crate::menu::TerminalPath;
use crate::path::DtmfPath;

fn intent_id(request: &ChatRequest) -> Result<&str, AttemptError> {
    match &request.purpose {
        RequestPurpose::Route { intent_id, .. } => Ok(intent_id),
        other => Err(AttemptError::Protocol(format!("mock only answers routing requests, got {other:?}"))),
    }
}

#[derive(Debug, Clone, Default)]
pub struct OracleBackend {
    truths: HashMap<String, DtmfPath>,
}

impl OracleBackend {
    pub fn new(records: &[IntentRecord]) -> Self {
        Self {
            truths: records.iter().map(|r| (r.id.clone(), r.ground_truth.clone())).collect(),
        }
    }
}

#[async_trait]
impl ChatBackend for OracleBackend {
    async fn send(&self, request: &ChatRequest, _config: &ProviderConfig) -> Result<String, AttemptError> {
        let id = intent_id(request)?;
        self.truths
            .get(id)
            .map(ToString::to_string)
            .ok_or_else(|| AttemptError::Protocol(format!("oracle has no ground truth for intent {id:?}")))
    }

    fn is_simulated(&self) -> bool {
        true
    }
}

const STOPWORDS: &[&str] = &[
    "a", "about", "an", "and", "are", "at", "be", "can", "do", "for", "from", "get", "has", "have", "hi", "how", "i",
    "im", "in", "is", "it", "just", "like", "me", "my", "need", "of", "on", "or", "please", "so", "that", "the", "this",
    "to", "uh", "um", "want", "what", "with", "you", "your",
];

fn keywords(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .map(str::to_lowercase)
        .filter(|w| !w.is_empty() && !STOPWORDS.contains(&w.as_str()))
        .collect()
}

// Exact match, or a shared prefix when both words have at least four letters
// ("bill" ~ "billing", "charge" ~ "charges").
fn words_match(a: &str, b: &str) -> bool {
    a == b || (a.len().min(b.len()) >= 4 && (a.starts_with(b) || b.starts_with(a)))
}

/// Picks the terminal path whose breadcrumb shares the most keywords with
/// the query; ties go to the path listed first. Replies `no match` when
/// nothing overlaps.
#[derive(Debug, Clone)]
pub struct KeywordBackend {
    paths: Vec<(DtmfPath, BTreeSet<String>)>,
}

impl KeywordBackend {
    pub fn new(paths: &[TerminalPath]) -> Self {
        Self {
            paths: paths
                .iter()
                .map(|p| (p.path.clone(), keywords(&p.breadcrumb.join(" "))))
                .collect(),
        }
    }

    pub fn route(&self, query: &str) -> Option<&DtmfPath> {
        let query_words = keywords(query);
        let mut best: Option<(&DtmfPath, usize)> = None;
        for (path, words) in &self.paths {
            let score = words
                .iter()
                .filter(|k| query_words.iter().any(|q| words_match(q, k)))
                .count();
            if score > 0 && best.is_none_or(|(_, s)| score > s) {
                best = Some((path, score));
            }
        }
        best.map(|(p, _)| p)
    }
}

#[async_trait]
impl ChatBackend for KeywordBackend {
    async fn send(&self, request: &ChatRequest, _config: &ProviderConfig) -> Result<String, AttemptError> {
        let RequestPurpose::Route { query, .. } = &request.purpose else {
            return Err(AttemptError::Protocol("keyword router only answers routing requests".into()));
        };
        Ok(self.route(query).map_or_else(|| "no match".to_string(), ToString::to_string))
    }

    fn is_simulated(&self) -> bool {
        true
    }
}

enum Script {
    Sequence(Mutex<VecDeque<Result<String, AttemptError>>>),
    Keyed(HashMap<String, String>),
}

/// Fixed replies. A sequence script hands replies out in call order and
/// fails with a protocol error once exhausted; a keyed script answers by
/// intent id, so it is order-independent under concurrency.
pub struct ScriptedBackend {
    script: Script,
    calls: AtomicUsize,
}

impl ScriptedBackend {
    pub fn sequence<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::from_results(replies.into_iter().map(|r| Ok(r.into())).collect())
    }

    pub fn from_results(results: Vec<Result<String, AttemptError>>) -> Self {
        Self {
            script: Script::Sequence(Mutex::new(results.into())),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn keyed(replies: HashMap<String, String>) -> Self {
        Self { script: Script::Keyed(replies), calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

#[async_trait]
impl ChatBackend for ScriptedBackend {
    async fn send(&self, request: &ChatRequest, _config: &ProviderConfig) -> Result<String, AttemptError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        match &self.script {
            Script::Sequence(queue) => queue
                .lock()
                .expect("script lock poisoned")
                .pop_front()
                .unwrap_or_else(|| Err(AttemptError::Protocol("script exhausted".into()))),
            Script::Keyed(map) => {
                let id = intent_id(request)?;
                map.get(id)
                    .cloned()
                    .ok_or_else(|| AttemptError::Protocol(format!("no scripted reply for intent {id:?}")))
            }
        }
    }

    fn is_simulated(&self) -> bool {
        true
    }
}

/// Answers generation requests with predictable texts:
/// `"<path> stub complaint r<round>.<n> about <endpoint>"` for base intents and
/// `"um, <base text> (variant <k>)"` for paraphrases.
#[derive(Debug, Clone, Default)]
pub struct StubGeneratorBackend;

#[async_trait]
impl ChatBackend for StubGeneratorBackend {
    async fn send(&self, request: &ChatRequest, _config: &ProviderConfig) -> Result<String, AttemptError> {
        let texts: Vec<String> = match &request.purpose {
            RequestPurpose::BaseIntents { path, endpoint, count, round } => (1..=*count)
                .map(|n| format!("{path} stub complaint r{round}.{n} about {endpoint}"))
                .collect(),
            RequestPurpose::Paraphrase { base_text, count, round, .. } => (1..=*count)
                .map(|k| match round {
                    0 => format!("um, {base_text} (variant {k})"),
                    r => format!("um, {base_text} (variant {k}, retry {r})"),
                })
                .collect(),
            other => return Err(AttemptError::Protocol(format!("stub generator cannot answer {other:?}"))),
        };
        Ok(serde_json::to_string(&texts).expect("strings serialize"))
    }

    fn is_simulated(&self) -> bool {
        true
    }
}

type ReplyFn = dyn Fn(&ChatRequest) -> Result<String, AttemptError> + Send + Sync;

pub struct FnBackend {
    reply: Box<ReplyFn>,
}

impl FnBackend {
    pub fn new(reply: impl Fn(&ChatRequest) -> Result<String, AttemptError> + Send + Sync + 'static) -> Self {
        Self { reply: Box::new(reply) }
    }
}

#[async_trait]
impl ChatBackend for FnBackend {
    async fn send(&self, request: &ChatRequest, _config: &ProviderConfig) -> Result<String, AttemptError> {
        (self.reply)(request)
    }

    fn is_simulated(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{fixtures, menu};

    fn keyword_router() -> KeywordBackend {
        KeywordBackend::new(&menu::flatten(&fixtures::agentnet_menu()))
    }

    // Independent scorer: count, for each path, breadcrumb words that some
    // query word equals or shares a 4+ letter prefix with.
    fn brute_force(query: &str) -> Option<String> {
        let stop: BTreeSet<&str> = STOPWORDS.iter().copied().collect();
        let words = |s: &str| -> BTreeSet<String> {
            s.to_lowercase()
                .split(|c: char| !c.is_alphanumeric())
                .filter(|w| !w.is_empty() && !stop.contains(w))
                .map(String::from)
                .collect()
        };
        let q = words(query);
        let mut best = (0, None);
        for p in menu::flatten(&fixtures::agentnet_menu()) {
            let k = words(&p.breadcrumb.join(" "));
            let score = k
                .iter()
                .filter(|kw| {
                    q.iter().any(|qw| {
                        qw == *kw || (qw.len() >= 4 && kw.len() >= 4 && (qw.starts_with(kw.as_str()) || kw.starts_with(qw.as_str())))
                    })
                })
                .count();
            if score > best.0 {
                best = (score, Some(p.path.to_string()));
            }
        }
        best.1
    }

    #[test]
    fn keyword_router_agrees_with_brute_force() {
        let router = keyword_router();
        for record in fixtures::agentnet_dataset().records.iter().take(300) {
            assert_eq!(router.route(&record.text).map(ToString::to_string), brute_force(&record.text), "{}", record.text);
        }
    }

    #[test]
    fn keyword_examples() {
        let router = keyword_router();
        // "bill" overlaps "Billing" on every billing path; the tie goes to 1-1
        assert_eq!(router.route("my bill looks wrong").unwrap().to_string(), "1-1");
        assert_eq!(router.route("I want to dispute a charge on my bill").unwrap().to_string(), "1-4");
        assert_eq!(router.route("my internet is so slow").unwrap().to_string(), "2-1-2");
        assert!(router.route("zzz").is_none());
    }

    #[tokio::test]
    async fn keyed_script_answers_by_intent() {
        let backend = ScriptedBackend::keyed(HashMap::from([("a".to_string(), "1-1".to_string())]));
        let config = ProviderConfig::default();
        let req = |id: &str| ChatRequest {
            content: String::new(),
            purpose: RequestPurpose::Route {
                intent_id: id.into(),
                query: "q".into(),
                condition: crate::RoutingCondition::FlattenedPaths,
            },
        };
        assert_eq!(backend.send(&req("a"), &config).await.unwrap(), "1-1");
        assert!(backend.send(&req("b"), &config).await.is_err());
    }
}
