//! Run configuration, layered as defaults < environment < config file < flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, ValueEnum};
use ivr_route::provider::{PipelineStage, ProviderConfig};
use ivr_route::router::{DatasetFilter, ParseMode};
use ivr_route::RoutingCondition;
use serde::Deserialize;
use serde_json::{Map, Value};

/// The JSON config file. Every field is optional; provider entries are
/// merged field by field over the environment layer.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub menu: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub condition: Option<RoutingCondition>,
    pub filter: Option<DatasetFilter>,
    pub out: Option<PathBuf>,
    pub parse_mode: Option<ParseMode>,
    pub strict_roles: Option<bool>,
    pub seed: Option<u64>,
    pub error_budget: Option<f64>,
    pub providers: BTreeMap<PipelineStage, Map<String, Value>>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }
}

fn env_prefix(stage: PipelineStage) -> &'static str {
    match stage {
        PipelineStage::MenuGeneration => "IVR_MENUGEN",
        PipelineStage::IntentGeneration => "IVR_DATAGEN",
        PipelineStage::Routing => "IVR_ROUTING",
    }
}

/// `IVR_<STAGE>_MODEL`, `IVR_<STAGE>_ENDPOINT` and `IVR_<STAGE>_API_KEY_ENV`
/// override the stage defaults.
fn env_layer(stage: PipelineStage, env: &dyn Fn(&str) -> Option<String>) -> ProviderConfig {
    let mut config = stage.default_config();
    let prefix = env_prefix(stage);
    if let Some(v) = env(&format!("{prefix}_MODEL")) {
        config.model_name = v;
    }
    if let Some(v) = env(&format!("{prefix}_ENDPOINT")) {
        config.endpoint_url = v;
    }
    if let Some(v) = env(&format!("{prefix}_API_KEY_ENV")) {
        config.api_key_env = v;
    }
    config
}

/// Which backend serves a stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProviderKind {
    /// OpenAI-compatible chat-completions endpoint.
    Http,
    /// Answers every routing request with the ground truth.
    Oracle,
    /// Routes by keyword overlap with path breadcrumbs.
    Keyword,
    /// Replies from a JSON object mapping intent id to reply (`--script`).
    Scripted,
    /// Numbered stub texts for generation requests.
    Stub,
}

/// Provider overrides for the stage a command drives.
#[derive(Debug, Clone, Args, Default)]
pub struct ProviderFlags {
    #[arg(long, value_enum)]
    pub provider: Option<ProviderKind>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub api_key_env: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    #[arg(long)]
    pub max_retries: Option<u32>,
    #[arg(long)]
    pub requests_per_second: Option<f64>,
    /// Reply script for `--provider scripted`.
    #[arg(long)]
    pub script: Option<PathBuf>,
}

impl ProviderFlags {
    fn apply(&self, config: &mut ProviderConfig) {
        if let Some(v) = &self.model {
            config.model_name = v.clone();
        }
        if let Some(v) = &self.endpoint {
            config.endpoint_url = v.clone();
        }
        if let Some(v) = &self.api_key_env {
            config.api_key_env = v.clone();
        }
        if self.temperature.is_some() {
            config.temperature = self.temperature;
        }
        if let Some(v) = self.max_in_flight {
            config.max_in_flight = v;
        }
        if let Some(v) = self.max_retries {
            config.max_retries = v;
        }
        if self.requests_per_second.is_some() {
            config.requests_per_second = self.requests_per_second;
        }
    }
}

/// Resolves every stage's provider config; `flags` apply to `stage` only.
pub fn stage_configs(
    file: &FileConfig,
    stage: Option<(PipelineStage, &ProviderFlags)>,
    env: &dyn Fn(&str) -> Option<String>,
) -> anyhow::Result<BTreeMap<PipelineStage, ProviderConfig>> {
    if let Some(unknown) = file.providers.keys().find(|s| !PipelineStage::ALL.contains(s)) {
        bail!("unknown stage {unknown} in config");
    }
    let mut out = BTreeMap::new();
    for s in PipelineStage::ALL {
        let mut value = serde_json::to_value(env_layer(s, env))?;
        if let (Value::Object(base), Some(overrides)) = (&mut value, file.providers.get(&s)) {
            base.extend(overrides.clone());
        }
        let mut config: ProviderConfig =
            serde_json::from_value(value).with_context(|| format!("invalid provider config for stage {s}"))?;
        if let Some((target, flags)) = stage {
            if target == s {
                flags.apply(&mut config);
            }
        }
        out.insert(s, config);
    }
    Ok(out)
}

pub fn process_env(name: &str) -> Option<String> {
    std::env::var(name).ok().filter(|v| !v.is_empty())
}

/// CLI spelling of the routing condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConditionArg {
    #[value(alias = "descriptive_menu")]
    Descriptive,
    #[value(alias = "flattened_paths")]
    Flattened,
}

impl From<ConditionArg> for RoutingCondition {
    fn from(c: ConditionArg) -> Self {
        match c {
            ConditionArg::Descriptive => Self::DescriptiveMenu,
            ConditionArg::Flattened => Self::FlattenedPaths,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FilterArg {
    #[value(name = "base_only", alias = "base-only")]
    BaseOnly,
    All,
}

impl From<FilterArg> for DatasetFilter {
    fn from(f: FilterArg) -> Self {
        match f {
            FilterArg::BaseOnly => Self::BaseOnly,
            FilterArg::All => Self::All,
        }
    }
}
