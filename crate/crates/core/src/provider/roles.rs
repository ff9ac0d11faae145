use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ProviderConfig;

/// The three model-backed stages of the experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PipelineStage {
    #[serde(rename = "menugen")]
    MenuGeneration,
    #[serde(rename = "datagen")]
    IntentGeneration,
    #[serde(rename = "routing")]
    Routing,
}

impl PipelineStage {
    pub const ALL: [Self; 3] = [Self::MenuGeneration, Self::IntentGeneration, Self::Routing];

    /// The model each stage used in the original experiment; three distinct
    /// names, so the defaults pass the role check.
    pub fn default_model(self) -> &'static str {
        match self {
            Self::MenuGeneration => "gpt-3.5-turbo",
            Self::IntentGeneration => "gpt-4o-mini",
            Self::Routing => "gpt-4.1-mini",
        }
    }

    pub fn default_config(self) -> ProviderConfig {
        ProviderConfig::with_model(self.default_model())
    }
}

impl fmt::Display for PipelineStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::MenuGeneration => "menugen",
            Self::IntentGeneration => "datagen",
            Self::Routing => "routing",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoleWarning {
    pub stage: PipelineStage,
    pub shares_with: PipelineStage,
    pub model_name: String,
}

impl fmt::Display for RoleWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "stage {} uses model {:?}, already used by stage {}; a model that saw earlier stages may have an unfair advantage",
            self.stage, self.model_name, self.shares_with
        )
    }
}

/// One warning per stage whose model already serves an earlier stage, so
/// three stages on one model give two warnings.
pub fn check_role_separation(stages: &BTreeMap<PipelineStage, ProviderConfig>) -> Vec<RoleWarning> {
    let mut first_user: BTreeMap<&str, PipelineStage> = BTreeMap::new();
    let mut warnings = Vec::new();
    for (stage, config) in stages {
        let model = config.model_name.trim();
        match first_user.get(model) {
            Some(earlier) => warnings.push(RoleWarning {
                stage: *stage,
                shares_with: *earlier,
                model_name: model.to_string(),
            }),
            None => {
                first_user.insert(model, *stage);
            }
        }
    }
    warnings
}
