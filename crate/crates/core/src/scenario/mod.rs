//! Scenario documents: one injectable fault, how to tell it is fixed or made
//! worse, and the ground-truth root cause.

mod condition;
mod library;
mod vocab;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use condition::{Check, Comparator, Condition, ConditionParseError, ConditionSource, Scalar, METRIC_NAMES};
pub use library::{anchor_scenarios, builtin_scenarios, coverage_scenarios, ANCHOR_IDS};
pub use vocab::{
    load_vocabulary, VocabEntry, Vocabulary, VocabularyError, FRAMEWORK_ERROR, HISTORY, UNCLASSIFIED,
    VOCABULARY_SIZE,
};

use crate::sim::{ClusterState, ResourceKey};
use crate::tools::{Tool, ToolCall};

pub const DEFAULT_TIME_BUDGET_S: u32 = 600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InjectorType {
    DeploymentPatch,
    SecretContent,
    ConfigmapPatch,
    FlagdFlag,
    NetworkPolicy,
    PodEvict,
}

impl InjectorType {
    pub fn as_str(self) -> &'static str {
        match self {
            InjectorType::DeploymentPatch => "deployment-patch",
            InjectorType::SecretContent => "secret-content",
            InjectorType::ConfigmapPatch => "configmap-patch",
            InjectorType::FlagdFlag => "flagd-flag",
            InjectorType::NetworkPolicy => "network-policy",
            InjectorType::PodEvict => "pod-evict",
        }
    }
}

impl fmt::Display for InjectorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectorSpec {
    #[serde(rename = "type")]
    pub kind: InjectorType,
    pub target: ResourceKey,
    #[serde(default)]
    pub params: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    pub primary_category: String,
    #[serde(default)]
    pub secondary_categories: Vec<String>,
}

impl GroundTruth {
    pub fn mentions(&self, category: &str) -> bool {
        self.primary_category == category || self.secondary_categories.iter().any(|c| c == category)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub id: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    /// What an on-call engineer would be paged with; the retrieval query.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub alert: String,
    pub injector: InjectorSpec,
    pub fixed_when: Vec<Condition>,
    #[serde(default)]
    pub regressed_when: Vec<Condition>,
    pub ground_truth: GroundTruth,
    pub expected_actions: Vec<String>,
    /// The known-good fix, as tool calls. Only reference agents read it.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub remediation: Vec<ToolCall>,
    pub time_budget_s: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric_weights: Option<BTreeMap<String, f64>>,
}

impl ScenarioSpec {
    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("scenario specs always serialize")
    }

    pub fn expected_tools(&self) -> Vec<Tool> {
        self.expected_actions.iter().filter_map(|a| a.parse().ok()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("vocabulary violation: {0}")]
    Vocabulary(String),
}

/// Parses and validates a scenario document against a vocabulary.
pub fn parse_scenario(document: &str, vocab: &Vocabulary) -> Result<ScenarioSpec, ScenarioError> {
    let raw: serde_yaml::Value = serde_yaml::from_str(document).map_err(|e| ScenarioError::Syntax(e.to_string()))?;
    let spec: ScenarioSpec = serde_yaml::from_value(raw).map_err(|e| ScenarioError::Schema(e.to_string()))?;

    if spec.id.trim().is_empty() {
        return Err(ScenarioError::Schema("id must be non-empty".into()));
    }
    if spec.fixed_when.is_empty() {
        return Err(ScenarioError::Schema("fixed_when must list at least one condition".into()));
    }
    if spec.time_budget_s == 0 {
        return Err(ScenarioError::Schema("time_budget_s must be positive".into()));
    }
    if let Some(w) = &spec.metric_weights {
        if let Some((name, _)) = w.iter().find(|(_, v)| !v.is_finite() || **v < 0.0) {
            return Err(ScenarioError::Schema(format!("metric weight for `{name}` must be finite and non-negative")));
        }
    }

    let gt = &spec.ground_truth;
    if gt.primary_category == FRAMEWORK_ERROR {
        return Err(ScenarioError::Vocabulary("framework-error is reserved and cannot be a ground truth".into()));
    }
    for id in std::iter::once(&gt.primary_category).chain(&gt.secondary_categories) {
        if !vocab.contains(id) {
            return Err(ScenarioError::Vocabulary(format!("unknown category `{id}`")));
        }
    }
    if gt.secondary_categories.contains(&gt.primary_category) {
        return Err(ScenarioError::Vocabulary("primary category repeated among secondaries".into()));
    }
    Ok(spec)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Finding {
    DanglingRef { location: String, key: ResourceKey },
    UnknownTool(String),
    DeprecatedCategory(String),
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::DanglingRef { location, key } => write!(f, "{location} names {key}, absent from the topology"),
            Finding::UnknownTool(t) => write!(f, "expected_actions lists unknown tool `{t}`"),
            Finding::DeprecatedCategory(c) => write!(f, "category `{c}` is deprecated"),
        }
    }
}

/// Cross-checks a parsed scenario against a vocabulary and a topology.
pub fn validate_scenario(spec: &ScenarioSpec, vocab: &Vocabulary, topology: &ClusterState) -> Vec<Finding> {
    let mut findings = Vec::new();
    let created = (spec.injector.kind == InjectorType::NetworkPolicy).then_some(&spec.injector.target);
    let mut check = |location: String, key: &ResourceKey| {
        if !topology.contains(key) && created != Some(key) {
            findings.push(Finding::DanglingRef { location, key: key.clone() });
        }
    };
    // network-policy creates its target; every other injector mutates an existing one
    check("injector.target".into(), &spec.injector.target);
    for (list, conds) in [("fixed_when", &spec.fixed_when), ("regressed_when", &spec.regressed_when)] {
        for (i, c) in conds.iter().enumerate() {
            if let Some(key) = c.resource_key() {
                check(format!("{list}[{i}]"), key);
            }
        }
    }
    for (i, call) in spec.remediation.iter().enumerate() {
        if let Some(key) = &call.target {
            check(format!("remediation[{i}]"), key);
        }
    }
    if let Some(weights) = &spec.metric_weights {
        for name in weights.keys() {
            if !topology.deployments().any(|(k, _)| &k.name == name) {
                findings.push(Finding::DanglingRef {
                    location: "metric_weights".into(),
                    key: ResourceKey::deployment("default", name),
                });
            }
        }
    }
    for a in &spec.expected_actions {
        if a.parse::<Tool>().is_err() {
            findings.push(Finding::UnknownTool(a.clone()));
        }
    }
    let gt = &spec.ground_truth;
    for id in std::iter::once(&gt.primary_category).chain(&gt.secondary_categories) {
        if vocab.get(id).is_some_and(|e| e.deprecated) {
            findings.push(Finding::DeprecatedCategory(id.clone()));
        }
    }
    findings
}
