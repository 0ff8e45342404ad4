//! The closed tool set agents act through.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::sim::{ClusterState, MetricSample, Mutation, PodPhase, Resource, ResourceKey, ResourceKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tool {
    GetResource,
    ListPods,
    ReadMetrics,
    ReadLogs,
    PatchDeployment,
    PatchSecret,
    PatchConfigmap,
    SetFlag,
    Scale,
    Restart,
    ApplyNetworkpolicy,
    MultiResourceApply,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tier {
    #[serde(rename = "T1-read")]
    T1Read,
    #[serde(rename = "T2-mutate")]
    T2Mutate,
    #[serde(rename = "T3-approved")]
    T3Approved,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reversibility {
    Reversible,
    Irreversible,
}

impl Tool {
    pub const ALL: [Tool; 12] = [
        Tool::GetResource,
        Tool::ListPods,
        Tool::ReadMetrics,
        Tool::ReadLogs,
        Tool::PatchDeployment,
        Tool::PatchSecret,
        Tool::PatchConfigmap,
        Tool::SetFlag,
        Tool::Scale,
        Tool::Restart,
        Tool::ApplyNetworkpolicy,
        Tool::MultiResourceApply,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Tool::GetResource => "get-resource",
            Tool::ListPods => "list-pods",
            Tool::ReadMetrics => "read-metrics",
            Tool::ReadLogs => "read-logs",
            Tool::PatchDeployment => "patch-deployment",
            Tool::PatchSecret => "patch-secret",
            Tool::PatchConfigmap => "patch-configmap",
            Tool::SetFlag => "set-flag",
            Tool::Scale => "scale",
            Tool::Restart => "restart",
            Tool::ApplyNetworkpolicy => "apply-networkpolicy",
            Tool::MultiResourceApply => "multi-resource-apply",
        }
    }

    pub fn tier(self) -> Tier {
        match self {
            Tool::GetResource | Tool::ListPods | Tool::ReadMetrics | Tool::ReadLogs => Tier::T1Read,
            Tool::ApplyNetworkpolicy | Tool::MultiResourceApply => Tier::T3Approved,
            _ => Tier::T2Mutate,
        }
    }

    pub fn reversibility(self) -> Reversibility {
        match self.tier() {
            Tier::T3Approved => Reversibility::Irreversible,
            _ => Reversibility::Reversible,
        }
    }

    pub fn is_mutating(self) -> bool {
        self.tier() != Tier::T1Read
    }
}

impl fmt::Display for Tool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown tool `{0}`")]
pub struct UnknownTool(pub String);

impl FromStr for Tool {
    type Err = UnknownTool;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Tool::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| UnknownTool(s.to_string()))
    }
}

impl Serialize for Tool {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Tool {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One tool invocation. Tier and reversibility follow from the tool.
///
/// Argument conventions:
/// - `patch-*`: field path → value, `null` removes
/// - `scale`: `replicas`
/// - `set-flag`: `state`
/// - `apply-networkpolicy`: `action` (`create` | `delete`) and, for create, `spec`
/// - `multi-resource-apply`: `mutations`, a list of `{target, mutation}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolCall {
    pub tool: Tool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<ResourceKey>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub args: BTreeMap<String, Value>,
}

impl ToolCall {
    pub fn new(tool: Tool, target: Option<ResourceKey>) -> Self {
        ToolCall { tool, target, args: BTreeMap::new() }
    }

    pub fn with_arg(mut self, name: &str, value: Value) -> Self {
        self.args.insert(name.to_string(), value);
        self
    }

    pub fn tier(&self) -> Tier {
        self.tool.tier()
    }

    pub fn reversibility(&self) -> Reversibility {
        self.tool.reversibility()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ToolError {
    #[error("{tool} needs a target")]
    MissingTarget { tool: Tool },
    #[error("{tool} cannot act on a {kind}")]
    WrongKind { tool: Tool, kind: ResourceKind },
    #[error("{tool}: no such resource {key}")]
    UnknownTarget { tool: Tool, key: ResourceKey },
    #[error("{tool}: bad args: {reason}")]
    BadArgs { tool: Tool, reason: String },
    #[error("{tool} is read-only")]
    NotMutating { tool: Tool },
}

fn target_of(call: &ToolCall, kind: ResourceKind, state: &ClusterState, must_exist: bool) -> Result<ResourceKey, ToolError> {
    let tool = call.tool;
    let key = call.target.clone().ok_or(ToolError::MissingTarget { tool })?;
    if key.kind != kind {
        return Err(ToolError::WrongKind { tool, kind: key.kind });
    }
    if must_exist && !state.contains(&key) {
        return Err(ToolError::UnknownTarget { tool, key });
    }
    Ok(key)
}

/// The single-resource (or, for multi-resource-apply, multi-resource)
/// changes a mutating call stands for. Pure: nothing is applied.
pub fn mutations_for(call: &ToolCall, state: &ClusterState) -> Result<Vec<(ResourceKey, Mutation)>, ToolError> {
    let tool = call.tool;
    let bad = |reason: &str| ToolError::BadArgs { tool, reason: reason.to_string() };
    let arg = |name: &str| call.args.get(name);
    let patch_all = |kind| -> Result<Vec<(ResourceKey, Mutation)>, ToolError> {
        let key = target_of(call, kind, state, true)?;
        if call.args.is_empty() {
            return Err(bad("nothing to patch"));
        }
        Ok(vec![(key, Mutation::Patch(call.args.clone()))])
    };
    match tool {
        Tool::GetResource | Tool::ListPods | Tool::ReadMetrics | Tool::ReadLogs => Err(ToolError::NotMutating { tool }),
        Tool::PatchDeployment => patch_all(ResourceKind::Deployment),
        Tool::PatchSecret => patch_all(ResourceKind::Secret),
        Tool::PatchConfigmap => patch_all(ResourceKind::ConfigMap),
        Tool::SetFlag => {
            let key = target_of(call, ResourceKind::FeatureFlag, state, true)?;
            let s = arg("state").and_then(Value::as_str).ok_or_else(|| bad("`state` must be a string"))?;
            Ok(vec![(key, Mutation::patch([("state", Value::from(s))]))])
        }
        Tool::Scale => {
            let key = target_of(call, ResourceKind::Deployment, state, true)?;
            let n = arg("replicas").and_then(Value::as_u64).ok_or_else(|| bad("`replicas` must be a non-negative integer"))?;
            Ok(vec![(key, Mutation::patch([("replicas_desired", Value::from(n))]))])
        }
        Tool::Restart => {
            let key = target_of(call, ResourceKind::Deployment, state, true)?;
            let generation = state.read_field(&key, "restart_generation").and_then(|v| v.as_u64()).unwrap_or(0);
            Ok(vec![(key, Mutation::patch([("restart_generation", Value::from(generation + 1))]))])
        }
        Tool::ApplyNetworkpolicy => {
            let action = arg("action").and_then(Value::as_str).unwrap_or("create");
            match action {
                "create" => {
                    let key = target_of(call, ResourceKind::NetworkPolicy, state, false)?;
                    let spec = arg("spec").cloned().ok_or_else(|| bad("create needs `spec`"))?;
                    Ok(vec![(key, Mutation::Create(spec))])
                }
                "delete" => Ok(vec![(target_of(call, ResourceKind::NetworkPolicy, state, true)?, Mutation::Delete)]),
                other => Err(bad(&format!("unknown action `{other}`"))),
            }
        }
        Tool::MultiResourceApply => {
            #[derive(Deserialize)]
            #[serde(deny_unknown_fields)]
            struct Item {
                target: ResourceKey,
                mutation: Mutation,
            }
            let items: Vec<Item> = serde_json::from_value(arg("mutations").cloned().unwrap_or(Value::Null))
                .map_err(|e| bad(&format!("`mutations`: {e}")))?;
            if items.is_empty() {
                return Err(bad("`mutations` is empty"));
            }
            Ok(items.into_iter().map(|i| (i.target, i.mutation)).collect())
        }
    }
}

/// Keys a call would touch, for snapshotting.
pub fn touched_keys(changes: &[(ResourceKey, Mutation)]) -> std::collections::BTreeSet<ResourceKey> {
    changes.iter().map(|(k, _)| k.clone()).collect()
}

/// Applies a list of changes in order, all or nothing.
pub fn apply_changes(state: &ClusterState, changes: &[(ResourceKey, Mutation)]) -> Result<ClusterState, crate::sim::SimError> {
    let mut next = state.clone();
    for (key, m) in changes {
        next = next.apply_mutation(key, m)?;
    }
    Ok(next)
}

/// Log lines a workload would print in its current state.
fn synthesized_logs(state: &ClusterState, key: &ResourceKey) -> Vec<String> {
    let Some(Resource::Deployment(spec)) = state.resource(key) else {
        return Vec::new();
    };
    let status = state.pod_status(key).copied();
    let mut lines = Vec::new();
    match status.map(|s| s.phase) {
        Some(PodPhase::CrashLoop) => {
            for (var, src) in &spec.env {
                match src {
                    crate::sim::EnvSource::SecretKeyRef { secret, key: k, authenticates } => {
                        match state.read_field(&key.sibling(ResourceKind::Secret, secret), &format!("data.{k}")) {
                            None => lines.push(format!("fatal: env {var}: secret {secret} has no key {k}")),
                            Some(v) => {
                                if let Some(backend) = authenticates {
                                    if state.credentials().get(backend).map(|c| Value::from(c.as_str())) != Some(v) {
                                        lines.push(format!("fatal: {backend}: authentication failed for {var}"));
                                    }
                                }
                            }
                        }
                    }
                    crate::sim::EnvSource::ConfigMapKeyRef { config_map, key: k } => {
                        if state.read_field(&key.sibling(ResourceKind::ConfigMap, config_map), &format!("data.{k}")).is_none() {
                            lines.push(format!("fatal: required variable {var} is not set"));
                        }
                    }
                    crate::sim::EnvSource::Literal(_) => {}
                }
            }
            if lines.is_empty() {
                if let Some(p) = &spec.liveness_probe {
                    lines.push(format!("kubelet: liveness probe failed: GET {}:{} returned 503", p.path, p.port));
                }
            }
        }
        Some(PodPhase::OOMKilled) => lines.push("kernel: memory cgroup out of memory: killed process".into()),
        Some(PodPhase::ImagePullError) => lines.push(format!("kubelet: failed to pull image {}: not found", spec.image)),
        Some(PodPhase::Pending) => lines.push("admission: serviceaccount not found".into()),
        Some(PodPhase::NotReady) => {
            if let Some(p) = &spec.readiness_probe {
                lines.push(format!("kubelet: readiness probe failed: GET {}:{} returned 404", p.path, p.port));
            }
        }
        Some(PodPhase::Running) | None => {}
    }
    if status.is_some_and(|s| s.cpu_throttled) {
        lines.push("cgroup: cpu throttled".into());
    }
    lines
}

/// Executes a read-only call.
pub fn read(call: &ToolCall, state: &ClusterState, last_sample: Option<&MetricSample>) -> Result<Value, ToolError> {
    let tool = call.tool;
    match tool {
        Tool::GetResource => {
            let key = call.target.clone().ok_or(ToolError::MissingTarget { tool })?;
            let r = state.resource(&key).ok_or_else(|| ToolError::UnknownTarget { tool, key: key.clone() })?;
            let mut v = r.to_value();
            if let Some(s) = state.pod_status(&key) {
                v["status"] = serde_json::to_value(s).expect("status serializes");
            }
            Ok(v)
        }
        Tool::ListPods => {
            let mut out = serde_json::Map::new();
            for (key, spec) in state.deployments() {
                if let Some(s) = state.pod_status(key) {
                    out.insert(
                        key.name.clone(),
                        serde_json::json!({
                            "phase": s.phase.as_str(),
                            "ready": s.ready_replicas,
                            "desired": spec.replicas_desired,
                            "restarts": s.restart_count,
                            "cpu_throttled": s.cpu_throttled,
                        }),
                    );
                }
            }
            Ok(Value::Object(out))
        }
        Tool::ReadMetrics => {
            if !state.metrics_enabled() {
                return Ok(Value::Null);
            }
            Ok(last_sample.map_or(Value::Null, |s| serde_json::to_value(s).expect("sample serializes")))
        }
        Tool::ReadLogs => {
            let key = call.target.clone().ok_or(ToolError::MissingTarget { tool })?;
            if key.kind != ResourceKind::Deployment {
                return Err(ToolError::WrongKind { tool, kind: key.kind });
            }
            if !state.contains(&key) {
                return Err(ToolError::UnknownTarget { tool, key });
            }
            Ok(Value::from(synthesized_logs(state, &key)))
        }
        _ => Err(ToolError::BadArgs { tool, reason: "not a read tool".into() }),
    }
}
