use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ResourceKind {
    Deployment,
    Secret,
    ConfigMap,
    NetworkPolicy,
    ServiceAccount,
    FeatureFlag,
}

impl ResourceKind {
    pub const ALL: [ResourceKind; 6] = [
        ResourceKind::Deployment,
        ResourceKind::Secret,
        ResourceKind::ConfigMap,
        ResourceKind::NetworkPolicy,
        ResourceKind::ServiceAccount,
        ResourceKind::FeatureFlag,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ResourceKind::Deployment => "Deployment",
            ResourceKind::Secret => "Secret",
            ResourceKind::ConfigMap => "ConfigMap",
            ResourceKind::NetworkPolicy => "NetworkPolicy",
            ResourceKind::ServiceAccount => "ServiceAccount",
            ResourceKind::FeatureFlag => "FeatureFlag",
        }
    }
}

impl fmt::Display for ResourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ResourceKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ResourceKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| SimError::BadKey(format!("unknown resource kind `{s}`")))
    }
}

/// `(kind, namespace, name)`; rendered as `Kind/namespace/name`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ResourceKey {
    pub kind: ResourceKind,
    pub namespace: String,
    pub name: String,
}

impl ResourceKey {
    pub fn new(kind: ResourceKind, namespace: impl Into<String>, name: impl Into<String>) -> Self {
        ResourceKey {
            kind,
            namespace: namespace.into(),
            name: name.into(),
        }
    }

    pub fn deployment(namespace: &str, name: &str) -> Self {
        Self::new(ResourceKind::Deployment, namespace, name)
    }

    /// Key of a resource of `kind` living next to this one.
    pub fn sibling(&self, kind: ResourceKind, name: &str) -> Self {
        Self::new(kind, self.namespace.clone(), name)
    }
}

impl fmt::Display for ResourceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.kind, self.namespace, self.name)
    }
}

impl FromStr for ResourceKey {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.splitn(3, '/');
        let (kind, ns, name) = match (parts.next(), parts.next(), parts.next()) {
            (Some(k), Some(ns), Some(n)) => (k, ns, n),
            _ => return Err(SimError::BadKey(format!("expected Kind/namespace/name, got `{s}`"))),
        };
        let valid = |p: &str| !p.is_empty() && !p.contains(char::is_whitespace) && !p.contains(':');
        if !valid(ns) || !valid(name) || name.contains('/') {
            return Err(SimError::BadKey(format!("malformed resource key `{s}`")));
        }
        Ok(ResourceKey::new(kind.parse()?, ns, name))
    }
}

impl Serialize for ResourceKey {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ResourceKey {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSource {
    Literal(String),
    SecretKeyRef {
        secret: String,
        key: String,
        /// Name of a backend credential this value must match for the
        /// workload to start.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        authenticates: Option<String>,
    },
    ConfigMapKeyRef {
        config_map: String,
        key: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    pub path: String,
    pub port: u32,
    pub healthy_paths: BTreeSet<String>,
}

fn default_latency() -> f64 {
    50.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeploymentSpec {
    pub replicas_desired: u32,
    pub image: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub command: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub env: BTreeMap<String, EnvSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cpu_limit_millicores: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory_limit_mib: Option<u32>,
    pub cpu_demand_millicores: u32,
    pub memory_working_set_mib: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub liveness_probe: Option<ProbeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub readiness_probe: Option<ProbeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub serviceaccount: Option<String>,
    /// Deployments this one calls; edges a NetworkPolicy can cut.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub depends_on: Vec<String>,
    #[serde(default = "default_latency")]
    pub base_latency_ms: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub annotations: BTreeMap<String, String>,
    #[serde(default)]
    pub restart_generation: u64,
}

impl DeploymentSpec {
    fn validate(&self) -> Result<(), String> {
        if self.cpu_demand_millicores == 0 || self.memory_working_set_mib == 0 {
            return Err("demand fields must be positive".into());
        }
        if self.cpu_limit_millicores == Some(0) || self.memory_limit_mib == Some(0) {
            return Err("limits must be positive when set".into());
        }
        for probe in [&self.liveness_probe, &self.readiness_probe].into_iter().flatten() {
            if !(1..=65535).contains(&probe.port) {
                return Err(format!("probe port {} out of range", probe.port));
            }
            if probe.healthy_paths.is_empty() {
                return Err("probe healthy_paths must be non-empty".into());
            }
        }
        if !self.base_latency_ms.is_finite() || self.base_latency_ms < 0.0 {
            return Err("base_latency_ms must be finite and non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    #[serde(default)]
    pub data: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkPolicySpec {
    /// Deployment whose ingress this policy restricts.
    pub selector: String,
    /// Callers denied; `*` denies every caller.
    pub deny_ingress_from: BTreeSet<String>,
}

impl NetworkPolicySpec {
    pub fn denies(&self, callee: &str, caller: &str) -> bool {
        self.selector == callee
            && (self.deny_ingress_from.contains("*") || self.deny_ingress_from.contains(caller))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceAccountSpec {}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlagEffect {
    #[serde(default)]
    pub error_rate: f64,
    #[serde(default)]
    pub added_latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureFlagSpec {
    /// Deployment the flag toggles behaviour in.
    pub target: String,
    pub state: String,
    #[serde(default)]
    pub variants: BTreeMap<String, FlagEffect>,
}

impl FeatureFlagSpec {
    pub fn effect(&self) -> FlagEffect {
        self.variants.get(&self.state).copied().unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Resource {
    Deployment(DeploymentSpec),
    Secret(DataSpec),
    ConfigMap(DataSpec),
    NetworkPolicy(NetworkPolicySpec),
    ServiceAccount(ServiceAccountSpec),
    FeatureFlag(FeatureFlagSpec),
}

impl Resource {
    pub fn kind(&self) -> ResourceKind {
        match self {
            Resource::Deployment(_) => ResourceKind::Deployment,
            Resource::Secret(_) => ResourceKind::Secret,
            Resource::ConfigMap(_) => ResourceKind::ConfigMap,
            Resource::NetworkPolicy(_) => ResourceKind::NetworkPolicy,
            Resource::ServiceAccount(_) => ResourceKind::ServiceAccount,
            Resource::FeatureFlag(_) => ResourceKind::FeatureFlag,
        }
    }

    pub fn to_value(&self) -> Value {
        let v = match self {
            Resource::Deployment(s) => serde_json::to_value(s),
            Resource::Secret(s) | Resource::ConfigMap(s) => serde_json::to_value(s),
            Resource::NetworkPolicy(s) => serde_json::to_value(s),
            Resource::ServiceAccount(s) => serde_json::to_value(s),
            Resource::FeatureFlag(s) => serde_json::to_value(s),
        };
        v.expect("resource specs serialize to JSON")
    }

    /// Decodes and validates a resource of `kind` from a JSON value.
    pub fn from_value(kind: ResourceKind, value: Value) -> Result<Resource, String> {
        fn de<T: serde::de::DeserializeOwned>(v: Value) -> Result<T, String> {
            serde_json::from_value(v).map_err(|e| e.to_string())
        }
        let r = match kind {
            ResourceKind::Deployment => {
                let spec: DeploymentSpec = de(value)?;
                spec.validate()?;
                Resource::Deployment(spec)
            }
            ResourceKind::Secret => Resource::Secret(de(value)?),
            ResourceKind::ConfigMap => Resource::ConfigMap(de(value)?),
            ResourceKind::NetworkPolicy => Resource::NetworkPolicy(de(value)?),
            ResourceKind::ServiceAccount => Resource::ServiceAccount(de(value)?),
            ResourceKind::FeatureFlag => {
                let spec: FeatureFlagSpec = de(value)?;
                for e in spec.variants.values() {
                    if !(0.0..=1.0).contains(&e.error_rate) || !e.added_latency_ms.is_finite() || e.added_latency_ms < 0.0 {
                        return Err("flag effects must have error_rate in [0,1] and non-negative latency".into());
                    }
                }
                Resource::FeatureFlag(spec)
            }
        };
        Ok(r)
    }

    pub fn as_deployment(&self) -> Option<&DeploymentSpec> {
        match self {
            Resource::Deployment(d) => Some(d),
            _ => None,
        }
    }
}

/// Reads `a.b.c` out of a JSON value.
pub fn lookup_path<'a>(value: &'a Value, path: &str) -> Option<&'a Value> {
    if path.is_empty() {
        return Some(value);
    }
    path.split('.').try_fold(value, |v, seg| v.as_object()?.get(seg))
}

/// Writes `a.b.c = new`. A `null` removes the final segment. Missing
/// intermediate objects are created.
pub fn write_path(value: &mut Value, path: &str, new: Value) -> Result<(), String> {
    let segments: Vec<&str> = path.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(format!("malformed field path `{path}`"));
    }
    let (last, parents) = segments.split_last().expect("split yields at least one segment");
    let mut cursor = value;
    for seg in parents {
        let obj = cursor
            .as_object_mut()
            .ok_or_else(|| format!("`{seg}` in `{path}` is not inside an object"))?;
        cursor = obj
            .entry(seg.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
        if cursor.is_null() {
            *cursor = Value::Object(Default::default());
        }
    }
    let obj = cursor
        .as_object_mut()
        .ok_or_else(|| format!("parent of `{last}` in `{path}` is not an object"))?;
    if new.is_null() {
        obj.remove(*last);
    } else {
        obj.insert(last.to_string(), new);
    }
    Ok(())
}
