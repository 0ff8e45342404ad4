//! Deterministic simulated cluster.
//!
//! A [`ClusterState`] is a plain value: every mutation returns a new state and
//! leaves the input untouched. Pod health and SLO metrics are recomputed on
//! each [`ClusterState::tick`] from the health rules in [`health`].

mod fixture;
pub mod health;
mod resource;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use fixture::{load_topology, Topology};
pub use health::PodRuntime;
pub use resource::{
    lookup_path, write_path, DataSpec, DeploymentSpec, EnvSource, FeatureFlagSpec, FlagEffect,
    NetworkPolicySpec, ProbeSpec, Resource, ResourceKey, ResourceKind, ServiceAccountSpec,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("unknown resource {0}")]
    UnknownKey(ResourceKey),
    #[error("resource {0} already exists")]
    AlreadyExists(ResourceKey),
    #[error("type mismatch patching {key}: {reason}")]
    TypeMismatch { key: ResourceKey, reason: String },
    #[error("bad resource key: {0}")]
    BadKey(String),
    #[error("bad topology document: {0}")]
    Topology(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct LogicalClock {
    tick: u64,
}

impl LogicalClock {
    pub fn tick(&self) -> u64 {
        self.tick
    }

    fn advance(&mut self) {
        self.tick += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PodPhase {
    Running,
    Pending,
    CrashLoop,
    ImagePullError,
    OOMKilled,
    NotReady,
}

impl PodPhase {
    pub fn as_str(self) -> &'static str {
        match self {
            PodPhase::Running => "Running",
            PodPhase::Pending => "Pending",
            PodPhase::CrashLoop => "CrashLoop",
            PodPhase::ImagePullError => "ImagePullError",
            PodPhase::OOMKilled => "OOMKilled",
            PodPhase::NotReady => "NotReady",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PodStatus {
    pub phase: PodPhase,
    pub ready_replicas: u32,
    pub restart_count: u32,
    pub cpu_throttled: bool,
}

impl PodStatus {
    pub fn is_healthy(&self, desired: u32) -> bool {
        self.phase == PodPhase::Running && self.ready_replicas >= desired && !self.cpu_throttled && desired > 0
    }

    fn field(&self, name: &str) -> Option<Value> {
        Some(match name {
            "phase" => Value::from(self.phase.as_str()),
            "ready_replicas" => Value::from(self.ready_replicas),
            "restart_count" => Value::from(self.restart_count),
            "cpu_throttled" => Value::from(self.cpu_throttled),
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    pub tick: u64,
    pub error_rate: f64,
    pub p99_latency_ms: f64,
    pub availability: f64,
}

impl MetricSample {
    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "error_rate" => Some(self.error_rate),
            "p99_latency_ms" => Some(self.p99_latency_ms),
            "availability" => Some(self.availability),
            _ => None,
        }
    }
}

/// A single-resource change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mutation {
    /// Field path → new value; `null` removes the field.
    Patch(BTreeMap<String, Value>),
    Create(Value),
    Delete,
}

impl Mutation {
    pub fn patch<I, K>(fields: I) -> Mutation
    where
        I: IntoIterator<Item = (K, Value)>,
        K: Into<String>,
    {
        Mutation::Patch(fields.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub tick: u64,
    pub entries: BTreeMap<ResourceKey, Value>,
}

impl SnapshotRecord {
    pub fn keys(&self) -> impl Iterator<Item = &ResourceKey> {
        self.entries.keys()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    resources: BTreeMap<ResourceKey, Resource>,
    clock: LogicalClock,
    derived: BTreeMap<ResourceKey, PodStatus>,
    runtime: BTreeMap<ResourceKey, PodRuntime>,
    valid_images: BTreeSet<String>,
    credentials: BTreeMap<String, String>,
    metric_weights: BTreeMap<String, f64>,
    metrics_enabled: bool,
}

impl ClusterState {
    pub fn new(
        resources: BTreeMap<ResourceKey, Resource>,
        valid_images: BTreeSet<String>,
        credentials: BTreeMap<String, String>,
    ) -> Self {
        let mut state = ClusterState {
            resources,
            clock: LogicalClock::default(),
            derived: BTreeMap::new(),
            runtime: BTreeMap::new(),
            valid_images,
            credentials,
            metric_weights: BTreeMap::new(),
            metrics_enabled: true,
        };
        health::derive_all(&mut state);
        state
    }

    pub fn clock(&self) -> LogicalClock {
        self.clock
    }

    pub fn now(&self) -> u64 {
        self.clock.tick
    }

    pub fn resources(&self) -> &BTreeMap<ResourceKey, Resource> {
        &self.resources
    }

    pub fn resource(&self, key: &ResourceKey) -> Option<&Resource> {
        self.resources.get(key)
    }

    pub fn contains(&self, key: &ResourceKey) -> bool {
        self.resources.contains_key(key)
    }

    pub fn pod_status(&self, key: &ResourceKey) -> Option<&PodStatus> {
        self.derived.get(key)
    }

    pub fn pod_statuses(&self) -> &BTreeMap<ResourceKey, PodStatus> {
        &self.derived
    }

    pub fn deployments(&self) -> impl Iterator<Item = (&ResourceKey, &DeploymentSpec)> {
        self.resources
            .iter()
            .filter_map(|(k, r)| r.as_deployment().map(|d| (k, d)))
    }

    pub fn valid_images(&self) -> &BTreeSet<String> {
        &self.valid_images
    }

    pub fn credentials(&self) -> &BTreeMap<String, String> {
        &self.credentials
    }

    pub fn metrics_enabled(&self) -> bool {
        self.metrics_enabled
    }

    /// Simulates the metrics backend going away (or coming back).
    pub fn with_metrics_enabled(mut self, enabled: bool) -> Self {
        self.metrics_enabled = enabled;
        self
    }

    pub fn with_metric_weights(mut self, weights: BTreeMap<String, f64>) -> Self {
        self.metric_weights = weights;
        self
    }

    pub fn metric_weights(&self) -> &BTreeMap<String, f64> {
        &self.metric_weights
    }

    /// Applies one mutation, returning the new state. Derived pod states
    /// catch up on the next tick.
    pub fn apply_mutation(&self, key: &ResourceKey, mutation: &Mutation) -> Result<ClusterState, SimError> {
        let mut next = self.clone();
        match mutation {
            Mutation::Create(value) => {
                if next.resources.contains_key(key) {
                    return Err(SimError::AlreadyExists(key.clone()));
                }
                let res = Resource::from_value(key.kind, value.clone())
                    .map_err(|reason| SimError::TypeMismatch { key: key.clone(), reason })?;
                next.resources.insert(key.clone(), res);
            }
            Mutation::Delete => {
                if next.resources.remove(key).is_none() {
                    return Err(SimError::UnknownKey(key.clone()));
                }
            }
            Mutation::Patch(fields) => {
                let current = next
                    .resources
                    .get(key)
                    .ok_or_else(|| SimError::UnknownKey(key.clone()))?;
                let mut value = current.to_value();
                for (path, v) in fields {
                    write_path(&mut value, path, v.clone())
                        .map_err(|reason| SimError::TypeMismatch { key: key.clone(), reason })?;
                }
                let res = Resource::from_value(key.kind, value)
                    .map_err(|reason| SimError::TypeMismatch { key: key.clone(), reason })?;
                next.resources.insert(key.clone(), res);
            }
        }
        Ok(next)
    }

    /// Pure read. Deployment status is readable under `status.<field>`.
    pub fn read_field(&self, key: &ResourceKey, field_path: &str) -> Option<Value> {
        let resource = self.resources.get(key)?;
        if key.kind == ResourceKind::Deployment {
            if let Some(field) = field_path.strip_prefix("status.") {
                return self.derived.get(key).and_then(|s| s.field(field));
            }
        }
        lookup_path(&resource.to_value(), field_path).cloned()
    }

    /// Advances the clock by one simulated second, re-derives pod health and
    /// emits the metric sample for the new tick.
    pub fn tick(&self) -> (ClusterState, MetricSample) {
        let mut next = self.clone();
        next.clock.advance();
        health::derive_all(&mut next);
        let sample = health::sample_metrics(&next);
        (next, sample)
    }

    pub fn snapshot(&self, keys: &BTreeSet<ResourceKey>) -> Result<SnapshotRecord, SimError> {
        if keys.is_empty() {
            return Err(SimError::BadKey("snapshot requires at least one key".into()));
        }
        let mut entries = BTreeMap::new();
        for key in keys {
            let res = self
                .resources
                .get(key)
                .ok_or_else(|| SimError::UnknownKey(key.clone()))?;
            entries.insert(key.clone(), res.to_value());
        }
        Ok(SnapshotRecord { tick: self.now(), entries })
    }

    /// Puts the snapshotted resources back. The clock is not rewound.
    pub fn restore(&self, snap: &SnapshotRecord) -> ClusterState {
        let mut next = self.clone();
        for (key, value) in &snap.entries {
            let res = Resource::from_value(key.kind, value.clone())
                .expect("snapshot values were produced from valid resources");
            next.resources.insert(key.clone(), res);
        }
        next
    }

    /// Marks one replica of a deployment as evicted for `dip_ticks`.
    pub fn evict_pods(&self, key: &ResourceKey, dip_ticks: u32) -> Result<ClusterState, SimError> {
        if !matches!(self.resources.get(key), Some(Resource::Deployment(_))) {
            return Err(SimError::UnknownKey(key.clone()));
        }
        let mut next = self.clone();
        let rt = next.runtime.entry(key.clone()).or_default();
        rt.evict_dip_remaining = dip_ticks;
        rt.pending_evictions += 1;
        Ok(next)
    }
}

#[cfg(test)]
mod tests;
