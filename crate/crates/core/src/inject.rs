//! Fault injectors. Each returns the faulted state plus a handle holding the
//! exact reverse patch, applied by [`undo`] at scenario end.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use crate::scenario::{InjectorSpec, InjectorType};
use crate::sim::{lookup_path, ClusterState, Mutation, ResourceKey, ResourceKind, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HandleStatus {
    Active,
    Undone,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionHandle {
    pub applied_at_tick: u64,
    pub undo: Vec<(ResourceKey, Mutation)>,
    pub status: HandleStatus,
}

impl InjectionHandle {
    /// The handle a run records when injection itself failed.
    pub fn failed(tick: u64) -> Self {
        InjectionHandle { applied_at_tick: tick, undo: Vec::new(), status: HandleStatus::Failed }
    }
}

/// Every injector failure is a substrate fault, never an agent failure.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InjectError {
    #[error("injector target {0} does not exist")]
    UnknownTarget(ResourceKey),
    #[error("{injector} cannot target a {kind}")]
    WrongKind { injector: InjectorType, kind: ResourceKind },
    #[error("bad {injector} params: {reason}")]
    BadParams { injector: InjectorType, reason: String },
    #[error(transparent)]
    Sim(#[from] SimError),
}

fn expected_kind(t: InjectorType) -> ResourceKind {
    match t {
        InjectorType::DeploymentPatch | InjectorType::PodEvict => ResourceKind::Deployment,
        InjectorType::SecretContent => ResourceKind::Secret,
        InjectorType::ConfigmapPatch => ResourceKind::ConfigMap,
        InjectorType::FlagdFlag => ResourceKind::FeatureFlag,
        InjectorType::NetworkPolicy => ResourceKind::NetworkPolicy,
    }
}

pub fn inject(state: &ClusterState, spec: &InjectorSpec) -> Result<(ClusterState, InjectionHandle), InjectError> {
    let key = &spec.target;
    let kind = expected_kind(spec.kind);
    if key.kind != kind {
        return Err(InjectError::WrongKind { injector: spec.kind, kind: key.kind });
    }
    let bad = |reason: &str| InjectError::BadParams { injector: spec.kind, reason: reason.to_string() };
    let allow_only = |names: &[&str]| match spec.params.keys().find(|k| !names.contains(&k.as_str())) {
        Some(extra) => Err(bad(&format!("unexpected param `{extra}`"))),
        None => Ok(()),
    };

    if spec.kind == InjectorType::NetworkPolicy {
        allow_only(&["selector", "deny_ingress_from"])?;
        if state.contains(key) {
            return Err(InjectError::Sim(SimError::AlreadyExists(key.clone())));
        }
        let selector = spec.params.get("selector").and_then(Value::as_str).ok_or_else(|| bad("`selector` must be a string"))?;
        let deny = spec.params.get("deny_ingress_from").cloned().unwrap_or(json!(["*"]));
        let policy = json!({ "selector": selector, "deny_ingress_from": deny });
        let next = state.apply_mutation(key, &Mutation::Create(policy))?;
        return Ok((next, active(state, vec![(key.clone(), Mutation::Delete)])));
    }

    if !state.contains(key) {
        return Err(InjectError::UnknownTarget(key.clone()));
    }

    if spec.kind == InjectorType::PodEvict {
        allow_only(&["dip_ticks"])?;
        let dip = match spec.params.get("dip_ticks") {
            None => 30,
            Some(v) => v
                .as_u64()
                .filter(|n| *n >= 1)
                .and_then(|n| u32::try_from(n).ok())
                .ok_or_else(|| bad("`dip_ticks` must be a positive integer"))?,
        };
        // evictions are transient; there is no spec field to put back
        let next = state.evict_pods(key, dip)?;
        return Ok((next, active(state, Vec::new())));
    }

    let fields: BTreeMap<String, Value> = match spec.kind {
        InjectorType::DeploymentPatch => {
            allow_only(&["patch"])?;
            let patch = spec.params.get("patch").and_then(Value::as_object).ok_or_else(|| bad("`patch` must be a map"))?;
            if patch.is_empty() {
                return Err(bad("`patch` is empty"));
            }
            patch.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
        }
        InjectorType::SecretContent | InjectorType::ConfigmapPatch => {
            allow_only(&["remove_key", "set"])?;
            let mut fields = BTreeMap::new();
            if let Some(v) = spec.params.get("remove_key") {
                let k = v.as_str().ok_or_else(|| bad("`remove_key` must be a string"))?;
                if state.read_field(key, &format!("data.{k}")).is_none() {
                    return Err(bad(&format!("key `{k}` is not present")));
                }
                fields.insert(format!("data.{k}"), Value::Null);
            }
            if let Some(v) = spec.params.get("set") {
                let set = v.as_object().ok_or_else(|| bad("`set` must be a map"))?;
                for (k, v) in set {
                    if !v.is_string() {
                        return Err(bad(&format!("value for `{k}` must be a string")));
                    }
                    fields.insert(format!("data.{k}"), v.clone());
                }
            }
            if fields.is_empty() {
                return Err(bad("needs `remove_key` or `set`"));
            }
            fields
        }
        InjectorType::FlagdFlag => {
            allow_only(&["state"])?;
            let s = spec.params.get("state").and_then(Value::as_str).ok_or_else(|| bad("`state` must be a string"))?;
            BTreeMap::from([("state".to_string(), Value::from(s))])
        }
        InjectorType::NetworkPolicy | InjectorType::PodEvict => unreachable!(),
    };

    let before = state.resource(key).expect("checked above").to_value();
    let reverse = fields
        .keys()
        .map(|path| (path.clone(), lookup_path(&before, path).cloned().unwrap_or(Value::Null)))
        .collect();
    let next = state.apply_mutation(key, &Mutation::Patch(fields))?;
    Ok((next, active(state, vec![(key.clone(), Mutation::Patch(reverse))])))
}

fn active(state: &ClusterState, undo: Vec<(ResourceKey, Mutation)>) -> InjectionHandle {
    InjectionHandle { applied_at_tick: state.now(), undo, status: HandleStatus::Active }
}

/// Applies the stored reverse patch. Fields the injector touched go back to
/// their pre-injection values; anything else the agent changed is kept.
pub fn undo(state: &ClusterState, handle: &mut InjectionHandle) -> ClusterState {
    if handle.status != HandleStatus::Active {
        log::warn!("undo on a {:?} injection handle ignored", handle.status);
        return state.clone();
    }
    let mut next = state.clone();
    for (key, mutation) in &handle.undo {
        match (next.apply_mutation(key, mutation), mutation) {
            (Ok(s), _) => next = s,
            // the agent already removed what the injector created
            (Err(SimError::UnknownKey(_)), Mutation::Delete) => {}
            (Err(e), _) => {
                log::warn!("undo of {key} failed: {e}");
                handle.status = HandleStatus::Failed;
                return next;
            }
        }
    }
    handle.status = HandleStatus::Undone;
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{builtin_scenarios, Vocabulary};
    use crate::sim::{PodPhase, Resource};

    fn spec(kind: InjectorType, target: &str, params: Value) -> InjectorSpec {
        InjectorSpec {
            kind,
            target: target.parse().unwrap(),
            params: serde_json::from_value(params).unwrap(),
        }
    }

    #[test]
    fn secret_remove_key_and_restore() {
        let s0 = ClusterState::baseline();
        let sp = spec(InjectorType::SecretContent, "Secret/default/db-credentials", json!({"remove_key": "db-password"}));
        let (s1, mut h) = inject(&s0, &sp).unwrap();
        let key = sp.target.clone();
        assert_eq!(s1.read_field(&key, "data.db-password"), None);
        assert_eq!(h.status, HandleStatus::Active);
        let s2 = undo(&s1, &mut h);
        assert_eq!(s2.read_field(&key, "data.db-password"), Some(json!("hunter2-prod")));
        assert_eq!(h.status, HandleStatus::Undone);
        assert_eq!(s2, s0);
    }

    #[test]
    fn replicas_to_zero() {
        let s0 = ClusterState::baseline();
        let sp = spec(InjectorType::DeploymentPatch, "Deployment/default/payment", json!({"patch": {"replicas_desired": 0}}));
        let (s1, _) = inject(&s0, &sp).unwrap();
        assert_eq!(s1.read_field(&sp.target, "replicas_desired"), Some(json!(0)));
    }

    #[test]
    fn missing_target_and_bad_params_fail() {
        let s0 = ClusterState::baseline();
        let sp = spec(InjectorType::DeploymentPatch, "Deployment/default/ledger", json!({"patch": {"replicas_desired": 0}}));
        assert_eq!(inject(&s0, &sp).unwrap_err(), InjectError::UnknownTarget(sp.target.clone()));
        let sp = spec(InjectorType::DeploymentPatch, "Deployment/default/api", json!({"pacth": {}}));
        assert!(matches!(inject(&s0, &sp), Err(InjectError::BadParams { .. })));
        let sp = spec(InjectorType::SecretContent, "Secret/default/db-credentials", json!({"remove_key": "nope"}));
        assert!(matches!(inject(&s0, &sp), Err(InjectError::BadParams { .. })));
        let sp = spec(InjectorType::SecretContent, "ConfigMap/default/app-config", json!({"remove_key": "LOG_LEVEL"}));
        assert!(matches!(inject(&s0, &sp), Err(InjectError::WrongKind { .. })));
        let sp = spec(InjectorType::DeploymentPatch, "Deployment/default/api", json!({"patch": {"replicas_desired": "many"}}));
        assert!(matches!(inject(&s0, &sp), Err(InjectError::Sim(SimError::TypeMismatch { .. }))));
    }

    #[test]
    fn undo_restores_injected_field_and_keeps_other_agent_changes() {
        let s0 = ClusterState::baseline();
        let api = ResourceKey::deployment("default", "api");
        let sp = spec(InjectorType::DeploymentPatch, "Deployment/default/api", json!({"patch": {"cpu_limit_millicores": 50}}));
        let (s1, mut h) = inject(&s0, &sp).unwrap();
        // agent "fixes" to a different value and also touches memory
        let s2 = s1
            .apply_mutation(&api, &Mutation::patch([("cpu_limit_millicores", json!(2000)), ("memory_limit_mib", json!(1024))]))
            .unwrap();
        let s3 = undo(&s2, &mut h);
        assert_eq!(s3.read_field(&api, "cpu_limit_millicores"), Some(json!(1000)));
        assert_eq!(s3.read_field(&api, "memory_limit_mib"), Some(json!(1024)));
    }

    #[test]
    fn undo_twice_is_noop() {
        let s0 = ClusterState::baseline();
        let sp = spec(InjectorType::FlagdFlag, "FeatureFlag/default/cart-failure", json!({"state": "on"}));
        let (s1, mut h) = inject(&s0, &sp).unwrap();
        let s2 = undo(&s1, &mut h);
        let s3 = s2.apply_mutation(&sp.target, &Mutation::patch([("state", json!("on"))])).unwrap();
        let s4 = undo(&s3, &mut h);
        assert_eq!(s4, s3);
        assert_eq!(h.status, HandleStatus::Undone);
    }

    #[test]
    fn network_policy_created_then_deleted() {
        let s0 = ClusterState::baseline();
        let sp = spec(
            InjectorType::NetworkPolicy,
            "NetworkPolicy/default/deny-api",
            json!({"selector": "api", "deny_ingress_from": ["frontend"]}),
        );
        let (s1, mut h) = inject(&s0, &sp).unwrap();
        assert!(matches!(s1.resource(&sp.target), Some(Resource::NetworkPolicy(_))));
        assert!(inject(&s1, &sp).is_err());
        // agent deleted it already: undo still succeeds
        let s2 = s1.apply_mutation(&sp.target, &Mutation::Delete).unwrap();
        let s3 = undo(&s2, &mut h);
        assert_eq!(h.status, HandleStatus::Undone);
        assert_eq!(s3, s0);
    }

    #[test]
    fn every_builtin_injects_reverses_and_is_observable() {
        let v = Vocabulary::shipped();
        let s0 = ClusterState::baseline();
        let (_, base_sample) = s0.tick();
        for sc in builtin_scenarios(&v) {
            let (s1, mut h) = inject(&s0, &sc.injector).unwrap_or_else(|e| panic!("{}: {e}", sc.id));
            let back = undo(&s1, &mut h);
            assert_eq!(back.resources(), s0.resources(), "{} not reversible", sc.id);
            if sc.injector.kind != InjectorType::PodEvict {
                assert_eq!(back, s0, "{} not bit-identical after undo", sc.id);
            }

            // no silent faults: something observable moves within three ticks
            let mut s = s1;
            let mut changed = false;
            for _ in 0..3 {
                let (n, sample) = s.tick();
                s = n;
                let phases_moved = s.pod_statuses().iter().any(|(k, st)| {
                    let d = s.deployments().find(|(dk, _)| *dk == k).unwrap().1;
                    st.phase != PodPhase::Running || !st.is_healthy(d.replicas_desired)
                });
                let metrics_moved = sample.error_rate != base_sample.error_rate
                    || sample.p99_latency_ms != base_sample.p99_latency_ms
                    || sample.availability != base_sample.availability;
                changed |= phases_moved || metrics_moved;
            }
            assert!(changed, "{} is silent", sc.id);
        }
    }
}
