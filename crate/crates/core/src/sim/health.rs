//! Health-rule table.
//!
//! Rules, in priority order per deployment:
//!
//! | # | predicate                                   | effect                                   |
//! |---|---------------------------------------------|------------------------------------------|
//! | 10| referenced ServiceAccount missing           | `Pending`, 0 ready                        |
//! | 2 | image not in the valid-image set            | `ImagePullError`, 0 ready                 |
//! | 1 | `replicas_desired = 0`                      | 0 ready, availability 0                   |
//! | 3 | env ref to absent key / rejected credential | `CrashLoop`, restarts +1 per tick         |
//! | 6 | memory limit < working set                  | `OOMKilled`, restarts +1 every 5 ticks    |
//! | 4 | liveness path not served                    | `CrashLoop` after 3 consecutive failures  |
//! | 5 | readiness path not served                   | `NotReady`, 0 ready                       |
//! | 7 | cpu limit < demand                          | throttled, p99 × demand/limit             |
//! | 8 | NetworkPolicy cuts a dependency edge        | +0.5 error rate on the caller             |
//! | 9 | FeatureFlag state with an effect            | flag's error rate / latency added         |

use std::collections::BTreeMap;

use super::{ClusterState, DeploymentSpec, EnvSource, MetricSample, PodPhase, PodStatus, Resource, ResourceKey, ResourceKind};

pub const LIVENESS_FAILURE_THRESHOLD: u32 = 3;
pub const OOM_RESTART_PERIOD: u32 = 5;
pub const NETWORK_POLICY_ERROR_RATE: f64 = 0.5;

/// Per-deployment memory the rules carry between ticks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PodRuntime {
    pub liveness_failures: u32,
    pub oom_ticks: u32,
    pub evict_dip_remaining: u32,
    pub pending_evictions: u32,
    pub seen_generation: u64,
}

pub(super) fn derive_all(state: &mut ClusterState) {
    let mut derived = BTreeMap::new();
    let mut runtime = BTreeMap::new();
    for (key, spec) in state.deployments() {
        let mut rt = state.runtime.get(key).copied().unwrap_or_default();
        let prev = state.derived.get(key);
        let status = evaluate(state, key, spec, prev, &mut rt);
        derived.insert(key.clone(), status);
        runtime.insert(key.clone(), rt);
    }
    state.derived = derived;
    state.runtime = runtime;
}

fn evaluate(
    state: &ClusterState,
    key: &ResourceKey,
    spec: &DeploymentSpec,
    prev: Option<&PodStatus>,
    rt: &mut PodRuntime,
) -> PodStatus {
    let mut restarts = prev.map_or(0, |p| p.restart_count);
    if spec.restart_generation != rt.seen_generation {
        // rollout replaced the pods
        rt.seen_generation = spec.restart_generation;
        rt.liveness_failures = 0;
        rt.oom_ticks = 0;
        rt.evict_dip_remaining = 0;
        restarts = 0;
    }
    restarts += std::mem::take(&mut rt.pending_evictions);
    let dip = if rt.evict_dip_remaining > 0 {
        rt.evict_dip_remaining -= 1;
        1
    } else {
        0
    };

    let desired = spec.replicas_desired;
    let down = |phase, restart_count| PodStatus {
        phase,
        ready_replicas: 0,
        restart_count,
        cpu_throttled: false,
    };

    let sa_missing = spec
        .serviceaccount
        .as_ref()
        .is_some_and(|sa| !state.contains(&key.sibling(ResourceKind::ServiceAccount, sa)));
    if sa_missing {
        rt.liveness_failures = 0;
        rt.oom_ticks = 0;
        return down(PodPhase::Pending, restarts);
    }
    if !state.valid_images.contains(&spec.image) {
        rt.liveness_failures = 0;
        rt.oom_ticks = 0;
        return down(PodPhase::ImagePullError, restarts);
    }
    if desired == 0 {
        rt.liveness_failures = 0;
        rt.oom_ticks = 0;
        return down(PodPhase::Running, restarts);
    }
    if env_broken(state, key, spec) {
        rt.liveness_failures = 0;
        rt.oom_ticks = 0;
        return down(PodPhase::CrashLoop, restarts + 1);
    }
    if spec.memory_limit_mib.is_some_and(|lim| lim < spec.memory_working_set_mib) {
        rt.liveness_failures = 0;
        if rt.oom_ticks.is_multiple_of(OOM_RESTART_PERIOD) {
            restarts += 1;
        }
        rt.oom_ticks += 1;
        return down(PodPhase::OOMKilled, restarts);
    }
    rt.oom_ticks = 0;

    let throttled = spec.cpu_limit_millicores.is_some_and(|lim| lim < spec.cpu_demand_millicores);
    let serves = |probe: &Option<super::ProbeSpec>| {
        probe.as_ref().is_none_or(|p| p.healthy_paths.contains(&p.path))
    };
    if serves(&spec.liveness_probe) {
        rt.liveness_failures = 0;
    } else {
        rt.liveness_failures += 1;
        if rt.liveness_failures >= LIVENESS_FAILURE_THRESHOLD {
            return down(PodPhase::CrashLoop, restarts + 1);
        }
    }
    if !serves(&spec.readiness_probe) {
        return PodStatus {
            phase: PodPhase::NotReady,
            ready_replicas: 0,
            restart_count: restarts,
            cpu_throttled: throttled,
        };
    }
    PodStatus {
        phase: PodPhase::Running,
        ready_replicas: desired.saturating_sub(dip),
        restart_count: restarts,
        cpu_throttled: throttled,
    }
}

fn env_broken(state: &ClusterState, key: &ResourceKey, spec: &DeploymentSpec) -> bool {
    let data = |kind, name: &str, k: &str| -> Option<&String> {
        match state.resource(&key.sibling(kind, name))? {
            Resource::Secret(d) | Resource::ConfigMap(d) => d.data.get(k),
            _ => None,
        }
    };
    spec.env.values().any(|src| match src {
        EnvSource::Literal(_) => false,
        EnvSource::SecretKeyRef { secret, key: k, authenticates } => {
            match data(ResourceKind::Secret, secret, k) {
                None => true,
                Some(v) => authenticates
                    .as_ref()
                    .is_some_and(|backend| state.credentials.get(backend) != Some(v)),
            }
        }
        EnvSource::ConfigMapKeyRef { config_map, key: k } => data(ResourceKind::ConfigMap, config_map, k).is_none(),
    })
}

pub(super) fn sample_metrics(state: &ClusterState) -> MetricSample {
    let mut total_w = 0.0;
    let (mut err_sum, mut lat_sum, mut avail_sum) = (0.0, 0.0, 0.0);
    for (key, spec) in state.deployments() {
        let w = state.metric_weights.get(&key.name).copied().unwrap_or(1.0);
        if w <= 0.0 {
            continue;
        }
        let status = state.derived[key];
        let availability = if spec.replicas_desired == 0 {
            0.0
        } else {
            f64::from(status.ready_replicas) / f64::from(spec.replicas_desired)
        };
        let mut error_rate = 1.0 - availability;
        let mut latency = spec.base_latency_ms;
        if status.cpu_throttled {
            if let Some(limit) = spec.cpu_limit_millicores {
                latency *= f64::from(spec.cpu_demand_millicores) / f64::from(limit);
            }
        }
        if dependency_cut(state, key, spec) {
            error_rate += NETWORK_POLICY_ERROR_RATE;
        }
        for res in state.resources.iter().filter(|(k, _)| k.namespace == key.namespace) {
            if let (_, Resource::FeatureFlag(flag)) = res {
                if flag.target == key.name {
                    let effect = flag.effect();
                    error_rate += effect.error_rate;
                    latency += effect.added_latency_ms;
                }
            }
        }
        total_w += w;
        err_sum += w * error_rate.clamp(0.0, 1.0);
        lat_sum += w * latency;
        avail_sum += w * availability;
    }
    let tick = state.now();
    if total_w == 0.0 {
        return MetricSample { tick, error_rate: 0.0, p99_latency_ms: 0.0, availability: 1.0 };
    }
    MetricSample {
        tick,
        error_rate: err_sum / total_w,
        p99_latency_ms: lat_sum / total_w,
        availability: avail_sum / total_w,
    }
}

fn dependency_cut(state: &ClusterState, key: &ResourceKey, spec: &DeploymentSpec) -> bool {
    state.resources.iter().any(|(k, r)| match r {
        Resource::NetworkPolicy(np) if k.namespace == key.namespace => {
            spec.depends_on.iter().any(|callee| np.denies(callee, &key.name))
        }
        _ => false,
    })
}
