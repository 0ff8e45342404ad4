use super::*;
use serde_json::json;

fn key(s: &str) -> ResourceKey {
    s.parse().unwrap()
}

fn ticks(mut s: ClusterState, n: usize) -> (ClusterState, Vec<MetricSample>) {
    let mut samples = Vec::new();
    for _ in 0..n {
        let (next, m) = s.tick();
        s = next;
        samples.push(m);
    }
    (s, samples)
}

#[test]
fn baseline_is_healthy() {
    let s = ClusterState::baseline();
    let (s, m) = ticks(s, 3);
    let last = m.last().unwrap();
    assert_eq!(last.error_rate, 0.0);
    assert_eq!(last.availability, 1.0);
    assert_eq!(s.pod_statuses().len(), 6);
    assert!(s.pod_statuses().values().all(|p| p.phase == PodPhase::Running));
}

#[test]
fn scale_to_zero_reads_back_and_drops_availability() {
    let s = ClusterState::baseline();
    let k = key("Deployment/default/payment");
    let s2 = s.apply_mutation(&k, &Mutation::patch([("replicas_desired", json!(0))])).unwrap();
    assert_eq!(s2.read_field(&k, "replicas_desired"), Some(json!(0)));
    // value semantics
    assert_eq!(s.read_field(&k, "replicas_desired"), Some(json!(2)));
    let (s3, m) = s2.tick();
    assert_eq!(s3.read_field(&k, "status.ready_replicas"), Some(json!(0)));
    // one of six equally weighted services contributes zero
    assert!((m.availability - 5.0 / 6.0).abs() < 1e-12);
}

#[test]
fn unknown_key_and_type_mismatch() {
    let s = ClusterState::baseline();
    let err = s
        .apply_mutation(&key("Secret/default/nope"), &Mutation::patch([("data.x", json!("1"))]))
        .unwrap_err();
    assert!(matches!(err, SimError::UnknownKey(_)));
    let err = s
        .apply_mutation(&key("Deployment/default/api"), &Mutation::patch([("replicas_desired", json!("two"))]))
        .unwrap_err();
    assert!(matches!(err, SimError::TypeMismatch { .. }));
    let err = s
        .apply_mutation(&key("Deployment/default/api"), &Mutation::patch([("no_such_field", json!(1))]))
        .unwrap_err();
    assert!(matches!(err, SimError::TypeMismatch { .. }));
    assert_eq!(s.read_field(&key("Secret/default/nope"), "data.x"), None);
    assert_eq!(s.read_field(&key("Secret/default/db-credentials"), "data.nope"), None);
}

#[test]
fn cpu_limit_below_demand_throttles_next_tick() {
    let s = ClusterState::baseline();
    let k = key("Deployment/default/api");
    let s = s.apply_mutation(&k, &Mutation::patch([("cpu_limit_millicores", json!(50))])).unwrap();
    // derived state only catches up on tick
    assert_eq!(s.read_field(&k, "status.cpu_throttled"), Some(json!(false)));
    let (s, m) = s.tick();
    assert_eq!(s.read_field(&k, "status.cpu_throttled"), Some(json!(true)));
    // hand trace: api p99 = 80 * 500/50 = 800; others 40,120,30,60,45
    let expected = (800.0 + 40.0 + 120.0 + 30.0 + 60.0 + 45.0) / 6.0;
    assert!((m.p99_latency_ms - expected).abs() < 1e-9, "{}", m.p99_latency_ms);
    assert_eq!(m.availability, 1.0);
}

#[test]
fn invalid_image_is_image_pull_error() {
    let s = ClusterState::baseline();
    let k = key("Deployment/default/recommendation");
    let s = s.apply_mutation(&k, &Mutation::patch([("image", json!("shop/recommendation:9.9.9"))])).unwrap();
    let (s, _) = s.tick();
    assert_eq!(s.read_field(&k, "status.phase"), Some(json!("ImagePullError")));
    assert_eq!(s.read_field(&k, "status.ready_replicas"), Some(json!(0)));
}

#[test]
fn missing_secret_key_crashloops_and_counts_restarts() {
    let s = ClusterState::baseline();
    let secret = key("Secret/default/db-credentials");
    let api = key("Deployment/default/api");
    let s = s.apply_mutation(&secret, &Mutation::patch([("data.db-password", serde_json::Value::Null)])).unwrap();
    let mut s = s;
    for expected in 1..=4u32 {
        let (n, _) = s.tick();
        s = n;
        assert_eq!(s.read_field(&api, "status.phase"), Some(json!("CrashLoop")));
        assert_eq!(s.read_field(&api, "status.restart_count"), Some(json!(expected)));
    }
    // worker shares the secret
    assert_eq!(s.read_field(&key("Deployment/default/worker"), "status.phase"), Some(json!("CrashLoop")));
    // fix clears within one tick and restart count then stays put
    let s = s.apply_mutation(&secret, &Mutation::patch([("data.db-password", json!("hunter2-prod"))])).unwrap();
    let (s, _) = s.tick();
    assert_eq!(s.read_field(&api, "status.phase"), Some(json!("Running")));
    let (s2, _) = s.tick();
    assert_eq!(s2.read_field(&api, "status.restart_count"), s.read_field(&api, "status.restart_count"));
}

#[test]
fn wrong_credential_crashloops() {
    let s = ClusterState::baseline();
    let secret = key("Secret/default/payment-keys");
    let s = s.apply_mutation(&secret, &Mutation::patch([("data.card-token", json!("tok_wrong"))])).unwrap();
    let (s, _) = s.tick();
    assert_eq!(s.read_field(&key("Deployment/default/payment"), "status.phase"), Some(json!("CrashLoop")));
}

#[test]
fn liveness_failure_needs_three_ticks() {
    let s = ClusterState::baseline();
    let cart = key("Deployment/default/cart");
    let s = s.apply_mutation(&cart, &Mutation::patch([("liveness_probe.path", json!("/broken"))])).unwrap();
    let (s, _) = s.tick();
    assert_eq!(s.read_field(&cart, "status.phase"), Some(json!("Running")));
    let (s, _) = s.tick();
    assert_eq!(s.read_field(&cart, "status.phase"), Some(json!("Running")));
    let (s, _) = s.tick();
    assert_eq!(s.read_field(&cart, "status.phase"), Some(json!("CrashLoop")));
}

#[test]
fn readiness_failure_is_not_ready() {
    let s = ClusterState::baseline();
    let fe = key("Deployment/default/frontend");
    let s = s.apply_mutation(&fe, &Mutation::patch([("readiness_probe.path", json!("/readyz"))])).unwrap();
    let (s, m) = s.tick();
    assert_eq!(s.read_field(&fe, "status.phase"), Some(json!("NotReady")));
    assert!((m.availability - 5.0 / 6.0).abs() < 1e-12);
}

#[test]
fn oom_restarts_every_five_ticks() {
    let s = ClusterState::baseline();
    let api = key("Deployment/default/api");
    let mut s = s.apply_mutation(&api, &Mutation::patch([("memory_limit_mib", json!(128))])).unwrap();
    let mut counts = Vec::new();
    for _ in 0..11 {
        let (n, _) = s.tick();
        s = n;
        counts.push(s.pod_status(&api).unwrap().restart_count);
    }
    assert_eq!(s.pod_status(&api).unwrap().phase, PodPhase::OOMKilled);
    assert_eq!(counts, vec![1, 1, 1, 1, 1, 2, 2, 2, 2, 2, 3]);
}

#[test]
fn network_policy_cuts_dependents() {
    let s = ClusterState::baseline();
    let np = key("NetworkPolicy/default/deny-frontend");
    let s = s
        .apply_mutation(&np, &Mutation::Create(json!({"selector": "api", "deny_ingress_from": ["frontend"]})))
        .unwrap();
    let (_, m) = s.tick();
    assert!((m.error_rate - 0.5 / 6.0).abs() < 1e-12);
    assert_eq!(m.availability, 1.0);
}

#[test]
fn feature_flag_contributes_error_rate() {
    let s = ClusterState::baseline();
    let flag = key("FeatureFlag/default/cart-failure");
    let s = s.apply_mutation(&flag, &Mutation::patch([("state", json!("on"))])).unwrap();
    let (_, m) = s.tick();
    assert!((m.error_rate - 0.8 / 6.0).abs() < 1e-12);
}

#[test]
fn missing_serviceaccount_is_pending() {
    let s = ClusterState::baseline();
    let s = s.apply_mutation(&key("ServiceAccount/default/worker-sa"), &Mutation::Delete).unwrap();
    let (s, _) = s.tick();
    assert_eq!(s.read_field(&key("Deployment/default/worker"), "status.phase"), Some(json!("Pending")));
}

#[test]
fn pod_evict_dips_one_replica() {
    let s = ClusterState::baseline();
    let fe = key("Deployment/default/frontend");
    let s = s.evict_pods(&fe, 2).unwrap();
    let (s, _) = s.tick();
    assert_eq!(s.pod_status(&fe).unwrap().ready_replicas, 1);
    assert_eq!(s.pod_status(&fe).unwrap().restart_count, 1);
    let (s, _) = s.tick();
    assert_eq!(s.pod_status(&fe).unwrap().ready_replicas, 1);
    let (s, _) = s.tick();
    assert_eq!(s.pod_status(&fe).unwrap().ready_replicas, 2);
}

#[test]
fn metric_weights_override_equal_weighting() {
    let mut w = BTreeMap::new();
    w.insert("payment".to_string(), 5.0);
    let s = ClusterState::baseline().with_metric_weights(w);
    let k = key("Deployment/default/payment");
    let s = s.apply_mutation(&k, &Mutation::patch([("replicas_desired", json!(0))])).unwrap();
    let (_, m) = s.tick();
    assert!((m.availability - 5.0 / 10.0).abs() < 1e-12);
}

#[test]
fn snapshot_restore_round_trip() {
    let s = ClusterState::baseline();
    let api = key("Deployment/default/api");
    let secret = key("Secret/default/db-credentials");
    let fe = key("Deployment/default/frontend");
    let snap = s.snapshot(&[api.clone(), secret.clone()].into_iter().collect()).unwrap();
    assert_eq!(snap.entries.len(), 2);
    let mutated = s
        .apply_mutation(&api, &Mutation::patch([("replicas_desired", json!(7))]))
        .unwrap()
        .apply_mutation(&secret, &Mutation::patch([("data.db-password", serde_json::Value::Null)]))
        .unwrap()
        .apply_mutation(&fe, &Mutation::patch([("replicas_desired", json!(3))]))
        .unwrap();
    let (mutated, _) = mutated.tick();
    let restored = mutated.restore(&snap);
    assert_eq!(restored.resource(&api), s.resource(&api));
    assert_eq!(restored.resource(&secret), s.resource(&secret));
    // unrelated mutation survives, clock is not rewound
    assert_eq!(restored.read_field(&fe, "replicas_desired"), Some(json!(3)));
    assert_eq!(restored.now(), mutated.now());
    // idempotent
    assert_eq!(restored.restore(&snap), restored);
    // later mutations don't leak into the snapshot
    assert_eq!(snap.entries[&api]["replicas_desired"], json!(2));
}

#[test]
fn snapshot_unknown_key_errors() {
    let s = ClusterState::baseline();
    assert!(s.snapshot(&[key("Secret/default/ghost")].into_iter().collect()).is_err());
    assert!(s.snapshot(&BTreeSet::new()).is_err());
}

#[test]
fn trajectory_is_deterministic() {
    let run = || {
        let s = ClusterState::baseline();
        let s = s
            .apply_mutation(&key("Deployment/default/api"), &Mutation::patch([("memory_limit_mib", json!(100))]))
            .unwrap();
        let (s, m) = ticks(s, 25);
        (s, m)
    };
    let (a, ma) = run();
    let (b, mb) = run();
    assert_eq!(a, b);
    assert_eq!(
        ma.iter().map(|m| m.p99_latency_ms.to_bits()).collect::<Vec<_>>(),
        mb.iter().map(|m| m.p99_latency_ms.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn derived_keys_follow_deployments() {
    let s = ClusterState::baseline();
    let s = s.apply_mutation(&key("Deployment/default/cart"), &Mutation::Delete).unwrap();
    let (s, _) = s.tick();
    assert!(s.pod_status(&key("Deployment/default/cart")).is_none());
    assert!(s.pod_statuses().keys().all(|k| k.kind == ResourceKind::Deployment && s.contains(k)));
}
