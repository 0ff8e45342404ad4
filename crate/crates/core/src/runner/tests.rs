use super::*;
use crate::experience::DEFAULT_DIMENSION;
use crate::experiments::{packaged, CorpusProfile, PackagedName, SECRET};
use crate::runner::manifest::manifest_to_string;
use crate::sim::ResourceKey;

fn secret() -> ScenarioSpec {
    Runner::default().scenario(SECRET).unwrap().clone()
}

fn small_plan(reps: u32) -> ExperimentPlan {
    let mut p = packaged(PackagedName::Falsification, reps, 11).plan;
    p.scenarios.truncate(2);
    p
}

#[test]
fn seeds_are_stable_and_field_sensitive() {
    let s = run_seed(42, "a", "tei", 0);
    assert_eq!(s, run_seed(42, "a", "tei", 0));
    assert_ne!(s, run_seed(43, "a", "tei", 0));
    assert_ne!(s, run_seed(42, "b", "tei", 0));
    assert_ne!(s, run_seed(42, "a", "control", 0));
    assert_ne!(s, run_seed(42, "a", "tei", 1));
    // Field boundaries are delimited, so shifting a byte between fields changes the seed.
    assert_ne!(run_seed(0, "ab", "c", 0), run_seed(0, "a", "bc", 0));
    // FNV-1a then splitmix64, computed independently.
    assert_eq!(run_seed(0, "secret-missing-key-advocate", "tei", 0), 0xead8_58be_5d39_44d9);
}

#[test]
fn run_id_shape() {
    assert_eq!(run_id("s", "tei", 7, 0xdead_beef_0000_0001), "s.tei.007.deadbeef");
}

#[test]
fn plan_validation() {
    let runner = Runner::default();
    let known: BTreeSet<String> = runner.scenarios().keys().cloned().collect();
    let ok = small_plan(2);
    ok.validate(&known).unwrap();

    let mut p = ok.clone();
    p.reps = 0;
    assert!(matches!(p.validate(&known), Err(RunnerError::Plan(_))));

    let mut p = ok.clone();
    p.arms.push(p.arms[0].clone());
    assert!(matches!(p.validate(&known), Err(RunnerError::Plan(_))));

    let mut p = ok.clone();
    p.scenarios.push("no-such-scenario".into());
    assert!(matches!(p.validate(&known), Err(RunnerError::UnknownScenario(_))));

    let mut p = ok.clone();
    p.corpus.push(CorpusSpec { scenario: "ghost".into(), profile: CorpusProfile::Aligned, size: 1 });
    assert!(matches!(p.validate(&known), Err(RunnerError::UnknownScenario(_))));

    let mut p = ok;
    p.arms[0].retrieval.k = 0;
    assert!(matches!(p.validate(&known), Err(RunnerError::Plan(_))));
}

#[test]
fn plan_parses_from_yaml() {
    let doc = r#"
name: tiny
scenarios: [secret-missing-key-advocate]
arms:
  - name: tei
    retrieval: { embedder: external, pool_cap: 15 }
  - name: control
    retrieval: { embedder: deterministic }
reps: 2
base_seed: 5
agent: noisy-oracle:0.25
agent_overrides:
  secret-missing-key-advocate: oracle
corpus:
  - { scenario: secret-missing-key-advocate, profile: aligned, size: 3 }
"#;
    let plan: ExperimentPlan = serde_yaml::from_str(doc).unwrap();
    assert_eq!(plan.arms[0].retrieval.pool_cap, PoolCap::Limited(15));
    assert_eq!(plan.agent, AgentKind::NoisyOracle { p_wrong: 0.25 });
    assert_eq!(plan.agent_for(SECRET), AgentKind::Oracle);
    assert_eq!(plan.containment_threshold, DEFAULT_CONTAINMENT_THRESHOLD);
    assert!(!plan.freeze_corpus);
    let again: ExperimentPlan = serde_yaml::from_str(&serde_yaml::to_string(&plan).unwrap()).unwrap();
    assert_eq!(again, plan);
    assert!(serde_yaml::from_str::<ExperimentPlan>(&format!("{doc}bogus: 1\n")).is_err());
}

#[test]
fn oracle_run_records_and_stores() {
    let mut runner = Runner::default();
    let spec = secret();
    let arm = Arm::named("control").unwrap();
    let mut store = ExperienceStore::in_memory(DEFAULT_DIMENSION);
    let out = runner.run_scenario(&spec, AgentKind::Oracle, &arm, 0, 9, &mut store, &RunOptions::default());
    let r = &out.record;
    assert_eq!(r.score.composite, 1.0);
    assert_eq!(r.outcome, Outcome::Resolved);
    assert_eq!(r.end_reason, EndReason::AgentDone);
    assert_eq!(r.embedder, "deterministic");
    assert!(r.wall_ticks > 0);
    assert_eq!(store.len(), 1);
    let pm = &store.postmortems()[0];
    assert_eq!(pm.id, r.run_id);
    assert_eq!(pm.arm, "control");
    assert_eq!(pm.remediation, spec.remediation);
    assert!(out.framework_error.is_none());
}

#[test]
fn broken_injector_is_a_framework_error() {
    let mut runner = Runner::default();
    let mut spec = secret();
    spec.id = "broken".into();
    spec.injector.target = ResourceKey::new(spec.injector.target.kind, "default", "does-not-exist");
    let arm = Arm::named("tei").unwrap();
    let mut store = ExperienceStore::in_memory(DEFAULT_DIMENSION);
    let out = runner.run_scenario(&spec, AgentKind::Oracle, &arm, 0, 1, &mut store, &RunOptions::default());
    assert!(out.record.score.framework_error);
    assert_eq!(out.record.end_reason, EndReason::FrameworkError);
    assert_eq!(out.record.score.composite, 0.0);
    assert!(out.framework_error.unwrap().contains("does-not-exist"));
    // Stored for the audit trail but never retrievable.
    assert_eq!(store.len(), 1);
    assert!(store.retrieve(&spec.alert, &RetrievalConfig::default()).is_empty());
}

#[test]
fn in_memory_experiment_is_deterministic() {
    let plan = small_plan(2);
    let a = Runner::default().run_experiment(&plan, &ExperimentOutput::default()).unwrap();
    let b = Runner::default().run_experiment(&plan, &ExperimentOutput::default()).unwrap();
    assert_eq!(a.rows.len(), plan.grid_size());
    assert_eq!(a.new_rows, plan.grid_size());
    assert_eq!(manifest_to_string(&a.rows), manifest_to_string(&b.rows));
}

#[test]
fn interrupted_experiment_resumes_to_the_same_manifest() {
    let plan = small_plan(3);
    let dir = tempfile::tempdir().unwrap();
    let whole = dir.path().join("whole.csv");
    let split = dir.path().join("split.csv");
    Runner::default()
        .run_experiment(&plan, &ExperimentOutput { manifest: Some(whole.clone()), ..Default::default() })
        .unwrap();

    let first = Runner::default()
        .run_experiment(&plan, &ExperimentOutput { manifest: Some(split.clone()), limit: Some(5), ..Default::default() })
        .unwrap();
    assert_eq!(first.new_rows, 5);
    let second = Runner::default()
        .run_experiment(&plan, &ExperimentOutput { manifest: Some(split.clone()), ..Default::default() })
        .unwrap();
    assert_eq!(second.new_rows, plan.grid_size() - 5);
    assert_eq!(fs::read_to_string(&whole).unwrap(), fs::read_to_string(&split).unwrap());

    // Nothing left to do on a third invocation.
    let third = Runner::default()
        .run_experiment(&plan, &ExperimentOutput { manifest: Some(split.clone()), ..Default::default() })
        .unwrap();
    assert_eq!(third.new_rows, 0);
    assert_eq!(third.rows.len(), plan.grid_size());
}

#[test]
fn transcripts_written_next_to_the_manifest() {
    let mut plan = small_plan(1);
    plan.scenarios.truncate(1);
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.csv");
    let res = Runner::default()
        .run_experiment(&plan, &ExperimentOutput { manifest: Some(manifest.clone()), write_transcripts: true, limit: None })
        .unwrap();
    let tdir = sibling_dir(&manifest, "transcripts");
    for row in &res.rows {
        let text = fs::read_to_string(tdir.join(format!("{}.jsonl", row.run_id))).unwrap();
        assert!(text.lines().next().unwrap().contains("\"event\":\"start\""));
        assert!(text.lines().last().unwrap().contains("\"event\":\"end\""));
    }
    assert!(sibling_dir(&manifest, "stores").join("tei.ndjson").exists());
}

#[test]
fn frozen_corpus_never_grows() {
    let mut plan = small_plan(2);
    plan.freeze_corpus = true;
    let runner = Runner::default();
    let seeded: Vec<usize> = runner.build_stores(&plan, None, true).unwrap().iter().map(|s| s.len()).collect();
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.csv");
    Runner::default()
        .run_experiment(&plan, &ExperimentOutput { manifest: Some(manifest.clone()), ..Default::default() })
        .unwrap();
    for (arm, n) in plan.arms.iter().zip(seeded) {
        let store = ExperienceStore::open(&sibling_dir(&manifest, "stores").join(format!("{}.ndjson", arm.name)), DEFAULT_DIMENSION).unwrap();
        assert_eq!(store.len(), n);
    }
}

#[test]
fn guard_paused_runs_are_inconclusive() {
    use crate::tools::{Tool, ToolCall};
    let mut runner = Runner::default();
    let mut spec = secret();
    // A "fix" that takes the api down trips the guard on every attempt.
    let bad = ToolCall::new(Tool::Scale, Some(ResourceKey::deployment("default", "api"))).with_arg("replicas", serde_json::json!(0));
    spec.remediation = vec![bad.clone(), bad.clone(), bad];
    spec.expected_actions = vec!["scale".into()];
    spec.regressed_when = vec!["metric:error_rate > 0.1 sustained_for_s=5".parse().unwrap()];
    let arm = Arm::named("control").unwrap();
    let mut store = ExperienceStore::in_memory(DEFAULT_DIMENSION);
    let out = runner.run_scenario(&spec, AgentKind::Oracle, &arm, 0, 3, &mut store, &RunOptions::default());
    assert_eq!(out.record.end_reason, EndReason::GuardPaused);
    assert_eq!(out.record.outcome, Outcome::Inconclusive);
    assert!(!out.record.score.framework_error);
}
