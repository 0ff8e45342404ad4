use super::*;
use crate::experience::{LexicalEmbedder, DEFAULT_DIMENSION};
use crate::runner::{ExperimentOutput, Runner};

fn runner() -> Runner {
    Runner::default()
}

fn seeded(id: &str, profile: CorpusProfile, size: usize, seed: u64) -> ExperienceStore {
    let r = runner();
    let all: Vec<&ScenarioSpec> = r.scenarios().values().collect();
    let mut store = ExperienceStore::in_memory(DEFAULT_DIMENSION);
    let emb = LexicalEmbedder { dimension: DEFAULT_DIMENSION };
    seed_corpus(&mut store, r.scenario(id).unwrap(), &all, profile, size, seed, &emb).unwrap();
    store
}

#[test]
fn aligned_corpus_is_resolved_same_mechanism() {
    let r = runner();
    let spec = r.scenario(SECRET).unwrap();
    let store = seeded(SECRET, CorpusProfile::Aligned, 30, 1);
    assert_eq!(store.len(), 30);
    for pm in store.postmortems() {
        assert_eq!(pm.outcome, Outcome::Resolved);
        assert_eq!(pm.primary_category, spec.ground_truth.primary_category);
        assert_eq!(pm.remediation, spec.remediation);
    }
}

#[test]
fn misaligned_cpu_corpus_carries_the_memory_fix() {
    let r = runner();
    let oom = r.scenario("oom-advocate-api").unwrap();
    let store = seeded(CPU, CorpusProfile::Misaligned, 20, 1);
    let hits = store.retrieve(&r.scenario(CPU).unwrap().alert, &RetrievalConfig::default());
    assert_eq!(hits.len(), crate::experience::DEFAULT_K);
    for h in hits {
        assert_eq!(h.postmortem.remediation, oom.remediation);
        assert_eq!(h.postmortem.primary_category, r.scenario(CPU).unwrap().ground_truth.primary_category);
    }
}

#[test]
fn mixed_corpus_has_both_kinds() {
    let r = runner();
    let own = &r.scenario(LIVENESS).unwrap().remediation;
    let store = seeded(LIVENESS, CorpusProfile::Mixed, 30, 3);
    let aligned = store.postmortems().iter().filter(|p| &p.remediation == own).count();
    assert!(aligned > 5 && aligned < 25, "{aligned}");
}

#[test]
fn empty_corpus_leaves_store_unchanged() {
    assert!(seeded(SECRET, CorpusProfile::Aligned, 0, 1).is_empty());
}

#[test]
fn seeding_is_deterministic() {
    let a = seeded(READINESS, CorpusProfile::Mixed, 12, 9);
    let b = seeded(READINESS, CorpusProfile::Mixed, 12, 9);
    assert_eq!(a.postmortems(), b.postmortems());
}

#[test]
fn packaged_grid_sizes() {
    assert_eq!(packaged(PackagedName::Falsification, 20, 0).plan.grid_size(), 120);
    assert_eq!(packaged(PackagedName::DensitySweep, 20, 0).plan.grid_size(), 360);
    let n40 = packaged(PackagedName::N40Rerun, PackagedName::N40Rerun.default_reps(), 0).plan;
    assert_eq!((n40.scenarios.len(), n40.arms.len(), n40.reps), (2, 2, 40));
    for name in PackagedName::ALL {
        assert_eq!(name.as_str().parse::<PackagedName>().unwrap(), name);
        let known = runner().scenarios().keys().cloned().collect();
        packaged(name, 2, 0).plan.validate(&known).unwrap();
    }
}

#[test]
fn control_stores_never_retrieve_and_treatment_finds_its_corpus() {
    let r = runner();
    for name in PackagedName::ALL {
        let plan = packaged(name, 1, 4).plan;
        let stores = r.build_stores(&plan, None, true).unwrap();
        for (arm, store) in plan.arms.iter().zip(&stores) {
            let covered: Vec<&str> =
                arm.corpus.as_ref().unwrap_or(&plan.corpus).iter().map(|c| c.scenario.as_str()).collect();
            for id in &plan.scenarios {
                let hits = store.retrieve(&r.scenario(id).unwrap().alert, &arm.retrieval);
                if arm.retrieval.embedder == EmbedderKind::Deterministic {
                    assert!(hits.is_empty(), "{name} {} {id}", arm.name);
                } else {
                    assert_eq!(!hits.is_empty(), covered.contains(&id.as_str()), "{name} {} {id}", arm.name);
                    assert!(hits.iter().all(|h| h.postmortem.scenario_id == *id));
                }
            }
        }
    }
}

#[test]
fn single_rep_smoke_has_no_statistics() {
    let p = packaged(PackagedName::Falsification, 1, 2);
    let res = runner().run_experiment(&p.plan, &ExperimentOutput::default()).unwrap();
    assert_eq!(res.rows.len(), 6);
    let report = analyze(&res.rows);
    assert!(report.rows.iter().all(|r| r.welch.is_none()));
    assert!(report.decision.is_none());
    assert!(render_report("smoke", &report).contains("n<2, no statistics"));
}

#[test]
fn framework_errors_leave_analysis_unchanged() {
    let p = packaged(PackagedName::Falsification, 3, 2);
    let res = runner().run_experiment(&p.plan, &ExperimentOutput::default()).unwrap();
    let mut noisy = res.rows.clone();
    let mut bad = noisy[0].clone();
    bad.run_id = "broken".into();
    bad.framework_error = true;
    bad.composite = 0.0;
    noisy.push(bad);
    let (a, b) = (analyze(&res.rows), analyze(&noisy));
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.pooled, b.pooled);
    assert_eq!(b.framework_errors, 1);
}

#[test]
fn arm_pairing() {
    let arms: Vec<String> = ["tei-5", "control-5", "tei", "control", "tei-x"].iter().map(|s| s.to_string()).collect();
    let pairs = report::pair_arms(&arms);
    assert_eq!(pairs.len(), 2);
    assert_eq!((pairs[0].label.as_str(), pairs[0].control.as_str()), ("5", "control-5"));
    assert_eq!((pairs[1].label.as_str(), pairs[1].control.as_str()), ("", "control"));
}
