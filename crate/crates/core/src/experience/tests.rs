use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

const DIM: usize = 64;

fn pm(id: &str, narrative: &str, embedding: EmbeddingVector) -> Postmortem {
    Postmortem {
        id: id.into(),
        scenario_id: "s".into(),
        created_tick: 0,
        primary_category: "oom-kill".into(),
        secondary_categories: vec![],
        narrative: narrative.into(),
        actions_taken: vec![Tool::ListPods, Tool::PatchDeployment],
        remediation: vec![],
        outcome: Outcome::Resolved,
        hypotheses: vec![],
        embedding,
        arm: "tei".into(),
        run_seed: 1,
    }
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> EmbeddingVector {
    EmbeddingVector::normalize((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

#[test]
fn self_retrieval_with_external_embedder() {
    let e = LexicalEmbedder { dimension: DEFAULT_DIMENSION };
    let mut store = ExperienceStore::in_memory(DEFAULT_DIMENSION);
    let texts = [
        "api crash loop after db-password removed from secret",
        "payment scaled to zero replicas during maintenance",
        "cart liveness probe pointed at the wrong path",
    ];
    for (i, t) in texts.iter().enumerate() {
        store.store_postmortem(pm(&format!("pm-{i}"), t, e.embed(t))).unwrap();
    }
    let cfg = RetrievalConfig { embedder: EmbedderKind::External, ..Default::default() };
    for (i, t) in texts.iter().enumerate() {
        let got = store.retrieve(t, &cfg);
        assert_eq!(got[0].postmortem.id, format!("pm-{i}"));
        assert!(got[0].distance < 1e-6);
    }
}

#[test]
fn duplicate_id_and_dimension_mismatch_rejected() {
    let mut store = ExperienceStore::in_memory(DIM);
    store.store_postmortem(pm("a", "x", embed_deterministic("x", DIM))).unwrap();
    assert!(matches!(
        store.store_postmortem(pm("a", "y", embed_deterministic("y", DIM))),
        Err(StoreError::DuplicateId(_))
    ));
    assert!(matches!(
        store.store_postmortem(pm("b", "y", embed_deterministic("y", DIM + 1))),
        Err(StoreError::Embedding(EmbeddingError::DimensionMismatch(..)))
    ));
    assert_eq!(store.len(), 1);
}

#[test]
fn framework_error_rows_never_returned() {
    let mut store = ExperienceStore::in_memory(DIM);
    let v = embed_deterministic("q", DIM);
    let mut bad = pm("fe", "q", v.clone());
    bad.primary_category = FRAMEWORK_ERROR.into();
    store.store_postmortem(bad).unwrap();
    store.store_postmortem(pm("ok", "q", v.clone())).unwrap();
    let cfg = RetrievalConfig { max_distance: 2.0, ..Default::default() };
    let got = store.retrieve_vector(&v, &cfg);
    assert_eq!(got.len(), 1);
    assert_eq!(got[0].postmortem.id, "ok");
}

#[test]
fn deterministic_arm_returns_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ExperienceStore::in_memory(DEFAULT_DIMENSION);
    for i in 0..50 {
        let t = format!("incident {i} {}", rng.gen::<u64>());
        store.store_postmortem(pm(&format!("p{i}"), &t, embed_deterministic(&t, DEFAULT_DIMENSION))).unwrap();
    }
    let cfg = RetrievalConfig { embedder: EmbedderKind::Deterministic, ..Default::default() };
    for i in 0..100 {
        assert!(store.retrieve(&format!("query {i}"), &cfg).is_empty());
    }
}

#[test]
fn pool_cap_bounds_results() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let center = random_unit(&mut rng, DIM);
    let mut store = ExperienceStore::in_memory(DIM);
    for i in 0..30 {
        let jitter: Vec<f64> = center.values.iter().map(|&c| f64::from(c) + rng.gen_range(-0.02..0.02)).collect();
        store.store_postmortem(pm(&format!("n{i:02}"), "", EmbeddingVector::normalize(jitter))).unwrap();
    }
    let cfg = RetrievalConfig { pool_cap: PoolCap::Limited(5), k: 5, ..Default::default() };
    assert_eq!(store.retrieve_vector(&center, &cfg).len(), 5);
    let cfg = RetrievalConfig { pool_cap: PoolCap::Limited(5), k: 3, ..Default::default() };
    assert_eq!(store.retrieve_vector(&center, &cfg).len(), 3);
    let cfg = RetrievalConfig { pool_cap: PoolCap::Unlimited, k: 30, ..Default::default() };
    assert_eq!(store.retrieve_vector(&center, &cfg).len(), 30);
}

#[test]
fn ties_break_on_id_inside_the_cap() {
    let e = EmbeddingVector::normalize(vec![1.0, 0.0]);
    let mut store = ExperienceStore::in_memory(2);
    store.store_postmortem(pm("b", "", e.clone())).unwrap();
    store.store_postmortem(pm("a", "", e.clone())).unwrap();
    let cfg = RetrievalConfig { pool_cap: PoolCap::Limited(1), k: 1, ..Default::default() };
    let got = store.retrieve_vector(&e, &cfg);
    assert_eq!(got.len(), 1);
    assert_eq!(got[0].postmortem.id, "a");
}

#[test]
fn cap_and_threshold_commute_on_an_exact_scan() {
    // Over a distance-sorted list both steps keep a prefix, so the result is
    // the first min(cap, k, #within threshold) rows whichever runs first.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let q = random_unit(&mut rng, 8);
    let mut store = ExperienceStore::in_memory(8);
    for i in 0..40 {
        store.store_postmortem(pm(&format!("r{i:02}"), "", random_unit(&mut rng, 8))).unwrap();
    }
    let everything = RetrievalConfig { max_distance: 2.0, pool_cap: PoolCap::Unlimited, k: 40, ..Default::default() };
    let sorted = store.retrieve_vector(&q, &everything);
    for cap in [1, 5, 15, 40] {
        for maxd in [0.5, 0.9, 1.2] {
            let cfg = RetrievalConfig { max_distance: maxd, pool_cap: PoolCap::Limited(cap), k: cap.min(5), ..Default::default() };
            let within = sorted.iter().filter(|r| r.distance <= maxd).count();
            let got = store.retrieve_vector(&q, &cfg);
            assert_eq!(got.len(), cap.min(5).min(within));
            assert_eq!(got[..], sorted[..got.len()]);
        }
    }
}

#[test]
fn file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("store.ndjson");
    {
        let mut store = ExperienceStore::open(&path, DIM).unwrap();
        store.store_postmortem(pm("a", "first", embed_deterministic("first", DIM))).unwrap();
        store.store_postmortem(pm("b", "second", embed_deterministic("second", DIM))).unwrap();
    }
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 2);
    let line: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(line["embedding"], serde_json::json!(embed_deterministic("first", DIM).to_base64()));
    let mut store = ExperienceStore::open(&path, DIM).unwrap();
    assert_eq!(store.len(), 2);
    assert_eq!(store.postmortems()[1].embedding, embed_deterministic("second", DIM));
    assert!(store.store_postmortem(pm("a", "again", embed_deterministic("x", DIM))).is_err());
    assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 2);
}

#[test]
fn env_overrides() {
    let env = |pairs: &'static [(&'static str, &'static str)]| {
        move |k: &str| pairs.iter().find(|(n, _)| *n == k).map(|(_, v)| v.to_string())
    };
    let cfg = RetrievalConfig::default()
        .with_env(env(&[(ENV_EMBEDDER, "deterministic"), (ENV_MAX_DISTANCE, "0.25"), (ENV_POOL_CAP, "3")]))
        .unwrap();
    assert_eq!(cfg.embedder, EmbedderKind::Deterministic);
    assert_eq!(cfg.max_distance, 0.25);
    assert_eq!(cfg.pool_cap, PoolCap::Limited(3));
    assert_eq!(cfg.k, 3);
    assert!(RetrievalConfig::default().with_env(env(&[(ENV_EMBEDDER, "tei")])).is_err());
    assert!(RetrievalConfig::default().with_env(env(&[(ENV_MAX_DISTANCE, "3")])).is_err());
    assert!(RetrievalConfig::default().with_env(env(&[(ENV_POOL_CAP, "0")])).is_err());
    let cfg = RetrievalConfig::default().with_env(env(&[(ENV_POOL_CAP, "unlimited")])).unwrap();
    assert_eq!(cfg.pool_cap, PoolCap::Unlimited);
}

/// Brute force written independently of the store: full sort over every
/// candidate by (distance, id) using a plain dot product, then the fixed
/// cap → threshold → k pipeline.
pub(crate) fn brute_force(rows: &[Postmortem], q: &EmbeddingVector, cfg: &RetrievalConfig) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64)> = rows
        .iter()
        .filter(|r| r.primary_category != FRAMEWORK_ERROR)
        .map(|r| {
            let mut dot = 0.0f64;
            for i in 0..q.values.len() {
                dot += q.values[i] as f64 * r.embedding.values[i] as f64;
            }
            (r.id.clone(), (1.0 - dot).clamp(0.0, 2.0))
        })
        .collect();
    all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    let cap = match cfg.pool_cap {
        PoolCap::Limited(n) => n,
        PoolCap::Unlimited => usize::MAX,
    };
    all.into_iter().take(cap).filter(|x| x.1 <= cfg.max_distance).take(cfg.k).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn retrieve_equals_brute_force(seed in any::<u64>(), n in 0usize..40, cap in 0usize..3, k in 1usize..6, maxd in 0.0f64..1.2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = random_unit(&mut rng, 8);
        let mut store = ExperienceStore::in_memory(8);
        for i in 0..n {
            let mut row = pm(&format!("r{}", rng.gen_range(0..1000)), "", random_unit(&mut rng, 8));
            row.id = format!("{}-{i}", row.id);
            if rng.gen_bool(0.1) {
                row.primary_category = FRAMEWORK_ERROR.into();
            }
            store.store_postmortem(row).unwrap();
        }
        let pool_cap = [PoolCap::Limited(5), PoolCap::Limited(15), PoolCap::Unlimited][cap];
        let cfg = RetrievalConfig { max_distance: maxd, pool_cap, k: k.min(pool_cap.limit().unwrap_or(k)), embedder: EmbedderKind::External };
        let got: Vec<(String, f64)> = store.retrieve_vector(&q, &cfg).into_iter().map(|r| (r.postmortem.id, r.distance)).collect();
        prop_assert_eq!(got, brute_force(store.postmortems(), &q, &cfg));
    }

    #[test]
    fn retrieval_is_deterministic(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ExperienceStore::in_memory(8);
        for i in 0..20 {
            store.store_postmortem(pm(&format!("r{i}"), "", random_unit(&mut rng, 8))).unwrap();
        }
        let q = random_unit(&mut rng, 8);
        let cfg = RetrievalConfig { max_distance: 1.0, ..Default::default() };
        prop_assert_eq!(store.retrieve_vector(&q, &cfg), store.retrieve_vector(&q, &cfg));
    }
}
