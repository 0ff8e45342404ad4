//! Browser bindings for three small explorers over the harness's statistics,
//! scoring and retrieval code. Every export returns a JSON string so the page
//! needs no generated TypeScript types.

use breakage::experience::{
    EmbedderKind, ExperienceStore, Outcome, Postmortem, RetrievalConfig, DEFAULT_DIMENSION,
};
use breakage::score::{composite, outcome_label, ScoreResult, FULL_CREDIT_PERMILLE};
use breakage::stats::{welch_t, SampleSummary, ALPHA};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Debug, Serialize)]
pub struct WelchView {
    pub delta: f64,
    pub se: f64,
    pub t: f64,
    pub df: f64,
    pub p: f64,
    pub alpha: f64,
    pub significant: bool,
}

/// Welch's test from two (n, mean, sd) summaries; `a` is the treatment.
pub fn welch(n_a: u32, mean_a: f64, sd_a: f64, n_b: u32, mean_b: f64, sd_b: f64) -> Result<WelchView, String> {
    for (n, sd) in [(n_a, sd_a), (n_b, sd_b)] {
        if n < 2 {
            return Err("each arm needs n >= 2".into());
        }
        if !(sd >= 0.0 && sd.is_finite()) {
            return Err("sd must be a non-negative number".into());
        }
    }
    if !(mean_a.is_finite() && mean_b.is_finite()) {
        return Err("means must be numbers".into());
    }
    let a = SampleSummary::new(n_a as usize, mean_a, sd_a);
    let b = SampleSummary::new(n_b as usize, mean_b, sd_b);
    let r = welch_t(&a, &b);
    let se = (sd_a * sd_a / f64::from(n_a) + sd_b * sd_b / f64::from(n_b)).sqrt();
    Ok(WelchView { delta: r.delta, se, t: r.t, df: r.df, p: r.p_two_tailed, alpha: ALPHA, significant: r.significant })
}

#[derive(Debug, Serialize)]
pub struct CompositeView {
    pub composite: f64,
    pub outcome: Outcome,
}

/// Composite and outcome label for one set of axis values.
pub fn composite_score(detected: bool, diagnosis_credit: f64, fixed: bool, no_regressions: bool) -> Result<CompositeView, String> {
    if !(0.0..=1.0).contains(&diagnosis_credit) {
        return Err("diagnosis credit must lie in [0, 1]".into());
    }
    let permille = (diagnosis_credit * f64::from(FULL_CREDIT_PERMILLE)).round() as u32;
    let value = composite(detected, permille, fixed, no_regressions);
    let score = ScoreResult {
        detected: u8::from(detected),
        diagnosis_credit,
        fixed: u8::from(fixed),
        no_regressions: u8::from(no_regressions),
        composite: value,
        retrieval_used: false,
        channel_disagreement: false,
        framework_error: false,
    };
    Ok(CompositeView { composite: value, outcome: outcome_label(&score) })
}

#[derive(Debug, Serialize)]
pub struct Hit {
    pub index: usize,
    pub text: String,
    pub distance: f64,
}

/// Stores each non-empty line of `corpus` as a postmortem narrative and
/// returns what the store retrieves for `query`.
pub fn retrieve(corpus: &str, query: &str, embedder: &str, k: usize, max_distance: f64) -> Result<Vec<Hit>, String> {
    let kind: EmbedderKind = embedder.parse()?;
    let cfg = RetrievalConfig { k, max_distance, embedder: kind, ..RetrievalConfig::default() };
    cfg.validate()?;
    let emb = kind.instance(DEFAULT_DIMENSION);
    let mut store = ExperienceStore::in_memory(DEFAULT_DIMENSION);
    let lines: Vec<&str> = corpus.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    for (i, line) in lines.iter().enumerate() {
        store
            .store_postmortem(Postmortem {
                id: format!("doc-{i:04}"),
                scenario_id: "demo".into(),
                created_tick: 0,
                primary_category: "unknown".into(),
                secondary_categories: Vec::new(),
                narrative: (*line).into(),
                actions_taken: Vec::new(),
                remediation: Vec::new(),
                outcome: Outcome::Resolved,
                hypotheses: Vec::new(),
                embedding: emb.embed(line),
                arm: "demo".into(),
                run_seed: 0,
            })
            .map_err(|e| e.to_string())?;
    }
    Ok(store
        .retrieve(query, &cfg)
        .into_iter()
        .map(|r| {
            let index = r.postmortem.id["doc-".len()..].parse().expect("ids are ours");
            Hit { index, text: r.postmortem.narrative, distance: r.distance }
        })
        .collect())
}

fn json<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string())).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = welch)]
pub fn welch_js(n_a: u32, mean_a: f64, sd_a: f64, n_b: u32, mean_b: f64, sd_b: f64) -> Result<String, JsValue> {
    json(welch(n_a, mean_a, sd_a, n_b, mean_b, sd_b))
}

#[wasm_bindgen(js_name = compositeScore)]
pub fn composite_js(detected: bool, diagnosis_credit: f64, fixed: bool, no_regressions: bool) -> Result<String, JsValue> {
    json(composite_score(detected, diagnosis_credit, fixed, no_regressions))
}

#[wasm_bindgen(js_name = retrieve)]
pub fn retrieve_js(corpus: &str, query: &str, embedder: &str, k: usize, max_distance: f64) -> Result<String, JsValue> {
    json(retrieve(corpus, query, embedder, k, max_distance))
}
