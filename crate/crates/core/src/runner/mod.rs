//! Scenario lifecycles and experiment grids.
//!
//! One run: load fixture, inject, retrieve, agent loop, read the detector
//! verdict, score, undo the injection, store the postmortem, emit the
//! record. A substrate fault anywhere turns the run into a framework-error
//! record instead of a crash.

pub mod manifest;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::reference::AgentKind;
use crate::agent::{run_agent_loop, AgentTranscript, ApproverConfig, EndReason, LoopConfig, RunEnv};
use crate::experience::{
    embedding_text, EmbedderKind, ExperienceStore, Outcome, PoolCap, Postmortem, RetrievalConfig, StoreError,
    DEFAULT_DIMENSION,
};
use crate::experiments::{seed_corpus, CorpusSpec};
use crate::inject::{inject, undo, HandleStatus};
use crate::scenario::{builtin_scenarios, ScenarioSpec, Vocabulary, FRAMEWORK_ERROR};
use crate::score::{framework_error_score, outcome_label, score_run, ScoreResult, DEFAULT_CONTAINMENT_THRESHOLD};
use crate::sim::ClusterState;
use manifest::{load_manifest, ManifestAppender, ManifestError, ManifestRow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arm {
    pub name: String,
    pub retrieval: RetrievalConfig,
    /// Overrides the plan-level corpus for this arm's store.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<Vec<CorpusSpec>>,
}

impl Arm {
    pub fn new(name: &str, retrieval: RetrievalConfig) -> Self {
        Arm { name: name.to_string(), retrieval, corpus: None }
    }

    /// `tei` or `control` with default retrieval settings.
    pub fn named(name: &str) -> Option<Self> {
        let embedder = match name {
            "tei" => EmbedderKind::External,
            "control" => EmbedderKind::Deterministic,
            _ => return None,
        };
        Some(Arm::new(name, RetrievalConfig { embedder, ..RetrievalConfig::default() }))
    }
}

fn default_threshold() -> f64 {
    DEFAULT_CONTAINMENT_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub name: String,
    pub scenarios: Vec<String>,
    pub arms: Vec<Arm>,
    pub reps: u32,
    pub base_seed: u64,
    pub agent: AgentKind,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub agent_overrides: BTreeMap<String, AgentKind>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub corpus: Vec<CorpusSpec>,
    /// Keep run postmortems out of the stores so every rep sees the seeded
    /// corpus only.
    #[serde(default)]
    pub freeze_corpus: bool,
    #[serde(default)]
    pub approver: ApproverConfig,
    #[serde(default = "default_threshold")]
    pub containment_threshold: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum RunnerError {
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl ExperimentPlan {
    pub fn validate(&self, known: &BTreeSet<String>) -> Result<(), RunnerError> {
        let bad = |m: String| Err(RunnerError::Plan(m));
        if self.reps == 0 {
            return bad("reps must be at least 1".into());
        }
        if self.scenarios.is_empty() || self.arms.is_empty() {
            return bad("plan needs at least one scenario and one arm".into());
        }
        let mut names = BTreeSet::new();
        for arm in &self.arms {
            if arm.name.is_empty() || !names.insert(arm.name.as_str()) {
                return bad(format!("arm names must be unique and non-empty (`{}`)", arm.name));
            }
            arm.retrieval.validate().map_err(|e| RunnerError::Plan(format!("arm {}: {e}", arm.name)))?;
        }
        let corpora = self.arms.iter().filter_map(|a| a.corpus.as_ref()).chain(std::iter::once(&self.corpus));
        for id in self.scenarios.iter().chain(self.agent_overrides.keys()).chain(corpora.flatten().map(|c| &c.scenario)) {
            if !known.contains(id) {
                return Err(RunnerError::UnknownScenario(id.clone()));
            }
        }
        if !(0.0..=1.0).contains(&self.containment_threshold) {
            return bad("containment_threshold must be in [0, 1]".into());
        }
        Ok(())
    }

    pub fn agent_for(&self, scenario: &str) -> AgentKind {
        self.agent_overrides.get(scenario).copied().unwrap_or(self.agent)
    }

    pub fn grid_size(&self) -> usize {
        self.scenarios.len() * self.arms.len() * self.reps as usize
    }
}

/// Stable across platforms and releases: FNV-1a over the fields, then a
/// splitmix64 finalizer.
pub fn run_seed(base_seed: u64, scenario: &str, arm: &str, rep: u32) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |bytes: &[u8]| {
        for b in bytes {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    feed(&base_seed.to_le_bytes());
    feed(scenario.as_bytes());
    feed(&[0]);
    feed(arm.as_bytes());
    feed(&[0]);
    feed(&rep.to_le_bytes());
    let mut z = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn run_id(scenario: &str, arm: &str, rep: u32, seed: u64) -> String {
    format!("{scenario}.{arm}.{rep:03}.{:08x}", seed >> 32)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub scenario_id: String,
    pub arm: String,
    pub embedder: String,
    pub pool_cap: PoolCap,
    pub rep: u32,
    pub seed: u64,
    pub score: ScoreResult,
    pub outcome: Outcome,
    pub end_reason: EndReason,
    pub wall_ticks: u64,
}

impl RunRecord {
    pub fn to_row(&self) -> ManifestRow {
        let s = &self.score;
        ManifestRow {
            run_id: self.run_id.clone(),
            scenario: self.scenario_id.clone(),
            arm: self.arm.clone(),
            embedder: self.embedder.clone(),
            pool_cap: self.pool_cap,
            rep: self.rep,
            seed: self.seed,
            composite: s.composite,
            detected: s.detected,
            diagnosis_credit: s.diagnosis_credit,
            fixed: s.fixed,
            no_regressions: s.no_regressions,
            retrieval_used: s.retrieval_used,
            channel_disagreement: s.channel_disagreement,
            framework_error: s.framework_error,
            outcome: self.outcome,
            end_reason: self.end_reason,
            wall_ticks: self.wall_ticks,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub record: RunRecord,
    pub transcript: Option<AgentTranscript>,
    pub framework_error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub approver: ApproverConfig,
    pub containment_threshold: f64,
    pub store_postmortem: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            approver: ApproverConfig::default(),
            containment_threshold: DEFAULT_CONTAINMENT_THRESHOLD,
            store_postmortem: true,
        }
    }
}

/// Owns the fixture and vocabulary. Runs take `&mut self`, so one runner
/// never has two scenarios in flight.
#[derive(Debug, Clone)]
pub struct Runner {
    vocab: Vocabulary,
    rendered_vocab: Vec<String>,
    scenarios: BTreeMap<String, ScenarioSpec>,
    fixture: ClusterState,
}

impl Default for Runner {
    fn default() -> Self {
        Runner::new(Vocabulary::shipped(), ClusterState::baseline())
    }
}

impl Runner {
    pub fn new(vocab: Vocabulary, fixture: ClusterState) -> Self {
        let scenarios = builtin_scenarios(&vocab).into_iter().map(|s| (s.id.clone(), s)).collect();
        let rendered_vocab = vocab.render();
        Runner { vocab, rendered_vocab, scenarios, fixture }
    }

    pub fn with_scenario(mut self, spec: ScenarioSpec) -> Self {
        self.scenarios.insert(spec.id.clone(), spec);
        self
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn scenario(&self, id: &str) -> Option<&ScenarioSpec> {
        self.scenarios.get(id)
    }

    pub fn scenarios(&self) -> &BTreeMap<String, ScenarioSpec> {
        &self.scenarios
    }

    fn fail(&self, base: RunRecord, message: String, store: &mut ExperienceStore, opts: &RunOptions) -> RunOutput {
        log::warn!("{}: framework error: {message}", base.run_id);
        let record = RunRecord {
            score: framework_error_score(),
            outcome: Outcome::Inconclusive,
            end_reason: EndReason::FrameworkError,
            ..base
        };
        if opts.store_postmortem {
            let pm = Postmortem {
                id: record.run_id.clone(),
                scenario_id: record.scenario_id.clone(),
                created_tick: 0,
                primary_category: FRAMEWORK_ERROR.to_string(),
                secondary_categories: Vec::new(),
                narrative: message.clone(),
                actions_taken: Vec::new(),
                remediation: Vec::new(),
                outcome: Outcome::Inconclusive,
                hypotheses: Vec::new(),
                embedding: crate::experience::embed_deterministic(&message, store.dimension()),
                arm: record.arm.clone(),
                run_seed: record.seed,
            };
            store_quietly(store, pm);
        }
        RunOutput { record, transcript: None, framework_error: Some(message) }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn run_scenario(
        &mut self,
        scenario: &ScenarioSpec,
        agent: AgentKind,
        arm: &Arm,
        rep: u32,
        seed: u64,
        store: &mut ExperienceStore,
        opts: &RunOptions,
    ) -> RunOutput {
        let base = RunRecord {
            run_id: run_id(&scenario.id, &arm.name, rep, seed),
            scenario_id: scenario.id.clone(),
            arm: arm.name.clone(),
            embedder: arm.retrieval.embedder.to_string(),
            pool_cap: arm.retrieval.pool_cap,
            rep,
            seed,
            score: framework_error_score(),
            outcome: Outcome::Inconclusive,
            end_reason: EndReason::FrameworkError,
            wall_ticks: 0,
        };

        let mut fixture = self.fixture.clone();
        if let Some(w) = &scenario.metric_weights {
            fixture = fixture.with_metric_weights(w.clone());
        }
        let (injected, mut handle) = match inject(&fixture, &scenario.injector) {
            Ok(x) => x,
            Err(e) => return self.fail(base, format!("injection failed: {e}"), store, opts),
        };
        let query = if scenario.alert.is_empty() { &scenario.description } else { &scenario.alert };
        let retrieved = store.retrieve(query, &arm.retrieval);

        let mut env = RunEnv::new(injected, scenario);
        let cfg = LoopConfig {
            approver: ApproverConfig { seed: opts.approver.seed ^ seed, ..opts.approver },
            ..LoopConfig::for_scenario(scenario)
        };
        let mut behavior = agent.build(scenario, seed);
        let transcript = run_agent_loop(behavior.as_mut(), scenario, &mut env, &retrieved, &self.rendered_vocab, &cfg);
        if let Some(e) = &transcript.framework_error {
            let mut out = self.fail(base, e.clone(), store, opts);
            out.transcript = Some(transcript);
            return out;
        }

        let verdict = env.verdict();
        let score = score_run(&transcript, &verdict, scenario, &retrieved, &self.vocab, opts.containment_threshold);
        let outcome = if transcript.end_reason == EndReason::GuardPaused {
            Outcome::Inconclusive
        } else {
            outcome_label(&score)
        };

        let _ = undo(&env.state, &mut handle);
        if handle.status == HandleStatus::Failed {
            let mut out = self.fail(base, "injection undo failed".into(), store, opts);
            out.transcript = Some(transcript);
            return out;
        }

        if opts.store_postmortem {
            let actions = transcript.actions_taken();
            let pm_draft = &transcript.postmortem;
            let text = embedding_text(&pm_draft.narrative, &pm_draft.primary_category, &actions);
            let embedding = arm.retrieval.embedder.instance(store.dimension()).embed(&text);
            let pm = Postmortem {
                id: base.run_id.clone(),
                scenario_id: scenario.id.clone(),
                created_tick: transcript.end_tick,
                primary_category: pm_draft.primary_category.clone(),
                secondary_categories: pm_draft.secondary_categories.clone(),
                narrative: pm_draft.narrative.clone(),
                actions_taken: actions,
                remediation: transcript.remediation(),
                outcome,
                hypotheses: transcript.hypotheses.clone(),
                embedding,
                arm: arm.name.clone(),
                run_seed: seed,
            };
            store_quietly(store, pm);
        }

        let record = RunRecord {
            score,
            outcome,
            end_reason: transcript.end_reason,
            wall_ticks: transcript.end_tick - transcript.start_tick,
            ..base
        };
        RunOutput { record, transcript: Some(transcript), framework_error: None }
    }

    /// Seeds one store per arm.
    pub fn build_stores(&self, plan: &ExperimentPlan, dir: Option<&Path>, fresh: bool) -> Result<Vec<ExperienceStore>, RunnerError> {
        let mut stores = Vec::new();
        for arm in &plan.arms {
            let mut store = match dir {
                Some(d) => {
                    let path = d.join(format!("{}.ndjson", arm.name));
                    if fresh && path.exists() {
                        fs::remove_file(&path)?;
                    }
                    ExperienceStore::open(&path, DEFAULT_DIMENSION)?
                }
                None => ExperienceStore::in_memory(DEFAULT_DIMENSION),
            };
            if store.is_empty() {
                let embedder = arm.retrieval.embedder.instance(DEFAULT_DIMENSION);
                for (i, c) in arm.corpus.as_ref().unwrap_or(&plan.corpus).iter().enumerate() {
                    let spec = self.scenarios.get(&c.scenario).ok_or_else(|| RunnerError::UnknownScenario(c.scenario.clone()))?;
                    let all: Vec<&ScenarioSpec> = self.scenarios.values().collect();
                    let corpus_seed = run_seed(plan.base_seed, &c.scenario, "corpus", i as u32);
                    seed_corpus(&mut store, spec, &all, c.profile, c.size, corpus_seed, embedder.as_ref())?;
                }
            }
            stores.push(store);
        }
        Ok(stores)
    }

    pub fn run_experiment(&mut self, plan: &ExperimentPlan, out: &ExperimentOutput) -> Result<ExperimentResult, RunnerError> {
        let known: BTreeSet<String> = self.scenarios.keys().cloned().collect();
        plan.validate(&known)?;

        let mut rows = match &out.manifest {
            Some(p) if p.exists() && fs::metadata(p)?.len() > 0 => load_manifest(p)?,
            _ => Vec::new(),
        };
        let fresh = rows.is_empty();
        let store_dir = out.manifest.as_ref().map(|p| sibling_dir(p, "stores"));
        if let Some(d) = &store_dir {
            fs::create_dir_all(d)?;
        }
        let transcript_dir = out.write_transcripts.then(|| out.manifest.as_ref().map(|p| sibling_dir(p, "transcripts"))).flatten();
        if let Some(d) = &transcript_dir {
            fs::create_dir_all(d)?;
        }
        let mut stores = self.build_stores(plan, store_dir.as_deref(), fresh)?;
        let mut appender = match &out.manifest {
            Some(p) => Some(ManifestAppender::open(p)?),
            None => None,
        };
        let done: BTreeSet<(String, String, u32)> =
            rows.iter().map(|r| (r.scenario.clone(), r.arm.clone(), r.rep)).collect();
        let opts = RunOptions {
            approver: plan.approver,
            containment_threshold: plan.containment_threshold,
            store_postmortem: !plan.freeze_corpus,
        };

        let mut new_rows = 0;
        'grid: for rep in 0..plan.reps {
            for scenario_id in &plan.scenarios {
                let spec = self.scenarios[scenario_id].clone();
                for (arm, store) in plan.arms.iter().zip(stores.iter_mut()) {
                    if done.contains(&(scenario_id.clone(), arm.name.clone(), rep)) {
                        continue;
                    }
                    if out.limit.is_some_and(|l| new_rows >= l) {
                        break 'grid;
                    }
                    let seed = run_seed(plan.base_seed, scenario_id, &arm.name, rep);
                    let result = self.run_scenario(&spec, plan.agent_for(scenario_id), arm, rep, seed, store, &opts);
                    if let (Some(d), Some(t)) = (&transcript_dir, &result.transcript) {
                        fs::write(d.join(format!("{}.jsonl", result.record.run_id)), t.to_jsonl())?;
                    }
                    let row = result.record.to_row();
                    if let Some(a) = appender.as_mut() {
                        a.append(&row)?;
                    }
                    rows.push(row);
                    new_rows += 1;
                }
            }
        }
        let framework_errors = rows.iter().filter(|r| r.framework_error).count();
        if framework_errors > 0 {
            log::warn!("{framework_errors} framework-error runs excluded from capability statistics");
        }
        Ok(ExperimentResult { rows, new_rows, framework_errors })
    }
}

fn store_quietly(store: &mut ExperienceStore, pm: Postmortem) {
    match store.store_postmortem(pm) {
        Ok(()) => {}
        // Already stored by an interrupted earlier attempt at this run.
        Err(StoreError::DuplicateId(id)) => log::debug!("postmortem {id} already stored"),
        Err(e) => log::warn!("postmortem not stored: {e}"),
    }
}

/// `<dir>/<stem>-<suffix>` next to a manifest file.
pub fn sibling_dir(manifest: &Path, suffix: &str) -> PathBuf {
    let stem = manifest.file_stem().and_then(|s| s.to_str()).unwrap_or("manifest");
    manifest.with_file_name(format!("{stem}-{suffix}"))
}

pub fn default_manifest_path(experiment: &str) -> PathBuf {
    std::env::temp_dir().join(format!("{experiment}-manifest.csv"))
}

/// Where an experiment writes. With no manifest everything stays in memory.
#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    pub manifest: Option<PathBuf>,
    pub write_transcripts: bool,
    /// Stop after this many new rows; used to exercise resumption.
    pub limit: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub rows: Vec<ManifestRow>,
    pub new_rows: usize,
    pub framework_errors: usize,
}

#[cfg(test)]
mod tests;
