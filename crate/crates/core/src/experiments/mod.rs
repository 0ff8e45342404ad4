//! Packaged experiment plans and the synthetic corpora they run against.

mod report;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::reference::AgentKind;
use crate::agent::ApproverConfig;
use crate::experience::{
    embedding_text, Embedder, EmbedderKind, ExperienceStore, HypothesisRecord, Outcome, PoolCap, Postmortem,
    RetrievalConfig, StoreError,
};
use crate::runner::{Arm, ExperimentPlan};
use crate::scenario::ScenarioSpec;
use crate::score::DEFAULT_CONTAINMENT_THRESHOLD;
use crate::tools::Tool;

pub use report::{analyze, render_report, ArmPair, ComparisonRow, Report};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusProfile {
    /// Resolved postmortems of the same mechanism.
    Aligned,
    /// Same category, different mechanism: a sibling scenario's fix.
    Misaligned,
    /// Half of each, interleaved at random.
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub scenario: String,
    pub profile: CorpusProfile,
    pub size: usize,
}

impl CorpusSpec {
    pub fn new(scenario: &str, profile: CorpusProfile, size: usize) -> Self {
        CorpusSpec { scenario: scenario.to_string(), profile, size }
    }
}

const FLAVOR: [&str; 8] = [
    "paged during the evening deploy window",
    "reported by the checkout team",
    "seen shortly after a config rollout",
    "caught by the synthetic probe",
    "noticed during a load test",
    "raised in the weekly review",
    "escalated from the support queue",
    "found while on call over the weekend",
];

/// The scenario whose fix a misaligned exemplar carries: same primary
/// category and a different mechanism, else any other scenario.
pub fn sibling<'a>(scenario: &ScenarioSpec, all: &[&'a ScenarioSpec]) -> Option<&'a ScenarioSpec> {
    let others = || all.iter().copied().filter(|s| s.id != scenario.id && !s.remediation.is_empty());
    others()
        .find(|s| s.ground_truth.primary_category == scenario.ground_truth.primary_category)
        .or_else(|| others().next())
}

/// The investigation the scenario expects, plus any fix tool it leaves out.
fn exemplar_actions(source: &ScenarioSpec) -> Vec<Tool> {
    let mut actions = source.expected_tools();
    for c in &source.remediation {
        if !actions.contains(&c.tool) {
            actions.push(c.tool);
        }
    }
    actions
}

/// Appends `size` synthetic postmortems for `scenario` to `store`. The
/// narratives open with the scenario's alert so they sit near it in the
/// external embedding space; the mechanism and fix follow the profile.
pub fn seed_corpus(
    store: &mut ExperienceStore,
    scenario: &ScenarioSpec,
    all: &[&ScenarioSpec],
    profile: CorpusProfile,
    size: usize,
    seed: u64,
    embedder: &dyn Embedder,
) -> Result<(), StoreError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let other = sibling(scenario, all).unwrap_or(scenario);
    for i in 0..size {
        let aligned = match profile {
            CorpusProfile::Aligned => true,
            CorpusProfile::Misaligned => false,
            CorpusProfile::Mixed => rng.gen_bool(0.5),
        };
        let source = if aligned { scenario } else { other };
        let flavor = FLAVOR.choose(&mut rng).copied().unwrap_or_default();
        let narrative = format!("{}\n{}\n{flavor}", scenario.alert, source.description);
        let category = source.ground_truth.primary_category.clone();
        let actions = exemplar_actions(source);
        let text = embedding_text(&narrative, &category, &actions);
        let pm = Postmortem {
            id: format!("corpus-{}-{}-{i:03}", scenario.id, store.len()),
            scenario_id: scenario.id.clone(),
            created_tick: i as u64,
            primary_category: category.clone(),
            secondary_categories: source.ground_truth.secondary_categories.clone(),
            narrative,
            actions_taken: actions,
            remediation: source.remediation.clone(),
            outcome: Outcome::Resolved,
            hypotheses: vec![HypothesisRecord {
                at_tick: 2,
                category,
                confidence: rng.gen_range(0.6..0.95),
                note: String::new(),
            }],
            embedding: embedder.embed(&text),
            arm: "corpus".into(),
            run_seed: seed,
        };
        store.store_postmortem(pm)?;
    }
    Ok(())
}

pub const SECRET: &str = "secret-missing-key-advocate";
pub const CPU: &str = "cpu-limit-throttling-advocate";
pub const READINESS: &str = "readiness-probe-misconfigured-advocate";
pub const LIVENESS: &str = "liveness-probe-always-fails-advocate";
pub const REPLICAS: &str = "replicas-zero-advocate";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PackagedName {
    Falsification,
    DensitySweep,
    N40Rerun,
    BiasAuditDemo,
    SmallSampleDemo,
}

impl PackagedName {
    pub const ALL: [PackagedName; 5] = [
        PackagedName::Falsification,
        PackagedName::DensitySweep,
        PackagedName::N40Rerun,
        PackagedName::BiasAuditDemo,
        PackagedName::SmallSampleDemo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PackagedName::Falsification => "falsification",
            PackagedName::DensitySweep => "density-sweep",
            PackagedName::N40Rerun => "n40-rerun",
            PackagedName::BiasAuditDemo => "bias-audit-demo",
            PackagedName::SmallSampleDemo => "small-sample-demo",
        }
    }

    pub fn default_reps(self) -> u32 {
        match self {
            PackagedName::N40Rerun => 40,
            PackagedName::SmallSampleDemo => 200,
            _ => 20,
        }
    }
}

impl fmt::Display for PackagedName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PackagedName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PackagedName::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown packaged plan `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PackagedPlan {
    pub name: PackagedName,
    pub plan: ExperimentPlan,
    pub report_template: String,
}

fn arm(name: &str, embedder: EmbedderKind, pool_cap: PoolCap) -> Arm {
    Arm::new(name, RetrievalConfig { embedder, pool_cap, ..RetrievalConfig::default() })
}

fn arm_pair(suffix: &str, pool_cap: PoolCap) -> [Arm; 2] {
    let name = |base: &str| if suffix.is_empty() { base.to_string() } else { format!("{base}-{suffix}") };
    [
        arm(&name("tei"), EmbedderKind::External, pool_cap),
        arm(&name("control"), EmbedderKind::Deterministic, pool_cap),
    ]
}

fn plan(name: &str, scenarios: &[&str], arms: Vec<Arm>, reps: u32, seed: u64, agent: AgentKind) -> ExperimentPlan {
    ExperimentPlan {
        name: name.to_string(),
        scenarios: scenarios.iter().map(|s| s.to_string()).collect(),
        arms,
        reps,
        base_seed: seed,
        agent,
        agent_overrides: BTreeMap::new(),
        corpus: Vec::new(),
        freeze_corpus: false,
        approver: ApproverConfig::default(),
        containment_threshold: DEFAULT_CONTAINMENT_THRESHOLD,
    }
}

/// Noisy-oracle error rates for the bias demo. Easy scenarios are the ones
/// the correlated corpus covers.
pub const BIAS_EASY: [&str; 4] = [SECRET, REPLICAS, "env-var-missing-advocate", "image-pull-failure-advocate"];
pub const BIAS_HARD: [&str; 4] = [CPU, LIVENESS, READINESS, "secret-wrong-password-advocate"];
pub const BIAS_EASY_P_WRONG: f64 = 0.1;
pub const BIAS_HARD_P_WRONG: f64 = 0.7;
pub const BIAS_CORPUS_SIZE: usize = 10;
pub const SMALL_SAMPLE_P_WRONG: f64 = 0.1;

pub fn packaged(name: PackagedName, reps: u32, seed: u64) -> PackagedPlan {
    use CorpusProfile::*;
    let (plan, template) = match name {
        PackagedName::Falsification => {
            let mut p = plan("falsification", &[SECRET, CPU, READINESS], arm_pair("", PoolCap::Unlimited).to_vec(), reps, seed, AgentKind::Imitator);
            p.corpus = vec![
                CorpusSpec::new(SECRET, Aligned, 30),
                CorpusSpec::new(CPU, Misaligned, 20),
                CorpusSpec::new(READINESS, Mixed, 16),
            ];
            (p, "per-scenario comparison, pooled comparison, decision")
        }
        PackagedName::DensitySweep => {
            let mut arms = Vec::new();
            for (suffix, cap) in [("5", PoolCap::Limited(5)), ("15", PoolCap::Limited(15)), ("full", PoolCap::Unlimited)] {
                arms.extend(arm_pair(suffix, cap));
            }
            let mut p = plan("density-sweep", &[SECRET, LIVENESS, CPU], arms, reps, seed, AgentKind::Imitator);
            p.corpus = vec![
                CorpusSpec::new(SECRET, Aligned, 30),
                CorpusSpec::new(LIVENESS, Mixed, 30),
                CorpusSpec::new(CPU, Misaligned, 30),
            ];
            (p, "per-scenario comparison per density tier, pooled comparison per tier")
        }
        PackagedName::N40Rerun => {
            let mut p = plan("n40-rerun", &[CPU, REPLICAS], arm_pair("", PoolCap::Unlimited).to_vec(), reps, seed, AgentKind::Imitator);
            p.corpus = vec![CorpusSpec::new(CPU, Misaligned, 20), CorpusSpec::new(REPLICAS, Aligned, 20)];
            (p, "per-scenario comparison")
        }
        PackagedName::BiasAuditDemo => {
            let scenarios: Vec<&str> = BIAS_EASY.iter().chain(BIAS_HARD.iter()).copied().collect();
            let cover = |ids: &[&str]| ids.iter().map(|s| CorpusSpec::new(s, Aligned, BIAS_CORPUS_SIZE)).collect::<Vec<_>>();
            let correlated = cover(&BIAS_EASY);
            let uncorrelated = cover(&[BIAS_EASY[0], BIAS_EASY[1], BIAS_HARD[0], BIAS_HARD[1]]);
            let mut arms = Vec::new();
            for (suffix, corpus) in [("correlated", correlated), ("uncorrelated", uncorrelated)] {
                for mut a in arm_pair(suffix, PoolCap::Unlimited) {
                    a.corpus = Some(corpus.clone());
                    arms.push(a);
                }
            }
            let mut p = plan("bias-audit-demo", &scenarios, arms, reps, seed, AgentKind::NoisyOracle { p_wrong: BIAS_EASY_P_WRONG });
            for s in BIAS_HARD {
                p.agent_overrides.insert(s.to_string(), AgentKind::NoisyOracle { p_wrong: BIAS_HARD_P_WRONG });
            }
            p.freeze_corpus = true;
            (p, "observational versus controlled delta per population")
        }
        PackagedName::SmallSampleDemo => {
            let p = plan(
                "small-sample-demo",
                &[SECRET],
                vec![arm("control", EmbedderKind::Deterministic, PoolCap::Unlimited)],
                reps,
                seed,
                AgentKind::NoisyOracle { p_wrong: SMALL_SAMPLE_P_WRONG },
            );
            (p, "spread of the subsample mean at several sample sizes")
        }
    };
    PackagedPlan { name, plan, report_template: template.to_string() }
}

#[cfg(test)]
mod tests;
