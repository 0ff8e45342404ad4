//! Four-axis run scoring.
//!
//! Weights are held in integer percent and diagnosis credit in permille so
//! the composite is computed exactly and only divided once at the end.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::agent::AgentTranscript;
use crate::detect::DetectorVerdict;
use crate::experience::{HypothesisRecord, Outcome, Retrieved};
use crate::scenario::{GroundTruth, ScenarioSpec, Vocabulary};
use crate::tools::Tool;

pub const W_DETECTED: u32 = 20;
pub const W_DIAGNOSIS: u32 = 30;
pub const W_FIXED: u32 = 30;
pub const W_NO_REGRESSIONS: u32 = 20;
const _: () = assert!(W_DETECTED + W_DIAGNOSIS + W_FIXED + W_NO_REGRESSIONS == 100);

pub const FULL_CREDIT_PERMILLE: u32 = 1000;
pub const NEAR_MISS_PERMILLE: u32 = 350;
pub const DEFAULT_CONTAINMENT_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreResult {
    pub detected: u8,
    pub diagnosis_credit: f64,
    pub fixed: u8,
    pub no_regressions: u8,
    pub composite: f64,
    pub retrieval_used: bool,
    pub channel_disagreement: bool,
    pub framework_error: bool,
}

/// Composite from the four axes; `credit_permille` is the diagnosis credit
/// times 1000.
pub fn composite(detected: bool, credit_permille: u32, fixed: bool, no_regressions: bool) -> f64 {
    let scaled = W_DETECTED * 1000 * u32::from(detected)
        + W_DIAGNOSIS * credit_permille.min(FULL_CREDIT_PERMILLE)
        + W_FIXED * 1000 * u32::from(fixed)
        + W_NO_REGRESSIONS * 1000 * u32::from(no_regressions);
    f64::from(scaled) / 100_000.0
}

pub fn diagnosis_credit_permille(pm_primary: &str, pm_secondaries: &[String], truth: &GroundTruth, vocab: &Vocabulary) -> u32 {
    if !vocab.contains(pm_primary) {
        return 0;
    }
    if pm_primary == truth.primary_category {
        FULL_CREDIT_PERMILLE
    } else if truth.secondary_categories.iter().any(|c| c == pm_primary)
        || pm_secondaries.contains(&truth.primary_category)
    {
        NEAR_MISS_PERMILLE
    } else {
        0
    }
}

pub fn diagnosis_credit(pm_primary: &str, pm_secondaries: &[String], truth: &GroundTruth, vocab: &Vocabulary) -> f64 {
    f64::from(diagnosis_credit_permille(pm_primary, pm_secondaries, truth, vocab)) / 1000.0
}

/// Share of the exemplar's distinct tools that the agent also used.
pub fn containment(agent_actions: &[Tool], exemplar_actions: &[Tool]) -> f64 {
    let exemplar: BTreeSet<Tool> = exemplar_actions.iter().copied().collect();
    if exemplar.is_empty() {
        return 0.0;
    }
    let agent: BTreeSet<Tool> = agent_actions.iter().copied().collect();
    exemplar.intersection(&agent).count() as f64 / exemplar.len() as f64
}

pub fn retrieval_used(agent_actions: &[Tool], retrieved: &[Retrieved], threshold: f64) -> bool {
    retrieved
        .iter()
        .map(|r| containment(agent_actions, &r.postmortem.actions_taken))
        .fold(None, |best: Option<f64>, c| Some(best.map_or(c, |b| b.max(c))))
        .is_some_and(|best| best >= threshold)
}

pub fn detect_channel_disagreement(hypotheses: &[HypothesisRecord], pm_primary: &str, vocab: &Vocabulary) -> bool {
    match hypotheses.last() {
        None => false,
        Some(h) => h.category != pm_primary && !vocab.paired(&h.category, pm_primary),
    }
}

pub fn outcome_label(score: &ScoreResult) -> Outcome {
    if score.no_regressions == 0 {
        Outcome::Regressed
    } else if score.fixed == 1 && !score.channel_disagreement {
        Outcome::Resolved
    } else {
        Outcome::Inconclusive
    }
}

pub fn score_run(
    transcript: &AgentTranscript,
    verdict: &DetectorVerdict,
    scenario: &ScenarioSpec,
    retrieved: &[Retrieved],
    vocab: &Vocabulary,
    containment_threshold: f64,
) -> ScoreResult {
    let truth = &scenario.ground_truth;
    let deadline = transcript.start_tick + u64::from(scenario.time_budget_s);
    let detected = transcript
        .hypotheses
        .iter()
        .any(|h| h.at_tick <= deadline && truth.mentions(&h.category));
    let pm = &transcript.postmortem;
    let credit = if transcript.no_postmortem {
        0
    } else {
        diagnosis_credit_permille(&pm.primary_category, &pm.secondary_categories, truth, vocab)
    };
    let fixed = verdict.all_fixed;
    let no_regressions = !verdict.any_regressed;
    ScoreResult {
        detected: u8::from(detected),
        diagnosis_credit: f64::from(credit) / 1000.0,
        fixed: u8::from(fixed),
        no_regressions: u8::from(no_regressions),
        composite: composite(detected, credit, fixed, no_regressions),
        retrieval_used: retrieval_used(&transcript.actions_taken(), retrieved, containment_threshold),
        channel_disagreement: detect_channel_disagreement(&transcript.hypotheses, &pm.primary_category, vocab),
        framework_error: false,
    }
}

/// The row recorded when the substrate, not the agent, failed.
pub fn framework_error_score() -> ScoreResult {
    ScoreResult {
        detected: 0,
        diagnosis_credit: 0.0,
        fixed: 0,
        no_regressions: 0,
        composite: 0.0,
        retrieval_used: false,
        channel_disagreement: false,
        framework_error: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab() -> Vocabulary {
        Vocabulary::shipped()
    }

    fn truth() -> GroundTruth {
        GroundTruth {
            primary_category: "resource-limit-misconfiguration".into(),
            secondary_categories: vec!["cpu-throttling-symptom".into()],
        }
    }

    #[test]
    fn composite_examples() {
        assert_eq!(composite(true, 1000, true, true), 1.0);
        assert_eq!(composite(false, 0, false, true), 0.2);
        assert_eq!(composite(true, 350, true, true), 0.805);
        assert_eq!(composite(false, 0, false, false), 0.0);
    }

    #[test]
    fn diagnosis_credit_cases() {
        let v = vocab();
        assert_eq!(diagnosis_credit("resource-limit-misconfiguration", &[], &truth(), &v), 1.0);
        assert_eq!(diagnosis_credit("cpu-throttling-symptom", &[], &truth(), &v), 0.35);
        assert_eq!(
            diagnosis_credit("latency-degradation", &["resource-limit-misconfiguration".into()], &truth(), &v),
            0.35
        );
        assert_eq!(diagnosis_credit("oom-kill", &[], &truth(), &v), 0.0);
        assert_eq!(diagnosis_credit("made-up-category", &[], &truth(), &v), 0.0);
        // Out-of-vocab primary earns nothing even when its secondaries match.
        assert_eq!(diagnosis_credit("made-up", &["resource-limit-misconfiguration".into()], &truth(), &v), 0.0);
    }

    #[test]
    fn containment_cases() {
        use Tool::*;
        assert_eq!(containment(&[ListPods, ReadLogs, GetResource, PatchSecret], &[ListPods, ReadLogs]), 1.0);
        assert_eq!(containment(&[ListPods, ReadLogs, GetResource], &[ListPods, Scale]), 0.5);
        assert_eq!(containment(&[ListPods], &[]), 0.0);
        // Asymmetric witness.
        let a = [ListPods, ReadLogs, GetResource, PatchSecret];
        let e = [ListPods, PatchSecret];
        assert_eq!(containment(&a, &e), 1.0);
        assert_eq!(containment(&e, &a), 0.5);
    }

    #[test]
    fn channel_disagreement_cases() {
        let v = vocab();
        let h = |c: &str| HypothesisRecord { at_tick: 1, category: c.into(), confidence: 0.5, note: String::new() };
        assert!(!detect_channel_disagreement(&[], "oom-kill", &v));
        assert!(!detect_channel_disagreement(&[h("oom-kill")], "oom-kill", &v));
        assert!(!detect_channel_disagreement(&[h("cpu-throttling-symptom")], "resource-limit-misconfiguration", &v));
        assert!(detect_channel_disagreement(&[h("image-pull-failure")], "secret-content-mismatch", &v));
        assert!(!detect_channel_disagreement(&[h("image-pull-failure"), h("oom-kill")], "oom-kill", &v));
    }

    #[test]
    fn outcome_labels() {
        let base = ScoreResult {
            detected: 1,
            diagnosis_credit: 1.0,
            fixed: 1,
            no_regressions: 1,
            composite: 1.0,
            retrieval_used: false,
            channel_disagreement: false,
            framework_error: false,
        };
        assert_eq!(outcome_label(&base), Outcome::Resolved);
        assert_eq!(outcome_label(&ScoreResult { no_regressions: 0, ..base }), Outcome::Regressed);
        assert_eq!(outcome_label(&ScoreResult { channel_disagreement: true, ..base }), Outcome::Inconclusive);
        assert_eq!(outcome_label(&ScoreResult { fixed: 0, ..base }), Outcome::Inconclusive);
    }

    proptest! {
        #[test]
        fn composite_bounded_and_exact_at_top(d in any::<bool>(), c in prop::sample::select(vec![0u32, 350, 1000]), f in any::<bool>(), n in any::<bool>()) {
            let v = composite(d, c, f, n);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v == 1.0, d && c == 1000 && f && n);
            let float = 0.20 * f64::from(u8::from(d)) + 0.30 * f64::from(c) / 1000.0 + 0.30 * f64::from(u8::from(f)) + 0.20 * f64::from(u8::from(n));
            prop_assert!((v - float).abs() < 1e-12);
        }

        #[test]
        fn containment_ignores_extra_exploration(
            agent in prop::collection::vec(prop::sample::select(Tool::ALL.to_vec()), 0..12),
            exemplar in prop::collection::vec(prop::sample::select(Tool::ALL.to_vec()), 0..6),
            extra in prop::collection::vec(prop::sample::select(Tool::ALL.to_vec()), 0..6),
        ) {
            let c = containment(&agent, &exemplar);
            prop_assert!((0.0..=1.0).contains(&c));
            let extra: Vec<Tool> = extra.into_iter().filter(|t| !exemplar.contains(t)).collect();
            let mut longer = agent.clone();
            longer.extend(extra);
            prop_assert_eq!(containment(&longer, &exemplar), c);
        }
    }
}
