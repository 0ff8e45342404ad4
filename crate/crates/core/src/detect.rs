//! Condition evaluation with sustained windows.
//!
//! A tracker counts consecutive ticks on which its condition held. A
//! condition with `sustained_for_s = W` passes once that count reaches
//! `max(W, 1)`; any tick on which it does not hold resets the count.
//!
//! Unevaluable observations (metrics backend down, ordered comparison against
//! an absent field) count as holding only for a `fixed_when` condition marked
//! `skip_if_unevaluable`. A `regressed_when` condition never fires on data it
//! cannot see.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::scenario::{Check, Condition, ConditionSource};
use crate::sim::{ClusterState, MetricSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditionStatus {
    Pass,
    Fail,
    Unevaluable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Fixed,
    Regressed,
}

/// Instantaneous observation of a condition's source.
pub fn observe(cond: &Condition, state: &ClusterState, sample: Option<&MetricSample>) -> (ConditionStatus, Option<Value>) {
    let observed = match &cond.source {
        ConditionSource::K8s { key, field_path } => state.read_field(key, field_path),
        ConditionSource::Metric { name } => {
            if !state.metrics_enabled() {
                return (ConditionStatus::Unevaluable, None);
            }
            match sample.and_then(|s| s.get(name)) {
                Some(v) => Some(Value::from(v)),
                None => return (ConditionStatus::Unevaluable, None),
            }
        }
    };
    let status = match cond.check(observed.as_ref()) {
        Check::Holds => ConditionStatus::Pass,
        Check::Fails => ConditionStatus::Fail,
        Check::Unevaluable => ConditionStatus::Unevaluable,
    };
    (status, observed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionTracker {
    pub condition: Condition,
    pub role: Role,
    pub consecutive_pass_ticks: u32,
    pub last_status: ConditionStatus,
    pub last_observed: Option<Value>,
}

impl ConditionTracker {
    pub fn new(condition: Condition, role: Role) -> Self {
        ConditionTracker {
            condition,
            role,
            consecutive_pass_ticks: 0,
            last_status: ConditionStatus::Fail,
            last_observed: None,
        }
    }

    pub fn passing(&self) -> bool {
        self.last_status == ConditionStatus::Pass
    }
}

/// One tick of a tracker. The returned status is never `Unevaluable`; see
/// [`observe`] for the raw reading.
pub fn evaluate_condition(
    tracker: &ConditionTracker,
    state: &ClusterState,
    sample: Option<&MetricSample>,
) -> (ConditionTracker, ConditionStatus) {
    let (raw, observed) = observe(&tracker.condition, state, sample);
    let holds = match raw {
        ConditionStatus::Pass => true,
        ConditionStatus::Fail => false,
        ConditionStatus::Unevaluable => tracker.role == Role::Fixed && tracker.condition.skip_if_unevaluable,
    };
    let mut next = tracker.clone();
    next.consecutive_pass_ticks = if holds { tracker.consecutive_pass_ticks.saturating_add(1) } else { 0 };
    let window = tracker.condition.sustained_for_s.max(1);
    next.last_status = if next.consecutive_pass_ticks >= window {
        ConditionStatus::Pass
    } else {
        ConditionStatus::Fail
    };
    next.last_observed = observed;
    let status = next.last_status;
    (next, status)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTrigger {
    pub condition: Condition,
    pub observed_value: Option<Value>,
    pub at_tick: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorVerdict {
    pub all_fixed: bool,
    pub any_regressed: bool,
    pub regression_trigger: Option<Condition>,
}

/// Both tracker sets for one run, plus the regression latch.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioDetectors {
    pub fixed: Vec<ConditionTracker>,
    pub regressed: Vec<ConditionTracker>,
    pub trigger: Option<RegressionTrigger>,
}

impl ScenarioDetectors {
    pub fn new(fixed_when: &[Condition], regressed_when: &[Condition]) -> Self {
        ScenarioDetectors {
            fixed: fixed_when.iter().cloned().map(|c| ConditionTracker::new(c, Role::Fixed)).collect(),
            regressed: regressed_when.iter().cloned().map(|c| ConditionTracker::new(c, Role::Regressed)).collect(),
            trigger: None,
        }
    }

    pub fn verdict(&self) -> DetectorVerdict {
        DetectorVerdict {
            all_fixed: !self.fixed.is_empty() && self.fixed.iter().all(ConditionTracker::passing),
            any_regressed: self.trigger.is_some(),
            regression_trigger: self.trigger.as_ref().map(|t| t.condition.clone()),
        }
    }
}

pub fn evaluate_scenario_conditions(
    detectors: &ScenarioDetectors,
    state: &ClusterState,
    sample: Option<&MetricSample>,
) -> (ScenarioDetectors, DetectorVerdict) {
    let step = |ts: &[ConditionTracker]| -> Vec<ConditionTracker> {
        ts.iter().map(|t| evaluate_condition(t, state, sample).0).collect()
    };
    let mut next = ScenarioDetectors {
        fixed: step(&detectors.fixed),
        regressed: step(&detectors.regressed),
        trigger: detectors.trigger.clone(),
    };
    if next.trigger.is_none() {
        if let Some(t) = next.regressed.iter().find(|t| t.passing()) {
            next.trigger = Some(RegressionTrigger {
                condition: t.condition.clone(),
                observed_value: t.last_observed.clone(),
                at_tick: state.now(),
            });
        }
    }
    let verdict = next.verdict();
    (next, verdict)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{Mutation, ResourceKey};
    use proptest::prelude::*;
    use serde_json::json;

    fn cond(s: &str) -> Condition {
        s.parse().unwrap()
    }

    fn sample(error_rate: f64) -> MetricSample {
        MetricSample { tick: 0, error_rate, p99_latency_ms: 50.0, availability: 1.0 }
    }

    #[test]
    fn window_resets_on_dip() {
        let state = ClusterState::baseline();
        let mut t = ConditionTracker::new(cond("metric:error_rate < 0.01 sustained_for_s=30"), Role::Fixed);
        for _ in 0..29 {
            let (n, st) = evaluate_condition(&t, &state, Some(&sample(0.0)));
            assert_eq!(st, ConditionStatus::Fail);
            t = n;
        }
        assert_eq!(t.consecutive_pass_ticks, 29);
        let (t, st) = evaluate_condition(&t, &state, Some(&sample(0.5)));
        assert_eq!(st, ConditionStatus::Fail);
        assert_eq!(t.consecutive_pass_ticks, 0);
        // one more clean tick would have passed without the dip
        let mut t2 = ConditionTracker::new(cond("metric:error_rate < 0.01 sustained_for_s=30"), Role::Fixed);
        for i in 0..30 {
            let (n, st) = evaluate_condition(&t2, &state, Some(&sample(0.0)));
            assert_eq!(st == ConditionStatus::Pass, i == 29);
            t2 = n;
        }
    }

    #[test]
    fn metrics_disabled_with_skip_passes() {
        let state = ClusterState::baseline().with_metrics_enabled(false);
        let t = ConditionTracker::new(cond("metric:error_rate < 0.01 skip_if_unevaluable"), Role::Fixed);
        assert_eq!(evaluate_condition(&t, &state, Some(&sample(0.9))).1, ConditionStatus::Pass);
        let t = ConditionTracker::new(cond("metric:error_rate < 0.01"), Role::Fixed);
        assert_eq!(evaluate_condition(&t, &state, Some(&sample(0.0))).1, ConditionStatus::Fail);
        assert_eq!(observe(&t.condition, &state, None).0, ConditionStatus::Unevaluable);
        // a regression detector never fires on data it cannot see
        let t = ConditionTracker::new(cond("metric:error_rate > 0.5 skip_if_unevaluable"), Role::Regressed);
        assert_eq!(evaluate_condition(&t, &state, Some(&sample(0.9))).1, ConditionStatus::Fail);
    }

    #[test]
    fn replicas_zero_fails_k8s_condition() {
        let api = ResourceKey::deployment("default", "api");
        let state = ClusterState::baseline().apply_mutation(&api, &Mutation::patch([("replicas_desired", json!(0))])).unwrap();
        let t = ConditionTracker::new(cond("k8s:Deployment/default/api:replicas_desired >= 1"), Role::Fixed);
        assert_eq!(evaluate_condition(&t, &state, None).1, ConditionStatus::Fail);
    }

    #[test]
    fn ordered_against_absent_is_unevaluable() {
        let state = ClusterState::baseline();
        let c = cond("k8s:Deployment/default/api:cpu_limit_millicores > 10");
        assert_eq!(observe(&c, &state, None).0, ConditionStatus::Pass);
        let c = cond("k8s:Deployment/default/ledger:cpu_limit_millicores > 10");
        assert_eq!(observe(&c, &state, None).0, ConditionStatus::Unevaluable);
    }

    #[test]
    fn regression_latches_and_records_first_trigger() {
        let state = ClusterState::baseline();
        let d = ScenarioDetectors::new(
            &[cond("metric:error_rate < 0.01")],
            &[cond("metric:error_rate > 0.3 sustained_for_s=2"), cond("metric:error_rate > 0.2")],
        );
        let series = [0.0, 0.35, 0.35, 0.0, 0.0];
        let mut d = d;
        let mut history = Vec::new();
        for e in series {
            let (n, v) = evaluate_scenario_conditions(&d, &state, Some(&sample(e)));
            d = n;
            history.push(v);
        }
        assert!(!history[0].any_regressed);
        assert!(history[1..].iter().all(|v| v.any_regressed));
        // the instantaneous condition fires at the first bad tick, before the windowed one
        assert_eq!(history[4].regression_trigger, Some(cond("metric:error_rate > 0.2")));
        assert!(history[4].all_fixed);
    }

    #[test]
    fn empty_regressed_never_fires() {
        let state = ClusterState::baseline();
        let mut d = ScenarioDetectors::new(&[cond("metric:error_rate < 0.01")], &[]);
        for e in [0.0, 1.0, 0.5] {
            let (n, v) = evaluate_scenario_conditions(&d, &state, Some(&sample(e)));
            assert!(!v.any_regressed);
            d = n;
        }
    }

    #[test]
    fn evaluation_leaves_state_untouched() {
        let state = ClusterState::baseline();
        let before = state.clone();
        let d = ScenarioDetectors::new(&[cond("k8s:Deployment/default/api:status.phase == Running")], &[]);
        let (_, v) = evaluate_scenario_conditions(&d, &state, None);
        assert!(v.all_fixed);
        assert_eq!(state, before);
    }

    proptest! {
        #[test]
        fn no_transient_blip_passes(window in 0u32..12, flicker in proptest::collection::vec(any::<bool>(), 1..60)) {
            let state = ClusterState::baseline();
            let c = cond(&format!("metric:error_rate < 0.5 sustained_for_s={window}"));
            let mut t = ConditionTracker::new(c, Role::Fixed);
            let mut run = 0u32;
            for good in flicker {
                run = if good { run + 1 } else { 0 };
                let (n, st) = evaluate_condition(&t, &state, Some(&sample(if good { 0.0 } else { 1.0 })));
                prop_assert_eq!(st == ConditionStatus::Pass, run >= window.max(1));
                t = n;
            }
        }

        #[test]
        fn regression_is_monotone(series in proptest::collection::vec(0.0f64..1.0, 1..50)) {
            let state = ClusterState::baseline();
            let mut d = ScenarioDetectors::new(&[cond("metric:error_rate < 0.1")], &[cond("metric:error_rate > 0.7 sustained_for_s=2")]);
            let mut was = false;
            for e in series {
                let (n, v) = evaluate_scenario_conditions(&d, &state, Some(&sample(e)));
                prop_assert!(!was || v.any_regressed);
                was = v.any_regressed;
                d = n;
            }
        }
    }
}
