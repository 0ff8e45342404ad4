//! Snapshot, watch and auto-revert around single-resource mutations.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::detect::{evaluate_condition, ConditionTracker, Role};
use crate::scenario::Condition;
use crate::sim::{ClusterState, MetricSample, ResourceKey, SimError};
use crate::tools::{apply_changes, mutations_for, touched_keys, Tier, ToolCall, ToolError};

pub const DEFAULT_REVERT_CAP: u32 = 2;
pub const DEFAULT_WATCH_WINDOW_S: u32 = 30;

/// Whatever owns the cluster and its clock. The run loop implements this so
/// its own detectors see every tick the guard spends watching.
pub trait Driver {
    fn state(&self) -> &ClusterState;
    fn replace_state(&mut self, state: ClusterState);
    /// Advances one tick and returns the sample taken.
    fn step(&mut self) -> MetricSample;
}

/// A bare driver with no detectors attached.
#[derive(Debug, Clone)]
pub struct Standalone {
    pub state: ClusterState,
}

impl Driver for Standalone {
    fn state(&self) -> &ClusterState {
        &self.state
    }

    fn replace_state(&mut self, state: ClusterState) {
        self.state = state;
    }

    fn step(&mut self) -> MetricSample {
        let (next, sample) = self.state.tick();
        self.state = next;
        sample
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevertReason {
    pub triggered_condition: Condition,
    pub observed_value: Option<Value>,
    pub at_tick: u64,
    pub reverted_keys: Vec<ResourceKey>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuardState {
    pub reverts_so_far: u32,
    pub cap: u32,
    pub watch_window_s: u32,
    pub last_revert_reason: Option<RevertReason>,
}

impl Default for GuardState {
    fn default() -> Self {
        GuardState::new(DEFAULT_WATCH_WINDOW_S)
    }
}

impl GuardState {
    pub fn new(watch_window_s: u32) -> Self {
        GuardState {
            reverts_so_far: 0,
            cap: DEFAULT_REVERT_CAP,
            watch_window_s: watch_window_s.max(1),
            last_revert_reason: None,
        }
    }

    pub fn read_last_revert_reason(&self) -> Option<&RevertReason> {
        self.last_revert_reason.as_ref()
    }

    pub fn exhausted(&self) -> bool {
        self.reverts_so_far >= self.cap
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "lowercase")]
pub enum GuardOutcome {
    Applied,
    Reverted(RevertReason),
    Paused,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GuardError {
    #[error("{0} is not a tier-2 tool")]
    NotTier2(crate::tools::Tool),
    /// The call itself is malformed; the agent sees this as a failed call.
    #[error(transparent)]
    Tool(#[from] ToolError),
    /// Harness plumbing failed; the run becomes a framework error.
    #[error("snapshot failed: {0}")]
    Snapshot(SimError),
}

pub fn guard_mutation<D: Driver>(
    driver: &mut D,
    guard: &mut GuardState,
    call: &ToolCall,
    regressed_when: &[Condition],
) -> Result<GuardOutcome, GuardError> {
    if call.tier() != Tier::T2Mutate {
        return Err(GuardError::NotTier2(call.tool));
    }
    if guard.exhausted() {
        return Ok(GuardOutcome::Paused);
    }
    let changes = mutations_for(call, driver.state())?;
    let keys = touched_keys(&changes);
    let snap = driver.state().snapshot(&keys).map_err(GuardError::Snapshot)?;
    let applied = apply_changes(driver.state(), &changes).map_err(|e| ToolError::BadArgs {
        tool: call.tool,
        reason: e.to_string(),
    })?;
    driver.replace_state(applied);

    let mut trackers: Vec<ConditionTracker> =
        regressed_when.iter().cloned().map(|c| ConditionTracker::new(c, Role::Regressed)).collect();
    for _ in 0..guard.watch_window_s {
        let sample = driver.step();
        for t in trackers.iter_mut() {
            *t = evaluate_condition(t, driver.state(), Some(&sample)).0;
        }
        if let Some(t) = trackers.iter().find(|t| t.passing()) {
            let reason = RevertReason {
                triggered_condition: t.condition.clone(),
                observed_value: t.last_observed.clone(),
                at_tick: driver.state().now(),
                reverted_keys: keys.iter().cloned().collect(),
            };
            let restored = driver.state().restore(&snap);
            driver.replace_state(restored);
            guard.reverts_so_far += 1;
            guard.last_revert_reason = Some(reason.clone());
            return Ok(GuardOutcome::Reverted(reason));
        }
    }
    Ok(GuardOutcome::Applied)
}
