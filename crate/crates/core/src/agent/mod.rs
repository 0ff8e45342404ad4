//! The agent-facing protocol and the loop that drives an agent through one
//! scenario.
//!
//! An agent sees an [`AgentContext`] each cycle and answers with one
//! [`AgentStep`]. Exemplars are retrieved before the loop starts and are
//! fixed for the whole run. Reads go straight to the cluster, tier-2 calls
//! go through the guard, tier-3 calls go through the approver. Every call
//! costs simulated time, so an agent that never finishes runs out of budget.

mod approver;
pub mod reference;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use approver::{ApproverConfig, Approver, AuditEntry, Decision, Verdict};

use crate::detect::{evaluate_scenario_conditions, DetectorVerdict, ScenarioDetectors};
use crate::experience::{HypothesisRecord, Retrieved};
use crate::guard::{guard_mutation, Driver, GuardError, GuardOutcome, GuardState, RevertReason};
use crate::scenario::{ScenarioSpec, UNCLASSIFIED};
use crate::sim::{ClusterState, MetricSample};
use crate::tools::{apply_changes, mutations_for, read, Tier, Tool, ToolCall};

pub const READ_COST_TICKS: u32 = 2;

/// The cluster plus the run's own detectors; every tick, whoever takes it,
/// is seen by the detectors.
#[derive(Debug, Clone)]
pub struct RunEnv {
    pub state: ClusterState,
    pub detectors: ScenarioDetectors,
    pub last_sample: Option<MetricSample>,
}

impl RunEnv {
    pub fn new(state: ClusterState, scenario: &ScenarioSpec) -> Self {
        RunEnv {
            state,
            detectors: ScenarioDetectors::new(&scenario.fixed_when, &scenario.regressed_when),
            last_sample: None,
        }
    }

    pub fn verdict(&self) -> DetectorVerdict {
        self.detectors.verdict()
    }

    pub fn advance(&mut self, ticks: u32) {
        for _ in 0..ticks {
            self.step();
        }
    }
}

impl Driver for RunEnv {
    fn state(&self) -> &ClusterState {
        &self.state
    }

    fn replace_state(&mut self, state: ClusterState) {
        self.state = state;
    }

    fn step(&mut self) -> MetricSample {
        let (next, sample) = self.state.tick();
        self.state = next;
        self.detectors = evaluate_scenario_conditions(&self.detectors, &self.state, Some(&sample)).0;
        self.last_sample = Some(sample);
        sample
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostmortemDraft {
    pub primary_category: String,
    #[serde(default)]
    pub secondary_categories: Vec<String>,
    #[serde(default)]
    pub narrative: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AgentStep {
    Call(ToolCall),
    Hypothesis { category: String, confidence: f64, note: String },
    Postmortem(PostmortemDraft),
    Wait(u32),
    Done,
    /// The agent gave up on its own; scored like any other finish.
    Abort(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "kebab-case")]
pub enum CallResult {
    Read { value: Value },
    Applied,
    Reverted { reason: RevertReason },
    Paused,
    Denied,
    Rejected { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub tick: u64,
    pub call: ToolCall,
    #[serde(flatten)]
    pub result: CallResult,
}

/// What the harness hands the agent every cycle.
#[derive(Debug, Clone, Copy)]
pub struct AgentContext<'a> {
    pub scenario_id: &'a str,
    pub alert: &'a str,
    pub retrieved_exemplars: &'a [Retrieved],
    pub vocabulary: &'a [String],
    pub last_revert_reason: Option<&'a RevertReason>,
    pub observations: &'a [Observation],
    pub remaining_budget_s: u64,
}

pub trait AgentBehavior {
    fn name(&self) -> &str;
    fn next_step(&mut self, ctx: &AgentContext<'_>) -> AgentStep;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EndReason {
    AgentDone,
    BudgetExhausted,
    GuardPaused,
    FrameworkError,
}

impl EndReason {
    pub fn as_str(self) -> &'static str {
        match self {
            EndReason::AgentDone => "agent-done",
            EndReason::BudgetExhausted => "budget-exhausted",
            EndReason::GuardPaused => "guard-paused",
            EndReason::FrameworkError => "framework-error",
        }
    }
}

impl std::fmt::Display for EndReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EndReason {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [EndReason::AgentDone, EndReason::BudgetExhausted, EndReason::GuardPaused, EndReason::FrameworkError]
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| format!("unknown end reason `{s}`"))
    }
}

/// One transcript record; the transcript file holds one per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum TranscriptEvent {
    Start { tick: u64, scenario: String, agent: String, retrieved: Vec<String> },
    Call { tick: u64, route: Route, call: ToolCall, #[serde(flatten)] result: CallResult },
    Audit { entry: AuditEntry },
    Hypothesis { record: HypothesisRecord },
    Postmortem { tick: u64, draft: PostmortemDraft, synthesized: bool },
    Wait { tick: u64, ticks: u32 },
    Abort { tick: u64, message: String },
    FrameworkError { tick: u64, message: String },
    End { tick: u64, reason: EndReason },
}

/// Which path a call took to the cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Read,
    Guard,
    Approver,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentTranscript {
    pub agent: String,
    pub start_tick: u64,
    pub end_tick: u64,
    pub events: Vec<TranscriptEvent>,
    pub calls: Vec<Observation>,
    pub hypotheses: Vec<HypothesisRecord>,
    pub postmortem: PostmortemDraft,
    pub no_postmortem: bool,
    pub end_reason: EndReason,
    pub framework_error: Option<String>,
}

impl AgentTranscript {
    /// Every tool the agent invoked, in order, including failed calls.
    pub fn actions_taken(&self) -> Vec<Tool> {
        self.calls.iter().map(|o| o.call.tool).collect()
    }

    /// Mutating calls that actually landed and stayed.
    pub fn remediation(&self) -> Vec<ToolCall> {
        self.calls
            .iter()
            .filter(|o| o.call.tool.is_mutating() && o.result == CallResult::Applied)
            .map(|o| o.call.clone())
            .collect()
    }

    /// True when some call was issued again, unchanged, right after the
    /// approver denied it.
    pub fn repeated_denied_call(&self) -> bool {
        self.calls.windows(2).any(|w| w[0].result == CallResult::Denied && w[1].call == w[0].call)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("events serialize"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopConfig {
    pub budget_s: u32,
    pub watch_window_s: u32,
    pub approver: ApproverConfig,
}

impl LoopConfig {
    pub fn for_scenario(scenario: &ScenarioSpec) -> Self {
        LoopConfig {
            budget_s: scenario.time_budget_s,
            watch_window_s: crate::guard::DEFAULT_WATCH_WINDOW_S,
            approver: ApproverConfig::default(),
        }
    }
}

/// Drives `agent` until it finishes, the budget runs out or the guard
/// pauses. The injected fault must already be in `env`.
pub fn run_agent_loop(
    agent: &mut dyn AgentBehavior,
    scenario: &ScenarioSpec,
    env: &mut RunEnv,
    retrieved: &[Retrieved],
    vocabulary: &[String],
    cfg: &LoopConfig,
) -> AgentTranscript {
    let start = env.state.now();
    let deadline = start + u64::from(cfg.budget_s);
    let mut guard = GuardState::new(cfg.watch_window_s);
    let mut approver = Approver::new(cfg.approver);
    let mut events = vec![TranscriptEvent::Start {
        tick: start,
        scenario: scenario.id.clone(),
        agent: agent.name().to_string(),
        retrieved: retrieved.iter().map(|r| r.postmortem.id.clone()).collect(),
    }];
    let mut calls: Vec<Observation> = Vec::new();
    let mut hypotheses = Vec::new();
    let mut postmortem: Option<PostmortemDraft> = None;
    let mut framework_error = None;

    let end_reason = loop {
        let now = env.state.now();
        if now >= deadline {
            break EndReason::BudgetExhausted;
        }
        let step = {
            let ctx = AgentContext {
                scenario_id: &scenario.id,
                alert: &scenario.alert,
                retrieved_exemplars: retrieved,
                vocabulary,
                last_revert_reason: guard.read_last_revert_reason(),
                observations: &calls,
                remaining_budget_s: deadline - now,
            };
            agent.next_step(&ctx)
        };
        match step {
            AgentStep::Call(call) => {
                let (route, result) = match call.tier() {
                    Tier::T1Read => {
                        env.advance(READ_COST_TICKS);
                        let result = match read(&call, &env.state, env.last_sample.as_ref()) {
                            Ok(value) => CallResult::Read { value },
                            Err(e) => CallResult::Rejected { error: e.to_string() },
                        };
                        (Route::Read, result)
                    }
                    Tier::T2Mutate => {
                        let result = match guard_mutation(env, &mut guard, &call, &scenario.regressed_when) {
                            Ok(GuardOutcome::Applied) => CallResult::Applied,
                            Ok(GuardOutcome::Reverted(reason)) => CallResult::Reverted { reason },
                            Ok(GuardOutcome::Paused) => CallResult::Paused,
                            Err(GuardError::Snapshot(e)) => {
                                framework_error = Some(format!("snapshot failed: {e}"));
                                CallResult::Rejected { error: e.to_string() }
                            }
                            Err(e) => {
                                env.advance(1);
                                CallResult::Rejected { error: e.to_string() }
                            }
                        };
                        (Route::Guard, result)
                    }
                    Tier::T3Approved => {
                        let decision = approver.approve(&call, env.state.now());
                        events.push(TranscriptEvent::Audit { entry: decision.audit.clone() });
                        env.advance(decision.latency_s.max(1));
                        let result = if !decision.approved() {
                            CallResult::Denied
                        } else {
                            match mutations_for(&call, &env.state)
                                .map_err(|e| e.to_string())
                                .and_then(|changes| apply_changes(&env.state, &changes).map_err(|e| e.to_string()))
                            {
                                Ok(next) => {
                                    env.state = next;
                                    CallResult::Applied
                                }
                                Err(error) => CallResult::Rejected { error },
                            }
                        };
                        (Route::Approver, result)
                    }
                };
                let obs = Observation { tick: env.state.now(), call, result };
                events.push(TranscriptEvent::Call {
                    tick: obs.tick,
                    route,
                    call: obs.call.clone(),
                    result: obs.result.clone(),
                });
                let paused = obs.result == CallResult::Paused;
                calls.push(obs);
                if framework_error.is_some() {
                    events.push(TranscriptEvent::FrameworkError {
                        tick: env.state.now(),
                        message: framework_error.clone().unwrap_or_default(),
                    });
                    break EndReason::FrameworkError;
                }
                if paused {
                    break EndReason::GuardPaused;
                }
            }
            AgentStep::Hypothesis { category, confidence, note } => {
                env.advance(1);
                let record = HypothesisRecord { at_tick: env.state.now(), category, confidence: confidence.clamp(0.0, 1.0), note };
                events.push(TranscriptEvent::Hypothesis { record: record.clone() });
                hypotheses.push(record);
            }
            AgentStep::Postmortem(draft) => {
                env.advance(1);
                events.push(TranscriptEvent::Postmortem { tick: env.state.now(), draft: draft.clone(), synthesized: false });
                postmortem = Some(draft);
            }
            AgentStep::Wait(ticks) => {
                let ticks = ticks.max(1).min((deadline - now).try_into().unwrap_or(u32::MAX));
                env.advance(ticks);
                events.push(TranscriptEvent::Wait { tick: env.state.now(), ticks });
            }
            AgentStep::Done => break EndReason::AgentDone,
            AgentStep::Abort(message) => {
                events.push(TranscriptEvent::Abort { tick: env.state.now(), message });
                break EndReason::AgentDone;
            }
        }
    };

    let no_postmortem = postmortem.is_none();
    let postmortem = postmortem.unwrap_or_else(|| {
        let draft = PostmortemDraft {
            primary_category: UNCLASSIFIED.to_string(),
            secondary_categories: Vec::new(),
            narrative: String::new(),
        };
        events.push(TranscriptEvent::Postmortem { tick: env.state.now(), draft: draft.clone(), synthesized: true });
        draft
    });
    let end_tick = env.state.now();
    events.push(TranscriptEvent::End { tick: end_tick, reason: end_reason });
    AgentTranscript {
        agent: agent.name().to_string(),
        start_tick: start,
        end_tick,
        events,
        calls,
        hypotheses,
        postmortem,
        no_postmortem,
        end_reason,
        framework_error,
    }
}
