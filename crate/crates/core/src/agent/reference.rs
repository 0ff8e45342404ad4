//! Scripted agents that close the loop without a model.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::{AgentBehavior, AgentContext, AgentStep, CallResult, PostmortemDraft};
use crate::experience::{Outcome, Postmortem};
use crate::scenario::{ConditionSource, ScenarioSpec, UNCLASSIFIED};
use crate::sim::{ResourceKey, ResourceKind};
use crate::tools::{Tier, Tool, ToolCall};

/// Ticks to wait after an unguarded fix so sustained conditions can settle.
pub const SETTLE_TICKS: u32 = 30;

/// Replays a fixed list of steps, then declares done.
#[derive(Debug, Clone)]
pub struct ScriptedAgent {
    name: String,
    steps: VecDeque<AgentStep>,
}

impl ScriptedAgent {
    pub fn new(name: &str, steps: Vec<AgentStep>) -> Self {
        ScriptedAgent { name: name.to_string(), steps: steps.into() }
    }
}

impl AgentBehavior for ScriptedAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn next_step(&mut self, _ctx: &AgentContext<'_>) -> AgentStep {
        self.steps.pop_front().unwrap_or(AgentStep::Done)
    }
}

fn first_deployment(scenario: &ScenarioSpec) -> Option<ResourceKey> {
    if scenario.injector.target.kind == ResourceKind::Deployment {
        return Some(scenario.injector.target.clone());
    }
    scenario
        .fixed_when
        .iter()
        .filter_map(|c| match &c.source {
            ConditionSource::K8s { key, .. } if key.kind == ResourceKind::Deployment => Some(key.clone()),
            _ => None,
        })
        .next()
}

fn read_call(tool: Tool, resource: Option<&ResourceKey>, deployment: Option<&ResourceKey>) -> ToolCall {
    match tool {
        Tool::GetResource => ToolCall::new(tool, resource.or(deployment).cloned()),
        Tool::ReadLogs => ToolCall::new(tool, deployment.cloned()),
        _ => ToolCall::new(tool, None),
    }
}

/// Reads in the listed order, a hypothesis just before the first mutation,
/// the fixes, a settle wait after an unguarded fix, then the postmortem.
fn plan(
    scenario: &ScenarioSpec,
    tools: &[Tool],
    fixes: &[ToolCall],
    draft: PostmortemDraft,
    deployment: Option<&ResourceKey>,
) -> VecDeque<AgentStep> {
    let resource = fixes.first().and_then(|c| c.target.clone()).or_else(|| Some(scenario.injector.target.clone()));
    let mut steps = VecDeque::new();
    let mut fixes: VecDeque<ToolCall> = fixes.iter().cloned().collect();
    let mut hypothesized = false;
    let mut last_tier = None;
    let hypothesis = |draft: &PostmortemDraft| AgentStep::Hypothesis {
        category: draft.primary_category.clone(),
        confidence: 0.9,
        note: String::new(),
    };
    for &tool in tools {
        if !tool.is_mutating() {
            steps.push_back(AgentStep::Call(read_call(tool, resource.as_ref(), deployment)));
            continue;
        }
        let Some(pos) = fixes.iter().position(|c| c.tool == tool) else { continue };
        if !hypothesized {
            steps.push_back(hypothesis(&draft));
            hypothesized = true;
        }
        let call = fixes.remove(pos).expect("position is in range");
        last_tier = Some(call.tier());
        steps.push_back(AgentStep::Call(call));
    }
    for call in fixes {
        if !hypothesized {
            steps.push_back(hypothesis(&draft));
            hypothesized = true;
        }
        last_tier = Some(call.tier());
        steps.push_back(AgentStep::Call(call));
    }
    if !hypothesized {
        steps.push_back(hypothesis(&draft));
    }
    if last_tier == Some(Tier::T3Approved) {
        steps.push_back(AgentStep::Wait(SETTLE_TICKS));
    }
    steps.push_back(AgentStep::Postmortem(draft));
    steps.push_back(AgentStep::Done);
    steps
}

fn narrative(scenario: &ScenarioSpec, category: &str, fixes: &[ToolCall]) -> String {
    let mut text = scenario.alert.clone();
    if !scenario.description.is_empty() {
        text.push('\n');
        text.push_str(&scenario.description);
    }
    text.push_str(&format!("\nroot cause: {category}"));
    for c in fixes {
        let target = c.target.as_ref().map(ToString::to_string).unwrap_or_default();
        let args = serde_json::to_string(&c.args).expect("args serialize");
        text.push_str(&format!("\nfix: {} {} {}", c.tool, target, args));
    }
    text
}

/// A fix that touches the same place as `call` without repairing it.
pub fn decoy(call: &ToolCall) -> ToolCall {
    let mut out = ToolCall::new(call.tool, call.target.clone());
    match call.tool {
        Tool::PatchSecret | Tool::PatchConfigmap => {
            for (k, v) in &call.args {
                out.args.insert(format!("{k}-old"), v.clone());
            }
        }
        Tool::SetFlag => {
            out.args.insert("state".into(), json!("on"));
        }
        Tool::Scale => out.tool = Tool::Restart,
        Tool::ApplyNetworkpolicy => {
            if let Some(t) = &mut out.target {
                t.name.push_str("-old");
            }
            out.args = call.args.clone();
        }
        _ => {
            out.tool = Tool::PatchDeployment;
            if out.target.as_ref().is_none_or(|t| t.kind != ResourceKind::Deployment) {
                out.target = Some(ResourceKey::deployment("default", "frontend"));
            }
            out.args.insert("annotations.investigated".into(), json!("true"));
        }
    }
    out
}

/// Knows the ground truth and replays the scenario's own fix.
#[derive(Debug, Clone)]
pub struct OracleAgent {
    steps: VecDeque<AgentStep>,
}

impl OracleAgent {
    pub fn new(scenario: &ScenarioSpec) -> Self {
        let truth = &scenario.ground_truth;
        let draft = PostmortemDraft {
            primary_category: truth.primary_category.clone(),
            secondary_categories: truth.secondary_categories.clone(),
            narrative: narrative(scenario, &truth.primary_category, &scenario.remediation),
        };
        let steps = plan(
            scenario,
            &scenario.expected_tools(),
            &scenario.remediation,
            draft,
            first_deployment(scenario).as_ref(),
        );
        OracleAgent { steps }
    }
}

impl AgentBehavior for OracleAgent {
    fn name(&self) -> &str {
        "oracle"
    }

    fn next_step(&mut self, ctx: &AgentContext<'_>) -> AgentStep {
        // A denied tier-3 fix is not retried; skip to the write-up.
        if ctx.observations.last().is_some_and(|o| o.result == CallResult::Denied) {
            while let Some(AgentStep::Call(_) | AgentStep::Wait(_)) = self.steps.front() {
                self.steps.pop_front();
            }
        }
        self.steps.pop_front().unwrap_or(AgentStep::Done)
    }
}

/// Does nothing, then files an unclassified postmortem once the budget is
/// nearly gone.
#[derive(Debug, Clone, Default)]
pub struct NullAgent {
    filed: bool,
}

impl AgentBehavior for NullAgent {
    fn name(&self) -> &str {
        "null"
    }

    fn next_step(&mut self, ctx: &AgentContext<'_>) -> AgentStep {
        if ctx.remaining_budget_s > 1 {
            return AgentStep::Wait((ctx.remaining_budget_s - 1).try_into().unwrap_or(u32::MAX));
        }
        if !self.filed {
            self.filed = true;
            return AgentStep::Postmortem(PostmortemDraft {
                primary_category: UNCLASSIFIED.to_string(),
                secondary_categories: Vec::new(),
                narrative: String::new(),
            });
        }
        AgentStep::Wait(1)
    }
}

/// The oracle, except that with probability `p_wrong` (drawn once per run)
/// it settles on a secondary category and applies a decoy fix.
#[derive(Debug, Clone)]
pub struct NoisyOracleAgent {
    inner: OracleAgent,
    pub wrong: bool,
}

impl NoisyOracleAgent {
    pub fn new(scenario: &ScenarioSpec, p_wrong: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let wrong = rng.gen_bool(p_wrong.clamp(0.0, 1.0));
        if !wrong {
            return NoisyOracleAgent { inner: OracleAgent::new(scenario), wrong };
        }
        let secondaries = &scenario.ground_truth.secondary_categories;
        let category = if secondaries.is_empty() {
            UNCLASSIFIED.to_string()
        } else {
            secondaries[rng.gen_range(0..secondaries.len())].clone()
        };
        let fixes: Vec<ToolCall> = scenario.remediation.iter().map(decoy).collect();
        let mut tools: Vec<Tool> = scenario.expected_tools().into_iter().filter(|t| !t.is_mutating()).collect();
        tools.extend(fixes.iter().map(|c| c.tool));
        let draft = PostmortemDraft {
            primary_category: category.clone(),
            secondary_categories: Vec::new(),
            narrative: narrative(scenario, &category, &fixes),
        };
        let steps = plan(scenario, &tools, &fixes, draft, first_deployment(scenario).as_ref());
        NoisyOracleAgent { inner: OracleAgent { steps }, wrong }
    }
}

impl AgentBehavior for NoisyOracleAgent {
    fn name(&self) -> &str {
        "noisy-oracle"
    }

    fn next_step(&mut self, ctx: &AgentContext<'_>) -> AgentStep {
        self.inner.next_step(ctx)
    }
}

/// Replays whatever the nearest resolved exemplar did, aimed at the
/// deployment that looks sick. Falls back to a noisy oracle when retrieval
/// came back empty.
#[derive(Debug, Clone)]
pub struct ImitatorAgent {
    scenario: ScenarioSpec,
    fallback: NoisyOracleAgent,
    state: ImitatorState,
}

#[derive(Debug, Clone)]
enum ImitatorState {
    Start,
    Probing(Box<Postmortem>),
    Replaying(VecDeque<AgentStep>),
    Fallback,
}

pub const IMITATOR_FALLBACK_P_WRONG: f64 = 0.4;

impl ImitatorAgent {
    pub fn new(scenario: &ScenarioSpec, seed: u64) -> Self {
        ImitatorAgent {
            scenario: scenario.clone(),
            fallback: NoisyOracleAgent::new(scenario, IMITATOR_FALLBACK_P_WRONG, seed),
            state: ImitatorState::Start,
        }
    }
}

/// The deployment a `list-pods` result points at: a non-running phase
/// first, then CPU throttling, then missing replicas.
pub fn suspect_from_pods(pods: &Value) -> Option<String> {
    let pods = pods.as_object()?;
    let rank = |p: &Value| -> Option<u8> {
        if p["phase"].as_str().is_some_and(|s| s != "Running") {
            Some(0)
        } else if p["cpu_throttled"].as_bool() == Some(true) {
            Some(1)
        } else if p["ready"].as_u64() < p["desired"].as_u64() || p["desired"].as_u64() == Some(0) {
            Some(2)
        } else {
            None
        }
    };
    pods.iter()
        .filter_map(|(name, p)| rank(p).map(|r| (r, name.clone())))
        .min()
        .map(|(_, name)| name)
}

impl ImitatorAgent {
    fn replay(&self, exemplar: &Postmortem, suspect: Option<&str>) -> VecDeque<AgentStep> {
        let suspect = suspect.map(|name| ResourceKey::deployment("default", name));
        let retarget = |c: &ToolCall| {
            let mut c = c.clone();
            if let (Some(t), Some(s)) = (&c.target, &suspect) {
                if t.kind == ResourceKind::Deployment {
                    c.target = Some(s.clone());
                }
            }
            c
        };
        let fixes: Vec<ToolCall> = exemplar.remediation.iter().map(retarget).collect();
        let tools: Vec<Tool> = exemplar.actions_taken.iter().copied().filter(|t| *t != Tool::ListPods).collect();
        let draft = PostmortemDraft {
            primary_category: exemplar.primary_category.clone(),
            secondary_categories: exemplar.secondary_categories.clone(),
            narrative: narrative(&self.scenario, &exemplar.primary_category, &fixes),
        };
        plan(&self.scenario, &tools, &fixes, draft, suspect.as_ref())
    }
}

impl AgentBehavior for ImitatorAgent {
    fn name(&self) -> &str {
        "imitator"
    }

    fn next_step(&mut self, ctx: &AgentContext<'_>) -> AgentStep {
        loop {
            match &mut self.state {
                ImitatorState::Start => {
                    let nearest = ctx.retrieved_exemplars.iter().find(|r| r.postmortem.outcome == Outcome::Resolved);
                    match nearest {
                        Some(r) => {
                            self.state = ImitatorState::Probing(Box::new(r.postmortem.clone()));
                            return AgentStep::Call(ToolCall::new(Tool::ListPods, None));
                        }
                        None => self.state = ImitatorState::Fallback,
                    }
                }
                ImitatorState::Probing(exemplar) => {
                    let suspect = ctx.observations.last().and_then(|o| match &o.result {
                        CallResult::Read { value } if o.call.tool == Tool::ListPods => suspect_from_pods(value),
                        _ => None,
                    });
                    let exemplar = exemplar.clone();
                    self.state = ImitatorState::Replaying(self.replay(&exemplar, suspect.as_deref()));
                }
                ImitatorState::Replaying(steps) => return steps.pop_front().unwrap_or(AgentStep::Done),
                ImitatorState::Fallback => return self.fallback.next_step(ctx),
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AgentKind {
    Oracle,
    Null,
    NoisyOracle { p_wrong: f64 },
    Imitator,
}

impl AgentKind {
    pub fn build(self, scenario: &ScenarioSpec, seed: u64) -> Box<dyn AgentBehavior> {
        match self {
            AgentKind::Oracle => Box::new(OracleAgent::new(scenario)),
            AgentKind::Null => Box::new(NullAgent::default()),
            AgentKind::NoisyOracle { p_wrong } => Box::new(NoisyOracleAgent::new(scenario, p_wrong, seed)),
            AgentKind::Imitator => Box::new(ImitatorAgent::new(scenario, seed)),
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AgentKind::Oracle => f.write_str("oracle"),
            AgentKind::Null => f.write_str("null"),
            AgentKind::NoisyOracle { p_wrong } => write!(f, "noisy-oracle:{p_wrong}"),
            AgentKind::Imitator => f.write_str("imitator"),
        }
    }
}

impl FromStr for AgentKind {
    type Err = String;

    /// `oracle`, `null`, `imitator`, or `noisy-oracle:<p_wrong>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "oracle" => Ok(AgentKind::Oracle),
            "null" => Ok(AgentKind::Null),
            "imitator" => Ok(AgentKind::Imitator),
            _ => {
                let p = s
                    .strip_prefix("noisy-oracle:")
                    .ok_or_else(|| format!("unknown agent `{s}`"))?
                    .parse::<f64>()
                    .map_err(|e| format!("noisy-oracle probability: {e}"))?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(format!("noisy-oracle probability {p} outside [0, 1]"));
                }
                Ok(AgentKind::NoisyOracle { p_wrong: p })
            }
        }
    }
}

impl serde::Serialize for AgentKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for AgentKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}
