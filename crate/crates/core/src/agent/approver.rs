//! Stand-in for the human who signs off tier-3 calls.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::sim::ResourceKey;
use crate::tools::{Tool, ToolCall};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproverConfig {
    pub delay_s: u32,
    pub deny_rate: f64,
    pub seed: u64,
}

impl Default for ApproverConfig {
    fn default() -> Self {
        ApproverConfig { delay_s: 10, deny_rate: 0.0, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Approved,
    Denied,
}

/// What a human approver leaves in the audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub tick: u64,
    pub tool: Tool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<ResourceKey>,
    pub decision: Verdict,
    pub latency_s: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub verdict: Verdict,
    pub latency_s: u32,
    pub audit: AuditEntry,
}

impl Decision {
    pub fn approved(&self) -> bool {
        self.verdict == Verdict::Approved
    }
}

/// Seeded approver. The n-th decision depends only on the seed and n.
#[derive(Debug, Clone)]
pub struct Approver {
    cfg: ApproverConfig,
    rng: ChaCha8Rng,
}

impl Approver {
    pub fn new(cfg: ApproverConfig) -> Self {
        Approver { cfg, rng: ChaCha8Rng::seed_from_u64(cfg.seed) }
    }

    pub fn approve(&mut self, call: &ToolCall, tick: u64) -> Decision {
        // Always draw so the sequence does not depend on deny_rate edge cases.
        let draw: f64 = self.rng.gen();
        let verdict = if draw < self.cfg.deny_rate.clamp(0.0, 1.0) { Verdict::Denied } else { Verdict::Approved };
        let audit = AuditEntry {
            tick,
            tool: call.tool,
            target: call.target.clone(),
            decision: verdict,
            latency_s: self.cfg.delay_s,
        };
        Decision { verdict, latency_s: self.cfg.delay_s, audit }
    }
}
