use super::{parse_scenario, ScenarioSpec, Vocabulary};

pub const ANCHOR_IDS: [&str; 9] = [
    "secret-missing-key-advocate",
    "secret-wrong-password-advocate",
    "cpu-limit-throttling-advocate",
    "liveness-probe-always-fails-advocate",
    "readiness-probe-misconfigured-advocate",
    "replicas-zero-advocate",
    "env-var-missing-advocate",
    "image-pull-failure-advocate",
    "oom-advocate-api",
];

macro_rules! docs {
    ($dir:literal: $($file:literal),* $(,)?) => {
        &[$(include_str!(concat!("../../data/scenarios/", $dir, "/", $file, ".yaml"))),*]
    };
}

const ANCHOR_DOCS: &[&str] = docs!("anchor":
    "secret-missing-key-advocate",
    "secret-wrong-password-advocate",
    "cpu-limit-throttling-advocate",
    "liveness-probe-always-fails-advocate",
    "readiness-probe-misconfigured-advocate",
    "replicas-zero-advocate",
    "env-var-missing-advocate",
    "image-pull-failure-advocate",
    "oom-advocate-api",
);

const COVERAGE_DOCS: &[&str] = docs!("coverage":
    "serviceaccount-missing",
    "network-policy-block",
    "flagd-cart-failure",
    "flagd-payment-failure",
    "flagd-recommendation-cache-failure",
    "flagd-email-memory-leak",
    "flagd-kafka-queue-problems",
    "replica-loss-amplification",
);

fn parse_all(docs: &[&str], vocab: &Vocabulary) -> Vec<ScenarioSpec> {
    docs.iter()
        .map(|d| parse_scenario(d, vocab).expect("shipped scenarios parse"))
        .collect()
}

pub fn anchor_scenarios(vocab: &Vocabulary) -> Vec<ScenarioSpec> {
    parse_all(ANCHOR_DOCS, vocab)
}

/// Best-effort analogs of further fault families; not taken verbatim from any
/// published inventory.
pub fn coverage_scenarios(vocab: &Vocabulary) -> Vec<ScenarioSpec> {
    parse_all(COVERAGE_DOCS, vocab)
}

pub fn builtin_scenarios(vocab: &Vocabulary) -> Vec<ScenarioSpec> {
    let mut all = anchor_scenarios(vocab);
    all.extend(coverage_scenarios(vocab));
    all
}
