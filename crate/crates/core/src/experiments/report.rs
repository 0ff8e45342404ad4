//! Manifest analysis and the plain-text report.

use std::fmt::Write;

use serde::Serialize;

use crate::runner::manifest::ManifestRow;
use crate::stats::{
    bias_audit, decide, pooled_compare, small_sample_report, summarize, welch_t, BiasAudit, DecisionOutcome,
    SampleSummary, SubsampleSpread, WelchResult,
};

pub const SPREAD_SIZES: [usize; 4] = [3, 5, 10, 20];
pub const SPREAD_TRIALS: usize = 4000;

/// A treatment arm (`tei…`) and its control (`control…`, same suffix).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ArmPair {
    pub label: String,
    pub treatment: String,
    pub control: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub scenario: String,
    pub pair: String,
    pub treatment: Option<SampleSummary>,
    pub control: Option<SampleSummary>,
    /// Absent when either arm has fewer than two runs.
    pub welch: Option<WelchResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub total_rows: usize,
    pub framework_errors: usize,
    pub pairs: Vec<ArmPair>,
    pub rows: Vec<ComparisonRow>,
    pub pooled: Vec<(String, Option<WelchResult>)>,
    pub decision: Option<DecisionOutcome>,
    pub bias: Vec<(String, BiasAudit)>,
    pub spread: Vec<(String, SampleSummary, Vec<SubsampleSpread>)>,
}

fn first_seen<'a>(it: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in it {
        if !out.iter().any(|o| o == s) {
            out.push(s.to_string());
        }
    }
    out
}

pub fn pair_arms(arms: &[String]) -> Vec<ArmPair> {
    arms.iter()
        .filter_map(|t| {
            let suffix = t.strip_prefix("tei")?;
            let control = format!("control{suffix}");
            arms.contains(&control).then(|| ArmPair {
                label: suffix.trim_start_matches('-').to_string(),
                treatment: t.clone(),
                control,
            })
        })
        .collect()
}

fn scores(rows: &[&ManifestRow], scenario: &str, arm: &str) -> Vec<f64> {
    rows.iter().filter(|r| r.scenario == scenario && r.arm == arm).map(|r| r.composite).collect()
}

/// Framework-error rows are counted and otherwise left out.
pub fn analyze(rows: &[ManifestRow]) -> Report {
    let clean: Vec<&ManifestRow> = rows.iter().filter(|r| !r.framework_error).collect();
    let scenarios = first_seen(clean.iter().map(|r| r.scenario.as_str()));
    let arms = first_seen(clean.iter().map(|r| r.arm.as_str()));
    let pairs = pair_arms(&arms);

    let mut out_rows = Vec::new();
    let mut pooled = Vec::new();
    let mut decision = None;
    for pair in &pairs {
        let mut raw = Vec::new();
        let mut tests = Vec::new();
        for s in &scenarios {
            let t = scores(&clean, s, &pair.treatment);
            let c = scores(&clean, s, &pair.control);
            if t.is_empty() && c.is_empty() {
                continue;
            }
            let (st, sc) = (summarize(&t).ok(), summarize(&c).ok());
            let welch = match (st, sc) {
                (Some(a), Some(b)) if a.n >= 2 && b.n >= 2 => Some(welch_t(&a, &b)),
                _ => None,
            };
            tests.extend(welch);
            out_rows.push(ComparisonRow { scenario: s.clone(), pair: pair.label.clone(), treatment: st, control: sc, welch });
            raw.push((t, c));
        }
        let enough = raw.iter().map(|(t, _)| t.len()).sum::<usize>() >= 2 && raw.iter().map(|(_, c)| c.len()).sum::<usize>() >= 2;
        let p = if enough { pooled_compare(&raw).ok() } else { None };
        if pairs.len() == 1 && tests.len() == 3 {
            decision = p.and_then(|p| decide(&tests, &p).ok());
        }
        pooled.push((pair.label.clone(), p));
    }

    let bias = pairs
        .iter()
        .filter(|p| {
            let arm = clean.iter().filter(|r| r.arm == p.treatment);
            arm.clone().any(|r| r.retrieval_used) && arm.clone().any(|r| !r.retrieval_used)
        })
        .map(|p| (p.label.clone(), bias_audit(rows, &p.treatment, &p.control)))
        .collect();

    let paired: Vec<&String> = pairs.iter().flat_map(|p| [&p.treatment, &p.control]).collect();
    let spread = arms
        .iter()
        .filter(|a| !paired.contains(a))
        .filter_map(|a| {
            let values: Vec<f64> = clean.iter().filter(|r| r.arm == *a).map(|r| r.composite).collect();
            let sizes: Vec<usize> = SPREAD_SIZES.iter().copied().filter(|&n| n < values.len()).collect();
            let population = summarize(&values).ok()?;
            let spread = small_sample_report(&values, &sizes, SPREAD_TRIALS, 0).ok()?;
            (!sizes.is_empty()).then(|| (a.clone(), population, spread))
        })
        .collect();

    Report {
        total_rows: rows.len(),
        framework_errors: rows.len() - clean.len(),
        pairs,
        rows: out_rows,
        pooled,
        decision,
        bias,
        spread,
    }
}

fn summary_cell(s: &Option<SampleSummary>) -> String {
    match s {
        Some(s) if s.n >= 2 => format!("{:.3} ± {:.3} (n={})", s.mean, s.sd, s.n),
        Some(s) => format!("{:.3} (n={})", s.mean, s.n),
        None => "-".into(),
    }
}

fn welch_cells(w: &Option<WelchResult>) -> String {
    match w {
        Some(w) => format!(
            "{:+.3} | {:+.2} | {:.1} | {:.4} | {}",
            w.delta,
            w.t,
            w.df,
            w.p_two_tailed,
            if w.significant { "yes" } else { "no" }
        ),
        None => "n<2, no statistics | | | |".into(),
    }
}

pub fn render_report(title: &str, report: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# {title}\n");
    let _ = writeln!(s, "runs: {} ({} framework-error, excluded)\n", report.total_rows, report.framework_errors);
    if !report.rows.is_empty() {
        let _ = writeln!(s, "| scenario | tier | treatment | control | delta | t | df | p | significant |");
        let _ = writeln!(s, "|---|---|---|---|---|---|---|---|---|");
        for r in &report.rows {
            let tier = if r.pair.is_empty() { "-" } else { &r.pair };
            let _ = writeln!(
                s,
                "| {} | {tier} | {} | {} | {} |",
                r.scenario,
                summary_cell(&r.treatment),
                summary_cell(&r.control),
                welch_cells(&r.welch)
            );
        }
        let _ = writeln!(s);
    }
    if !report.pooled.is_empty() {
        let _ = writeln!(s, "| pooled | delta | t | df | p | significant |");
        let _ = writeln!(s, "|---|---|---|---|---|---|");
        for (label, w) in &report.pooled {
            let tier = if label.is_empty() { "all" } else { label };
            let _ = writeln!(s, "| {tier} | {} |", welch_cells(w));
        }
        let _ = writeln!(s);
    }
    if let Some(d) = &report.decision {
        let _ = writeln!(s, "decision: {:?}\n", d.verdict);
    }
    for (label, b) in &report.bias {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:+.3}"));
        let _ = writeln!(
            s,
            "selection audit {}: observational {} (used {}, unused {}), controlled {}, gap {} (se {})",
            if label.is_empty() { "all" } else { label },
            f(b.observational_delta),
            b.n_used,
            b.n_unused,
            f(b.controlled_delta),
            f(b.gap),
            b.gap_se.map_or("-".to_string(), |v| format!("{v:.3}")),
        );
    }
    for (arm, population, spread) in &report.spread {
        let _ = writeln!(s, "subsample spread for {arm}, population {}:", summary_cell(&Some(*population)));
        for sp in spread {
            let _ = writeln!(s, "  n={:<3} se(mean)={:.4} over {} draws", sp.size, sp.se_of_mean, sp.trials);
        }
    }
    s
}
