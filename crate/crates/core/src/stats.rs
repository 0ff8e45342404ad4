//! Welch tests, pooled comparisons, the decision matrix, and the two
//! methodological audits.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::runner::manifest::ManifestRow;

pub const ALPHA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("no values")]
    Empty,
    #[error("expected {expected} scenario results, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("subsample size {size} exceeds population {population}")]
    SubsampleTooLarge { size: usize, population: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

impl SampleSummary {
    pub fn new(n: usize, mean: f64, sd: f64) -> Self {
        SampleSummary { n, mean, sd }
    }
}

pub fn summarize(values: &[f64]) -> Result<SampleSummary, StatsError> {
    let n = values.len();
    if n == 0 {
        return Err(StatsError::Empty);
    }
    // Keeps a constant sample's sd exactly zero despite rounding in the mean.
    if values.iter().all(|v| *v == values[0]) {
        return Ok(SampleSummary { n, mean: values[0], sd: 0.0 });
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = if n < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    Ok(SampleSummary { n, mean, sd })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub delta: f64,
    pub t: f64,
    pub df: f64,
    pub p_two_tailed: f64,
    pub significant: bool,
}

/// ln Γ(x) for x > 0, Lanczos approximation (g = 7, 9 terms).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta, modified Lentz.
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = f64::from(m);
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta I_x(a, b).
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// P(|T| ≥ |t|) for Student's t with `df` degrees of freedom.
pub fn t_two_tailed_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    reg_inc_beta(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

/// Welch's unequal-variance t-test of `a` (treatment) against `b`.
pub fn welch_t(a: &SampleSummary, b: &SampleSummary) -> WelchResult {
    let delta = a.mean - b.mean;
    let va = a.sd * a.sd / a.n as f64;
    let vb = b.sd * b.sd / b.n as f64;
    let se2 = va + vb;
    if se2 == 0.0 {
        let df = (a.n + b.n).saturating_sub(2).max(1) as f64;
        if delta == 0.0 {
            return WelchResult { delta, t: 0.0, df, p_two_tailed: 1.0, significant: false };
        }
        log::warn!("both arms have zero variance and different means; reporting p = 0");
        return WelchResult { delta, t: f64::INFINITY.copysign(delta), df, p_two_tailed: 0.0, significant: true };
    }
    let t = delta / se2.sqrt();
    let mut denom = 0.0;
    if va > 0.0 {
        denom += va * va / (a.n as f64 - 1.0);
    }
    if vb > 0.0 {
        denom += vb * vb / (b.n as f64 - 1.0);
    }
    let df = se2 * se2 / denom;
    let p = t_two_tailed_p(t, df);
    WelchResult { delta, t, df, p_two_tailed: p, significant: p < ALPHA }
}

/// Concatenates each arm's raw values across scenarios, then runs Welch.
pub fn pooled_compare(per_scenario: &[(Vec<f64>, Vec<f64>)]) -> Result<WelchResult, StatsError> {
    let a: Vec<f64> = per_scenario.iter().flat_map(|(a, _)| a.iter().copied()).collect();
    let b: Vec<f64> = per_scenario.iter().flat_map(|(_, b)| b.iter().copied()).collect();
    Ok(welch_t(&summarize(&a)?, &summarize(&b)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Continue,
    ShipLimited,
    Pivot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionOutcome {
    pub verdict: Verdict,
    pub per_scenario: Vec<WelchResult>,
    pub pooled: WelchResult,
}

pub fn significant_positive(r: &WelchResult) -> bool {
    r.p_two_tailed < ALPHA && r.delta > 0.0
}

pub fn decide(per_scenario: &[WelchResult], pooled: &WelchResult) -> Result<DecisionOutcome, StatsError> {
    if per_scenario.len() != 3 {
        return Err(StatsError::Arity { expected: 3, got: per_scenario.len() });
    }
    let wins = per_scenario.iter().filter(|r| significant_positive(r)).count();
    let verdict = if wins >= 2 {
        Verdict::Continue
    } else if wins == 0 && pooled.delta <= 0.0 {
        Verdict::Pivot
    } else {
        Verdict::ShipLimited
    };
    Ok(DecisionOutcome { verdict, per_scenario: per_scenario.to_vec(), pooled: *pooled })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasAudit {
    pub observational_delta: Option<f64>,
    pub controlled_delta: Option<f64>,
    pub gap: Option<f64>,
    /// Standard error of `gap`, treating the stratum shares as fixed.
    pub gap_se: Option<f64>,
    pub n_used: usize,
    pub n_unused: usize,
    pub n_control: usize,
}

/// Compares the naive "retrieved vs not" contrast inside the treatment arm
/// with the randomized treatment-vs-control contrast. Framework-error rows
/// are ignored.
pub fn bias_audit(rows: &[ManifestRow], treatment_arm: &str, control_arm: &str) -> BiasAudit {
    let scores = |arm: &str, keep: &dyn Fn(&ManifestRow) -> bool| -> Vec<f64> {
        rows.iter().filter(|r| r.arm == arm && !r.framework_error && keep(r)).map(|r| r.composite).collect()
    };
    let used = scores(treatment_arm, &|r| r.retrieval_used);
    let unused = scores(treatment_arm, &|r| !r.retrieval_used);
    let treat = scores(treatment_arm, &|_| true);
    let control = scores(control_arm, &|_| true);
    let su = summarize(&used).ok();
    let sn = summarize(&unused).ok();
    let st = summarize(&treat).ok();
    let sc = summarize(&control).ok();
    let observational = su.zip(sn).map(|(u, n)| u.mean - n.mean);
    let controlled = st.zip(sc).map(|(t, c)| t.mean - c.mean);
    let gap = observational.zip(controlled).map(|(o, c)| o - c);
    let gap_se = match (su, sn, sc) {
        (Some(u), Some(n), Some(c)) => {
            let p = u.n as f64 / (u.n + n.n) as f64;
            let var = (1.0 - p).powi(2) * u.sd.powi(2) / u.n as f64
                + (2.0 - p).powi(2) * n.sd.powi(2) / n.n as f64
                + c.sd.powi(2) / c.n as f64;
            Some(var.sqrt())
        }
        _ => None,
    };
    BiasAudit {
        observational_delta: observational,
        controlled_delta: controlled,
        gap,
        gap_se,
        n_used: used.len(),
        n_unused: unused.len(),
        n_control: control.len(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsampleSpread {
    pub size: usize,
    pub trials: usize,
    /// Empirical standard deviation of the subsample mean.
    pub se_of_mean: f64,
}

/// Draws `trials` subsamples (without replacement) of each size and reports
/// how much their means scatter.
pub fn small_sample_report(
    values: &[f64],
    subsample_sizes: &[usize],
    trials: usize,
    seed: u64,
) -> Result<Vec<SubsampleSpread>, StatsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    subsample_sizes
        .iter()
        .map(|&size| {
            if size > values.len() {
                return Err(StatsError::SubsampleTooLarge { size, population: values.len() });
            }
            if size == 0 {
                return Err(StatsError::Empty);
            }
            let means: Vec<f64> = (0..trials)
                .map(|_| sample(&mut rng, values.len(), size).iter().map(|i| values[i]).sum::<f64>() / size as f64)
                .collect();
            let se = summarize(&means).map(|s| s.sd).unwrap_or(0.0);
            Ok(SubsampleSpread { size, trials, se_of_mean: se })
        })
        .collect()
}
