//! Single-line condition grammar.
//!
//! ```text
//! condition  := source SP comparator [SP value] *(SP option)
//! source     := "k8s:" Kind "/" namespace "/" name ":" field_path
//!             | "metric:" metric_name
//! comparator := "==" | "!=" | "<" | "<=" | ">" | ">=" | "exists" | "absent"
//! value      := number | "true" | "false" | bare_word | '"' escaped '"'
//! option     := "sustained_for_s=" uint | "skip_if_unevaluable"
//! ```
//!
//! `exists` and `absent` take no value; every other comparator requires one.
//! Metric names are `error_rate`, `p99_latency_ms` and `availability`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::sim::ResourceKey;

pub const METRIC_NAMES: [&str; 3] = ["error_rate", "p99_latency_ms", "availability"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConditionSource {
    K8s { key: ResourceKey, field_path: String },
    Metric { name: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparator {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Exists,
    Absent,
}

impl Comparator {
    const TABLE: [(Comparator, &'static str); 8] = [
        (Comparator::Eq, "=="),
        (Comparator::Ne, "!="),
        (Comparator::Lt, "<"),
        (Comparator::Le, "<="),
        (Comparator::Gt, ">"),
        (Comparator::Ge, ">="),
        (Comparator::Exists, "exists"),
        (Comparator::Absent, "absent"),
    ];

    pub fn symbol(self) -> &'static str {
        Self::TABLE.iter().find(|(c, _)| *c == self).map(|(_, s)| *s).unwrap()
    }

    pub fn takes_value(self) -> bool {
        !matches!(self, Comparator::Exists | Comparator::Absent)
    }

    fn is_ordered(self) -> bool {
        matches!(self, Comparator::Lt | Comparator::Le | Comparator::Gt | Comparator::Ge)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Scalar {
    Bool(bool),
    Number(f64),
    Text(String),
}

impl Scalar {
    fn parse_token(tok: &str) -> Scalar {
        match tok {
            "true" => return Scalar::Bool(true),
            "false" => return Scalar::Bool(false),
            _ => {}
        }
        if tok.starts_with(|c: char| c.is_ascii_digit() || c == '-' || c == '+' || c == '.') {
            if let Ok(n) = tok.parse::<f64>() {
                if n.is_finite() {
                    return Scalar::Number(n);
                }
            }
        }
        Scalar::Text(tok.to_string())
    }

    fn needs_quotes(s: &str) -> bool {
        s.is_empty()
            || s.chars().any(|c| c.is_whitespace() || c == '"' || c == '\\')
            || !matches!(Scalar::parse_token(s), Scalar::Text(_))
            || s.starts_with("sustained_for_s=")
            || s == "skip_if_unevaluable"
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Bool(b) => write!(f, "{b}"),
            Scalar::Number(n) => write!(f, "{n}"),
            Scalar::Text(s) if Scalar::needs_quotes(s) => {
                f.write_str("\"")?;
                for c in s.chars() {
                    if c == '"' || c == '\\' {
                        f.write_str("\\")?;
                    }
                    write!(f, "{c}")?;
                }
                f.write_str("\"")
            }
            Scalar::Text(s) => f.write_str(s),
        }
    }
}

/// Result of checking a comparator against an observed value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Check {
    Holds,
    Fails,
    Unevaluable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub source: ConditionSource,
    pub comparator: Comparator,
    pub value: Option<Scalar>,
    pub sustained_for_s: u32,
    pub skip_if_unevaluable: bool,
}

impl Condition {
    /// Compares an observed value; `None` means the field or series is absent.
    pub fn check(&self, observed: Option<&Value>) -> Check {
        let bool_check = |b: bool| if b { Check::Holds } else { Check::Fails };
        match self.comparator {
            Comparator::Exists => return bool_check(observed.is_some()),
            Comparator::Absent => return bool_check(observed.is_none()),
            _ => {}
        }
        let (Some(observed), Some(expected)) = (observed, self.value.as_ref()) else {
            return Check::Unevaluable;
        };
        if self.comparator.is_ordered() {
            let (Some(a), Scalar::Number(b)) = (observed.as_f64(), expected) else {
                return Check::Unevaluable;
            };
            return bool_check(match self.comparator {
                Comparator::Lt => a < *b,
                Comparator::Le => a <= *b,
                Comparator::Gt => a > *b,
                Comparator::Ge => a >= *b,
                _ => unreachable!(),
            });
        }
        let equal = match (observed, expected) {
            (Value::Number(n), Scalar::Number(b)) => n.as_f64() == Some(*b),
            (Value::Bool(a), Scalar::Bool(b)) => a == b,
            (Value::String(a), Scalar::Text(b)) => a == b,
            // a numeric string compared with a number, e.g. configmap data
            (Value::String(a), Scalar::Number(b)) => a.parse::<f64>().ok() == Some(*b),
            _ => false,
        };
        bool_check(if self.comparator == Comparator::Eq { equal } else { !equal })
    }

    pub fn resource_key(&self) -> Option<&ResourceKey> {
        match &self.source {
            ConditionSource::K8s { key, .. } => Some(key),
            ConditionSource::Metric { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("condition `{input}`: {reason}")]
pub struct ConditionParseError {
    pub input: String,
    pub reason: String,
}

fn tokenize(s: &str) -> Result<Vec<(String, bool)>, String> {
    let mut out = Vec::new();
    let mut chars = s.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
            continue;
        }
        if c == '"' {
            chars.next();
            let mut tok = String::new();
            loop {
                match chars.next() {
                    None => return Err("unterminated quoted value".into()),
                    Some('"') => break,
                    Some('\\') => tok.push(chars.next().ok_or("dangling escape")?),
                    Some(ch) => tok.push(ch),
                }
            }
            out.push((tok, true));
        } else {
            let mut tok = String::new();
            while let Some(&ch) = chars.peek() {
                if ch.is_whitespace() {
                    break;
                }
                tok.push(ch);
                chars.next();
            }
            out.push((tok, false));
        }
    }
    Ok(out)
}

fn parse_source(tok: &str) -> Result<ConditionSource, String> {
    if let Some(rest) = tok.strip_prefix("k8s:") {
        let (key, field_path) = rest
            .split_once(':')
            .ok_or("k8s source needs `<Kind>/<ns>/<name>:<field_path>`")?;
        if field_path.is_empty() || field_path.split('.').any(str::is_empty) {
            return Err(format!("malformed field path `{field_path}`"));
        }
        let key = key.parse::<ResourceKey>().map_err(|e| e.to_string())?;
        Ok(ConditionSource::K8s { key, field_path: field_path.to_string() })
    } else if let Some(name) = tok.strip_prefix("metric:") {
        if !METRIC_NAMES.contains(&name) {
            return Err(format!("unknown metric `{name}`"));
        }
        Ok(ConditionSource::Metric { name: name.to_string() })
    } else {
        Err(format!("unknown source `{tok}`"))
    }
}

impl FromStr for Condition {
    type Err = ConditionParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let fail = |reason: String| ConditionParseError { input: s.to_string(), reason };
        let tokens = tokenize(s).map_err(fail)?;
        let mut it = tokens.into_iter();
        let (src, _) = it.next().ok_or_else(|| fail("empty condition".into()))?;
        let source = parse_source(&src).map_err(fail)?;
        let (cmp, quoted) = it.next().ok_or_else(|| fail("missing comparator".into()))?;
        let comparator = Comparator::TABLE
            .iter()
            .find(|(_, sym)| *sym == cmp && !quoted)
            .map(|(c, _)| *c)
            .ok_or_else(|| fail(format!("unknown comparator `{cmp}`")))?;

        let mut rest: Vec<(String, bool)> = it.collect();
        let mut value = None;
        let is_option = |(t, q): &(String, bool)| !q && (t == "skip_if_unevaluable" || t.starts_with("sustained_for_s="));
        if let Some(first) = rest.first() {
            if !is_option(first) {
                let (tok, quoted) = rest.remove(0);
                value = Some(if quoted { Scalar::Text(tok) } else { Scalar::parse_token(&tok) });
            }
        }
        match (comparator.takes_value(), &value) {
            (true, None) => return Err(fail(format!("`{}` needs a value", comparator.symbol()))),
            (false, Some(_)) => return Err(fail(format!("`{}` takes no value", comparator.symbol()))),
            _ => {}
        }

        let mut sustained_for_s = None;
        let mut skip_if_unevaluable = false;
        for opt in &rest {
            if !is_option(opt) {
                return Err(fail(format!("unexpected token `{}`", opt.0)));
            }
            if opt.0 == "skip_if_unevaluable" {
                if skip_if_unevaluable {
                    return Err(fail("duplicate skip_if_unevaluable".into()));
                }
                skip_if_unevaluable = true;
            } else {
                let n = opt.0["sustained_for_s=".len()..]
                    .parse::<u32>()
                    .map_err(|_| fail(format!("bad window `{}`", opt.0)))?;
                if sustained_for_s.replace(n).is_some() {
                    return Err(fail("duplicate sustained_for_s".into()));
                }
            }
        }
        Ok(Condition {
            source,
            comparator,
            value,
            sustained_for_s: sustained_for_s.unwrap_or(0),
            skip_if_unevaluable,
        })
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.source {
            ConditionSource::K8s { key, field_path } => write!(f, "k8s:{key}:{field_path}")?,
            ConditionSource::Metric { name } => write!(f, "metric:{name}")?,
        }
        write!(f, " {}", self.comparator.symbol())?;
        if let Some(v) = &self.value {
            write!(f, " {v}")?;
        }
        if self.sustained_for_s > 0 {
            write!(f, " sustained_for_s={}", self.sustained_for_s)?;
        }
        if self.skip_if_unevaluable {
            f.write_str(" skip_if_unevaluable")?;
        }
        Ok(())
    }
}

impl Serialize for Condition {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Condition {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
