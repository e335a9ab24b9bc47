//! Swarm configuration and declarative scenario mixes.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use url::Url;

use crate::error::{Result, SwarmError};

pub const DEFAULT_MIX: &str = include_str!("../mixes/default.toml");

/// Variables every virtual user starts with.
pub const BUILTIN_VARS: [&str; 4] = ["user", "account", "username", "password"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Step {
    /// Report row; steps sharing a name share a row.
    pub name: String,
    pub method: String,
    /// Path under the target, or an absolute URL; may contain `{var}`.
    pub path: String,
    #[serde(default)]
    pub bearer: Option<String>,
    #[serde(default)]
    pub body: Option<Value>,
    /// Variable name to JSON pointer into the response; a `*` segment picks
    /// a random array element.
    #[serde(default)]
    pub capture: BTreeMap<String, String>,
    /// Accepted statuses; any 2xx when empty.
    #[serde(default)]
    pub expect: Vec<u16>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub weight: u32,
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mix {
    #[serde(default = "default_think")]
    pub think_time_ms: [u64; 2],
    /// Distinct accounts; virtual users share them round-robin.
    #[serde(default = "default_accounts")]
    pub accounts: u32,
    /// Run once per account before users start; captures become account
    /// variables visible to every scenario.
    #[serde(default)]
    pub setup: Vec<Step>,
    pub scenario: Vec<Scenario>,
}

fn default_think() -> [u64; 2] {
    [200, 1000]
}

fn default_accounts() -> u32 {
    50
}

impl Mix {
    pub fn parse(text: &str) -> Result<Mix> {
        toml::from_str(text).map_err(|e| SwarmError::ConfigInvalid(format!("mix: {e}")))
    }

    pub fn default_mix() -> Mix {
        Self::parse(DEFAULT_MIX).expect("built-in mix parses")
    }

    /// Report rows in first-appearance order.
    pub fn route_names(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.setup
            .iter()
            .chain(self.scenario.iter().flat_map(|s| &s.steps))
            .filter(|s| seen.insert(s.name.clone()))
            .map(|s| s.name.clone())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(SwarmError::ConfigInvalid(m));
        if self.scenario.is_empty() {
            return invalid("mix has no scenarios".into());
        }
        if self.accounts == 0 {
            return invalid("accounts must be at least 1".into());
        }
        if self.think_time_ms[0] > self.think_time_ms[1] || self.think_time_ms[1] == 0 {
            return invalid("think_time_ms must be [min, max] with max > 0".into());
        }
        let mut defined: BTreeSet<String> = BUILTIN_VARS.iter().map(|s| s.to_string()).collect();
        for step in &self.setup {
            check_step(step, &defined)?;
            defined.extend(step.capture.keys().cloned());
        }
        for sc in &self.scenario {
            if sc.weight == 0 {
                return invalid(format!("scenario {} has weight 0", sc.name));
            }
            if sc.steps.is_empty() {
                return invalid(format!("scenario {} has no steps", sc.name));
            }
            let mut vars = defined.clone();
            for step in &sc.steps {
                check_step(step, &vars)?;
                vars.extend(step.capture.keys().cloned());
            }
        }
        Ok(())
    }
}

fn check_step(step: &Step, vars: &BTreeSet<String>) -> Result<()> {
    let invalid = |m: String| Err(SwarmError::ConfigInvalid(format!("step {}: {m}", step.name)));
    if !matches!(step.method.as_str(), "GET" | "POST" | "PUT" | "DELETE") {
        return invalid(format!("unsupported method {}", step.method));
    }
    let mut used = placeholders(&step.path);
    if let Some(b) = &step.bearer {
        used.extend(placeholders(b));
    }
    if let Some(body) = &step.body {
        visit_strings(body, &mut |s| used.extend(placeholders(s)));
    }
    for v in used {
        if !vars.contains(&v) {
            return invalid(format!("variable {{{v}}} is not defined before this step"));
        }
    }
    for (var, ptr) in &step.capture {
        if !ptr.is_empty() && !ptr.starts_with('/') {
            return invalid(format!("capture {var}: pointer must start with '/'"));
        }
    }
    Ok(())
}

fn visit_strings(v: &Value, f: &mut impl FnMut(&str)) {
    match v {
        Value::String(s) => f(s),
        Value::Array(a) => a.iter().for_each(|x| visit_strings(x, f)),
        Value::Object(m) => m.values().for_each(|x| visit_strings(x, f)),
        _ => {}
    }
}

fn is_var_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

/// `{name}` occurrences; other braces are literal.
pub fn placeholders(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = s;
    while let Some(i) = rest.find('{') {
        let after = &rest[i + 1..];
        match after.find('}') {
            Some(j) if j > 0 && after[..j].chars().all(is_var_char) => {
                out.push(after[..j].to_string());
                rest = &after[j + 1..];
            }
            _ => rest = after,
        }
    }
    out
}

/// Substitutes `{name}`; `None` if a variable is missing.
pub fn render(s: &str, vars: &BTreeMap<String, String>) -> Option<String> {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(i) = rest.find('{') {
        out.push_str(&rest[..i]);
        let after = &rest[i + 1..];
        match after.find('}') {
            Some(j) if j > 0 && after[..j].chars().all(is_var_char) => {
                out.push_str(vars.get(&after[..j])?);
                rest = &after[j + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Some(out)
}

pub fn render_value(v: &Value, vars: &BTreeMap<String, String>) -> Option<Value> {
    Some(match v {
        Value::String(s) => Value::String(render(s, vars)?),
        Value::Array(a) => Value::Array(a.iter().map(|x| render_value(x, vars)).collect::<Option<_>>()?),
        Value::Object(m) => Value::Object(
            m.iter()
                .map(|(k, x)| Some((k.clone(), render_value(x, vars)?)))
                .collect::<Option<_>>()?,
        ),
        other => other.clone(),
    })
}

#[derive(Debug, Clone)]
pub struct SwarmConfig {
    pub target_url: Url,
    pub user_count: u32,
    /// Users started per second.
    pub spawn_rate: f64,
    pub mix: Mix,
    pub duration: Duration,
    pub seed: u64,
    /// Cap on requests in flight at once, across all users.
    pub max_open_requests: usize,
    pub request_timeout: Duration,
}

impl SwarmConfig {
    pub fn new(target_url: Url, user_count: u32, spawn_rate: f64, duration: Duration, seed: u64) -> Self {
        Self {
            target_url,
            user_count,
            spawn_rate,
            mix: Mix::default_mix(),
            duration,
            seed,
            max_open_requests: 512,
            request_timeout: Duration::from_secs(30),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |m: &str| Err(SwarmError::ConfigInvalid(m.into()));
        if self.user_count == 0 {
            return invalid("user_count must be at least 1");
        }
        if !(self.spawn_rate.is_finite() && self.spawn_rate > 0.0) {
            return invalid("spawn_rate must be positive");
        }
        if self.duration.is_zero() {
            return invalid("duration must be positive");
        }
        if self.max_open_requests == 0 {
            return invalid("max_open_requests must be at least 1");
        }
        if !matches!(self.target_url.scheme(), "http" | "https") {
            return invalid("target must be an http(s) URL");
        }
        self.mix.validate()
    }
}
