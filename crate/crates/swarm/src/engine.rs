//! Virtual users: each runs weighted scenarios with seeded think-time jitter
//! until the deadline, then finishes the iteration it is in. Requests in
//! flight are capped by a shared semaphore; latency is measured from the
//! moment a user decides to send, so queueing for a slot counts.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use futures::StreamExt;
use gridhall_core::exec::Exec;
use parking_lot::Mutex;
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tokio::sync::Semaphore;
use tokio::time::Instant;
use url::Url;

use crate::config::{render, render_value, Step, SwarmConfig};
use crate::error::{Result, SwarmError};
use crate::report::{summarize, LoadReport, Sample};
use crate::stub::{Stub, StubStats};
use crate::transport::{Request, Transport};

type Vars = BTreeMap<String, String>;

struct Compiled {
    route: u32,
    method: &'static str,
    step: Step,
}

struct Shared {
    cfg: SwarmConfig,
    transport: Transport,
    setup: Vec<Compiled>,
    scenarios: Vec<Vec<Compiled>>,
    weights: WeightedIndex<u32>,
    samples: Mutex<Vec<Sample>>,
    script_errors: AtomicU64,
    users: Gauge,
    open: Gauge,
    slots: Semaphore,
}

#[derive(Default)]
struct Gauge {
    now: AtomicU32,
    peak: AtomicU32,
}

impl Gauge {
    fn up(&self) {
        let n = self.now.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(n, Ordering::SeqCst);
    }

    fn down(&self) {
        self.now.fetch_sub(1, Ordering::SeqCst);
    }

    fn peak(&self) -> u32 {
        self.peak.load(Ordering::SeqCst)
    }
}

enum StepResult {
    Ok,
    Failed,
    ScriptError,
}

fn method(m: &str) -> &'static str {
    match m {
        "GET" => "GET",
        "POST" => "POST",
        "PUT" => "PUT",
        _ => "DELETE",
    }
}

/// Absolute URLs pass through; paths are appended to the target.
pub fn resolve(target: &Url, path: &str) -> Option<Url> {
    if path.starts_with("http://") || path.starts_with("https://") {
        return Url::parse(path).ok();
    }
    let base = target.as_str().trim_end_matches('/');
    let sep = if path.starts_with('/') { "" } else { "/" };
    Url::parse(&format!("{base}{sep}{path}")).ok()
}

/// JSON pointer lookup where a `*` segment picks a random array element.
pub fn capture(v: &Value, pointer: &str, rng: &mut impl Rng) -> Option<String> {
    let mut cur = v;
    for raw in pointer.split('/').skip(1) {
        let seg = raw.replace("~1", "/").replace("~0", "~");
        cur = match cur {
            Value::Array(a) if seg == "*" => {
                if a.is_empty() {
                    return None;
                }
                &a[rng.gen_range(0..a.len())]
            }
            Value::Array(a) => a.get(seg.parse::<usize>().ok()?)?,
            Value::Object(m) => m.get(&seg)?,
            _ => return None,
        };
    }
    match cur {
        Value::String(s) => Some(s.clone()),
        Value::Null => None,
        other => Some(other.to_string()),
    }
}

impl Shared {
    async fn step(&self, c: &Compiled, vars: &mut Vars, rng: &mut ChaCha8Rng) -> StepResult {
        let rendered = (|| {
            let url = resolve(&self.cfg.target_url, &render(&c.step.path, vars)?)?;
            let bearer = match &c.step.bearer {
                Some(b) => Some(render(b, vars)?),
                None => None,
            };
            let body = match &c.step.body {
                Some(b) => Some(render_value(b, vars)?),
                None => None,
            };
            Some(Request {
                method: c.method,
                url,
                bearer,
                body,
            })
        })();
        let Some(req) = rendered else {
            return StepResult::ScriptError;
        };

        let started = Instant::now();
        let permit = self.slots.acquire().await.expect("semaphore open");
        self.open.up();
        let resp = tokio::time::timeout(self.cfg.request_timeout, self.transport.send(req)).await;
        self.open.down();
        drop(permit);
        let latency_us = started.elapsed().as_micros() as u64;

        let resp = match resp {
            Ok(Ok(r)) => Some(r),
            Ok(Err(e)) => {
                tracing::debug!("{}: {e}", c.step.name);
                None
            }
            Err(_) => None,
        };
        let ok = resp.as_ref().is_some_and(|r| {
            if c.step.expect.is_empty() {
                (200..300).contains(&r.status)
            } else {
                c.step.expect.contains(&r.status)
            }
        });
        self.samples.lock().push(Sample {
            route: c.route,
            latency_us,
            ok,
        });
        if !ok {
            return StepResult::Failed;
        }
        if !c.step.capture.is_empty() {
            let resp = resp.expect("ok implies a response");
            let Ok(json) = serde_json::from_slice::<Value>(&resp.body) else {
                return StepResult::ScriptError;
            };
            for (var, ptr) in &c.step.capture {
                match capture(&json, ptr, rng) {
                    Some(v) => {
                        vars.insert(var.clone(), v);
                    }
                    None => return StepResult::ScriptError,
                }
            }
        }
        StepResult::Ok
    }

    async fn think(&self, rng: &mut ChaCha8Rng) {
        let [lo, hi] = self.cfg.mix.think_time_ms;
        tokio::time::sleep(Duration::from_millis(rng.gen_range(lo..=hi))).await;
    }

    fn base_vars(&self, user: u32) -> Vars {
        let account = user % self.cfg.mix.accounts;
        BTreeMap::from([
            ("user".to_string(), user.to_string()),
            ("account".to_string(), account.to_string()),
            ("username".to_string(), format!("swarm_{account}")),
            ("password".to_string(), format!("swarm-pass-{account}")),
        ])
    }

    fn rng(&self, salt: u64, index: u32) -> ChaCha8Rng {
        let mixed = self.cfg.seed
            ^ salt.wrapping_mul(0xD1B5_4A32_D192_ED03)
            ^ (u64::from(index) + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        ChaCha8Rng::seed_from_u64(mixed)
    }

    /// Runs the setup steps for one account; returns its captures.
    async fn setup_account(&self, account: u32) -> Vars {
        let mut vars = self.base_vars(account);
        let mut rng = self.rng(1, account);
        for c in &self.setup {
            match self.step(c, &mut vars, &mut rng).await {
                StepResult::Ok => {}
                StepResult::Failed => break,
                StepResult::ScriptError => {
                    self.script_errors.fetch_add(1, Ordering::SeqCst);
                    break;
                }
            }
        }
        vars
    }

    async fn user(self: Arc<Self>, index: u32, account_vars: Arc<Vec<Vars>>, deadline: Instant) {
        self.users.up();
        let mut rng = self.rng(2, index);
        let mut base = account_vars[(index % self.cfg.mix.accounts) as usize].clone();
        base.extend(self.base_vars(index));
        self.think(&mut rng).await;
        // Iterations start only before the deadline; one in progress
        // finishes, so every flow in the report is complete.
        while Instant::now() < deadline {
            let scenario = &self.scenarios[self.weights.sample(&mut rng)];
            let mut vars = base.clone();
            for c in scenario {
                match self.step(c, &mut vars, &mut rng).await {
                    StepResult::Ok => {}
                    StepResult::Failed => break,
                    StepResult::ScriptError => {
                        self.script_errors.fetch_add(1, Ordering::SeqCst);
                        break;
                    }
                }
                self.think(&mut rng).await;
            }
        }
        self.users.down();
    }
}

async fn preflight(target: &Url) -> Result<()> {
    let host = target
        .host_str()
        .ok_or_else(|| SwarmError::ConfigInvalid("target has no host".into()))?;
    let port = target.port_or_known_default().unwrap_or(80);
    match tokio::time::timeout(
        Duration::from_secs(5),
        tokio::net::TcpStream::connect((host, port)),
    )
    .await
    {
        Ok(Ok(_)) => Ok(()),
        Ok(Err(e)) => Err(SwarmError::TargetUnreachable(format!("{host}:{port}: {e}"))),
        Err(_) => Err(SwarmError::TargetUnreachable(format!("{host}:{port}: timed out"))),
    }
}

pub async fn run_swarm(cfg: SwarmConfig, transport: Transport) -> Result<LoadReport> {
    cfg.validate()?;
    if matches!(transport, Transport::Http(_)) {
        preflight(&cfg.target_url).await?;
    }
    let names = cfg.mix.route_names();
    let route_of = |s: &Step| names.iter().position(|n| *n == s.name).expect("named route") as u32;
    let compile = |s: &Step| Compiled {
        route: route_of(s),
        method: method(&s.method),
        step: s.clone(),
    };
    let shared = Arc::new(Shared {
        setup: cfg.mix.setup.iter().map(compile).collect(),
        scenarios: cfg
            .mix
            .scenario
            .iter()
            .map(|sc| sc.steps.iter().map(compile).collect())
            .collect(),
        weights: WeightedIndex::new(cfg.mix.scenario.iter().map(|s| s.weight)).expect("validated weights"),
        samples: Mutex::new(Vec::new()),
        script_errors: AtomicU64::new(0),
        users: Gauge::default(),
        open: Gauge::default(),
        slots: Semaphore::new(cfg.max_open_requests),
        transport,
        cfg,
    });
    let cfg = &shared.cfg;

    let started = Instant::now();
    let accounts: Vec<Vars> = futures::stream::iter(0..cfg.mix.accounts)
        .map(|a| {
            let shared = shared.clone();
            async move { shared.setup_account(a).await }
        })
        .buffered(16)
        .collect()
        .await;
    let accounts = Arc::new(accounts);

    let users_start = Instant::now();
    let deadline = users_start + cfg.duration;
    let mut handles = Vec::with_capacity(cfg.user_count as usize);
    for i in 0..cfg.user_count {
        let at = users_start + Duration::from_secs_f64(f64::from(i) / cfg.spawn_rate);
        if at >= deadline {
            break;
        }
        tokio::time::sleep_until(at).await;
        handles.push(tokio::spawn(shared.clone().user(i, accounts.clone(), deadline)));
    }
    for h in handles {
        h.await.expect("virtual user panicked");
    }
    let elapsed = started.elapsed().as_secs_f64();

    let samples = std::mem::take(&mut *shared.samples.lock());
    let routes = summarize(&samples, &names, Exec::Auto);
    let total = samples.len() as u64;
    let failures = samples.iter().filter(|s| !s.ok).count() as u64;
    let per_sec = |n: u64| if elapsed > 0.0 { n as f64 / elapsed } else { 0.0 };
    Ok(LoadReport {
        target: cfg.target_url.to_string(),
        seed: cfg.seed,
        user_count: cfg.user_count,
        duration_secs: elapsed,
        total_requests: total,
        total_failures: failures,
        failure_rate: if total == 0 {
            0.0
        } else {
            failures as f64 / total as f64
        },
        offered_rps: per_sec(total),
        achieved_rps: per_sec(total - failures),
        peak_concurrent_users: shared.users.peak(),
        peak_open_requests: shared.open.peak(),
        script_errors: shared.script_errors.load(Ordering::SeqCst),
        routes,
    })
}

/// Runs against an in-process [`Stub`] on a paused clock: the result
/// depends only on the configuration and the seed.
pub fn run_against_stub(cfg: SwarmConfig, latency: Duration) -> Result<(LoadReport, StubStats)> {
    let rt = tokio::runtime::Builder::new_current_thread()
        .enable_time()
        .start_paused(true)
        .build()?;
    let stub = Stub::new(latency);
    let report = rt.block_on(run_swarm(cfg, Transport::InProcess(stub.clone())))?;
    Ok((report, stub.stats()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn urls() {
        let t = Url::parse("http://h:1/base/").unwrap();
        assert_eq!(
            resolve(&t, "/api/v1/apps").unwrap().as_str(),
            "http://h:1/base/api/v1/apps"
        );
        assert_eq!(resolve(&t, "x?q=1").unwrap().as_str(), "http://h:1/base/x?q=1");
        assert_eq!(resolve(&t, "http://other/y").unwrap().as_str(), "http://other/y");
    }

    #[test]
    fn captures() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v =
            json!({"items": [{"id": "a"}, {"id": "b"}], "n": 3, "a/b": "slash", "none": null, "empty": []});
        assert_eq!(capture(&v, "/items/1/id", &mut rng).as_deref(), Some("b"));
        assert_eq!(capture(&v, "/n", &mut rng).as_deref(), Some("3"));
        assert_eq!(capture(&v, "/a~1b", &mut rng).as_deref(), Some("slash"));
        assert_eq!(capture(&v, "/none", &mut rng), None);
        assert_eq!(capture(&v, "/empty/*", &mut rng), None);
        assert_eq!(capture(&v, "/missing", &mut rng), None);
        let picks: std::collections::BTreeSet<_> = (0..50)
            .map(|_| capture(&v, "/items/*/id", &mut rng).unwrap())
            .collect();
        assert_eq!(picks.len(), 2, "both elements get picked");
    }
}
