//! The simulated provider's state: accounts, instances and their timelines.
//!
//! Time is counted in ticks. By default every `DescribeInstances` call ticks
//! each instance it reports once before answering, so a client polling an
//! instance drives it forward; `/_sim/tick` advances all instances instead.

use std::collections::{BTreeMap, HashMap};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use chrono::{DateTime, Duration, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::sign;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimState {
    Pending,
    Running,
    ShuttingDown,
    Terminated,
    Failed,
}

impl SimState {
    pub fn as_str(self) -> &'static str {
        match self {
            SimState::Pending => "pending",
            SimState::Running => "running",
            SimState::ShuttingDown => "shutting-down",
            SimState::Terminated => "terminated",
            SimState::Failed => "failed",
        }
    }

    /// Counts against capacity and appears in the live set.
    pub fn is_live(self) -> bool {
        matches!(self, SimState::Pending | SimState::Running)
    }

    fn is_final(self) -> bool {
        matches!(self, SimState::Terminated | SimState::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Maximum number of live instances across all accounts.
    pub capacity: usize,
    /// Ticks an instance stays pending before it runs.
    pub run_delay_ticks: u32,
    /// Probability that a launched instance fails instead of running.
    pub fail_rate: f64,
    pub seed: u64,
    /// Accepted distance between a request's `Timestamp` and the local clock.
    pub max_skew_secs: i64,
    /// Tick instances on every describe; otherwise only `/_sim/tick` does.
    pub tick_on_describe: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            capacity: 64,
            run_delay_ticks: 1,
            fail_rate: 0.0,
            seed: 0,
            max_skew_secs: 300,
            tick_on_describe: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimInstance {
    pub instance_id: String,
    pub reservation_id: String,
    pub access_key_id: String,
    pub image_id: String,
    pub instance_type: String,
    pub user_data: Option<String>,
    pub state: SimState,
    pub public_address: Option<String>,
    pub age: u32,
    #[serde(skip)]
    timeline: Timeline,
    #[serde(skip)]
    seq: u64,
}

#[derive(Debug, Clone, PartialEq)]
enum Timeline {
    /// pending for `run_delay_ticks`, then running (or failed).
    Default { fails: bool },
    /// State at age k is `steps[min(k, len-1)]`.
    Scripted(Vec<SimState>),
    /// Shutting down; terminates on the next tick.
    Stopping,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SimError {
    pub status: u16,
    pub code: &'static str,
    pub message: String,
}

impl SimError {
    fn new(status: u16, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Item {
    pub instance_id: String,
    /// A lifecycle state name or `not-found`.
    pub state: String,
    pub public_address: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ActionResult {
    pub action: String,
    pub reservation_id: Option<String>,
    pub items: Vec<Item>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LiveInstance {
    pub instance_id: String,
    pub access_key_id: String,
    pub state: SimState,
    pub public_address: Option<String>,
}

pub struct WireRequest<'a> {
    pub method: &'a str,
    pub path: &'a str,
    pub params: &'a [(String, String)],
    pub now: DateTime<Utc>,
}

pub struct Simulator {
    config: SimConfig,
    keys: HashMap<String, String>,
    instances: BTreeMap<String, SimInstance>,
    next_instance: u64,
    next_reservation: u64,
    rng: ChaCha8Rng,
    script: Option<Vec<SimState>>,
    fault: bool,
    requests: u64,
}

impl Simulator {
    pub fn new(config: SimConfig) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            keys: HashMap::new(),
            instances: BTreeMap::new(),
            next_instance: 1,
            next_reservation: 1,
            script: None,
            fault: false,
            requests: 0,
        }
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn config_mut(&mut self) -> &mut SimConfig {
        &mut self.config
    }

    pub fn add_key(&mut self, access_key_id: &str, secret_key: &str) {
        self.keys.insert(access_key_id.into(), secret_key.into());
    }

    /// While set, every wire call answers 503.
    pub fn set_fault(&mut self, down: bool) {
        self.fault = down;
    }

    pub fn fault(&self) -> bool {
        self.fault
    }

    /// Timeline for instances launched from now on; `None` restores the default.
    pub fn set_script(&mut self, steps: Option<Vec<SimState>>) {
        self.script = steps.filter(|s| !s.is_empty());
    }

    /// Wire requests received, including rejected ones.
    pub fn request_count(&self) -> u64 {
        self.requests
    }

    pub fn instances(&self) -> Vec<SimInstance> {
        self.instances.values().cloned().collect()
    }

    pub fn live(&self) -> Vec<LiveInstance> {
        self.instances
            .values()
            .filter(|i| i.state.is_live())
            .map(|i| LiveInstance {
                instance_id: i.instance_id.clone(),
                access_key_id: i.access_key_id.clone(),
                state: i.state,
                public_address: i.public_address.clone(),
            })
            .collect()
    }

    /// Drops an instance as if the provider lost it; later calls report
    /// `not-found`.
    pub fn forget(&mut self, instance_id: &str) -> bool {
        self.instances.remove(instance_id).is_some()
    }

    pub fn tick_all(&mut self, n: u32) {
        let delay = self.config.run_delay_ticks;
        for inst in self.instances.values_mut() {
            for _ in 0..n {
                advance(inst, delay);
            }
        }
    }

    pub fn handle(&mut self, req: &WireRequest<'_>) -> Result<ActionResult, SimError> {
        self.requests += 1;
        if self.fault {
            return Err(SimError::new(503, "ServiceUnavailable", "provider is down"));
        }
        let account = self.authenticate(req)?;
        let action = param(req.params, "Action")
            .ok_or_else(|| SimError::new(400, "MissingAction", "Action is required"))?;
        let items = match action {
            "RunInstances" => return self.run_instances(&account, req.params),
            "DescribeInstances" => self.describe(&account, req.params),
            "TerminateInstances" => self.terminate(&account, req.params),
            other => {
                return Err(SimError::new(
                    400,
                    "InvalidAction",
                    format!("unknown action `{other}`"),
                ))
            }
        };
        Ok(ActionResult {
            action: action.into(),
            reservation_id: None,
            items,
        })
    }

    fn authenticate(&self, req: &WireRequest<'_>) -> Result<String, SimError> {
        let auth = |m: &str| SimError::new(401, "AuthFailure", m);
        let key_id = param(req.params, "AccessKeyId").ok_or_else(|| auth("AccessKeyId is required"))?;
        let secret = self.keys.get(key_id).ok_or_else(|| auth("unknown access key"))?;
        let given = param(req.params, "Signature").ok_or_else(|| auth("Signature is required"))?;
        match param(req.params, "SignatureMethod") {
            Some("HmacSHA256") => {}
            _ => return Err(auth("SignatureMethod must be HmacSHA256")),
        }
        let ts = param(req.params, "Timestamp")
            .and_then(|t| DateTime::parse_from_rfc3339(t).ok())
            .ok_or_else(|| SimError::new(400, "MissingParameter", "Timestamp is missing or invalid"))?;
        if (req.now - ts.with_timezone(&Utc)).abs() > Duration::seconds(self.config.max_skew_secs) {
            return Err(SimError::new(
                400,
                "RequestExpired",
                "Timestamp outside the allowed window",
            ));
        }
        let to_sign = sign::string_to_sign(req.method, req.path, req.params);
        if !sign::verify(secret, &to_sign, given) {
            return Err(SimError::new(
                403,
                "SignatureDoesNotMatch",
                "the request signature does not match",
            ));
        }
        Ok(key_id.to_string())
    }

    fn run_instances(
        &mut self,
        account: &str,
        params: &[(String, String)],
    ) -> Result<ActionResult, SimError> {
        let missing = |p: &str| SimError::new(400, "MissingParameter", format!("{p} is required"));
        let image_id = param(params, "ImageId")
            .filter(|s| !s.is_empty())
            .ok_or_else(|| missing("ImageId"))?;
        let instance_type = param(params, "InstanceType")
            .filter(|s| !s.is_empty())
            .ok_or_else(|| missing("InstanceType"))?;
        for count in ["MinCount", "MaxCount"] {
            if let Some(v) = param(params, count) {
                if v != "1" {
                    return Err(SimError::new(
                        400,
                        "InvalidParameterValue",
                        format!("{count} must be 1"),
                    ));
                }
            }
        }
        let user_data = match param(params, "UserData") {
            None => None,
            Some(b64) => {
                let raw = STANDARD
                    .decode(b64)
                    .map_err(|_| SimError::new(400, "InvalidParameterValue", "UserData is not base64"))?;
                Some(String::from_utf8_lossy(&raw).into_owned())
            }
        };
        let live = self.instances.values().filter(|i| i.state.is_live()).count();
        if live >= self.config.capacity {
            return Err(SimError::new(
                400,
                "InstanceLimitExceeded",
                format!("capacity of {} instances reached", self.config.capacity),
            ));
        }
        let seq = self.next_instance;
        self.next_instance += 1;
        let reservation_id = format!("r-{:06}", self.next_reservation);
        self.next_reservation += 1;
        // Drawn for every launch so failure outcomes depend only on the seed
        // and launch order.
        let fails = self.rng.gen_bool(self.config.fail_rate.clamp(0.0, 1.0));
        let timeline = match &self.script {
            Some(steps) => Timeline::Scripted(steps.clone()),
            None => Timeline::Default { fails },
        };
        let mut inst = SimInstance {
            instance_id: format!("i-{seq:06}"),
            reservation_id: reservation_id.clone(),
            access_key_id: account.into(),
            image_id: image_id.into(),
            instance_type: instance_type.into(),
            user_data,
            state: SimState::Pending,
            public_address: None,
            age: 0,
            timeline,
            seq,
        };
        settle(&mut inst, self.config.run_delay_ticks);
        let item = report(Some(&inst), &inst.instance_id);
        self.instances.insert(inst.instance_id.clone(), inst);
        Ok(ActionResult {
            action: "RunInstances".into(),
            reservation_id: Some(reservation_id),
            items: vec![item],
        })
    }

    fn describe(&mut self, account: &str, params: &[(String, String)]) -> Vec<Item> {
        let delay = self.config.run_delay_ticks;
        let tick = self.config.tick_on_describe;
        let ids = instance_ids(params);
        let ids: Vec<String> = if ids.is_empty() {
            self.instances
                .values()
                .filter(|i| i.access_key_id == account)
                .map(|i| i.instance_id.clone())
                .collect()
        } else {
            ids
        };
        ids.iter()
            .map(|id| {
                let inst = self.instances.get_mut(id).filter(|i| i.access_key_id == account);
                match inst {
                    Some(inst) => {
                        if tick {
                            advance(inst, delay);
                        }
                        report(Some(inst), id)
                    }
                    None => report(None, id),
                }
            })
            .collect()
    }

    fn terminate(&mut self, account: &str, params: &[(String, String)]) -> Vec<Item> {
        instance_ids(params)
            .iter()
            .map(
                |id| match self.instances.get_mut(id).filter(|i| i.access_key_id == account) {
                    Some(inst) => {
                        if !inst.state.is_final() && inst.state != SimState::ShuttingDown {
                            inst.state = SimState::ShuttingDown;
                            inst.timeline = Timeline::Stopping;
                        }
                        report(Some(inst), id)
                    }
                    None => report(None, id),
                },
            )
            .collect()
    }
}

fn param<'a>(params: &'a [(String, String)], name: &str) -> Option<&'a str> {
    params.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
}

/// `InstanceId.N` values ordered by N.
fn instance_ids(params: &[(String, String)]) -> Vec<String> {
    let mut ids: Vec<(u32, String)> = params
        .iter()
        .filter_map(|(k, v)| {
            let n = k.strip_prefix("InstanceId.")?.parse().ok()?;
            Some((n, v.clone()))
        })
        .collect();
    ids.sort();
    ids.into_iter().map(|(_, v)| v).collect()
}

fn report(inst: Option<&SimInstance>, id: &str) -> Item {
    match inst {
        Some(i) => Item {
            instance_id: i.instance_id.clone(),
            state: i.state.as_str().into(),
            public_address: i.public_address.clone(),
        },
        None => Item {
            instance_id: id.into(),
            state: "not-found".into(),
            public_address: None,
        },
    }
}

fn address(seq: u64) -> String {
    format!("10.0.{}.{}", (seq / 250) % 250, seq % 250 + 2)
}

/// Recomputes the state from the timeline and age.
fn settle(inst: &mut SimInstance, run_delay: u32) {
    let next = match &inst.timeline {
        Timeline::Stopping => inst.state,
        Timeline::Default { fails } => {
            if inst.age < run_delay {
                SimState::Pending
            } else if *fails {
                SimState::Failed
            } else {
                SimState::Running
            }
        }
        Timeline::Scripted(steps) => steps[(inst.age as usize).min(steps.len() - 1)],
    };
    inst.state = next;
    if next == SimState::Running && inst.public_address.is_none() {
        inst.public_address = Some(address(inst.seq));
    }
    if next.is_final() {
        inst.public_address = None;
    }
}

fn advance(inst: &mut SimInstance, run_delay: u32) {
    if inst.state.is_final() {
        return;
    }
    inst.age = inst.age.saturating_add(1);
    if inst.timeline == Timeline::Stopping {
        inst.state = SimState::Terminated;
        inst.public_address = None;
        return;
    }
    settle(inst, run_delay);
}
