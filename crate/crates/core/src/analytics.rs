//! First-party event log, per-user participation, and the platform reports.
//!
//! Events are append-only and keyed by time so window queries are prefix
//! scans in order. Participation rows are maintained in the same transaction
//! as the run they count. All aggregates are computed from a single read
//! snapshot.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use utoipa::ToSchema;

use crate::auth::Caller;
use crate::error::{Error, Result};
use crate::exec::{self, Exec};
use crate::ids::{AppId, EventId, UserId};
use crate::orchestrator::{Instance, InstanceSummary};
use crate::platform::Platform;
use crate::registry::{Application, Visibility};
use crate::storage::{tables, ReadExt, ReadTx, WriteExt, WriteTx};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, ToSchema)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Search,
    ViewAppDetail,
    LaunchLocal,
    LaunchCloud,
    StopCloud,
    PageView,
    SessionStart,
}

impl EventKind {
    pub const ALL: [EventKind; 7] = [
        EventKind::Search,
        EventKind::ViewAppDetail,
        EventKind::LaunchLocal,
        EventKind::LaunchCloud,
        EventKind::StopCloud,
        EventKind::PageView,
        EventKind::SessionStart,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Search => "search",
            EventKind::ViewAppDetail => "view_app_detail",
            EventKind::LaunchLocal => "launch_local",
            EventKind::LaunchCloud => "launch_cloud",
            EventKind::StopCloud => "stop_cloud",
            EventKind::PageView => "page_view",
            EventKind::SessionStart => "session_start",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EventKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::ValidationFailed(format!("unknown event kind `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, ToSchema)]
pub struct EventRecord {
    pub event_id: EventId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_id: Option<UserId>,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<AppId>,
    pub occurred_at: DateTime<Utc>,
    pub session_key: String,
}

/// An event as submitted by a client. The kind is free text so that unknown
/// kinds surface as validation errors rather than decode errors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, ToSchema)]
pub struct NewEvent {
    pub kind: String,
    #[serde(default)]
    pub subject: Option<AppId>,
    /// Defaults to the time of ingestion.
    #[serde(default)]
    pub occurred_at: Option<DateTime<Utc>>,
    pub session_key: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, ToSchema)]
pub struct ParticipationRecord {
    pub user_id: UserId,
    pub application_id: AppId,
    #[serde(default)]
    pub first_run_at: Option<DateTime<Utc>>,
    pub run_count: u64,
    pub failure_count: u64,
}

/// One row of a user's participation history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, ToSchema)]
pub struct ParticipationView {
    pub application_id: AppId,
    pub application_name: String,
    #[serde(default)]
    pub first_run_at: Option<DateTime<Utc>>,
    pub run_count: u64,
    pub failure_count: u64,
    pub live_instances: Vec<InstanceSummary>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, ToSchema)]
pub struct PopularProject {
    pub application_id: AppId,
    pub name: String,
    pub run_count: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize, ToSchema)]
pub struct PlatformStats {
    pub total_registered_users: u64,
    pub total_active_projects: u64,
    pub projects_by_branch: BTreeMap<String, u64>,
    pub projects_by_category: BTreeMap<String, u64>,
    pub projects_by_subcategory: BTreeMap<String, u64>,
    pub popular_projects: Vec<PopularProject>,
}

/// Half-open time window `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ToSchema)]
pub struct Window {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

impl Window {
    pub fn new(start: DateTime<Utc>, end: DateTime<Utc>) -> Result<Self> {
        if end < start {
            return Err(Error::ValidationFailed("window end precedes its start".into()));
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, t: DateTime<Utc>) -> bool {
        self.start <= t && t < self.end
    }
}

impl FromStr for Window {
    type Err = Error;

    /// `<rfc3339>/<rfc3339>`
    fn from_str(s: &str) -> Result<Self> {
        let bad = |what: &str| Error::ValidationFailed(format!("window: {what}"));
        let (a, b) = s.split_once('/').ok_or_else(|| bad("expected START/END"))?;
        let parse = |v: &str| {
            DateTime::parse_from_rfc3339(v.trim())
                .map(|d| d.with_timezone(&Utc))
                .map_err(|e| bad(&e.to_string()))
        };
        Window::new(parse(a)?, parse(b)?)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, ToSchema)]
pub struct UsageReport {
    pub window: Option<Window>,
    pub sessions: u64,
    pub users: u64,
    pub page_views: u64,
    pub pages_per_session: f64,
    /// Seconds.
    pub avg_session_duration: f64,
    pub bounce_rate: f64,
    pub new_visitors: u64,
    pub returning_visitors: u64,
}

/// Who a session belongs to: the account if any event in it was
/// authenticated, otherwise the session key itself.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Visitor {
    User(UserId),
    Anonymous(String),
}

fn event_key(e: &EventRecord) -> String {
    format!("{}|{}", e.occurred_at.format("%Y%m%dT%H%M%S%.9f"), e.event_id)
}

fn time_prefix(t: DateTime<Utc>) -> String {
    t.format("%Y%m%dT%H%M%S%.9f").to_string()
}

fn participation_key(user: UserId, app: AppId) -> String {
    format!("{user}/{app}")
}

pub(crate) fn append_event(tx: &mut dyn WriteTx, e: &EventRecord) -> Result<()> {
    tx.put_json(tables::EVENTS, &event_key(e), e)
}

/// Records an event produced by the platform itself on behalf of `caller`.
pub(crate) fn record_internal(
    tx: &mut dyn WriteTx,
    caller: &Caller,
    kind: EventKind,
    subject: Option<AppId>,
    at: DateTime<Utc>,
) -> Result<()> {
    append_event(
        tx,
        &EventRecord {
            event_id: EventId::new(),
            user_id: Some(caller.user_id),
            kind,
            subject,
            occurred_at: at,
            session_key: caller.session_key(),
        },
    )
}

/// Counts one run of `app` by `user`. Only started runs set `first_run_at`
/// and bump `run_count`; failed runs bump `failure_count`.
pub(crate) fn record_run(
    tx: &mut dyn WriteTx,
    user: UserId,
    app: AppId,
    at: DateTime<Utc>,
    started: bool,
) -> Result<()> {
    let key = participation_key(user, app);
    let mut rec = tx
        .get_json::<ParticipationRecord>(tables::PARTICIPATION, &key)?
        .unwrap_or(ParticipationRecord {
            user_id: user,
            application_id: app,
            first_run_at: None,
            run_count: 0,
            failure_count: 0,
        });
    if started {
        rec.run_count += 1;
        rec.first_run_at = Some(rec.first_run_at.map_or(at, |f| f.min(at)));
    } else {
        rec.failure_count += 1;
    }
    tx.put_json(tables::PARTICIPATION, &key, &rec)
}

pub(crate) fn events_in(tx: &dyn ReadTx, window: Option<&Window>) -> Result<Vec<EventRecord>> {
    let all: Vec<EventRecord> = tx.scan_json(tables::EVENTS)?;
    Ok(match window {
        None => all,
        Some(w) => {
            let (lo, hi) = (time_prefix(w.start), time_prefix(w.end));
            all.into_iter()
                .filter(|e| {
                    let k = time_prefix(e.occurred_at);
                    k >= lo && k < hi
                })
                .collect()
        }
    })
}

#[derive(Default)]
struct SessionAcc {
    first: Option<DateTime<Utc>>,
    last: Option<DateTime<Utc>>,
    page_views: u64,
    user: Option<UserId>,
}

impl SessionAcc {
    fn add(&mut self, e: &EventRecord) {
        self.first = Some(self.first.map_or(e.occurred_at, |f| f.min(e.occurred_at)));
        self.last = Some(self.last.map_or(e.occurred_at, |l| l.max(e.occurred_at)));
        if e.kind == EventKind::PageView {
            self.page_views += 1;
        }
        if self.user.is_none() {
            self.user = e.user_id;
        }
    }

    fn merge(&mut self, o: SessionAcc) {
        self.first = match (self.first, o.first) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        self.last = match (self.last, o.last) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        };
        self.page_views += o.page_views;
        // Events are folded in key order, so the left side saw earlier events.
        self.user = self.user.or(o.user);
    }
}

fn visitor_of(session_key: &str, user: Option<UserId>) -> Visitor {
    match user {
        Some(u) => Visitor::User(u),
        None => Visitor::Anonymous(session_key.to_string()),
    }
}

/// Computes the usage metrics for `window` from the full event log.
pub fn compute_usage(events: &[EventRecord], window: Window, exec: Exec) -> UsageReport {
    let in_window: Vec<&EventRecord> = events.iter().filter(|e| window.contains(e.occurred_at)).collect();
    let sessions = exec::fold_reduce(
        &in_window,
        BTreeMap::<String, SessionAcc>::new,
        |mut m, e| {
            m.entry(e.session_key.clone()).or_default().add(e);
            m
        },
        |mut a, b| {
            for (k, v) in b {
                a.entry(k).or_default().merge(v);
            }
            a
        },
        exec,
    );
    let n = sessions.len() as u64;
    if n == 0 {
        return UsageReport {
            window: Some(window),
            ..UsageReport::default()
        };
    }

    // Visitors seen before the window started.
    let prior: BTreeSet<Visitor> = {
        let mut by_session: BTreeMap<&str, Option<UserId>> = BTreeMap::new();
        for e in events.iter().filter(|e| e.occurred_at < window.start) {
            let slot = by_session.entry(e.session_key.as_str()).or_default();
            if slot.is_none() {
                *slot = e.user_id;
            }
        }
        by_session.into_iter().map(|(k, u)| visitor_of(k, u)).collect()
    };

    let visitors: BTreeSet<Visitor> = sessions.iter().map(|(k, s)| visitor_of(k, s.user)).collect();
    let page_views: u64 = sessions.values().map(|s| s.page_views).sum();
    let bounces = sessions.values().filter(|s| s.page_views == 1).count() as u64;
    let total_secs: f64 = sessions
        .values()
        .map(|s| match (s.first, s.last) {
            (Some(a), Some(b)) => (b - a).num_milliseconds() as f64 / 1000.0,
            _ => 0.0,
        })
        .sum();
    let returning = visitors.iter().filter(|v| prior.contains(v)).count() as u64;
    UsageReport {
        window: Some(window),
        sessions: n,
        users: visitors.len() as u64,
        page_views,
        pages_per_session: page_views as f64 / n as f64,
        avg_session_duration: total_secs / n as f64,
        bounce_rate: bounces as f64 / n as f64,
        new_visitors: visitors.len() as u64 - returning,
        returning_visitors: returning,
    }
}

/// Everything the platform-wide report reads, taken from one snapshot.
#[derive(Debug, Clone, Default)]
pub struct StatsInputs {
    pub user_count: u64,
    pub applications: Vec<Application>,
    pub events: Vec<EventRecord>,
    pub instances: Vec<Instance>,
    pub participation: Vec<ParticipationRecord>,
}

/// Platform-wide statistics over public applications. A project is active
/// when it has an event or a launched instance in `[now - active_window, now]`,
/// or an instance that is still live.
pub fn compute_stats(
    inputs: &StatsInputs,
    now: DateTime<Utc>,
    active_window: Duration,
    exec: Exec,
) -> PlatformStats {
    let since = now - active_window;
    let public: Vec<&Application> = inputs
        .applications
        .iter()
        .filter(|a| a.visibility == Visibility::Public)
        .collect();
    let public_ids: BTreeSet<AppId> = public.iter().map(|a| a.application_id).collect();

    let mut active: BTreeSet<AppId> = exec::fold_reduce(
        &inputs.events,
        BTreeSet::new,
        |mut s, e| {
            if let Some(app) = e.subject {
                if e.occurred_at >= since && e.occurred_at <= now {
                    s.insert(app);
                }
            }
            s
        },
        |mut a, b| {
            a.extend(b);
            a
        },
        exec,
    );
    active.extend(
        inputs
            .instances
            .iter()
            .filter(|i| !i.status.is_terminal() || (i.launched_at >= since && i.launched_at <= now))
            .map(|i| i.application_id),
    );
    active.retain(|a| public_ids.contains(a));

    let mut stats = PlatformStats {
        total_registered_users: inputs.user_count,
        total_active_projects: active.len() as u64,
        ..PlatformStats::default()
    };
    for a in &public {
        *stats.projects_by_branch.entry(a.branch.clone()).or_default() += 1;
        *stats.projects_by_category.entry(a.category.clone()).or_default() += 1;
        *stats
            .projects_by_subcategory
            .entry(a.subcategory.clone())
            .or_default() += 1;
    }

    let runs = exec::fold_reduce(
        &inputs.participation,
        HashMap::<AppId, u64>::new,
        |mut m, p| {
            *m.entry(p.application_id).or_default() += p.run_count;
            m
        },
        |mut a, b| {
            for (k, v) in b {
                *a.entry(k).or_default() += v;
            }
            a
        },
        exec,
    );
    let mut popular: Vec<PopularProject> = public
        .iter()
        .filter_map(|a| {
            let n = runs.get(&a.application_id).copied().unwrap_or(0);
            (n > 0).then(|| PopularProject {
                application_id: a.application_id,
                name: a.name.clone(),
                run_count: n,
            })
        })
        .collect();
    popular.sort_by(|a, b| {
        b.run_count
            .cmp(&a.run_count)
            .then_with(|| a.name.cmp(&b.name))
            .then_with(|| a.application_id.cmp(&b.application_id))
    });
    stats.popular_projects = popular;
    stats
}

impl Platform {
    /// Appends a batch of events. Timestamps must be non-decreasing within
    /// the batch; the whole batch is rejected otherwise. Events are attributed
    /// to the caller when authenticated.
    pub fn ingest_events(&self, caller: Option<&Caller>, batch: Vec<NewEvent>) -> Result<Vec<EventId>> {
        let now = self.clock.now();
        let mut records = Vec::with_capacity(batch.len());
        let mut last: Option<DateTime<Utc>> = None;
        for e in batch {
            let kind: EventKind = e.kind.parse()?;
            if e.session_key.trim().is_empty() {
                return Err(Error::ValidationFailed("session_key must not be empty".into()));
            }
            let at = e.occurred_at.unwrap_or(now);
            if last.is_some_and(|l| at < l) {
                return Err(Error::ValidationFailed(
                    "occurred_at must be non-decreasing within a batch".into(),
                ));
            }
            last = Some(at);
            records.push(EventRecord {
                event_id: EventId::new(),
                user_id: caller.map(|c| c.user_id),
                kind,
                subject: e.subject,
                occurred_at: at,
                session_key: e.session_key,
            });
        }
        self.storage.transact(|tx| {
            for r in &records {
                append_event(tx, r)?;
            }
            Ok(())
        })?;
        Ok(records.into_iter().map(|r| r.event_id).collect())
    }

    /// The caller's own events, oldest first.
    pub fn user_events(&self, caller: &Caller) -> Result<Vec<EventRecord>> {
        let all = self.storage.read(|tx| events_in(tx, None))?;
        Ok(all
            .into_iter()
            .filter(|e| e.user_id == Some(caller.user_id))
            .collect())
    }

    pub fn stats_inputs(&self) -> Result<StatsInputs> {
        self.storage.read(|tx| {
            Ok(StatsInputs {
                user_count: tx.scan(tables::USERS)?.len() as u64,
                applications: tx.scan_json(tables::APPLICATIONS)?,
                events: events_in(tx, None)?,
                instances: tx.scan_json(tables::INSTANCES)?,
                participation: tx.scan_json(tables::PARTICIPATION)?,
            })
        })
    }

    pub fn platform_stats(&self) -> Result<PlatformStats> {
        let inputs = self.stats_inputs()?;
        Ok(compute_stats(
            &inputs,
            self.clock.now(),
            self.config.active_window,
            self.exec,
        ))
    }

    /// One row per application the caller has run or has live instances of.
    pub fn user_participation(&self, caller: &Caller) -> Result<Vec<ParticipationView>> {
        self.storage.read(|tx| user_participation_tx(tx, caller.user_id))
    }

    pub fn usage_report(&self, window: Window) -> Result<UsageReport> {
        let events = self.storage.read(|tx| {
            let mut evs = events_in(tx, None)?;
            evs.retain(|e| e.occurred_at < window.end);
            Ok(evs)
        })?;
        Ok(compute_usage(&events, window, self.exec))
    }
}

pub(crate) fn user_participation_tx(tx: &dyn ReadTx, user: UserId) -> Result<Vec<ParticipationView>> {
    let prefix = format!("{user}/");
    let records: Vec<ParticipationRecord> = tx.scan_prefix_json(tables::PARTICIPATION, &prefix)?;
    let live: Vec<Instance> = tx
        .scan_json::<Instance>(tables::INSTANCES)?
        .into_iter()
        .filter(|i| i.owner_id == user && !i.status.is_terminal())
        .collect();
    let mut rows: BTreeMap<AppId, ParticipationView> = BTreeMap::new();
    let blank = |app: AppId| ParticipationView {
        application_id: app,
        application_name: String::new(),
        first_run_at: None,
        run_count: 0,
        failure_count: 0,
        live_instances: Vec::new(),
    };
    for r in records {
        let row = rows
            .entry(r.application_id)
            .or_insert_with(|| blank(r.application_id));
        row.first_run_at = r.first_run_at;
        row.run_count = r.run_count;
        row.failure_count = r.failure_count;
    }
    for i in &live {
        rows.entry(i.application_id)
            .or_insert_with(|| blank(i.application_id))
            .live_instances
            .push(InstanceSummary::from(i));
    }
    let mut out: Vec<ParticipationView> = rows.into_values().collect();
    for row in &mut out {
        row.application_name = crate::registry::load_app(tx, row.application_id)?
            .map(|a| a.name)
            .unwrap_or_default();
        row.live_instances
            .sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
    }
    out.sort_by(|a, b| {
        a.application_name
            .cmp(&b.application_name)
            .then(a.application_id.cmp(&b.application_id))
    });
    Ok(out)
}
