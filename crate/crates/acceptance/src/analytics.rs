use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Duration, Utc};
use gridhall_core::analytics::{
    EventKind, EventRecord, ParticipationView, PlatformStats, PopularProject, StatsInputs, UsageReport,
    Window,
};
use gridhall_core::ids::UserId;
use gridhall_core::orchestrator::{InstanceStatus, InstanceSummary};
use gridhall_core::registry::Visibility;

pub fn platform_stats(rows: &StatsInputs, now: DateTime<Utc>, active: Duration) -> PlatformStats {
    let since = now - active;
    let recent = |t: DateTime<Utc>| since <= t && t <= now;
    let mut out = PlatformStats {
        total_registered_users: rows.user_count,
        ..Default::default()
    };
    for a in rows
        .applications
        .iter()
        .filter(|a| a.visibility == Visibility::Public)
    {
        let id = a.application_id;
        let touched = rows
            .events
            .iter()
            .any(|e| e.subject == Some(id) && recent(e.occurred_at));
        let launched = rows.instances.iter().any(|i| {
            i.application_id == id
                && (matches!(i.status, InstanceStatus::Pending | InstanceStatus::Running)
                    || recent(i.launched_at))
        });
        out.total_active_projects += u64::from(touched || launched);
        *out.projects_by_branch.entry(a.branch.clone()).or_default() += 1;
        *out.projects_by_category.entry(a.category.clone()).or_default() += 1;
        *out.projects_by_subcategory
            .entry(a.subcategory.clone())
            .or_default() += 1;
        let runs: u64 = rows
            .participation
            .iter()
            .filter(|p| p.application_id == id)
            .map(|p| p.run_count)
            .sum();
        if runs > 0 {
            out.popular_projects.push(PopularProject {
                application_id: id,
                name: a.name.clone(),
                run_count: runs,
            });
        }
    }
    out.popular_projects.sort_by(|x, y| {
        (std::cmp::Reverse(x.run_count), &x.name, x.application_id).cmp(&(
            std::cmp::Reverse(y.run_count),
            &y.name,
            y.application_id,
        ))
    });
    out
}

fn visitor(session: &[&EventRecord], key: &str) -> String {
    match session.iter().find_map(|e| e.user_id) {
        Some(u) => format!("user:{u}"),
        None => format!("anon:{key}"),
    }
}

fn sessions<'a>(events: &[&'a EventRecord]) -> BTreeMap<&'a str, Vec<&'a EventRecord>> {
    let mut out: BTreeMap<&str, Vec<&EventRecord>> = BTreeMap::new();
    for e in events {
        out.entry(e.session_key.as_str()).or_default().push(e);
    }
    out
}

pub fn usage_report(events: &[EventRecord], w: Window) -> UsageReport {
    let inside: Vec<&EventRecord> = events
        .iter()
        .filter(|e| w.start <= e.occurred_at && e.occurred_at < w.end)
        .collect();
    let by_session = sessions(&inside);
    if by_session.is_empty() {
        return UsageReport {
            window: Some(w),
            ..Default::default()
        };
    }
    let before: Vec<&EventRecord> = events.iter().filter(|e| e.occurred_at < w.start).collect();
    let seen_before: BTreeSet<String> = sessions(&before).iter().map(|(k, evs)| visitor(evs, k)).collect();

    let mut visitors = BTreeSet::new();
    let (mut views, mut bounces, mut millis) = (0u64, 0u64, 0i64);
    for (key, evs) in &by_session {
        let pv = evs.iter().filter(|e| e.kind == EventKind::PageView).count() as u64;
        views += pv;
        bounces += u64::from(pv == 1);
        let first = evs.iter().map(|e| e.occurred_at).min().expect("non-empty");
        let last = evs.iter().map(|e| e.occurred_at).max().expect("non-empty");
        millis += (last - first).num_milliseconds();
        visitors.insert(visitor(evs, key));
    }
    let n = by_session.len() as f64;
    let returning = visitors.iter().filter(|v| seen_before.contains(*v)).count() as u64;
    UsageReport {
        window: Some(w),
        sessions: by_session.len() as u64,
        users: visitors.len() as u64,
        page_views: views,
        pages_per_session: views as f64 / n,
        avg_session_duration: millis as f64 / 1000.0 / n,
        bounce_rate: bounces as f64 / n,
        new_visitors: visitors.len() as u64 - returning,
        returning_visitors: returning,
    }
}

/// Equal counts, and ratios equal up to float summation order.
pub fn same_usage(a: &UsageReport, b: &UsageReport) -> bool {
    let close = |x: f64, y: f64| (x - y).abs() <= 1e-9 * y.abs().max(1.0);
    a.window == b.window
        && (
            a.sessions,
            a.users,
            a.page_views,
            a.new_visitors,
            a.returning_visitors,
        ) == (
            b.sessions,
            b.users,
            b.page_views,
            b.new_visitors,
            b.returning_visitors,
        )
        && close(a.pages_per_session, b.pages_per_session)
        && close(a.avg_session_duration, b.avg_session_duration)
        && close(a.bounce_rate, b.bounce_rate)
}

pub fn participation(rows: &StatsInputs, user: UserId) -> Vec<ParticipationView> {
    let mut apps: BTreeSet<_> = rows
        .participation
        .iter()
        .filter(|p| p.user_id == user)
        .map(|p| p.application_id)
        .collect();
    let live: Vec<_> = rows
        .instances
        .iter()
        .filter(|i| {
            i.owner_id == user && matches!(i.status, InstanceStatus::Pending | InstanceStatus::Running)
        })
        .collect();
    apps.extend(live.iter().map(|i| i.application_id));
    let mut out: Vec<ParticipationView> = apps
        .into_iter()
        .map(|app| {
            let rec = rows
                .participation
                .iter()
                .find(|p| p.user_id == user && p.application_id == app);
            let mut live_instances: Vec<InstanceSummary> = live
                .iter()
                .filter(|i| i.application_id == app)
                .map(|i| InstanceSummary::from(*i))
                .collect();
            live_instances.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
            ParticipationView {
                application_id: app,
                application_name: rows
                    .applications
                    .iter()
                    .find(|a| a.application_id == app)
                    .map(|a| a.name.clone())
                    .unwrap_or_default(),
                first_run_at: rec.and_then(|r| r.first_run_at),
                run_count: rec.map_or(0, |r| r.run_count),
                failure_count: rec.map_or(0, |r| r.failure_count),
                live_instances,
            }
        })
        .collect();
    out.sort_by(|a, b| (&a.application_name, a.application_id).cmp(&(&b.application_name, b.application_id)));
    out
}
