//! Load reports: exact percentiles over the full sample set, a human table,
//! and p95 regression comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use gridhall_core::exec::{self, Exec};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SwarmError};

/// One completed request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sample {
    /// Index into the route-name table.
    pub route: u32,
    pub latency_us: u64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteStats {
    pub request_count: u64,
    pub failure_count: u64,
    pub p50_us: u64,
    pub p90_us: u64,
    pub p95_us: u64,
    pub p99_us: u64,
    pub max_us: u64,
    pub mean_us: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub target: String,
    pub seed: u64,
    pub user_count: u32,
    pub duration_secs: f64,
    pub total_requests: u64,
    pub total_failures: u64,
    pub failure_rate: f64,
    /// Requests sent per second, successful or not.
    pub offered_rps: f64,
    /// Successful requests per second.
    pub achieved_rps: f64,
    pub peak_concurrent_users: u32,
    pub peak_open_requests: u32,
    /// Scenario iterations abandoned because a capture or variable was
    /// missing; these sent no request and are not in the route rows.
    pub script_errors: u64,
    pub routes: BTreeMap<String, RouteStats>,
}

/// Nearest-rank percentile of an ascending slice, in integer arithmetic.
pub fn percentile(sorted: &[u64], p: u32) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let n = sorted.len() as u64;
    let rank = (u64::from(p.min(100)) * n).div_ceil(100) as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn route_stats(latencies: &mut [u64], failures: u64, exec: Exec) -> RouteStats {
    exec::sort_by(latencies, |a, b| a.cmp(b), exec);
    let n = latencies.len() as u64;
    let sum: u128 = latencies.iter().map(|&x| x as u128).sum();
    RouteStats {
        request_count: n,
        failure_count: failures,
        p50_us: percentile(latencies, 50),
        p90_us: percentile(latencies, 90),
        p95_us: percentile(latencies, 95),
        p99_us: percentile(latencies, 99),
        max_us: latencies.last().copied().unwrap_or(0),
        mean_us: if n == 0 { 0 } else { (sum / n as u128) as u64 },
    }
}

/// Per-route statistics; routes without samples are omitted.
pub fn summarize(samples: &[Sample], names: &[String], exec: Exec) -> BTreeMap<String, RouteStats> {
    let mut buckets: Vec<(Vec<u64>, u64)> = vec![(Vec::new(), 0); names.len()];
    for s in samples {
        let b = &mut buckets[s.route as usize];
        b.0.push(s.latency_us);
        b.1 += u64::from(!s.ok);
    }
    let indexed: Vec<(usize, (Vec<u64>, u64))> = buckets
        .into_iter()
        .enumerate()
        .filter(|(_, b)| !b.0.is_empty())
        .collect();
    // Each route sorts sequentially; routes are spread over threads.
    let stats = exec::map_collect(
        &indexed,
        |(i, (lat, fails))| {
            let mut lat = lat.clone();
            (names[*i].clone(), route_stats(&mut lat, *fails, Exec::Sequential))
        },
        exec,
    );
    stats.into_iter().collect()
}

impl LoadReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<20} {:>8} {:>7} {:>9} {:>9} {:>9} {:>9} {:>9}",
            "route", "reqs", "fails", "p50 ms", "p90 ms", "p95 ms", "p99 ms", "max ms"
        );
        let ms = |us: u64| us as f64 / 1000.0;
        for (name, r) in &self.routes {
            let _ = writeln!(
                out,
                "{:<20} {:>8} {:>7} {:>9.1} {:>9.1} {:>9.1} {:>9.1} {:>9.1}",
                name,
                r.request_count,
                r.failure_count,
                ms(r.p50_us),
                ms(r.p90_us),
                ms(r.p95_us),
                ms(r.p99_us),
                ms(r.max_us)
            );
        }
        let _ = writeln!(
            out,
            "{} requests, {} failures ({:.2}%) in {:.1}s; {:.1} req/s offered, {:.1} req/s achieved; \
             peak {} users, {} open requests",
            self.total_requests,
            self.total_failures,
            self.failure_rate * 100.0,
            self.duration_secs,
            self.offered_rps,
            self.achieved_rps,
            self.peak_concurrent_users,
            self.peak_open_requests
        );
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regression {
    pub route: String,
    pub baseline_p95_us: u64,
    pub candidate_p95_us: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub threshold_pct: f64,
    pub regressions: Vec<Regression>,
}

impl Verdict {
    pub fn passed(&self) -> bool {
        self.regressions.is_empty()
    }
}

/// Flags routes whose p95 grew by more than `threshold_pct` percent.
pub fn compare_reports(baseline: &LoadReport, candidate: &LoadReport, threshold_pct: f64) -> Result<Verdict> {
    if !(threshold_pct.is_finite() && threshold_pct >= 0.0) {
        return Err(SwarmError::ConfigInvalid(
            "threshold must be a non-negative number".into(),
        ));
    }
    let a: Vec<_> = baseline.routes.keys().collect();
    let b: Vec<_> = candidate.routes.keys().collect();
    if a != b {
        return Err(SwarmError::SchemaMismatch(format!(
            "route sets differ: {a:?} vs {b:?}"
        )));
    }
    let regressions = baseline
        .routes
        .iter()
        .filter_map(|(name, base)| {
            let cand = &candidate.routes[name];
            let limit = base.p95_us as f64 * (1.0 + threshold_pct / 100.0);
            (cand.p95_us as f64 > limit).then(|| Regression {
                route: name.clone(),
                baseline_p95_us: base.p95_us,
                candidate_p95_us: cand.p95_us,
            })
        })
        .collect();
    Ok(Verdict {
        threshold_pct,
        regressions,
    })
}
