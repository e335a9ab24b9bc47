//! Sequential vs data-parallel execution of the scan-heavy paths.

use chrono::{Duration, TimeZone, Utc};
use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gridhall_core::analytics::{
    compute_stats, compute_usage, EventKind, EventRecord, ParticipationRecord, StatsInputs, Window,
};
use gridhall_core::exec::Exec;
use gridhall_core::ids::{AppId, EventId, UserId};
use gridhall_core::registry::{
    search_directory, Application, DirectoryEntry, SearchQuery, SortColumn, Visibility,
};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];
const WORDS: [&str; 8] = [
    "galaxy", "protein", "bird", "climate", "whale", "archive", "music", "cells",
];

fn directory(n: usize) -> Vec<DirectoryEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    (0..n)
        .map(|i| DirectoryEntry {
            application_id: AppId::new(),
            name: format!("{} {i}", WORDS[rng.gen_range(0..WORDS.len())]),
            description: (0..12)
                .map(|_| WORDS[rng.gen_range(0..WORDS.len())])
                .collect::<Vec<_>>()
                .join(" "),
            keywords: vec![WORDS[rng.gen_range(0..WORDS.len())].into()],
            branch: "science".into(),
            category: WORDS[rng.gen_range(0..WORDS.len())].into(),
            subcategory: "x".into(),
            owner: format!("owner{}", i % 97),
        })
        .collect()
}

fn events(n: usize) -> Vec<EventRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let t0 = Utc.with_ymd_and_hms(2026, 1, 1, 0, 0, 0).unwrap();
    let users: Vec<UserId> = (0..500).map(|_| UserId::new()).collect();
    let mut v: Vec<EventRecord> = (0..n)
        .map(|_| {
            let s = rng.gen_range(0..n / 8 + 1);
            EventRecord {
                event_id: EventId::new(),
                user_id: (s % 3 != 0).then(|| users[s % users.len()]),
                kind: EventKind::ALL[rng.gen_range(0..EventKind::ALL.len())],
                subject: None,
                occurred_at: t0 + Duration::seconds(rng.gen_range(0..90 * 86_400)),
                session_key: format!("s{s}"),
            }
        })
        .collect();
    v.sort_by_key(|e| e.occurred_at);
    v
}

fn bench_search(c: &mut Criterion) {
    let mut g = c.benchmark_group("search_directory");
    for n in [10_000usize, 100_000] {
        let entries = directory(n);
        let q = SearchQuery {
            text: "whale".into(),
            sort_column: SortColumn::Category,
            ..SearchQuery::default()
        };
        for (name, exec) in MODES {
            g.bench_with_input(BenchmarkId::new(name, n), &entries, |b, e| {
                b.iter(|| search_directory(black_box(e), &q, exec).unwrap())
            });
        }
    }
    g.finish();
}

fn bench_usage(c: &mut Criterion) {
    let mut g = c.benchmark_group("compute_usage");
    let start = Utc.with_ymd_and_hms(2026, 2, 1, 0, 0, 0).unwrap();
    let w = Window::new(start, start + Duration::days(30)).unwrap();
    for n in [10_000usize, 200_000] {
        let evs = events(n);
        for (name, exec) in MODES {
            g.bench_with_input(BenchmarkId::new(name, n), &evs, |b, e| {
                b.iter(|| compute_usage(black_box(e), w, exec))
            });
        }
    }
    g.finish();
}

fn bench_stats(c: &mut Criterion) {
    let mut g = c.benchmark_group("compute_stats");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let now = Utc.with_ymd_and_hms(2026, 3, 1, 0, 0, 0).unwrap();
    let owner = UserId::new();
    let applications: Vec<Application> = (0..5_000)
        .map(|i| Application {
            application_id: AppId::new(),
            name: format!("app {i}"),
            description: String::new(),
            keywords: vec![],
            branch: WORDS[i % 3].into(),
            category: WORDS[i % 8].into(),
            subcategory: format!("sub{}", i % 20),
            owner_id: owner,
            visibility: Visibility::Public,
            project_server_url: None,
            created_at: now,
        })
        .collect();
    let mut evs = events(100_000);
    for e in &mut evs {
        e.subject = Some(applications[rng.gen_range(0..applications.len())].application_id);
    }
    let participation = (0..50_000)
        .map(|_| ParticipationRecord {
            user_id: UserId::new(),
            application_id: applications[rng.gen_range(0..applications.len())].application_id,
            first_run_at: Some(now),
            run_count: rng.gen_range(1..10),
            failure_count: 0,
        })
        .collect();
    let inputs = StatsInputs {
        user_count: 50_000,
        applications,
        events: evs,
        instances: vec![],
        participation,
    };
    for (name, exec) in MODES {
        g.bench_function(name, |b| {
            b.iter(|| compute_stats(black_box(&inputs), now, Duration::days(30), exec))
        });
    }
    g.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_search, bench_usage, bench_stats
}
criterion_main!(benches);
