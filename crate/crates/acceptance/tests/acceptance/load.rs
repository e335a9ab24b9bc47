//! Desk-scale load: 2000 logical users against a local deployment, and
//! reproducible runs against the deterministic stub.

use std::time::Duration;

use gridhall_core::platform::testing::BackendKind;
use gridhall_swarm::{run_against_stub, run_swarm, LoadReport, SwarmConfig, Transport};
use url::Url;

use crate::common::Env;

fn consistent(r: &LoadReport) {
    assert_eq!(
        r.routes.values().map(|s| s.request_count).sum::<u64>(),
        r.total_requests
    );
    assert_eq!(
        r.routes.values().map(|s| s.failure_count).sum::<u64>(),
        r.total_failures
    );
    for s in r.routes.values() {
        assert!(s.p50_us <= s.p90_us && s.p90_us <= s.p95_us && s.p95_us <= s.p99_us && s.p99_us <= s.max_us);
    }
}

pub async fn load(backend: BackendKind) {
    let env = Env::offline(backend).await;
    let owner = env.provider("owner").await;
    for i in 0..8u8 {
        let app = env.create_app(&owner, &format!("Project {i}")).await;
        env.upload(&owner, &app, vec![i; 16 * 1024]).await;
    }

    let mut cfg = SwarmConfig::new(
        Url::parse(&env.server.url()).unwrap(),
        2000,
        1000.0,
        Duration::from_secs(6),
        11,
    );
    cfg.mix.think_time_ms = [500, 2000];
    cfg.mix
        .scenario
        .iter_mut()
        .find(|s| s.name == "local_launch")
        .expect("local_launch scenario")
        .weight = 6;
    cfg.max_open_requests = 256;
    let report = run_swarm(cfg, Transport::http(256)).await.unwrap();
    consistent(&report);
    assert_eq!(report.peak_concurrent_users, 2000);
    assert!(report.failure_rate < 0.01, "failure rate {}", report.failure_rate);
    assert_eq!(report.script_errors, 0);
    for route in [
        "home",
        "search",
        "detail",
        "login",
        "dashboard",
        "issue_descriptor",
        "download",
    ] {
        assert!(report.routes.contains_key(route), "{route} not exercised");
    }
    let served: u64 = env.metrics().await["downloads"]
        .as_object()
        .unwrap()
        .values()
        .map(|v| v.as_u64().unwrap())
        .sum();
    let dl = &report.routes["download"];
    assert_eq!(
        served,
        dl.request_count - dl.failure_count,
        "downloads agree with the service counter"
    );

    let (a, b) = tokio::task::spawn_blocking(|| {
        let stub = |seed| {
            let mut cfg = SwarmConfig::new(
                Url::parse("http://stub.invalid").unwrap(),
                200,
                50.0,
                Duration::from_secs(10),
                seed,
            );
            cfg.max_open_requests = 64;
            run_against_stub(cfg, Duration::from_millis(5)).unwrap()
        };
        (stub(7), stub(7))
    })
    .await
    .unwrap();
    assert_eq!(
        serde_json::to_string(&a.0).unwrap(),
        serde_json::to_string(&b.0).unwrap(),
        "identical reports"
    );
    assert_eq!(a.1, b.1);
    assert_eq!(a.0.total_requests, a.1.total_requests);
    consistent(&a.0);
}
