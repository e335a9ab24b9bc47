//! Acceptance suite: one PASS/FAIL line per criterion, each run on every
//! storage backend. Exits non-zero if any criterion fails.

#[path = "../../../server/tests/common/mod.rs"]
mod common;

mod flows;
mod load;
mod models;

use std::future::Future;
use std::pin::Pin;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use gridhall_core::platform::testing::BackendKind;
use parking_lot::Mutex;

type Check = fn(BackendKind) -> Pin<Box<dyn Future<Output = ()> + Send>>;

const LIMIT: Duration = Duration::from_secs(300);

fn criteria() -> Vec<(&'static str, Check)> {
    vec![
        ("provider flow end to end", |b| Box::pin(flows::provider_flow(b))),
        ("volunteer flow matches provider live set", |b| {
            Box::pin(flows::volunteer_flow(b))
        }),
        ("local launch downloads once", |b| {
            Box::pin(flows::local_launch_cache_once(b))
        }),
        ("vault round trip, no plaintext, flips detected", |b| {
            Box::pin(models::vault(b))
        }),
        ("instance state machine", |b| Box::pin(models::state_machine(b))),
        ("analytics equal brute-force recounts", |b| {
            Box::pin(models::analytics(b))
        }),
        ("search equals brute-force filter and sort", |b| {
            Box::pin(models::search(b))
        }),
        ("api mount reproduces browser flows", |b| {
            Box::pin(flows::api_parity(b))
        }),
        ("wire signatures conform", |b| {
            Box::pin(flows::wire_conformance(b))
        }),
        ("2000-user load and reproducible stub runs", |b| {
            Box::pin(load::load(b))
        }),
    ]
}

fn backend_name(b: BackendKind) -> &'static str {
    match b {
        BackendKind::Memory => "memory",
        BackendKind::Sqlite => "sqlite",
    }
}

/// Runs one check; a panic inside it is a failure carrying its message.
async fn attempt(
    check: Check,
    backend: BackendKind,
    last_panic: &Mutex<Option<String>>,
) -> Result<Duration, String> {
    let start = Instant::now();
    *last_panic.lock() = None;
    match tokio::time::timeout(LIMIT, tokio::spawn(check(backend))).await {
        Err(_) => Err(format!("timed out after {LIMIT:?}")),
        Ok(Ok(())) => Ok(start.elapsed()),
        Ok(Err(_)) => Err(last_panic.lock().take().unwrap_or_else(|| "panicked".into())),
    }
}

fn line(pass: bool, name: &str, detail: &str) {
    println!("{}  {name:<48} {detail}", if pass { "PASS" } else { "FAIL" });
}

fn main() -> ExitCode {
    let last_panic: Arc<Mutex<Option<String>>> = Arc::default();
    let sink = last_panic.clone();
    std::panic::set_hook(Box::new(move |info| {
        let msg = info.to_string().split_whitespace().collect::<Vec<_>>().join(" ");
        sink.lock().get_or_insert(msg);
    }));
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(4)
        .enable_all()
        .build()
        .expect("runtime");

    let mut failed = 0;
    let mut all_backends_green = true;
    rt.block_on(async {
        for (name, check) in criteria() {
            let mut parts = Vec::new();
            let mut pass = true;
            for backend in BackendKind::ALL {
                match attempt(check, backend, &last_panic).await {
                    Ok(took) => parts.push(format!("{} {:.1}s", backend_name(backend), took.as_secs_f64())),
                    Err(why) => {
                        pass = false;
                        parts.push(format!("{}: {why}", backend_name(backend)));
                    }
                }
            }
            line(pass, name, &parts.join(" | "));
            failed += usize::from(!pass);
            all_backends_green &= pass;
        }

        let name = "backend parity";
        match attempt(
            |_| Box::pin(flows::backend_parity()),
            BackendKind::Memory,
            &last_panic,
        )
        .await
        {
            Ok(took) if all_backends_green => line(
                true,
                name,
                &format!(
                    "every criterion on both backends; dumps equal {:.1}s",
                    took.as_secs_f64()
                ),
            ),
            Ok(_) => {
                failed += 1;
                line(false, name, "some criterion failed on a backend");
            }
            Err(why) => {
                failed += 1;
                line(false, name, &why);
            }
        }
    });

    let total = criteria().len() + 1;
    println!("\nacceptance: {} passed, {failed} failed", total - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
