//! Deterministic stub service: every request takes exactly the scripted
//! latency and returns one canned JSON document that satisfies the default
//! mix's captures. It counts requests and the high-water mark of requests in
//! flight, so a report can be cross-checked against it.
//!
//! Reachable in-process (reproducible under a paused clock) or over HTTP.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::http::{Method, Uri};
use parking_lot::Mutex;
use serde::Serialize;

#[derive(Debug)]
pub struct Stub {
    latency: Duration,
    body: Bytes,
    total: AtomicU64,
    open: AtomicUsize,
    peak_open: AtomicUsize,
    per_route: Mutex<BTreeMap<String, u64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StubStats {
    pub total_requests: u64,
    pub peak_open_requests: usize,
    /// Keyed by `METHOD path` without the query.
    pub per_route: BTreeMap<String, u64>,
}

struct Open<'a>(&'a AtomicUsize);

impl Drop for Open<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

impl Stub {
    pub fn new(latency: Duration) -> Arc<Self> {
        let items: Vec<_> = (1..=5)
            .map(|i| serde_json::json!({"application_id": format!("app-{i}")}))
            .collect();
        let body = serde_json::json!({
            "token": "stub-token",
            "total": items.len(),
            "items": items,
            "descriptor_id": "stub-descriptor",
            "image_download_url": format!("/images/{}", "0".repeat(64)),
        });
        Arc::new(Self {
            latency,
            body: Bytes::from(serde_json::to_vec(&body).expect("body serializes")),
            total: AtomicU64::new(0),
            open: AtomicUsize::new(0),
            peak_open: AtomicUsize::new(0),
            per_route: Mutex::new(BTreeMap::new()),
        })
    }

    pub async fn handle(&self, method: &str, path: &str) -> (u16, Bytes) {
        self.total.fetch_add(1, Ordering::SeqCst);
        *self
            .per_route
            .lock()
            .entry(format!("{method} {path}"))
            .or_default() += 1;
        let now = self.open.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak_open.fetch_max(now, Ordering::SeqCst);
        let _open = Open(&self.open);
        tokio::time::sleep(self.latency).await;
        (200, self.body.clone())
    }

    pub fn stats(&self) -> StubStats {
        StubStats {
            total_requests: self.total.load(Ordering::SeqCst),
            peak_open_requests: self.peak_open.load(Ordering::SeqCst),
            per_route: self.per_route.lock().clone(),
        }
    }

    pub fn router(self: Arc<Self>) -> axum::Router {
        axum::Router::new().fallback(move |method: Method, uri: Uri| {
            let stub = self.clone();
            async move {
                let (status, body) = stub.handle(method.as_str(), uri.path()).await;
                (
                    axum::http::StatusCode::from_u16(status).expect("valid status"),
                    [(axum::http::header::CONTENT_TYPE, "application/json")],
                    body,
                )
            }
        })
    }

    /// Serves over HTTP until the task is dropped.
    pub async fn serve(self: Arc<Self>, listener: tokio::net::TcpListener) -> std::io::Result<()> {
        axum::serve(listener, self.router()).await
    }
}
