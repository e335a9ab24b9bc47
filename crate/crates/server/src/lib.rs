//! HTTP transport for the platform: one router generated from the static
//! route table, bearer-token auth, JSON bodies and HTML page shells.

pub mod config;
pub mod download;
pub mod error;
pub mod handlers;
pub mod openapi;
pub mod pages;
pub mod routes;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{FromRequestParts, Request, State};
use axum::http::request::Parts;
use axum::http::{header, HeaderMap, Method};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{MethodFilter, MethodRouter};
use axum::Router;
use gridhall_core::auth::Caller;
use gridhall_core::Platform;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use utoipa::ToSchema;

use crate::error::ApiError;
use crate::routes::{HttpMethod, Route, ROUTES};

/// Counters exposed at `/metrics`.
#[derive(Debug, Default)]
pub struct Metrics {
    inner: Mutex<MetricsSnapshot>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize, ToSchema)]
pub struct MetricsSnapshot {
    /// Requests per route id, both mounts combined.
    pub requests: BTreeMap<String, u64>,
    /// Image responses carrying a body (200 or 206), per digest.
    pub downloads: BTreeMap<String, u64>,
    pub download_bytes: u64,
}

impl Metrics {
    pub fn request(&self, route: &str) {
        *self.inner.lock().requests.entry(route.to_string()).or_default() += 1;
    }

    pub fn download(&self, digest: &str, bytes: u64) {
        let mut m = self.inner.lock();
        *m.downloads.entry(digest.to_string()).or_default() += 1;
        m.download_bytes += bytes;
    }

    pub fn snapshot(&self) -> MetricsSnapshot {
        self.inner.lock().clone()
    }
}

#[derive(Clone)]
pub struct AppState {
    pub platform: Arc<Platform>,
    pub metrics: Arc<Metrics>,
}

impl AppState {
    pub fn new(platform: Arc<Platform>) -> Self {
        Self {
            platform,
            metrics: Arc::default(),
        }
    }
}

/// The authenticated caller; rejects with 401 when absent.
pub struct Auth(pub Caller);

/// The caller if a bearer was presented.
pub struct MaybeAuth(pub Option<Caller>);

impl<S: Send + Sync> FromRequestParts<S> for Auth {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, _: &S) -> Result<Self, ApiError> {
        parts
            .extensions
            .get::<Caller>()
            .cloned()
            .map(Auth)
            .ok_or_else(ApiError::unauthenticated)
    }
}

impl<S: Send + Sync> FromRequestParts<S> for MaybeAuth {
    type Rejection = std::convert::Infallible;

    async fn from_request_parts(parts: &mut Parts, _: &S) -> Result<Self, Self::Rejection> {
        Ok(MaybeAuth(parts.extensions.get::<Caller>().cloned()))
    }
}

pub fn bearer(headers: &HeaderMap) -> Option<&str> {
    let value = headers.get(header::AUTHORIZATION)?.to_str().ok()?;
    let (scheme, token) = value.split_once(' ')?;
    scheme.eq_ignore_ascii_case("bearer").then(|| token.trim())
}

fn wants_html(headers: &HeaderMap) -> bool {
    headers
        .get(header::ACCEPT)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.contains("text/html"))
}

/// Per-route gate: counts the request, serves page shells to browsers, then
/// resolves the bearer and enforces the route's scope.
async fn gate(
    State((state, route, browser)): State<(AppState, &'static Route, bool)>,
    mut req: Request,
    next: Next,
) -> Response {
    state.metrics.request(route.id);
    if browser && route.page && req.method() == Method::GET && wants_html(req.headers()) {
        return pages::shell(route).into_response();
    }
    let caller = match bearer(req.headers()) {
        Some(token) => match state.platform.caller(token) {
            Ok(c) => Some(c),
            Err(e) => return ApiError::from(e).into_response(),
        },
        None => None,
    };
    if let Some(scope) = route.scope() {
        match &caller {
            None => return ApiError::unauthenticated().into_response(),
            Some(c) if !c.has_scope(scope) => {
                return ApiError::new(
                    axum::http::StatusCode::FORBIDDEN,
                    "scope_required",
                    format!("this route requires the `{scope}` scope"),
                )
                .into_response()
            }
            Some(_) => {}
        }
    }
    if let Some(c) = caller {
        req.extensions_mut().insert(c);
    }
    next.run(req).await
}

fn filter(m: HttpMethod) -> MethodFilter {
    match m {
        HttpMethod::Get => MethodFilter::GET,
        HttpMethod::Post => MethodFilter::POST,
        HttpMethod::Put => MethodFilter::PUT,
        HttpMethod::Delete => MethodFilter::DELETE,
    }
}

fn mount(
    router: Router<AppState>,
    state: &AppState,
    route: &'static Route,
    path: &str,
    browser: bool,
) -> Router<AppState> {
    let endpoint: MethodRouter<AppState> = handlers::endpoint(route.id, filter(route.method)).layer(
        middleware::from_fn_with_state((state.clone(), route, browser), gate),
    );
    router.route(path, endpoint)
}

async fn unknown_route() -> ApiError {
    ApiError::new(
        axum::http::StatusCode::NOT_FOUND,
        "route_not_found",
        "no such route",
    )
}

async fn wrong_method() -> ApiError {
    ApiError::new(
        axum::http::StatusCode::METHOD_NOT_ALLOWED,
        "method_not_allowed",
        "method not allowed on this route",
    )
}

/// Builds the full router: every table entry at its browser path (unless it
/// is programmatic-only) and under the API prefix.
pub fn app(state: AppState) -> Router {
    let mut router = Router::new();
    for route in ROUTES {
        if let Some(path) = route.browser_path() {
            router = mount(router, &state, route, path, true);
        }
        router = mount(router, &state, route, &route.api_path(), false);
    }
    router
        .fallback(unknown_route)
        .method_not_allowed_fallback(wrong_method)
        .layer(tower_http::cors::CorsLayer::permissive())
        .with_state(state)
}

pub struct Running {
    pub addr: SocketAddr,
    pub state: AppState,
    server: tokio::task::JoinHandle<()>,
    poller: Option<tokio::task::JoinHandle<()>>,
}

impl Running {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for Running {
    fn drop(&mut self) {
        self.server.abort();
        if let Some(p) = &self.poller {
            p.abort();
        }
    }
}

/// Serves on an already-bound listener. With `poll` set, the background
/// instance poller runs alongside.
pub fn serve_on(
    listener: tokio::net::TcpListener,
    platform: Arc<Platform>,
    poll: bool,
) -> std::io::Result<Running> {
    let addr = listener.local_addr()?;
    let state = AppState::new(platform.clone());
    let router = app(state.clone());
    let server = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, router).await {
            tracing::error!(error = %e, "server stopped");
        }
    });
    let poller = poll.then(|| platform.spawn_poller());
    Ok(Running {
        addr,
        state,
        server,
        poller,
    })
}

/// Binds an ephemeral local port and serves.
pub async fn spawn(platform: Arc<Platform>, poll: bool) -> std::io::Result<Running> {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    serve_on(listener, platform, poll)
}
