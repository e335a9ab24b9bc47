//! HTTP front end: the wire endpoint (any POST outside `/_sim`) and the
//! `/_sim/*` control endpoints used by tests and demos.

use std::fmt::Write as _;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{header, HeaderMap, Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use quick_xml::escape::escape;
use serde::Deserialize;
use serde_json::json;

use crate::model::{
    ActionResult, LiveInstance, SimConfig, SimError, SimInstance, SimState, Simulator, WireRequest,
};

#[derive(Clone)]
pub struct Shared(Arc<Mutex<Simulator>>);

impl Shared {
    pub fn new(sim: Simulator) -> Self {
        Self(Arc::new(Mutex::new(sim)))
    }

    pub fn lock(&self) -> MutexGuard<'_, Simulator> {
        self.0.lock().unwrap_or_else(|p| p.into_inner())
    }
}

pub fn router(shared: Shared) -> Router {
    Router::new()
        .route("/_sim/tick", post(tick))
        .route("/_sim/fault", post(fault))
        .route("/_sim/live", get(live))
        .route("/_sim/instances", get(instances))
        .route("/_sim/script", post(script))
        .route("/_sim/keys", post(keys))
        .route("/_sim/config", get(get_config).post(set_config))
        .fallback(wire)
        .with_state(shared)
}

fn wants_json(headers: &HeaderMap) -> bool {
    headers
        .get(header::ACCEPT)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.contains("json"))
}

async fn wire(
    State(shared): State<Shared>,
    method: Method,
    uri: Uri,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let json = wants_json(&headers);
    if method != Method::POST {
        return render_error(json, &SimErrorView::new(405, "UnsupportedMethod", "use POST"));
    }
    let params: Vec<(String, String)> = match serde_urlencoded::from_bytes(&body) {
        Ok(p) => p,
        Err(e) => {
            return render_error(
                json,
                &SimErrorView::new(400, "MalformedQueryString", &e.to_string()),
            )
        }
    };
    let result = shared.lock().handle(&WireRequest {
        method: method.as_str(),
        path: uri.path(),
        params: &params,
        now: Utc::now(),
    });
    match result {
        Ok(r) if json => Json(render_json(&r)).into_response(),
        Ok(r) => ([(header::CONTENT_TYPE, "application/xml")], render_xml(&r)).into_response(),
        Err(e) => {
            tracing::debug!(code = e.code, "wire request rejected");
            render_error(json, &SimErrorView::from(&e))
        }
    }
}

struct SimErrorView<'a> {
    status: u16,
    code: &'a str,
    message: &'a str,
}

impl<'a> SimErrorView<'a> {
    fn new(status: u16, code: &'a str, message: &'a str) -> Self {
        Self {
            status,
            code,
            message,
        }
    }
}

impl<'a> From<&'a SimError> for SimErrorView<'a> {
    fn from(e: &'a SimError) -> Self {
        Self::new(e.status, e.code, &e.message)
    }
}

fn render_error(json: bool, e: &SimErrorView<'_>) -> Response {
    let status = StatusCode::from_u16(e.status).unwrap_or(StatusCode::BAD_REQUEST);
    if json {
        (
            status,
            Json(json!({"error": {"code": e.code, "message": e.message}})),
        )
            .into_response()
    } else {
        let body = format!(
            "<Response><Errors><Error><Code>{}</Code><Message>{}</Message></Error></Errors></Response>",
            escape(e.code),
            escape(e.message)
        );
        (status, [(header::CONTENT_TYPE, "application/xml")], body).into_response()
    }
}

pub fn render_json(r: &ActionResult) -> serde_json::Value {
    let items: Vec<serde_json::Value> = r
        .items
        .iter()
        .map(|i| {
            let mut v = json!({"instanceId": i.instance_id, "state": i.state});
            if let Some(ip) = &i.public_address {
                v["ipAddress"] = json!(ip);
            }
            v
        })
        .collect();
    let mut out = json!({"instances": items});
    if let Some(r) = &r.reservation_id {
        out["reservationId"] = json!(r);
    }
    out
}

pub fn render_xml(r: &ActionResult) -> String {
    let mut s = format!("<{}Response>", r.action);
    if let Some(id) = &r.reservation_id {
        let _ = write!(s, "<reservationId>{}</reservationId>", escape(id.as_str()));
    }
    s.push_str("<instancesSet>");
    for i in &r.items {
        let _ = write!(
            s,
            "<item><instanceId>{}</instanceId><instanceState><name>{}</name></instanceState>",
            escape(i.instance_id.as_str()),
            escape(i.state.as_str())
        );
        if let Some(ip) = &i.public_address {
            let _ = write!(s, "<ipAddress>{}</ipAddress>", escape(ip.as_str()));
        }
        s.push_str("</item>");
    }
    let _ = write!(s, "</instancesSet></{}Response>", r.action);
    s
}

#[derive(Deserialize)]
struct TickQuery {
    n: Option<u32>,
}

async fn tick(State(shared): State<Shared>, Query(q): Query<TickQuery>) -> Json<Vec<LiveInstance>> {
    let mut sim = shared.lock();
    sim.tick_all(q.n.unwrap_or(1));
    Json(sim.live())
}

#[derive(Deserialize)]
struct FaultBody {
    down: bool,
}

async fn fault(State(shared): State<Shared>, Json(b): Json<FaultBody>) -> StatusCode {
    shared.lock().set_fault(b.down);
    StatusCode::NO_CONTENT
}

async fn live(State(shared): State<Shared>) -> Json<Vec<LiveInstance>> {
    Json(shared.lock().live())
}

async fn instances(State(shared): State<Shared>) -> Json<Vec<SimInstance>> {
    Json(shared.lock().instances())
}

#[derive(Deserialize)]
struct ScriptBody {
    states: Vec<SimState>,
}

async fn script(State(shared): State<Shared>, Json(b): Json<ScriptBody>) -> StatusCode {
    shared.lock().set_script(Some(b.states));
    StatusCode::NO_CONTENT
}

#[derive(Deserialize)]
struct KeyBody {
    access_key_id: String,
    secret_key: String,
}

async fn keys(State(shared): State<Shared>, Json(b): Json<KeyBody>) -> StatusCode {
    shared.lock().add_key(&b.access_key_id, &b.secret_key);
    StatusCode::NO_CONTENT
}

#[derive(Deserialize)]
struct ConfigPatch {
    capacity: Option<usize>,
    run_delay_ticks: Option<u32>,
    fail_rate: Option<f64>,
    tick_on_describe: Option<bool>,
}

async fn get_config(State(shared): State<Shared>) -> Json<SimConfig> {
    Json(shared.lock().config().clone())
}

async fn set_config(State(shared): State<Shared>, Json(p): Json<ConfigPatch>) -> Json<SimConfig> {
    let mut sim = shared.lock();
    let c = sim.config_mut();
    if let Some(v) = p.capacity {
        c.capacity = v;
    }
    if let Some(v) = p.run_delay_ticks {
        c.run_delay_ticks = v;
    }
    if let Some(v) = p.fail_rate {
        c.fail_rate = v.clamp(0.0, 1.0);
    }
    if let Some(v) = p.tick_on_describe {
        c.tick_on_describe = v;
    }
    Json(c.clone())
}

/// A simulator serving on an ephemeral local port. Stops when dropped.
pub struct SimHandle {
    pub addr: SocketAddr,
    shared: Shared,
    task: tokio::task::JoinHandle<()>,
}

impl SimHandle {
    /// Endpoint URL for provider configuration, with a trailing slash.
    pub fn url(&self) -> String {
        format!("http://{}/", self.addr)
    }

    pub fn sim(&self) -> MutexGuard<'_, Simulator> {
        self.shared.lock()
    }

    pub fn add_key(&self, access_key_id: &str, secret_key: &str) {
        self.sim().add_key(access_key_id, secret_key);
    }

    pub fn live(&self) -> Vec<LiveInstance> {
        self.sim().live()
    }

    pub fn set_fault(&self, down: bool) {
        self.sim().set_fault(down);
    }
}

impl Drop for SimHandle {
    fn drop(&mut self) {
        self.task.abort();
    }
}

pub async fn spawn(config: SimConfig) -> std::io::Result<SimHandle> {
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", 0)).await?;
    serve_on(listener, config).await
}

pub async fn serve_on(listener: tokio::net::TcpListener, config: SimConfig) -> std::io::Result<SimHandle> {
    let addr = listener.local_addr()?;
    let shared = Shared::new(Simulator::new(config));
    let app = router(shared.clone());
    let task = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            tracing::error!("simulator stopped: {e}");
        }
    });
    Ok(SimHandle { addr, shared, task })
}
