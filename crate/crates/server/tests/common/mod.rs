#![allow(dead_code)]

pub mod flow;

use std::sync::Arc;

use gridhall_core::clock::ManualClock;
use gridhall_core::identity::CapturingNotifier;
use gridhall_core::orchestrator::ProviderDescriptor;
use gridhall_core::platform::testing::{fixture_with, offline_providers, BackendKind, Fixture};
use gridhall_core::Platform;
use gridhall_server::Running;
use reqwest::{Method, StatusCode};
use serde_json::{json, Value};

/// Which mount a request goes to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mount {
    Browser,
    Api,
}

impl Mount {
    pub const ALL: [Mount; 2] = [Mount::Browser, Mount::Api];

    pub fn path(self, path: &str) -> String {
        match self {
            Mount::Browser => path.to_string(),
            Mount::Api if path == "/" => "/api/v1".to_string(),
            Mount::Api => format!("/api/v1{path}"),
        }
    }
}

pub struct Env {
    pub server: Running,
    pub platform: Arc<Platform>,
    pub clock: Arc<ManualClock>,
    pub notifier: Arc<CapturingNotifier>,
    pub dir: tempfile::TempDir,
    pub http: reqwest::Client,
    pub mount: Mount,
}

pub struct Reply {
    pub status: StatusCode,
    pub body: Value,
    pub headers: reqwest::header::HeaderMap,
}

impl Reply {
    #[track_caller]
    pub fn expect(self, status: u16) -> Value {
        assert_eq!(
            self.status.as_u16(),
            status,
            "unexpected status; body: {}",
            self.body
        );
        self.body
    }

    pub fn code(&self) -> &str {
        self.body["code"].as_str().unwrap_or("")
    }
}

impl Env {
    pub async fn start(backend: BackendKind, providers: Vec<ProviderDescriptor>) -> Env {
        let Fixture {
            mut platform,
            clock,
            notifier,
            dir,
        } = fixture_with(backend, providers);
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.expect("bind");
        platform.config.public_base_url = format!("http://{}", listener.local_addr().unwrap());
        let platform = Arc::new(platform);
        let server = gridhall_server::serve_on(listener, platform.clone(), false).expect("server");
        Env {
            server,
            platform,
            clock,
            notifier,
            dir,
            http: reqwest::Client::new(),
            mount: Mount::Api,
        }
    }

    pub async fn offline(backend: BackendKind) -> Env {
        Self::start(backend, offline_providers()).await
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.server.url(), self.mount.path(path))
    }

    pub fn raw_url(&self, path: &str) -> String {
        format!("{}{}", self.server.url(), path)
    }

    pub async fn send(&self, method: Method, path: &str, token: Option<&str>, body: Option<Value>) -> Reply {
        self.send_raw(method, &self.url(path), token, body).await
    }

    pub async fn send_raw(
        &self,
        method: Method,
        url: &str,
        token: Option<&str>,
        body: Option<Value>,
    ) -> Reply {
        let mut req = self.http.request(method, url);
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        if let Some(b) = body {
            req = req.json(&b);
        }
        let resp = req.send().await.expect("request");
        let status = resp.status();
        let headers = resp.headers().clone();
        let bytes = resp.bytes().await.expect("body");
        let body = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes)
                .unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
        };
        Reply {
            status,
            body,
            headers,
        }
    }

    pub async fn get(&self, path: &str, token: Option<&str>) -> Reply {
        self.send(Method::GET, path, token, None).await
    }

    pub async fn post(&self, path: &str, token: Option<&str>, body: Value) -> Reply {
        self.send(Method::POST, path, token, Some(body)).await
    }

    pub async fn delete(&self, path: &str, token: Option<&str>) -> Reply {
        self.send(Method::DELETE, path, token, None).await
    }

    /// Registers and logs in over HTTP; returns the session token.
    pub async fn login(&self, name: &str) -> String {
        let pw = format!("pw-{name}-123");
        self.post(
            "/auth/register",
            None,
            json!({"username": name, "email": format!("{name}@example.org"), "password": pw}),
        )
        .await
        .expect(201);
        let s = self
            .post("/auth/login", None, json!({"username": name, "password": pw}))
            .await
            .expect(200);
        s["token"].as_str().unwrap().to_string()
    }

    /// Like [`login`](Self::login), then switches to the provider role.
    pub async fn provider(&self, name: &str) -> String {
        let token = self.login(name).await;
        self.post("/session/role", Some(&token), json!({"role": "provider"}))
            .await
            .expect(200);
        token
    }

    pub async fn create_app(&self, token: &str, name: &str) -> String {
        let app = self
            .post(
                "/apps",
                Some(token),
                json!({"name": name, "description": format!("{name} project"), "branch": "science",
                       "category": "physics", "subcategory": "particles", "keywords": ["demo"]}),
            )
            .await
            .expect(201);
        app["application_id"].as_str().unwrap().to_string()
    }

    pub async fn upload(&self, token: &str, app: &str, bytes: Vec<u8>) -> Value {
        let resp = self
            .http
            .put(self.url(&format!("/apps/{app}/images/local")))
            .bearer_auth(token)
            .body(bytes)
            .send()
            .await
            .unwrap();
        let status = resp.status();
        let body: Value = resp.json().await.unwrap();
        assert_eq!(status, StatusCode::CREATED, "{body}");
        body
    }

    pub async fn metrics(&self) -> Value {
        self.send_raw(Method::GET, &self.raw_url("/metrics"), None, None)
            .await
            .expect(200)
    }
}

/// Replaces identifiers, digests, tokens and timestamps so that two runs of
/// the same flow can be compared.
pub fn normalize(text: &str) -> String {
    use regex::Regex;
    use std::sync::OnceLock;
    static RULES: OnceLock<Vec<(Regex, &'static str)>> = OnceLock::new();
    let rules = RULES.get_or_init(|| {
        vec![
            (Regex::new(r"http://127\.0\.0\.1:\d+").unwrap(), "<origin>"),
            (Regex::new(r"\$argon2[^\s\x22]*").unwrap(), "<digest>"),
            (
                Regex::new(r"[0-9a-f]{8}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{12}").unwrap(),
                "<uuid>",
            ),
            (Regex::new(r"[0-9a-f]{32,}").unwrap(), "<hex>"),
            (Regex::new(r"gh[st]_[A-Za-z0-9_-]+").unwrap(), "<token>"),
            (
                Regex::new(r#""(nonce|ciphertext)":\s*"[^"]*""#).unwrap(),
                "\"$1\":\"<b64>\"",
            ),
            (Regex::new(r"s:[0-9a-f<>hex]{4,}").unwrap(), "s:<session>"),
        ]
    });
    let mut out = text.to_string();
    for (re, rep) in rules {
        out = re.replace_all(&out, *rep).into_owned();
    }
    out
}

/// Normalized storage dump with lines sorted, so that row-key order (which
/// depends on random ids) does not matter.
pub fn normalized_dump(platform: &Platform) -> Vec<String> {
    let dump = String::from_utf8(platform.storage.dump().unwrap()).unwrap();
    let mut lines: Vec<String> = dump.lines().map(normalize).collect();
    lines.sort();
    lines
}
