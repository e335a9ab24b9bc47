use std::sync::Arc;

use axum::body::Bytes;
use serde_json::Value;
use url::Url;

use crate::stub::Stub;

#[derive(Debug, Clone)]
pub struct Request {
    pub method: &'static str,
    pub url: Url,
    pub bearer: Option<String>,
    pub body: Option<Value>,
}

#[derive(Debug, Clone)]
pub struct Response {
    pub status: u16,
    pub body: Bytes,
}

#[derive(Debug, Clone)]
pub enum Transport {
    Http(reqwest::Client),
    /// Calls the stub directly; no sockets, so a paused clock drives it.
    InProcess(Arc<Stub>),
}

impl Transport {
    pub fn http(max_idle: usize) -> Self {
        Transport::Http(
            reqwest::Client::builder()
                .pool_max_idle_per_host(max_idle)
                .build()
                .expect("http client"),
        )
    }

    pub async fn send(&self, req: Request) -> Result<Response, String> {
        match self {
            Transport::Http(client) => {
                let method = reqwest::Method::from_bytes(req.method.as_bytes()).map_err(|e| e.to_string())?;
                let mut rb = client.request(method, req.url);
                if let Some(t) = req.bearer {
                    rb = rb.bearer_auth(t);
                }
                if let Some(b) = req.body {
                    rb = rb.json(&b);
                }
                let resp = rb.send().await.map_err(|e| e.to_string())?;
                let status = resp.status().as_u16();
                let body = resp.bytes().await.map_err(|e| e.to_string())?;
                Ok(Response { status, body })
            }
            Transport::InProcess(stub) => {
                let (status, body) = stub.handle(req.method, req.url.path()).await;
                Ok(Response { status, body })
            }
        }
    }
}
