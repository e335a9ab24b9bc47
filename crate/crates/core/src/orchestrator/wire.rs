//! Client for the EC2-like provider protocol.
//!
//! Requests are form-encoded POSTs carrying an `Action` plus its parameters.
//! Each request is signed with HMAC-SHA-256 under the account's secret key
//! over the canonical string
//!
//! ```text
//! <METHOD>\n<path>\n<sorted, percent-encoded params>\n<timestamp>
//! ```
//!
//! where the parameter list excludes `Signature` and `Timestamp`. Responses
//! come back as XML or JSON depending on the `Accept` header.

use std::fmt;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use chrono::{DateTime, SecondsFormat, Utc};
use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use super::state::ProviderState;

pub const SIGNATURE_METHOD: &str = "HmacSHA256";
pub const API_VERSION: &str = "2016-11-15";

#[derive(Clone, PartialEq, Eq)]
pub struct WireCredentials {
    pub access_key_id: String,
    pub secret_key: String,
}

impl fmt::Debug for WireCredentials {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WireCredentials")
            .field("access_key_id", &self.access_key_id)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WireFormat {
    #[default]
    Xml,
    Json,
}

impl WireFormat {
    fn accept(self) -> &'static str {
        match self {
            WireFormat::Xml => "application/xml",
            WireFormat::Json => "application/json",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WireError {
    #[error("authentication failed: {code}: {message}")]
    AuthFailed { code: String, message: String },
    #[error("provider error {status}: {code}: {message}")]
    Provider {
        status: u16,
        code: String,
        message: String,
    },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("transport error: {0}")]
    Transport(String),
}

/// Observed state of one instance. `state == None` means the provider
/// answered "not-found".
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceReport {
    pub instance_id: String,
    pub state: Option<ProviderState>,
    pub public_address: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunResult {
    pub reservation_id: String,
    pub instance_id: String,
    pub state: Option<ProviderState>,
}

/// RFC 3986 percent-encoding: unreserved characters pass, everything else is
/// `%XX` with upper-case hex.
pub fn percent_encode(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.' | b'~') {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

pub fn canonical_request(method: &str, path: &str, params: &[(String, String)], timestamp: &str) -> String {
    let mut signed: Vec<(String, String)> = params
        .iter()
        .filter(|(k, _)| k != "Signature" && k != "Timestamp")
        .map(|(k, v)| (percent_encode(k), percent_encode(v)))
        .collect();
    signed.sort();
    let query = signed
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join("&");
    format!(
        "{}\n{}\n{}\n{}",
        method.to_ascii_uppercase(),
        path,
        query,
        timestamp
    )
}

pub fn sign(secret_key: &str, canonical: &str) -> String {
    let mut mac = Hmac::<Sha256>::new_from_slice(secret_key.as_bytes()).expect("hmac accepts any key length");
    mac.update(canonical.as_bytes());
    hex::encode(mac.finalize().into_bytes())
}

pub fn format_timestamp(at: DateTime<Utc>) -> String {
    at.to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Builds the signed form for one action. Exposed so conformance tests can
/// check it against an independent signer.
pub fn signed_params(
    path: &str,
    creds: &WireCredentials,
    action: &str,
    mut params: Vec<(String, String)>,
    at: DateTime<Utc>,
) -> Vec<(String, String)> {
    let timestamp = format_timestamp(at);
    params.push(("Action".into(), action.into()));
    params.push(("Version".into(), API_VERSION.into()));
    params.push(("AccessKeyId".into(), creds.access_key_id.clone()));
    params.push(("SignatureMethod".into(), SIGNATURE_METHOD.into()));
    params.push(("Timestamp".into(), timestamp.clone()));
    let canonical = canonical_request("POST", path, &params, &timestamp);
    params.push(("Signature".into(), sign(&creds.secret_key, &canonical)));
    params
}

fn parse_state(name: &str) -> Result<Option<ProviderState>, WireError> {
    Ok(Some(match name {
        "pending" => ProviderState::Pending,
        "running" => ProviderState::Running,
        "shutting-down" => ProviderState::ShuttingDown,
        "terminated" => ProviderState::Terminated,
        "failed" => ProviderState::Failed,
        "not-found" => return Ok(None),
        other => return Err(WireError::MalformedResponse(format!("unknown state `{other}`"))),
    }))
}

mod xml {
    use serde::Deserialize;

    #[derive(Debug, Deserialize)]
    pub struct StateName {
        pub name: String,
    }

    #[derive(Debug, Deserialize)]
    #[serde(rename_all = "camelCase")]
    pub struct Item {
        pub instance_id: String,
        pub instance_state: StateName,
        #[serde(default)]
        pub ip_address: Option<String>,
    }

    #[derive(Debug, Default, Deserialize)]
    pub struct ItemSet {
        #[serde(default)]
        pub item: Vec<Item>,
    }

    #[derive(Debug, Deserialize)]
    #[serde(rename_all = "camelCase")]
    pub struct Instances {
        #[serde(default)]
        pub reservation_id: Option<String>,
        #[serde(default)]
        pub instances_set: ItemSet,
    }

    #[derive(Debug, Deserialize)]
    pub struct ErrorBody {
        #[serde(rename = "Code")]
        pub code: String,
        #[serde(rename = "Message", default)]
        pub message: String,
    }

    #[derive(Debug, Deserialize)]
    pub struct Errors {
        #[serde(rename = "Error")]
        pub error: ErrorBody,
    }

    #[derive(Debug, Deserialize)]
    pub struct ErrorResponse {
        #[serde(rename = "Errors")]
        pub errors: Errors,
    }
}

mod json {
    use serde::Deserialize;

    #[derive(Debug, Deserialize)]
    #[serde(rename_all = "camelCase")]
    pub struct Item {
        pub instance_id: String,
        pub state: String,
        #[serde(default)]
        pub ip_address: Option<String>,
    }

    #[derive(Debug, Deserialize)]
    #[serde(rename_all = "camelCase")]
    pub struct Instances {
        #[serde(default)]
        pub reservation_id: Option<String>,
        #[serde(default)]
        pub instances: Vec<Item>,
    }

    #[derive(Debug, Deserialize)]
    pub struct ErrorBody {
        pub code: String,
        #[serde(default)]
        pub message: String,
    }

    #[derive(Debug, Deserialize)]
    pub struct ErrorResponse {
        pub error: ErrorBody,
    }
}

/// Reservation id (if any) plus per-instance reports.
type Parsed = (Option<String>, Vec<InstanceReport>);

fn parse_instances(format: WireFormat, body: &str) -> Result<Parsed, WireError> {
    let malformed = |e: &dyn fmt::Display| WireError::MalformedResponse(e.to_string());
    match format {
        WireFormat::Xml => {
            let doc: xml::Instances = quick_xml::de::from_str(body).map_err(|e| malformed(&e))?;
            let items = doc
                .instances_set
                .item
                .into_iter()
                .map(|i| {
                    Ok(InstanceReport {
                        state: parse_state(&i.instance_state.name)?,
                        instance_id: i.instance_id,
                        public_address: i.ip_address.filter(|a| !a.is_empty()),
                    })
                })
                .collect::<Result<_, WireError>>()?;
            Ok((doc.reservation_id, items))
        }
        WireFormat::Json => {
            let doc: json::Instances = serde_json::from_str(body).map_err(|e| malformed(&e))?;
            let items = doc
                .instances
                .into_iter()
                .map(|i| {
                    Ok(InstanceReport {
                        state: parse_state(&i.state)?,
                        instance_id: i.instance_id,
                        public_address: i.ip_address.filter(|a| !a.is_empty()),
                    })
                })
                .collect::<Result<_, WireError>>()?;
            Ok((doc.reservation_id, items))
        }
    }
}

fn parse_error(format: WireFormat, status: u16, body: &str) -> WireError {
    let parsed = match format {
        WireFormat::Xml => quick_xml::de::from_str::<xml::ErrorResponse>(body)
            .ok()
            .map(|e| (e.errors.error.code, e.errors.error.message)),
        WireFormat::Json => serde_json::from_str::<json::ErrorResponse>(body)
            .ok()
            .map(|e| (e.error.code, e.error.message)),
    };
    match parsed {
        Some((code, message)) if code == "SignatureDoesNotMatch" || code == "AuthFailure" => {
            WireError::AuthFailed { code, message }
        }
        Some((code, message)) => WireError::Provider {
            status,
            code,
            message,
        },
        None if status >= 500 => WireError::Provider {
            status,
            code: "ServiceUnavailable".into(),
            message: body.chars().take(200).collect(),
        },
        None => WireError::MalformedResponse(format!("status {status} with unparsable body")),
    }
}

#[derive(Debug, Clone)]
pub struct WireClient {
    http: reqwest::Client,
    format: WireFormat,
}

impl Default for WireClient {
    fn default() -> Self {
        Self::new(WireFormat::Xml)
    }
}

impl WireClient {
    pub fn new(format: WireFormat) -> Self {
        let http = reqwest::Client::builder()
            .timeout(std::time::Duration::from_secs(10))
            .build()
            .expect("http client builds");
        Self { http, format }
    }

    pub fn format(&self) -> WireFormat {
        self.format
    }

    async fn call(
        &self,
        endpoint: &str,
        creds: &WireCredentials,
        action: &str,
        params: Vec<(String, String)>,
    ) -> Result<Parsed, WireError> {
        let url = url::Url::parse(endpoint)
            .map_err(|e| WireError::Transport(format!("bad endpoint `{endpoint}`: {e}")))?;
        let form = signed_params(url.path(), creds, action, params, Utc::now());
        let resp = self
            .http
            .post(url)
            .header(reqwest::header::ACCEPT, self.format.accept())
            .form(&form)
            .send()
            .await
            .map_err(|e| WireError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .text()
            .await
            .map_err(|e| WireError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(parse_error(self.format, status, &body));
        }
        parse_instances(self.format, &body)
    }

    pub async fn run_instances(
        &self,
        endpoint: &str,
        creds: &WireCredentials,
        external_image_id: &str,
        instance_type: &str,
        user_data: Option<&str>,
    ) -> Result<RunResult, WireError> {
        let mut params = vec![
            ("ImageId".to_string(), external_image_id.to_string()),
            ("InstanceType".to_string(), instance_type.to_string()),
            ("MinCount".to_string(), "1".to_string()),
            ("MaxCount".to_string(), "1".to_string()),
        ];
        if let Some(data) = user_data {
            params.push(("UserData".into(), STANDARD.encode(data)));
        }
        let (reservation, mut items) = self.call(endpoint, creds, "RunInstances", params).await?;
        let reservation_id =
            reservation.ok_or_else(|| WireError::MalformedResponse("missing reservationId".into()))?;
        if items.len() != 1 {
            return Err(WireError::MalformedResponse(format!(
                "expected one instance, got {}",
                items.len()
            )));
        }
        let item = items.remove(0);
        Ok(RunResult {
            reservation_id,
            instance_id: item.instance_id,
            state: item.state,
        })
    }

    pub async fn describe_instances(
        &self,
        endpoint: &str,
        creds: &WireCredentials,
        instance_ids: &[String],
    ) -> Result<Vec<InstanceReport>, WireError> {
        let params = instance_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (format!("InstanceId.{}", i + 1), id.clone()))
            .collect();
        Ok(self.call(endpoint, creds, "DescribeInstances", params).await?.1)
    }

    pub async fn terminate_instances(
        &self,
        endpoint: &str,
        creds: &WireCredentials,
        instance_ids: &[String],
    ) -> Result<Vec<InstanceReport>, WireError> {
        let params = instance_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (format!("InstanceId.{}", i + 1), id.clone()))
            .collect();
        Ok(self.call(endpoint, creds, "TerminateInstances", params).await?.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percent_encoding_is_rfc3986() {
        assert_eq!(percent_encode("a b+c/d~e_f.g-h"), "a%20b%2Bc%2Fd~e_f.g-h");
        assert_eq!(percent_encode("é"), "%C3%A9");
    }

    #[test]
    fn canonical_form_sorts_and_drops_signature_and_timestamp() {
        let params = vec![
            ("b".to_string(), "2".to_string()),
            ("Signature".to_string(), "zzz".to_string()),
            ("a".to_string(), "x y".to_string()),
            ("Timestamp".to_string(), "t".to_string()),
        ];
        assert_eq!(
            canonical_request("post", "/", &params, "2026-01-01T00:00:00Z"),
            "POST\n/\na=x%20y&b=2\n2026-01-01T00:00:00Z"
        );
    }

    #[test]
    fn hmac_known_answer() {
        // RFC 4231 test case 2
        assert_eq!(
            sign("Jefe", "what do ya want for nothing?"),
            "5bdcc146bf60754e6a042426089575c75a003f089d2739839dec58b964ec3843"
        );
    }

    #[test]
    fn parses_xml_and_json_bodies() {
        let xml = "<RunInstancesResponse><reservationId>r-000001</reservationId><instancesSet><item><instanceId>i-000001</instanceId><instanceState><name>pending</name></instanceState></item></instancesSet></RunInstancesResponse>";
        let (r, items) = parse_instances(WireFormat::Xml, xml).unwrap();
        assert_eq!(r.as_deref(), Some("r-000001"));
        assert_eq!(items[0].state, Some(ProviderState::Pending));

        let empty = "<DescribeInstancesResponse><instancesSet/></DescribeInstancesResponse>";
        assert!(parse_instances(WireFormat::Xml, empty).unwrap().1.is_empty());

        let json = r#"{"instances":[{"instanceId":"i-2","state":"running","ipAddress":"10.0.0.2"},{"instanceId":"i-3","state":"not-found"}]}"#;
        let (_, items) = parse_instances(WireFormat::Json, json).unwrap();
        assert_eq!(items[0].public_address.as_deref(), Some("10.0.0.2"));
        assert_eq!(items[1].state, None);

        assert!(matches!(
            parse_instances(WireFormat::Json, "{not json"),
            Err(WireError::MalformedResponse(_))
        ));
    }

    #[test]
    fn error_bodies_map_to_kinds() {
        let xml = "<Response><Errors><Error><Code>SignatureDoesNotMatch</Code><Message>bad</Message></Error></Errors></Response>";
        assert!(matches!(
            parse_error(WireFormat::Xml, 403, xml),
            WireError::AuthFailed { code, .. } if code == "SignatureDoesNotMatch"
        ));
        let json = r#"{"error":{"code":"InstanceLimitExceeded","message":"full"}}"#;
        assert!(matches!(
            parse_error(WireFormat::Json, 400, json),
            WireError::Provider { code, .. } if code == "InstanceLimitExceeded"
        ));
        assert!(matches!(
            parse_error(WireFormat::Json, 503, "down"),
            WireError::Provider { status: 503, .. }
        ));
    }
}
