//! Request signature verification.
//!
//! The string to sign is
//!
//! ```text
//! <METHOD>\n<path>\n<k=v pairs, RFC 3986-encoded, sorted, joined by &>\n<Timestamp>
//! ```
//!
//! with `Signature` and `Timestamp` left out of the pair list. The signature
//! is the hex HMAC-SHA-256 of that string under the secret key.

use hmac::{Hmac, Mac};
use sha2::Sha256;

type HmacSha256 = Hmac<Sha256>;

fn encode(s: &str) -> String {
    const UNRESERVED: &[u8] = b"-_.~";
    let mut out = String::new();
    for &b in s.as_bytes() {
        if b.is_ascii_alphanumeric() || UNRESERVED.contains(&b) {
            out.push(char::from(b));
        } else {
            out.push('%');
            out.push_str(&hex::encode_upper([b]));
        }
    }
    out
}

pub fn string_to_sign(method: &str, path: &str, params: &[(String, String)]) -> String {
    let timestamp = params
        .iter()
        .find(|(k, _)| k == "Timestamp")
        .map(|(_, v)| v.as_str())
        .unwrap_or("");
    // Sorted by (key, value), not by the joined "k=v" text: "a.1" < "a.10".
    let mut pairs: Vec<(String, String)> = params
        .iter()
        .filter(|(k, _)| k != "Signature" && k != "Timestamp")
        .map(|(k, v)| (encode(k), encode(v)))
        .collect();
    pairs.sort();
    let query: Vec<String> = pairs.iter().map(|(k, v)| format!("{k}={v}")).collect();
    [method.to_uppercase().as_str(), path, &query.join("&"), timestamp].join("\n")
}

pub fn signature(secret: &str, string_to_sign: &str) -> String {
    let mut mac = HmacSha256::new_from_slice(secret.as_bytes()).expect("any key length");
    mac.update(string_to_sign.as_bytes());
    hex::encode(mac.finalize().into_bytes())
}

/// Constant-time check of a hex signature.
pub fn verify(secret: &str, string_to_sign: &str, given_hex: &str) -> bool {
    let Ok(given) = hex::decode(given_hex) else {
        return false;
    };
    let mut mac = HmacSha256::new_from_slice(secret.as_bytes()).expect("any key length");
    mac.update(string_to_sign.as_bytes());
    mac.verify_slice(&given).is_ok()
}
