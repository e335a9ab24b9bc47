//! A second, separately written signer for the provider query protocol.

use hmac::{Hmac, Mac};
use sha2::Sha256;

fn escape(s: &str) -> String {
    s.bytes()
        .map(|b| match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' => (b as char).to_string(),
            _ => format!("%{b:02X}"),
        })
        .collect()
}

pub fn string_to_sign(path: &str, form: &[(String, String)]) -> String {
    let mut timestamp = "";
    let mut pairs = Vec::new();
    for (k, v) in form {
        match k.as_str() {
            "Signature" => {}
            "Timestamp" => timestamp = v,
            _ => pairs.push((escape(k), escape(v))),
        }
    }
    pairs.sort();
    let query: Vec<String> = pairs.into_iter().map(|(k, v)| k + "=" + &v).collect();
    format!("POST\n{path}\n{}\n{timestamp}", query.join("&"))
}

pub fn signature(secret: &str, path: &str, form: &[(String, String)]) -> String {
    let mut mac = Hmac::<Sha256>::new_from_slice(secret.as_bytes()).expect("any key length");
    mac.update(string_to_sign(path, form).as_bytes());
    hex::encode(mac.finalize().into_bytes())
}
