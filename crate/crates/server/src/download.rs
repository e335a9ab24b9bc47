//! Image download with the digest as entity tag and single-range support.

use std::io::SeekFrom;
use std::ops::RangeInclusive;

use axum::body::Body;
use axum::extract::State;
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use gridhall_core::blobstore::is_digest;
use tokio::io::{AsyncReadExt, AsyncSeekExt};
use tokio_util::io::ReaderStream;

use crate::error::{ApiError, ApiPath};
use crate::AppState;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RangeSpec {
    /// No usable `Range` header: serve everything.
    Full,
    Partial(RangeInclusive<u64>),
    Unsatisfiable,
}

/// Interprets a `Range` header against a body of `len` bytes. Only a single
/// byte range is honoured; multi-range and malformed headers fall back to
/// the full body, as the header is advisory.
pub fn parse_range(value: Option<&str>, len: u64) -> RangeSpec {
    let Some(spec) = value.and_then(|v| v.trim().strip_prefix("bytes=")) else {
        return RangeSpec::Full;
    };
    if spec.contains(',') {
        return RangeSpec::Full;
    }
    let Some((a, b)) = spec.trim().split_once('-') else {
        return RangeSpec::Full;
    };
    let (a, b) = (a.trim(), b.trim());
    let parsed = match (a.is_empty(), b.is_empty()) {
        (true, true) => return RangeSpec::Full,
        (true, false) => match b.parse::<u64>() {
            Ok(0) => return RangeSpec::Unsatisfiable,
            Ok(n) if len == 0 => {
                return if n > 0 {
                    RangeSpec::Unsatisfiable
                } else {
                    RangeSpec::Full
                }
            }
            Ok(n) => (len.saturating_sub(n), len - 1),
            Err(_) => return RangeSpec::Full,
        },
        (false, _) => {
            let Ok(start) = a.parse::<u64>() else {
                return RangeSpec::Full;
            };
            let end = if b.is_empty() {
                len.saturating_sub(1)
            } else {
                match b.parse::<u64>() {
                    Ok(e) if e >= start => e.min(len.saturating_sub(1)),
                    _ => return RangeSpec::Full,
                }
            };
            if start >= len {
                return RangeSpec::Unsatisfiable;
            }
            (start, end)
        }
    };
    RangeSpec::Partial(parsed.0..=parsed.1)
}

fn etag_matches(headers: &HeaderMap, etag: &str) -> bool {
    headers
        .get_all(header::IF_NONE_MATCH)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .flat_map(|v| v.split(','))
        .map(str::trim)
        .any(|t| t == "*" || t.trim_start_matches("W/") == etag)
}

pub async fn download_image(
    State(s): State<AppState>,
    ApiPath(digest): ApiPath<String>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    if !is_digest(&digest) {
        return Err(ApiError::not_found());
    }
    let path = s.platform.blobs.path_for(&digest)?;
    let mut file = match tokio::fs::File::open(&path).await {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(ApiError::not_found()),
        Err(e) => return Err(gridhall_core::Error::Io(e.to_string()).into()),
    };
    let len = file
        .metadata()
        .await
        .map_err(|e| gridhall_core::Error::Io(e.to_string()))?
        .len();
    let etag = format!("\"{digest}\"");
    let etag_value = HeaderValue::from_str(&etag).expect("digest is header-safe");
    let common = [
        (header::ETAG, etag_value),
        (header::ACCEPT_RANGES, HeaderValue::from_static("bytes")),
        (
            header::CACHE_CONTROL,
            HeaderValue::from_static("public, max-age=31536000, immutable"),
        ),
    ];

    if etag_matches(&headers, &etag) {
        return Ok((StatusCode::NOT_MODIFIED, common).into_response());
    }

    let range = parse_range(headers.get(header::RANGE).and_then(|v| v.to_str().ok()), len);
    let (status, start, count) = match range {
        RangeSpec::Full => (StatusCode::OK, 0, len),
        RangeSpec::Partial(r) => (StatusCode::PARTIAL_CONTENT, *r.start(), r.end() - r.start() + 1),
        RangeSpec::Unsatisfiable => {
            let cr = HeaderValue::from_str(&format!("bytes */{len}")).expect("ascii");
            return Ok((
                StatusCode::RANGE_NOT_SATISFIABLE,
                common,
                [(header::CONTENT_RANGE, cr)],
            )
                .into_response());
        }
    };
    if start > 0 {
        file.seek(SeekFrom::Start(start))
            .await
            .map_err(|e| gridhall_core::Error::Io(e.to_string()))?;
    }
    s.metrics.download(&digest, count);
    let body = Body::from_stream(ReaderStream::new(file.take(count)));
    let mut resp = (status, common, body).into_response();
    let h = resp.headers_mut();
    h.insert(
        header::CONTENT_TYPE,
        HeaderValue::from_static("application/octet-stream"),
    );
    h.insert(header::CONTENT_LENGTH, HeaderValue::from(count));
    if status == StatusCode::PARTIAL_CONTENT {
        let cr = format!("bytes {}-{}/{len}", start, start + count - 1);
        h.insert(header::CONTENT_RANGE, HeaderValue::from_str(&cr).expect("ascii"));
    }
    Ok(resp)
}
