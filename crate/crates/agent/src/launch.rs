//! Fetch, verify, cache, run, report.

use std::path::PathBuf;

use chrono::{DateTime, Utc};
use futures::StreamExt;
use gridhall_core::blobstore::is_digest;
use gridhall_core::launcher::{DescriptorKey, LaunchDescriptor, RunOutcome, DESCRIPTOR_MIME};
use serde::Serialize;
use sha2::{Digest, Sha256};
use tokio::io::AsyncWriteExt;
use url::Url;

use crate::cache::{Cache, CacheLock, ImageCacheEntry};
use crate::error::{AgentError, Result};
use crate::runner::Runner;

/// Where a descriptor comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    Url(Url),
    File(PathBuf),
}

impl Source {
    pub fn parse(s: &str) -> Source {
        match Url::parse(s) {
            Ok(u) if matches!(u.scheme(), "http" | "https") => Source::Url(u),
            _ => Source::File(PathBuf::from(s)),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LaunchOutcome {
    pub descriptor_id: String,
    pub application_id: String,
    pub image: PathBuf,
    pub downloaded: bool,
    pub reported: bool,
}

pub struct Agent {
    pub cache: Cache,
    pub key: DescriptorKey,
    pub runner: Runner,
    /// Service base URL for run reports; derived from the descriptor when
    /// absent.
    pub server: Option<Url>,
    pub http: reqwest::Client,
    pub now: fn() -> DateTime<Utc>,
}

impl Agent {
    pub fn new(cache: Cache, key: DescriptorKey, runner: Runner) -> Self {
        Self {
            cache,
            key,
            runner,
            server: None,
            http: reqwest::Client::new(),
            now: Utc::now,
        }
    }

    async fn fetch(&self, source: &Source) -> Result<Vec<u8>> {
        match source {
            Source::File(p) => Ok(tokio::fs::read(p)
                .await
                .map_err(|e| AgentError::Download(format!("{}: {e}", p.display())))?),
            Source::Url(u) => {
                let resp = self
                    .http
                    .get(u.clone())
                    .header(reqwest::header::ACCEPT, DESCRIPTOR_MIME)
                    .send()
                    .await
                    .map_err(|e| AgentError::Download(e.to_string()))?;
                if !resp.status().is_success() {
                    return Err(AgentError::Download(format!("{u}: {}", resp.status())));
                }
                Ok(resp
                    .bytes()
                    .await
                    .map_err(|e| AgentError::Download(e.to_string()))?
                    .to_vec())
            }
        }
    }

    /// Parses and verifies; nothing is downloaded for a bad descriptor.
    pub fn verify(&self, raw: &[u8]) -> Result<LaunchDescriptor> {
        let d: LaunchDescriptor =
            serde_json::from_slice(raw).map_err(|e| AgentError::Malformed(e.to_string()))?;
        d.verify_signature(&self.key)
            .map_err(|_| AgentError::SignatureInvalid)?;
        if (self.now)() >= d.expires_at {
            return Err(AgentError::Expired(d.expires_at));
        }
        if !is_digest(&d.blob_digest) {
            return Err(AgentError::Malformed(format!("bad digest {:?}", d.blob_digest)));
        }
        Ok(d)
    }

    pub async fn launch(&self, source: &Source) -> Result<LaunchOutcome> {
        let raw = self.fetch(source).await?;
        let d = self.verify(&raw)?;

        let lock = self.cache.lock_async().await?;
        let (entry, downloaded) = match self.cache.lookup(&lock, &d.blob_digest, (self.now)())? {
            Some(e) => (e, false),
            None => (self.download(&lock, &d).await?, true),
        };
        let pin = self.cache.pin(&d.blob_digest)?;
        drop(lock);

        let run = self.runner.run(&entry.local_path, &d).await;
        let outcome = if run.is_ok() {
            RunOutcome::Started
        } else {
            RunOutcome::Failed
        };
        let reported = match self.report(source, &d, outcome).await {
            Ok(()) => true,
            Err(e) => {
                tracing::warn!("run report not delivered: {e}");
                false
            }
        };
        drop(pin);
        run?;
        Ok(LaunchOutcome {
            descriptor_id: d.descriptor_id.to_string(),
            application_id: d.application_id.to_string(),
            image: entry.local_path,
            downloaded,
            reported,
        })
    }

    /// Streams the image to a temp file, hashing as it goes. Mismatched or
    /// oversized content is deleted and never enters the cache.
    async fn download(&self, lock: &CacheLock, d: &LaunchDescriptor) -> Result<ImageCacheEntry> {
        let tmp = self.cache.tmp_path();
        let result = self.stream_to(&tmp, d).await;
        match result {
            Ok(size) => Ok(self
                .cache
                .insert(lock, &d.blob_digest, &tmp, size, (self.now)())?),
            Err(e) => {
                let _ = tokio::fs::remove_file(&tmp).await;
                Err(e)
            }
        }
    }

    async fn stream_to(&self, tmp: &std::path::Path, d: &LaunchDescriptor) -> Result<u64> {
        let resp = self
            .http
            .get(&d.image_download_url)
            .send()
            .await
            .map_err(|e| AgentError::Download(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(AgentError::Download(format!(
                "{}: {}",
                d.image_download_url,
                resp.status()
            )));
        }
        let mut file = tokio::fs::File::create(tmp).await?;
        let mut hasher = Sha256::new();
        let mut size = 0u64;
        let mut body = resp.bytes_stream();
        while let Some(chunk) = body.next().await {
            let chunk = chunk.map_err(|e| AgentError::Download(e.to_string()))?;
            size += chunk.len() as u64;
            if size > d.size_bytes {
                return Err(AgentError::DigestMismatch {
                    expected: d.blob_digest.clone(),
                    actual: format!("<more than {} bytes>", d.size_bytes),
                });
            }
            hasher.update(&chunk);
            file.write_all(&chunk).await?;
        }
        file.flush().await?;
        file.sync_all().await?;
        let actual = hex::encode(hasher.finalize());
        if actual != d.blob_digest {
            return Err(AgentError::DigestMismatch {
                expected: d.blob_digest.clone(),
                actual,
            });
        }
        Ok(size)
    }

    pub fn report_url(&self, source: &Source, d: &LaunchDescriptor) -> Result<Url> {
        let id = d.descriptor_id.to_string();
        if let Some(base) = &self.server {
            return join(base, &format!("descriptors/{id}/report"));
        }
        if let Source::Url(u) = source {
            if u.path()
                .trim_end_matches('/')
                .ends_with(&format!("/descriptors/{id}"))
            {
                return join(u, "report");
            }
        }
        let suffix = format!("/images/{}", d.blob_digest);
        let base = d
            .image_download_url
            .strip_suffix(&suffix)
            .ok_or_else(|| AgentError::Config("cannot derive the service URL; pass --server".into()))?;
        let base = Url::parse(base).map_err(|e| AgentError::Config(e.to_string()))?;
        join(&base, &format!("descriptors/{id}/report"))
    }

    async fn report(&self, source: &Source, d: &LaunchDescriptor, outcome: RunOutcome) -> Result<()> {
        let url = self.report_url(source, d)?;
        let resp = self
            .http
            .post(url.clone())
            .json(&serde_json::json!({ "outcome": outcome }))
            .send()
            .await
            .map_err(|e| AgentError::Download(e.to_string()))?;
        if resp.status().is_success() {
            Ok(())
        } else {
            Err(AgentError::Download(format!("{url}: {}", resp.status())))
        }
    }
}

/// Appends `rel` beneath `base`, treating `base` as a directory.
fn join(base: &Url, rel: &str) -> Result<Url> {
    let mut b = base.clone();
    if !b.path().ends_with('/') {
        b.set_path(&format!("{}/", b.path()));
    }
    b.join(rel).map_err(|e| AgentError::Config(e.to_string()))
}
