//! Content-addressed image cache shared by every agent process on a machine.
//!
//! Layout: `blobs/<digest>`, `index.json`, `tmp/` for in-flight downloads,
//! `active/` for pins held by running images, and `.lock`, which serialises
//! lookups, downloads and index updates across processes.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use chrono::{DateTime, Utc};
use fs4::fs_std::FileExt;
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageCacheEntry {
    pub blob_digest: String,
    pub local_path: PathBuf,
    pub size_bytes: u64,
    pub fetched_at: DateTime<Utc>,
    pub last_used_at: DateTime<Utc>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Index {
    entries: BTreeMap<String, ImageCacheEntry>,
}

#[derive(Debug, Clone)]
pub struct Cache {
    root: PathBuf,
}

/// Exclusive hold on the cache directory; released on drop.
#[derive(Debug)]
pub struct CacheLock {
    _file: File,
}

/// Marks an image as in use so that `gc` skips it; removed on drop.
#[derive(Debug)]
pub struct Pin {
    path: PathBuf,
}

impl Drop for Pin {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

static SEQ: AtomicU64 = AtomicU64::new(0);

fn unique_suffix() -> String {
    format!("{}.{}", std::process::id(), SEQ.fetch_add(1, Ordering::Relaxed))
}

impl Cache {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        for sub in ["blobs", "tmp", "active", "runs"] {
            fs::create_dir_all(root.join(sub))?;
        }
        Ok(Self { root })
    }

    /// The platform cache directory, e.g. `~/.cache/gridhall-agent`.
    pub fn default_dir() -> PathBuf {
        dirs::cache_dir()
            .unwrap_or_else(std::env::temp_dir)
            .join("gridhall-agent")
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.root.join("runs")
    }

    /// Blocks until no other process holds the cache.
    pub fn lock(&self) -> Result<CacheLock> {
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(self.root.join(".lock"))?;
        file.lock_exclusive()?;
        Ok(CacheLock { _file: file })
    }

    pub async fn lock_async(&self) -> Result<CacheLock> {
        let cache = self.clone();
        tokio::task::spawn_blocking(move || cache.lock())
            .await
            .map_err(|e| std::io::Error::other(e.to_string()))?
    }

    fn load(&self) -> Result<Index> {
        match fs::read(self.root.join("index.json")) {
            Ok(bytes) => Ok(serde_json::from_slice(&bytes).unwrap_or_else(|e| {
                tracing::warn!("cache index unreadable ({e}); starting empty");
                Index::default()
            })),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Index::default()),
            Err(e) => Err(e.into()),
        }
    }

    fn store(&self, index: &Index) -> Result<()> {
        let tmp = self.root.join("tmp").join(format!("index.{}", unique_suffix()));
        fs::write(&tmp, serde_json::to_vec_pretty(index).expect("index serializes"))?;
        fs::rename(tmp, self.root.join("index.json"))?;
        Ok(())
    }

    pub fn entries(&self) -> Result<Vec<ImageCacheEntry>> {
        Ok(self.load()?.entries.into_values().collect())
    }

    pub fn total_bytes(&self) -> Result<u64> {
        Ok(self.entries()?.iter().map(|e| e.size_bytes).sum())
    }

    /// Returns the entry for `digest` and marks it used. An entry whose file
    /// vanished or changed size is dropped and reported as a miss.
    pub fn lookup(
        &self,
        _lock: &CacheLock,
        digest: &str,
        now: DateTime<Utc>,
    ) -> Result<Option<ImageCacheEntry>> {
        let mut index = self.load()?;
        let Some(entry) = index.entries.get_mut(digest) else {
            return Ok(None);
        };
        let intact = fs::metadata(&entry.local_path).is_ok_and(|m| m.len() == entry.size_bytes);
        if !intact {
            index.entries.remove(digest);
            self.store(&index)?;
            return Ok(None);
        }
        entry.last_used_at = now;
        let found = entry.clone();
        self.store(&index)?;
        Ok(Some(found))
    }

    /// A fresh path for an in-flight download.
    pub fn tmp_path(&self) -> PathBuf {
        self.root.join("tmp").join(format!("dl.{}", unique_suffix()))
    }

    /// Moves a verified download into place.
    pub fn insert(
        &self,
        _lock: &CacheLock,
        digest: &str,
        downloaded: &Path,
        size_bytes: u64,
        now: DateTime<Utc>,
    ) -> Result<ImageCacheEntry> {
        let local_path = self.root.join("blobs").join(digest);
        fs::rename(downloaded, &local_path)?;
        let entry = ImageCacheEntry {
            blob_digest: digest.to_string(),
            local_path,
            size_bytes,
            fetched_at: now,
            last_used_at: now,
        };
        let mut index = self.load()?;
        index.entries.insert(digest.to_string(), entry.clone());
        self.store(&index)?;
        Ok(entry)
    }

    pub fn pin(&self, digest: &str) -> Result<Pin> {
        let path = self
            .root
            .join("active")
            .join(format!("{digest}.{}", unique_suffix()));
        fs::write(&path, b"")?;
        Ok(Pin { path })
    }

    pub fn pinned(&self) -> Result<BTreeSet<String>> {
        let mut out = BTreeSet::new();
        for entry in fs::read_dir(self.root.join("active"))? {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if let Some((digest, _)) = name.split_once('.') {
                out.insert(digest.to_string());
            }
        }
        Ok(out)
    }

    /// Evicts least-recently-used unpinned entries until the cache fits in
    /// `max_bytes`; returns what was evicted, oldest first.
    pub fn gc(&self, _lock: &CacheLock, max_bytes: u64) -> Result<Vec<ImageCacheEntry>> {
        let mut index = self.load()?;
        let entries: Vec<_> = index.entries.values().cloned().collect();
        let victims = plan_eviction(&entries, &self.pinned()?, max_bytes);
        let mut evicted = Vec::new();
        for digest in victims {
            if let Some(e) = index.entries.remove(&digest) {
                match fs::remove_file(&e.local_path) {
                    Ok(()) => {}
                    Err(err) if err.kind() == std::io::ErrorKind::NotFound => {}
                    Err(err) => return Err(err.into()),
                }
                evicted.push(e);
            }
        }
        self.store(&index)?;
        Ok(evicted)
    }
}

/// Eviction order: oldest `last_used_at` first, ties by digest; pinned
/// entries are skipped but still count towards the total.
pub fn plan_eviction(entries: &[ImageCacheEntry], pinned: &BTreeSet<String>, max_bytes: u64) -> Vec<String> {
    let mut total: u64 = entries.iter().map(|e| e.size_bytes).sum();
    let mut order: Vec<&ImageCacheEntry> = entries.iter().collect();
    order.sort_by(|a, b| (a.last_used_at, &a.blob_digest).cmp(&(b.last_used_at, &b.blob_digest)));
    let mut out = Vec::new();
    for e in order {
        if total <= max_bytes {
            break;
        }
        if pinned.contains(&e.blob_digest) {
            continue;
        }
        total -= e.size_bytes;
        out.push(e.blob_digest.clone());
    }
    out
}
