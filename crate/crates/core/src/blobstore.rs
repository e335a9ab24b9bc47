//! Content-addressed blob store for uploaded machine images.
//!
//! Layout: `<root>/blobs/<first-2-hex>/<sha256-hex>`. Writes stream into
//! `<root>/tmp` while hashing and are renamed into place once complete, so a
//! blob path either does not exist or holds the full content.

use std::path::{Path, PathBuf};

use bytes::Bytes;
use futures::{Stream, StreamExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokio::io::AsyncWriteExt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobInfo {
    pub digest: String,
    pub size_bytes: u64,
}

#[derive(Debug, Clone)]
pub struct BlobStore {
    root: PathBuf,
}

pub fn is_digest(s: &str) -> bool {
    s.len() == 64
        && s.bytes()
            .all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl BlobStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(root.join("blobs"))?;
        std::fs::create_dir_all(root.join("tmp"))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, digest: &str) -> Result<PathBuf> {
        if !is_digest(digest) {
            return Err(Error::ValidationFailed("malformed blob digest".into()));
        }
        Ok(self.root.join("blobs").join(&digest[..2]).join(digest))
    }

    pub fn contains(&self, digest: &str) -> bool {
        self.path_for(digest).map(|p| p.is_file()).unwrap_or(false)
    }

    /// Streams `chunks` into the store, enforcing `max_bytes`. Identical
    /// content lands on the same path and is stored once.
    pub async fn put_stream<S, E>(&self, mut chunks: S, max_bytes: u64) -> Result<BlobInfo>
    where
        S: Stream<Item = std::result::Result<Bytes, E>> + Unpin,
        E: std::fmt::Display,
    {
        let tmp = self.root.join("tmp").join(uuid::Uuid::new_v4().to_string());
        let mut file = tokio::fs::File::create(&tmp).await?;
        let mut hasher = Sha256::new();
        let mut size = 0u64;
        let outcome: Result<()> = async {
            while let Some(chunk) = chunks.next().await {
                let chunk = chunk.map_err(|e| Error::Io(format!("upload stream: {e}")))?;
                size += chunk.len() as u64;
                if size > max_bytes {
                    return Err(Error::TooLarge { limit: max_bytes });
                }
                hasher.update(&chunk);
                file.write_all(&chunk).await?;
            }
            file.flush().await?;
            file.sync_all().await?;
            Ok(())
        }
        .await;
        drop(file);
        if let Err(e) = outcome {
            let _ = tokio::fs::remove_file(&tmp).await;
            return Err(e);
        }
        if size == 0 {
            let _ = tokio::fs::remove_file(&tmp).await;
            return Err(Error::EmptyUpload);
        }
        let digest = hex::encode(hasher.finalize());
        let dest = self.path_for(&digest)?;
        if dest.is_file() {
            tokio::fs::remove_file(&tmp).await?;
        } else {
            tokio::fs::create_dir_all(dest.parent().expect("blob path has a parent")).await?;
            tokio::fs::rename(&tmp, &dest).await?;
        }
        Ok(BlobInfo {
            digest,
            size_bytes: size,
        })
    }

    pub async fn put_bytes(&self, bytes: Bytes, max_bytes: u64) -> Result<BlobInfo> {
        let stream = futures::stream::iter([Ok::<_, std::io::Error>(bytes)]);
        self.put_stream(stream, max_bytes).await
    }

    pub fn remove(&self, digest: &str) -> Result<bool> {
        let path = self.path_for(digest)?;
        match std::fs::remove_file(path) {
            Ok(()) => Ok(true),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(false),
            Err(e) => Err(e.into()),
        }
    }

    /// Digests of every stored blob.
    pub fn list(&self) -> Result<Vec<String>> {
        let mut out = Vec::new();
        for shard in std::fs::read_dir(self.root.join("blobs"))? {
            let shard = shard?;
            if !shard.file_type()?.is_dir() {
                continue;
            }
            for entry in std::fs::read_dir(shard.path())? {
                let name = entry?.file_name().to_string_lossy().to_string();
                if is_digest(&name) {
                    out.push(name);
                }
            }
        }
        out.sort();
        Ok(out)
    }
}
