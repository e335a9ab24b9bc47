//! Service configuration file (TOML).
//!
//! ```toml
//! bind = "127.0.0.1"
//! port = 8080
//! public_base_url = "http://127.0.0.1:8080"
//! poll_interval_secs = 5
//! wire_format = "xml"          # or "json"
//!
//! [storage]
//! url = "sqlite:/var/lib/gridhall/db.sqlite"   # or "memory:"
//! blob_dir = "/var/lib/gridhall/store"
//!
//! [keys]
//! master_key = "<base64 of 32 bytes>"          # or env MASTER_KEY
//! master_key_id = "k1"
//! retired = "k0:<base64>"                      # or env OLD_MASTER_KEYS
//! descriptor_key = "<hex of 32 bytes>"         # default: derived from master key
//!
//! [[providers]]
//! provider_ref = "sim-cloud"
//! endpoint_url = "http://127.0.0.1:9400/"
//! instance_types = ["m1.small", "m1.large"]
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use gridhall_core::blobstore::BlobStore;
use gridhall_core::launcher::DescriptorKey;
use gridhall_core::orchestrator::wire::WireFormat;
use gridhall_core::orchestrator::ProviderDescriptor;
use gridhall_core::storage::Storage;
use gridhall_core::vault::KeyRing;
use gridhall_core::{Platform, PlatformConfig};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_bind")]
    pub bind: String,
    #[serde(default = "default_port")]
    pub port: u16,
    #[serde(default)]
    pub public_base_url: Option<String>,
    #[serde(default = "default_poll")]
    pub poll_interval_secs: u64,
    #[serde(default)]
    pub wire_format: WireFormatName,
    pub storage: StorageConfig,
    #[serde(default)]
    pub keys: KeysConfig,
    #[serde(default)]
    pub providers: Vec<ProviderDescriptor>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum WireFormatName {
    #[default]
    Xml,
    Json,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorageConfig {
    pub url: String,
    pub blob_dir: PathBuf,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeysConfig {
    pub master_key: Option<String>,
    pub master_key_id: Option<String>,
    pub retired: Option<String>,
    pub descriptor_key: Option<String>,
}

fn default_bind() -> String {
    "127.0.0.1".into()
}

fn default_port() -> u16 {
    8080
}

fn default_poll() -> u64 {
    5
}

impl ServiceConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let cfg: Self = toml::from_str(text).context("parsing configuration")?;
        if cfg.poll_interval_secs == 0 {
            bail!("poll_interval_secs must be positive");
        }
        Ok(cfg)
    }

    pub fn base_url(&self) -> String {
        self.public_base_url
            .clone()
            .unwrap_or_else(|| format!("http://{}:{}", self.bind, self.port))
    }

    /// Key ring from the file, falling back to the environment.
    pub fn keyring(&self) -> anyhow::Result<KeyRing> {
        let env = |k: &str| std::env::var(k).ok();
        let master = self
            .keys
            .master_key
            .clone()
            .or_else(|| env("MASTER_KEY"))
            .context("no master key: set keys.master_key or MASTER_KEY")?;
        let id = self.keys.master_key_id.clone().or_else(|| env("MASTER_KEY_ID"));
        let retired = self.keys.retired.clone().or_else(|| env("OLD_MASTER_KEYS"));
        Ok(KeyRing::from_env_values(
            &master,
            id.as_deref(),
            retired.as_deref(),
        )?)
    }

    pub fn open_storage(&self) -> anyhow::Result<Storage> {
        Ok(Storage::open(&self.storage.url)?)
    }

    pub fn platform(&self) -> anyhow::Result<Arc<Platform>> {
        let storage = self.open_storage()?;
        let blobs = BlobStore::open(&self.storage.blob_dir)?;
        let config = PlatformConfig {
            public_base_url: self.base_url(),
            poll_interval: std::time::Duration::from_secs(self.poll_interval_secs),
            ..PlatformConfig::default()
        };
        let mut builder = Platform::builder(storage, blobs)
            .keyring(self.keyring()?)
            .providers(self.providers.clone())
            .config(config)
            .wire_format(match self.wire_format {
                WireFormatName::Xml => WireFormat::Xml,
                WireFormatName::Json => WireFormat::Json,
            });
        if let Some(hex) = &self.keys.descriptor_key {
            builder = builder.descriptor_key(DescriptorKey::from_hex(hex)?);
        }
        Ok(Arc::new(builder.build()?))
    }
}
