//! Sealed storage of users' cloud credentials.
//!
//! Secrets are sealed with XChaCha20-Poly1305 under a service master key
//! before they reach storage. The key id is bound as associated data, so a
//! ciphertext cannot be replayed under another key. Older keys can be kept in
//! the ring to open records sealed before a rotation.

use std::collections::HashMap;
use std::fmt;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{XChaCha20Poly1305, XNonce};
use chrono::{DateTime, Utc};
use rand::rngs::OsRng;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use utoipa::ToSchema;

use crate::auth::Caller;
use crate::error::{Error, Result};
use crate::ids::{CredentialId, UserId};
use crate::orchestrator::{Instance, InstanceStatus};
use crate::platform::Platform;
use crate::storage::{tables, ReadExt, ReadTx, WriteExt};

const NONCE_LEN: usize = 24;

#[derive(Clone)]
pub struct MasterKey([u8; 32]);

impl MasterKey {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| Error::ValidationFailed("master key must be 32 bytes".into()))?;
        Ok(Self(arr))
    }

    pub fn from_base64(b64: &str) -> Result<Self> {
        let bytes = STANDARD
            .decode(b64.trim())
            .map_err(|e| Error::ValidationFailed(format!("master key is not base64: {e}")))?;
        Self::from_bytes(&bytes)
    }

    pub fn generate() -> Self {
        let mut k = [0u8; 32];
        OsRng.fill_bytes(&mut k);
        Self(k)
    }

    pub fn to_base64(&self) -> String {
        STANDARD.encode(self.0)
    }

    pub(crate) fn bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl fmt::Debug for MasterKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("MasterKey(..)")
    }
}

/// The current sealing key plus any retired keys still needed for unsealing.
#[derive(Clone, Debug)]
pub struct KeyRing {
    current_id: String,
    keys: HashMap<String, MasterKey>,
}

impl KeyRing {
    pub fn new(current_id: impl Into<String>, current: MasterKey) -> Self {
        let current_id = current_id.into();
        let mut keys = HashMap::new();
        keys.insert(current_id.clone(), current);
        Self { current_id, keys }
    }

    pub fn with_retired(mut self, id: impl Into<String>, key: MasterKey) -> Self {
        let id = id.into();
        if id != self.current_id {
            self.keys.insert(id, key);
        }
        self
    }

    /// Reads `MASTER_KEY` (base64), `MASTER_KEY_ID` and optionally
    /// `OLD_MASTER_KEYS` as comma-separated `id:base64` pairs.
    pub fn from_env_values(
        master_key: &str,
        master_key_id: Option<&str>,
        old_keys: Option<&str>,
    ) -> Result<Self> {
        let mut ring = Self::new(master_key_id.unwrap_or("k1"), MasterKey::from_base64(master_key)?);
        if let Some(old) = old_keys {
            for pair in old.split(',').map(str::trim).filter(|p| !p.is_empty()) {
                let (id, key) = pair.split_once(':').ok_or_else(|| {
                    Error::ValidationFailed("OLD_MASTER_KEYS entries must be id:base64".into())
                })?;
                ring = ring.with_retired(id.trim(), MasterKey::from_base64(key)?);
            }
        }
        Ok(ring)
    }

    pub fn from_env() -> Result<Self> {
        let key = std::env::var("MASTER_KEY")
            .map_err(|_| Error::ValidationFailed("MASTER_KEY is not set".into()))?;
        let id = std::env::var("MASTER_KEY_ID").ok();
        let old = std::env::var("OLD_MASTER_KEYS").ok();
        Self::from_env_values(&key, id.as_deref(), old.as_deref())
    }

    pub fn current_id(&self) -> &str {
        &self.current_id
    }

    pub(crate) fn current(&self) -> &MasterKey {
        &self.keys[&self.current_id]
    }

    pub fn seal(&self, plaintext: &[u8]) -> SealedSecret {
        let cipher = XChaCha20Poly1305::new(self.current().bytes().into());
        let mut nonce = [0u8; NONCE_LEN];
        OsRng.fill_bytes(&mut nonce);
        let ciphertext = cipher
            .encrypt(
                XNonce::from_slice(&nonce),
                Payload {
                    msg: plaintext,
                    aad: self.current_id.as_bytes(),
                },
            )
            .expect("encryption with a valid key cannot fail");
        SealedSecret {
            ciphertext,
            nonce: nonce.to_vec(),
            key_id: self.current_id.clone(),
        }
    }

    pub fn unseal(&self, sealed: &SealedSecret) -> Result<Vec<u8>> {
        let key = self.keys.get(&sealed.key_id).ok_or(Error::SealBroken)?;
        if sealed.nonce.len() != NONCE_LEN {
            return Err(Error::SealBroken);
        }
        XChaCha20Poly1305::new(key.bytes().into())
            .decrypt(
                XNonce::from_slice(&sealed.nonce),
                Payload {
                    msg: &sealed.ciphertext,
                    aad: sealed.key_id.as_bytes(),
                },
            )
            .map_err(|_| Error::SealBroken)
    }
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

/// Ciphertext at rest. Encoded as lowercase hex so the stored form shares no
/// alphabet with typical upper-case key material.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SealedSecret {
    #[serde(with = "hex_bytes")]
    pub ciphertext: Vec<u8>,
    #[serde(with = "hex_bytes")]
    pub nonce: Vec<u8>,
    pub key_id: String,
}

/// Plaintext credential material. Only ever held transiently.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize, ToSchema)]
pub struct SecretFields {
    #[serde(alias = "access")]
    pub access_key_id: String,
    #[serde(alias = "secret")]
    pub secret_key: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub private_key: Option<String>,
}

impl fmt::Debug for SecretFields {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SecretFields")
            .field("access_key_id", &"<redacted>")
            .field("secret_key", &"<redacted>")
            .field("private_key", &self.private_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl SecretFields {
    fn validate(&self) -> Result<()> {
        if self.access_key_id.trim().is_empty() || self.secret_key.is_empty() {
            return Err(Error::ValidationFailed(
                "access key id and secret key are required".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct CredentialRecord {
    pub credential_id: CredentialId,
    pub user_id: UserId,
    pub provider_ref: String,
    pub label: String,
    pub sealed_payload: SealedSecret,
    pub created_at: DateTime<Utc>,
}

/// What callers get to see about a stored credential.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, ToSchema)]
pub struct CredentialMeta {
    pub credential_id: CredentialId,
    pub provider_ref: String,
    pub label: String,
    pub created_at: DateTime<Utc>,
}

impl From<&CredentialRecord> for CredentialMeta {
    fn from(r: &CredentialRecord) -> Self {
        Self {
            credential_id: r.credential_id,
            provider_ref: r.provider_ref.clone(),
            label: r.label.clone(),
            created_at: r.created_at,
        }
    }
}

pub(crate) fn load_credential(tx: &dyn ReadTx, id: CredentialId) -> Result<Option<CredentialRecord>> {
    tx.get_json(tables::CREDENTIALS, &id.to_string())
}

impl Platform {
    pub fn add_credential(
        &self,
        caller: &Caller,
        provider_ref: &str,
        label: &str,
        secret: &SecretFields,
    ) -> Result<CredentialMeta> {
        self.providers.get(provider_ref)?;
        secret.validate()?;
        let plaintext = serde_json::to_vec(secret)?;
        let record = CredentialRecord {
            credential_id: CredentialId::new(),
            user_id: caller.user_id,
            provider_ref: provider_ref.to_string(),
            label: label.trim().to_string(),
            sealed_payload: self.keyring.seal(&plaintext),
            created_at: self.clock.now(),
        };
        self.storage
            .transact(|tx| tx.put_json(tables::CREDENTIALS, &record.credential_id.to_string(), &record))?;
        Ok(CredentialMeta::from(&record))
    }

    pub fn list_credentials(
        &self,
        caller: &Caller,
        provider_ref: Option<&str>,
    ) -> Result<Vec<CredentialMeta>> {
        let mut out: Vec<CredentialMeta> = self.storage.read(|tx| {
            Ok(tx
                .scan_json::<CredentialRecord>(tables::CREDENTIALS)?
                .iter()
                .filter(|c| c.user_id == caller.user_id)
                .filter(|c| provider_ref.is_none_or(|p| c.provider_ref == p))
                .map(CredentialMeta::from)
                .collect())
        })?;
        out.sort_by(|a, b| {
            a.created_at
                .cmp(&b.created_at)
                .then(a.credential_id.cmp(&b.credential_id))
        });
        Ok(out)
    }

    /// Decrypts a credential for an outgoing provider call. Internal only: no
    /// route reaches this, and the result is never logged or stored.
    pub(crate) fn unseal(&self, credential_id: CredentialId) -> Result<SecretFields> {
        let record = self
            .storage
            .read(|tx| load_credential(tx, credential_id))?
            .ok_or(Error::NotFound("credential"))?;
        self.unseal_record(&record)
    }

    pub(crate) fn unseal_record(&self, record: &CredentialRecord) -> Result<SecretFields> {
        let plain = self.keyring.unseal(&record.sealed_payload)?;
        serde_json::from_slice(&plain).map_err(|_| Error::SealBroken)
    }

    pub fn delete_credential(&self, caller: &Caller, credential_id: CredentialId) -> Result<()> {
        self.storage.transact(|tx| {
            let record = load_credential(tx, credential_id)?.ok_or(Error::NotFound("credential"))?;
            if record.user_id != caller.user_id {
                return Err(Error::NotOwner);
            }
            let in_use = tx.scan_json::<Instance>(tables::INSTANCES)?.iter().any(|i| {
                i.credential_id == credential_id
                    && i.status != InstanceStatus::Terminated
                    && i.status != InstanceStatus::Failed
            });
            if in_use {
                return Err(Error::InUse);
            }
            tx.delete(tables::CREDENTIALS, &credential_id.to_string())?;
            Ok(())
        })
    }
}
