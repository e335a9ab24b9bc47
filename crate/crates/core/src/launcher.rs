//! Signed launch descriptors for the local launcher agent, and run reports.
//!
//! A descriptor tells the agent which image blob to fetch, what digest it
//! must have, and which parameters to hand to the runner. It is signed with
//! HMAC-SHA-256 over its canonical JSON form: UTF-8, object keys sorted, no
//! insignificant whitespace, `signature` omitted.

use std::collections::BTreeMap;

use chrono::{DateTime, SubsecRound, Utc};
use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use utoipa::ToSchema;

use crate::analytics::{self, EventKind, EventRecord};
use crate::auth::Caller;
use crate::error::{Error, Result};
use crate::groups::check_tag;
use crate::ids::{AppId, DescriptorId, EventId, UserId};
use crate::platform::Platform;
use crate::registry::{images_of, load_app, ImageKind, ImageTarget, Visibility};
use crate::storage::{tables, ReadExt, WriteExt};

pub const DESCRIPTOR_MIME: &str = "application/x-gridhall-launch+json";

#[derive(Clone)]
pub struct DescriptorKey([u8; 32]);

impl DescriptorKey {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        Self(bytes)
    }

    /// Derives the descriptor key from the vault master key, so a deployment
    /// needs only one secret.
    pub fn derive(master: &crate::vault::MasterKey) -> Self {
        let mut mac = Hmac::<Sha256>::new_from_slice(master.bytes()).expect("any key length");
        mac.update(b"gridhall launch descriptor key v1");
        Self(mac.finalize().into_bytes().into())
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        let bytes =
            hex::decode(s.trim()).map_err(|e| Error::ValidationFailed(format!("descriptor key: {e}")))?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| Error::ValidationFailed("descriptor key must be 32 bytes".into()))?;
        Ok(Self(arr))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    fn mac(&self, msg: &[u8]) -> Hmac<Sha256> {
        let mut mac = Hmac::<Sha256>::new_from_slice(&self.0).expect("any key length");
        mac.update(msg);
        mac
    }
}

impl std::fmt::Debug for DescriptorKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("DescriptorKey(..)")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, ToSchema)]
pub struct LaunchDescriptor {
    pub descriptor_id: DescriptorId,
    pub application_id: AppId,
    pub image_download_url: String,
    pub blob_digest: String,
    pub size_bytes: u64,
    pub launch_params: BTreeMap<String, String>,
    pub issued_to: UserId,
    pub issued_at: DateTime<Utc>,
    pub expires_at: DateTime<Utc>,
    #[serde(default)]
    pub signature: String,
}

impl LaunchDescriptor {
    /// Canonical bytes covered by the signature.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut v = serde_json::to_value(self).expect("descriptor serializes");
        v.as_object_mut()
            .expect("descriptor is an object")
            .remove("signature");
        // serde_json's default map is ordered, so keys come out sorted.
        serde_json::to_vec(&v).expect("value serializes")
    }

    /// The full document, canonical form including the signature.
    pub fn to_canonical_json(&self) -> Vec<u8> {
        let v = serde_json::to_value(self).expect("descriptor serializes");
        serde_json::to_vec(&v).expect("value serializes")
    }

    pub fn sign(&mut self, key: &DescriptorKey) {
        self.signature = hex::encode(key.mac(&self.canonical_bytes()).finalize().into_bytes());
    }

    pub fn verify_signature(&self, key: &DescriptorKey) -> Result<()> {
        let sig = hex::decode(&self.signature).map_err(|_| Error::SignatureInvalid)?;
        key.mac(&self.canonical_bytes())
            .verify_slice(&sig)
            .map_err(|_| Error::SignatureInvalid)
    }

    /// Signature first, then expiry.
    pub fn verify(&self, key: &DescriptorKey, now: DateTime<Utc>) -> Result<()> {
        self.verify_signature(key)?;
        if now >= self.expires_at {
            return Err(Error::DescriptorExpired);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ToSchema)]
#[serde(rename_all = "lowercase")]
pub enum RunOutcome {
    Started,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct DescriptorRecord {
    pub descriptor: LaunchDescriptor,
    #[serde(default)]
    pub reported: Option<(RunOutcome, DateTime<Utc>)>,
}

impl Platform {
    pub fn descriptor_key(&self) -> &DescriptorKey {
        &self.descriptor_key
    }

    /// Issues a descriptor for the application's newest local client image.
    pub fn issue_descriptor(
        &self,
        caller: &Caller,
        app_id: AppId,
        tag_id: Option<&str>,
    ) -> Result<LaunchDescriptor> {
        let now = self.clock.now().trunc_subsecs(0);
        let mut descriptor = self.storage.read(|tx| {
            let app = load_app(tx, app_id)?.ok_or(Error::AppNotFound)?;
            if app.visibility == Visibility::Private && app.owner_id != caller.user_id {
                return Err(Error::AppNotFound);
            }
            let (digest, size) = images_of(tx, app_id)?
                .into_iter()
                .rev()
                .filter(|i| i.kind == ImageKind::Client)
                .find_map(|i| match i.target {
                    ImageTarget::LocalHypervisor {
                        blob_digest,
                        size_bytes,
                    } => Some((blob_digest, size_bytes)),
                    ImageTarget::Cloud { .. } => None,
                })
                .ok_or(Error::NoLocalImage)?;
            check_tag(tx, caller.user_id, app_id, tag_id)?;
            let mut params = BTreeMap::new();
            params.insert("application_name".to_string(), app.name.clone());
            if let Some(t) = tag_id {
                params.insert("tag_id".to_string(), t.to_string());
            }
            if let Some(url) = &app.project_server_url {
                params.insert("project_server_url".to_string(), url.clone());
            }
            Ok(LaunchDescriptor {
                descriptor_id: DescriptorId::new(),
                application_id: app_id,
                image_download_url: format!(
                    "{}/images/{digest}",
                    self.config.public_base_url.trim_end_matches('/')
                ),
                blob_digest: digest,
                size_bytes: size,
                launch_params: params,
                issued_to: caller.user_id,
                issued_at: now,
                expires_at: now + self.config.descriptor_ttl,
                signature: String::new(),
            })
        })?;
        descriptor.sign(&self.descriptor_key);
        let record = DescriptorRecord {
            descriptor: descriptor.clone(),
            reported: None,
        };
        self.storage.transact(|tx| {
            tx.put_json(
                tables::DESCRIPTORS,
                &descriptor.descriptor_id.to_string(),
                &record,
            )
        })?;
        Ok(descriptor)
    }

    /// Looks up an issued descriptor. The id is unguessable and acts as the
    /// capability, so the agent can fetch it without a session.
    pub fn get_descriptor(&self, id: DescriptorId) -> Result<LaunchDescriptor> {
        self.storage
            .read(|tx| tx.get_json::<DescriptorRecord>(tables::DESCRIPTORS, &id.to_string()))?
            .map(|r| r.descriptor)
            .ok_or(Error::UnknownDescriptor)
    }

    /// Verifies a descriptor presented by an agent.
    pub fn verify_descriptor(&self, d: &LaunchDescriptor) -> Result<()> {
        d.verify(&self.descriptor_key, self.clock.now())
    }

    /// Records the agent's run report. Accepted once per descriptor, up to
    /// `config.report_window` after issue.
    pub fn report_run(&self, id: DescriptorId, outcome: RunOutcome) -> Result<()> {
        let now = self.clock.now();
        self.storage.transact(|tx| {
            let key = id.to_string();
            let mut rec: DescriptorRecord = tx
                .get_json(tables::DESCRIPTORS, &key)?
                .ok_or(Error::UnknownDescriptor)?;
            if now >= rec.descriptor.issued_at + self.config.report_window {
                return Err(Error::DescriptorExpired);
            }
            if rec.reported.is_some() {
                return Err(Error::DuplicateReport);
            }
            rec.reported = Some((outcome, now));
            tx.put_json(tables::DESCRIPTORS, &key, &rec)?;
            let d = &rec.descriptor;
            let started = outcome == RunOutcome::Started;
            analytics::record_run(tx, d.issued_to, d.application_id, now, started)?;
            if started {
                analytics::append_event(
                    tx,
                    &EventRecord {
                        event_id: EventId::new(),
                        user_id: Some(d.issued_to),
                        kind: EventKind::LaunchLocal,
                        subject: Some(d.application_id),
                        occurred_at: now,
                        session_key: format!("d:{}", d.descriptor_id),
                    },
                )?;
            }
            Ok(())
        })
    }
}
