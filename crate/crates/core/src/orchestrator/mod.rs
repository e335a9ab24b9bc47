//! Cloud instance lifecycle: launch through a provider, poll status, terminate.
//!
//! Credentials are unsealed only for the duration of one provider call. A
//! launch whose provider call fails leaves no instance behind. Status updates
//! are compare-and-swap against the stored status, so a stale poll can never
//! bring a terminated instance back.

mod state;
pub mod wire;

use std::collections::BTreeMap;
use std::sync::atomic::Ordering;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use utoipa::ToSchema;

use crate::analytics::{self, EventKind};
use crate::auth::Caller;
use crate::error::{Error, Result};
use crate::groups::check_tag;
use crate::ids::{AppId, CredentialId, ImageId, UserId};
use crate::platform::Platform;
use crate::registry::{load_app, load_image, ImageKind, ImageTarget, Visibility};
use crate::storage::{tables, ReadExt, ReadTx, WriteExt};
use crate::vault::load_credential;

pub use state::{next_status, InstanceStatus, LifecycleEvent, ProviderState, DECLARED_TRANSITIONS};
use wire::{InstanceReport, WireCredentials, WireError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ToSchema)]
pub enum Protocol {
    #[default]
    #[serde(rename = "ec2-like")]
    Ec2Like,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, ToSchema)]
pub struct ProviderDescriptor {
    pub provider_ref: String,
    pub endpoint_url: String,
    #[serde(default)]
    pub protocol: Protocol,
    pub instance_types: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct ProviderRegistry {
    providers: BTreeMap<String, ProviderDescriptor>,
}

impl ProviderRegistry {
    pub fn new(descriptors: Vec<ProviderDescriptor>) -> Result<Self> {
        let mut providers = BTreeMap::new();
        for d in descriptors {
            if d.provider_ref.trim().is_empty() {
                return Err(Error::ValidationFailed("provider_ref must not be empty".into()));
            }
            if d.instance_types.is_empty() {
                return Err(Error::ValidationFailed(format!(
                    "provider `{}` offers no instance types",
                    d.provider_ref
                )));
            }
            url::Url::parse(&d.endpoint_url).map_err(|e| {
                Error::ValidationFailed(format!("provider `{}` endpoint: {e}", d.provider_ref))
            })?;
            if providers.insert(d.provider_ref.clone(), d).is_some() {
                return Err(Error::ValidationFailed("duplicate provider_ref".into()));
            }
        }
        Ok(Self { providers })
    }

    pub fn get(&self, provider_ref: &str) -> Result<&ProviderDescriptor> {
        self.providers
            .get(provider_ref)
            .ok_or_else(|| Error::UnknownProvider(provider_ref.to_string()))
    }

    pub fn list(&self) -> Vec<ProviderDescriptor> {
        self.providers.values().cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, ToSchema)]
pub struct Instance {
    pub instance_id: String,
    pub reservation_id: String,
    pub application_id: AppId,
    pub image_id: ImageId,
    pub owner_id: UserId,
    pub provider_ref: String,
    pub credential_id: CredentialId,
    pub role: ImageKind,
    pub instance_type: String,
    pub status: InstanceStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub public_address: Option<String>,
    pub launched_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_polled_at: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag_id: Option<String>,
}

impl Instance {
    pub fn key(&self) -> String {
        instance_key(&self.provider_ref, &self.instance_id)
    }
}

pub fn instance_key(provider_ref: &str, instance_id: &str) -> String {
    format!("{provider_ref}/{instance_id}")
}

/// The dashboard columns: instance id, status and address.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, ToSchema)]
pub struct InstanceSummary {
    pub instance_id: String,
    pub provider_ref: String,
    pub reservation_id: String,
    pub status: InstanceStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub public_address: Option<String>,
}

impl From<&Instance> for InstanceSummary {
    fn from(i: &Instance) -> Self {
        Self {
            instance_id: i.instance_id.clone(),
            provider_ref: i.provider_ref.clone(),
            reservation_id: i.reservation_id.clone(),
            status: i.status,
            public_address: i.public_address.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, ToSchema)]
pub struct LaunchRequest {
    pub application_id: AppId,
    pub image_id: ImageId,
    pub credential_id: CredentialId,
    pub instance_type: String,
    pub role: ImageKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, ToSchema)]
pub struct LaunchOutcome {
    pub reservation_id: String,
    pub instance: Instance,
}

/// Result of one background poll pass.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PollCycle {
    pub skipped: bool,
    pub polled: usize,
    pub updated: usize,
    pub failures: Vec<(String, Error)>,
}

/// What the instance's boot process receives as user data.
#[derive(Debug, Serialize)]
struct UserData<'a> {
    application_id: AppId,
    role: ImageKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    tag_id: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    project_server_url: Option<&'a str>,
}

fn map_wire(err: WireError) -> Error {
    match err {
        WireError::AuthFailed { code, message } => Error::ProviderRejected { code, message },
        WireError::Provider { code, message, .. } if code == "InstanceLimitExceeded" => {
            Error::QuotaExceeded(message)
        }
        WireError::Provider {
            status,
            code,
            message,
        } if status >= 500 => Error::ProviderUnreachable(format!("{code}: {message}")),
        WireError::Provider { code, message, .. } => Error::ProviderRejected { code, message },
        WireError::MalformedResponse(m) => Error::ProviderRejected {
            code: "MalformedResponse".into(),
            message: m,
        },
        WireError::Transport(m) => Error::ProviderUnreachable(m),
    }
}

fn load_instance(tx: &dyn ReadTx, key: &str) -> Result<Instance> {
    tx.get_json(tables::INSTANCES, key)?
        .ok_or(Error::NotFound("instance"))
}

/// Applies one observation to an instance. Returns whether anything visible
/// (status or address) changed.
fn apply(instance: &mut Instance, event: LifecycleEvent, report: Option<&InstanceReport>) -> bool {
    let before = (instance.status, instance.public_address.clone());
    instance.status = next_status(instance.status, event);
    if instance.status == InstanceStatus::Running {
        if let Some(addr) = report.and_then(|r| r.public_address.clone()) {
            instance.public_address = Some(addr);
        }
    }
    before != (instance.status, instance.public_address.clone())
}

impl Platform {
    fn wire_creds(&self, credential_id: CredentialId) -> Result<WireCredentials> {
        let secret = self.unseal(credential_id)?;
        Ok(WireCredentials {
            access_key_id: secret.access_key_id,
            secret_key: secret.secret_key,
        })
    }

    /// Launches a cloud image. The instance is recorded only after the
    /// provider accepted the request.
    pub async fn launch(&self, caller: &Caller, req: &LaunchRequest) -> Result<LaunchOutcome> {
        let (app, provider, external_image_id) = self.storage.read(|tx| {
            let app = load_app(tx, req.application_id)?.ok_or(Error::AppNotFound)?;
            let is_owner = app.owner_id == caller.user_id;
            if app.visibility == Visibility::Private && !is_owner {
                return Err(Error::AppNotFound);
            }
            let image = load_image(tx, req.image_id)?
                .filter(|i| i.application_id == app.application_id)
                .ok_or(Error::ImageNotFound)?;
            if image.kind != req.role {
                return Err(Error::ValidationFailed(
                    "role does not match the image kind".into(),
                ));
            }
            if req.role == ImageKind::Server && !is_owner {
                return Err(Error::NotOwner);
            }
            let ImageTarget::Cloud {
                provider_ref,
                external_image_id,
            } = image.target
            else {
                return Err(Error::ValidationFailed("image is not a cloud image".into()));
            };
            let cred = load_credential(tx, req.credential_id)?.ok_or(Error::NotFound("credential"))?;
            if cred.user_id != caller.user_id {
                return Err(Error::NotOwner);
            }
            if cred.provider_ref != provider_ref {
                return Err(Error::ValidationFailed(format!(
                    "credential is for `{}`, image is on `{provider_ref}`",
                    cred.provider_ref
                )));
            }
            let provider = self.providers.get(&provider_ref)?.clone();
            if !provider.instance_types.contains(&req.instance_type) {
                return Err(Error::ValidationFailed(format!(
                    "instance type `{}` is not offered by `{provider_ref}`",
                    req.instance_type
                )));
            }
            check_tag(tx, caller.user_id, app.application_id, req.tag_id.as_deref())?;
            Ok((app, provider, external_image_id))
        })?;

        let creds = self.wire_creds(req.credential_id)?;
        let user_data = serde_json::to_string(&UserData {
            application_id: app.application_id,
            role: req.role,
            tag_id: req.tag_id.as_deref(),
            project_server_url: app.project_server_url.as_deref(),
        })?;
        let run = self
            .wire
            .run_instances(
                &provider.endpoint_url,
                &creds,
                &external_image_id,
                &req.instance_type,
                Some(&user_data),
            )
            .await
            .map_err(map_wire)?;
        drop(creds);

        let now = self.clock.now();
        let mut instance = Instance {
            instance_id: run.instance_id,
            reservation_id: run.reservation_id.clone(),
            application_id: app.application_id,
            image_id: req.image_id,
            owner_id: caller.user_id,
            provider_ref: provider.provider_ref.clone(),
            credential_id: req.credential_id,
            role: req.role,
            instance_type: req.instance_type.clone(),
            status: InstanceStatus::Pending,
            public_address: None,
            launched_at: now,
            last_polled_at: None,
            tag_id: req.tag_id.clone(),
        };
        if let Some(s) = run.state {
            apply(&mut instance, LifecycleEvent::Reported(s), None);
        }
        self.storage.transact(|tx| {
            tx.put_json(tables::INSTANCES, &instance.key(), &instance)?;
            analytics::record_internal(tx, caller, EventKind::LaunchCloud, Some(app.application_id), now)?;
            if req.role == ImageKind::Client {
                analytics::record_run(tx, caller.user_id, app.application_id, now, true)?;
            }
            Ok(())
        })?;
        Ok(LaunchOutcome {
            reservation_id: run.reservation_id,
            instance,
        })
    }

    /// Polls one instance at its provider and applies the reported state.
    /// Terminal instances are returned as stored without a provider call.
    pub async fn poll_instance(&self, provider_ref: &str, instance_id: &str) -> Result<Instance> {
        let key = instance_key(provider_ref, instance_id);
        let current = self.storage.read(|tx| load_instance(tx, &key))?;
        if current.status.is_terminal() {
            return Ok(current);
        }
        let provider = self.providers.get(provider_ref)?;
        let creds = self.wire_creds(current.credential_id)?;
        let reports = self
            .wire
            .describe_instances(&provider.endpoint_url, &creds, &[instance_id.to_string()])
            .await
            .map_err(map_wire)?;
        let report = reports.into_iter().find(|r| r.instance_id == instance_id);
        let event = match report.as_ref().and_then(|r| r.state) {
            Some(state) => LifecycleEvent::Reported(state),
            None => LifecycleEvent::Vanished,
        };
        let now = self.clock.now();
        let updated = self.storage.transact(|tx| {
            let mut inst = load_instance(tx, &key)?;
            apply(&mut inst, event, report.as_ref());
            inst.last_polled_at = Some(now);
            tx.put_json(tables::INSTANCES, &key, &inst)?;
            Ok(inst)
        })?;
        if event == LifecycleEvent::Vanished {
            return Err(Error::InstanceUnknownAtProvider);
        }
        Ok(updated)
    }

    /// Owner-checked status refresh.
    pub async fn instance_status(
        &self,
        caller: &Caller,
        provider_ref: &str,
        instance_id: &str,
    ) -> Result<Instance> {
        let key = instance_key(provider_ref, instance_id);
        let inst = self.storage.read(|tx| load_instance(tx, &key))?;
        if inst.owner_id != caller.user_id {
            return Err(Error::NotOwner);
        }
        self.poll_instance(provider_ref, instance_id).await
    }

    pub async fn terminate(
        &self,
        caller: &Caller,
        provider_ref: &str,
        instance_id: &str,
    ) -> Result<Instance> {
        let key = instance_key(provider_ref, instance_id);
        let inst = self.storage.read(|tx| load_instance(tx, &key))?;
        if inst.owner_id != caller.user_id {
            return Err(Error::NotOwner);
        }
        if inst.status.is_terminal() {
            return Err(Error::AlreadyTerminal);
        }
        let provider = self.providers.get(provider_ref)?;
        let creds = self.wire_creds(inst.credential_id)?;
        let reports = self
            .wire
            .terminate_instances(&provider.endpoint_url, &creds, &[instance_id.to_string()])
            .await
            .map_err(map_wire)?;
        let report = reports.into_iter().find(|r| r.instance_id == instance_id);
        let event = match report.as_ref().and_then(|r| r.state) {
            Some(_) => LifecycleEvent::TerminateAcked,
            None => LifecycleEvent::Vanished,
        };
        let now = self.clock.now();
        self.storage.transact(|tx| {
            let mut inst = load_instance(tx, &key)?;
            if inst.status.is_terminal() {
                return Err(Error::AlreadyTerminal);
            }
            apply(&mut inst, event, report.as_ref());
            inst.last_polled_at = Some(now);
            tx.put_json(tables::INSTANCES, &key, &inst)?;
            analytics::record_internal(tx, caller, EventKind::StopCloud, Some(inst.application_id), now)?;
            Ok(inst)
        })
    }

    /// The caller's instances, oldest first.
    pub fn list_instances(
        &self,
        caller: &Caller,
        application_id: Option<AppId>,
        live_only: bool,
    ) -> Result<Vec<Instance>> {
        let mut out: Vec<Instance> = self.storage.read(|tx| {
            Ok(tx
                .scan_json::<Instance>(tables::INSTANCES)?
                .into_iter()
                .filter(|i| i.owner_id == caller.user_id)
                .filter(|i| application_id.is_none_or(|a| i.application_id == a))
                .filter(|i| !live_only || !i.status.is_terminal())
                .collect())
        })?;
        out.sort_by(|a, b| {
            a.launched_at
                .cmp(&b.launched_at)
                .then_with(|| a.key().cmp(&b.key()))
        });
        Ok(out)
    }

    /// Every non-terminal instance across all users.
    pub fn live_instances(&self) -> Result<Vec<Instance>> {
        self.storage.read(|tx| {
            Ok(tx
                .scan_json::<Instance>(tables::INSTANCES)?
                .into_iter()
                .filter(|i| !i.status.is_terminal())
                .collect())
        })
    }

    /// Polls every live instance concurrently. A failing provider only affects
    /// its own instances. If a previous cycle is still running this one is
    /// skipped.
    pub async fn background_poll_cycle(&self) -> Result<PollCycle> {
        if self
            .polling
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .is_err()
        {
            return Ok(PollCycle {
                skipped: true,
                ..PollCycle::default()
            });
        }
        struct Reset<'a>(&'a std::sync::atomic::AtomicBool);
        impl Drop for Reset<'_> {
            fn drop(&mut self) {
                self.0.store(false, Ordering::Release);
            }
        }
        let _reset = Reset(&self.polling);

        let live = self.live_instances()?;
        let polls = live.iter().map(|i| async move {
            let res = self.poll_instance(&i.provider_ref, &i.instance_id).await;
            (i, res)
        });
        let mut cycle = PollCycle {
            polled: live.len(),
            ..PollCycle::default()
        };
        for (before, res) in futures::future::join_all(polls).await {
            match res {
                Ok(after) => {
                    if (after.status, &after.public_address) != (before.status, &before.public_address) {
                        cycle.updated += 1;
                    }
                }
                Err(Error::InstanceUnknownAtProvider) => {
                    cycle.updated += 1;
                    cycle
                        .failures
                        .push((before.key(), Error::InstanceUnknownAtProvider));
                }
                Err(e) => cycle.failures.push((before.key(), e)),
            }
        }
        Ok(cycle)
    }

    /// Runs [`Platform::background_poll_cycle`] every `config.poll_interval`
    /// until the returned handle is aborted.
    pub fn spawn_poller(self: &Arc<Self>) -> tokio::task::JoinHandle<()> {
        let platform = Arc::clone(self);
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(platform.config.poll_interval);
            tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
            loop {
                tick.tick().await;
                match platform.background_poll_cycle().await {
                    Ok(c) if !c.failures.is_empty() => {
                        tracing::warn!(failures = c.failures.len(), updated = c.updated, "poll cycle");
                    }
                    Ok(c) => tracing::debug!(polled = c.polled, updated = c.updated, "poll cycle"),
                    Err(e) => tracing::error!(error = %e, "poll cycle failed"),
                }
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(state: Option<ProviderState>, addr: Option<&str>) -> InstanceReport {
        InstanceReport {
            instance_id: "i-1".into(),
            state,
            public_address: addr.map(String::from),
        }
    }

    fn pending() -> Instance {
        Instance {
            instance_id: "i-1".into(),
            reservation_id: "r-1".into(),
            application_id: AppId::new(),
            image_id: ImageId::new(),
            owner_id: UserId::new(),
            provider_ref: "sim-cloud".into(),
            credential_id: CredentialId::new(),
            role: ImageKind::Client,
            instance_type: "m1.small".into(),
            status: InstanceStatus::Pending,
            public_address: None,
            launched_at: Utc::now(),
            last_polled_at: None,
            tag_id: None,
        }
    }

    #[test]
    fn apply_is_idempotent_for_an_unchanged_report() {
        let r = report(Some(ProviderState::Running), Some("10.0.0.7"));
        let mut a = pending();
        assert!(apply(
            &mut a,
            LifecycleEvent::Reported(ProviderState::Running),
            Some(&r)
        ));
        let once = a.clone();
        assert!(!apply(
            &mut a,
            LifecycleEvent::Reported(ProviderState::Running),
            Some(&r)
        ));
        assert_eq!(a, once);
        assert_eq!(a.public_address.as_deref(), Some("10.0.0.7"));
    }

    #[test]
    fn address_is_kept_for_audit_after_termination() {
        let mut a = pending();
        let r = report(Some(ProviderState::Running), Some("10.0.0.7"));
        apply(&mut a, LifecycleEvent::Reported(ProviderState::Running), Some(&r));
        apply(&mut a, LifecycleEvent::TerminateAcked, None);
        assert_eq!(a.status, InstanceStatus::Terminated);
        assert_eq!(a.public_address.as_deref(), Some("10.0.0.7"));
        // A late "running" report cannot resurrect it.
        assert!(!apply(
            &mut a,
            LifecycleEvent::Reported(ProviderState::Running),
            Some(&r)
        ));
        assert_eq!(a.status, InstanceStatus::Terminated);
    }

    #[test]
    fn wire_errors_map_to_domain_errors() {
        let quota = WireError::Provider {
            status: 400,
            code: "InstanceLimitExceeded".into(),
            message: "full".into(),
        };
        assert!(matches!(map_wire(quota), Error::QuotaExceeded(_)));
        assert!(matches!(
            map_wire(WireError::Transport("refused".into())),
            Error::ProviderUnreachable(_)
        ));
        assert!(matches!(
            map_wire(WireError::Provider {
                status: 503,
                code: "x".into(),
                message: String::new()
            }),
            Error::ProviderUnreachable(_)
        ));
        assert!(matches!(
            map_wire(WireError::AuthFailed { code: "SignatureDoesNotMatch".into(), message: String::new() }),
            Error::ProviderRejected { code, .. } if code == "SignatureDoesNotMatch"
        ));
    }

    #[test]
    fn registry_validates_descriptors() {
        let d = |name: &str, types: &[&str]| ProviderDescriptor {
            provider_ref: name.into(),
            endpoint_url: "http://127.0.0.1:9/".into(),
            protocol: Protocol::Ec2Like,
            instance_types: types.iter().map(|s| s.to_string()).collect(),
        };
        assert!(ProviderRegistry::new(vec![d("a", &[])]).is_err());
        assert!(ProviderRegistry::new(vec![d("a", &["m1.small"]), d("a", &["m1.small"])]).is_err());
        let reg = ProviderRegistry::new(vec![d("a", &["m1.small"])]).unwrap();
        assert!(reg.get("a").is_ok());
        assert_eq!(reg.get("b"), Err(Error::UnknownProvider("b".into())));
        let json = serde_json::to_value(d("a", &["m1.small"])).unwrap();
        assert_eq!(json["protocol"], "ec2-like");
    }
}
