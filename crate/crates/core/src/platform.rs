//! The service facade: every operation is a method on [`Platform`], spread
//! across the domain modules.

use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use chrono::Duration;
use serde::{Deserialize, Serialize};
use utoipa::ToSchema;

use crate::analytics::{user_participation_tx, ParticipationView};
use crate::auth::Caller;
use crate::blobstore::BlobStore;
use crate::clock::{Clock, SystemClock};
use crate::error::Result;
use crate::exec::Exec;
use crate::identity::{LogNotifier, Notifier, PasswordPolicy, Role};
use crate::launcher::DescriptorKey;
use crate::orchestrator::wire::{WireClient, WireFormat};
use crate::orchestrator::{Instance, ProviderDescriptor, ProviderRegistry};
use crate::registry::{Application, ImageKind};
use crate::storage::{tables, ReadExt, Storage};
use crate::vault::{KeyRing, MasterKey};

#[derive(Debug, Clone)]
pub struct PlatformConfig {
    pub passwords: PasswordPolicy,
    pub session_ttl: Duration,
    pub reset_ttl: Duration,
    pub descriptor_ttl: Duration,
    /// How long after issue a run report is still accepted.
    pub report_window: Duration,
    pub upload_max_bytes: u64,
    /// Base URL the service is reachable at; used in descriptor download links.
    pub public_base_url: String,
    pub max_token_ttl: Duration,
    pub poll_interval: std::time::Duration,
    /// Trailing window that makes a project "active".
    pub active_window: Duration,
}

impl Default for PlatformConfig {
    fn default() -> Self {
        Self {
            passwords: PasswordPolicy::default(),
            session_ttl: Duration::hours(24),
            reset_ttl: Duration::hours(1),
            descriptor_ttl: Duration::minutes(10),
            report_window: Duration::hours(24),
            upload_max_bytes: 4 << 30,
            public_base_url: "http://127.0.0.1:8080".into(),
            max_token_ttl: Duration::days(90),
            poll_interval: std::time::Duration::from_secs(5),
            active_window: Duration::days(30),
        }
    }
}

pub struct Platform {
    pub storage: Storage,
    pub blobs: BlobStore,
    pub(crate) keyring: KeyRing,
    pub(crate) descriptor_key: DescriptorKey,
    pub providers: ProviderRegistry,
    pub(crate) wire: WireClient,
    pub clock: Arc<dyn Clock>,
    pub(crate) notifier: Arc<dyn Notifier>,
    pub config: PlatformConfig,
    pub exec: Exec,
    pub(crate) dummy_digest: String,
    pub(crate) polling: AtomicBool,
}

impl std::fmt::Debug for Platform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Platform")
            .field("storage", &self.storage)
            .field("blobs", &self.blobs.root())
            .field("providers", &self.providers)
            .finish_non_exhaustive()
    }
}

pub struct PlatformBuilder {
    storage: Storage,
    blobs: BlobStore,
    keyring: Option<KeyRing>,
    descriptor_key: Option<DescriptorKey>,
    providers: Vec<ProviderDescriptor>,
    clock: Arc<dyn Clock>,
    notifier: Arc<dyn Notifier>,
    config: PlatformConfig,
    exec: Exec,
    wire_format: WireFormat,
}

impl PlatformBuilder {
    pub fn keyring(mut self, ring: KeyRing) -> Self {
        self.keyring = Some(ring);
        self
    }

    pub fn descriptor_key(mut self, key: DescriptorKey) -> Self {
        self.descriptor_key = Some(key);
        self
    }

    pub fn providers(mut self, providers: Vec<ProviderDescriptor>) -> Self {
        self.providers = providers;
        self
    }

    pub fn clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn notifier(mut self, notifier: Arc<dyn Notifier>) -> Self {
        self.notifier = notifier;
        self
    }

    pub fn config(mut self, config: PlatformConfig) -> Self {
        self.config = config;
        self
    }

    pub fn exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn wire_format(mut self, format: WireFormat) -> Self {
        self.wire_format = format;
        self
    }

    /// Brings storage to the latest schema and assembles the platform. Without
    /// an explicit key ring a random master key is generated, which makes
    /// sealed credentials unreadable after a restart.
    pub fn build(self) -> Result<Platform> {
        self.storage.migrate(None)?;
        let keyring = self.keyring.unwrap_or_else(|| {
            tracing::warn!("no master key configured; using an ephemeral one");
            KeyRing::new("ephemeral", MasterKey::generate())
        });
        let descriptor_key = self
            .descriptor_key
            .unwrap_or_else(|| DescriptorKey::derive(keyring.current()));
        let dummy_digest = self.config.passwords.digest("not-a-real-password")?;
        Ok(Platform {
            storage: self.storage,
            blobs: self.blobs,
            keyring,
            descriptor_key,
            providers: ProviderRegistry::new(self.providers)?,
            wire: WireClient::new(self.wire_format),
            clock: self.clock,
            notifier: self.notifier,
            config: self.config,
            exec: self.exec,
            dummy_digest,
            polling: AtomicBool::new(false),
        })
    }
}

/// The role-filtered dashboard.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, ToSchema)]
pub struct Dashboard {
    pub active_role: Role,
    /// Provider view: the caller's applications.
    pub applications: Vec<Application>,
    /// Provider view: server instances; user view: client instances.
    pub instances: Vec<Instance>,
    /// User view: participation history.
    pub participation: Vec<ParticipationView>,
}

impl Platform {
    pub fn builder(storage: Storage, blobs: BlobStore) -> PlatformBuilder {
        PlatformBuilder {
            storage,
            blobs,
            keyring: None,
            descriptor_key: None,
            providers: Vec::new(),
            clock: Arc::new(SystemClock),
            notifier: Arc::new(LogNotifier),
            config: PlatformConfig::default(),
            exec: Exec::Auto,
            wire_format: WireFormat::Xml,
        }
    }

    pub fn keyring(&self) -> &KeyRing {
        &self.keyring
    }

    /// With the provider role: owned applications and server instances. With
    /// the user role: participation and client instances.
    pub fn dashboard(&self, caller: &Caller) -> Result<Dashboard> {
        self.storage.read(|tx| {
            let mut instances: Vec<Instance> = tx
                .scan_json::<Instance>(tables::INSTANCES)?
                .into_iter()
                .filter(|i| i.owner_id == caller.user_id)
                .filter(|i| match caller.active_role {
                    Role::Provider => i.role == ImageKind::Server,
                    Role::User => i.role == ImageKind::Client,
                })
                .collect();
            instances.sort_by(|a, b| {
                a.launched_at
                    .cmp(&b.launched_at)
                    .then_with(|| a.key().cmp(&b.key()))
            });
            Ok(match caller.active_role {
                Role::Provider => {
                    let mut applications: Vec<Application> = tx
                        .scan_json::<Application>(tables::APPLICATIONS)?
                        .into_iter()
                        .filter(|a| a.owner_id == caller.user_id)
                        .collect();
                    applications
                        .sort_by(|a, b| a.name.cmp(&b.name).then(a.application_id.cmp(&b.application_id)));
                    Dashboard {
                        active_role: Role::Provider,
                        applications,
                        instances,
                        participation: Vec::new(),
                    }
                }
                Role::User => Dashboard {
                    active_role: Role::User,
                    applications: Vec::new(),
                    instances,
                    participation: user_participation_tx(tx, caller.user_id)?,
                },
            })
        })
    }
}

/// Ready-made platforms for tests.
#[cfg(any(test, feature = "testing"))]
pub mod testing {
    use std::sync::Arc;

    use chrono::TimeZone;

    use super::*;
    use crate::clock::ManualClock;
    use crate::identity::{CapturingNotifier, Session, UserAccount};
    use crate::orchestrator::Protocol;

    pub struct Fixture {
        pub platform: Platform,
        pub clock: Arc<ManualClock>,
        pub notifier: Arc<CapturingNotifier>,
        pub dir: tempfile::TempDir,
    }

    #[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
    pub enum BackendKind {
        #[default]
        Memory,
        Sqlite,
    }

    impl BackendKind {
        pub const ALL: [BackendKind; 2] = [BackendKind::Memory, BackendKind::Sqlite];
    }

    pub fn provider(name: &str, endpoint: &str) -> ProviderDescriptor {
        ProviderDescriptor {
            provider_ref: name.into(),
            endpoint_url: endpoint.into(),
            protocol: Protocol::Ec2Like,
            instance_types: vec!["m1.small".into(), "m1.large".into()],
        }
    }

    /// Providers that point at a closed port.
    pub fn offline_providers() -> Vec<ProviderDescriptor> {
        vec![
            provider("sim-cloud", "http://127.0.0.1:9/"),
            provider("other-cloud", "http://127.0.0.1:9/"),
        ]
    }

    pub fn fixture() -> Fixture {
        fixture_with(BackendKind::Memory, offline_providers())
    }

    pub fn fixture_with(backend: BackendKind, providers: Vec<ProviderDescriptor>) -> Fixture {
        let dir = tempfile::tempdir().expect("tempdir");
        let storage = match backend {
            BackendKind::Memory => Storage::in_memory(),
            BackendKind::Sqlite => Storage::sqlite(dir.path().join("db.sqlite")).expect("sqlite"),
        };
        let blobs = BlobStore::open(dir.path().join("store")).expect("blob store");
        let clock = Arc::new(ManualClock::new(
            chrono::Utc.with_ymd_and_hms(2026, 3, 1, 12, 0, 0).unwrap(),
        ));
        let notifier = Arc::new(CapturingNotifier::default());
        let platform = Platform::builder(storage, blobs)
            .keyring(KeyRing::new("k1", MasterKey::generate()))
            .providers(providers)
            .clock(clock.clone())
            .notifier(notifier.clone())
            .config(PlatformConfig {
                passwords: PasswordPolicy::fast(),
                ..PlatformConfig::default()
            })
            .build()
            .expect("platform");
        Fixture {
            platform,
            clock,
            notifier,
            dir,
        }
    }

    impl Fixture {
        pub fn password(name: &str) -> String {
            format!("pw-{name}-123")
        }

        /// Registers `name` and logs in.
        pub fn user(&self, name: &str) -> (UserAccount, Session) {
            let acct = self
                .platform
                .register(name, &format!("{name}@example.org"), &Self::password(name))
                .expect("register");
            let session = self.platform.login(name, &Self::password(name)).expect("login");
            (acct, session)
        }

        /// A fresh user acting in the user role.
        pub fn caller(&self, name: &str) -> Caller {
            let (_, s) = self.user(name);
            self.platform.caller(&s.token).expect("caller")
        }

        /// A fresh user acting in the provider role.
        pub fn provider(&self, name: &str) -> Caller {
            let (_, s) = self.user(name);
            self.platform
                .switch_role(&s.token, "provider")
                .expect("switch role");
            self.platform.caller(&s.token).expect("caller")
        }
    }
}
