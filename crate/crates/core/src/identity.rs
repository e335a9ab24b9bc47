//! Accounts, sessions, role switching and password reset.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use argon2::password_hash::{PasswordHash, PasswordHasher, PasswordVerifier, SaltString};
use argon2::{Algorithm, Argon2, Params, Version};
use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use rand::rngs::OsRng;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use utoipa::ToSchema;

use crate::error::{Error, Result};
use crate::ids::UserId;
use crate::platform::Platform;
use crate::storage::{tables, ReadExt, ReadTx, WriteExt};

pub(crate) const SESSION_PREFIX: &str = "ghs_";
pub(crate) const TOKEN_PREFIX: &str = "ght_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, ToSchema)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Provider,
    User,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Provider => "provider",
            Role::User => "user",
        })
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "provider" => Ok(Role::Provider),
            "user" => Ok(Role::User),
            other => Err(Error::RoleNotHeld(other.to_string())),
        }
    }
}

/// Public view of an account. The password digest never leaves storage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, ToSchema)]
pub struct UserAccount {
    pub user_id: UserId,
    pub username: String,
    pub email: String,
    pub roles: BTreeSet<Role>,
    pub created_at: DateTime<Utc>,
}

#[derive(Clone, Serialize, Deserialize)]
pub(crate) struct AccountRecord {
    #[serde(flatten)]
    pub account: UserAccount,
    pub password_digest: String,
}

/// A login session. `token` is the bearer secret and is only known to the
/// holder; storage keeps a hash of it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, ToSchema)]
pub struct Session {
    pub token: String,
    pub user_id: UserId,
    pub active_role: Role,
    pub issued_at: DateTime<Utc>,
    pub expires_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct SessionRecord {
    pub token_hash: String,
    pub user_id: UserId,
    pub active_role: Role,
    pub issued_at: DateTime<Utc>,
    pub expires_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct ResetTicketRecord {
    pub ticket_hash: String,
    pub user_id: UserId,
    pub expires_at: DateTime<Utc>,
    pub consumed: bool,
}

/// Argon2id parameters plus the minimum password length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PasswordPolicy {
    pub min_len: usize,
    pub memory_kib: u32,
    pub iterations: u32,
    pub parallelism: u32,
}

impl Default for PasswordPolicy {
    fn default() -> Self {
        Self {
            min_len: 8,
            memory_kib: 19 * 1024,
            iterations: 2,
            parallelism: 1,
        }
    }
}

impl PasswordPolicy {
    /// Cheap parameters for tests and load runs.
    pub fn fast() -> Self {
        Self {
            memory_kib: 256,
            iterations: 1,
            ..Self::default()
        }
    }

    fn hasher(&self) -> Argon2<'static> {
        let params = Params::new(self.memory_kib, self.iterations, self.parallelism, None)
            .expect("argon2 parameters are in range");
        Argon2::new(Algorithm::Argon2id, Version::V0x13, params)
    }

    pub fn check(&self, password: &str) -> Result<()> {
        if password.chars().count() < self.min_len {
            return Err(Error::WeakPassword { min: self.min_len });
        }
        Ok(())
    }

    pub fn digest(&self, password: &str) -> Result<String> {
        let salt = SaltString::generate(&mut OsRng);
        self.hasher()
            .hash_password(password.as_bytes(), &salt)
            .map(|h| h.to_string())
            .map_err(|e| Error::Storage(format!("password hashing: {e}")))
    }

    pub fn verify(&self, password: &str, digest: &str) -> bool {
        match PasswordHash::new(digest) {
            Ok(parsed) => self
                .hasher()
                .verify_password(password.as_bytes(), &parsed)
                .is_ok(),
            Err(_) => false,
        }
    }
}

/// Delivers password reset tickets to the account holder.
pub trait Notifier: Send + Sync {
    fn password_reset(&self, email: &str, ticket_token: &str);
}

/// Default notifier: writes the ticket to the service log.
#[derive(Debug, Default)]
pub struct LogNotifier;

impl Notifier for LogNotifier {
    fn password_reset(&self, email: &str, ticket_token: &str) {
        tracing::info!(%email, ticket = %ticket_token, "password reset ticket issued");
    }
}

/// Keeps every delivered ticket in memory.
#[derive(Debug, Default)]
pub struct CapturingNotifier {
    sent: Mutex<Vec<(String, String)>>,
}

impl CapturingNotifier {
    pub fn sent(&self) -> Vec<(String, String)> {
        self.sent.lock().clone()
    }

    pub fn last_for(&self, email: &str) -> Option<String> {
        self.sent
            .lock()
            .iter()
            .rev()
            .find(|(e, _)| e == email)
            .map(|(_, t)| t.clone())
    }
}

impl Notifier for CapturingNotifier {
    fn password_reset(&self, email: &str, ticket_token: &str) {
        self.sent
            .lock()
            .push((email.to_string(), ticket_token.to_string()));
    }
}

pub(crate) fn random_token(prefix: &str) -> String {
    let mut bytes = [0u8; 32];
    OsRng.fill_bytes(&mut bytes);
    format!("{prefix}{}", URL_SAFE_NO_PAD.encode(bytes))
}

pub(crate) fn token_hash(token: &str) -> String {
    hex::encode(Sha256::digest(token.as_bytes()))
}

fn normalize_email(email: &str) -> String {
    email.trim().to_ascii_lowercase()
}

fn validate_email(email: &str) -> Result<()> {
    let bad = || Error::ValidationFailed("email is not a valid address".into());
    let (local, domain) = email.split_once('@').ok_or_else(bad)?;
    if local.is_empty()
        || domain.is_empty()
        || domain.contains('@')
        || !domain.contains('.')
        || domain.starts_with('.')
        || domain.ends_with('.')
        || email.chars().any(char::is_whitespace)
    {
        return Err(bad());
    }
    Ok(())
}

pub(crate) fn load_account(tx: &dyn ReadTx, user_id: UserId) -> Result<Option<AccountRecord>> {
    tx.get_json(tables::USERS, &user_id.to_string())
}

pub(crate) fn account_by_name(tx: &dyn ReadTx, username: &str) -> Result<Option<AccountRecord>> {
    match tx.get_json::<UserId>(tables::USERS_BY_NAME, username)? {
        Some(id) => load_account(tx, id),
        None => Ok(None),
    }
}

pub(crate) fn username_of(tx: &dyn ReadTx, user_id: UserId) -> Result<String> {
    Ok(load_account(tx, user_id)?
        .map(|a| a.account.username)
        .unwrap_or_default())
}

impl Platform {
    pub fn register(&self, username: &str, email: &str, password: &str) -> Result<UserAccount> {
        let username = username.trim();
        if username.is_empty() {
            return Err(Error::ValidationFailed("username must not be empty".into()));
        }
        validate_email(email.trim())?;
        self.config.passwords.check(password)?;
        let email_key = normalize_email(email);
        let digest = self.config.passwords.digest(password)?;
        let account = UserAccount {
            user_id: UserId::new(),
            username: username.to_string(),
            email: email.trim().to_string(),
            roles: [Role::User, Role::Provider].into_iter().collect(),
            created_at: self.clock.now(),
        };
        let record = AccountRecord {
            account: account.clone(),
            password_digest: digest,
        };
        self.storage.transact(|tx| {
            if tx.exists(tables::USERS_BY_NAME, username)? || tx.exists(tables::USERS_BY_EMAIL, &email_key)? {
                return Err(Error::DuplicateIdentity);
            }
            let id = account.user_id.to_string();
            tx.put_json(tables::USERS, &id, &record)?;
            tx.put_json(tables::USERS_BY_NAME, username, &account.user_id)?;
            tx.put_json(tables::USERS_BY_EMAIL, &email_key, &account.user_id)?;
            Ok(())
        })?;
        Ok(account)
    }

    /// Unknown user and wrong password fail identically, and both pay for one
    /// digest verification.
    pub fn login(&self, username: &str, password: &str) -> Result<Session> {
        let record = self.storage.read(|tx| account_by_name(tx, username.trim()))?;
        let ok = match &record {
            Some(r) => self.config.passwords.verify(password, &r.password_digest),
            None => {
                self.config.passwords.verify(password, &self.dummy_digest);
                false
            }
        };
        let record = match (ok, record) {
            (true, Some(r)) => r,
            _ => return Err(Error::BadCredentials),
        };
        let now = self.clock.now();
        let token = random_token(SESSION_PREFIX);
        let session = Session {
            token: token.clone(),
            user_id: record.account.user_id,
            active_role: Role::User,
            issued_at: now,
            expires_at: now + self.config.session_ttl,
        };
        let stored = SessionRecord {
            token_hash: token_hash(&token),
            user_id: session.user_id,
            active_role: session.active_role,
            issued_at: session.issued_at,
            expires_at: session.expires_at,
        };
        self.storage
            .transact(|tx| tx.put_json(tables::SESSIONS, &stored.token_hash, &stored))?;
        Ok(session)
    }

    /// Ends a session. Unknown tokens are ignored.
    pub fn logout(&self, token: &str) -> Result<()> {
        let hash = token_hash(token);
        self.storage.transact(|tx| {
            tx.delete(tables::SESSIONS, &hash)?;
            Ok(())
        })
    }

    pub fn account(&self, user_id: UserId) -> Result<UserAccount> {
        self.storage
            .read(|tx| load_account(tx, user_id))?
            .map(|r| r.account)
            .ok_or(Error::NotFound("account"))
    }

    /// Changes the active role of a live session; the token is unchanged.
    pub fn switch_role(&self, token: &str, role: &str) -> Result<Session> {
        let role: Role = role.parse()?;
        let hash = token_hash(token);
        let now = self.clock.now();
        let record = self.storage.transact(|tx| {
            let mut rec: SessionRecord = tx
                .get_json(tables::SESSIONS, &hash)?
                .filter(|s: &SessionRecord| s.expires_at > now)
                .ok_or(Error::Unauthenticated)?;
            let account = load_account(tx, rec.user_id)?.ok_or(Error::Unauthenticated)?;
            if !account.account.roles.contains(&role) {
                return Err(Error::RoleNotHeld(role.to_string()));
            }
            rec.active_role = role;
            tx.put_json(tables::SESSIONS, &hash, &rec)?;
            Ok(rec)
        })?;
        Ok(Session {
            token: token.to_string(),
            user_id: record.user_id,
            active_role: record.active_role,
            issued_at: record.issued_at,
            expires_at: record.expires_at,
        })
    }

    /// Always succeeds from the caller's point of view. A ticket is created and
    /// delivered only when the email belongs to an account.
    pub fn request_password_reset(&self, email: &str) -> Result<()> {
        let key = normalize_email(email);
        let now = self.clock.now();
        let token = random_token("ghr_");
        let created = self.storage.transact(|tx| {
            let Some(user_id) = tx.get_json::<UserId>(tables::USERS_BY_EMAIL, &key)? else {
                return Ok(None);
            };
            let account = load_account(tx, user_id)?.ok_or(Error::NotFound("account"))?;
            let ticket = ResetTicketRecord {
                ticket_hash: token_hash(&token),
                user_id,
                expires_at: now + self.config.reset_ttl,
                consumed: false,
            };
            tx.put_json(tables::RESET_TICKETS, &ticket.ticket_hash, &ticket)?;
            Ok(Some(account.account.email))
        })?;
        if let Some(address) = created {
            self.notifier.password_reset(&address, &token);
        }
        Ok(())
    }

    /// Consumes the ticket, replaces the digest and ends every session of the user.
    pub fn reset_password(&self, ticket_token: &str, new_password: &str) -> Result<()> {
        self.config.passwords.check(new_password)?;
        let digest = self.config.passwords.digest(new_password)?;
        let hash = token_hash(ticket_token);
        let now = self.clock.now();
        self.storage.transact(|tx| {
            let mut ticket: ResetTicketRecord = tx
                .get_json(tables::RESET_TICKETS, &hash)?
                .ok_or(Error::TicketInvalid)?;
            if ticket.consumed || ticket.expires_at <= now {
                return Err(Error::TicketInvalid);
            }
            ticket.consumed = true;
            tx.put_json(tables::RESET_TICKETS, &hash, &ticket)?;
            let mut account = load_account(tx, ticket.user_id)?.ok_or(Error::TicketInvalid)?;
            account.password_digest = digest.clone();
            tx.put_json(tables::USERS, &ticket.user_id.to_string(), &account)?;
            for s in tx.scan_json::<SessionRecord>(tables::SESSIONS)? {
                if s.user_id == ticket.user_id {
                    tx.delete(tables::SESSIONS, &s.token_hash)?;
                }
            }
            Ok(())
        })
    }

    /// Number of stored reset tickets; used by tests to observe that unknown
    /// emails create nothing.
    pub fn reset_ticket_count(&self) -> Result<usize> {
        self.storage.read(|tx| Ok(tx.scan(tables::RESET_TICKETS)?.len()))
    }
}
