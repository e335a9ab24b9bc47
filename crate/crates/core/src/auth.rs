//! Bearer authentication: resolving a session or API token to a [`Caller`],
//! and issuing/revoking scoped API tokens.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use utoipa::ToSchema;

use crate::error::{Error, Result};
use crate::identity::{
    load_account, random_token, token_hash, Role, SessionRecord, SESSION_PREFIX, TOKEN_PREFIX,
};
use crate::ids::{TokenId, UserId};
use crate::platform::Platform;
use crate::storage::{tables, ReadExt, WriteExt};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, ToSchema)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Read,
    Write,
    Launch,
}

impl Scope {
    pub const ALL: [Scope; 3] = [Scope::Read, Scope::Write, Scope::Launch];
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::Read => "read",
            Scope::Write => "write",
            Scope::Launch => "launch",
        })
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "read" => Ok(Scope::Read),
            "write" => Ok(Scope::Write),
            "launch" => Ok(Scope::Launch),
            other => Err(Error::ValidationFailed(format!("unknown scope `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AuthVia {
    Session { token_hash: String },
    ApiToken { token_id: TokenId },
}

/// An authenticated principal, resolved from a bearer token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Caller {
    pub user_id: UserId,
    pub active_role: Role,
    pub scopes: BTreeSet<Scope>,
    pub via: AuthVia,
}

impl Caller {
    pub fn has_scope(&self, scope: Scope) -> bool {
        self.scopes.contains(&scope)
    }

    /// Stable per-login key used to group this caller's events into sessions.
    pub fn session_key(&self) -> String {
        match &self.via {
            AuthVia::Session { token_hash } => format!("s:{}", &token_hash[..16]),
            AuthVia::ApiToken { token_id } => format!("t:{token_id}"),
        }
    }

    pub fn require_role(&self, role: Role) -> Result<()> {
        if self.active_role == role {
            Ok(())
        } else {
            Err(Error::RoleRequired(role))
        }
    }
}

/// Returned once at issuance; `token` is not recoverable afterwards.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, ToSchema)]
pub struct ApiToken {
    pub token_id: TokenId,
    pub token: String,
    pub user_id: UserId,
    pub scopes: BTreeSet<Scope>,
    pub active_role: Role,
    pub expires_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct TokenRecord {
    pub token_id: TokenId,
    pub token_hash: String,
    pub user_id: UserId,
    pub scopes: BTreeSet<Scope>,
    pub active_role: Role,
    pub expires_at: DateTime<Utc>,
}

impl Platform {
    /// Resolves a bearer token. Unknown, expired and revoked tokens are
    /// rejected identically.
    pub fn caller(&self, bearer: &str) -> Result<Caller> {
        let now = self.clock.now();
        let hash = token_hash(bearer);
        self.storage.read(|tx| {
            if bearer.starts_with(SESSION_PREFIX) {
                let s: SessionRecord = tx
                    .get_json(tables::SESSIONS, &hash)?
                    .filter(|s: &SessionRecord| s.expires_at > now)
                    .ok_or(Error::Unauthenticated)?;
                load_account(tx, s.user_id)?.ok_or(Error::Unauthenticated)?;
                Ok(Caller {
                    user_id: s.user_id,
                    active_role: s.active_role,
                    scopes: Scope::ALL.into_iter().collect(),
                    via: AuthVia::Session {
                        token_hash: hash.clone(),
                    },
                })
            } else if bearer.starts_with(TOKEN_PREFIX) {
                let t: TokenRecord = tx
                    .get_json(tables::API_TOKENS, &hash)?
                    .filter(|t: &TokenRecord| t.expires_at > now)
                    .ok_or(Error::Unauthenticated)?;
                load_account(tx, t.user_id)?.ok_or(Error::Unauthenticated)?;
                Ok(Caller {
                    user_id: t.user_id,
                    active_role: t.active_role,
                    scopes: t.scopes,
                    via: AuthVia::ApiToken { token_id: t.token_id },
                })
            } else {
                Err(Error::Unauthenticated)
            }
        })
    }

    /// Issues a token carrying `scopes` (which must be a subset of the
    /// caller's) and the caller's current active role.
    pub fn issue_token(&self, caller: &Caller, scopes: BTreeSet<Scope>, ttl: Duration) -> Result<ApiToken> {
        if scopes.is_empty() {
            return Err(Error::ValidationFailed("at least one scope is required".into()));
        }
        if !scopes.is_subset(&caller.scopes) {
            return Err(Error::ScopeExceeded);
        }
        if ttl <= Duration::zero() || ttl > self.config.max_token_ttl {
            return Err(Error::ValidationFailed(format!(
                "ttl must be between 1s and {}s",
                self.config.max_token_ttl.num_seconds()
            )));
        }
        let token = random_token(TOKEN_PREFIX);
        let record = TokenRecord {
            token_id: TokenId::new(),
            token_hash: token_hash(&token),
            user_id: caller.user_id,
            scopes,
            active_role: caller.active_role,
            expires_at: self.clock.now() + ttl,
        };
        self.storage
            .transact(|tx| tx.put_json(tables::API_TOKENS, &record.token_hash, &record))?;
        Ok(ApiToken {
            token_id: record.token_id,
            token,
            user_id: record.user_id,
            scopes: record.scopes,
            active_role: record.active_role,
            expires_at: record.expires_at,
        })
    }

    pub fn revoke_token(&self, caller: &Caller, token_id: TokenId) -> Result<()> {
        self.storage.transact(|tx| {
            let found = tx
                .scan_json::<TokenRecord>(tables::API_TOKENS)?
                .into_iter()
                .find(|t| t.token_id == token_id && t.user_id == caller.user_id)
                .ok_or(Error::NotFound("token"))?;
            tx.delete(tables::API_TOKENS, &found.token_hash)?;
            Ok(())
        })
    }
}
