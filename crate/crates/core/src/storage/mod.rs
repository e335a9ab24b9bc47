//! Persistence layer: a keyed record store with atomic transactions, a
//! migration ledger, and two interchangeable backends (in-process and SQLite).
//!
//! Every module reads and writes through [`Storage`]; records are JSON
//! documents keyed by string within named tables.

mod memory;
mod migrations;
mod sqlite;

use std::cell::Cell;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use memory::MemoryBackend;
pub use migrations::{builtin_migrations, tables, Migration, Step};
pub use sqlite::SqliteBackend;

const MAX_ATTEMPTS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaVersion {
    pub version: u32,
    pub name: String,
    pub applied_at: DateTime<Utc>,
}

pub trait ReadTx {
    fn get(&self, table: &str, key: &str) -> Result<Option<Vec<u8>>>;
    /// All records whose key starts with `prefix`, ordered by key.
    fn scan_prefix(&self, table: &str, prefix: &str) -> Result<Vec<(String, Vec<u8>)>>;
    fn table_names(&self) -> Result<Vec<String>>;

    fn scan(&self, table: &str) -> Result<Vec<(String, Vec<u8>)>> {
        self.scan_prefix(table, "")
    }
}

pub trait WriteTx: ReadTx {
    fn put(&mut self, table: &str, key: &str, value: Vec<u8>) -> Result<()>;
    /// Returns whether a record was removed.
    fn delete(&mut self, table: &str, key: &str) -> Result<bool>;
}

pub trait ReadExt: ReadTx {
    fn get_json<T: DeserializeOwned>(&self, table: &str, key: &str) -> Result<Option<T>> {
        match self.get(table, key)? {
            Some(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
            None => Ok(None),
        }
    }

    fn scan_json<T: DeserializeOwned>(&self, table: &str) -> Result<Vec<T>> {
        self.scan_prefix_json(table, "")
    }

    fn scan_prefix_json<T: DeserializeOwned>(&self, table: &str, prefix: &str) -> Result<Vec<T>> {
        self.scan_prefix(table, prefix)?
            .into_iter()
            .map(|(_, v)| serde_json::from_slice(&v).map_err(Error::from))
            .collect()
    }

    fn exists(&self, table: &str, key: &str) -> Result<bool> {
        Ok(self.get(table, key)?.is_some())
    }
}

impl<R: ReadTx + ?Sized> ReadExt for R {}

pub trait WriteExt: WriteTx {
    fn put_json<T: Serialize>(&mut self, table: &str, key: &str, value: &T) -> Result<()> {
        self.put(table, key, serde_json::to_vec(value)?)
    }
}

impl<W: WriteTx + ?Sized> WriteExt for W {}

/// A storage engine. Implementations must make `write_with` atomic: either all
/// of the closure's writes become visible or none do.
pub trait Backend: Send + Sync {
    fn name(&self) -> &'static str;
    fn read_with(&self, work: &mut dyn FnMut(&dyn ReadTx) -> Result<()>) -> Result<()>;
    fn write_with(&self, work: &mut dyn FnMut(&mut dyn WriteTx) -> Result<()>) -> Result<()>;
    fn applied_versions(&self) -> Result<Vec<SchemaVersion>>;
    fn apply_migration(&self, migration: &Migration, at: DateTime<Utc>) -> Result<()>;
    /// Bytes as they sit at rest, for leak scanning.
    fn physical_dump(&self) -> Result<Vec<u8>>;
}

thread_local! {
    static IN_WRITE: Cell<bool> = const { Cell::new(false) };
}

struct WriteGuard;

impl WriteGuard {
    fn enter() -> Result<Self> {
        IN_WRITE.with(|flag| {
            if flag.replace(true) {
                Err(Error::NestedTransaction)
            } else {
                Ok(WriteGuard)
            }
        })
    }
}

impl Drop for WriteGuard {
    fn drop(&mut self) {
        IN_WRITE.with(|flag| flag.set(false));
    }
}

#[derive(Clone)]
pub struct Storage {
    backend: Arc<dyn Backend>,
}

impl std::fmt::Debug for Storage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Storage")
            .field("backend", &self.backend.name())
            .finish()
    }
}

impl Storage {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Self { backend }
    }

    pub fn in_memory() -> Self {
        Self::new(Arc::new(MemoryBackend::new()))
    }

    pub fn sqlite(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::new(Arc::new(SqliteBackend::open(path)?)))
    }

    /// Opens storage from a `storage.url` value: `memory:` for the in-process
    /// backend, `sqlite:<path>` or a bare path for SQLite.
    pub fn open(url: &str) -> Result<Self> {
        match url {
            "memory" | "memory:" => Ok(Self::in_memory()),
            other => Self::sqlite(other.strip_prefix("sqlite:").unwrap_or(other)),
        }
    }

    pub fn backend_name(&self) -> &'static str {
        self.backend.name()
    }

    /// Opens and brings the schema to the latest version.
    pub fn open_migrated(url: &str) -> Result<Self> {
        let storage = Self::open(url)?;
        storage.migrate(None)?;
        Ok(storage)
    }

    pub fn migrate(&self, target: Option<u32>) -> Result<Vec<u32>> {
        self.migrate_with(&builtin_migrations(), target)
    }

    /// Applies every pending migration up to `target` (default: the last one).
    /// Each migration is its own transaction; a failure leaves earlier ones in
    /// place and rolls back the failing step entirely.
    pub fn migrate_with(&self, migrations: &[Migration], target: Option<u32>) -> Result<Vec<u32>> {
        for (i, m) in migrations.iter().enumerate() {
            if m.version as usize != i + 1 {
                return Err(Error::MigrationFailed {
                    version: m.version,
                    reason: "migration versions must be 1, 2, 3, ... without gaps".into(),
                });
            }
        }
        let target = target.unwrap_or(migrations.len() as u32);
        if target as usize > migrations.len() {
            return Err(Error::MigrationFailed {
                version: target,
                reason: "unknown target version".into(),
            });
        }
        let applied = self.backend.applied_versions()?;
        for (have, want) in applied.iter().zip(migrations) {
            if have.version != want.version || have.name != want.name {
                return Err(Error::MigrationFailed {
                    version: have.version,
                    reason: format!("ledger has `{}`, expected `{}`", have.name, want.name),
                });
            }
        }
        let mut newly = Vec::new();
        for m in migrations.iter().take(target as usize).skip(applied.len()) {
            self.backend.apply_migration(m, Utc::now())?;
            newly.push(m.version);
        }
        Ok(newly)
    }

    pub fn schema_versions(&self) -> Result<Vec<SchemaVersion>> {
        self.backend.applied_versions()
    }

    /// Runs `work` against a consistent snapshot. Readers never block writers.
    pub fn read<R>(&self, work: impl FnOnce(&dyn ReadTx) -> Result<R>) -> Result<R> {
        let mut work = Some(work);
        let mut out = None;
        self.backend.read_with(&mut |tx| {
            let f = work.take().expect("read closure invoked once");
            out = Some(f(tx)?);
            Ok(())
        })?;
        Ok(out.expect("read closure ran"))
    }

    /// Runs `work` atomically. Conflicting writers are serialized; a conflict
    /// reported by the engine re-runs `work` a bounded number of times.
    /// Nested write transactions on the same thread are rejected.
    pub fn transact<R>(&self, mut work: impl FnMut(&mut dyn WriteTx) -> Result<R>) -> Result<R> {
        let _guard = WriteGuard::enter()?;
        for attempt in 0..MAX_ATTEMPTS {
            let mut out = None;
            let res = self.backend.write_with(&mut |tx| {
                out = Some(work(tx)?);
                Ok(())
            });
            match res {
                Ok(()) => return Ok(out.expect("write closure ran")),
                Err(Error::Conflict) => {
                    std::thread::sleep(Duration::from_millis(2 << attempt.min(6)));
                }
                Err(e) => return Err(e),
            }
        }
        Err(Error::ConflictRetryExhausted)
    }

    /// Every record of every table as `table\tkey\tvalue` lines.
    pub fn dump(&self) -> Result<Vec<u8>> {
        self.read(|tx| {
            let mut out = Vec::new();
            for table in tx.table_names()? {
                for (k, v) in tx.scan(&table)? {
                    out.extend_from_slice(table.as_bytes());
                    out.push(b'\t');
                    out.extend_from_slice(k.as_bytes());
                    out.push(b'\t');
                    out.extend_from_slice(&v);
                    out.push(b'\n');
                }
            }
            Ok(out)
        })
    }

    pub fn physical_dump(&self) -> Result<Vec<u8>> {
        self.backend.physical_dump()
    }
}

pub(crate) fn check_table_name(name: &str) -> Result<()> {
    if !name.is_empty() && name.bytes().all(|b| b.is_ascii_lowercase() || b == b'_') {
        Ok(())
    } else {
        Err(Error::Storage(format!("invalid table name `{name}`")))
    }
}
