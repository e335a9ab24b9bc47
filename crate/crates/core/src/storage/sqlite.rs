use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use rusqlite::{params, Connection, OptionalExtension, TransactionBehavior};

use super::{check_table_name, Backend, Migration, ReadTx, SchemaVersion, Step, WriteTx};
use crate::error::{Error, Result};

/// SQLite in WAL mode. One physical table `t_<name>(k, v)` per logical table.
/// Writes go through a single connection; reads use pooled connections so a
/// long recount never holds up a writer.
pub struct SqliteBackend {
    path: PathBuf,
    writer: Mutex<Connection>,
    readers: Mutex<Vec<Connection>>,
}

fn configure(conn: &Connection) -> Result<()> {
    conn.busy_timeout(std::time::Duration::from_secs(5))?;
    conn.pragma_update(None, "journal_mode", "WAL")?;
    conn.pragma_update(None, "synchronous", "NORMAL")?;
    Ok(())
}

fn physical(table: &str) -> Result<String> {
    check_table_name(table)?;
    Ok(format!("t_{table}"))
}

impl SqliteBackend {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let conn = Connection::open(&path)?;
        configure(&conn)?;
        conn.execute_batch(
            "CREATE TABLE IF NOT EXISTS schema_versions (
                version INTEGER PRIMARY KEY,
                name TEXT NOT NULL,
                applied_at TEXT NOT NULL
            )",
        )?;
        Ok(Self {
            path,
            writer: Mutex::new(conn),
            readers: Mutex::new(Vec::new()),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn reader(&self) -> Result<Connection> {
        if let Some(conn) = self.readers.lock().pop() {
            return Ok(conn);
        }
        let conn = Connection::open(&self.path)?;
        configure(&conn)?;
        Ok(conn)
    }
}

struct SqlTx<'a> {
    tx: &'a rusqlite::Transaction<'a>,
}

impl ReadTx for SqlTx<'_> {
    fn get(&self, table: &str, key: &str) -> Result<Option<Vec<u8>>> {
        let sql = format!("SELECT v FROM {} WHERE k = ?1", physical(table)?);
        let mut stmt = self.tx.prepare_cached(&sql)?;
        Ok(stmt.query_row([key], |row| row.get(0)).optional()?)
    }

    fn scan_prefix(&self, table: &str, prefix: &str) -> Result<Vec<(String, Vec<u8>)>> {
        let sql = format!("SELECT k, v FROM {} WHERE k >= ?1 ORDER BY k", physical(table)?);
        let mut stmt = self.tx.prepare_cached(&sql)?;
        let mut rows = stmt.query([prefix])?;
        let mut out = Vec::new();
        while let Some(row) = rows.next()? {
            let k: String = row.get(0)?;
            if !k.starts_with(prefix) {
                break;
            }
            out.push((k, row.get(1)?));
        }
        Ok(out)
    }

    fn table_names(&self) -> Result<Vec<String>> {
        let mut stmt = self.tx.prepare_cached(
            "SELECT name FROM sqlite_master WHERE type = 'table' AND name LIKE 't\\_%' ESCAPE '\\' ORDER BY name",
        )?;
        let names = stmt
            .query_map([], |row| row.get::<_, String>(0))?
            .collect::<rusqlite::Result<Vec<_>>>()?;
        Ok(names.into_iter().map(|n| n[2..].to_string()).collect())
    }
}

impl WriteTx for SqlTx<'_> {
    fn put(&mut self, table: &str, key: &str, value: Vec<u8>) -> Result<()> {
        let sql = format!(
            "INSERT OR REPLACE INTO {} (k, v) VALUES (?1, ?2)",
            physical(table)?
        );
        self.tx.prepare_cached(&sql)?.execute(params![key, value])?;
        Ok(())
    }

    fn delete(&mut self, table: &str, key: &str) -> Result<bool> {
        let sql = format!("DELETE FROM {} WHERE k = ?1", physical(table)?);
        Ok(self.tx.prepare_cached(&sql)?.execute([key])? > 0)
    }
}

impl Backend for SqliteBackend {
    fn name(&self) -> &'static str {
        "sqlite"
    }

    fn read_with(&self, work: &mut dyn FnMut(&dyn ReadTx) -> Result<()>) -> Result<()> {
        let mut conn = self.reader()?;
        let res = (|| {
            let tx = conn.transaction_with_behavior(TransactionBehavior::Deferred)?;
            work(&SqlTx { tx: &tx })?;
            tx.finish()?;
            Ok(())
        })();
        self.readers.lock().push(conn);
        res
    }

    fn write_with(&self, work: &mut dyn FnMut(&mut dyn WriteTx) -> Result<()>) -> Result<()> {
        let mut conn = self.writer.lock();
        let tx = conn.transaction_with_behavior(TransactionBehavior::Immediate)?;
        work(&mut SqlTx { tx: &tx })?;
        tx.commit()?;
        Ok(())
    }

    fn applied_versions(&self) -> Result<Vec<SchemaVersion>> {
        let conn = self.writer.lock();
        let mut stmt =
            conn.prepare("SELECT version, name, applied_at FROM schema_versions ORDER BY version")?;
        let rows = stmt.query_map([], |row| {
            Ok((
                row.get::<_, u32>(0)?,
                row.get::<_, String>(1)?,
                row.get::<_, String>(2)?,
            ))
        })?;
        let mut out = Vec::new();
        for row in rows {
            let (version, name, at) = row?;
            let applied_at = DateTime::parse_from_rfc3339(&at)
                .map_err(|e| Error::Storage(e.to_string()))?
                .with_timezone(&Utc);
            out.push(SchemaVersion {
                version,
                name,
                applied_at,
            });
        }
        Ok(out)
    }

    fn apply_migration(&self, migration: &Migration, at: DateTime<Utc>) -> Result<()> {
        let mut conn = self.writer.lock();
        let fail = |reason: String| Error::MigrationFailed {
            version: migration.version,
            reason,
        };
        let tx = conn
            .transaction_with_behavior(TransactionBehavior::Immediate)
            .map_err(|e| fail(e.to_string()))?;
        for step in &migration.steps {
            let sql = match step {
                Step::CreateTable(name) => format!(
                    "CREATE TABLE {} (k TEXT PRIMARY KEY, v BLOB NOT NULL) WITHOUT ROWID",
                    physical(name).map_err(|e| fail(e.to_string()))?
                ),
                Step::DropTable(name) => {
                    format!("DROP TABLE {}", physical(name).map_err(|e| fail(e.to_string()))?)
                }
            };
            tx.execute_batch(&sql).map_err(|e| fail(e.to_string()))?;
        }
        tx.execute(
            "INSERT INTO schema_versions (version, name, applied_at) VALUES (?1, ?2, ?3)",
            params![migration.version, migration.name, at.to_rfc3339()],
        )
        .map_err(|e| fail(e.to_string()))?;
        tx.commit().map_err(|e| fail(e.to_string()))?;
        Ok(())
    }

    fn physical_dump(&self) -> Result<Vec<u8>> {
        let mut bytes = Vec::new();
        {
            let conn = self.writer.lock();
            // Leave whatever did not fit in the checkpoint in the WAL; both files are read.
            let _ = conn.query_row("PRAGMA wal_checkpoint(PASSIVE)", [], |_| Ok(()));
        }
        bytes.extend(std::fs::read(&self.path)?);
        let mut wal = self.path.clone().into_os_string();
        wal.push("-wal");
        if let Ok(w) = std::fs::read(PathBuf::from(wal)) {
            bytes.extend(w);
        }
        Ok(bytes)
    }
}
