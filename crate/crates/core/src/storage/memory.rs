use std::sync::Arc;

use chrono::{DateTime, Utc};
use im::OrdMap;
use parking_lot::{Mutex, RwLock};

use super::{check_table_name, Backend, Migration, ReadTx, SchemaVersion, Step, WriteTx};
use crate::error::{Error, Result};

type Table = OrdMap<String, Arc<Vec<u8>>>;

#[derive(Clone, Default)]
struct State {
    tables: OrdMap<String, Table>,
    versions: Vec<SchemaVersion>,
}

/// In-process backend built on persistent maps: a snapshot is an O(1) clone,
/// and a writer works on its own clone that is swapped in on commit.
#[derive(Default)]
pub struct MemoryBackend {
    current: RwLock<Arc<State>>,
    writer: Mutex<()>,
}

impl MemoryBackend {
    pub fn new() -> Self {
        Self::default()
    }
}

fn no_table(table: &str) -> Error {
    Error::Storage(format!("no such table: {table}"))
}

impl ReadTx for State {
    fn get(&self, table: &str, key: &str) -> Result<Option<Vec<u8>>> {
        let t = self.tables.get(table).ok_or_else(|| no_table(table))?;
        Ok(t.get(key).map(|v| v.as_ref().clone()))
    }

    fn scan_prefix(&self, table: &str, prefix: &str) -> Result<Vec<(String, Vec<u8>)>> {
        let t = self.tables.get(table).ok_or_else(|| no_table(table))?;
        Ok(t.range(prefix.to_string()..)
            .take_while(|(k, _)| k.starts_with(prefix))
            .map(|(k, v)| (k.clone(), v.as_ref().clone()))
            .collect())
    }

    fn table_names(&self) -> Result<Vec<String>> {
        Ok(self.tables.keys().cloned().collect())
    }
}

impl WriteTx for State {
    fn put(&mut self, table: &str, key: &str, value: Vec<u8>) -> Result<()> {
        let t = self.tables.get_mut(table).ok_or_else(|| no_table(table))?;
        t.insert(key.to_string(), Arc::new(value));
        Ok(())
    }

    fn delete(&mut self, table: &str, key: &str) -> Result<bool> {
        let t = self.tables.get_mut(table).ok_or_else(|| no_table(table))?;
        Ok(t.remove(key).is_some())
    }
}

impl Backend for MemoryBackend {
    fn name(&self) -> &'static str {
        "memory"
    }

    fn read_with(&self, work: &mut dyn FnMut(&dyn ReadTx) -> Result<()>) -> Result<()> {
        let snapshot = self.current.read().clone();
        work(snapshot.as_ref())
    }

    fn write_with(&self, work: &mut dyn FnMut(&mut dyn WriteTx) -> Result<()>) -> Result<()> {
        let _w = self.writer.lock();
        let mut working = State::clone(&self.current.read());
        work(&mut working)?;
        *self.current.write() = Arc::new(working);
        Ok(())
    }

    fn applied_versions(&self) -> Result<Vec<SchemaVersion>> {
        Ok(self.current.read().versions.clone())
    }

    fn apply_migration(&self, migration: &Migration, at: DateTime<Utc>) -> Result<()> {
        let _w = self.writer.lock();
        let mut working = State::clone(&self.current.read());
        let fail = |reason: String| Error::MigrationFailed {
            version: migration.version,
            reason,
        };
        for step in &migration.steps {
            match step {
                Step::CreateTable(name) => {
                    check_table_name(name).map_err(|e| fail(e.to_string()))?;
                    if working.tables.contains_key(*name) {
                        return Err(fail(format!("table {name} already exists")));
                    }
                    working.tables.insert(name.to_string(), Table::new());
                }
                Step::DropTable(name) => {
                    if working.tables.remove(*name).is_none() {
                        return Err(fail(format!("no such table: {name}")));
                    }
                }
            }
        }
        working.versions.push(SchemaVersion {
            version: migration.version,
            name: migration.name.to_string(),
            applied_at: at,
        });
        *self.current.write() = Arc::new(working);
        Ok(())
    }

    fn physical_dump(&self) -> Result<Vec<u8>> {
        let state = self.current.read().clone();
        let mut out = Vec::new();
        for (name, table) in &state.tables {
            for (k, v) in table {
                out.extend_from_slice(name.as_bytes());
                out.extend_from_slice(k.as_bytes());
                out.extend_from_slice(v);
            }
        }
        Ok(out)
    }
}
