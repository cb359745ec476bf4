//! Pluggable key/value persistence.
//!
//! Records are JSON values addressed by `(namespace, key)`. Two backends ship:
//! [`MemoryStore`] for tests and [`FileStore`], a single append-only log file
//! where each line is one committed batch. A batch is fsynced before
//! [`KvStore::apply`] returns, and on open the log is replayed in order. A
//! torn final line (crash mid-write) is discarded; corruption anywhere else is
//! an error.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("store i/o: {0}")]
    Io(#[from] io::Error),
    #[error("store log corrupt at line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("store encode: {0}")]
    Encode(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Op {
    Put { ns: String, key: String, value: Value },
    Delete { ns: String, key: String },
}

impl Op {
    pub fn put(ns: &str, key: impl Into<String>, value: Value) -> Self {
        Op::Put { ns: ns.to_string(), key: key.into(), value }
    }

    pub fn delete(ns: &str, key: impl Into<String>) -> Self {
        Op::Delete { ns: ns.to_string(), key: key.into() }
    }
}

pub trait KvStore: Send + Sync {
    fn get(&self, ns: &str, key: &str) -> Result<Option<Value>, StoreError>;

    /// All entries of a namespace in key order.
    fn scan(&self, ns: &str) -> Result<Vec<(String, Value)>, StoreError>;

    /// Applies every op or none of them.
    fn apply(&self, batch: Vec<Op>) -> Result<(), StoreError>;

    fn put(&self, ns: &str, key: &str, value: Value) -> Result<(), StoreError> {
        self.apply(vec![Op::put(ns, key, value)])
    }

    fn delete(&self, ns: &str, key: &str) -> Result<(), StoreError> {
        self.apply(vec![Op::delete(ns, key)])
    }
}

type Tables = BTreeMap<String, BTreeMap<String, Value>>;

fn apply_ops(tables: &mut Tables, batch: &[Op]) {
    for op in batch {
        match op {
            Op::Put { ns, key, value } => {
                tables.entry(ns.clone()).or_default().insert(key.clone(), value.clone());
            }
            Op::Delete { ns, key } => {
                if let Some(table) = tables.get_mut(ns) {
                    table.remove(key);
                }
            }
        }
    }
}

#[derive(Debug, Default)]
pub struct MemoryStore {
    tables: RwLock<Tables>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl KvStore for MemoryStore {
    fn get(&self, ns: &str, key: &str) -> Result<Option<Value>, StoreError> {
        Ok(self.tables.read().get(ns).and_then(|t| t.get(key)).cloned())
    }

    fn scan(&self, ns: &str) -> Result<Vec<(String, Value)>, StoreError> {
        Ok(self
            .tables
            .read()
            .get(ns)
            .map(|t| t.iter().map(|(k, v)| (k.clone(), v.clone())).collect())
            .unwrap_or_default())
    }

    fn apply(&self, batch: Vec<Op>) -> Result<(), StoreError> {
        apply_ops(&mut self.tables.write(), &batch);
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct LogRecord {
    ops: Vec<Op>,
}

#[derive(Serialize)]
struct LogRecordRef<'a> {
    ops: &'a [Op],
}

/// Result of replaying a log image.
#[derive(Debug, Default)]
pub struct Replay {
    tables: Tables,
    /// Byte length of the valid prefix; anything after it is a torn tail.
    pub valid_len: usize,
    pub batches: usize,
}

impl Replay {
    pub fn entries(&self, ns: &str) -> usize {
        self.tables.get(ns).map_or(0, BTreeMap::len)
    }
}

/// Replays a log image. Only the final line may be incomplete.
pub fn replay_log(bytes: &[u8]) -> Result<Replay, StoreError> {
    let mut replay = Replay::default();
    let mut offset = 0;
    let mut line_no = 0;
    while offset < bytes.len() {
        line_no += 1;
        let rest = &bytes[offset..];
        let Some(newline) = rest.iter().position(|&b| b == b'\n') else {
            // Unterminated tail: a write that never completed.
            break;
        };
        let line = &rest[..newline];
        if !line.iter().all(u8::is_ascii_whitespace) {
            let record: LogRecord = serde_json::from_slice(line).map_err(|e| {
                StoreError::Corrupt { line: line_no, message: e.to_string() }
            })?;
            apply_ops(&mut replay.tables, &record.ops);
            replay.batches += 1;
        }
        offset += newline + 1;
        replay.valid_len = offset;
    }
    Ok(replay)
}

/// Single-file store: an append-only JSON-lines log with an in-memory index.
pub struct FileStore {
    path: PathBuf,
    tables: RwLock<Tables>,
    file: Mutex<File>,
}

impl FileStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let replay = replay_log(&bytes)?;
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        if replay.valid_len < bytes.len() {
            file.set_len(replay.valid_len as u64)?;
            file.sync_all()?;
        }
        Ok(Self { path, tables: RwLock::new(replay.tables), file: Mutex::new(file) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Rewrites the log as one batch holding the current state.
    pub fn compact(&self) -> Result<(), StoreError> {
        let mut file = self.file.lock();
        let ops: Vec<Op> = {
            let tables = self.tables.read();
            tables
                .iter()
                .flat_map(|(ns, t)| t.iter().map(move |(k, v)| Op::put(ns, k.clone(), v.clone())))
                .collect()
        };
        let tmp = self.path.with_extension("compact");
        {
            let mut out = File::create(&tmp)?;
            if !ops.is_empty() {
                let mut line = serde_json::to_vec(&LogRecordRef { ops: &ops })?;
                line.push(b'\n');
                out.write_all(&line)?;
            }
            out.sync_all()?;
        }
        std::fs::rename(&tmp, &self.path)?;
        *file = OpenOptions::new().append(true).open(&self.path)?;
        Ok(())
    }
}

impl KvStore for FileStore {
    fn get(&self, ns: &str, key: &str) -> Result<Option<Value>, StoreError> {
        Ok(self.tables.read().get(ns).and_then(|t| t.get(key)).cloned())
    }

    fn scan(&self, ns: &str) -> Result<Vec<(String, Value)>, StoreError> {
        Ok(self
            .tables
            .read()
            .get(ns)
            .map(|t| t.iter().map(|(k, v)| (k.clone(), v.clone())).collect())
            .unwrap_or_default())
    }

    fn apply(&self, batch: Vec<Op>) -> Result<(), StoreError> {
        if batch.is_empty() {
            return Ok(());
        }
        let mut line = serde_json::to_vec(&LogRecordRef { ops: &batch })?;
        line.push(b'\n');
        // Lock order: file, then tables. Readers only take the tables lock.
        let mut file = self.file.lock();
        file.write_all(&line)?;
        file.sync_data()?;
        apply_ops(&mut self.tables.write(), &batch);
        Ok(())
    }
}
