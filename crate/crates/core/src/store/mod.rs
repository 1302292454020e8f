//! Durable embedded store: one append-only log per table under `<root>/tables/`,
//! plus a commit log that makes each multi-row write atomic.
//!
//! A write is a transaction: its rows are appended to their table logs, then a
//! commit record `{txn, records}` is appended to `tables/commits.log`. On open, rows
//! whose transaction has no commit record are discarded and the files truncated
//! back to the last committed transaction; a torn or corrupt tail is truncated with
//! a warning. The committed rows are replayed in (txn, index) order into an
//! in-memory [`State`]; later rows with the same id supersede earlier ones.

mod codec;
mod rows;
mod state;

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use parking_lot::{Mutex, RwLock, RwLockReadGuard};
use serde_json::json;

use crate::error::{Error, Result};

use codec::{Decoded, Envelope};
pub use rows::{
    AnalysisRow, DatasetRow, InputRow, ItemRow, OutputRow, ProvenanceRow, Row, StepRow, Table,
};
pub use state::{AttrIndex, AttrKey, State};

pub const FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "store.manifest";
const LOCK: &str = "store.lock";
const TABLES_DIR: &str = "tables";
const COMMITS: &str = "commits";

pub fn table_path(root: &Path, table: Table) -> PathBuf {
    root.join(TABLES_DIR).join(format!("{}.log", table.name()))
}

pub fn commit_log_path(root: &Path) -> PathBuf {
    root.join(TABLES_DIR).join(format!("{COMMITS}.log"))
}

#[derive(Debug, Clone, Copy)]
pub struct StoreOptions {
    /// fsync every file touched by a transaction before acknowledging it.
    pub fsync: bool,
}

impl Default for StoreOptions {
    fn default() -> Self {
        StoreOptions { fsync: true }
    }
}

struct Files {
    tables: HashMap<Table, File>,
    commits: File,
}

struct Writer {
    files: Option<Files>,
    next_txn: u64,
    poisoned: bool,
}

pub struct Store {
    root: Option<PathBuf>,
    options: StoreOptions,
    writer: Mutex<Writer>,
    state: RwLock<State>,
    recovery_warnings: Vec<String>,
    _lock: Option<File>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").field("root", &self.root).finish()
    }
}

impl Store {
    pub fn in_memory() -> Store {
        Store {
            root: None,
            options: StoreOptions::default(),
            writer: Mutex::new(Writer {
                files: None,
                next_txn: 1,
                poisoned: false,
            }),
            state: RwLock::new(State::default()),
            recovery_warnings: Vec::new(),
            _lock: None,
        }
    }

    /// Opens (creating if needed) the store under `root` and takes its exclusive lock.
    pub fn open(root: &Path, options: StoreOptions) -> Result<Store> {
        let tables_dir = root.join(TABLES_DIR);
        fs::create_dir_all(&tables_dir).map_err(|e| Error::io(&tables_dir, e))?;

        let lock_path = root.join(LOCK);
        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&lock_path)
            .map_err(|e| Error::io(&lock_path, e))?;
        match lock.try_lock() {
            Ok(()) => {}
            Err(fs::TryLockError::WouldBlock) => return Err(Error::Locked(root.to_owned())),
            Err(fs::TryLockError::Error(e)) => return Err(Error::io(&lock_path, e)),
        }

        check_manifest(root)?;
        let (state, warnings) = recover(root)?;
        for w in &warnings {
            log::warn!("{}: {w}", root.display());
        }

        let mut tables = HashMap::new();
        for t in Table::ALL {
            tables.insert(t, append_handle(&table_path(root, t))?);
        }
        let commits = append_handle(&commit_log_path(root))?;
        let next_txn = state.last_txn + 1;
        Ok(Store {
            root: Some(root.to_owned()),
            options,
            writer: Mutex::new(Writer {
                files: Some(Files { tables, commits }),
                next_txn,
                poisoned: false,
            }),
            state: RwLock::new(state),
            recovery_warnings: warnings,
            _lock: Some(lock),
        })
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    /// Warnings produced while recovering the store on open (truncated tails etc.).
    pub fn recovery_warnings(&self) -> &[String] {
        &self.recovery_warnings
    }

    /// Read access to the current snapshot.
    pub fn read(&self) -> RwLockReadGuard<'_, State> {
        self.state.read()
    }

    /// Runs one write transaction. `build` sees the current state and returns the
    /// rows to persist plus a result; writes are serialized through a single writer.
    pub fn transact<T>(&self, build: impl FnOnce(&State) -> Result<(Vec<Row>, T)>) -> Result<T> {
        let mut w = self.writer.lock();
        if w.poisoned {
            return Err(Error::State(
                "store is read-only after a failed write; reopen it".into(),
            ));
        }
        let (rows, out) = {
            let st = self.state.read();
            build(&st)?
        };
        if rows.is_empty() {
            return Ok(out);
        }
        let txn = w.next_txn;
        if let Some(files) = w.files.as_mut() {
            if let Err(e) = write_txn(files, txn, &rows, self.options.fsync, self.root.as_deref()) {
                w.poisoned = true;
                return Err(e);
            }
        }
        w.next_txn += 1;
        let mut st = self.state.write();
        for row in rows {
            st.apply(txn, row);
        }
        Ok(out)
    }

    /// Flushes everything to stable storage.
    pub fn sync(&self) -> Result<()> {
        let w = self.writer.lock();
        if let (Some(files), Some(root)) = (w.files.as_ref(), self.root.as_deref()) {
            for f in files.tables.values().chain(std::iter::once(&files.commits)) {
                f.sync_all().map_err(|e| Error::io(root, e))?;
            }
        }
        Ok(())
    }
}

fn append_handle(path: &Path) -> Result<File> {
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))
}

fn write_txn(files: &mut Files, txn: u64, rows: &[Row], fsync: bool, root: Option<&Path>) -> Result<()> {
    let root = root.unwrap_or(Path::new("."));
    let mut by_table: BTreeMap<Table, String> = BTreeMap::new();
    for (n, row) in rows.iter().enumerate() {
        let env = Envelope {
            id: row.id(),
            n: n as u32,
            row: row.to_value(),
            txn,
        };
        by_table.entry(row.table()).or_default().push_str(&codec::encode(&env));
    }
    for (table, text) in &by_table {
        let f = files.tables.get_mut(table).expect("every table has a handle");
        f.write_all(text.as_bytes())
            .map_err(|e| Error::io(table_path(root, *table), e))?;
        if fsync {
            f.sync_data().map_err(|e| Error::io(table_path(root, *table), e))?;
        }
    }
    let commit = Envelope {
        id: txn.to_string(),
        n: 0,
        row: json!({ "records": rows.len() }),
        txn,
    };
    files
        .commits
        .write_all(codec::encode(&commit).as_bytes())
        .map_err(|e| Error::io(commit_log_path(root), e))?;
    if fsync {
        files
            .commits
            .sync_data()
            .map_err(|e| Error::io(commit_log_path(root), e))?;
    }
    Ok(())
}

fn check_manifest(root: &Path) -> Result<()> {
    let path = root.join(MANIFEST);
    let tables: Vec<&str> = Table::ALL.iter().map(|t| t.name()).collect();
    let expected = format!("format_version={FORMAT_VERSION}\ntables={}\n", tables.join(","));
    match fs::read_to_string(&path) {
        Ok(found) => {
            let version = found
                .lines()
                .find_map(|l| l.strip_prefix("format_version="))
                .and_then(|v| v.trim().parse::<u32>().ok());
            if version != Some(FORMAT_VERSION) {
                return Err(Error::Corrupt(format!(
                    "{} declares an unsupported format version",
                    path.display()
                )));
            }
            Ok(())
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            fs::write(&path, expected).map_err(|e| Error::io(&path, e))
        }
        Err(e) => Err(Error::io(&path, e)),
    }
}

/// Reads the valid prefix of a log. Returns the entries with their byte offsets,
/// and the offset where a damaged tail begins, if any.
fn read_log(path: &Path) -> Result<(Vec<(u64, Envelope)>, Option<(u64, String)>)> {
    let buf = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut pos = 0usize;
    let mut out = Vec::new();
    loop {
        match codec::decode(&buf[pos..]) {
            Decoded::End => return Ok((out, None)),
            Decoded::Line { value, consumed } => {
                out.push((pos as u64, value));
                pos += consumed;
            }
            Decoded::Bad(why) => return Ok((out, Some((pos as u64, why)))),
        }
    }
}

fn truncate(path: &Path, len: u64) -> Result<()> {
    let f = OpenOptions::new()
        .write(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.set_len(len).map_err(|e| Error::io(path, e))?;
    f.sync_all().map_err(|e| Error::io(path, e))
}

fn recover(root: &Path) -> Result<(State, Vec<String>)> {
    let mut warnings = Vec::new();

    let commits_path = commit_log_path(root);
    let (commit_entries, damaged) = read_log(&commits_path)?;
    if let Some((offset, why)) = damaged {
        warnings.push(format!("commits.log: truncated damaged tail at byte {offset} ({why})"));
        truncate(&commits_path, offset)?;
    }
    let mut committed: BTreeMap<u64, usize> = BTreeMap::new();
    for (i, (_, env)) in commit_entries.iter().enumerate() {
        if env.txn != i as u64 + 1 {
            return Err(Error::Corrupt(format!(
                "commit log out of sequence at txn {}",
                env.txn
            )));
        }
        let n = env.row.get("records").and_then(|v| v.as_u64()).ok_or_else(|| {
            Error::Corrupt(format!("commit record {} lacks a record count", env.txn))
        })?;
        committed.insert(env.txn, n as usize);
    }
    let last_txn = committed.keys().next_back().copied().unwrap_or(0);

    let mut pending: Vec<(u64, u32, Table, Envelope)> = Vec::new();
    let mut seen: BTreeMap<u64, usize> = BTreeMap::new();
    for table in Table::ALL {
        let path = table_path(root, table);
        let (entries, damaged) = read_log(&path)?;
        let mut cut: Option<u64> = damaged.as_ref().map(|(o, _)| *o);
        let mut prev_txn = 0;
        for (offset, env) in entries {
            if env.txn < prev_txn {
                return Err(Error::Corrupt(format!("{table}.log: transactions out of order")));
            }
            prev_txn = env.txn;
            if env.txn > last_txn {
                cut = Some(cut.map_or(offset, |c| c.min(offset)));
                break;
            }
            *seen.entry(env.txn).or_default() += 1;
            pending.push((env.txn, env.n, table, env));
        }
        if let Some(offset) = cut {
            let why = match &damaged {
                Some((o, why)) if *o == offset => why.clone(),
                _ => "uncommitted transaction".to_owned(),
            };
            warnings.push(format!("{table}.log: truncated tail at byte {offset} ({why})"));
            truncate(&path, offset)?;
        }
    }

    for (txn, expected) in &committed {
        let found = seen.get(txn).copied().unwrap_or(0);
        if found != *expected {
            return Err(Error::Corrupt(format!(
                "transaction {txn} committed {expected} records but {found} were found"
            )));
        }
    }

    pending.sort_by_key(|(txn, n, _, _)| (*txn, *n));
    let mut state = State::default();
    for (txn, _, table, env) in pending {
        state.apply(txn, Row::from_value(table, env.row)?);
    }
    state.last_txn = last_txn;
    Ok((state, warnings))
}
