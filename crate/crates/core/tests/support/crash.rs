//! Crash simulation over a durable store: the log files are cut at chosen byte
//! offsets of the write stream, and the reopened store is compared with an
//! in-memory run of the committed operation prefix.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use analysis_base::model::{AnalysisStatus, Role};
use analysis_base::store::{commit_log_path, table_path, State, Store, StoreOptions, Table};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use crate::session;

/// One encoded line of some log file, in the order the store writes them.
#[derive(Debug, Clone)]
struct Segment {
    file: PathBuf,
    start: u64,
    end: u64,
    txn: u64,
    /// Row lines sort before the commit line of their transaction.
    commit: bool,
    table: String,
    n: u64,
}

fn parse_lines(path: &Path, table: &str, commit: bool) -> Vec<Segment> {
    let bytes = fs::read(path).unwrap_or_default();
    let mut out = Vec::new();
    let mut pos = 0usize;
    while pos < bytes.len() {
        let nl = pos + bytes[pos..].iter().position(|&b| b == b'\n').expect("complete lines");
        let line = std::str::from_utf8(&bytes[pos..nl]).unwrap();
        let payload = line.splitn(3, ':').nth(2).unwrap();
        let v: Value = serde_json::from_str(payload).unwrap();
        out.push(Segment {
            file: path.to_owned(),
            start: pos as u64,
            end: nl as u64 + 1,
            txn: v["txn"].as_u64().unwrap(),
            commit,
            table: table.to_owned(),
            n: v["n"].as_u64().unwrap(),
        });
        pos = nl + 1;
    }
    out
}

fn write_stream(root: &Path) -> Vec<Segment> {
    let mut all = parse_lines(&commit_log_path(root), "commits", true);
    for t in Table::ALL {
        all.extend(parse_lines(&table_path(root, t), t.name(), false));
    }
    all.sort_by(|a, b| {
        (a.txn, a.commit, &a.table, a.n).cmp(&(b.txn, b.commit, &b.table, b.n))
    });
    all
}

fn copy_dir(from: &Path, to: &Path) {
    for entry in walkdir::WalkDir::new(from) {
        let entry = entry.unwrap();
        let rel = entry.path().strip_prefix(from).unwrap();
        let dest = to.join(rel);
        if entry.file_type().is_dir() {
            fs::create_dir_all(&dest).unwrap();
        } else if entry.file_name() != "store.lock" {
            fs::copy(entry.path(), &dest).unwrap();
        }
    }
}

/// Reproduces the files as they were when the process died `cut` bytes into the
/// write stream. Returns the number of fully written commit records.
fn crash_copy(source: &Path, dest: &Path, stream: &[Segment], cut: u64) -> u64 {
    copy_dir(source, dest);
    let mut lengths: BTreeMap<PathBuf, u64> = BTreeMap::new();
    let mut written = 0u64;
    let mut committed = 0;
    for s in stream {
        let len = s.end - s.start;
        let rel = s.file.strip_prefix(source).unwrap().to_owned();
        let keep = if written + len <= cut {
            if s.commit {
                committed = s.txn;
            }
            len
        } else {
            cut.saturating_sub(written)
        };
        if keep > 0 {
            lengths.insert(rel.clone(), s.start + keep);
        } else {
            lengths.entry(rel).or_insert(0);
        }
        written += len;
        if written >= cut && keep < len {
            break;
        }
    }
    for t in Table::ALL {
        let rel = table_path(source, t).strip_prefix(source).unwrap().to_owned();
        let len = lengths.get(&rel).copied().unwrap_or(0);
        let f = fs::OpenOptions::new().write(true).open(dest.join(&rel)).unwrap();
        f.set_len(len).unwrap();
    }
    let rel = commit_log_path(source).strip_prefix(source).unwrap().to_owned();
    let len = lengths.get(&rel).copied().unwrap_or(0);
    let f = fs::OpenOptions::new().write(true).open(dest.join(&rel)).unwrap();
    f.set_len(len).unwrap();
    committed
}

/// Runs `ops` session operations, then checks `kill_points` crash points: zero bytes,
/// the full stream and random offsets in between. Panics on the first mismatch.
pub fn verify_kill_points(session_seed: u64, ops: usize, kill_points: usize) -> usize {
    // in-memory reference: the state after each committed transaction
    let mem = session::base_over(Store::in_memory(), session_seed);
    let mut by_txn: BTreeMap<u64, State> = BTreeMap::new();
    by_txn.insert(0, State::default());
    let mut succeeded: BTreeMap<&str, usize> = BTreeMap::new();
    session::run_session(&mem, session_seed, ops, |i, rec| {
        let st = mem.store().read();
        let prev = *by_txn.keys().next_back().unwrap();
        assert!(st.last_txn <= prev + 1, "operation {i} ({}) committed twice", rec.op);
        if st.last_txn == prev + 1 {
            by_txn.insert(st.last_txn, st.clone());
        }
        *succeeded.entry(rec.op).or_default() += rec.ok as usize;
    });
    for (op, n) in &succeeded {
        assert!(*n > 0, "no {op} succeeded");
    }
    assert_eq!(succeeded.len(), 11);
    let statuses: Vec<AnalysisStatus> = mem.analyses().iter().map(|a| a.status).collect();
    assert!(statuses.contains(&AnalysisStatus::Completed));
    assert!(statuses.contains(&AnalysisStatus::Failed));
    let final_txn = mem.store().read().last_txn;

    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("store");
    {
        let disk = session::base_over(Store::open(&root, StoreOptions { fsync: false }).unwrap(), session_seed);
        session::run_session(&disk, session_seed, ops, |_, _| {});
        assert_eq!(*disk.store().read(), *mem.store().read());
        assert!(disk.audit().is_healthy());
    }

    let stream = write_stream(&root);
    let total: u64 = stream.iter().map(|s| s.end - s.start).sum();
    let commits = stream.iter().filter(|s| s.commit).count() as u64;
    assert_eq!(commits, final_txn);

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut cuts: Vec<u64> = (0..kill_points - 2).map(|_| rng.gen_range(0..=total)).collect();
    cuts.push(0);
    cuts.push(total);
    let cuts_checked = cuts.len();
    for (k, cut) in cuts.into_iter().enumerate() {
        let crashed = dir.path().join(format!("crash-{k}"));
        let committed = crash_copy(&root, &crashed, &stream, cut);
        let store = Store::open(&crashed, StoreOptions { fsync: false })
            .unwrap_or_else(|e| panic!("kill point {k} at byte {cut}: {e}"));
        let expected = &by_txn[&committed];
        assert!(
            *store.read() == *expected,
            "kill point {k} at byte {cut}: state differs from replay of {committed} transactions"
        );
        let base = session::base_over(store, k as u64);
        let report = base.audit();
        assert!(report.is_healthy(), "kill point {k}: {:?}", report.violations);

        // the recovered store accepts writes and survives another reopen
        base.register_user("after-crash", "lab", Role::Neuroscientist).unwrap();
        let after = base.store().read().clone();
        drop(base);
        let again = Store::open(&crashed, StoreOptions { fsync: false }).unwrap();
        assert!(again.recovery_warnings().is_empty());
        assert!(*again.read() == after);
    }
    cuts_checked
}
