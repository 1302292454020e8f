//! Shared setup: a durable store plus a local storage directory, a deterministic
//! clock and seeded ids, and the four toy algorithms registered.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use analysis_base::harness::{parse_pipeline, TOY_ALGORITHMS};
use analysis_base::model::{Role, VersionRef};
use analysis_base::store::{Store, StoreOptions};
use analysis_base::{AnalysisBase, Id, IdSource, Lfn, ManualClock, StorageUrls, Timestamp};

pub const START_MS: i64 = 1_704_067_200_000;

pub const REFERENCE_PIPELINE: &str = "\
pipeline cohort-summary
step stamp uses checksum-stamp in scans=dataset out manifest
step count uses line-count after stamp in manifest=stamp.manifest out total
step report uses concatenate after count,stamp in a=stamp.manifest,b=count.total out report
";

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub base: AnalysisBase,
    pub storage: PathBuf,
    pub admin: Id,
    pub algorithms: BTreeMap<String, Id>,
}

impl Fixture {
    pub fn new(seed: u64) -> Fixture {
        let dir = tempfile::tempdir().unwrap();
        let storage = dir.path().join("storage");
        std::fs::create_dir_all(&storage).unwrap();
        let store = Store::open(&dir.path().join("store"), StoreOptions { fsync: false }).unwrap();
        let base = AnalysisBase::new(
            store,
            StorageUrls::for_directory(&storage).unwrap(),
            Arc::new(ManualClock::new(Timestamp::from_millis(START_MS), 1000)),
            IdSource::seeded(seed),
        );
        let admin = base.register_user("catalog-admin", "lab", Role::Admin).unwrap().user_id;
        let mut algorithms = BTreeMap::new();
        for name in TOY_ALGORITHMS {
            let lfn = Lfn::new("toolkit", name).unwrap();
            let a = base.register_algorithm(admin, name, "toy", lfn).unwrap();
            algorithms.insert(name.to_string(), a.algorithm_id);
        }
        Fixture {
            dir,
            base,
            storage,
            admin,
            algorithms,
        }
    }

    pub fn user(&self, name: &str, role: Role) -> Id {
        self.base.register_user(name, "lab", role).unwrap().user_id
    }

    /// Registers the definition under `author`, returning version 1.
    pub fn pipeline(&self, author: Id, text: &str) -> VersionRef {
        let def = parse_pipeline(text, &self.base.algorithm_registry()).unwrap();
        let lfn = Lfn::new("pipelines", &format!("{}.pipe", def.name)).unwrap();
        let (p, v) = self
            .base
            .register_pipeline(author, &def.name, lfn, "", def.pipeline_steps())
            .unwrap();
        VersionRef {
            pipeline_id: p.pipeline_id,
            version: v,
        }
    }
}
