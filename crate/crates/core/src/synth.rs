//! Seeded generators for synthetic subject cohorts and arbitrary dataset trees.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::crawler::SubjectRecord;
use crate::error::{Error, Result};

/// What the generator wrote, keyed by sub-folder name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CohortTruth {
    pub root: PathBuf,
    pub subjects: BTreeMap<String, SubjectRecord>,
}

impl CohortTruth {
    pub fn matching(&self, pred: impl Fn(&SubjectRecord) -> bool) -> BTreeSet<String> {
        self.subjects
            .iter()
            .filter(|(_, s)| pred(s))
            .map(|(k, _)| k.clone())
            .collect()
    }

    /// Male, older than 50, at least two assessments.
    pub fn reference_cohort(&self) -> BTreeSet<String> {
        self.matching(|s| s.sex == "M" && s.age > 50 && s.assessments >= 2)
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn noise(rng: &mut ChaCha8Rng, len: usize) -> Vec<u8> {
    let mut v = vec![0u8; len];
    rng.fill(v.as_mut_slice());
    v
}

/// Writes `<parent>/<name>/subject-NNNN/` folders, each holding one or two images, a
/// subject XML and an assessment CSV with one row per assessment.
pub fn generate_cohort(parent: &Path, name: &str, subjects: usize, seed: u64) -> Result<CohortTruth> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let root = parent.join(name);
    fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    let stages = ["baseline", "month-12", "month-24"];
    let mut truth = BTreeMap::new();
    for i in 1..=subjects {
        let folder = format!("subject-{i:04}");
        let dir = root.join(&folder);
        let record = SubjectRecord {
            sex: if rng.gen_bool(0.5) { "M" } else { "F" }.to_owned(),
            age: rng.gen_range(30..=90),
            assessments: rng.gen_range(0..=4),
            stage: Some(stages[rng.gen_range(0..stages.len())].to_owned()),
        };
        let images = rng.gen_range(1..=2);
        for k in 0..images {
            let ext = ["nii", "nii.gz", "mnc"][rng.gen_range(0..3)];
            let len = rng.gen_range(256..2048);
            write(&dir.join(format!("scan-{k}.{ext}")), &noise(&mut rng, len))?;
        }
        write(&dir.join("subject.xml"), record.to_xml().as_bytes())?;
        let mut csv = String::from("session,score\n");
        for s in 1..=record.assessments {
            csv.push_str(&format!("{s},{:.1}\n", rng.gen_range(0.0..30.0)));
        }
        write(&dir.join("assessments.csv"), csv.as_bytes())?;
        truth.insert(folder, record);
    }
    Ok(CohortTruth { root, subjects: truth })
}

const NAMES: &[&str] = &["scan", "t1", "flair", "notes", "meta", "vol", "run", "dti"];
const EXTENSIONS: &[&str] = &[
    "nii", "nii.gz", "mnc", "img", "hdr", "dcm", "xml", "csv", "tsv", "txt", "json", "bin", "md",
    "NII", "Csv", "gz",
];

/// An arbitrary dataset tree with at most `max_files` files: nested folders, hidden
/// entries, unclassified extensions, files at the root, empty folders and the odd
/// subject XML (some malformed). Returns the tree root.
pub fn generate_tree(parent: &Path, name: &str, max_files: usize, seed: u64) -> Result<PathBuf> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let root = parent.join(name);
    fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    let folders = rng.gen_range(0..=8);
    let mut dirs: Vec<PathBuf> = vec![root.clone()];
    for f in 0..folders {
        let hidden = rng.gen_bool(0.1);
        let top = root.join(format!("{}item-{f}", if hidden { "." } else { "" }));
        dirs.push(top.clone());
        let depth = rng.gen_range(0..=2);
        let mut d = top;
        for n in 0..depth {
            d = d.join(format!("sub{n}"));
            dirs.push(d.clone());
        }
    }
    for d in &dirs {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let files = rng.gen_range(0..=max_files);
    for i in 0..files {
        let dir = dirs.choose(&mut rng).expect("root is always present");
        let hidden = rng.gen_bool(0.05);
        let stem = NAMES.choose(&mut rng).expect("non-empty");
        let ext = EXTENSIONS.choose(&mut rng).expect("non-empty");
        let name = format!("{}{stem}-{i}.{ext}", if hidden { "." } else { "" });
        let body = if *ext == "xml" {
            match rng.gen_range(0..4) {
                0 => SubjectRecord {
                    sex: ["M", "F"][rng.gen_range(0..2)].into(),
                    age: rng.gen_range(20..95),
                    assessments: rng.gen_range(0..5),
                    stage: rng.gen_bool(0.5).then(|| "baseline".to_owned()),
                }
                .to_xml()
                .into_bytes(),
                1 => b"<subject><sex>X</sex></subject>".to_vec(),
                2 => b"<subject><age>".to_vec(),
                _ => b"<study><site>lab</site></study>".to_vec(),
            }
        } else {
            let len = rng.gen_range(0..512);
            noise(&mut rng, len)
        };
        write(&dir.join(name), &body)?;
    }
    Ok(root)
}
