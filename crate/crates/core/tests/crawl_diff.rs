use std::collections::BTreeSet;
use std::fs;

use analysis_base::crawler::{crawl_dataset, diff_descriptors, ChangeSet};
use analysis_base::synth::generate_cohort;
use analysis_base::Timestamp;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Applies a random edit script to a generated cohort and checks that the diff of
/// the two crawls names exactly the folders the script touched.
fn edit_and_compare(seed: u64) {
    let dir = tempfile::tempdir().unwrap();
    let truth = generate_cohort(dir.path(), "cohort", 12, seed).unwrap();
    let at = Timestamp::from_millis(0);
    let before = crawl_dataset(&truth.root, "cohort", at).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd1ff);
    let mut folders: Vec<String> = truth.subjects.keys().cloned().collect();
    folders.shuffle(&mut rng);
    let mut expected = ChangeSet::default();
    let mut added = BTreeSet::new();
    let mut removed = BTreeSet::new();
    let mut modified = BTreeSet::new();

    for f in folders.iter().take(rng.gen_range(0..=3)) {
        fs::remove_dir_all(truth.root.join(f)).unwrap();
        removed.insert(f.clone());
    }
    for f in folders.iter().skip(3).take(rng.gen_range(0..=3)) {
        let scan = fs::read_dir(truth.root.join(f))
            .unwrap()
            .map(|e| e.unwrap().path())
            .find(|p| p.to_string_lossy().contains("scan-0"))
            .unwrap();
        let mut bytes = fs::read(&scan).unwrap();
        bytes[0] ^= 0xff;
        fs::write(&scan, bytes).unwrap();
        modified.insert(f.clone());
    }
    for f in folders.iter().skip(6).take(rng.gen_range(0..=2)) {
        let extra = truth.root.join(f).join("scan-9.mnc");
        fs::write(extra, b"appended image").unwrap();
        modified.insert(f.clone());
    }
    // rewriting identical bytes is not a change
    for f in folders.iter().skip(8).take(2) {
        let xml = truth.root.join(f).join("subject.xml");
        let same = fs::read(&xml).unwrap();
        fs::write(&xml, same).unwrap();
    }
    for i in 0..rng.gen_range(0..=3) {
        let f = format!("subject-new-{i}");
        fs::create_dir_all(truth.root.join(&f)).unwrap();
        fs::write(truth.root.join(&f).join("scan-0.nii"), format!("new {i}")).unwrap();
        added.insert(f);
    }
    expected.added = added.into_iter().collect();
    expected.removed = removed.into_iter().collect();
    expected.modified = modified.into_iter().collect();

    let after = crawl_dataset(&truth.root, "cohort", at).unwrap();
    let diff = diff_descriptors(&before, &after).unwrap();
    assert_eq!(diff, expected, "seed {seed}");
    assert!(diff_descriptors(&after, &after).unwrap().is_empty());
}

#[test]
fn diff_reports_the_edit_script() {
    for seed in 0..25 {
        edit_and_compare(seed);
    }
}

#[test]
fn diff_refuses_different_datasets() {
    let dir = tempfile::tempdir().unwrap();
    let truth = generate_cohort(dir.path(), "a", 2, 1).unwrap();
    let a = crawl_dataset(&truth.root, "a", Timestamp::from_millis(0)).unwrap();
    let b = crawl_dataset(&truth.root, "b", Timestamp::from_millis(0)).unwrap();
    assert!(diff_descriptors(&a, &b).is_err());
}
