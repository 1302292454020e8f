use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{DatasetDescriptor, EntryKind, ItemDescriptor};

/// Item-level changes between two crawls of one dataset, keyed by source sub-folder.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeSet {
    pub added: Vec<String>,
    pub removed: Vec<String>,
    pub modified: Vec<String>,
}

impl ChangeSet {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty() && self.modified.is_empty()
    }
}

fn fingerprint(item: &ItemDescriptor) -> BTreeMap<(&str, EntryKind), (&str, u64)> {
    item.files()
        .map(|f| ((f.relative_path.as_str(), f.kind), (f.checksum.as_str(), f.size_bytes)))
        .collect()
}

pub fn diff_descriptors(old: &DatasetDescriptor, new: &DatasetDescriptor) -> Result<ChangeSet> {
    if old.dataset_name != new.dataset_name {
        return Err(Error::Validation(format!(
            "cannot diff dataset {:?} against {:?}",
            old.dataset_name, new.dataset_name
        )));
    }
    let before: BTreeMap<&str, &ItemDescriptor> = old
        .items
        .iter()
        .map(|i| (i.source_subfolder.as_str(), i))
        .collect();
    let after: BTreeMap<&str, &ItemDescriptor> = new
        .items
        .iter()
        .map(|i| (i.source_subfolder.as_str(), i))
        .collect();

    let mut cs = ChangeSet::default();
    for (key, item) in &after {
        match before.get(key) {
            None => cs.added.push((*key).to_owned()),
            Some(prev) if fingerprint(prev) != fingerprint(item) => {
                cs.modified.push((*key).to_owned())
            }
            Some(_) => {}
        }
    }
    cs.removed = before
        .keys()
        .filter(|k| !after.contains_key(*k))
        .map(|k| (*k).to_owned())
        .collect();
    Ok(cs)
}
