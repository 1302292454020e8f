//! Proptest strategies for arbitrary metadata descriptors, including text that needs
//! escaping in XML.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use analysis_base::crawler::{DatasetDescriptor, EntryKind, FileEntry, ItemDescriptor};
use analysis_base::model::AttrValue;
use analysis_base::Timestamp;
use proptest::prelude::*;

pub fn text() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9 _.<>&\"'\t\n\u{e9}\u{4e2d}-]{1,16}"
}

pub fn attr() -> impl Strategy<Value = AttrValue> {
    prop_oneof![
        text().prop_map(AttrValue::Text),
        any::<i64>().prop_map(AttrValue::Integer),
        (-1.0e12f64..1.0e12).prop_map(AttrValue::Decimal),
    ]
}

pub fn file(kind: EntryKind) -> impl Strategy<Value = FileEntry> {
    (text(), text(), any::<u64>(), "[0-9a-f]{64}").prop_map(move |(name, dir, size, sum)| FileEntry {
        relative_path: format!("{dir}/{name}"),
        filename: name,
        size_bytes: size,
        kind,
        checksum: sum,
    })
}

pub fn item() -> impl Strategy<Value = ItemDescriptor> {
    (
        text(),
        prop::collection::vec(file(EntryKind::Image), 0..4),
        prop::collection::vec(file(EntryKind::Data), 0..4),
        prop::collection::btree_map("[a-z_]{1,10}", attr(), 0..5),
        prop::collection::vec(text(), 0..3),
    )
        .prop_map(|(folder, image_files, data_files, attributes, warnings)| ItemDescriptor {
            source_subfolder: folder,
            image_files,
            data_files,
            attributes: attributes.into_iter().collect::<BTreeMap<_, _>>(),
            warnings,
        })
}

pub fn descriptor() -> impl Strategy<Value = DatasetDescriptor> {
    (
        text(),
        text(),
        prop::collection::vec(item(), 0..6),
        0i64..4_000_000_000_000,
        prop::collection::vec(text(), 0..3),
    )
        .prop_map(|(name, root, mut items, ms, warnings)| {
            // sub-folder names are unique within a dataset
            let mut seen = BTreeSet::new();
            items.retain(|i| seen.insert(i.source_subfolder.clone()));
            DatasetDescriptor {
                dataset_name: name,
                root_path: root,
                items,
                generated_at: Timestamp::from_millis(ms),
                warnings,
            }
        })
}
