//! Brute-force reference crawler built on walkdir, sharing no code with the crate's
//! crawler beyond the descriptor types.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use analysis_base::crawler::{DatasetDescriptor, EntryKind, FileEntry, ItemDescriptor};
use analysis_base::model::AttrValue;
use analysis_base::Timestamp;
use quick_xml::events::Event;
use quick_xml::Reader;
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

pub struct OracleCrawl {
    /// Descriptor without warning texts.
    pub descriptor: DatasetDescriptor,
    /// Paths (root-relative) that should carry a warning.
    pub warned: BTreeSet<String>,
}

fn kind_of(name: &str) -> EntryKind {
    if name.starts_with('.') {
        return EntryKind::Ignored;
    }
    let lower = name.to_lowercase();
    if lower.ends_with(".nii.gz") && lower.len() > ".nii.gz".len() {
        return EntryKind::Image;
    }
    let Some((stem, ext)) = lower.rsplit_once('.') else {
        return EntryKind::Ignored;
    };
    if stem.is_empty() {
        return EntryKind::Ignored;
    }
    match ext {
        "nii" | "mnc" | "img" | "hdr" | "dcm" => EntryKind::Image,
        "xml" | "csv" | "tsv" | "txt" | "json" => EntryKind::Data,
        _ => EntryKind::Ignored,
    }
}

enum Subject {
    NotSubject,
    Malformed,
    Fields(Vec<(&'static str, AttrValue)>),
}

fn read_subject(bytes: &[u8]) -> Subject {
    let mut r = Reader::from_reader(bytes);
    let mut depth = 0usize;
    let mut root: Option<String> = None;
    let mut current: Option<String> = None;
    let mut fields: BTreeMap<String, String> = BTreeMap::new();
    loop {
        match r.read_event() {
            Err(_) => return Subject::Malformed,
            Ok(Event::Eof) => break,
            Ok(Event::Start(e)) => {
                let name = String::from_utf8_lossy(e.name().as_ref()).into_owned();
                if depth == 0 {
                    root = Some(name);
                } else if depth == 1 {
                    current = Some(name.clone());
                    fields.entry(name).or_default();
                }
                depth += 1;
            }
            Ok(Event::Empty(e)) => {
                let name = String::from_utf8_lossy(e.name().as_ref()).into_owned();
                if depth == 0 {
                    root = Some(name);
                } else if depth == 1 {
                    fields.entry(name).or_default();
                }
            }
            Ok(Event::End(_)) => {
                depth = depth.saturating_sub(1);
                if depth <= 1 {
                    current = None;
                }
            }
            Ok(Event::Text(t)) => {
                if depth == 2 {
                    if let Some(c) = &current {
                        let text = t.unescape().map(|s| s.into_owned()).unwrap_or_default();
                        fields.get_mut(c).unwrap().push_str(&text);
                    }
                }
            }
            Ok(_) => {}
        }
    }
    if depth != 0 || root.is_none() {
        return Subject::Malformed;
    }
    if root.as_deref() != Some("subject") {
        return Subject::NotSubject;
    }
    let sex = match fields.get("sex").map(|s| s.trim()) {
        Some(s @ ("M" | "F")) => s.to_string(),
        _ => return Subject::Malformed,
    };
    let int = |k: &str| fields.get(k).and_then(|v| v.trim().parse::<i64>().ok()).filter(|v| *v >= 0);
    let (Some(age), Some(n)) = (int("age"), int("assessments")) else {
        return Subject::Malformed;
    };
    let mut out = vec![
        ("subject_sex", AttrValue::Text(sex)),
        ("subject_age", AttrValue::Integer(age)),
        ("assessment_count", AttrValue::Integer(n)),
    ];
    if let Some(stage) = fields.get("stage") {
        out.push(("study_stage", AttrValue::Text(stage.trim().to_string())));
    }
    Subject::Fields(out)
}

pub fn oracle_crawl(root: &Path, name: &str, generated_at: Timestamp) -> OracleCrawl {
    let mut items: Vec<ItemDescriptor> = Vec::new();
    let mut warned = BTreeSet::new();
    let walker = WalkDir::new(root)
        .min_depth(1)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| !e.file_name().to_string_lossy().starts_with('.'));
    for entry in walker {
        let entry = entry.unwrap();
        let rel: Vec<String> = entry
            .path()
            .strip_prefix(root)
            .unwrap()
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect();
        if entry.depth() == 1 {
            if entry.file_type().is_dir() {
                items.push(ItemDescriptor::new(rel[0].clone()));
            } else {
                warned.insert(rel[0].clone());
            }
            continue;
        }
        if !entry.file_type().is_file() {
            continue;
        }
        let fname = rel.last().unwrap().clone();
        let kind = kind_of(&fname);
        if kind == EntryKind::Ignored {
            continue;
        }
        let bytes = fs::read(entry.path()).unwrap();
        let fe = FileEntry {
            relative_path: rel.join("/"),
            filename: fname,
            size_bytes: bytes.len() as u64,
            kind,
            checksum: hex::encode(Sha256::digest(&bytes)),
        };
        let item = items.last_mut().unwrap();
        assert_eq!(item.source_subfolder, rel[0]);
        if kind == EntryKind::Image {
            item.image_files.push(fe);
        } else {
            item.data_files.push(fe);
        }
    }
    items.retain(|i| !i.is_empty());
    for item in &mut items {
        for f in &item.data_files {
            if !f.filename.to_lowercase().ends_with(".xml") {
                continue;
            }
            let bytes = fs::read(root.join(&f.relative_path)).unwrap();
            match read_subject(&bytes) {
                Subject::NotSubject => {}
                Subject::Malformed => {
                    warned.insert(f.relative_path.clone());
                }
                Subject::Fields(fields) => {
                    for (k, v) in fields {
                        if item.attributes.get(k).is_some_and(|prev| *prev != v) {
                            warned.insert(f.relative_path.clone());
                        }
                        item.attributes.insert(k.to_string(), v);
                    }
                }
            }
        }
    }
    OracleCrawl {
        descriptor: DatasetDescriptor {
            dataset_name: name.to_string(),
            root_path: root.display().to_string(),
            items,
            generated_at,
            warnings: Vec::new(),
        },
        warned,
    }
}

/// Moves warning texts out of a crawled descriptor, returning the warned paths.
pub fn split_warnings(d: &mut DatasetDescriptor) -> BTreeSet<String> {
    let mut warned = BTreeSet::new();
    let mut take = |ws: &mut Vec<String>| {
        for w in ws.drain(..) {
            warned.insert(w.split(": ").next().unwrap().to_string());
        }
    };
    take(&mut d.warnings);
    for i in &mut d.items {
        take(&mut i.warnings);
    }
    warned
}
