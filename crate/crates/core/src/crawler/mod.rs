//! Dataset crawler: walks an on-disk dataset tree, classifies every file as image,
//! data or ignored, and groups the classified files into one item per immediate
//! sub-folder of the root. Nested folders fold into their top-level sub-folder's item.
//!
//! The descriptor only *references* files (path, size, digest); file contents are
//! read solely to compute digests and to pull attributes out of subject XML files.

mod diff;
mod metadata;
mod subject;
pub(crate) mod xmldom;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ident::Timestamp;
use crate::model::AttrValue;

pub use diff::{diff_descriptors, ChangeSet};
pub use metadata::{parse_metadata, serialize_metadata, SchemaViolation, METADATA_SCHEMA};
pub use subject::{extract_attributes, parse_subject, Extracted, SubjectRecord};

pub const IMAGE_EXTENSIONS: &[&str] = &["nii", "nii.gz", "mnc", "img", "hdr", "dcm"];
pub const DATA_EXTENSIONS: &[&str] = &["xml", "csv", "tsv", "txt", "json"];
const ARCHIVE_EXTENSIONS: &[&str] = &["zip", "tar", "tar.gz", "tgz", "tar.bz2", "tbz2", "tar.xz"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Image,
    Data,
    Ignored,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Path relative to the dataset root, `/`-separated.
    pub relative_path: String,
    pub filename: String,
    pub size_bytes: u64,
    pub kind: EntryKind,
    /// Lowercase hex SHA-256 of the file bytes.
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemDescriptor {
    pub source_subfolder: String,
    pub image_files: Vec<FileEntry>,
    pub data_files: Vec<FileEntry>,
    pub attributes: BTreeMap<String, AttrValue>,
    pub warnings: Vec<String>,
}

impl ItemDescriptor {
    pub fn new(source_subfolder: impl Into<String>) -> Self {
        ItemDescriptor {
            source_subfolder: source_subfolder.into(),
            image_files: Vec::new(),
            data_files: Vec::new(),
            attributes: BTreeMap::new(),
            warnings: Vec::new(),
        }
    }

    pub fn files(&self) -> impl Iterator<Item = &FileEntry> {
        self.image_files.iter().chain(self.data_files.iter())
    }

    pub fn is_empty(&self) -> bool {
        self.image_files.is_empty() && self.data_files.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub dataset_name: String,
    pub root_path: String,
    pub items: Vec<ItemDescriptor>,
    pub generated_at: Timestamp,
    pub warnings: Vec<String>,
}

/// Classifies by file name alone: hidden files and unknown extensions are ignored.
pub fn classify_name(filename: &str) -> EntryKind {
    if filename.starts_with('.') {
        return EntryKind::Ignored;
    }
    let lower = filename.to_ascii_lowercase();
    let has = |ext: &&str| {
        lower.len() > ext.len() + 1
            && lower.ends_with(*ext)
            && lower.as_bytes()[lower.len() - ext.len() - 1] == b'.'
    };
    if IMAGE_EXTENSIONS.iter().any(has) {
        EntryKind::Image
    } else if DATA_EXTENSIONS.iter().any(has) {
        EntryKind::Data
    } else {
        EntryKind::Ignored
    }
}

fn is_archive(filename: &str) -> bool {
    let lower = filename.to_ascii_lowercase();
    ARCHIVE_EXTENSIONS
        .iter()
        .any(|ext| lower.ends_with(&format!(".{ext}")))
}

pub fn classify_file(path: &Path) -> Result<EntryKind> {
    let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
    if !meta.is_file() {
        return Err(Error::Validation(format!(
            "{} is not a regular file",
            path.display()
        )));
    }
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Validation(format!("{} has no utf-8 file name", path.display())))?;
    Ok(classify_name(name))
}

pub fn file_checksum(path: &Path) -> io::Result<(u64, String)> {
    let mut f = File::open(path)?;
    let mut hasher = Sha256::new();
    let n = io::copy(&mut f, &mut hasher)?;
    Ok((n, hex::encode(hasher.finalize())))
}

/// Crawls `root` into a descriptor stamped with `generated_at`.
pub fn crawl_dataset(root: &Path, dataset_name: &str, generated_at: Timestamp) -> Result<DatasetDescriptor> {
    let meta = fs::metadata(root).map_err(|e| Error::io(root, e))?;
    if meta.is_file() {
        let name = root.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if is_archive(name) {
            return Err(archived(root));
        }
        return Err(Error::Validation(format!(
            "dataset root {} is not a directory",
            root.display()
        )));
    }

    let mut warnings = Vec::new();
    let mut items = Vec::new();
    for entry in sorted_entries(root).map_err(|e| Error::io(root, e))? {
        let (name, path) = entry;
        if name.starts_with('.') {
            continue;
        }
        let ft = match fs::metadata(&path) {
            Ok(m) => m,
            Err(e) => {
                warnings.push(format!("{name}: unreadable ({e})"));
                continue;
            }
        };
        if ft.is_dir() {
            let mut item = ItemDescriptor::new(name.clone());
            walk_item(root, &path, &mut item)?;
            if item.is_empty() {
                warnings.extend(item.warnings.into_iter().map(|w| format!("{name}: {w}")));
                continue;
            }
            let extracted = extract_attributes(&item, |f: &FileEntry| {
                fs::read(root.join(&f.relative_path))
            });
            item.attributes = extracted.attributes;
            item.warnings.extend(extracted.warnings);
            items.push(item);
        } else if is_archive(&name) {
            return Err(archived(&path));
        } else {
            warnings.push(format!("{name}: file directly under the dataset root excluded"));
        }
    }

    Ok(DatasetDescriptor {
        dataset_name: dataset_name.to_owned(),
        root_path: root.display().to_string(),
        items,
        generated_at,
        warnings,
    })
}

fn archived(path: &Path) -> Error {
    Error::Validation(format!(
        "{} is an archive; unarchive first and crawl the extracted tree",
        path.display()
    ))
}

fn sorted_entries(dir: &Path) -> io::Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        out.push((name, entry.path()));
    }
    out.sort();
    Ok(out)
}

/// Depth-first walk of one item folder; every classified file lands in `item`.
fn walk_item(root: &Path, dir: &Path, item: &mut ItemDescriptor) -> Result<()> {
    let entries = match sorted_entries(dir) {
        Ok(e) => e,
        Err(e) => {
            item.warnings
                .push(format!("{}: unreadable folder ({e})", relative(root, dir)));
            return Ok(());
        }
    };
    for (name, path) in entries {
        if name.starts_with('.') {
            continue;
        }
        let meta = match fs::metadata(&path) {
            Ok(m) => m,
            Err(e) => {
                item.warnings
                    .push(format!("{}: unreadable ({e})", relative(root, &path)));
                continue;
            }
        };
        if meta.is_dir() {
            walk_item(root, &path, item)?;
            continue;
        }
        if is_archive(&name) {
            return Err(archived(&path));
        }
        let kind = classify_name(&name);
        if kind == EntryKind::Ignored {
            continue;
        }
        let rel = relative(root, &path);
        match file_checksum(&path) {
            Ok((size_bytes, checksum)) => {
                let entry = FileEntry {
                    relative_path: rel,
                    filename: name,
                    size_bytes,
                    kind,
                    checksum,
                };
                match kind {
                    EntryKind::Image => item.image_files.push(entry),
                    EntryKind::Data => item.data_files.push(entry),
                    EntryKind::Ignored => unreachable!(),
                }
            }
            Err(e) => item.warnings.push(format!("{rel}: unreadable ({e})")),
        }
    }
    Ok(())
}

fn relative(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}
