//! Dataset metadata XML: deterministic writer and validating reader.
//!
//! The normative schema ships as `schema/dataset-metadata.xsd`; [`parse_metadata`]
//! enforces the same rules by hand and reports every violation with its element path.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fmt::Write as _;

use crate::ident::Timestamp;
use crate::model::AttrValue;

use super::xmldom::{self, Element};
use super::{DatasetDescriptor, EntryKind, FileEntry, ItemDescriptor};

pub const METADATA_SCHEMA: &str = include_str!("../../schema/dataset-metadata.xsd");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaViolation {
    pub path: String,
    pub rule: String,
}

impl fmt::Display for SchemaViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            f.write_str(&self.rule)
        } else {
            write!(f, "{}: {}", self.path, self.rule)
        }
    }
}

fn esc(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            '\n' => out.push_str("&#10;"),
            '\r' => out.push_str("&#13;"),
            '\t' => out.push_str("&#9;"),
            c => out.push(c),
        }
    }
    out
}

pub fn serialize_metadata(d: &DatasetDescriptor) -> Vec<u8> {
    let mut x = String::new();
    x.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = write!(
        x,
        "<dataset name=\"{}\" generatedAt=\"{}\" rootPath=\"{}\">\n",
        esc(&d.dataset_name),
        d.generated_at,
        esc(&d.root_path)
    );
    if d.items.is_empty() {
        x.push_str("  <items/>\n");
    } else {
        x.push_str("  <items>\n");
        for item in &d.items {
            write_item(&mut x, item);
        }
        x.push_str("  </items>\n");
    }
    write_warnings(&mut x, "  ", &d.warnings);
    x.push_str("</dataset>\n");
    x.into_bytes()
}

fn write_item(x: &mut String, item: &ItemDescriptor) {
    let _ = writeln!(x, "    <item sourceSubfolder=\"{}\">", esc(&item.source_subfolder));
    write_files(x, "imageFiles", &item.image_files);
    write_files(x, "dataFiles", &item.data_files);
    if item.attributes.is_empty() {
        x.push_str("      <attributes/>\n");
    } else {
        x.push_str("      <attributes>\n");
        for (name, value) in &item.attributes {
            let _ = writeln!(
                x,
                "        <attribute name=\"{}\" type=\"{}\">{}</attribute>",
                esc(name),
                value.type_name(),
                esc(&value.to_string())
            );
        }
        x.push_str("      </attributes>\n");
    }
    write_warnings(x, "      ", &item.warnings);
    x.push_str("    </item>\n");
}

fn write_files(x: &mut String, tag: &str, files: &[FileEntry]) {
    if files.is_empty() {
        let _ = writeln!(x, "      <{tag}/>");
        return;
    }
    let _ = writeln!(x, "      <{tag}>");
    for f in files {
        let _ = write!(
            x,
            "        <file>\n          <filename>{}</filename>\n          <relativePath>{}</relativePath>\n          <sizeBytes>{}</sizeBytes>\n          <checksum>{}</checksum>\n        </file>\n",
            esc(&f.filename),
            esc(&f.relative_path),
            f.size_bytes,
            esc(&f.checksum)
        );
    }
    let _ = writeln!(x, "      </{tag}>");
}

fn write_warnings(x: &mut String, indent: &str, warnings: &[String]) {
    if warnings.is_empty() {
        return;
    }
    let _ = writeln!(x, "{indent}<warnings>");
    for w in warnings {
        let _ = writeln!(x, "{indent}  <warning>{}</warning>", esc(w));
    }
    let _ = writeln!(x, "{indent}</warnings>");
}

struct Checker {
    violations: Vec<SchemaViolation>,
}

impl Checker {
    fn fail(&mut self, path: &str, rule: impl Into<String>) {
        self.violations.push(SchemaViolation {
            path: path.to_owned(),
            rule: rule.into(),
        });
    }

    /// Rejects unknown children and repeats of single-occurrence children.
    fn children(&mut self, el: &Element, path: &str, single: &[&str], repeated: &[&str]) {
        let mut seen = BTreeSet::new();
        for c in &el.children {
            if repeated.contains(&c.name.as_str()) {
                continue;
            }
            if !single.contains(&c.name.as_str()) {
                self.fail(&format!("{path}/{}", c.name), "unexpected element");
            } else if !seen.insert(c.name.as_str()) {
                self.fail(&format!("{path}/{}", c.name), "element may appear at most once");
            }
        }
        if !el.children.is_empty() && !el.text.trim().is_empty() {
            self.fail(path, "unexpected text content");
        }
    }

    fn no_children(&mut self, el: &Element, path: &str) {
        for c in &el.children {
            self.fail(&format!("{path}/{}", c.name), "unexpected element");
        }
    }
}

pub fn parse_metadata(doc: &[u8]) -> Result<DatasetDescriptor, Vec<SchemaViolation>> {
    let root = xmldom::parse(doc).map_err(|e| {
        vec![SchemaViolation {
            path: String::new(),
            rule: format!("not well-formed: {e}"),
        }]
    })?;
    let mut ck = Checker {
        violations: Vec::new(),
    };
    if root.name != "dataset" {
        ck.fail(&format!("/{}", root.name), "root element must be <dataset>");
        return Err(ck.violations);
    }
    let path = "/dataset";
    let dataset_name = match root.attr("name") {
        Some(n) if !n.is_empty() => n.to_owned(),
        _ => {
            ck.fail(&format!("{path}/@name"), "required attribute missing or empty");
            String::new()
        }
    };
    let generated_at = match root.attr("generatedAt") {
        None => Timestamp::from_millis(0),
        Some(raw) => raw.parse().unwrap_or_else(|_| {
            ck.fail(&format!("{path}/@generatedAt"), "must be an ISO-8601 date-time");
            Timestamp::from_millis(0)
        }),
    };
    let root_path = root.attr("rootPath").unwrap_or("").to_owned();
    ck.children(&root, path, &["items", "warnings"], &[]);

    let mut items = Vec::new();
    match root.child("items") {
        None => ck.fail(&format!("{path}/items"), "required element missing"),
        Some(list) => {
            let list_path = format!("{path}/items");
            ck.children(list, &list_path, &[], &["item"]);
            let mut subfolders = BTreeSet::new();
            for (i, el) in list.children_named("item").enumerate() {
                let ip = format!("{list_path}/item[{}]", i + 1);
                if let Some(item) = parse_item(&mut ck, el, &ip) {
                    if !subfolders.insert(item.source_subfolder.clone()) {
                        ck.fail(&format!("{ip}/@sourceSubfolder"), "duplicate sourceSubfolder");
                    }
                    items.push(item);
                }
            }
        }
    }
    let warnings = parse_warnings(&mut ck, root.child("warnings"), &format!("{path}/warnings"));

    if ck.violations.is_empty() {
        Ok(DatasetDescriptor {
            dataset_name,
            root_path,
            items,
            generated_at,
            warnings,
        })
    } else {
        Err(ck.violations)
    }
}

fn parse_item(ck: &mut Checker, el: &Element, path: &str) -> Option<ItemDescriptor> {
    ck.children(el, path, &["imageFiles", "dataFiles", "attributes", "warnings"], &[]);
    let sub = match el.attr("sourceSubfolder") {
        Some(s) if !s.is_empty() => s.to_owned(),
        _ => {
            ck.fail(&format!("{path}/@sourceSubfolder"), "required attribute missing or empty");
            String::new()
        }
    };
    let mut item = ItemDescriptor::new(sub);
    if let Some(list) = el.child("imageFiles") {
        item.image_files = parse_files(ck, list, &format!("{path}/imageFiles"), EntryKind::Image);
    }
    if let Some(list) = el.child("dataFiles") {
        item.data_files = parse_files(ck, list, &format!("{path}/dataFiles"), EntryKind::Data);
    }
    let images: BTreeSet<&str> = item.image_files.iter().map(|f| f.relative_path.as_str()).collect();
    for f in &item.data_files {
        if images.contains(f.relative_path.as_str()) {
            ck.fail(
                &format!("{path}/dataFiles"),
                format!("{} is listed as both image and data", f.relative_path),
            );
        }
    }
    if let Some(list) = el.child("attributes") {
        item.attributes = parse_attributes(ck, list, &format!("{path}/attributes"));
    }
    item.warnings = parse_warnings(ck, el.child("warnings"), &format!("{path}/warnings"));
    Some(item)
}

fn parse_files(ck: &mut Checker, list: &Element, path: &str, kind: EntryKind) -> Vec<FileEntry> {
    ck.children(list, path, &[], &["file"]);
    let mut out = Vec::new();
    for (i, f) in list.children_named("file").enumerate() {
        let fp = format!("{path}/file[{}]", i + 1);
        ck.children(f, &fp, &["filename", "relativePath", "sizeBytes", "checksum"], &[]);
        let mut required = |name: &str| match f.child(name) {
            Some(c) if !c.text.is_empty() => {
                ck.no_children(c, &format!("{fp}/{name}"));
                c.text.clone()
            }
            Some(_) => {
                ck.fail(&format!("{fp}/{name}"), "must not be empty");
                String::new()
            }
            None => {
                ck.fail(&format!("{fp}/{name}"), "required element missing");
                String::new()
            }
        };
        let filename = required("filename");
        let relative_path = required("relativePath");
        let size_bytes = match f.child("sizeBytes") {
            None => 0,
            Some(c) => c.text.trim().parse::<u64>().unwrap_or_else(|_| {
                ck.fail(&format!("{fp}/sizeBytes"), "must be a non-negative integer");
                0
            }),
        };
        let checksum = match f.child("checksum") {
            None => String::new(),
            Some(c) => {
                let v = c.text.trim();
                if !v.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
                    ck.fail(&format!("{fp}/checksum"), "must be lowercase hex");
                }
                v.to_owned()
            }
        };
        out.push(FileEntry {
            relative_path,
            filename,
            size_bytes,
            kind,
            checksum,
        });
    }
    out
}

fn parse_attributes(ck: &mut Checker, list: &Element, path: &str) -> BTreeMap<String, AttrValue> {
    ck.children(list, path, &[], &["attribute"]);
    let mut out = BTreeMap::new();
    for (i, a) in list.children_named("attribute").enumerate() {
        let ap = format!("{path}/attribute[{}]", i + 1);
        ck.no_children(a, &ap);
        let Some(name) = a.attr("name").filter(|n| !n.is_empty()) else {
            ck.fail(&format!("{ap}/@name"), "required attribute missing or empty");
            continue;
        };
        let text = a.text.as_str();
        let value = match a.attr("type") {
            Some("string") => AttrValue::Text(text.to_owned()),
            Some("int") => match text.trim().parse() {
                Ok(v) => AttrValue::Integer(v),
                Err(_) => {
                    ck.fail(&ap, "int attribute value must be an integer");
                    continue;
                }
            },
            Some("decimal") => match text.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => AttrValue::Decimal(v),
                _ => {
                    ck.fail(&ap, "decimal attribute value must be a finite number");
                    continue;
                }
            },
            Some(other) => {
                ck.fail(
                    &format!("{ap}/@type"),
                    format!("must be one of string, int, decimal (got {other:?})"),
                );
                continue;
            }
            None => {
                ck.fail(&format!("{ap}/@type"), "required attribute missing");
                continue;
            }
        };
        if out.insert(name.to_owned(), value).is_some() {
            ck.fail(&format!("{ap}/@name"), format!("duplicate attribute {name}"));
        }
    }
    out
}

fn parse_warnings(ck: &mut Checker, list: Option<&Element>, path: &str) -> Vec<String> {
    let Some(list) = list else { return Vec::new() };
    ck.children(list, path, &[], &["warning"]);
    list.children_named("warning").map(|w| w.text.clone()).collect()
}
