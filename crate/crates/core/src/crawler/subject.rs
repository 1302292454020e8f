use std::collections::BTreeMap;
use std::io;

use crate::model::AttrValue;

use super::xmldom;
use super::{FileEntry, ItemDescriptor};

/// One subject/study file: `<subject><sex/><age/><assessments/><stage/></subject>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubjectRecord {
    pub sex: String,
    pub age: i64,
    pub assessments: i64,
    pub stage: Option<String>,
}

impl SubjectRecord {
    pub fn to_xml(&self) -> String {
        let mut s = format!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<subject>\n  <sex>{}</sex>\n  <age>{}</age>\n  <assessments>{}</assessments>\n",
            self.sex, self.age, self.assessments
        );
        if let Some(stage) = &self.stage {
            s.push_str(&format!(
                "  <stage>{}</stage>\n",
                quick_xml::escape::escape(stage.as_str())
            ));
        }
        s.push_str("</subject>\n");
        s
    }

    fn attributes(&self) -> Vec<(&'static str, AttrValue)> {
        let mut v = vec![
            ("subject_sex", AttrValue::Text(self.sex.clone())),
            ("subject_age", AttrValue::Integer(self.age)),
            ("assessment_count", AttrValue::Integer(self.assessments)),
        ];
        if let Some(stage) = &self.stage {
            v.push(("study_stage", AttrValue::Text(stage.clone())));
        }
        v
    }
}

/// `Ok(None)` when the document is XML but not a subject file.
pub fn parse_subject(bytes: &[u8]) -> Result<Option<SubjectRecord>, String> {
    let root = xmldom::parse(bytes).map_err(|e| format!("not well-formed: {e}"))?;
    if root.name != "subject" {
        return Ok(None);
    }
    let field = |name: &str| -> Result<&str, String> {
        root.child(name)
            .map(|c| c.text.trim())
            .ok_or_else(|| format!("missing <{name}>"))
    };
    let sex = field("sex")?;
    if sex != "M" && sex != "F" {
        return Err(format!("<sex> must be M or F, got {sex:?}"));
    }
    let int = |name: &str| -> Result<i64, String> {
        let raw = field(name)?;
        let v: i64 = raw
            .parse()
            .map_err(|_| format!("<{name}> must be an integer, got {raw:?}"))?;
        if v < 0 {
            return Err(format!("<{name}> must be non-negative"));
        }
        Ok(v)
    };
    Ok(Some(SubjectRecord {
        sex: sex.to_owned(),
        age: int("age")?,
        assessments: int("assessments")?,
        stage: root.child("stage").map(|c| c.text.trim().to_owned()),
    }))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Extracted {
    pub attributes: BTreeMap<String, AttrValue>,
    pub warnings: Vec<String>,
}

/// Merges the attributes of every subject XML among the item's data files, in
/// data-file order. A later file overriding a different earlier value leaves a warning;
/// malformed subject files are skipped with a warning.
pub fn extract_attributes<F>(item: &ItemDescriptor, mut read: F) -> Extracted
where
    F: FnMut(&FileEntry) -> io::Result<Vec<u8>>,
{
    let mut out = Extracted::default();
    for f in &item.data_files {
        if !f.filename.to_ascii_lowercase().ends_with(".xml") {
            continue;
        }
        let bytes = match read(f) {
            Ok(b) => b,
            Err(e) => {
                out.warnings
                    .push(format!("{}: unreadable ({e})", f.relative_path));
                continue;
            }
        };
        let subject = match parse_subject(&bytes) {
            Ok(Some(s)) => s,
            Ok(None) => continue,
            Err(e) => {
                out.warnings
                    .push(format!("{}: skipped malformed subject file ({e})", f.relative_path));
                continue;
            }
        };
        for (key, value) in subject.attributes() {
            if let Some(prev) = out.attributes.get(key) {
                if *prev != value {
                    out.warnings.push(format!(
                        "{}: {key} overrides {prev} with {value}",
                        f.relative_path
                    ));
                }
            }
            out.attributes.insert(key.to_owned(), value);
        }
    }
    out
}
