//! Logical file names (`lfn://<namespace>/<relative-path>`) and their resolution to URLs.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use url::Url;

use crate::error::{Error, Result};

const SCHEME: &str = "lfn://";

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Lfn(String);

impl Lfn {
    pub fn new(namespace: &str, relative_path: &str) -> Result<Self> {
        format!("{SCHEME}{namespace}/{relative_path}").parse()
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn namespace(&self) -> &str {
        let rest = &self.0[SCHEME.len()..];
        rest.split_once('/').map(|(ns, _)| ns).unwrap_or(rest)
    }

    pub fn relative_path(&self) -> &str {
        let rest = &self.0[SCHEME.len()..];
        rest.split_once('/').map(|(_, p)| p).unwrap_or("")
    }

    /// Final path segment, used as the human-facing file name.
    pub fn file_name(&self) -> &str {
        self.relative_path().rsplit('/').next().unwrap_or("")
    }
}

impl FromStr for Lfn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let rest = s
            .strip_prefix(SCHEME)
            .ok_or_else(|| Error::Validation(format!("lfn {s:?} must start with {SCHEME}")))?;
        let (ns, path) = rest
            .split_once('/')
            .ok_or_else(|| Error::Validation(format!("lfn {s:?} lacks a relative path")))?;
        if ns.is_empty() || path.is_empty() {
            return Err(Error::Validation(format!(
                "lfn {s:?} needs a non-empty namespace and path"
            )));
        }
        if path.split('/').any(|seg| seg.is_empty() || seg == "." || seg == "..") {
            return Err(Error::Validation(format!(
                "lfn {s:?} has an empty or relative path segment"
            )));
        }
        if s.chars().any(|c| c.is_control() || c.is_whitespace()) {
            return Err(Error::Validation(format!("lfn {s:?} contains whitespace")));
        }
        Ok(Lfn(s.to_owned()))
    }
}

impl fmt::Display for Lfn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for Lfn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Lfn({})", self.0)
    }
}

impl Serialize for Lfn {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Lfn {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Prefix-substitution resolver from storage-relative paths to URLs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StorageUrls {
    prefix: Url,
}

impl StorageUrls {
    pub fn new(prefix: &str) -> Result<Self> {
        let mut prefix = Url::parse(prefix)
            .map_err(|e| Error::Validation(format!("bad storage url prefix {prefix:?}: {e}")))?;
        if !prefix.path().ends_with('/') {
            let p = format!("{}/", prefix.path());
            prefix.set_path(&p);
        }
        Ok(StorageUrls { prefix })
    }

    /// A `file://` prefix pointing at a local directory.
    pub fn for_directory(dir: &std::path::Path) -> Result<Self> {
        let url = Url::from_directory_path(dir).map_err(|()| {
            Error::Validation(format!("{} is not an absolute directory", dir.display()))
        })?;
        Ok(StorageUrls { prefix: url })
    }

    pub fn prefix(&self) -> &str {
        self.prefix.as_str()
    }

    pub fn url_for(&self, storage_path: &str) -> String {
        let rel = storage_path.trim_start_matches('/');
        // "./" keeps segments such as "a:b" from being read as a scheme
        match self.prefix.join(&format!("./{rel}")) {
            Ok(u) => u.to_string(),
            Err(_) => format!("{}{rel}", self.prefix),
        }
    }

    /// Inverse of [`url_for`](Self::url_for) for `file://` prefixes.
    pub fn local_path(location: &str) -> Result<PathBuf> {
        let url = Url::parse(location)
            .map_err(|e| Error::Validation(format!("bad file location {location:?}: {e}")))?;
        if url.scheme() != "file" {
            return Err(Error::Validation(format!(
                "location {location:?} is not a local file url"
            )));
        }
        url.to_file_path()
            .map_err(|()| Error::Validation(format!("location {location:?} has no local path")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_namespace_and_path() {
        let l: Lfn = "lfn://derived/abc/step1/out".parse().unwrap();
        assert_eq!(l.namespace(), "derived");
        assert_eq!(l.relative_path(), "abc/step1/out");
        assert_eq!(l.file_name(), "out");
    }

    #[test]
    fn rejects_bad_syntax() {
        for bad in [
            "http://x/y",
            "lfn://x",
            "lfn:///y",
            "lfn://x/",
            "lfn://x/a//b",
            "lfn://x/../b",
            "lfn://x/a b",
        ] {
            assert!(bad.parse::<Lfn>().is_err(), "{bad}");
        }
    }

    #[test]
    fn url_prefix_substitution() {
        let urls = StorageUrls::new("file:///grid/storage").unwrap();
        assert_eq!(urls.url_for("ds/a/b.nii"), "file:///grid/storage/ds/a/b.nii");
        assert_eq!(
            StorageUrls::local_path("file:///grid/storage/ds/a/b.nii").unwrap(),
            PathBuf::from("/grid/storage/ds/a/b.nii")
        );
    }
}
