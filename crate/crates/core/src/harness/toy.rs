//! Deterministic stand-ins for analysis algorithms. Each reads its input files and
//! scalar parameters and writes the same bytes to every declared output port.

use sha2::{Digest, Sha256};

use crate::model::AttrValue;

pub const TOY_ALGORITHMS: &[&str] = &["line-count", "concatenate", "checksum-stamp", "threshold-filter"];

/// One input file as seen by an algorithm.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputFile {
    pub filename: String,
    pub bytes: Vec<u8>,
}

/// Inputs in port declaration order; dataset ports contribute their files in item order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AlgorithmInputs {
    pub files: Vec<InputFile>,
    pub scalars: Vec<(String, AttrValue)>,
}

pub fn is_toy(name: &str) -> bool {
    TOY_ALGORITHMS.contains(&name)
}

pub fn run_toy(name: &str, inputs: &AlgorithmInputs) -> Result<Vec<u8>, String> {
    match name {
        "line-count" => {
            let n: usize = inputs.files.iter().map(|f| count_lines(&f.bytes)).sum();
            Ok(n.to_string().into_bytes())
        }
        "concatenate" => Ok(inputs.files.iter().flat_map(|f| f.bytes.iter().copied()).collect()),
        "checksum-stamp" => {
            let mut out = String::new();
            for f in &inputs.files {
                out.push_str(&hex::encode(Sha256::digest(&f.bytes)));
                out.push_str("  ");
                out.push_str(&f.filename);
                out.push('\n');
            }
            Ok(out.into_bytes())
        }
        "threshold-filter" => {
            let threshold = inputs
                .scalars
                .iter()
                .find_map(|(_, v)| v.as_f64())
                .ok_or("threshold-filter needs a numeric scalar input")?;
            let mut out = Vec::new();
            for f in &inputs.files {
                let text = String::from_utf8_lossy(&f.bytes);
                for line in text.lines() {
                    let last = line
                        .rsplit(|c: char| c == ',' || c == '\t' || c.is_whitespace())
                        .find(|t| !t.is_empty());
                    if last.and_then(|t| t.parse::<f64>().ok()).is_some_and(|v| v >= threshold) {
                        out.extend_from_slice(line.as_bytes());
                        out.push(b'\n');
                    }
                }
            }
            Ok(out)
        }
        other => Err(format!("no implementation for algorithm {other:?}")),
    }
}

fn count_lines(bytes: &[u8]) -> usize {
    let newlines = bytes.iter().filter(|&&b| b == b'\n').count();
    match bytes.last() {
        Some(b'\n') | None => newlines,
        Some(_) => newlines + 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(name: &str, s: &str) -> InputFile {
        InputFile {
            filename: name.into(),
            bytes: s.as_bytes().to_vec(),
        }
    }

    #[test]
    fn line_count_of_ten_lines() {
        let body: String = (1..=10).map(|i| format!("row {i}\n")).collect();
        let inputs = AlgorithmInputs {
            files: vec![file("a.txt", &body)],
            ..Default::default()
        };
        assert_eq!(run_toy("line-count", &inputs).unwrap(), b"10");
        let unterminated = AlgorithmInputs {
            files: vec![file("a.txt", "x\ny")],
            ..Default::default()
        };
        assert_eq!(run_toy("line-count", &unterminated).unwrap(), b"2");
    }

    #[test]
    fn threshold_keeps_lines_at_or_above() {
        let inputs = AlgorithmInputs {
            files: vec![file("v.csv", "id,val\na,3\nb,7.5\nc,5\n")],
            scalars: vec![("t".into(), AttrValue::Integer(5))],
        };
        assert_eq!(run_toy("threshold-filter", &inputs).unwrap(), b"b,7.5\nc,5\n");
        let missing = AlgorithmInputs::default();
        assert!(run_toy("threshold-filter", &missing).is_err());
    }

    #[test]
    fn stamp_uses_names_not_locations() {
        let inputs = AlgorithmInputs {
            files: vec![file("a", "x")],
            ..Default::default()
        };
        let out = String::from_utf8(run_toy("checksum-stamp", &inputs).unwrap()).unwrap();
        assert!(out.ends_with("  a\n"));
        assert_eq!(out.len(), 64 + 2 + 1 + 1);
    }
}
