//! Line codec for table logs.
//!
//! ```text
//! LINE    := LEN ':' CRC ':' PAYLOAD '\n'
//! LEN     := decimal byte length of PAYLOAD
//! CRC     := 8 lowercase hex digits, CRC-32 (IEEE) of PAYLOAD
//! PAYLOAD := canonical JSON object with lexicographically ordered keys:
//!            {"id": <row id>, "n": <index within txn>, "row": <record>, "txn": <txn>}
//! ```

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Envelope {
    pub id: String,
    pub n: u32,
    pub row: Value,
    pub txn: u64,
}

pub(crate) fn encode(env: &Envelope) -> String {
    // serde_json::Value keeps object keys in a BTreeMap, so the text is key-ordered
    let value = serde_json::to_value(env).expect("envelope is always serializable");
    let payload = value.to_string();
    let crc = crc32fast::hash(payload.as_bytes());
    format!("{}:{crc:08x}:{payload}\n", payload.len())
}

#[derive(Debug, PartialEq, Eq)]
pub(crate) enum Decoded<T> {
    Line { value: T, consumed: usize },
    /// Incomplete or corrupt data starting at the current offset.
    Bad(String),
    End,
}

/// Decodes the line starting at `buf[0]`.
pub(crate) fn decode(buf: &[u8]) -> Decoded<Envelope> {
    if buf.is_empty() {
        return Decoded::End;
    }
    let Some(nl) = buf.iter().position(|&b| b == b'\n') else {
        return Decoded::Bad("unterminated line".into());
    };
    let line = &buf[..nl];
    let mut parts = line.splitn(3, |&b| b == b':');
    let (Some(len), Some(crc), Some(payload)) = (parts.next(), parts.next(), parts.next()) else {
        return Decoded::Bad("missing length or checksum".into());
    };
    let Some(len) = std::str::from_utf8(len).ok().and_then(|s| s.parse::<usize>().ok()) else {
        return Decoded::Bad("bad length prefix".into());
    };
    if len != payload.len() {
        return Decoded::Bad(format!("length {len} does not match payload {}", payload.len()));
    }
    let Some(crc) = std::str::from_utf8(crc).ok().and_then(|s| u32::from_str_radix(s, 16).ok()) else {
        return Decoded::Bad("bad checksum field".into());
    };
    if crc32fast::hash(payload) != crc {
        return Decoded::Bad("checksum mismatch".into());
    }
    match serde_json::from_slice::<Envelope>(payload) {
        Ok(value) => Decoded::Line {
            value,
            consumed: nl + 1,
        },
        Err(e) => Decoded::Bad(format!("undecodable payload: {e}")),
    }
}
