//! Opaque identifiers, UTC timestamps and the clock/id sources the services draw from.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicI64, Ordering};

use chrono::{DateTime, Duration, SecondsFormat, TimeZone, Utc};
use parking_lot::Mutex;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

/// 128-bit opaque identifier, rendered as 32 lowercase hex characters.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Id(u128);

impl Id {
    pub const fn from_u128(v: u128) -> Self {
        Id(v)
    }

    pub fn as_u128(self) -> u128 {
        self.0
    }
}

impl fmt::Display for Id {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

impl fmt::Debug for Id {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Id({self})")
    }
}

impl FromStr for Id {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != 32 || !s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
            return Err(Error::Validation(format!(
                "malformed id {s:?}: expected 32 lowercase hex characters"
            )));
        }
        u128::from_str_radix(s, 16)
            .map(Id)
            .map_err(|e| Error::Validation(format!("malformed id {s:?}: {e}")))
    }
}

impl Serialize for Id {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Id {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// UTC instant with millisecond precision, serialized as ISO-8601 (`2024-01-02T03:04:05.006Z`).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(i64);

impl Timestamp {
    pub fn from_millis(ms: i64) -> Self {
        Timestamp(ms)
    }

    pub fn from_datetime(dt: DateTime<Utc>) -> Self {
        Timestamp(dt.timestamp_millis())
    }

    pub fn millis(self) -> i64 {
        self.0
    }

    pub fn to_datetime(self) -> DateTime<Utc> {
        Utc.timestamp_millis_opt(self.0)
            .single()
            .expect("timestamp within chrono range")
    }

    pub fn plus_millis(self, ms: i64) -> Self {
        Timestamp(self.0 + ms)
    }

    pub fn since(self, earlier: Timestamp) -> Duration {
        Duration::milliseconds(self.0 - earlier.0)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_datetime().to_rfc3339_opts(SecondsFormat::Millis, true))
    }
}

impl fmt::Debug for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Timestamp({self})")
    }
}

impl FromStr for Timestamp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DateTime::parse_from_rfc3339(s)
            .map(|dt| Timestamp(dt.with_timezone(&Utc).timestamp_millis()))
            .map_err(|e| Error::Validation(format!("malformed timestamp {s:?}: {e}")))
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        Timestamp::from_datetime(Utc::now())
    }
}

/// Deterministic clock: every reading advances by a fixed step.
#[derive(Debug)]
pub struct ManualClock {
    next: AtomicI64,
    step_ms: i64,
}

impl ManualClock {
    pub fn new(start: Timestamp, step_ms: i64) -> Self {
        ManualClock {
            next: AtomicI64::new(start.millis()),
            step_ms,
        }
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Timestamp {
        Timestamp(self.next.fetch_add(self.step_ms, Ordering::SeqCst))
    }
}

/// Source of fresh identifiers. Entropy-backed ids lead with the creation millisecond
/// and strictly increase, so they sort in creation order; seeded ids are uniformly
/// random and reproducible.
pub struct IdSource {
    inner: Mutex<IdState>,
}

struct IdState {
    rng: ChaCha20Rng,
    time_ordered: bool,
    last: u128,
}

impl IdSource {
    pub fn from_entropy() -> Self {
        IdSource {
            inner: Mutex::new(IdState {
                rng: ChaCha20Rng::from_entropy(),
                time_ordered: true,
                last: 0,
            }),
        }
    }

    pub fn seeded(seed: u64) -> Self {
        IdSource {
            inner: Mutex::new(IdState {
                rng: ChaCha20Rng::seed_from_u64(seed),
                time_ordered: false,
                last: 0,
            }),
        }
    }

    pub fn next_id(&self) -> Id {
        let mut st = self.inner.lock();
        let mut bytes = [0u8; 16];
        st.rng.fill_bytes(&mut bytes);
        let random = u128::from_be_bytes(bytes);
        if !st.time_ordered {
            return Id(random);
        }
        let millis = Utc::now().timestamp_millis().max(0) as u128;
        let candidate = (millis << 80) | (random >> 48);
        let id = candidate.max(st.last + 1);
        st.last = id;
        Id(id)
    }
}

impl fmt::Debug for IdSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("IdSource")
    }
}
