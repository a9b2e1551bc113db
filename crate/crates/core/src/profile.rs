//! Slot schemes and activity profiles built from timestamped message logs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::check_pmf;

pub const SECONDS_PER_DAY: u64 = 86_400;
pub const SECONDS_PER_WEEK: u64 = 7 * SECONDS_PER_DAY;

/// Cyclic time frame over which activity repeats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Period {
    Day,
    Week,
    Custom(u64),
}

impl Period {
    pub fn seconds(self) -> u64 {
        match self {
            Period::Day => SECONDS_PER_DAY,
            Period::Week => SECONDS_PER_WEEK,
            Period::Custom(s) => s,
        }
    }

    pub fn from_seconds(seconds: u64) -> Self {
        match seconds {
            SECONDS_PER_DAY => Period::Day,
            SECONDS_PER_WEEK => Period::Week,
            s => Period::Custom(s),
        }
    }
}

/// Partition of a cyclic period into `n` equal slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotScheme {
    n: usize,
    period: Period,
}

impl SlotScheme {
    /// Requires `n >= 2` and a period that splits into `n` whole-second slots.
    pub fn new(n: usize, period: Period) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidScheme(format!("need at least 2 slots, got {n}")));
        }
        let secs = period.seconds();
        if secs == 0 || !secs.is_multiple_of(n as u64) {
            return Err(Error::InvalidScheme(format!(
                "period of {secs} s does not divide into {n} equal slots"
            )));
        }
        Ok(Self { n, period })
    }

    /// Hourly slots over one day.
    pub fn hourly() -> Self {
        Self {
            n: 24,
            period: Period::Day,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn period(&self) -> Period {
        self.period
    }

    pub fn period_seconds(&self) -> u64 {
        self.period.seconds()
    }

    pub fn slot_duration(&self) -> u64 {
        self.period.seconds() / self.n as u64
    }

    /// 1-based slot of a timestamp. Slot `i` covers the half-open interval
    /// `((i-1)d, i d]` of the period, so an instant exactly on a boundary
    /// belongs to the earlier slot and the start of the period maps to slot `n`.
    pub fn slot_of(&self, timestamp: i64) -> usize {
        let period = self.period_seconds() as i64;
        let d = self.slot_duration() as i64;
        let m = timestamp.rem_euclid(period);
        if m == 0 {
            self.n
        } else {
            ((m + d - 1) / d) as usize
        }
    }
}

/// One message of one user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimestampRecord {
    pub user_id: String,
    /// UTC epoch seconds.
    pub timestamp: i64,
}

impl TimestampRecord {
    pub fn new(user_id: impl Into<String>, timestamp: i64) -> Self {
        Self {
            user_id: user_id.into(),
            timestamp,
        }
    }
}

/// A user's actual profile: relative message frequencies per slot.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityProfile {
    scheme: SlotScheme,
    q: Vec<f64>,
    count: u64,
}

impl ActivityProfile {
    /// Profile from per-slot message counts.
    pub fn from_counts(scheme: SlotScheme, counts: &[u64]) -> Result<Self> {
        if counts.len() != scheme.n() {
            return Err(Error::LengthMismatch(counts.len(), scheme.n()));
        }
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::NoData);
        }
        let q = counts.iter().map(|&c| c as f64 / total as f64).collect();
        Ok(Self {
            scheme,
            q,
            count: total,
        })
    }

    /// Profile from an explicit PMF. `count` records how many messages the
    /// estimate rests on (0 when unknown).
    pub fn from_pmf(scheme: SlotScheme, q: Vec<f64>, count: u64) -> Result<Self> {
        if q.len() != scheme.n() {
            return Err(Error::LengthMismatch(q.len(), scheme.n()));
        }
        check_pmf(&q)?;
        Ok(Self { scheme, q, count })
    }

    /// Uniform profile over `scheme`.
    pub fn uniform(scheme: SlotScheme) -> Self {
        Self {
            scheme,
            q: vec![1.0 / scheme.n() as f64; scheme.n()],
            count: 0,
        }
    }

    pub fn scheme(&self) -> &SlotScheme {
        &self.scheme
    }

    pub fn n(&self) -> usize {
        self.scheme.n()
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn count(&self) -> u64 {
        self.count
    }
}

/// On-disk JSON form of a profile: `{n, period_seconds, q, count}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProfileFile {
    n: usize,
    period_seconds: u64,
    q: Vec<f64>,
    count: u64,
}

impl Serialize for ActivityProfile {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        ProfileFile {
            n: self.n(),
            period_seconds: self.scheme.period_seconds(),
            q: self.q.clone(),
            count: self.count,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ActivityProfile {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let file = ProfileFile::deserialize(deserializer)?;
        let scheme = SlotScheme::new(file.n, Period::from_seconds(file.period_seconds))
            .map_err(serde::de::Error::custom)?;
        ActivityProfile::from_pmf(scheme, file.q, file.count).map_err(serde::de::Error::custom)
    }
}

/// Histogram of relative frequencies of one user's messages across slots.
pub fn build_profile(records: &[TimestampRecord], scheme: SlotScheme) -> Result<ActivityProfile> {
    let first = records.first().ok_or(Error::NoData)?;
    let mut counts = vec![0u64; scheme.n()];
    for rec in records {
        if rec.user_id != first.user_id {
            return Err(Error::HeterogeneousInput {
                expected: first.user_id.clone(),
                found: rec.user_id.clone(),
            });
        }
        if rec.timestamp < 0 {
            return Err(Error::InvalidTimestamp(rec.timestamp));
        }
        counts[scheme.slot_of(rec.timestamp) - 1] += 1;
    }
    ActivityProfile::from_counts(scheme, &counts)
}
