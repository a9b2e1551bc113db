//! Reading timestamp logs into per-user activity profiles.
//!
//! Both formats carry two fields, `user_id` and `timestamp_utc`:
//!
//! ```text
//! user_id,timestamp_utc
//! alice,2024-03-01T13:10:00Z
//! alice,1709298600
//! ```
//!
//! ```text
//! {"user_id": "alice", "timestamp_utc": "2024-03-01T13:10:00Z"}
//! {"user_id": "alice", "timestamp_utc": 1709298600}
//! ```
//!
//! Timestamps are epoch seconds or ISO-8601 date-times; the kind is detected
//! per value. Date-times without an offset are read as UTC.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profile::{build_profile, ActivityProfile, SlotScheme, TimestampRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Csv,
    Jsonl,
}

impl FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(InputFormat::Csv),
            "jsonl" => Ok(InputFormat::Jsonl),
            other => Err(Error::InvalidParameter(format!("unknown input format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    /// Users with fewer messages are dropped.
    pub min_messages: u64,
    /// Added to every timestamp before binning (local time = UTC + offset).
    pub tz_offset_seconds: i64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            min_messages: 1,
            tz_offset_seconds: 0,
        }
    }
}

/// A profiled user.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserProfile {
    pub user_id: String,
    pub profile: ActivityProfile,
    /// Length of the observation window in cycles (at least 1).
    pub periods_observed: f64,
}

impl UserProfile {
    /// Mean messages per cycle.
    pub fn messages_per_period(&self) -> f64 {
        self.profile.count() as f64 / self.periods_observed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowError {
    /// 1-based line number in the input file.
    pub line: usize,
    pub message: String,
}

/// A user id and message count below the minimum.
pub type Excluded = (String, u64);

#[derive(Debug, Clone)]
pub struct IngestReport {
    /// Sorted by user id.
    pub users: Vec<UserProfile>,
    pub row_errors: Vec<RowError>,
    /// Users dropped for having too few messages, with their counts.
    pub excluded: Vec<Excluded>,
}

/// Parses epoch seconds (integer or decimal, floored) or an ISO-8601
/// date-time.
pub fn parse_timestamp(raw: &str) -> std::result::Result<i64, String> {
    let raw = raw.trim();
    if let Ok(secs) = raw.parse::<i64>() {
        return Ok(secs);
    }
    if let Ok(secs) = raw.parse::<f64>() {
        if secs.is_finite() {
            return Ok(secs.floor() as i64);
        }
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Ok(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Ok(dt.and_utc().timestamp());
        }
    }
    Err(format!("unrecognized timestamp {raw:?}"))
}

fn checked_record(user: &str, raw_ts: &str) -> std::result::Result<TimestampRecord, String> {
    let user = user.trim();
    if user.is_empty() {
        return Err("empty user_id".into());
    }
    let ts = parse_timestamp(raw_ts)?;
    if ts < 0 {
        return Err(format!("negative timestamp {ts}"));
    }
    Ok(TimestampRecord::new(user, ts))
}

fn read_csv<R: Read>(input: R, records: &mut Vec<TimestampRecord>, errors: &mut Vec<RowError>) -> Result<()> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers()?.clone();
    let user_col = headers.iter().position(|h| h == "user_id");
    let ts_col = headers.iter().position(|h| h == "timestamp_utc");
    let (Some(user_col), Some(ts_col)) = (user_col, ts_col) else {
        if headers.is_empty() {
            return Ok(());
        }
        return Err(Error::InvalidParameter(format!(
            "CSV header must contain user_id and timestamp_utc, found {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    };
    for row in reader.records() {
        let row = match row {
            Ok(row) => row,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line() as usize);
                errors.push(RowError {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let line = row.position().map_or(0, |p| p.line() as usize);
        let parsed = match (row.get(user_col), row.get(ts_col)) {
            (Some(u), Some(t)) => checked_record(u, t),
            _ => Err("missing field".into()),
        };
        match parsed {
            Ok(rec) => records.push(rec),
            Err(message) => errors.push(RowError { line, message }),
        }
    }
    Ok(())
}

fn read_jsonl<R: BufRead>(input: R, records: &mut Vec<TimestampRecord>, errors: &mut Vec<RowError>) -> Result<()> {
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<serde_json::Value>(&line)
            .map_err(|e| e.to_string())
            .and_then(|v| {
                let field = |key: &str| -> std::result::Result<String, String> {
                    match v.get(key) {
                        Some(serde_json::Value::String(s)) => Ok(s.clone()),
                        Some(serde_json::Value::Number(n)) => Ok(n.to_string()),
                        Some(other) => Err(format!("{key} has unsupported value {other}")),
                        None => Err(format!("missing {key}")),
                    }
                };
                checked_record(&field("user_id")?, &field("timestamp_utc")?)
            });
        match parsed {
            Ok(rec) => records.push(rec),
            Err(message) => errors.push(RowError { line: idx + 1, message }),
        }
    }
    Ok(())
}

/// Groups records by user and profiles each user with enough messages.
pub fn profiles_from_records(
    records: Vec<TimestampRecord>,
    scheme: SlotScheme,
    opts: &IngestOptions,
) -> Result<(Vec<UserProfile>, Vec<Excluded>)> {
    let mut by_user: BTreeMap<String, Vec<TimestampRecord>> = BTreeMap::new();
    for mut rec in records {
        rec.timestamp += opts.tz_offset_seconds;
        by_user.entry(rec.user_id.clone()).or_default().push(rec);
    }
    let period = scheme.period_seconds() as f64;
    let mut users = Vec::new();
    let mut excluded = Vec::new();
    for (user_id, mut recs) in by_user {
        let count = recs.len() as u64;
        if count < opts.min_messages.max(1) {
            log::warn!("excluding user {user_id}: {count} messages below minimum {}", opts.min_messages);
            excluded.push((user_id, count));
            continue;
        }
        let (lo, hi) = recs
            .iter()
            .fold((i64::MAX, i64::MIN), |(lo, hi), r| (lo.min(r.timestamp), hi.max(r.timestamp)));
        // binning is cyclic, so an offset pushing a time below zero wraps
        for r in &mut recs {
            r.timestamp = r.timestamp.rem_euclid(scheme.period_seconds() as i64);
        }
        let profile = build_profile(&recs, scheme)?;
        users.push(UserProfile {
            user_id,
            profile,
            periods_observed: ((hi - lo) as f64 / period).max(1.0),
        });
    }
    Ok((users, excluded))
}

/// Reads a log file and returns one profile per user. Malformed rows are
/// reported and skipped; an input without any usable user is an error.
pub fn ingest(path: &Path, format: InputFormat, scheme: SlotScheme, opts: &IngestOptions) -> Result<IngestReport> {
    let file = File::open(path)?;
    let mut records = Vec::new();
    let mut row_errors = Vec::new();
    match format {
        InputFormat::Csv => read_csv(file, &mut records, &mut row_errors)?,
        InputFormat::Jsonl => read_jsonl(BufReader::new(file), &mut records, &mut row_errors)?,
    }
    for e in &row_errors {
        log::warn!("{}:{}: {}", path.display(), e.line, e.message);
    }
    let (users, excluded) = profiles_from_records(records, scheme, opts)?;
    if users.is_empty() {
        return Err(Error::NoValidUsers);
    }
    Ok(IngestReport {
        users,
        row_errors,
        excluded,
    })
}
