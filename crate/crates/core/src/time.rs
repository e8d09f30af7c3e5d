//! Millisecond-resolution UTC instants.
//!
//! Every clock reading inside the engine is a [`Timestamp`]; nothing reads the
//! wall clock directly, which keeps replays deterministic.

use std::fmt;
use std::ops::{Add, Sub};
use std::str::FromStr;

use chrono::{DateTime, Datelike, FixedOffset, NaiveTime, SecondsFormat, TimeZone, Utc, Weekday};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const MILLIS_PER_SECOND: i64 = 1_000;
pub const MILLIS_PER_MINUTE: i64 = 60 * MILLIS_PER_SECOND;
pub const MILLIS_PER_HOUR: i64 = 60 * MILLIS_PER_MINUTE;
pub const MILLIS_PER_DAY: i64 = 24 * MILLIS_PER_HOUR;

/// A UTC instant, stored as milliseconds since the Unix epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp(i64);

impl Timestamp {
    pub const fn from_millis(millis: i64) -> Self {
        Self(millis)
    }

    pub const fn as_millis(self) -> i64 {
        self.0
    }

    pub fn from_seconds(seconds: i64) -> Self {
        Self(seconds * MILLIS_PER_SECOND)
    }

    /// Current wall-clock time, truncated to milliseconds. Only the service
    /// shell calls this; the engine takes time as an input.
    pub fn now() -> Self {
        Self(Utc::now().timestamp_millis())
    }

    pub fn to_datetime(self) -> DateTime<Utc> {
        Utc.timestamp_millis_opt(self.0).single().expect("timestamp within chrono range")
    }

    pub fn from_datetime<Tz: TimeZone>(dt: &DateTime<Tz>) -> Self {
        Self(dt.timestamp_millis())
    }

    /// RFC 3339 with exactly three fractional digits and a `Z` suffix.
    pub fn to_rfc3339(self) -> String {
        self.to_datetime().to_rfc3339_opts(SecondsFormat::Millis, true)
    }

    pub fn parse_rfc3339(s: &str) -> Result<Self, chrono::ParseError> {
        DateTime::parse_from_rfc3339(s).map(|dt| Self::from_datetime(&dt))
    }

    /// Seconds elapsed from `earlier` to `self` (negative if `earlier` is later).
    pub fn seconds_since(self, earlier: Timestamp) -> f64 {
        (self.0 - earlier.0) as f64 / MILLIS_PER_SECOND as f64
    }

    pub fn plus_millis(self, millis: i64) -> Self {
        Self(self.0 + millis)
    }

    pub fn plus_seconds(self, seconds: f64) -> Self {
        Self(self.0 + (seconds * MILLIS_PER_SECOND as f64).round() as i64)
    }
}

impl Add<Span> for Timestamp {
    type Output = Timestamp;
    fn add(self, rhs: Span) -> Timestamp {
        Timestamp(self.0 + rhs.0)
    }
}

impl Sub<Span> for Timestamp {
    type Output = Timestamp;
    fn sub(self, rhs: Span) -> Timestamp {
        Timestamp(self.0 - rhs.0)
    }
}

impl Sub for Timestamp {
    type Output = Span;
    fn sub(self, rhs: Timestamp) -> Span {
        Span(self.0 - rhs.0)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_rfc3339())
    }
}

impl FromStr for Timestamp {
    type Err = chrono::ParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse_rfc3339(s)
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_rfc3339())
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Self::parse_rfc3339(&s).map_err(serde::de::Error::custom)
    }
}

/// A signed duration in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Span(i64);

impl Span {
    pub const fn from_millis(millis: i64) -> Self {
        Self(millis)
    }

    pub const fn from_secs(seconds: i64) -> Self {
        Self(seconds * MILLIS_PER_SECOND)
    }

    pub const fn from_minutes(minutes: i64) -> Self {
        Self(minutes * MILLIS_PER_MINUTE)
    }

    pub const fn from_hours(hours: i64) -> Self {
        Self(hours * MILLIS_PER_HOUR)
    }

    pub const fn from_days(days: i64) -> Self {
        Self(days * MILLIS_PER_DAY)
    }

    pub fn from_secs_f64(seconds: f64) -> Self {
        Self((seconds * MILLIS_PER_SECOND as f64).round() as i64)
    }

    pub const fn as_millis(self) -> i64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / MILLIS_PER_SECOND as f64
    }
}

/// A patient's local time zone, as a fixed offset from UTC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct LocalZone {
    pub utc_offset_minutes: i32,
}

impl LocalZone {
    pub const UTC: LocalZone = LocalZone { utc_offset_minutes: 0 };

    fn offset(self) -> FixedOffset {
        FixedOffset::east_opt(self.utc_offset_minutes * 60).expect("offset validated at load")
    }

    pub fn is_valid(self) -> bool {
        self.utc_offset_minutes.abs() < 24 * 60
    }

    /// Latest instant `<= at` whose local wall-clock time equals `time_of_day`.
    pub fn last_daily_instant(self, at: Timestamp, time_of_day: NaiveTime) -> Timestamp {
        let local = at.to_datetime().with_timezone(&self.offset());
        let mut date = local.date_naive();
        loop {
            let candidate = self.at_local(date.and_time(time_of_day));
            if candidate <= at {
                return candidate;
            }
            date = date.pred_opt().expect("date in range");
        }
    }

    /// Latest instant `<= at` falling on `weekday` at `time_of_day` local time.
    pub fn last_weekly_instant(self, at: Timestamp, weekday: Weekday, time_of_day: NaiveTime) -> Timestamp {
        let local = at.to_datetime().with_timezone(&self.offset());
        let mut date = local.date_naive();
        loop {
            if date.weekday() == weekday {
                let candidate = self.at_local(date.and_time(time_of_day));
                if candidate <= at {
                    return candidate;
                }
            }
            date = date.pred_opt().expect("date in range");
        }
    }

    /// Local Monday 00:00 at or before `at`.
    pub fn week_start(self, at: Timestamp) -> Timestamp {
        self.last_weekly_instant(at, Weekday::Mon, NaiveTime::MIN)
    }

    fn at_local(self, naive: chrono::NaiveDateTime) -> Timestamp {
        // Fixed offsets have no gaps or folds.
        let dt = self.offset().from_local_datetime(&naive).single().expect("fixed offset is unambiguous");
        Timestamp::from_datetime(&dt)
    }
}
