//! Minute-precision timestamps.
//!
//! Dialogue frames in the training corpora use several spellings
//! (`2023/05/25 (Thu) 17:08`, `2022-05-12 08:30:00`, `2024-01-01`); they are
//! all normalized to one canonical form, `YYYY-MM-DD HH:MM`.

use std::fmt;
use std::str::FromStr;

use chrono::{NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

const CANONICAL: &str = "%Y-%m-%d %H:%M";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unrecognized timestamp {0:?}")]
pub struct TimestampError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(NaiveDateTime);

impl Timestamp {
    pub fn from_datetime(dt: NaiveDateTime) -> Self {
        // with_second/with_nanosecond(0) cannot fail
        Timestamp(dt.with_second(0).unwrap().with_nanosecond(0).unwrap())
    }

    pub fn ymd_hm(year: i32, month: u32, day: u32, hour: u32, minute: u32) -> Option<Self> {
        NaiveDate::from_ymd_opt(year, month, day)
            .and_then(|d| d.and_hms_opt(hour, minute, 0))
            .map(Timestamp)
    }

    pub fn datetime(&self) -> NaiveDateTime {
        self.0
    }

    pub fn canonical(&self) -> String {
        self.0.format(CANONICAL).to_string()
    }

    /// `2024-01-01`
    pub fn date_string(&self) -> String {
        self.0.format("%Y-%m-%d").to_string()
    }

    /// `2023/05/25 (Thu) 17:08`
    pub fn dialogue_string(&self) -> String {
        self.0.format("%Y/%m/%d (%a) %H:%M").to_string()
    }

    /// `2022-05-12 08:30:00`
    pub fn seconds_string(&self) -> String {
        self.0.format("%Y-%m-%d %H:%M:%S").to_string()
    }

    pub fn parse(input: &str) -> Result<Self, TimestampError> {
        let trimmed = input.trim();
        let err = || TimestampError(input.to_string());
        if trimmed.is_empty() || trimmed.len() > 64 {
            return Err(err());
        }
        // drop a parenthesized weekday such as "(Thu)"
        let mut cleaned = String::with_capacity(trimmed.len());
        let mut depth = 0usize;
        for ch in trimmed.chars() {
            match ch {
                '(' => depth += 1,
                ')' if depth > 0 => depth -= 1,
                _ if depth == 0 => cleaned.push(ch),
                _ => {}
            }
        }
        if depth != 0 {
            return Err(err());
        }
        let cleaned = cleaned
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ")
            .replace('/', "-")
            .replace('T', " ");

        for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M"] {
            if let Ok(dt) = NaiveDateTime::parse_from_str(&cleaned, fmt) {
                return Ok(Timestamp::from_datetime(dt));
            }
        }
        if let Ok(d) = NaiveDate::parse_from_str(&cleaned, "%Y-%m-%d") {
            return Ok(Timestamp(d.and_hms_opt(0, 0, 0).unwrap()));
        }
        Err(err())
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.format(CANONICAL))
    }
}

impl FromStr for Timestamp {
    type Err = TimestampError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Timestamp::parse(s)
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.canonical())
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        Timestamp::parse(&raw).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_corpus_spellings() {
        let expect = Timestamp::ymd_hm(2023, 5, 25, 17, 8).unwrap();
        for raw in [
            "2023/05/25 (Thu) 17:08",
            "2023-05-25 17:08",
            "2023-05-25T17:08",
            "2023-05-25 17:08:59",
            " 2023/05/25 17:08 ",
        ] {
            assert_eq!(Timestamp::parse(raw).unwrap(), expect, "{raw}");
        }
        assert_eq!(
            Timestamp::parse("2024-01-01").unwrap().canonical(),
            "2024-01-01 00:00"
        );
    }

    #[test]
    fn rejects_garbage() {
        for raw in ["", "yesterday", "2023-13-01 00:00", "2023-05-25 (Thu", "2023-05-25 25:00"] {
            assert!(Timestamp::parse(raw).is_err(), "{raw}");
        }
    }

    #[test]
    fn renders_frame_variants() {
        let ts = Timestamp::ymd_hm(2023, 5, 25, 17, 8).unwrap();
        assert_eq!(ts.dialogue_string(), "2023/05/25 (Thu) 17:08");
        assert_eq!(ts.seconds_string(), "2023-05-25 17:08:00");
        assert_eq!(ts.date_string(), "2023-05-25");
        assert_eq!(ts.to_string(), "2023-05-25 17:08");
    }
}
