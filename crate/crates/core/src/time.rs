//! Minute-resolution UTC timestamps.
//!
//! All panel timestamps are whole minutes since the Unix epoch. Input may
//! carry seconds; they are truncated at parse time. The wire format is
//! `YYYY-MM-DDTHH:MMZ`.

use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

pub const MINUTES_PER_DAY: i64 = 24 * 60;

/// A minute-aligned UTC timestamp (minutes since the Unix epoch).
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
pub struct Minute(pub i64);

impl Minute {
    /// Calendar day index (days since epoch), shifted by `tz_offset_minutes`.
    pub fn day(self, tz_offset_minutes: i64) -> i64 {
        (self.0 + tz_offset_minutes).div_euclid(MINUTES_PER_DAY)
    }

    /// Hour of day in 0..24, shifted by `tz_offset_minutes`.
    pub fn hour_of_day(self, tz_offset_minutes: i64) -> u8 {
        ((self.0 + tz_offset_minutes).div_euclid(60).rem_euclid(24)) as u8
    }

    /// Parse `YYYY-MM-DDTHH:MMZ`; a trailing `:SS` is accepted and truncated.
    pub fn parse(s: &str) -> Option<Minute> {
        let b = s.as_bytes();
        if b.len() < 17 || b[4] != b'-' || b[7] != b'-' || b[10] != b'T' || b[13] != b':' {
            return None;
        }
        let tail = &b[16..];
        match tail {
            [b'Z'] => {}
            [b':', s1, s2, b'Z'] if s1.is_ascii_digit() && s2.is_ascii_digit() => {}
            _ => return None,
        }
        let num = |r: std::ops::Range<usize>| -> Option<i64> {
            let mut v: i64 = 0;
            for &c in &b[r] {
                if !c.is_ascii_digit() {
                    return None;
                }
                v = v * 10 + (c - b'0') as i64;
            }
            Some(v)
        };
        let year = num(0..4)?;
        let month = num(5..7)?;
        let day = num(8..10)?;
        let hour = num(11..13)?;
        let min = num(14..16)?;
        if !(1..=12).contains(&month) || !(1..=31).contains(&day) || hour > 23 || min > 59 {
            return None;
        }
        let days = days_from_civil(year, month as u32, day as u32);
        Some(Minute(days * MINUTES_PER_DAY + hour * 60 + min))
    }
}

impl fmt::Display for Minute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let days = self.0.div_euclid(MINUTES_PER_DAY);
        let rem = self.0.rem_euclid(MINUTES_PER_DAY);
        let (y, m, d) = civil_from_days(days);
        write!(
            f,
            "{:04}-{:02}-{:02}T{:02}:{:02}Z",
            y,
            m,
            d,
            rem / 60,
            rem % 60
        )
    }
}

impl Add<i64> for Minute {
    type Output = Minute;
    fn add(self, rhs: i64) -> Minute {
        Minute(self.0 + rhs)
    }
}

impl Sub<i64> for Minute {
    type Output = Minute;
    fn sub(self, rhs: i64) -> Minute {
        Minute(self.0 - rhs)
    }
}

impl Sub<Minute> for Minute {
    type Output = i64;
    fn sub(self, rhs: Minute) -> i64 {
        self.0 - rhs.0
    }
}

// Days since 1970-01-01 for a proleptic Gregorian date.
fn days_from_civil(y: i64, m: u32, d: u32) -> i64 {
    let y = if m <= 2 { y - 1 } else { y };
    let era = if y >= 0 { y } else { y - 399 } / 400;
    let yoe = y - era * 400;
    let mp = (m as i64 + 9) % 12;
    let doy = (153 * mp + 2) / 5 + d as i64 - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146097 + doe - 719468
}

fn civil_from_days(z: i64) -> (i64, u32, u32) {
    let z = z + 719468;
    let era = if z >= 0 { z } else { z - 146096 } / 146097;
    let doe = z - era * 146097;
    let yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    let y = yoe + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    (if m <= 2 { y + 1 } else { y }, m, d)
}
