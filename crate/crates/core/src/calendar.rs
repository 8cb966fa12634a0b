//! Local civil-day arithmetic over UTC epoch seconds and a fixed offset.

use chrono::{Days, NaiveDate, Weekday};

pub const SECONDS_PER_DAY: i64 = 86_400;

/// Days since 1970-01-01 in local time.
pub type DayNumber = i64;

#[inline]
pub fn local_day(ts: i64, tz_offset_minutes: i32) -> DayNumber {
    (ts + i64::from(tz_offset_minutes) * 60).div_euclid(SECONDS_PER_DAY)
}

/// UTC instant at which local day `day` begins.
#[inline]
pub fn day_start(day: DayNumber, tz_offset_minutes: i32) -> i64 {
    day * SECONDS_PER_DAY - i64::from(tz_offset_minutes) * 60
}

pub fn weekday(day: DayNumber) -> Weekday {
    // 1970-01-01 was a Thursday.
    match (day + 3).rem_euclid(7) {
        0 => Weekday::Mon,
        1 => Weekday::Tue,
        2 => Weekday::Wed,
        3 => Weekday::Thu,
        4 => Weekday::Fri,
        5 => Weekday::Sat,
        _ => Weekday::Sun,
    }
}

pub fn is_weekday(day: DayNumber) -> bool {
    !matches!(weekday(day), Weekday::Sat | Weekday::Sun)
}

pub fn to_date(day: DayNumber) -> NaiveDate {
    let epoch = NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid epoch");
    if day >= 0 {
        epoch + Days::new(day as u64)
    } else {
        epoch - Days::new(day.unsigned_abs())
    }
}

pub fn from_date(date: NaiveDate) -> DayNumber {
    let epoch = NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid epoch");
    (date - epoch).num_days()
}

/// Seconds of `[start, end)` falling inside the local window
/// `[from_s, to_s)` (seconds after midnight) of local day `day`.
pub fn window_overlap(
    start: i64,
    end: i64,
    day: DayNumber,
    from_s: i64,
    to_s: i64,
    tz_offset_minutes: i32,
) -> i64 {
    let base = day_start(day, tz_offset_minutes);
    let lo = start.max(base + from_s);
    let hi = end.min(base + to_s);
    (hi - lo).max(0)
}

/// Local days touched by `[start, end)`, with the number of seconds in each.
pub fn split_by_day(start: i64, end: i64, tz_offset_minutes: i32) -> Vec<(DayNumber, i64)> {
    let mut out = Vec::new();
    if end <= start {
        return out;
    }
    let mut day = local_day(start, tz_offset_minutes);
    let mut cursor = start;
    while cursor < end {
        let next = day_start(day + 1, tz_offset_minutes).min(end);
        out.push((day, next - cursor));
        cursor = next;
        day += 1;
    }
    out
}
