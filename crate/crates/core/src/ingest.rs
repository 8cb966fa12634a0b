//! Raw fix parsing, per-user grouping and the user-selection criterion.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::calendar::{self, DayNumber, SECONDS_PER_DAY};
use crate::error::{Error, Result};
use crate::geo::GeoPoint;

/// One recorded location interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "FixRecord", try_from = "FixRecord")]
pub struct GpsFix {
    pub user_id: String,
    pub point: GeoPoint,
    pub start: i64,
    pub end: i64,
}

impl GpsFix {
    pub fn new(user_id: impl Into<String>, point: GeoPoint, start: i64, end: i64) -> Result<Self> {
        if start > end {
            return Err(Error::InvalidInput(format!("fix start {start} after end {end}")));
        }
        Ok(GpsFix {
            user_id: user_id.into(),
            point,
            start,
            end,
        })
    }

    pub fn duration(&self) -> i64 {
        self.end - self.start
    }
}

/// Flat on-disk shape shared by the CSV and JSONL formats.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct FixRecord {
    user_id: String,
    lat: f64,
    lon: f64,
    start_epoch_s: i64,
    end_epoch_s: i64,
}

impl From<GpsFix> for FixRecord {
    fn from(f: GpsFix) -> Self {
        FixRecord {
            user_id: f.user_id,
            lat: f.point.lat(),
            lon: f.point.lon(),
            start_epoch_s: f.start,
            end_epoch_s: f.end,
        }
    }
}

impl TryFrom<FixRecord> for GpsFix {
    type Error = Error;

    fn try_from(r: FixRecord) -> Result<Self> {
        if r.user_id.is_empty() {
            return Err(Error::InvalidInput("empty user_id".into()));
        }
        GpsFix::new(r.user_id, GeoPoint::new(r.lat, r.lon)?, r.start_epoch_s, r.end_epoch_s)
    }
}

const CSV_COLUMNS: [&str; 5] = ["user_id", "lat", "lon", "start_epoch_s", "end_epoch_s"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FixFormat {
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RecordError {
    /// 1-based line in the source, header included.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedFixes {
    /// Sorted by (user_id, start, end).
    pub fixes: Vec<GpsFix>,
    pub errors: Vec<RecordError>,
}

/// Parses a fix stream. Malformed rows are collected rather than failing
/// the whole input, unless they are the majority.
pub fn parse_fixes<R: Read>(input: R, format: FixFormat) -> Result<ParsedFixes> {
    let (mut fixes, errors) = match format {
        FixFormat::Csv => parse_csv(input)?,
        FixFormat::Jsonl => parse_jsonl(input)?,
    };
    let total = fixes.len() + errors.len();
    if errors.len() * 2 > total {
        return Err(Error::CorruptInput {
            malformed: errors.len(),
            total,
        });
    }
    fixes.sort_by(|a, b| {
        a.user_id
            .cmp(&b.user_id)
            .then(a.start.cmp(&b.start))
            .then(a.end.cmp(&b.end))
    });
    Ok(ParsedFixes { fixes, errors })
}

fn parse_csv<R: Read>(input: R) -> Result<(Vec<GpsFix>, Vec<RecordError>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = reader.headers()?.clone();
    if headers.is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    let mut index = [0usize; 5];
    for (slot, name) in index.iter_mut().zip(CSV_COLUMNS) {
        *slot = headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::InvalidInput(format!("CSV header lacks required column `{name}`"))
        })?;
    }
    let mut fixes = Vec::new();
    let mut errors = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) if e.is_io_error() => return Err(e.into()),
            Err(e) => {
                errors.push(RecordError { line, reason: e.to_string() });
                continue;
            }
        };
        match csv_row_to_fix(&row, &index) {
            Ok(fix) => fixes.push(fix),
            Err(reason) => errors.push(RecordError { line, reason }),
        }
    }
    Ok((fixes, errors))
}

fn csv_row_to_fix(row: &csv::StringRecord, index: &[usize; 5]) -> std::result::Result<GpsFix, String> {
    let field = |i: usize| row.get(index[i]).ok_or_else(|| format!("missing column `{}`", CSV_COLUMNS[i]));
    let float = |i: usize| -> std::result::Result<f64, String> {
        field(i)?
            .parse::<f64>()
            .map_err(|_| format!("unparseable {}", CSV_COLUMNS[i]))
    };
    let int = |i: usize| -> std::result::Result<i64, String> {
        field(i)?
            .parse::<i64>()
            .map_err(|_| format!("unparseable {}", CSV_COLUMNS[i]))
    };
    let record = FixRecord {
        user_id: field(0)?.to_string(),
        lat: float(1)?,
        lon: float(2)?,
        start_epoch_s: int(3)?,
        end_epoch_s: int(4)?,
    };
    GpsFix::try_from(record).map_err(|e| e.to_string())
}

fn parse_jsonl<R: Read>(mut input: R) -> Result<(Vec<GpsFix>, Vec<RecordError>)> {
    let mut text = String::new();
    input.read_to_string(&mut text)?;
    let mut fixes = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<FixRecord>(line)
            .map_err(|e| e.to_string())
            .and_then(|r| GpsFix::try_from(r).map_err(|e| e.to_string()));
        match parsed {
            Ok(f) => fixes.push(f),
            Err(reason) => errors.push(RecordError { line: i + 1, reason }),
        }
    }
    Ok((fixes, errors))
}

pub fn write_fixes<W: Write>(out: W, fixes: &[GpsFix], format: FixFormat) -> Result<()> {
    match format {
        FixFormat::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
            w.write_record(CSV_COLUMNS)?;
            for f in fixes {
                w.serialize(FixRecord::from(f.clone()))?;
            }
            w.flush()?;
        }
        FixFormat::Jsonl => {
            let mut out = out;
            for f in fixes {
                serde_json::to_writer(&mut out, &FixRecord::from(f.clone()))?;
                out.write_all(b"\n")?;
            }
        }
    }
    Ok(())
}

/// All fixes of one user, time-sorted and cleaned of overlaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserDataset {
    pub user_id: String,
    pub tz_offset_minutes: i32,
    pub fixes: Vec<GpsFix>,
}

impl UserDataset {
    /// Sorts the fixes and trims any fix that overlaps its successor by
    /// more than `overlap_tolerance_s`.
    pub fn new(
        user_id: impl Into<String>,
        mut fixes: Vec<GpsFix>,
        tz_offset_minutes: i32,
        overlap_tolerance_s: i64,
    ) -> Self {
        fixes.sort_by(|a, b| a.start.cmp(&b.start).then(a.end.cmp(&b.end)));
        for i in 1..fixes.len() {
            let next_start = fixes[i].start;
            let prev = &mut fixes[i - 1];
            if prev.end - next_start > overlap_tolerance_s {
                prev.end = next_start.max(prev.start);
            }
        }
        UserDataset {
            user_id: user_id.into(),
            tz_offset_minutes,
            fixes,
        }
    }
}

/// Splits a parsed fix list into per-user datasets, ordered by user id.
pub fn group_by_user(
    fixes: Vec<GpsFix>,
    tz_offset_minutes: i32,
    overlap_tolerance_s: i64,
) -> Vec<UserDataset> {
    let mut by_user: BTreeMap<String, Vec<GpsFix>> = BTreeMap::new();
    for f in fixes {
        by_user.entry(f.user_id.clone()).or_default().push(f);
    }
    by_user
        .into_iter()
        .map(|(uid, fixes)| UserDataset::new(uid, fixes, tz_offset_minutes, overlap_tolerance_s))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidityConfig {
    pub min_valid_days: u32,
    pub min_coverage: f64,
    /// Recorded hours a local day needs to count as valid.
    pub valid_day_hours: f64,
}

impl Default for ValidityConfig {
    fn default() -> Self {
        ValidityConfig {
            min_valid_days: 30,
            min_coverage: 0.5,
            valid_day_hours: 8.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub recording_days: u32,
    pub valid_days: u32,
    pub coverage_ratio: f64,
    pub accepted: bool,
}

impl ValidityReport {
    fn rejected_empty() -> Self {
        ValidityReport {
            recording_days: 0,
            valid_days: 0,
            coverage_ratio: 0.0,
            accepted: false,
        }
    }
}

/// Seconds of recorded coverage per local day, from the union of fix intervals.
pub fn daily_coverage(ds: &UserDataset) -> BTreeMap<DayNumber, i64> {
    let mut intervals: Vec<(i64, i64)> = ds
        .fixes
        .iter()
        .filter(|f| f.end > f.start)
        .map(|f| (f.start, f.end))
        .collect();
    intervals.sort_unstable();
    let mut merged: Vec<(i64, i64)> = Vec::with_capacity(intervals.len());
    for (s, e) in intervals {
        match merged.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => merged.push((s, e)),
        }
    }
    let mut per_day = BTreeMap::new();
    for (s, e) in merged {
        for (day, secs) in calendar::split_by_day(s, e, ds.tz_offset_minutes) {
            *per_day.entry(day).or_insert(0) += secs;
        }
    }
    per_day
}

/// Applies the "enough valid days covering enough of the recording span"
/// selection rule. Both thresholds are inclusive.
pub fn validity_filter(ds: &UserDataset, cfg: &ValidityConfig) -> ValidityReport {
    let Some(first) = ds.fixes.iter().map(|f| f.start).min() else {
        return ValidityReport::rejected_empty();
    };
    let last = ds
        .fixes
        .iter()
        .map(|f| if f.end > f.start { f.end - 1 } else { f.start })
        .max()
        .unwrap_or(first);
    let tz = ds.tz_offset_minutes;
    let recording_days = (calendar::local_day(last, tz) - calendar::local_day(first, tz) + 1) as u32;
    let need = (cfg.valid_day_hours * 3600.0).ceil() as i64;
    let valid_days = daily_coverage(ds)
        .values()
        .filter(|&&secs| secs >= need.min(SECONDS_PER_DAY))
        .count() as u32;
    let coverage_ratio = f64::from(valid_days) / f64::from(recording_days);
    ValidityReport {
        recording_days,
        valid_days,
        coverage_ratio,
        accepted: valid_days >= cfg.min_valid_days && coverage_ratio >= cfg.min_coverage,
    }
}

/// Per-user counts of parsed fixes, handy for logging.
pub fn fixes_per_user(fixes: &[GpsFix]) -> HashMap<&str, usize> {
    let mut counts = HashMap::new();
    for f in fixes {
        *counts.entry(f.user_id.as_str()).or_insert(0) += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calendar::day_start;

    fn p() -> GeoPoint {
        GeoPoint::new(1.3521, 103.8198).unwrap()
    }

    #[test]
    fn csv_row_becomes_fix() {
        let csv = "user_id,lat,lon,start_epoch_s,end_epoch_s\nu1,1.3521,103.8198,1609459200,1609459500\n";
        let parsed = parse_fixes(csv.as_bytes(), FixFormat::Csv).unwrap();
        assert!(parsed.errors.is_empty());
        assert_eq!(
            parsed.fixes,
            vec![GpsFix::new("u1", p(), 1_609_459_200, 1_609_459_500).unwrap()]
        );
    }

    #[test]
    fn out_of_range_latitude_is_collected() {
        let csv = "user_id,lat,lon,start_epoch_s,end_epoch_s\n\
                   u1,95,103.8,0,10\nu1,1.3,103.8,0,10\nu1,1.3,103.8,20,30\n";
        let parsed = parse_fixes(csv.as_bytes(), FixFormat::Csv).unwrap();
        assert_eq!(parsed.fixes.len(), 2);
        assert_eq!(parsed.errors.len(), 1);
        assert_eq!(parsed.errors[0].line, 2);
        assert!(parsed.errors[0].reason.contains("latitude"));
    }

    #[test]
    fn empty_file_is_empty() {
        let parsed = parse_fixes(&b""[..], FixFormat::Csv).unwrap();
        assert_eq!(parsed, ParsedFixes::default());
        let parsed = parse_fixes(&b""[..], FixFormat::Jsonl).unwrap();
        assert_eq!(parsed, ParsedFixes::default());
    }

    #[test]
    fn majority_malformed_is_corrupt() {
        let csv = "user_id,lat,lon,start_epoch_s,end_epoch_s\nu1,x,1,0,1\nu1,1,1,5,1\nu1,1,1,0,1\n";
        assert!(matches!(
            parse_fixes(csv.as_bytes(), FixFormat::Csv),
            Err(Error::CorruptInput { malformed: 2, total: 3 })
        ));
    }

    #[test]
    fn missing_header_column_is_an_error() {
        let csv = "user,lat,lon,start_epoch_s,end_epoch_s\nu1,1,1,0,1\n";
        assert!(parse_fixes(csv.as_bytes(), FixFormat::Csv).is_err());
    }

    #[test]
    fn jsonl_parses_and_sorts() {
        let text = "{\"user_id\":\"b\",\"lat\":1,\"lon\":2,\"start_epoch_s\":5,\"end_epoch_s\":6}\n\
                    \n{\"user_id\":\"a\",\"lat\":1,\"lon\":2,\"start_epoch_s\":9,\"end_epoch_s\":9}\n\
                    {\"user_id\":\"a\",\"lat\":1,\"lon\":2,\"start_epoch_s\":1,\"end_epoch_s\":3}\n";
        let parsed = parse_fixes(text.as_bytes(), FixFormat::Jsonl).unwrap();
        let keys: Vec<_> = parsed.fixes.iter().map(|f| (f.user_id.as_str(), f.start)).collect();
        assert_eq!(keys, vec![("a", 1), ("a", 9), ("b", 5)]);
    }

    #[test]
    fn overlaps_are_trimmed() {
        let fixes = vec![
            GpsFix::new("u", p(), 0, 100).unwrap(),
            GpsFix::new("u", p(), 50, 150).unwrap(),
        ];
        let ds = UserDataset::new("u", fixes.clone(), 0, 0);
        assert_eq!(ds.fixes[0].end, 50);
        let tolerant = UserDataset::new("u", fixes, 0, 60);
        assert_eq!(tolerant.fixes[0].end, 100);
    }

    /// Dataset with `hours` of coverage at the start of each listed local day.
    fn dataset(days: &[i64], hours: i64, tz: i32) -> UserDataset {
        let fixes = days
            .iter()
            .map(|&d| {
                let s = day_start(d, tz);
                GpsFix::new("u", p(), s, s + hours * 3600).unwrap()
            })
            .collect();
        UserDataset::new("u", fixes, tz, 0)
    }

    #[test]
    fn validity_thresholds() {
        let cfg = ValidityConfig::default();

        // 40 recording days, 32 valid
        let mut days: Vec<i64> = (0..32).collect();
        days.push(39);
        let mut ds = dataset(&days, 9, 480);
        ds.fixes.last_mut().unwrap().end = ds.fixes.last().unwrap().start + 3600;
        let r = validity_filter(&ds, &cfg);
        assert_eq!((r.recording_days, r.valid_days), (40, 32));
        assert!((r.coverage_ratio - 0.8).abs() < 1e-12);
        assert!(r.accepted);

        // 20 of 20 valid falls short of the day floor
        let r = validity_filter(&dataset(&(0..20).collect::<Vec<_>>(), 9, 480), &cfg);
        assert_eq!((r.recording_days, r.valid_days), (20, 20));
        assert!(!r.accepted);

        // exactly 30 valid days over 60 recording days
        let mut days: Vec<i64> = (0..30).collect();
        days.push(59);
        let mut ds = dataset(&days, 9, 480);
        ds.fixes.last_mut().unwrap().end = ds.fixes.last().unwrap().start + 60;
        let r = validity_filter(&ds, &cfg);
        assert_eq!((r.recording_days, r.valid_days), (60, 30));
        assert_eq!(r.coverage_ratio, 0.5);
        assert!(r.accepted);
    }

    #[test]
    fn short_days_are_not_valid() {
        let r = validity_filter(&dataset(&(0..40).collect::<Vec<_>>(), 7, 480), &ValidityConfig::default());
        assert_eq!(r.valid_days, 0);
        assert!(!r.accepted);
    }

    #[test]
    fn empty_dataset_rejected() {
        let ds = UserDataset::new("u", vec![], 480, 0);
        assert_eq!(
            validity_filter(&ds, &ValidityConfig::default()),
            ValidityReport::rejected_empty()
        );
    }
}
