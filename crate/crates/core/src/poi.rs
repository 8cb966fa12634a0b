//! Stay points, POIs and visits, Home/Work inference and day segmentation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::calendar::{self, DayNumber};
use crate::error::{Error, Result};
use crate::geo::{haversine_km, mean_coordinate, GeoPoint};
use crate::ingest::GpsFix;
use crate::labeling::PoiCategory;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StayPointConfig {
    /// Maximum distance of a run's fixes from its first fix.
    pub dist_m: f64,
    /// Minimum dwell of a stay point.
    pub time_min: f64,
    /// Consecutive nearby stays separated by less than this are merged.
    pub gap_min: f64,
    /// Stays within this distance of an existing POI join it.
    pub merge_m: f64,
}

impl Default for StayPointConfig {
    fn default() -> Self {
        StayPointConfig {
            dist_m: 200.0,
            time_min: 20.0,
            gap_min: 5.0,
            merge_m: 100.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StayPoint {
    pub centroid: GeoPoint,
    pub arrival: i64,
    pub departure: i64,
    /// Fixes averaged into the centroid.
    pub fix_count: usize,
}

impl StayPoint {
    pub fn dwell(&self) -> i64 {
        self.departure - self.arrival
    }
}

/// Sliding-window stay-point detection followed by a validation pass that
/// merges consecutive nearby stays separated by a short gap.
pub fn detect_stay_points(fixes: &[GpsFix], cfg: &StayPointConfig) -> Result<Vec<StayPoint>> {
    if let Some(i) = fixes.windows(2).position(|w| w[1].start < w[0].start) {
        return Err(Error::Precondition(format!(
            "fixes not sorted by start time at index {}",
            i + 1
        )));
    }
    let dist_km = cfg.dist_m / 1000.0;
    let min_dwell = (cfg.time_min * 60.0).ceil() as i64;

    let mut raw = Vec::new();
    let mut i = 0;
    while i < fixes.len() {
        let anchor = &fixes[i].point;
        let mut j = i + 1;
        while j < fixes.len() && haversine_km(anchor, &fixes[j].point) <= dist_km {
            j += 1;
        }
        let run = &fixes[i..j];
        let arrival = run[0].start;
        let departure = run[run.len() - 1].end;
        if departure > arrival && departure - arrival >= min_dwell {
            let points: Vec<GeoPoint> = run.iter().map(|f| f.point).collect();
            raw.push(StayPoint {
                centroid: mean_coordinate(&points)?,
                arrival,
                departure,
                fix_count: run.len(),
            });
            i = j;
        } else {
            i += 1;
        }
    }
    Ok(validate_stays(raw, dist_km, (cfg.gap_min * 60.0) as i64))
}

fn validate_stays(raw: Vec<StayPoint>, dist_km: f64, max_gap_s: i64) -> Vec<StayPoint> {
    let mut out: Vec<StayPoint> = Vec::with_capacity(raw.len());
    for stay in raw {
        if let Some(prev) = out.last_mut() {
            if stay.arrival - prev.departure < max_gap_s
                && haversine_km(&prev.centroid, &stay.centroid) <= dist_km
            {
                let (a, b) = (prev.fix_count as f64, stay.fix_count as f64);
                let lat = (prev.centroid.lat() * a + stay.centroid.lat() * b) / (a + b);
                let lon = (prev.centroid.lon() * a + stay.centroid.lon() * b) / (a + b);
                prev.centroid = GeoPoint::new(lat, lon).unwrap_or(prev.centroid);
                prev.departure = prev.departure.max(stay.departure);
                prev.fix_count += stay.fix_count;
                continue;
            }
        }
        out.push(stay);
    }
    out
}

pub type PoiId = u32;

/// A merged stay location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "PoiRecord", try_from = "PoiRecord")]
pub struct Poi {
    pub poi_id: PoiId,
    pub centroid: GeoPoint,
    pub subzone: Option<String>,
    pub category: Option<PoiCategory>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoiRecord {
    poi_id: PoiId,
    lat: f64,
    lon: f64,
    subzone: Option<String>,
    category: Option<PoiCategory>,
}

impl From<Poi> for PoiRecord {
    fn from(p: Poi) -> Self {
        PoiRecord {
            poi_id: p.poi_id,
            lat: p.centroid.lat(),
            lon: p.centroid.lon(),
            subzone: p.subzone,
            category: p.category,
        }
    }
}

impl TryFrom<PoiRecord> for Poi {
    type Error = Error;

    fn try_from(r: PoiRecord) -> Result<Self> {
        Ok(Poi {
            poi_id: r.poi_id,
            centroid: GeoPoint::new(r.lat, r.lon)?,
            subzone: r.subzone,
            category: r.category,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Visit {
    pub poi_id: PoiId,
    pub arrival: i64,
    pub departure: i64,
}

/// Greedy time-ordered agglomeration of stays into POIs.
pub fn merge_to_pois(stays: &[StayPoint], merge_m: f64) -> (Vec<Poi>, Vec<Visit>) {
    struct Acc {
        lat_sum: f64,
        lon_sum: f64,
        n: f64,
        centroid: GeoPoint,
    }
    let merge_km = merge_m / 1000.0;
    let mut accs: Vec<Acc> = Vec::new();
    let mut visits = Vec::with_capacity(stays.len());
    for stay in stays {
        let nearest = accs
            .iter()
            .enumerate()
            .map(|(id, a)| (id, haversine_km(&a.centroid, &stay.centroid)))
            .filter(|&(_, d)| d <= merge_km)
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let id = match nearest {
            Some((id, _)) => {
                let a = &mut accs[id];
                a.lat_sum += stay.centroid.lat();
                a.lon_sum += stay.centroid.lon();
                a.n += 1.0;
                a.centroid = GeoPoint::new(a.lat_sum / a.n, a.lon_sum / a.n).unwrap_or(a.centroid);
                id
            }
            None => {
                accs.push(Acc {
                    lat_sum: stay.centroid.lat(),
                    lon_sum: stay.centroid.lon(),
                    n: 1.0,
                    centroid: stay.centroid,
                });
                accs.len() - 1
            }
        };
        visits.push(Visit {
            poi_id: id as PoiId,
            arrival: stay.arrival,
            departure: stay.departure,
        });
    }
    let pois = accs
        .into_iter()
        .enumerate()
        .map(|(id, a)| Poi {
            poi_id: id as PoiId,
            centroid: a.centroid,
            subzone: None,
            category: None,
        })
        .collect();
    (pois, visits)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HomeWorkConfig {
    /// Local `[from, to)` hours in which Home dwell is accumulated.
    pub home_window_hours: [u32; 2],
    /// Local `[from, to)` hours, Monday to Friday, for Work dwell.
    pub work_window_hours: [u32; 2],
    /// Share of recorded weekdays on which Work must be visited in its window.
    pub work_presence_ratio: f64,
}

impl Default for HomeWorkConfig {
    fn default() -> Self {
        HomeWorkConfig {
            home_window_hours: [0, 6],
            work_window_hours: [10, 17],
            work_presence_ratio: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    pub home_poi: PoiId,
    pub work_poi: Option<PoiId>,
    pub home_work_km: Option<f64>,
    /// Home was chosen by all-day dwell because nothing was recorded in
    /// the night window.
    #[serde(default)]
    pub home_fallback: bool,
}

impl UserProfile {
    pub fn is_working(&self) -> bool {
        self.work_poi.is_some()
    }

    pub fn is_anchor(&self, poi: PoiId) -> bool {
        poi == self.home_poi || self.work_poi == Some(poi)
    }
}

/// Everything the feature stage needs about one user; also the on-disk
/// per-user JSON record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserPois {
    #[serde(flatten)]
    pub profile: UserProfile,
    pub tz_offset_minutes: i32,
    /// Sorted by `poi_id`.
    pub pois: Vec<Poi>,
    /// Time-sorted, non-overlapping.
    pub visits: Vec<Visit>,
}

impl UserPois {
    pub fn user_id(&self) -> &str {
        &self.profile.user_id
    }

    pub fn poi(&self, id: PoiId) -> Option<&Poi> {
        self.pois
            .binary_search_by_key(&id, |p| p.poi_id)
            .ok()
            .map(|i| &self.pois[i])
    }

    pub fn home(&self) -> Result<&Poi> {
        self.poi(self.profile.home_poi).ok_or_else(|| {
            Error::Precondition(format!("user {} has no Home POI record", self.user_id()))
        })
    }

    pub fn work(&self) -> Option<&Poi> {
        self.profile.work_poi.and_then(|w| self.poi(w))
    }

    pub fn days(&self) -> Vec<DayRecord> {
        segment_days(&self.visits, &self.profile, self.tz_offset_minutes)
    }
}

/// Fixes to stay points to POIs to profile, for one user.
pub fn build_user_pois(
    user_id: &str,
    fixes: &[GpsFix],
    tz: i32,
    stay_cfg: &StayPointConfig,
    hw_cfg: &HomeWorkConfig,
) -> Result<UserPois> {
    let stays = detect_stay_points(fixes, stay_cfg)?;
    let (pois, visits) = merge_to_pois(&stays, stay_cfg.merge_m);
    let profile = detect_home_work(user_id, &pois, &visits, hw_cfg, tz)?;
    Ok(UserPois {
        profile,
        tz_offset_minutes: tz,
        pois,
        visits,
    })
}

fn days_touched(v: &Visit, tz: i32) -> std::ops::RangeInclusive<DayNumber> {
    let last = if v.departure > v.arrival { v.departure - 1 } else { v.arrival };
    calendar::local_day(v.arrival, tz)..=calendar::local_day(last, tz)
}

/// Infers Home from night-time dwell and Work from weekday office-hour
/// dwell with a presence floor.
pub fn detect_home_work(
    user_id: &str,
    pois: &[Poi],
    visits: &[Visit],
    cfg: &HomeWorkConfig,
    tz: i32,
) -> Result<UserProfile> {
    if pois.is_empty() {
        return Err(Error::Precondition(format!("user {user_id} has no POI")));
    }
    let [home_from, home_to] = cfg.home_window_hours.map(|h| i64::from(h) * 3600);
    let [work_from, work_to] = cfg.work_window_hours.map(|h| i64::from(h) * 3600);

    let mut night: BTreeMap<PoiId, i64> = BTreeMap::new();
    let mut all_day: BTreeMap<PoiId, i64> = BTreeMap::new();
    let mut office: BTreeMap<PoiId, i64> = BTreeMap::new();
    let mut office_days: BTreeMap<PoiId, BTreeSet<DayNumber>> = BTreeMap::new();
    let mut recorded_weekdays: BTreeSet<DayNumber> = BTreeSet::new();

    for v in visits {
        *all_day.entry(v.poi_id).or_insert(0) += v.departure - v.arrival;
        for day in days_touched(v, tz) {
            *night.entry(v.poi_id).or_insert(0) +=
                calendar::window_overlap(v.arrival, v.departure, day, home_from, home_to, tz);
            if calendar::is_weekday(day) {
                recorded_weekdays.insert(day);
                let secs = calendar::window_overlap(v.arrival, v.departure, day, work_from, work_to, tz);
                if secs > 0 {
                    *office.entry(v.poi_id).or_insert(0) += secs;
                    office_days.entry(v.poi_id).or_default().insert(day);
                }
            }
        }
    }

    // Maximum by key, earliest id on ties (BTreeMap iterates ascending).
    fn argmax<K: Copy, S: PartialOrd + Copy>(items: impl Iterator<Item = (K, S)>) -> Option<K> {
        let mut best: Option<(K, S)> = None;
        for (k, s) in items {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((k, s));
            }
        }
        best.map(|(k, _)| k)
    }

    let dwell = |id: PoiId, m: &BTreeMap<PoiId, i64>| m.get(&id).copied().unwrap_or(0);
    let any_night = night.values().any(|&s| s > 0);
    let home_poi = if any_night {
        argmax(pois.iter().map(|p| (p.poi_id, (dwell(p.poi_id, &night), dwell(p.poi_id, &all_day)))))
    } else {
        argmax(pois.iter().map(|p| (p.poi_id, dwell(p.poi_id, &all_day))))
    }
    .expect("non-empty POI list");

    let floor = cfg.work_presence_ratio * recorded_weekdays.len() as f64;
    let work_poi = argmax(
        pois.iter()
            .filter(|p| p.poi_id != home_poi)
            .filter(|p| {
                let days = office_days.get(&p.poi_id).map_or(0, BTreeSet::len);
                days > 0 && days as f64 >= floor
            })
            .map(|p| (p.poi_id, dwell(p.poi_id, &office))),
    );

    let centroid = |id: PoiId| pois.iter().find(|p| p.poi_id == id).map(|p| p.centroid);
    let home_work_km = match (work_poi, centroid(home_poi)) {
        (Some(w), Some(h)) => centroid(w).map(|w| haversine_km(&h, &w)),
        _ => None,
    };
    Ok(UserProfile {
        user_id: user_id.to_string(),
        home_poi,
        work_poi,
        home_work_km,
        home_fallback: !any_night,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DayType {
    Workday,
    Offday,
}

impl DayType {
    pub const ALL: [DayType; 2] = [DayType::Workday, DayType::Offday];

    pub fn as_str(&self) -> &'static str {
        match self {
            DayType::Workday => "workday",
            DayType::Offday => "offday",
        }
    }
}

impl fmt::Display for DayType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DayType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "workday" => Ok(DayType::Workday),
            "offday" => Ok(DayType::Offday),
            _ => Err(Error::InvalidInput(format!("unknown day type `{s}`"))),
        }
    }
}

/// One local calendar date of a user.
///
/// `visits` holds the visits arriving on this date, so records partition the
/// visit list. A date covered only by a stay that began earlier (an
/// all-day Home stay, say) still gets a record, with no visits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayRecord {
    pub date: NaiveDate,
    pub day_type: DayType,
    pub visits: Vec<Visit>,
}

pub fn segment_days(visits: &[Visit], profile: &UserProfile, tz: i32) -> Vec<DayRecord> {
    let mut by_day: BTreeMap<DayNumber, Vec<Visit>> = BTreeMap::new();
    for v in visits {
        for day in days_touched(v, tz) {
            by_day.entry(day).or_default();
        }
        by_day
            .entry(calendar::local_day(v.arrival, tz))
            .or_default()
            .push(*v);
    }
    by_day
        .into_iter()
        .map(|(day, mut visits)| {
            visits.sort_by_key(|v| (v.arrival, v.departure, v.poi_id));
            let workday = profile
                .work_poi
                .is_some_and(|w| visits.iter().any(|v| v.poi_id == w));
            DayRecord {
                date: calendar::to_date(day),
                day_type: if workday { DayType::Workday } else { DayType::Offday },
                visits,
            }
        })
        .collect()
}
