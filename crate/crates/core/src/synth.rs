//! Seeded synthetic trajectories with known answers.
//!
//! Users come in three archetypes that differ in how often they leave the
//! Home/Work pair and how far they go: `HomeBody` rarely goes anywhere,
//! `ShortTripper` makes frequent trips under 5 km from Home, `LongTripper`
//! makes frequent trips of 5 to 15 km. Half of each archetype (by default)
//! also commutes to a Work location on weekdays.
//!
//! Every user owns a handful of favourite places placed around Home at the
//! user's excursion radius. The Home-Work distances of working users are
//! built so that their sample correlation with the excursion radii equals
//! `target_r` exactly; the pipeline then measures it back through the
//! median Workday DCD.
//!
//! Output is a pure function of the spec. Each user draws from its own
//! ChaCha stream, so users can be generated in parallel.

use std::io::Write;
use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calendar::{self, SECONDS_PER_DAY};
use crate::error::{Error, Result};
use crate::geo::{haversine_km, GeoPoint, Polygon, SubzoneMap, Zone, DEFAULT_ZONE_PROPERTY};
use crate::ingest::{write_fixes, FixFormat, GpsFix};
use crate::labeling::{CatalogEntry, LabelCatalog, PoiCategory};

const DWELL_SAMPLE_S: i64 = 300;
const TRANSIT_SAMPLE_S: i64 = 60;
const TRAVEL_KM_PER_MIN: f64 = 0.4;
const PLACES_PER_USER: usize = 8;
const SUBZONE_CELL_DEG: f64 = 0.01;
const SUBZONE_MARGIN_DEG: f64 = 0.25;
const HOME_WORK_MEAN_KM: f64 = 12.0;
const HOME_WORK_SD_KM: f64 = 3.5;
const HOME_WORK_RANGE_KM: (f64, f64) = (1.0, 30.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Archetype {
    HomeBody,
    ShortTripper,
    LongTripper,
}

impl Archetype {
    pub const ALL: [Archetype; 3] = [Archetype::HomeBody, Archetype::ShortTripper, Archetype::LongTripper];

    /// Share of days with at least one excursion.
    fn excursion_share(self) -> f64 {
        match self {
            Archetype::HomeBody => 0.1,
            Archetype::ShortTripper | Archetype::LongTripper => 0.85,
        }
    }

    fn radius_range_km(self) -> (f64, f64) {
        match self {
            Archetype::HomeBody => (2.0, 4.5),
            Archetype::ShortTripper => (2.0, 4.25),
            Archetype::LongTripper => (6.5, 13.0),
        }
    }

    /// Where individual places may lie, whatever the radius.
    fn place_range_km(self) -> (f64, f64) {
        match self {
            Archetype::HomeBody | Archetype::ShortTripper => (1.5, 4.9),
            Archetype::LongTripper => (5.5, 15.0),
        }
    }

    fn max_places_per_day(self) -> usize {
        match self {
            Archetype::HomeBody => 1,
            Archetype::ShortTripper | Archetype::LongTripper => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl Default for RegionBox {
    fn default() -> Self {
        RegionBox { lat_min: 1.28, lat_max: 1.42, lon_min: 103.70, lon_max: 103.95 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub seed: u64,
    pub homebody: usize,
    pub short: usize,
    pub long: usize,
    pub days: u32,
    pub start_date: NaiveDate,
    pub tz_offset_minutes: i32,
    pub working_fraction: f64,
    pub region: RegionBox,
    /// Desired Pearson r between Home-Work distance and excursion radius
    /// over working users.
    pub target_r: f64,
    pub gps_jitter_m: f64,
    pub schedule_jitter_min: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 7,
            homebody: 10,
            short: 10,
            long: 10,
            days: 60,
            start_date: NaiveDate::from_ymd_opt(2021, 1, 4).expect("valid date"),
            tz_offset_minutes: 480,
            working_fraction: 0.5,
            region: RegionBox::default(),
            target_r: 0.75,
            gps_jitter_m: 15.0,
            schedule_jitter_min: 20.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Parameter(m.to_string()));
        if !(-1.0..=1.0).contains(&self.target_r) {
            return bad("target_r must lie in [-1, 1]");
        }
        if !(self.gps_jitter_m >= 0.0) || !(self.schedule_jitter_min >= 0.0) {
            return bad("jitter must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.working_fraction) {
            return bad("working_fraction must lie in [0, 1]");
        }
        let r = &self.region;
        if GeoPoint::new(r.lat_min, r.lon_min).is_err()
            || GeoPoint::new(r.lat_max, r.lon_max).is_err()
            || r.lat_min >= r.lat_max
            || r.lon_min >= r.lon_max
        {
            return bad("region box must be a valid, non-empty lat/lon range");
        }
        if r.lat_min.abs().max(r.lat_max.abs()) + SUBZONE_MARGIN_DEG > 80.0 {
            return bad("region box too close to a pole");
        }
        Ok(())
    }

    pub fn n_users(&self) -> usize {
        self.homebody + self.short + self.long
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Stop {
    Home,
    Work,
    Place { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dwell {
    #[serde(flatten)]
    pub stop: Stop,
    pub start: i64,
    pub end: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaySchedule {
    pub date: NaiveDate,
    pub excursion: bool,
    /// Dwells beginning on this local date.
    pub dwells: Vec<Dwell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserTruth {
    pub user_id: String,
    pub archetype: Archetype,
    pub working: bool,
    pub home: GeoPoint,
    pub work: Option<GeoPoint>,
    pub home_work_km: Option<f64>,
    pub excursion_radius_km: f64,
    pub places: Vec<GeoPoint>,
    pub days: Vec<DaySchedule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub tz_offset_minutes: i32,
    pub users: Vec<UserTruth>,
}

impl GroundTruth {
    pub fn user(&self, user_id: &str) -> Option<&UserTruth> {
        self.users.iter().find(|u| u.user_id == user_id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    /// Sorted by user, then time.
    pub fixes: Vec<GpsFix>,
    pub truth: GroundTruth,
    pub catalog: LabelCatalog,
    pub subzones: SubzoneMap,
}

pub const FIXES_FILE: &str = "fixes.csv";
pub const TRUTH_FILE: &str = "ground_truth.json";
pub const CATALOG_FILE: &str = "catalog.csv";
pub const SUBZONES_FILE: &str = "subzones.geojson";

impl SynthOutput {
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::from(e).at_path(dir))?;
        let create = |name: &str| {
            let path = dir.join(name);
            std::fs::File::create(&path)
                .map(std::io::BufWriter::new)
                .map_err(|e| Error::from(e).at_path(path))
        };
        write_fixes(create(FIXES_FILE)?, &self.fixes, FixFormat::Csv)?;
        let mut truth = create(TRUTH_FILE)?;
        serde_json::to_writer_pretty(&mut truth, &self.truth)?;
        truth.write_all(b"\n")?;
        self.catalog.write_csv(create(CATALOG_FILE)?)?;
        let mut zones = create(SUBZONES_FILE)?;
        serde_json::to_writer(&mut zones, &self.subzones.to_geojson(DEFAULT_ZONE_PROPERTY))?;
        zones.write_all(b"\n")?;
        Ok(())
    }
}

/// What the population-level draw decides for one user.
struct UserPlan {
    index: usize,
    archetype: Archetype,
    working: bool,
    radius_km: f64,
    home_work_km: Option<f64>,
}

fn user_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn rounded(p: GeoPoint) -> GeoPoint {
    GeoPoint::new(round6(p.lat()), round6(p.lon())).unwrap_or(p)
}

fn at_bearing(origin: GeoPoint, km: f64, bearing: f64) -> GeoPoint {
    rounded(origin.offset_km(km * bearing.cos(), km * bearing.sin()))
}

pub fn generate(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let plans = plan_population(spec);
    let users: Vec<(UserTruth, Vec<GpsFix>, Vec<CatalogEntry>)> =
        plans.par_iter().map(|p| generate_user(spec, p)).collect::<Result<_>>()?;

    let mut fixes = Vec::new();
    let mut truths = Vec::new();
    let mut entries = Vec::new();
    for (truth, user_fixes, user_entries) in users {
        truths.push(truth);
        fixes.extend(user_fixes);
        entries.extend(user_entries);
    }
    Ok(SynthOutput {
        fixes,
        truth: GroundTruth { seed: spec.seed, tz_offset_minutes: spec.tz_offset_minutes, users: truths },
        catalog: LabelCatalog::new(entries),
        subzones: subzone_grid(&spec.region)?,
    })
}

fn plan_population(spec: &SynthSpec) -> Vec<UserPlan> {
    let mut rng = user_rng(spec.seed, usize::MAX - 1);
    let mut plans = Vec::new();
    for (archetype, count) in [
        (Archetype::HomeBody, spec.homebody),
        (Archetype::ShortTripper, spec.short),
        (Archetype::LongTripper, spec.long),
    ] {
        let mut working = vec![false; count];
        let n_working = (spec.working_fraction * count as f64).round() as usize;
        working[..n_working].fill(true);
        working.shuffle(&mut rng);
        let (lo, hi) = archetype.radius_range_km();
        for w in working {
            plans.push(UserPlan {
                index: plans.len(),
                archetype,
                working: w,
                radius_km: rng.random_range(lo..=hi),
                home_work_km: None,
            });
        }
    }

    let working: Vec<usize> = plans.iter().filter(|p| p.working).map(|p| p.index).collect();
    let radii: Vec<f64> = working.iter().map(|&i| plans[i].radius_km).collect();
    let distances = correlated_distances(&radii, spec.target_r, &mut rng);
    for (&i, d) in working.iter().zip(distances) {
        plans[i].home_work_km = Some(d);
    }
    plans
}

/// Home-Work distances whose sample correlation with `radii` is `target_r`
/// (before clamping to the allowed range).
fn correlated_distances(radii: &[f64], target_r: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = radii.len();
    let (lo, hi) = HOME_WORK_RANGE_KM;
    let centred = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| x - m).collect::<Vec<f64>>()
    };
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();

    let noise: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    if n < 3 {
        return noise.iter().map(|z| (HOME_WORK_MEAN_KM + HOME_WORK_SD_KM * z).clamp(lo, hi)).collect();
    }
    let d = centred(radii);
    let d_norm = norm(&d);
    let mut e = centred(&noise);
    if d_norm > 0.0 {
        let proj = e.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>() / (d_norm * d_norm);
        for (x, y) in e.iter_mut().zip(&d) {
            *x -= proj * y;
        }
    }
    let e_norm = norm(&e);
    let scale = HOME_WORK_SD_KM * (n as f64).sqrt();
    let signal = (1.0 - target_r * target_r).max(0.0).sqrt();
    (0..n)
        .map(|i| {
            let zd = if d_norm > 0.0 { d[i] / d_norm } else { 0.0 };
            let ze = if e_norm > 0.0 { e[i] / e_norm } else { 0.0 };
            (HOME_WORK_MEAN_KM + scale * (target_r * zd + signal * ze)).clamp(lo, hi)
        })
        .collect()
}

/// Builds one user's movement timeline and samples fixes along it.
struct Timeline<'a> {
    user_id: &'a str,
    jitter: Option<Normal<f64>>,
    fixes: Vec<GpsFix>,
    dwells: Vec<Dwell>,
    at: (Stop, GeoPoint),
    since: i64,
}

impl Timeline<'_> {
    fn travel_s(a: &GeoPoint, b: &GeoPoint) -> i64 {
        ((haversine_km(a, b) / TRAVEL_KM_PER_MIN).max(5.0) * 60.0).round() as i64
    }

    fn jittered(&self, p: GeoPoint, rng: &mut ChaCha8Rng) -> GeoPoint {
        match &self.jitter {
            Some(n) => rounded(p.offset_km(n.sample(rng) / 1000.0, n.sample(rng) / 1000.0)),
            None => p,
        }
    }

    fn close_dwell(&mut self, until: i64, rng: &mut ChaCha8Rng) {
        let (stop, point) = self.at;
        let mut t = self.since;
        while t < until {
            let end = (t + DWELL_SAMPLE_S).min(until);
            let p = self.jittered(point, rng);
            self.fixes.push(GpsFix { user_id: self.user_id.to_string(), point: p, start: t, end });
            t = end;
        }
        self.dwells.push(Dwell { stop, start: self.since, end: until });
    }

    /// Leaves the current stop at `depart` and returns the arrival time.
    fn go(&mut self, to: (Stop, GeoPoint), depart: i64, rng: &mut ChaCha8Rng) -> i64 {
        let depart = depart.max(self.since + DWELL_SAMPLE_S);
        self.close_dwell(depart, rng);
        let from = self.at.1;
        let travel = Self::travel_s(&from, &to.1);
        let arrive = depart + travel;
        let mut t = depart;
        while t < arrive {
            let end = (t + TRANSIT_SAMPLE_S).min(arrive);
            let f = (end - depart) as f64 / travel as f64;
            let p = GeoPoint::new(
                from.lat() + f * (to.1.lat() - from.lat()),
                from.lon() + f * (to.1.lon() - from.lon()),
            )
            .unwrap_or(to.1);
            let p = self.jittered(p, rng);
            self.fixes.push(GpsFix { user_id: self.user_id.to_string(), point: p, start: t, end });
            t = end;
        }
        self.at = to;
        self.since = arrive;
        arrive
    }
}

fn generate_user(spec: &SynthSpec, plan: &UserPlan) -> Result<(UserTruth, Vec<GpsFix>, Vec<CatalogEntry>)> {
    let mut rng = user_rng(spec.seed, plan.index);
    let user_id = format!("u{:03}", plan.index);
    let r = &spec.region;
    let home = rounded(GeoPoint::new(rng.random_range(r.lat_min..=r.lat_max), rng.random_range(r.lon_min..=r.lon_max))?);
    let work = plan
        .home_work_km
        .map(|km| at_bearing(home, km, rng.random_range(0.0..std::f64::consts::TAU)));
    let (plo, phi) = plan.archetype.place_range_km();
    let places: Vec<GeoPoint> = (0..PLACES_PER_USER)
        .map(|_| {
            let km = (plan.radius_km * rng.random_range(0.85..=1.15)).clamp(plo, phi);
            at_bearing(home, km, rng.random_range(0.0..std::f64::consts::TAU))
        })
        .collect();

    let tz = spec.tz_offset_minutes;
    let dates: Vec<NaiveDate> = (0..spec.days).filter_map(|d| spec.start_date.checked_add_days(chrono::Days::new(d.into()))).collect();
    let is_weekend = |d: &NaiveDate| matches!(d.weekday(), Weekday::Sat | Weekday::Sun);

    // Exact, stratified excursion days: the same share of weekdays and of
    // weekend days, so Workday and Offday series both carry the archetype.
    let mut excursion = vec![false; dates.len()];
    for weekend in [false, true] {
        let mut group: Vec<usize> = (0..dates.len()).filter(|&i| is_weekend(&dates[i]) == weekend).collect();
        if group.is_empty() {
            continue;
        }
        let n = ((plan.archetype.excursion_share() * group.len() as f64).round() as usize).clamp(1, group.len());
        group.shuffle(&mut rng);
        for &i in &group[..n] {
            excursion[i] = true;
        }
    }

    let sched_jitter = (spec.schedule_jitter_min > 0.0)
        .then(|| Normal::new(0.0, spec.schedule_jitter_min * 60.0))
        .transpose()
        .map_err(|e| Error::Parameter(e.to_string()))?;
    let jit = |rng: &mut ChaCha8Rng| -> i64 {
        sched_jitter.map_or(0.0, |n| {
            let s = spec.schedule_jitter_min * 60.0;
            n.sample(rng).clamp(-2.0 * s, 2.0 * s)
        }) as i64
    };
    let gps_jitter = (spec.gps_jitter_m > 0.0)
        .then(|| Normal::new(0.0, spec.gps_jitter_m))
        .transpose()
        .map_err(|e| Error::Parameter(e.to_string()))?;

    let first_midnight = dates.first().map_or(0, |d| calendar::day_start(calendar::from_date(*d), tz));
    let mut tl = Timeline {
        user_id: &user_id,
        jitter: gps_jitter,
        fixes: Vec::new(),
        dwells: Vec::new(),
        at: (Stop::Home, home),
        since: first_midnight,
    };

    for (i, date) in dates.iter().enumerate() {
        let midnight = calendar::day_start(calendar::from_date(*date), tz);
        let hour = |h: f64| midnight + (h * 3600.0) as i64;
        let n_places = if excursion[i] { rng.random_range(1..=plan.archetype.max_places_per_day()) } else { 0 };
        let mut chosen: Vec<usize> = (0..places.len()).collect();
        chosen.shuffle(&mut rng);
        chosen.truncate(n_places);

        let commute = plan.working && !is_weekend(date);
        let mut t;
        if let (true, Some(w)) = (commute, work) {
            let travel = Timeline::travel_s(&home, &w);
            let arrive = hour(9.0) + jit(&mut rng);
            tl.go((Stop::Work, w), arrive - travel, &mut rng);
            t = hour(17.0) + jit(&mut rng);
            for &p in &chosen {
                let arrive = tl.go((Stop::Place { index: p }, places[p]), t, &mut rng);
                t = arrive + rng.random_range(45 * 60..=75 * 60);
            }
            tl.go((Stop::Home, home), t, &mut rng);
        } else if !chosen.is_empty() {
            t = hour(10.0) + jit(&mut rng);
            for &p in &chosen {
                let arrive = tl.go((Stop::Place { index: p }, places[p]), t, &mut rng);
                t = arrive + rng.random_range(60 * 60..=150 * 60);
            }
            tl.go((Stop::Home, home), t, &mut rng);
        }
    }
    let last_midnight = dates.last().map_or(first_midnight, |d| calendar::day_start(calendar::from_date(*d), tz));
    let end = (last_midnight + SECONDS_PER_DAY).max(tl.since + DWELL_SAMPLE_S);
    tl.close_dwell(end, &mut rng);

    let mut days: Vec<DaySchedule> =
        dates.iter().zip(&excursion).map(|(&date, &ex)| DaySchedule { date, excursion: ex, dwells: Vec::new() }).collect();
    for dw in &tl.dwells {
        let date = calendar::to_date(calendar::local_day(dw.start, tz));
        if let Some(day) = days.iter_mut().find(|d| d.date == date) {
            day.dwells.push(*dw);
        }
    }

    let mut entries = vec![CatalogEntry { point: home, category: PoiCategory::Residential, name: format!("{user_id}-home") }];
    for (k, p) in places.iter().enumerate() {
        let category = PoiCategory::ALL[rng.random_range(0..PoiCategory::ALL.len() - 1)];
        entries.push(CatalogEntry { point: *p, category, name: format!("{user_id}-place{k}") });
    }

    let truth = UserTruth {
        user_id: user_id.clone(),
        archetype: plan.archetype,
        working: plan.working,
        home,
        work,
        home_work_km: work.map(|w| haversine_km(&home, &w)),
        excursion_radius_km: plan.radius_km,
        places,
        days,
    };
    Ok((truth, tl.fixes, entries))
}

/// Square cells covering the region with a margin.
fn subzone_grid(r: &RegionBox) -> Result<SubzoneMap> {
    let lat0 = ((r.lat_min - SUBZONE_MARGIN_DEG) / SUBZONE_CELL_DEG).floor() as i64;
    let lat1 = ((r.lat_max + SUBZONE_MARGIN_DEG) / SUBZONE_CELL_DEG).ceil() as i64;
    let lon0 = ((r.lon_min - SUBZONE_MARGIN_DEG) / SUBZONE_CELL_DEG).floor().max(-18000.0) as i64;
    let lon1 = ((r.lon_max + SUBZONE_MARGIN_DEG) / SUBZONE_CELL_DEG).ceil().min(18000.0) as i64;
    let deg = |i: i64| round6(i as f64 * SUBZONE_CELL_DEG);
    let mut zones = Vec::new();
    for (row, i) in (lat0..lat1).enumerate() {
        for (col, j) in (lon0..lon1).enumerate() {
            let ring = vec![
                GeoPoint::new(deg(i), deg(j))?,
                GeoPoint::new(deg(i), deg(j + 1))?,
                GeoPoint::new(deg(i + 1), deg(j + 1))?,
                GeoPoint::new(deg(i + 1), deg(j))?,
            ];
            zones.push(Zone::new(format!("SZ{row:03}-{col:03}"), vec![Polygon::new(ring, vec![])?])?);
        }
    }
    SubzoneMap::new(zones)
}
