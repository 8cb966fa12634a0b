//! Distance-based per-user features: radius of gyration, daily
//! characteristic distance (DCD), origin-destination matrices and the
//! 20-value clustering vector.
//!
//! DCD of a day is the visit-weighted RMS distance from Home of the
//! non-Home, non-Work POIs visited that day, with the weighted sum divided
//! by the number of *distinct* such POIs:
//!
//! ```text
//! dcd = sqrt( sum_i f_i * d(poi_i, home)^2 / n_distinct )
//! ```
//!
//! Repeat visits therefore push DCD above the distance of the farthest POI
//! (one POI at 5 km visited twice gives 7.07 km). This is intentional.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{haversine_km, mean_coordinate, GeoPoint};
use crate::poi::{DayRecord, DayType, Poi, PoiId, UserPois};

const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SchemeContext {
    DcdWorkday,
    DcdOffday,
    OdWorkday,
    OdOffday,
}

impl SchemeContext {
    fn edge_count(self) -> usize {
        match self {
            SchemeContext::OdOffday => 3,
            _ => 2,
        }
    }

    /// First bin is an identity/zero bin rather than a distance range.
    fn has_zero_bin(self) -> bool {
        self != SchemeContext::OdOffday
    }

    pub fn od(day_type: DayType) -> Self {
        match day_type {
            DayType::Workday => SchemeContext::OdWorkday,
            DayType::Offday => SchemeContext::OdOffday,
        }
    }

    pub fn dcd(day_type: DayType) -> Self {
        match day_type {
            DayType::Workday => SchemeContext::DcdWorkday,
            DayType::Offday => SchemeContext::DcdOffday,
        }
    }
}

/// Four distance bins, left-open and right-closed between the edges.
///
/// DCD contexts: `[0]`, `(0, e1]`, `(e1, e2]`, `(e2, inf)`.
/// Workday OD: Home/Work identity, `[0, e1]`, `(e1, e2]`, `(e2, inf)`.
/// Offday OD: `[0, e1]`, `(e1, e2]`, `(e2, e3]`, `(e3, inf)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdScheme {
    context: SchemeContext,
    edges: Vec<f64>,
}

impl ThresholdScheme {
    pub fn new(context: SchemeContext, edges: &[f64]) -> Result<Self> {
        if edges.len() != context.edge_count() {
            return Err(Error::Parameter(format!(
                "{context:?} needs {} edges, got {}",
                context.edge_count(),
                edges.len()
            )));
        }
        if edges.iter().any(|e| !e.is_finite() || *e <= 0.0) || edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Parameter(format!(
                "{context:?} edges must be positive and strictly ascending: {edges:?}"
            )));
        }
        Ok(ThresholdScheme { context, edges: edges.to_vec() })
    }

    pub fn context(&self) -> SchemeContext {
        self.context
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// Bin of a distance; `anchor` marks a Home/Work POI for Workday OD.
    pub fn bin(&self, km: f64, anchor: bool) -> usize {
        let ranged = |offset: usize| {
            offset + self.edges.iter().take_while(|&&e| km > e).count()
        };
        match self.context {
            SchemeContext::DcdWorkday | SchemeContext::DcdOffday => {
                if km <= 0.0 {
                    0
                } else {
                    ranged(1)
                }
            }
            SchemeContext::OdWorkday => {
                if anchor {
                    0
                } else {
                    ranged(1)
                }
            }
            SchemeContext::OdOffday => ranged(0),
        }
    }

    pub fn labels(&self) -> [String; 4] {
        let km = |e: f64| format!("{e}");
        let e = &self.edges;
        match self.context {
            SchemeContext::DcdWorkday | SchemeContext::DcdOffday => [
                "0km".into(),
                format!("0-{}km", km(e[0])),
                format!("{}-{}km", km(e[0]), km(e[1])),
                format!(">{}km", km(e[1])),
            ],
            SchemeContext::OdWorkday => [
                "Home/Work".into(),
                format!("0-{}km", km(e[0])),
                format!("{}-{}km", km(e[0]), km(e[1])),
                format!(">{}km", km(e[1])),
            ],
            SchemeContext::OdOffday => [
                format!("0-{}km", km(e[0])),
                format!("{}-{}km", km(e[0]), km(e[1])),
                format!("{}-{}km", km(e[1]), km(e[2])),
                format!(">{}km", km(e[2])),
            ],
        }
    }

    pub fn has_identity_bin(&self) -> bool {
        self.context.has_zero_bin()
    }
}

/// RMS distance of positions (with multiplicity) from their mean position.
pub fn radius_of_gyration(positions: &[GeoPoint]) -> Result<f64> {
    let cm = mean_coordinate(positions)?;
    let sum_sq: f64 = positions.iter().map(|p| haversine_km(p, &cm).powi(2)).sum();
    Ok((sum_sq / positions.len() as f64).sqrt())
}

/// DCD of one day. Days with no non-anchor visit score zero.
pub fn daily_characteristic_distance(day: &DayRecord, user: &UserPois) -> Result<f64> {
    let home = user.home()?.centroid;
    let mut counts: BTreeMap<PoiId, u32> = BTreeMap::new();
    for v in &day.visits {
        if !user.profile.is_anchor(v.poi_id) {
            *counts.entry(v.poi_id).or_insert(0) += 1;
        }
    }
    if counts.is_empty() {
        return Ok(0.0);
    }
    let mut weighted = 0.0;
    for (&id, &f) in &counts {
        let poi = user
            .poi(id)
            .ok_or_else(|| Error::Precondition(format!("visit to unknown POI {id}")))?;
        weighted += f64::from(f) * haversine_km(&poi.centroid, &home).powi(2);
    }
    Ok((weighted / counts.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcdSeries {
    pub day_type: DayType,
    pub values: Vec<(NaiveDate, f64)>,
}

impl DcdSeries {
    /// Values below `zero_snap_km` become exactly zero.
    pub fn snapped(&self, zero_snap_km: f64) -> DcdSeries {
        DcdSeries {
            day_type: self.day_type,
            values: self
                .values
                .iter()
                .map(|&(d, v)| (d, if v < zero_snap_km { 0.0 } else { v }))
                .collect(),
        }
    }
}

pub fn dcd_series(days: &[DayRecord], user: &UserPois, day_type: DayType) -> Result<DcdSeries> {
    let values = days
        .iter()
        .filter(|d| d.day_type == day_type)
        .map(|d| Ok((d.date, daily_characteristic_distance(d, user)?)))
        .collect::<Result<_>>()?;
    Ok(DcdSeries { day_type, values })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcdFeatures {
    pub shares: [f64; 4],
}

impl DcdFeatures {
    /// Validates externally supplied shares.
    pub fn from_shares(shares: [f64; 4]) -> Result<Self> {
        check_distribution(&shares, "DCD shares")?;
        Ok(DcdFeatures { shares })
    }
}

fn check_distribution(values: &[f64], what: &str) -> Result<()> {
    if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidInput(format!("{what}: value outside [0, 1]")));
    }
    let sum: f64 = values.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::InvalidInput(format!("{what} sum to {sum}, not 1")));
    }
    Ok(())
}

/// Share of days in each DCD bin. Values are expected already snapped.
pub fn dcd_features(series: &DcdSeries, scheme: &ThresholdScheme) -> Result<DcdFeatures> {
    if series.values.is_empty() {
        return Err(Error::EmptyInput("no days of this type"));
    }
    if !matches!(scheme.context(), SchemeContext::DcdWorkday | SchemeContext::DcdOffday) {
        return Err(Error::Precondition(format!("{:?} is not a DCD scheme", scheme.context())));
    }
    let mut counts = [0usize; 4];
    for &(_, v) in &series.values {
        counts[scheme.bin(v, false)] += 1;
    }
    let n = series.values.len() as f64;
    Ok(DcdFeatures { shares: counts.map(|c| c as f64 / n) })
}

/// Distance from a POI to Home, or to the nearer of Home and Work on
/// Workdays. Home and Work themselves are at distance zero.
pub fn min_distance(poi: &Poi, user: &UserPois, day_type: DayType) -> Result<f64> {
    if user.profile.is_anchor(poi.poi_id) {
        if day_type == DayType::Workday && user.profile.work_poi.is_none() {
            return Err(Error::Precondition("Workday distance needs a Work POI".into()));
        }
        return Ok(0.0);
    }
    let to_home = haversine_km(&poi.centroid, &user.home()?.centroid);
    match day_type {
        DayType::Offday => Ok(to_home),
        DayType::Workday => {
            let work = user
                .work()
                .ok_or_else(|| Error::Precondition("Workday distance needs a Work POI".into()))?;
            Ok(to_home.min(haversine_km(&poi.centroid, &work.centroid)))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trip {
    pub origin: PoiId,
    pub dest: PoiId,
    pub date: NaiveDate,
}

/// Consecutive visit pairs within one date, skipping pairs inside one
/// subzone and repeat visits to the same POI.
pub fn extract_trips(days: &[DayRecord], user: &UserPois) -> Vec<Trip> {
    let subzone = |id: PoiId| user.poi(id).and_then(|p| p.subzone.as_deref());
    let mut trips = Vec::new();
    for day in days {
        for pair in day.visits.windows(2) {
            let (a, b) = (pair[0].poi_id, pair[1].poi_id);
            if a == b {
                continue;
            }
            if let (Some(za), Some(zb)) = (subzone(a), subzone(b)) {
                if za == zb {
                    continue;
                }
            }
            trips.push(Trip { origin: a, dest: b, date: day.date });
        }
    }
    trips
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdMatrix {
    /// Row = origin bin, column = destination bin.
    pub cells: [[f64; 4]; 4],
    pub trip_count: usize,
}

impl OdMatrix {
    pub fn from_cells(cells: [[f64; 4]; 4]) -> Result<Self> {
        check_distribution(cells.as_flattened(), "OD cells")?;
        Ok(OdMatrix { cells, trip_count: 0 })
    }

    /// No trips were counted; the user sits out clustering for this day type.
    pub fn is_degenerate(&self) -> bool {
        self.cells.as_flattened().iter().all(|&c| c == 0.0)
    }
}

pub fn od_matrix(trips: &[Trip], user: &UserPois, scheme: &ThresholdScheme, day_type: DayType) -> Result<OdMatrix> {
    if scheme.context() != SchemeContext::od(day_type) {
        return Err(Error::Precondition(format!(
            "{:?} scheme used for {day_type} trips",
            scheme.context()
        )));
    }
    let mut bin_cache: BTreeMap<PoiId, usize> = BTreeMap::new();
    let mut bin_of = |id: PoiId| -> Result<usize> {
        if let Some(&b) = bin_cache.get(&id) {
            return Ok(b);
        }
        let poi = user
            .poi(id)
            .ok_or_else(|| Error::Precondition(format!("trip to unknown POI {id}")))?;
        let b = scheme.bin(min_distance(poi, user, day_type)?, user.profile.is_anchor(id));
        bin_cache.insert(id, b);
        Ok(b)
    };
    let mut counts = [[0usize; 4]; 4];
    for t in trips {
        counts[bin_of(t.origin)?][bin_of(t.dest)?] += 1;
    }
    let n = trips.len();
    let cells = if n == 0 {
        [[0.0; 4]; 4]
    } else {
        counts.map(|row| row.map(|c| c as f64 / n as f64))
    };
    Ok(OdMatrix { cells, trip_count: n })
}

pub const FEATURE_DIM: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub user_id: String,
    pub day_type: DayType,
    /// 16 OD cells, origin-major, then 4 DCD shares.
    pub values: [f64; FEATURE_DIM],
}

pub fn build_feature_vector(
    user_id: &str,
    day_type: DayType,
    od: &OdMatrix,
    dcd: &DcdFeatures,
) -> Result<FeatureVector> {
    if od.is_degenerate() {
        return Err(Error::Excluded(format!("{user_id} has no {day_type} trips")));
    }
    check_distribution(od.cells.as_flattened(), "OD cells")?;
    check_distribution(&dcd.shares, "DCD shares")?;
    let mut values = [0.0; FEATURE_DIM];
    values[..16].copy_from_slice(od.cells.as_flattened());
    values[16..].copy_from_slice(&dcd.shares);
    Ok(FeatureVector { user_id: user_id.to_string(), day_type, values })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub dcd_edges: Vec<f64>,
    pub od_workday_edges: Vec<f64>,
    pub od_offday_edges: Vec<f64>,
    /// DCD values closer to Home than this count as Home-only days.
    pub zero_snap_m: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            dcd_edges: vec![5.0, 15.0],
            od_workday_edges: vec![2.0, 8.0],
            od_offday_edges: vec![1.0, 5.0, 15.0],
            zero_snap_m: 10.0,
        }
    }
}

impl FeatureConfig {
    pub fn dcd_scheme(&self, day_type: DayType) -> Result<ThresholdScheme> {
        ThresholdScheme::new(SchemeContext::dcd(day_type), &self.dcd_edges)
    }

    pub fn od_scheme(&self, day_type: DayType) -> Result<ThresholdScheme> {
        match day_type {
            DayType::Workday => ThresholdScheme::new(SchemeContext::OdWorkday, &self.od_workday_edges),
            DayType::Offday => ThresholdScheme::new(SchemeContext::OdOffday, &self.od_offday_edges),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for dt in DayType::ALL {
            self.dcd_scheme(dt)?;
            self.od_scheme(dt)?;
        }
        if !(self.zero_snap_m >= 0.0) {
            return Err(Error::Parameter("zero_snap_m must be non-negative".into()));
        }
        Ok(())
    }
}

/// Features of one user for one day type.
#[derive(Debug, Clone, PartialEq)]
pub struct UserDayFeatures {
    /// Snapped DCD series.
    pub dcd: DcdSeries,
    pub dcd_features: Option<DcdFeatures>,
    pub trips: Vec<Trip>,
    pub od: OdMatrix,
    /// `Err` when the user is excluded from clustering for this day type.
    pub vector: Result<FeatureVector, String>,
}

pub fn user_day_features(user: &UserPois, days: &[DayRecord], day_type: DayType, cfg: &FeatureConfig) -> Result<UserDayFeatures> {
    let dcd = dcd_series(days, user, day_type)?.snapped(cfg.zero_snap_m / 1000.0);
    let dcd_feat = if dcd.values.is_empty() {
        None
    } else {
        Some(dcd_features(&dcd, &cfg.dcd_scheme(day_type)?)?)
    };
    let typed_days: Vec<DayRecord> = days.iter().filter(|d| d.day_type == day_type).cloned().collect();
    let trips = extract_trips(&typed_days, user);
    let od = if day_type == DayType::Workday && !user.profile.is_working() {
        OdMatrix { cells: [[0.0; 4]; 4], trip_count: 0 }
    } else {
        od_matrix(&trips, user, &cfg.od_scheme(day_type)?, day_type)?
    };
    let vector = match &dcd_feat {
        None => Err(format!("{} has no {day_type} days", user.user_id())),
        Some(f) => build_feature_vector(user.user_id(), day_type, &od, f).map_err(|e| e.to_string()),
    };
    Ok(UserDayFeatures { dcd, dcd_features: dcd_feat, trips, od, vector })
}

pub fn feature_header() -> Vec<String> {
    let mut h = vec!["user_id".to_string(), "day_type".to_string()];
    for r in 0..4 {
        for c in 0..4 {
            h.push(format!("od_{r}{c}"));
        }
    }
    h.extend((0..4).map(|i| format!("dcd_{i}")));
    h
}

pub fn write_features_csv<W: Write>(out: W, vectors: &[FeatureVector]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(feature_header())?;
    for v in vectors {
        let mut row = vec![v.user_id.clone(), v.day_type.to_string()];
        row.extend(v.values.iter().map(|x| format!("{x:.6}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_features_csv<R: Read>(input: R) -> Result<Vec<FeatureVector>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != feature_header() {
        return Err(Error::InvalidInput("unexpected feature CSV header".into()));
    }
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        let mut values = [0.0; FEATURE_DIM];
        for (i, v) in values.iter_mut().enumerate() {
            *v = row[i + 2]
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad feature value `{}`", &row[i + 2])))?;
        }
        out.push(FeatureVector {
            user_id: row[0].to_string(),
            day_type: row[1].parse()?,
            values,
        });
    }
    Ok(out)
}

/// Fixed-width counts starting at zero.
pub fn histogram(values: &[f64], bin_width_km: f64) -> Result<Vec<u64>> {
    if values.is_empty() {
        return Err(Error::EmptyInput("histogram of no values"));
    }
    if !(bin_width_km > 0.0) {
        return Err(Error::Parameter("bin width must be positive".into()));
    }
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidInput("histogram values must be finite and non-negative".into()));
    }
    let max = values.iter().copied().fold(0.0, f64::max);
    let mut counts = vec![0u64; (max / bin_width_km).floor() as usize + 1];
    for v in values {
        counts[(v / bin_width_km).floor() as usize] += 1;
    }
    Ok(counts)
}

/// Centred moving average, truncated at the ends.
pub fn smooth_counts(counts: &[u64], window: usize) -> Vec<f64> {
    let half = window.max(1) / 2;
    (0..counts.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(counts.len() - 1);
            counts[lo..=hi].iter().sum::<u64>() as f64 / (hi - lo + 1) as f64
        })
        .collect()
}

/// Interior local minima of the smoothed histogram, as bin-centre distances
/// in ascending order. A flat run counts once, at its middle.
pub fn suggest_valleys(counts: &[u64], bin_width_km: f64, smooth_window: usize) -> Vec<f64> {
    let s = smooth_counts(counts, smooth_window);
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < s.len() {
        let mut j = i;
        while j + 1 < s.len() && s[j + 1] == s[i] {
            j += 1;
        }
        if j + 1 < s.len() && s[i - 1] > s[i] && s[j + 1] > s[i] {
            out.push(((i + j) as f64 / 2.0 + 0.5) * bin_width_km);
        }
        i = j + 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poi::{UserProfile, Visit};

    fn home() -> GeoPoint {
        GeoPoint::new(1.35, 103.85).unwrap()
    }

    fn poi(id: PoiId, p: GeoPoint, zone: Option<&str>) -> Poi {
        Poi { poi_id: id, centroid: p, subzone: zone.map(str::to_string), category: None }
    }

    fn user(pois: Vec<Poi>, work: Option<PoiId>) -> UserPois {
        UserPois {
            profile: UserProfile {
                user_id: "u".into(),
                home_poi: 0,
                work_poi: work,
                home_work_km: None,
                home_fallback: false,
            },
            tz_offset_minutes: 480,
            pois,
            visits: vec![],
        }
    }

    fn date(d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2021, 1, d).unwrap()
    }

    fn day(d: u32, day_type: DayType, ids: &[PoiId]) -> DayRecord {
        DayRecord {
            date: date(d),
            day_type,
            visits: ids
                .iter()
                .enumerate()
                .map(|(i, &poi_id)| Visit { poi_id, arrival: i as i64 * 10, departure: i as i64 * 10 + 5 })
                .collect(),
        }
    }

    #[test]
    fn rg_examples() {
        let a = home();
        assert_eq!(radius_of_gyration(&[a, a, a]).unwrap(), 0.0);
        let b = a.offset_km(0.0, 10.0);
        assert!((radius_of_gyration(&[a, b]).unwrap() - 5.0).abs() < 0.01);
        let c = a.offset_km(3.0, 0.0);
        assert!((radius_of_gyration(&[a, a, c]).unwrap() - 2f64.sqrt()).abs() < 0.01);
        assert!(radius_of_gyration(&[]).is_err());
    }

    #[test]
    fn dcd_examples() {
        let u = user(
            vec![
                poi(0, home(), None),
                poi(1, home().offset_km(0.0, 8.0), None),
                poi(2, home().offset_km(3.0, 0.0), None),
                poi(3, home().offset_km(0.0, -4.0), None),
                poi(4, home().offset_km(-5.0, 0.0), None),
            ],
            Some(1),
        );
        let dcd = |ids: &[PoiId]| daily_characteristic_distance(&day(4, DayType::Workday, ids), &u).unwrap();
        assert_eq!(dcd(&[0, 1, 0]), 0.0);
        let oracle = |ds: &[(f64, f64)]| (ds.iter().map(|(f, d)| f * d * d).sum::<f64>() / ds.len() as f64).sqrt();
        let d2 = haversine_km(&u.pois[2].centroid, &home());
        let d3 = haversine_km(&u.pois[3].centroid, &home());
        assert!((dcd(&[0, 2, 3, 0]) - oracle(&[(1.0, d2), (1.0, d3)])).abs() < 1e-12);
        assert!((dcd(&[0, 2, 3, 0]) - 3.536).abs() < 0.001);
        assert!((dcd(&[4, 0, 4]) - 7.071).abs() < 0.001);
        assert_eq!(dcd(&[]), 0.0);
    }

    #[test]
    fn dcd_bins() {
        let s = ThresholdScheme::new(SchemeContext::DcdWorkday, &[5.0, 15.0]).unwrap();
        let series = DcdSeries {
            day_type: DayType::Workday,
            values: [0.0, 3.0, 7.0, 20.0].iter().enumerate().map(|(i, &v)| (date(i as u32 + 1), v)).collect(),
        };
        assert_eq!(dcd_features(&series, &s).unwrap().shares, [0.25; 4]);
        let zeros = DcdSeries { day_type: DayType::Workday, values: vec![(date(1), 0.0), (date(2), 0.0)] };
        assert_eq!(dcd_features(&zeros, &s).unwrap().shares, [1.0, 0.0, 0.0, 0.0]);
        let empty = DcdSeries { day_type: DayType::Workday, values: vec![] };
        assert!(dcd_features(&empty, &s).is_err());
        // right-closed edges
        assert_eq!((s.bin(5.0, false), s.bin(5.0 + 1e-9, false), s.bin(15.0, false)), (1, 2, 2));
    }

    #[test]
    fn snapping_moves_jitter_to_zero() {
        let series = DcdSeries { day_type: DayType::Offday, values: vec![(date(1), 0.004), (date(2), 0.02)] };
        let snapped = series.snapped(0.01);
        assert_eq!(snapped.values[0].1, 0.0);
        assert_eq!(snapped.values[1].1, 0.02);
    }

    #[test]
    fn scheme_validation() {
        assert!(ThresholdScheme::new(SchemeContext::OdOffday, &[1.0, 5.0]).is_err());
        assert!(ThresholdScheme::new(SchemeContext::OdWorkday, &[8.0, 2.0]).is_err());
        assert!(ThresholdScheme::new(SchemeContext::DcdOffday, &[0.0, 2.0]).is_err());
        let off = ThresholdScheme::new(SchemeContext::OdOffday, &[1.0, 5.0, 15.0]).unwrap();
        assert_eq!(off.bin(0.0, true), 0);
        assert_eq!(off.bin(1.0, false), 0);
        assert_eq!(off.bin(16.0, false), 3);
        assert_eq!(off.labels()[3], ">15km");
    }

    #[test]
    fn min_distance_rules() {
        let u = user(
            vec![
                poi(0, home(), None),
                poi(1, home().offset_km(0.0, 11.0), None),
                poi(2, home().offset_km(0.0, 10.0), None),
                poi(3, home().offset_km(7.0, 0.0), None),
            ],
            Some(1),
        );
        let d = |id: PoiId, dt| min_distance(u.poi(id).unwrap(), &u, dt).unwrap();
        assert!((d(3, DayType::Offday) - 7.0).abs() < 0.01);
        assert!((d(2, DayType::Workday) - 1.0).abs() < 0.01);
        assert_eq!(d(1, DayType::Workday), 0.0);
        let nonworking = user(vec![poi(0, home(), None), poi(3, home().offset_km(7.0, 0.0), None)], None);
        assert!(min_distance(nonworking.poi(3).unwrap(), &nonworking, DayType::Workday).is_err());
    }

    #[test]
    fn trip_rules() {
        let u = user(
            vec![poi(0, home(), Some("Z1")), poi(1, home(), Some("Z2")), poi(2, home(), Some("Z1")), poi(3, home(), None), poi(4, home(), None)],
            None,
        );
        let days = vec![day(1, DayType::Offday, &[0, 1]), day(2, DayType::Offday, &[0])];
        let trips = extract_trips(&days, &u);
        assert_eq!(trips, vec![Trip { origin: 0, dest: 1, date: date(1) }]);
        // same subzone
        assert!(extract_trips(&[day(1, DayType::Offday, &[0, 2])], &u).is_empty());
        // missing subzones compare distinct
        assert_eq!(extract_trips(&[day(1, DayType::Offday, &[3, 4])], &u).len(), 1);
        // same POI twice in a row
        assert!(extract_trips(&[day(1, DayType::Offday, &[3, 3])], &u).is_empty());
    }

    #[test]
    fn od_normalisation() {
        let u = user(
            vec![poi(0, home(), None), poi(1, home().offset_km(0.0, 20.0), None), poi(2, home().offset_km(4.0, 0.0), None)],
            Some(1),
        );
        let s = ThresholdScheme::new(SchemeContext::OdWorkday, &[2.0, 8.0]).unwrap();
        let one = [Trip { origin: 0, dest: 2, date: date(1) }];
        let m = od_matrix(&one, &u, &s, DayType::Workday).unwrap();
        assert_eq!(m.cells[0][2], 1.0);
        assert_eq!(m.cells.as_flattened().iter().sum::<f64>(), 1.0);
        let two = [one[0], Trip { origin: 2, dest: 1, date: date(1) }];
        let m = od_matrix(&two, &u, &s, DayType::Workday).unwrap();
        assert_eq!((m.cells[0][2], m.cells[2][0]), (0.5, 0.5));
        let none = od_matrix(&[], &u, &s, DayType::Workday).unwrap();
        assert!(none.is_degenerate());
        let off = ThresholdScheme::new(SchemeContext::OdOffday, &[1.0, 5.0, 15.0]).unwrap();
        assert!(od_matrix(&one, &u, &off, DayType::Workday).is_err());
    }

    #[test]
    fn feature_vector_order_and_guards() {
        let mut cells = [[0.0; 4]; 4];
        cells[0][1] = 0.75;
        cells[3][2] = 0.25;
        let od = OdMatrix::from_cells(cells).unwrap();
        let dcd = DcdFeatures::from_shares([0.1, 0.2, 0.3, 0.4]).unwrap();
        let v = build_feature_vector("u", DayType::Offday, &od, &dcd).unwrap();
        assert_eq!(v.values[1], 0.75);
        assert_eq!(v.values[14], 0.25);
        assert_eq!(&v.values[16..], &[0.1, 0.2, 0.3, 0.4]);
        let empty = OdMatrix { cells: [[0.0; 4]; 4], trip_count: 0 };
        assert!(matches!(build_feature_vector("u", DayType::Offday, &empty, &dcd), Err(Error::Excluded(_))));
        let mut swapped = cells;
        swapped[0][1] = 0.25;
        swapped[3][2] = 0.75;
        let w = build_feature_vector("u", DayType::Offday, &OdMatrix::from_cells(swapped).unwrap(), &dcd).unwrap();
        assert_ne!(v.values, w.values);
    }

    #[test]
    fn feature_csv_round_trip() {
        let mut values = [0.0; FEATURE_DIM];
        values[0] = 1.0;
        values[16] = 0.5;
        values[17] = 0.5;
        let v = vec![FeatureVector { user_id: "u1".into(), day_type: DayType::Workday, values }];
        let mut buf = Vec::new();
        write_features_csv(&mut buf, &v).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("user_id,day_type,od_00,od_01"));
        assert!(text.contains("u1,workday,1.000000,0.000000"));
        assert_eq!(read_features_csv(buf.as_slice()).unwrap(), v);
    }

    #[test]
    fn histogram_and_valleys() {
        assert!(histogram(&[], 1.0).is_err());
        assert_eq!(histogram(&[0.0, 0.5, 1.0, 2.5], 1.0).unwrap(), vec![2, 1, 1]);
        // deterministic bimodal sample: half near 2 km, half near 10 km
        let mut values = Vec::new();
        for i in 0..200 {
            let u = (i as f64 + 0.5) / 200.0;
            let spread = (u - 0.5) * 2.0;
            values.push(2.0 + spread);
            values.push(10.0 + 1.5 * spread);
        }
        let counts = histogram(&values, 0.5).unwrap();
        let valleys = suggest_valleys(&counts, 0.5, 3);
        // oracle: exhaustive scan for the lowest smoothed bin between the peaks
        let s = smooth_counts(&counts, 3);
        let (lo, hi) = ((2.0 / 0.5) as usize, (10.0 / 0.5) as usize);
        let min = s[lo..=hi].iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(min, 0.0);
        assert!(valleys.iter().any(|&v| v > 4.0 && v < 8.0), "{valleys:?}");
        // evenly spread values have no interior minimum
        let flat: Vec<f64> = (0..2000).map(|i| (i as f64 + 0.5) * 0.01).collect();
        assert!(suggest_valleys(&histogram(&flat, 1.0).unwrap(), 1.0, 3).is_empty());
    }
}
