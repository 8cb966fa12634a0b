//! Per-cluster analytics: user commonality and average frequency heatmaps
//! over (distance bin, POI category), and DCD violin-plot data.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{min_distance, DcdSeries, ThresholdScheme};
use crate::labeling::PoiCategory;
use crate::poi::{DayRecord, DayType, PoiId, UserPois};

pub const ROWS: usize = 4;
pub const COLS: usize = 10;

pub type Grid = [[f64; COLS]; ROWS];

/// One labeled visit, reduced to its heatmap cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellVisit {
    pub row: usize,
    pub category: PoiCategory,
    pub poi_id: PoiId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemberCells {
    pub user_id: String,
    pub visits: Vec<CellVisit>,
}

/// Labeled visits on days of `day_type`, binned by minimum distance under
/// the day type's OD scheme. Unlabeled POIs are dropped.
pub fn member_cells(user: &UserPois, days: &[DayRecord], day_type: DayType, scheme: &ThresholdScheme) -> Result<MemberCells> {
    let mut visits = Vec::new();
    let mut rows: BTreeMap<PoiId, usize> = BTreeMap::new();
    for day in days.iter().filter(|d| d.day_type == day_type) {
        for v in &day.visits {
            let Some(poi) = user.poi(v.poi_id) else {
                return Err(Error::Precondition(format!("visit to unknown POI {}", v.poi_id)));
            };
            let Some(category) = poi.category else {
                continue;
            };
            let row = match rows.get(&v.poi_id) {
                Some(&r) => r,
                None => {
                    let r = scheme.bin(min_distance(poi, user, day_type)?, user.profile.is_anchor(v.poi_id));
                    rows.insert(v.poi_id, r);
                    r
                }
            };
            visits.push(CellVisit { row, category, poi_id: v.poi_id });
        }
    }
    Ok(MemberCells { user_id: user.user_id().to_string(), visits })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeatmapKind {
    Commonality,
    Frequency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FrequencyUnit {
    /// Each visit counts once.
    #[default]
    Visits,
    /// Each distinct POI counts once.
    Pois,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    pub cluster_id: usize,
    pub kind: HeatmapKind,
    pub row_labels: [String; ROWS],
    pub cells: Grid,
    /// Users in the denominator.
    pub counted_users: usize,
    /// Users left out of the denominator for having no labeled visit.
    pub skipped_users: Vec<String>,
}

/// Share of members who ever visited each cell.
pub fn user_commonality(cluster_id: usize, members: &[MemberCells], row_labels: [String; ROWS]) -> Result<HeatmapGrid> {
    if members.is_empty() {
        return Err(Error::Parameter(format!("cluster {cluster_id} is empty")));
    }
    let mut counts = [[0usize; COLS]; ROWS];
    for m in members {
        let seen: BTreeSet<(usize, usize)> = m.visits.iter().map(|c| (c.row, c.category.index())).collect();
        for (r, c) in seen {
            counts[r][c] += 1;
        }
    }
    let n = members.len() as f64;
    Ok(HeatmapGrid {
        cluster_id,
        kind: HeatmapKind::Commonality,
        row_labels,
        cells: counts.map(|row| row.map(|c| c as f64 / n)),
        counted_users: members.len(),
        skipped_users: Vec::new(),
    })
}

/// One member's share of labeled visits (or POIs) in each cell.
pub fn member_frequency(member: &MemberCells, unit: FrequencyUnit) -> Option<Grid> {
    let mut counts = [[0usize; COLS]; ROWS];
    let total = match unit {
        FrequencyUnit::Visits => {
            for c in &member.visits {
                counts[c.row][c.category.index()] += 1;
            }
            member.visits.len()
        }
        FrequencyUnit::Pois => {
            let distinct: BTreeSet<(PoiId, usize, usize)> =
                member.visits.iter().map(|c| (c.poi_id, c.row, c.category.index())).collect();
            for &(_, r, c) in &distinct {
                counts[r][c] += 1;
            }
            distinct.len()
        }
    };
    if total == 0 {
        return None;
    }
    Some(counts.map(|row| row.map(|c| c as f64 / total as f64)))
}

/// Mean over members of each member's per-cell share.
pub fn average_frequency(
    cluster_id: usize,
    members: &[MemberCells],
    row_labels: [String; ROWS],
    unit: FrequencyUnit,
) -> Result<HeatmapGrid> {
    if members.is_empty() {
        return Err(Error::Parameter(format!("cluster {cluster_id} is empty")));
    }
    let mut sum: Grid = [[0.0; COLS]; ROWS];
    let mut counted = 0usize;
    let mut skipped = Vec::new();
    for m in members {
        match member_frequency(m, unit) {
            Some(g) => {
                counted += 1;
                for (srow, grow) in sum.iter_mut().zip(g.iter()) {
                    for (s, v) in srow.iter_mut().zip(grow) {
                        *s += v;
                    }
                }
            }
            None => skipped.push(m.user_id.clone()),
        }
    }
    if counted == 0 {
        return Err(Error::DegenerateGrid);
    }
    Ok(HeatmapGrid {
        cluster_id,
        kind: HeatmapKind::Frequency,
        row_labels,
        cells: sum.map(|row| row.map(|s| s / counted as f64)),
        counted_users: counted,
        skipped_users: skipped,
    })
}

pub fn write_heatmaps_csv<W: Write>(out: W, grids: &[HeatmapGrid]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["cluster_id", "kind", "row_bin", "category", "value"])?;
    for g in grids {
        let kind = match g.kind {
            HeatmapKind::Commonality => "commonality",
            HeatmapKind::Frequency => "frequency",
        };
        for (r, label) in g.row_labels.iter().enumerate() {
            for cat in PoiCategory::ALL {
                w.write_record([
                    g.cluster_id.to_string(),
                    kind.to_string(),
                    label.clone(),
                    cat.to_string(),
                    format!("{:.6}", g.cells[r][cat.index()]),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolinRecord {
    pub user_id: String,
    pub cluster_id: Option<usize>,
    pub working: bool,
    pub home_work_km: Option<f64>,
    /// Non-zero DCD values, ascending.
    pub values: Vec<f64>,
    pub median: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolinExport {
    pub day_type: DayType,
    pub records: Vec<ViolinRecord>,
}

pub fn median(sorted: &[f64]) -> Option<f64> {
    let n = sorted.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(sorted[n / 2]),
        _ => Some((sorted[n / 2 - 1] + sorted[n / 2]) / 2.0),
    }
}

pub struct ViolinMember<'a> {
    pub user: &'a UserPois,
    pub cluster_id: Option<usize>,
    /// Snapped DCD series for the export's day type.
    pub series: &'a DcdSeries,
}

/// Per-user non-zero DCD distributions. Workday records sort by Home-Work
/// distance, Offday records by median; users without a non-zero day last.
pub fn violin_export(members: &[ViolinMember<'_>], day_type: DayType) -> ViolinExport {
    let mut records: Vec<ViolinRecord> = members
        .iter()
        .map(|m| {
            let mut values: Vec<f64> = m.series.values.iter().map(|&(_, v)| v).filter(|&v| v > 0.0).collect();
            values.sort_by(f64::total_cmp);
            ViolinRecord {
                user_id: m.user.user_id().to_string(),
                cluster_id: m.cluster_id,
                working: m.user.profile.is_working(),
                home_work_km: m.user.profile.home_work_km,
                median: median(&values),
                values,
            }
        })
        .collect();
    let key = |r: &ViolinRecord| match day_type {
        DayType::Workday => r.home_work_km,
        DayType::Offday => r.median,
    };
    records.sort_by(|a, b| {
        a.values
            .is_empty()
            .cmp(&b.values.is_empty())
            .then_with(|| match (key(a), key(b)) {
                (Some(x), Some(y)) => x.total_cmp(&y),
                (Some(_), None) => std::cmp::Ordering::Less,
                (None, Some(_)) => std::cmp::Ordering::Greater,
                (None, None) => std::cmp::Ordering::Equal,
            })
            .then_with(|| a.user_id.cmp(&b.user_id))
    });
    ViolinExport { day_type, records }
}

/// Upper colour-scale limit for frequency heatmaps.
pub fn frequency_color_cap(day_type: DayType) -> f64 {
    match day_type {
        DayType::Workday => 0.25,
        DayType::Offday => 0.17,
    }
}

/// Declarative chart specifications for the heatmap and violin outputs.
pub fn plot_spec(day_type: DayType, heatmap_file: &str, violin_file: &str) -> serde_json::Value {
    let heatmap = |kind: &str, cap: f64| {
        serde_json::json!({
            "title": format!("{day_type} {kind}"),
            "data": { "url": heatmap_file, "format": "csv" },
            "transform": [{ "filter": { "field": "kind", "equal": kind } }],
            "facet": { "column": { "field": "cluster_id", "type": "ordinal" } },
            "spec": {
                "mark": "rect",
                "encoding": {
                    "x": { "field": "category", "type": "nominal",
                           "sort": PoiCategory::ALL.iter().map(|c| c.as_str()).collect::<Vec<_>>() },
                    "y": { "field": "row_bin", "type": "ordinal", "sort": null },
                    "color": { "field": "value", "type": "quantitative",
                               "scale": { "domain": [0.0, cap], "clamp": true } }
                }
            }
        })
    };
    serde_json::json!({
        "day_type": day_type,
        "figures": [
            heatmap("commonality", 1.0),
            heatmap("frequency", frequency_color_cap(day_type)),
            {
                "title": format!("{day_type} DCD distributions"),
                "data": { "url": violin_file, "format": "json" },
                "transform": [{ "flatten": ["values"] }],
                "mark": "violin",
                "encoding": {
                    "x": { "field": "user_id", "type": "nominal", "sort": null },
                    "y": { "field": "values", "type": "quantitative", "title": "DCD (km)" },
                    "color": { "field": if day_type == DayType::Workday { "cluster_id" } else { "working" },
                               "type": "nominal" }
                }
            }
        ]
    })
}
