//! POI categories from a reference catalog, and subzone assignment.

use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{haversine_km, GeoPoint, SubzoneMap, EARTH_RADIUS_KM};
use crate::poi::Poi;

/// The ten place types. Declaration order is the heatmap column order and
/// the tie-break order for equidistant catalog entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PoiCategory {
    Attraction,
    Healthcare,
    NeighborhoodCenter,
    Park,
    PlacesOfWorship,
    Playground,
    Recreational,
    ShoppingMall,
    Transportation,
    Residential,
}

impl PoiCategory {
    pub const ALL: [PoiCategory; 10] = [
        PoiCategory::Attraction,
        PoiCategory::Healthcare,
        PoiCategory::NeighborhoodCenter,
        PoiCategory::Park,
        PoiCategory::PlacesOfWorship,
        PoiCategory::Playground,
        PoiCategory::Recreational,
        PoiCategory::ShoppingMall,
        PoiCategory::Transportation,
        PoiCategory::Residential,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PoiCategory::Attraction => "Attraction",
            PoiCategory::Healthcare => "Healthcare",
            PoiCategory::NeighborhoodCenter => "NeighborhoodCenter",
            PoiCategory::Park => "Park",
            PoiCategory::PlacesOfWorship => "PlacesOfWorship",
            PoiCategory::Playground => "Playground",
            PoiCategory::Recreational => "Recreational",
            PoiCategory::ShoppingMall => "ShoppingMall",
            PoiCategory::Transportation => "Transportation",
            PoiCategory::Residential => "Residential",
        }
    }
}

impl fmt::Display for PoiCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PoiCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PoiCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::UnknownCategory(vec![s.to_string()]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub point: GeoPoint,
    pub category: PoiCategory,
    pub name: String,
}

/// Reference places with known types.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelCatalog {
    pub entries: Vec<CatalogEntry>,
}

#[derive(Deserialize, Serialize)]
struct CatalogRow {
    lat: f64,
    lon: f64,
    category: String,
    name: String,
}

impl LabelCatalog {
    pub fn new(entries: Vec<CatalogEntry>) -> Self {
        LabelCatalog { entries }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Reads `lat,lon,category,name` rows. Every unknown category is
    /// reported in one error.
    pub fn from_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let mut entries = Vec::new();
        let mut unknown: Vec<String> = Vec::new();
        for row in reader.deserialize::<CatalogRow>() {
            let row = row?;
            match row.category.parse::<PoiCategory>() {
                Ok(category) => entries.push(CatalogEntry {
                    point: GeoPoint::new(row.lat, row.lon)?,
                    category,
                    name: row.name,
                }),
                Err(_) => {
                    if !unknown.contains(&row.category) {
                        unknown.push(row.category);
                    }
                }
            }
        }
        if !unknown.is_empty() {
            return Err(Error::UnknownCategory(unknown));
        }
        Ok(LabelCatalog { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::from(e).at_path(path))?;
        LabelCatalog::from_csv(file).map_err(|e| e.at_path(path))
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for e in &self.entries {
            w.serialize(CatalogRow {
                lat: e.point.lat(),
                lon: e.point.lon(),
                category: e.category.to_string(),
                name: e.name.clone(),
            })?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelMatch {
    pub category: PoiCategory,
    pub entry_index: usize,
    pub distance_km: f64,
}

/// Nearest catalog entry within `max_m` (inclusive). Equal distances go to
/// the earlier category, then the earlier catalog entry.
pub fn nearest_label(point: &GeoPoint, catalog: &LabelCatalog, max_m: f64) -> Option<LabelMatch> {
    let max_km = max_m / 1000.0;
    // Bounding-box prefilter, padded slightly so it never rejects a hit.
    let dlat = (max_km / EARTH_RADIUS_KM).to_degrees() * 1.01;
    let cos_lat = point.lat().to_radians().cos();
    let dlon = if cos_lat > 1e-6 { dlat / cos_lat } else { f64::INFINITY };

    let mut best: Option<LabelMatch> = None;
    for (entry_index, entry) in catalog.entries.iter().enumerate() {
        if (entry.point.lat() - point.lat()).abs() > dlat {
            continue;
        }
        let raw_dlon = (entry.point.lon() - point.lon()).abs();
        if raw_dlon.min(360.0 - raw_dlon) > dlon {
            continue;
        }
        let distance_km = haversine_km(point, &entry.point);
        if distance_km > max_km {
            continue;
        }
        let candidate = LabelMatch { category: entry.category, entry_index, distance_km };
        best = match best {
            Some(b)
                if (b.distance_km, b.category, b.entry_index)
                    <= (candidate.distance_km, candidate.category, candidate.entry_index) =>
            {
                Some(b)
            }
            _ => Some(candidate),
        };
    }
    best
}

pub fn assign_category(poi: &Poi, catalog: &LabelCatalog, max_m: f64) -> Option<PoiCategory> {
    nearest_label(&poi.centroid, catalog, max_m).map(|m| m.category)
}

/// Sets category and subzone on every POI. Running it twice is a no-op.
pub fn label_all(pois: &[Poi], catalog: &LabelCatalog, subzones: &SubzoneMap, max_m: f64) -> Vec<Poi> {
    if catalog.is_empty() {
        log::warn!("label catalog is empty; all POIs stay unlabeled");
    }
    pois.iter()
        .map(|p| Poi {
            category: assign_category(p, catalog, max_m),
            subzone: subzones.locate(&p.centroid).map(str::to_string),
            ..p.clone()
        })
        .collect()
}
