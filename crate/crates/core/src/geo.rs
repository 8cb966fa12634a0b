//! Spherical distance, coordinate averaging and subzone lookup.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Mean Earth radius in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Largest bounding-box diagonal accepted by [`mean_coordinate`].
pub const MAX_AVERAGING_SPAN_KM: f64 = 100.0;

/// A validated WGS84 position in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPoint")]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

#[derive(Deserialize)]
struct RawPoint {
    lat: f64,
    lon: f64,
}

impl TryFrom<RawPoint> for GeoPoint {
    type Error = Error;

    fn try_from(raw: RawPoint) -> Result<Self> {
        GeoPoint::new(raw.lat, raw.lon)
    }
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(Error::InvalidInput(format!(
                "non-finite coordinate ({lat}, {lon})"
            )));
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(Error::InvalidInput(format!(
                "latitude {lat} outside [-90, 90]"
            )));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(Error::InvalidInput(format!(
                "longitude {lon} outside [-180, 180]"
            )));
        }
        Ok(GeoPoint { lat, lon })
    }

    #[inline]
    pub fn lat(&self) -> f64 {
        self.lat
    }

    #[inline]
    pub fn lon(&self) -> f64 {
        self.lon
    }

    /// Moves the point by `north_km` and `east_km` using a local flat-earth
    /// approximation. Clamps to the valid coordinate range.
    pub fn offset_km(&self, north_km: f64, east_km: f64) -> GeoPoint {
        let dlat = (north_km / EARTH_RADIUS_KM).to_degrees();
        let dlon = (east_km / (EARTH_RADIUS_KM * self.lat.to_radians().cos())).to_degrees();
        GeoPoint {
            lat: (self.lat + dlat).clamp(-90.0, 90.0),
            lon: (self.lon + dlon).clamp(-180.0, 180.0),
        }
    }
}

/// Great-circle distance in kilometres.
pub fn haversine_km(a: &GeoPoint, b: &GeoPoint) -> f64 {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let half_dphi = (phi2 - phi1) * 0.5;
    let half_dlambda = (b.lon - a.lon).to_radians() * 0.5;
    let h = half_dphi.sin().powi(2) + phi1.cos() * phi2.cos() * half_dlambda.sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.clamp(0.0, 1.0).sqrt().asin()
}

/// Component-wise arithmetic mean of a set of nearby points.
///
/// Only meaningful for points in one small region; a bounding box whose
/// diagonal reaches [`MAX_AVERAGING_SPAN_KM`] is rejected.
pub fn mean_coordinate(points: &[GeoPoint]) -> Result<GeoPoint> {
    if points.is_empty() {
        return Err(Error::EmptyInput("mean_coordinate needs at least one point"));
    }
    let (mut min_lat, mut max_lat) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_lon, mut max_lon) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum_lat, mut sum_lon) = (0.0, 0.0);
    for p in points {
        min_lat = min_lat.min(p.lat);
        max_lat = max_lat.max(p.lat);
        min_lon = min_lon.min(p.lon);
        max_lon = max_lon.max(p.lon);
        sum_lat += p.lat;
        sum_lon += p.lon;
    }
    let span_km = haversine_km(
        &GeoPoint { lat: min_lat, lon: min_lon },
        &GeoPoint { lat: max_lat, lon: max_lon },
    );
    if span_km >= MAX_AVERAGING_SPAN_KM {
        return Err(Error::OutOfRegion {
            span_km,
            limit_km: MAX_AVERAGING_SPAN_KM,
        });
    }
    let n = points.len() as f64;
    // The mean of in-range values is in range; clamp guards rounding.
    Ok(GeoPoint {
        lat: (sum_lat / n).clamp(min_lat, max_lat),
        lon: (sum_lon / n).clamp(min_lon, max_lon),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct BBox {
    min_lat: f64,
    max_lat: f64,
    min_lon: f64,
    max_lon: f64,
}

impl BBox {
    fn of(ring: &[GeoPoint]) -> BBox {
        ring.iter().fold(
            BBox {
                min_lat: f64::INFINITY,
                max_lat: f64::NEG_INFINITY,
                min_lon: f64::INFINITY,
                max_lon: f64::NEG_INFINITY,
            },
            |b, p| BBox {
                min_lat: b.min_lat.min(p.lat),
                max_lat: b.max_lat.max(p.lat),
                min_lon: b.min_lon.min(p.lon),
                max_lon: b.max_lon.max(p.lon),
            },
        )
    }

    fn union(self, other: BBox) -> BBox {
        BBox {
            min_lat: self.min_lat.min(other.min_lat),
            max_lat: self.max_lat.max(other.max_lat),
            min_lon: self.min_lon.min(other.min_lon),
            max_lon: self.max_lon.max(other.max_lon),
        }
    }

    fn contains(&self, p: &GeoPoint) -> bool {
        p.lat >= self.min_lat && p.lat <= self.max_lat && p.lon >= self.min_lon && p.lon <= self.max_lon
    }
}

/// One polygon: an outer ring and optional holes, all explicitly closed.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    outer: Vec<GeoPoint>,
    holes: Vec<Vec<GeoPoint>>,
}

impl Polygon {
    pub fn new(outer: Vec<GeoPoint>, holes: Vec<Vec<GeoPoint>>) -> Result<Self> {
        Ok(Polygon {
            outer: close_ring(outer)?,
            holes: holes.into_iter().map(close_ring).collect::<Result<_>>()?,
        })
    }

    pub fn outer(&self) -> &[GeoPoint] {
        &self.outer
    }

    fn contains(&self, p: &GeoPoint) -> bool {
        match ring_position(&self.outer, p) {
            RingPosition::Outside => false,
            RingPosition::Boundary => true,
            RingPosition::Inside => self
                .holes
                .iter()
                .all(|h| ring_position(h, p) != RingPosition::Inside),
        }
    }
}

fn close_ring(mut ring: Vec<GeoPoint>) -> Result<Vec<GeoPoint>> {
    if ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    if ring.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "polygon ring needs at least 3 distinct vertices, got {}",
            ring.len()
        )));
    }
    ring.push(ring[0]);
    Ok(ring)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RingPosition {
    Inside,
    Boundary,
    Outside,
}

/// Even-odd test in the (lon, lat) plane with the closed-boundary convention.
fn ring_position(ring: &[GeoPoint], p: &GeoPoint) -> RingPosition {
    let (x, y) = (p.lon, p.lat);
    let mut inside = false;
    for edge in ring.windows(2) {
        let (x1, y1) = (edge[0].lon, edge[0].lat);
        let (x2, y2) = (edge[1].lon, edge[1].lat);
        if on_segment(x, y, x1, y1, x2, y2) {
            return RingPosition::Boundary;
        }
        if (y1 > y) != (y2 > y) {
            let x_cross = x1 + (y - y1) * (x2 - x1) / (y2 - y1);
            if x < x_cross {
                inside = !inside;
            }
        }
    }
    if inside {
        RingPosition::Inside
    } else {
        RingPosition::Outside
    }
}

fn on_segment(x: f64, y: f64, x1: f64, y1: f64, x2: f64, y2: f64) -> bool {
    const EPS: f64 = 1e-12;
    if x < x1.min(x2) - EPS || x > x1.max(x2) + EPS || y < y1.min(y2) - EPS || y > y1.max(y2) + EPS {
        return false;
    }
    let cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1);
    let scale = (x2 - x1).abs().max((y2 - y1).abs()).max(1.0);
    cross.abs() <= EPS * scale
}

#[derive(Debug, Clone, PartialEq)]
pub struct Zone {
    id: String,
    polygons: Vec<Polygon>,
    bbox: BBox,
}

impl Zone {
    pub fn new(id: impl Into<String>, polygons: Vec<Polygon>) -> Result<Self> {
        let id = id.into();
        let bbox = polygons
            .iter()
            .map(|p| BBox::of(&p.outer))
            .reduce(BBox::union)
            .ok_or_else(|| Error::InvalidInput(format!("zone {id} has no polygon")))?;
        Ok(Zone { id, polygons, bbox })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn polygons(&self) -> &[Polygon] {
        &self.polygons
    }

    pub fn contains(&self, p: &GeoPoint) -> bool {
        self.bbox.contains(p) && self.polygons.iter().any(|poly| poly.contains(p))
    }
}

/// Administrative areas used to suppress intra-area trips.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SubzoneMap {
    /// Sorted by id so the first hit is the lexicographically smallest.
    zones: Vec<Zone>,
}

pub const DEFAULT_ZONE_PROPERTY: &str = "SUBZONE_N";

impl SubzoneMap {
    pub fn new(mut zones: Vec<Zone>) -> Result<Self> {
        let mut seen = HashSet::new();
        for z in &zones {
            if !seen.insert(z.id.clone()) {
                return Err(Error::InvalidInput(format!("duplicate zone id {}", z.id)));
            }
        }
        zones.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(SubzoneMap { zones })
    }

    pub fn zones(&self) -> &[Zone] {
        &self.zones
    }

    pub fn is_empty(&self) -> bool {
        self.zones.is_empty()
    }

    /// Zone containing `p`, boundary inclusive. Overlapping zones resolve
    /// to the smallest id.
    pub fn locate(&self, p: &GeoPoint) -> Option<&str> {
        self.zones.iter().find(|z| z.contains(p)).map(|z| z.id.as_str())
    }

    /// Parses a GeoJSON FeatureCollection of Polygon/MultiPolygon features.
    pub fn from_geojson(text: &str, id_property: &str) -> Result<Self> {
        let root: Value = serde_json::from_str(text)?;
        let features = root
            .get("features")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::InvalidInput("GeoJSON has no `features` array".into()))?;
        let mut zones = Vec::with_capacity(features.len());
        for (i, feature) in features.iter().enumerate() {
            let id = match feature.get("properties").and_then(|p| p.get(id_property)) {
                Some(Value::String(s)) => s.clone(),
                Some(Value::Number(n)) => n.to_string(),
                _ => {
                    return Err(Error::InvalidInput(format!(
                        "feature {i} lacks property `{id_property}`"
                    )))
                }
            };
            let geometry = feature
                .get("geometry")
                .ok_or_else(|| Error::InvalidInput(format!("feature {i} has no geometry")))?;
            let coords = geometry.get("coordinates").unwrap_or(&Value::Null);
            let polygons = match geometry.get("type").and_then(Value::as_str) {
                Some("Polygon") => vec![parse_polygon(coords)?],
                Some("MultiPolygon") => coords
                    .as_array()
                    .ok_or_else(|| Error::InvalidInput("MultiPolygon coordinates not an array".into()))?
                    .iter()
                    .map(parse_polygon)
                    .collect::<Result<_>>()?,
                other => {
                    return Err(Error::InvalidInput(format!(
                        "feature {i}: unsupported geometry type {other:?}"
                    )))
                }
            };
            zones.push(Zone::new(id, polygons)?);
        }
        SubzoneMap::new(zones)
    }

    pub fn load(path: &Path, id_property: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).at_path(path))?;
        SubzoneMap::from_geojson(&text, id_property).map_err(|e| e.at_path(path))
    }

    pub fn to_geojson(&self, id_property: &str) -> Value {
        let ring = |r: &[GeoPoint]| -> Value {
            Value::Array(r.iter().map(|p| serde_json::json!([p.lon, p.lat])).collect())
        };
        let features: Vec<Value> = self
            .zones
            .iter()
            .map(|z| {
                let polys: Vec<Value> = z
                    .polygons
                    .iter()
                    .map(|p| {
                        let mut rings = vec![ring(&p.outer)];
                        rings.extend(p.holes.iter().map(|h| ring(h)));
                        Value::Array(rings)
                    })
                    .collect();
                let geometry = if polys.len() == 1 {
                    serde_json::json!({"type": "Polygon", "coordinates": polys[0]})
                } else {
                    serde_json::json!({"type": "MultiPolygon", "coordinates": polys})
                };
                serde_json::json!({
                    "type": "Feature",
                    "properties": { id_property: z.id },
                    "geometry": geometry,
                })
            })
            .collect();
        serde_json::json!({"type": "FeatureCollection", "features": features})
    }
}

fn parse_polygon(coords: &Value) -> Result<Polygon> {
    let rings = coords
        .as_array()
        .ok_or_else(|| Error::InvalidInput("polygon coordinates not an array".into()))?;
    let mut parsed = rings.iter().map(parse_ring);
    let outer = parsed
        .next()
        .ok_or_else(|| Error::InvalidInput("polygon has no rings".into()))??;
    let holes = parsed.collect::<Result<Vec<_>>>()?;
    Polygon::new(outer, holes)
}

fn parse_ring(ring: &Value) -> Result<Vec<GeoPoint>> {
    ring.as_array()
        .ok_or_else(|| Error::InvalidInput("ring not an array".into()))?
        .iter()
        .map(|pos| match pos.as_array().map(Vec::as_slice) {
            Some([lon, lat, ..]) => match (lon.as_f64(), lat.as_f64()) {
                (Some(lon), Some(lat)) => GeoPoint::new(lat, lon),
                _ => Err(Error::InvalidInput("non-numeric position".into())),
            },
            _ => Err(Error::InvalidInput("position needs [lon, lat]".into())),
        })
        .collect()
}
