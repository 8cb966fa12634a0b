//! Brute-force evaluators written independently of the library code, used
//! as oracles by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

pub const R_KM: f64 = 6371.0088;

/// Great-circle distance via the atan2 form of the haversine formula.
pub fn great_circle_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * R_KM * a.sqrt().atan2((1.0 - a).max(0.0).sqrt())
}

/// Radius of gyration evaluated directly: centre of mass by plain averaging, then the
/// root mean square of great-circle distances to it.
pub fn gyration_radius(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let clat = points.iter().map(|p| p.0).sum::<f64>() / n;
    let clon = points.iter().map(|p| p.1).sum::<f64>() / n;
    let ss: f64 = points.iter().map(|p| great_circle_km(p.0, p.1, clat, clon).powi(2)).sum();
    (ss / n).sqrt()
}

/// Daily characteristic distance from a raw visit list, given the
/// positions of every visited place, Home, and the anchor ids.
pub fn characteristic_distance(
    visits: &[u32],
    coords: &BTreeMap<u32, (f64, f64)>,
    home: (f64, f64),
    anchors: &BTreeSet<u32>,
) -> f64 {
    let mut freq: BTreeMap<u32, f64> = BTreeMap::new();
    for v in visits.iter().filter(|v| !anchors.contains(v)) {
        *freq.entry(*v).or_default() += 1.0;
    }
    if freq.is_empty() {
        return 0.0;
    }
    let nd = freq.len() as f64;
    let total: f64 = freq
        .iter()
        .map(|(id, f)| {
            let (lat, lon) = coords[id];
            f * great_circle_km(lat, lon, home.0, home.1).powi(2)
        })
        .sum();
    (total / nd).sqrt()
}

fn partition_sse(points: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let d = points[0].len();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, x) in sums[l].iter_mut().zip(p) {
            *s += x;
        }
    }
    points
        .iter()
        .zip(labels)
        .map(|(p, &l)| {
            p.iter()
                .zip(&sums[l])
                .map(|(x, s)| (x - s / counts[l] as f64).powi(2))
                .sum::<f64>()
        })
        .sum()
}

/// Minimum SSE over every partition of `points` into exactly `k` non-empty
/// groups, enumerated as restricted growth strings.
pub fn optimal_sse(points: &[Vec<f64>], k: usize) -> f64 {
    let n = points.len();
    let mut labels = vec![0usize; n];
    let mut best = f64::INFINITY;
    fn walk(i: usize, used: usize, k: usize, labels: &mut Vec<usize>, points: &[Vec<f64>], best: &mut f64) {
        let n = labels.len();
        if n - i < k - used {
            return;
        }
        if i == n {
            if used == k {
                *best = best.min(partition_sse(points, labels, k));
            }
            return;
        }
        for l in 0..(used + 1).min(k) {
            labels[i] = l;
            walk(i + 1, used.max(l + 1), k, labels, points, best);
        }
    }
    walk(0, 0, k, &mut labels, points, &mut best);
    best
}

/// Heatmap cell of one labeled visit: (row, category column).
pub type Cell = (usize, usize);

/// Share of users with at least one visit in each cell.
pub fn commonality(users: &[Vec<Cell>]) -> [[f64; 10]; 4] {
    let mut out = [[0.0; 10]; 4];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            let n = users.iter().filter(|u| u.contains(&(r, c))).count();
            *cell = n as f64 / users.len() as f64;
        }
    }
    out
}

/// One user's P_ijk grid of visit shares, or `None` without labeled visits.
pub fn user_shares(cells: &[Cell]) -> Option<[[f64; 10]; 4]> {
    if cells.is_empty() {
        return None;
    }
    let mut out = [[0.0; 10]; 4];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            *cell = cells.iter().filter(|&&x| x == (r, c)).count() as f64 / cells.len() as f64;
        }
    }
    Some(out)
}

/// Mean of per-user grids over users with labeled visits.
pub fn frequency(users: &[Vec<Cell>]) -> Option<[[f64; 10]; 4]> {
    let grids: Vec<_> = users.iter().filter_map(|u| user_shares(u)).collect();
    if grids.is_empty() {
        return None;
    }
    let mut out = [[0.0; 10]; 4];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            *cell = grids.iter().map(|g| g[r][c]).sum::<f64>() / grids.len() as f64;
        }
    }
    Some(out)
}

/// Distance bin by hand: left-open, right-closed intervals; zero goes to
/// the first interval.
pub fn bin_by_edges(km: f64, edges: &[f64]) -> usize {
    edges.iter().take_while(|&&e| km > e).count()
}
