//! k-means over feature vectors, SSE curves and elbow selection, plus the
//! correlation and partition-agreement statistics used to validate them.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub restarts: usize,
    pub max_iter: usize,
    /// Lloyd iterations stop once no centroid moves further than this.
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            k: 3,
            seed: 42,
            restarts: 50,
            max_iter: 300,
            tol: 1e-6,
        }
    }
}

/// Result of one seeded Lloyd run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartRun {
    pub restart: usize,
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub sse: f64,
    pub iterations: usize,
    /// SSE after the initial assignment and after every iteration.
    pub sse_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub seed: u64,
    pub centroids: Vec<Vec<f64>>,
    /// Cluster index per input vector, in input order.
    pub assignments: Vec<usize>,
    pub sse: f64,
    pub iterations: usize,
    /// Restart that produced this model.
    pub restart: usize,
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_shape<V: AsRef<[f64]>>(vectors: &[V], k: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::Parameter("k must be at least 1".into()));
    }
    if k > vectors.len() {
        return Err(Error::Parameter(format!(
            "k = {k} exceeds the number of vectors ({})",
            vectors.len()
        )));
    }
    let dim = vectors[0].as_ref().len();
    if let Some(i) = vectors.iter().position(|v| v.as_ref().len() != dim) {
        return Err(Error::Shape(format!(
            "vector {i} has length {}, expected {dim}",
            vectors[i].as_ref().len()
        )));
    }
    if vectors.iter().any(|v| v.as_ref().iter().any(|x| !x.is_finite())) {
        return Err(Error::InvalidInput("non-finite feature value".into()));
    }
    Ok(dim)
}

/// Independent PRNG stream for one restart.
pub fn restart_rng(seed: u64, restart: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    rng
}

fn plus_plus_init<V: AsRef<[f64]>>(data: &[V], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = data.len();
    let mut centroids = vec![data[rng.random_range(0..n)].as_ref().to_vec()];
    let mut d2: Vec<f64> = data.iter().map(|x| sq_dist(x.as_ref(), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = data[pick].as_ref().to_vec();
        for (d, x) in d2.iter_mut().zip(data) {
            *d = d.min(sq_dist(x.as_ref(), &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Nearest centroid per vector; ties go to the lowest index.
fn assign<V: AsRef<[f64]>>(data: &[V], centroids: &[Vec<f64>]) -> Vec<usize> {
    data.iter()
        .map(|x| {
            let mut best = (0, f64::INFINITY);
            for (j, c) in centroids.iter().enumerate() {
                let d = sq_dist(x.as_ref(), c);
                if d < best.1 {
                    best = (j, d);
                }
            }
            best.0
        })
        .collect()
}

fn total_sse<V: AsRef<[f64]>>(data: &[V], centroids: &[Vec<f64>], assignments: &[usize]) -> f64 {
    data.iter()
        .zip(assignments)
        .map(|(x, &a)| sq_dist(x.as_ref(), &centroids[a]))
        .sum()
}

/// Moves the point farthest from its centroid into each empty cluster.
fn repair_empty<V: AsRef<[f64]>>(data: &[V], centroids: &mut [Vec<f64>], assignments: &mut [usize]) {
    let k = centroids.len();
    loop {
        let mut sizes = vec![0usize; k];
        for &a in assignments.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let far = (0..data.len())
            .filter(|&i| sizes[assignments[i]] > 1)
            .map(|i| (i, sq_dist(data[i].as_ref(), &centroids[assignments[i]])))
            .fold(None::<(usize, f64)>, |best, (i, d)| match best {
                Some((_, bd)) if bd >= d => best,
                _ => Some((i, d)),
            });
        let Some((i, _)) = far else {
            return;
        };
        assignments[i] = empty;
        centroids[empty] = data[i].as_ref().to_vec();
    }
}

fn update_centroids<V: AsRef<[f64]>>(data: &[V], assignments: &[usize], centroids: &mut [Vec<f64>]) -> f64 {
    let dim = centroids[0].len();
    let k = centroids.len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (x, &a) in data.iter().zip(assignments) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(x.as_ref()) {
            *s += v;
        }
    }
    let mut shift: f64 = 0.0;
    for j in 0..k {
        if counts[j] == 0 {
            continue;
        }
        let mean: Vec<f64> = sums[j].iter().map(|s| s / counts[j] as f64).collect();
        shift = shift.max(sq_dist(&mean, &centroids[j]).sqrt());
        centroids[j] = mean;
    }
    shift
}

/// One k-means++ seeded Lloyd run. `restart` selects the PRNG stream.
pub fn kmeans_restart<V: AsRef<[f64]> + Sync>(
    vectors: &[V],
    k: usize,
    seed: u64,
    restart: usize,
    max_iter: usize,
    tol: f64,
) -> Result<RestartRun> {
    check_shape(vectors, k)?;
    let mut rng = restart_rng(seed, restart);
    let mut centroids = plus_plus_init(vectors, k, &mut rng);
    let mut assignments = assign(vectors, &centroids);
    repair_empty(vectors, &mut centroids, &mut assignments);
    let mut trace = vec![total_sse(vectors, &centroids, &assignments)];
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let shift = update_centroids(vectors, &assignments, &mut centroids);
        let mut next = assign(vectors, &centroids);
        repair_empty(vectors, &mut centroids, &mut next);
        let changed = next != assignments;
        assignments = next;
        trace.push(total_sse(vectors, &centroids, &assignments));
        if !changed || shift < tol {
            break;
        }
    }
    // Leave centroids at the member means of the final assignment.
    update_centroids(vectors, &assignments, &mut centroids);
    let sse = total_sse(vectors, &centroids, &assignments);
    Ok(RestartRun {
        restart,
        centroids,
        assignments,
        sse,
        iterations,
        sse_trace: trace,
    })
}

/// Best of `cfg.restarts` k-means++ runs by SSE, ties to the earlier restart.
pub fn kmeans<V: AsRef<[f64]> + Sync>(vectors: &[V], cfg: &KMeansConfig) -> Result<ClusterModel> {
    check_shape(vectors, cfg.k)?;
    let restarts = cfg.restarts.max(1);
    let runs: Vec<RestartRun> = (0..restarts)
        .into_par_iter()
        .map(|r| kmeans_restart(vectors, cfg.k, cfg.seed, r, cfg.max_iter, cfg.tol))
        .collect::<Result<_>>()?;
    let best = runs
        .into_iter()
        .min_by(|a, b| a.sse.total_cmp(&b.sse).then(a.restart.cmp(&b.restart)))
        .expect("at least one restart");
    Ok(ClusterModel {
        k: cfg.k,
        seed: cfg.seed,
        centroids: best.centroids,
        assignments: best.assignments,
        sse: best.sse,
        iterations: best.iterations,
        restart: best.restart,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SseCurve {
    pub points: Vec<(usize, f64)>,
}

pub fn sse_curve<V: AsRef<[f64]> + Sync>(
    vectors: &[V],
    k_min: usize,
    k_max: usize,
    cfg: &KMeansConfig,
) -> Result<SseCurve> {
    if k_min == 0 || k_min > k_max {
        return Err(Error::Parameter(format!("bad k range {k_min}:{k_max}")));
    }
    let points = (k_min..=k_max)
        .map(|k| Ok((k, kmeans(vectors, &KMeansConfig { k, ..*cfg })?.sse)))
        .collect::<Result<_>>()?;
    Ok(SseCurve { points })
}

/// Elbow of an SSE curve: the interior point farthest from the chord
/// between the endpoints, with both axes scaled to [0, 1].
pub fn suggest_k(curve: &SseCurve) -> Result<usize> {
    let pts = &curve.points;
    if pts.len() < 3 {
        return Err(Error::Parameter(format!(
            "elbow needs at least 3 curve points, got {}",
            pts.len()
        )));
    }
    let (k_lo, k_hi) = (pts[0].0 as f64, pts[pts.len() - 1].0 as f64);
    let s_lo = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let s_hi = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let norm = |&(k, s): &(usize, f64)| {
        let x = (k as f64 - k_lo) / (k_hi - k_lo);
        let y = if s_hi > s_lo { (s - s_lo) / (s_hi - s_lo) } else { 0.0 };
        (x, y)
    };
    let (x0, y0) = norm(&pts[0]);
    let (x1, y1) = norm(&pts[pts.len() - 1]);
    let len = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
    let mut best = (pts[1].0, f64::NEG_INFINITY);
    for p in &pts[1..pts.len() - 1] {
        let (x, y) = norm(p);
        let d = ((x1 - x0) * (y0 - y) - (x0 - x) * (y1 - y0)).abs() / len;
        if d > best.1 + 1e-12 {
            best = (p.0, d);
        }
    }
    Ok(best.0)
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 {
        return Err(Error::UndefinedCorrelation("x"));
    }
    if syy <= 0.0 {
        return Err(Error::UndefinedCorrelation("y"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    /// Two-sided permutation p-value.
    pub p: f64,
    pub n: usize,
}

/// Sample Pearson r with a two-sided permutation p-value over `permutations`
/// seeded shuffles of `y`.
pub fn pearson_r(x: &[f64], y: &[f64], permutations: usize, seed: u64) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("x has {} values, y has {}", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(Error::Parameter("correlation needs at least 3 pairs".into()));
    }
    let r = pearson(x, y)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = y.to_vec();
    let mut extreme = 0usize;
    for _ in 0..permutations {
        shuffled.shuffle(&mut rng);
        if pearson(x, &shuffled)?.abs() >= r.abs() - 1e-12 {
            extreme += 1;
        }
    }
    Ok(Correlation {
        r,
        p: (extreme + 1) as f64 / (permutations + 1) as f64,
        n: x.len(),
    })
}

fn choose2(n: u64) -> f64 {
    (n * n.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand Index between two labelings of the same items.
pub fn adjusted_rand_index<A, B>(a: &[A], b: &[B]) -> Result<f64>
where
    A: std::hash::Hash + Eq,
    B: std::hash::Hash + Eq,
{
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{} vs {} labels", a.len(), b.len())));
    }
    let n = a.len() as u64;
    let mut table: HashMap<(&A, &B), u64> = HashMap::new();
    let mut rows: HashMap<&A, u64> = HashMap::new();
    let mut cols: HashMap<&B, u64> = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        *table.entry((x, y)).or_insert(0) += 1;
        *rows.entry(x).or_insert(0) += 1;
        *cols.entry(y).or_insert(0) += 1;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sum_rows: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sum_cols: f64 = cols.values().map(|&c| choose2(c)).sum();
    let total = choose2(n);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sum_rows * sum_cols / total;
    let max = (sum_rows + sum_cols) / 2.0;
    if max == expected {
        // Both partitions trivial (one cluster or all singletons).
        return Ok(if index == max { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}

/// On-disk model for one day type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub day_type: crate::poi::DayType,
    pub k: usize,
    pub seed: u64,
    pub restarts: usize,
    pub sse: f64,
    pub centroids: Vec<Vec<f64>>,
    pub assignments: BTreeMap<String, usize>,
    pub sse_curve: Vec<(usize, f64)>,
    pub suggested_k: Option<usize>,
}
