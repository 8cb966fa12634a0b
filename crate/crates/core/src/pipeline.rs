//! Stage orchestration.
//!
//! Every stage has an in-memory form, used by tests and by `run_all`, and a
//! file form that reads the previous stage's output from the artifact
//! directory and writes its own. The layout below `out/` is:
//!
//! ```text
//! ingest/fixes.csv        accepted users' cleaned fixes
//! ingest/validity.csv     per-user selection report
//! ingest/errors.csv       malformed input rows
//! pois/users.jsonl        POIs, visits and Home/Work per user
//! label/users.jsonl       the same, with categories and subzones
//! features/{dt}.csv       20-value vectors per clustered user
//! features/excluded.csv   users left out of clustering, with the reason
//! features/dcd.json       snapped DCD series per user and day type
//! features/dcd_histogram.json
//! cluster/{dt}_model.json
//! analysis/...            heatmaps, violin data, correlation
//! manifest.json           every file above with its SHA-256
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{
    average_frequency, member_cells, plot_spec, user_commonality, violin_export, write_heatmaps_csv, HeatmapGrid,
    ViolinExport, ViolinMember,
};
use crate::cluster::{kmeans, pearson_r, sse_curve, suggest_k, Correlation, KMeansConfig, ModelFile};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::features::{histogram, suggest_valleys, user_day_features, write_features_csv, read_features_csv, DcdSeries, FeatureVector};
use crate::geo::SubzoneMap;
use crate::ingest::{group_by_user, parse_fixes, validity_filter, write_fixes, FixFormat, GpsFix, RecordError, UserDataset, ValidityReport};
use crate::labeling::{label_all, LabelCatalog};
use crate::poi::{build_user_pois, DayType, UserPois};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FAILED_DIR: &str = "failed";

// ---------------------------------------------------------------- in memory

#[derive(Debug, Clone, PartialEq)]
pub struct IngestResult {
    pub accepted: Vec<UserDataset>,
    pub reports: BTreeMap<String, ValidityReport>,
}

pub fn select_users(fixes: Vec<GpsFix>, cfg: &PipelineConfig) -> IngestResult {
    let datasets = group_by_user(fixes, cfg.input.tz_offset_minutes, cfg.input.overlap_tolerance_s);
    let mut reports = BTreeMap::new();
    let mut accepted = Vec::new();
    for ds in datasets {
        let report = validity_filter(&ds, &cfg.validity);
        reports.insert(ds.user_id.clone(), report);
        if report.accepted {
            accepted.push(ds);
        } else {
            log::info!("user {} rejected: {} valid days", ds.user_id, report.valid_days);
        }
    }
    IngestResult { accepted, reports }
}

pub fn extract_pois(datasets: &[UserDataset], cfg: &PipelineConfig) -> Result<Vec<UserPois>> {
    datasets
        .par_iter()
        .map(|ds| {
            build_user_pois(&ds.user_id, &ds.fixes, ds.tz_offset_minutes, &cfg.stay_points, &cfg.home_work)
                .map_err(|e| Error::Precondition(format!("user {}: {e}", ds.user_id)))
        })
        .collect()
}

pub fn label_users(users: &[UserPois], catalog: &LabelCatalog, subzones: &SubzoneMap, cfg: &PipelineConfig) -> Vec<UserPois> {
    if catalog.is_empty() {
        log::warn!("label catalog is empty; all POIs stay unlabeled");
    }
    users
        .par_iter()
        .map(|u| UserPois {
            pois: if catalog.is_empty() && subzones.is_empty() {
                u.pois.clone()
            } else {
                label_all(&u.pois, catalog, subzones, cfg.labeling.max_distance_m)
            },
            ..u.clone()
        })
        .collect()
}

/// Feature output for one day type.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DayTypeFeatures {
    /// Ordered by user id.
    pub vectors: Vec<FeatureVector>,
    /// User id and reason, for users eligible but not clusterable.
    pub excluded: Vec<(String, String)>,
    /// Snapped DCD series of every eligible user.
    pub dcd: BTreeMap<String, DcdSeries>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureSet {
    pub by_day_type: BTreeMap<DayType, DayTypeFeatures>,
}

impl FeatureSet {
    pub fn get(&self, day_type: DayType) -> &DayTypeFeatures {
        static EMPTY: std::sync::OnceLock<DayTypeFeatures> = std::sync::OnceLock::new();
        self.by_day_type.get(&day_type).unwrap_or_else(|| EMPTY.get_or_init(DayTypeFeatures::default))
    }
}

/// Workday features for working users only; Offday features for everyone.
pub fn compute_features(users: &[UserPois], cfg: &PipelineConfig) -> Result<FeatureSet> {
    let per_user: Vec<Vec<(DayType, crate::features::UserDayFeatures)>> = users
        .par_iter()
        .map(|u| {
            let days = u.days();
            DayType::ALL
                .into_iter()
                .filter(|&dt| dt == DayType::Offday || u.profile.is_working())
                .map(|dt| Ok((dt, user_day_features(u, &days, dt, &cfg.features)?)))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::Precondition(format!("user {}: {e}", u.user_id())))
        })
        .collect::<Result<_>>()?;

    let mut set = FeatureSet::default();
    for dt in DayType::ALL {
        set.by_day_type.insert(dt, DayTypeFeatures::default());
    }
    for (u, feats) in users.iter().zip(per_user) {
        for (dt, f) in feats {
            let entry = set.by_day_type.get_mut(&dt).expect("both day types present");
            entry.dcd.insert(u.user_id().to_string(), f.dcd);
            match f.vector {
                Ok(v) => entry.vectors.push(v),
                Err(reason) => entry.excluded.push((u.user_id().to_string(), reason)),
            }
        }
    }
    for entry in set.by_day_type.values_mut() {
        entry.vectors.sort_by(|a, b| a.user_id.cmp(&b.user_id));
        entry.excluded.sort();
    }
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcdHistogram {
    pub day_type: DayType,
    pub bin_width_km: f64,
    /// Counts of non-zero days per bin, starting at 0 km.
    pub counts: Vec<u64>,
    pub suggested_edges_km: Vec<f64>,
}

/// Distribution of non-zero DCD values, with valley positions as candidate
/// bin edges.
pub fn dcd_histogram(features: &DayTypeFeatures, day_type: DayType, cfg: &PipelineConfig) -> Result<Option<DcdHistogram>> {
    let values: Vec<f64> = features.dcd.values().flat_map(|s| s.values.iter().map(|&(_, v)| v)).filter(|&v| v > 0.0).collect();
    if values.is_empty() {
        return Ok(None);
    }
    let bw = cfg.analysis.histogram_bin_km;
    let counts = histogram(&values, bw)?;
    let suggested_edges_km = suggest_valleys(&counts, bw, cfg.analysis.histogram_smooth);
    Ok(Some(DcdHistogram { day_type, bin_width_km: bw, counts, suggested_edges_km }))
}

pub fn kmeans_config(cfg: &PipelineConfig) -> KMeansConfig {
    KMeansConfig {
        k: cfg.cluster.k,
        seed: cfg.seed,
        restarts: cfg.cluster.restarts,
        max_iter: cfg.cluster.max_iter,
        tol: cfg.cluster.tol,
    }
}

pub fn cluster_vectors(vectors: &[FeatureVector], day_type: DayType, cfg: &PipelineConfig) -> Result<ModelFile> {
    let data: Vec<&[f64]> = vectors.iter().map(|v| v.values.as_slice()).collect();
    let kcfg = kmeans_config(cfg);
    let model = kmeans(&data, &kcfg)?;
    let k_max = cfg.cluster.k_max.min(data.len());
    let curve = if cfg.cluster.k_min <= k_max {
        sse_curve(&data, cfg.cluster.k_min, k_max, &kcfg)?.points
    } else {
        Vec::new()
    };
    let suggested_k = (curve.len() >= 3).then(|| suggest_k(&crate::cluster::SseCurve { points: curve.clone() })).transpose()?;
    Ok(ModelFile {
        day_type,
        k: model.k,
        seed: model.seed,
        restarts: kcfg.restarts,
        sse: model.sse,
        centroids: model.centroids,
        assignments: vectors.iter().map(|v| v.user_id.clone()).zip(model.assignments).collect(),
        sse_curve: curve,
        suggested_k,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayTypeAnalysis {
    pub day_type: DayType,
    pub heatmaps: Vec<HeatmapGrid>,
    pub violin: ViolinExport,
}

pub fn analyze_day_type(
    users: &[UserPois],
    features: &DayTypeFeatures,
    model: &ModelFile,
    cfg: &PipelineConfig,
) -> Result<DayTypeAnalysis> {
    let dt = model.day_type;
    let scheme = cfg.features.od_scheme(dt)?;
    let by_id: BTreeMap<&str, &UserPois> = users.iter().map(|u| (u.user_id(), u)).collect();
    let lookup = |id: &str| {
        by_id.get(id).copied().ok_or_else(|| Error::Precondition(format!("clustered user {id} has no POI record")))
    };

    let mut heatmaps = Vec::new();
    for cluster in 0..model.k {
        let members: Vec<&str> =
            model.assignments.iter().filter(|(_, &c)| c == cluster).map(|(u, _)| u.as_str()).collect();
        if members.is_empty() {
            continue;
        }
        let cells = members
            .iter()
            .map(|id| {
                let u = lookup(id)?;
                member_cells(u, &u.days(), dt, &scheme)
            })
            .collect::<Result<Vec<_>>>()?;
        heatmaps.push(user_commonality(cluster, &cells, scheme.labels())?);
        match average_frequency(cluster, &cells, scheme.labels(), cfg.analysis.frequency_unit) {
            Ok(g) => heatmaps.push(g),
            Err(Error::DegenerateGrid) => log::warn!("{dt} cluster {cluster}: no labeled visits, frequency grid skipped"),
            Err(e) => return Err(e),
        }
    }

    let series: Vec<(&UserPois, Option<usize>, &DcdSeries)> = features
        .dcd
        .iter()
        .map(|(id, s)| Ok((lookup(id)?, model.assignments.get(id).copied(), s)))
        .collect::<Result<_>>()?;
    let members: Vec<ViolinMember<'_>> =
        series.iter().map(|&(user, cluster_id, series)| ViolinMember { user, cluster_id, series }).collect();
    Ok(DayTypeAnalysis { day_type: dt, heatmaps, violin: violin_export(&members, dt) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomeWorkCorrelation {
    /// Working users with at least one non-zero Workday DCD.
    pub users: Vec<String>,
    pub home_work_km: Vec<f64>,
    pub median_dcd_km: Vec<f64>,
    pub result: Option<Correlation>,
    pub note: Option<String>,
}

/// Pearson r between Home-Work distance and median non-zero Workday DCD.
pub fn home_work_correlation(workday: &ViolinExport, cfg: &PipelineConfig) -> HomeWorkCorrelation {
    let mut rows: Vec<(&str, f64, f64)> = workday
        .records
        .iter()
        .filter_map(|r| Some((r.user_id.as_str(), r.home_work_km?, r.median?)))
        .collect();
    rows.sort_by(|a, b| a.0.cmp(b.0));
    let x: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let (result, note) = match pearson_r(&x, &y, cfg.analysis.permutations, cfg.seed) {
        Ok(c) => (Some(c), None),
        Err(e) => (None, Some(e.to_string())),
    };
    HomeWorkCorrelation { users: rows.iter().map(|r| r.0.to_string()).collect(), home_work_km: x, median_dcd_km: y, result, note }
}

/// Everything `run_all` computes, kept in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub ingest: IngestResult,
    pub users: Vec<UserPois>,
    pub features: FeatureSet,
    pub models: BTreeMap<DayType, ModelFile>,
    pub analyses: BTreeMap<DayType, DayTypeAnalysis>,
    pub correlation: Option<HomeWorkCorrelation>,
}

/// The whole pipeline without touching the file system.
pub fn run_in_memory(
    fixes: Vec<GpsFix>,
    catalog: &LabelCatalog,
    subzones: &SubzoneMap,
    cfg: &PipelineConfig,
) -> Result<RunResult> {
    let ingest = select_users(fixes, cfg);
    let users = extract_pois(&ingest.accepted, cfg).map_err(|e| e.in_stage("pois"))?;
    let users = label_users(&users, catalog, subzones, cfg);
    let features = compute_features(&users, cfg).map_err(|e| e.in_stage("features"))?;
    let mut models = BTreeMap::new();
    for dt in DayType::ALL {
        let m = cluster_vectors(&features.get(dt).vectors, dt, cfg).map_err(|e| e.in_stage("cluster"))?;
        models.insert(dt, m);
    }
    let mut analyses = BTreeMap::new();
    for (dt, m) in &models {
        let a = analyze_day_type(&users, features.get(*dt), m, cfg).map_err(|e| e.in_stage("analyze"))?;
        analyses.insert(*dt, a);
    }
    let correlation = analyses.get(&DayType::Workday).map(|a| home_work_correlation(&a.violin, cfg));
    Ok(RunResult { ingest, users, features, models, analyses, correlation })
}

// ---------------------------------------------------------------- on disk

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::from(e).at_path(dir))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::from(e).at_path(path))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::from(e).at_path(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_reader(open(path)?).map_err(|e| Error::from(e).at_path(path))
}

fn write_users(path: &Path, users: &[UserPois]) -> Result<()> {
    let mut w = create(path)?;
    for u in users {
        serde_json::to_writer(&mut w, u)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn read_users(path: &Path) -> Result<Vec<UserPois>> {
    let mut users = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let u: UserPois = serde_json::from_str(&line)
            .map_err(|e| Error::InvalidInput(format!("line {}: {e}", i + 1)).at_path(path))?;
        users.push(u);
    }
    Ok(users)
}

/// Stage output paths relative to the artifact directory.
pub mod paths {
    use crate::poi::DayType;

    pub const FIXES: &str = "ingest/fixes.csv";
    pub const VALIDITY: &str = "ingest/validity.csv";
    pub const ERRORS: &str = "ingest/errors.csv";
    pub const POIS: &str = "pois/users.jsonl";
    pub const LABELED: &str = "label/users.jsonl";
    pub const EXCLUDED: &str = "features/excluded.csv";
    pub const DCD: &str = "features/dcd.json";
    pub const HISTOGRAM: &str = "features/dcd_histogram.json";
    pub const CORRELATION: &str = "analysis/home_work_correlation.json";

    pub fn features(dt: DayType) -> String {
        format!("features/{dt}.csv")
    }
    pub fn model(dt: DayType) -> String {
        format!("cluster/{dt}_model.json")
    }
    pub fn heatmaps(dt: DayType) -> String {
        format!("analysis/{dt}_heatmaps.csv")
    }
    pub fn violin(dt: DayType) -> String {
        format!("analysis/{dt}_violin.json")
    }
    pub fn plot_spec(dt: DayType) -> String {
        format!("analysis/{dt}_plot_spec.json")
    }
}

/// Files a stage wrote, relative to the artifact directory.
pub type Written = Vec<String>;

pub fn stage_ingest(cfg: &PipelineConfig, out: &Path) -> Result<Written> {
    let input = cfg.input.fixes.as_deref().ok_or_else(|| Error::Config("input.fixes is not set".into()))?;
    let parsed = parse_fixes(open(input)?, cfg.input.format).map_err(|e| e.at_path(input))?;
    if !parsed.errors.is_empty() {
        log::warn!("{}: {} malformed rows skipped", input.display(), parsed.errors.len());
    }
    let result = select_users(parsed.fixes, cfg);

    let accepted: Vec<GpsFix> = result.accepted.iter().flat_map(|d| d.fixes.iter().cloned()).collect();
    let mut w = create(&out.join(paths::FIXES))?;
    write_fixes(&mut w, &accepted, FixFormat::Csv)?;
    w.flush()?;

    let mut w = csv::Writer::from_writer(create(&out.join(paths::VALIDITY))?);
    w.write_record(["user_id", "tz_offset_minutes", "recording_days", "valid_days", "coverage_ratio", "accepted"])?;
    for (uid, r) in &result.reports {
        w.write_record([
            uid.clone(),
            cfg.input.tz_offset_minutes.to_string(),
            r.recording_days.to_string(),
            r.valid_days.to_string(),
            format!("{:.6}", r.coverage_ratio),
            r.accepted.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_writer(create(&out.join(paths::ERRORS))?);
    w.write_record(["line", "reason"])?;
    for RecordError { line, reason } in &parsed.errors {
        w.write_record([line.to_string(), reason.clone()])?;
    }
    w.flush()?;
    log::info!("ingest: {} of {} users accepted", result.accepted.len(), result.reports.len());
    Ok(vec![paths::FIXES.into(), paths::VALIDITY.into(), paths::ERRORS.into()])
}

fn ingest_offsets(path: &Path) -> Result<BTreeMap<String, i32>> {
    if !path.exists() {
        return Ok(BTreeMap::new());
    }
    let mut r = csv::Reader::from_reader(open(path)?);
    let mut offsets = BTreeMap::new();
    for row in r.records() {
        let row = row?;
        let tz = row.get(1).and_then(|v| v.parse().ok()).ok_or_else(|| {
            Error::InvalidInput(format!("{}: bad tz_offset_minutes on line {}", path.display(), offsets.len() + 2))
        })?;
        offsets.insert(row.get(0).unwrap_or_default().to_string(), tz);
    }
    Ok(offsets)
}

pub fn stage_pois(cfg: &PipelineConfig, out: &Path) -> Result<Written> {
    let path = out.join(paths::FIXES);
    let parsed = parse_fixes(open(&path)?, FixFormat::Csv).map_err(|e| e.at_path(&path))?;
    let mut datasets = group_by_user(parsed.fixes, cfg.input.tz_offset_minutes, cfg.input.overlap_tolerance_s);
    // Day boundaries follow the offset the ingest stage used.
    let offsets = ingest_offsets(&out.join(paths::VALIDITY))?;
    for ds in &mut datasets {
        if let Some(&tz) = offsets.get(&ds.user_id) {
            ds.tz_offset_minutes = tz;
        }
    }
    let users = extract_pois(&datasets, cfg)?;
    write_users(&out.join(paths::POIS), &users)?;
    Ok(vec![paths::POIS.into()])
}

pub fn stage_label(cfg: &PipelineConfig, out: &Path) -> Result<Written> {
    let users = read_users(&out.join(paths::POIS))?;
    let catalog = match &cfg.input.catalog {
        Some(p) => LabelCatalog::load(p)?,
        None => LabelCatalog::default(),
    };
    let subzones = match &cfg.input.subzones {
        Some(p) => SubzoneMap::load(p, &cfg.input.zone_property)?,
        None => SubzoneMap::default(),
    };
    write_users(&out.join(paths::LABELED), &label_users(&users, &catalog, &subzones, cfg))?;
    Ok(vec![paths::LABELED.into()])
}

pub fn stage_features(cfg: &PipelineConfig, out: &Path) -> Result<Written> {
    let users = read_users(&out.join(paths::LABELED))?;
    let set = compute_features(&users, cfg)?;
    let mut written = Vec::new();
    let mut excluded = csv::Writer::from_writer(create(&out.join(paths::EXCLUDED))?);
    excluded.write_record(["user_id", "day_type", "reason"])?;
    let mut dcd: BTreeMap<DayType, &BTreeMap<String, DcdSeries>> = BTreeMap::new();
    let mut hist = Vec::new();
    for (dt, f) in &set.by_day_type {
        let name = paths::features(*dt);
        let mut w = create(&out.join(&name))?;
        write_features_csv(&mut w, &f.vectors)?;
        w.flush()?;
        written.push(name);
        for (uid, reason) in &f.excluded {
            excluded.write_record([uid.as_str(), dt.as_str(), reason.as_str()])?;
        }
        dcd.insert(*dt, &f.dcd);
        hist.extend(dcd_histogram(f, *dt, cfg)?);
    }
    excluded.flush()?;
    write_json(&out.join(paths::DCD), &dcd)?;
    write_json(&out.join(paths::HISTOGRAM), &hist)?;
    written.extend([paths::EXCLUDED.into(), paths::DCD.into(), paths::HISTOGRAM.into()]);
    Ok(written)
}

pub fn stage_cluster(cfg: &PipelineConfig, out: &Path, day_types: &[DayType]) -> Result<Written> {
    let mut written = Vec::new();
    for &dt in day_types {
        let path = out.join(paths::features(dt));
        let vectors = read_features_csv(open(&path)?).map_err(|e| e.at_path(&path))?;
        let model = cluster_vectors(&vectors, dt, cfg).map_err(|e| match e {
            Error::Parameter(m) => Error::Parameter(format!("{dt}: {m}")),
            other => other,
        })?;
        log::info!("{dt}: {} users in {} clusters, suggested k {:?}", vectors.len(), model.k, model.suggested_k);
        let name = paths::model(dt);
        write_json(&out.join(&name), &model)?;
        written.push(name);
    }
    Ok(written)
}

pub fn stage_analyze(cfg: &PipelineConfig, out: &Path, day_types: &[DayType]) -> Result<Written> {
    let users = read_users(&out.join(paths::LABELED))?;
    let dcd: BTreeMap<DayType, BTreeMap<String, DcdSeries>> = read_json(&out.join(paths::DCD))?;
    let mut written = Vec::new();
    for &dt in day_types {
        let model: ModelFile = read_json(&out.join(paths::model(dt)))?;
        let features = DayTypeFeatures { dcd: dcd.get(&dt).cloned().unwrap_or_default(), ..Default::default() };
        let a = analyze_day_type(&users, &features, &model, cfg)?;

        let name = paths::heatmaps(dt);
        let mut w = create(&out.join(&name))?;
        write_heatmaps_csv(&mut w, &a.heatmaps)?;
        w.flush()?;
        written.push(name);

        let violin_name = paths::violin(dt);
        write_json(&out.join(&violin_name), &a.violin)?;
        written.push(violin_name.clone());

        if cfg.analysis.plot_spec {
            let spec_name = paths::plot_spec(dt);
            let file = |p: &str| p.rsplit('/').next().unwrap_or(p).to_string();
            write_json(&out.join(&spec_name), &plot_spec(dt, &file(&paths::heatmaps(dt)), &file(&violin_name)))?;
            written.push(spec_name);
        }
        if dt == DayType::Workday {
            write_json(&out.join(paths::CORRELATION), &home_work_correlation(&a.violin, cfg))?;
            written.push(paths::CORRELATION.into());
        }
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_sha256: String,
    pub files: Vec<ManifestEntry>,
}

pub fn sha256_file(path: &Path) -> Result<(u64, String)> {
    let mut reader = open(path)?;
    let mut hasher = Sha256::new();
    let mut bytes = 0u64;
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = std::io::Read::read(&mut reader, &mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        bytes += n as u64;
    }
    Ok((bytes, hex::encode(hasher.finalize())))
}

pub fn build_manifest(out: &Path, files: &[String], cfg: &PipelineConfig) -> Result<Manifest> {
    let mut files: Vec<String> = files.to_vec();
    files.sort();
    files.dedup();
    let entries = files
        .into_iter()
        .map(|path| {
            let (bytes, sha256) = sha256_file(&out.join(&path))?;
            Ok(ManifestEntry { path, bytes, sha256 })
        })
        .collect::<Result<_>>()?;
    Ok(Manifest { config_sha256: hex::encode(Sha256::digest(cfg.to_toml()?.as_bytes())), files: entries })
}

/// Moves whatever stages finished into `failed/` and records the cause.
fn quarantine(out: &Path, written: &[String], err: &Error) -> Result<()> {
    let failed = out.join(FAILED_DIR);
    for rel in written {
        let dest = failed.join(rel);
        if let Some(dir) = dest.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::rename(out.join(rel), &dest)?;
    }
    let mut w = create(&failed.join("error.txt"))?;
    writeln!(w, "{err}")?;
    w.flush()?;
    Ok(())
}

/// Runs every stage in order and writes the manifest. On failure the
/// finished stage outputs move under `failed/` and the error names the
/// stage that broke.
pub fn run_all(cfg: &PipelineConfig, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::from(e).at_path(out))?;
    let stale = out.join(FAILED_DIR);
    if stale.exists() {
        std::fs::remove_dir_all(&stale).map_err(|e| Error::from(e).at_path(&stale))?;
    }
    let manifest_path = out.join(MANIFEST_FILE);
    if manifest_path.exists() {
        std::fs::remove_file(&manifest_path)?;
    }

    type Stage = fn(&PipelineConfig, &Path) -> Result<Written>;
    let stages: [(&'static str, Stage); 6] = [
        ("ingest", stage_ingest),
        ("pois", stage_pois),
        ("label", stage_label),
        ("features", stage_features),
        ("cluster", |c, o| stage_cluster(c, o, &DayType::ALL)),
        ("analyze", |c, o| stage_analyze(c, o, &DayType::ALL)),
    ];
    let mut written: Written = Vec::new();
    for (name, stage) in stages {
        log::info!("stage {name}");
        match stage(cfg, out) {
            Ok(files) => written.extend(files),
            Err(e) => {
                let e = e.in_stage(name);
                if let Err(q) = quarantine(out, &written, &e) {
                    log::error!("could not move partial outputs to {FAILED_DIR}/: {q}");
                }
                return Err(e);
            }
        }
    }
    let manifest = build_manifest(out, &written, cfg)?;
    write_json(&manifest_path, &manifest)?;
    Ok(manifest)
}

pub fn default_input_paths(cfg: &mut PipelineConfig, data_dir: &Path) {
    use crate::synth::{CATALOG_FILE, FIXES_FILE, SUBZONES_FILE};
    let pick = |name: &str| -> Option<PathBuf> {
        let p = data_dir.join(name);
        p.exists().then_some(p)
    };
    cfg.input.fixes = Some(data_dir.join(FIXES_FILE));
    cfg.input.catalog = pick(CATALOG_FILE).or(cfg.input.catalog.take());
    cfg.input.subzones = pick(SUBZONES_FILE).or(cfg.input.subzones.take());
}
