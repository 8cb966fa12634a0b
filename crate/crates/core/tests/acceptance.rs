//! Acceptance suite: one PASS/FAIL line per criterion, with the measured
//! values and the wall time against the budget. Exits non-zero if any
//! criterion fails.

mod common;

use std::cell::Cell;
use std::collections::{BTreeMap, BTreeSet};
use std::process::Command;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, RngAlgorithm, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mobiscope::analysis::{average_frequency, member_cells, user_commonality, FrequencyUnit, MemberCells};
use mobiscope::calendar;
use mobiscope::cluster::{adjusted_rand_index, kmeans, kmeans_restart, KMeansConfig};
use mobiscope::config::PipelineConfig;
use mobiscope::features::{
    build_feature_vector, daily_characteristic_distance, extract_trips, radius_of_gyration, DcdFeatures, OdMatrix,
    SchemeContext, ThresholdScheme,
};
use mobiscope::geo::{haversine_km, GeoPoint};
use mobiscope::labeling::PoiCategory;
use mobiscope::pipeline::{run_in_memory, RunResult};
use mobiscope::poi::{DayRecord, DayType, Poi, PoiId, UserPois, UserProfile, Visit};
use mobiscope::synth::{generate, GroundTruth, SynthSpec};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Synthetic populations shared by the criteria that need a full run.
#[derive(Default)]
struct Cache {
    runs: BTreeMap<u64, (GroundTruth, RunResult)>,
}

impl Cache {
    fn run(&mut self, seed: u64) -> &(GroundTruth, RunResult) {
        self.runs.entry(seed).or_insert_with(|| {
            let data = generate(&SynthSpec { seed, ..SynthSpec::default() }).expect("generate");
            let cfg = PipelineConfig::default();
            let run = run_in_memory(data.fixes, &data.catalog, &data.subzones, &cfg).expect("pipeline");
            (data.truth, run)
        })
    }
}

const GENERATOR_SEEDS: std::ops::RangeInclusive<u64> = 1..=10;

fn home() -> GeoPoint {
    GeoPoint::new(1.35, 103.82).unwrap()
}

fn random_point_near(rng: &mut ChaCha8Rng, origin: GeoPoint, max_km: f64) -> GeoPoint {
    let r = rng.random_range(0.0..max_km);
    let b = rng.random_range(0.0..std::f64::consts::TAU);
    origin.offset_km(r * b.cos(), r * b.sin())
}

fn profile(work: Option<PoiId>) -> UserProfile {
    UserProfile { user_id: "u".into(), home_poi: 0, work_poi: work, home_work_km: None, home_fallback: false }
}

fn c1_tables() -> Outcome {
    let dcd_workday = [0.60, 0.23, 0.15, 0.02];
    let dcd_offday = [0.38, 0.16, 0.41, 0.05];
    let od_workday = [
        [0.68, 0.08, 0.04, 0.04],
        [0.08, 0.00, 0.00, 0.00],
        [0.04, 0.00, 0.00, 0.00],
        [0.03, 0.00, 0.00, 0.01],
    ];
    let od_offday = [
        [0.00, 0.08, 0.23, 0.03],
        [0.08, 0.03, 0.00, 0.00],
        [0.19, 0.04, 0.29, 0.00],
        [0.02, 0.00, 0.01, 0.00],
    ];
    let mut notes = Vec::new();
    let mut pass = true;
    for (dt, od, dcd) in [(DayType::Workday, od_workday, dcd_workday), (DayType::Offday, od_offday, dcd_offday)] {
        let v = OdMatrix::from_cells(od)
            .and_then(|m| DcdFeatures::from_shares(dcd).and_then(|d| build_feature_vector("u2", dt, &m, &d)));
        match v {
            Ok(v) => {
                let expected: Vec<f64> = od.iter().flatten().chain(dcd.iter()).copied().collect();
                let head: f64 = v.values[..16].iter().sum();
                let tail: f64 = v.values[16..].iter().sum();
                let ordered = v.values.as_slice() == expected.as_slice();
                let ok = ordered && (head - 1.0).abs() < 1e-9 && (tail - 1.0).abs() < 1e-9;
                pass &= ok;
                notes.push(format!("{dt}: od sum {head:.12}, dcd sum {tail:.12}, order {}", if ordered { "ok" } else { "WRONG" }));
            }
            Err(e) => {
                pass = false;
                notes.push(format!("{dt}: rejected ({e})"));
            }
        }
    }
    outcome(pass, notes.join("; "))
}

fn c2_dcd_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut max_err: f64 = 0.0;
    for _ in 0..1000 {
        let n_pois = rng.random_range(2..12);
        let work = rng.random_bool(0.5).then_some(1);
        let pois: Vec<Poi> = (0..n_pois)
            .map(|i| Poi {
                poi_id: i,
                centroid: if i == 0 { home() } else { random_point_near(&mut rng, home(), 30.0) },
                subzone: None,
                category: None,
            })
            .collect();
        let user = UserPois { profile: profile(work), tz_offset_minutes: 480, pois: pois.clone(), visits: vec![] };
        let ids: Vec<u32> = (0..rng.random_range(1..15)).map(|_| rng.random_range(0..n_pois)).collect();
        let day = DayRecord {
            date: NaiveDate::from_ymd_opt(2021, 3, 1).unwrap(),
            day_type: DayType::Workday,
            visits: ids.iter().enumerate().map(|(i, &p)| Visit { poi_id: p, arrival: i as i64 * 100, departure: i as i64 * 100 + 50 }).collect(),
        };
        let got = daily_characteristic_distance(&day, &user).unwrap();
        let coords = pois.iter().map(|p| (p.poi_id, (p.centroid.lat(), p.centroid.lon()))).collect();
        let anchors: BTreeSet<u32> = std::iter::once(0).chain(work).collect();
        let want = common::characteristic_distance(&ids, &coords, (home().lat(), home().lon()), &anchors);
        max_err = max_err.max((got - want).abs());
    }
    outcome(max_err < 1e-9, format!("1000 days, max |delta| = {max_err:.3e} km"))
}

fn c3_rg_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut max_rel: f64 = 0.0;
    for _ in 0..1000 {
        let centre = GeoPoint::new(rng.random_range(-60.0..60.0), rng.random_range(-170.0..170.0)).unwrap();
        let spread = 10f64.powf(rng.random_range(-2.0..1.5));
        let pts: Vec<GeoPoint> = (0..rng.random_range(1..40)).map(|_| random_point_near(&mut rng, centre, spread)).collect();
        let got = radius_of_gyration(&pts).unwrap();
        let raw: Vec<(f64, f64)> = pts.iter().map(|p| (p.lat(), p.lon())).collect();
        let want = common::gyration_radius(&raw);
        let rel = if want == 0.0 { got.abs() } else { (got - want).abs() / want };
        max_rel = max_rel.max(rel);
    }
    outcome(max_rel < 1e-9, format!("1000 point sets, max relative error = {max_rel:.3e}"))
}

fn c4_kmeans_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut optimal = 0;
    let mut monotone_violations = 0;
    let mut worst_gap: f64 = 0.0;
    for inst in 0..100u64 {
        let k = rng.random_range(1..=3);
        let n = rng.random_range(k.max(3)..=12);
        let d = rng.random_range(1..=4);
        let points: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let cfg = KMeansConfig { k, seed: inst, restarts: 50, ..Default::default() };
        let model = kmeans(&points, &cfg).unwrap();
        let best = common::optimal_sse(&points, k);
        let gap = model.sse - best;
        worst_gap = worst_gap.max(gap);
        if gap.abs() <= 1e-9 {
            optimal += 1;
        }
        for r in 0..cfg.restarts {
            let run = kmeans_restart(&points, k, inst, r, cfg.max_iter, cfg.tol).unwrap();
            if run.sse_trace.windows(2).any(|w| w[1] > w[0] + 1e-12) || run.sse > run.sse_trace[run.sse_trace.len() - 1] + 1e-12 {
                monotone_violations += 1;
            }
        }
    }
    outcome(
        optimal >= 95 && monotone_violations == 0,
        format!("optimal on {optimal}/100 (worst gap {worst_gap:.2e}), SSE increases in {monotone_violations} of 5000 runs"),
    )
}

fn offday_ari(truth: &GroundTruth, run: &RunResult) -> (f64, usize) {
    let model = &run.models[&DayType::Offday];
    let mut pred = Vec::new();
    let mut actual = Vec::new();
    for (uid, &c) in &model.assignments {
        pred.push(c);
        actual.push(truth.user(uid).expect("user in truth").archetype);
    }
    (adjusted_rand_index(&pred, &actual).unwrap(), pred.len())
}

fn c5_archetypes(cache: &mut Cache) -> Outcome {
    let (truth, run) = cache.run(7);
    let (ari, n) = offday_ari(truth, run);
    let mut elbow_hits = 0;
    let mut elbows = Vec::new();
    for seed in GENERATOR_SEEDS {
        let (_, run) = cache.run(seed);
        let k = run.models[&DayType::Offday].suggested_k;
        elbows.push(k.map_or("-".to_string(), |k| k.to_string()));
        if k == Some(3) {
            elbow_hits += 1;
        }
    }
    outcome(
        ari >= 0.9 && elbow_hits >= 8,
        format!("seed 7 ARI = {ari:.3} over {n} users; elbow at 3 on {elbow_hits}/10 seeds [{}]", elbows.join(" ")),
    )
}

fn c6_correlation(cache: &mut Cache) -> Outcome {
    let mut hits = 0;
    let mut shown = Vec::new();
    for seed in GENERATOR_SEEDS {
        let (_, run) = cache.run(seed);
        let corr = run.correlation.as_ref().and_then(|c| c.result);
        match corr {
            Some(c) => {
                if (c.r - 0.75).abs() <= 0.10 && c.p < 0.01 {
                    hits += 1;
                }
                shown.push(format!("{:.2}/p{:.4}", c.r, c.p));
            }
            None => shown.push("n/a".into()),
        }
    }
    outcome(hits >= 8, format!("r within 0.75 +/- 0.10 and p < 0.01 on {hits}/10 seeds [{}]", shown.join(" ")))
}

/// Random labeled user and days for the heatmap oracle.
fn random_cluster(rng: &mut ChaCha8Rng, dt: DayType) -> (Vec<UserPois>, Vec<Vec<DayRecord>>) {
    let n_users = rng.random_range(1..=6);
    let mut users = Vec::new();
    let mut days = Vec::new();
    for u in 0..n_users {
        let n_pois: u32 = rng.random_range(2..8);
        let work = (dt == DayType::Workday).then_some(1);
        let pois: Vec<Poi> = (0..n_pois)
            .map(|i| Poi {
                poi_id: i,
                centroid: if i == 0 { home() } else { random_point_near(rng, home(), 25.0) },
                subzone: None,
                category: rng.random_bool(0.8).then(|| PoiCategory::ALL[rng.random_range(0..10)]),
            })
            .collect();
        let n_visits = rng.random_range(0..=30);
        let mut records = Vec::new();
        let mut t = 0i64;
        for d in 0..3u32 {
            let per_day = n_visits / 3 + usize::from(d < (n_visits % 3) as u32);
            let visits = (0..per_day)
                .map(|_| {
                    t += 100;
                    Visit { poi_id: rng.random_range(0..n_pois), arrival: t, departure: t + 50 }
                })
                .collect();
            records.push(DayRecord { date: NaiveDate::from_ymd_opt(2021, 3, 1 + d).unwrap(), day_type: dt, visits });
        }
        let mut p = profile(work);
        p.user_id = format!("u{u}");
        users.push(UserPois { profile: p, tz_offset_minutes: 480, pois, visits: vec![] });
        days.push(records);
    }
    (users, days)
}

fn oracle_cells(user: &UserPois, days: &[DayRecord], dt: DayType) -> Vec<common::Cell> {
    let h = user.pois[0].centroid;
    let work = user.profile.work_poi.and_then(|w| user.poi(w)).map(|p| p.centroid);
    let mut cells = Vec::new();
    for v in days.iter().flat_map(|d| d.visits.iter()) {
        let p = user.poi(v.poi_id).unwrap();
        let Some(cat) = p.category else { continue };
        let to = |q: GeoPoint| common::great_circle_km(p.centroid.lat(), p.centroid.lon(), q.lat(), q.lon());
        let row = match dt {
            DayType::Workday if user.profile.is_anchor(p.poi_id) => 0,
            DayType::Workday => 1 + common::bin_by_edges(to(h).min(to(work.unwrap())), &[2.0, 8.0]),
            DayType::Offday if p.poi_id == 0 => 0,
            DayType::Offday => common::bin_by_edges(to(h), &[1.0, 5.0, 15.0]),
        };
        cells.push((row, cat.index()));
    }
    cells
}

fn c7_heatmap_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut max_err: f64 = 0.0;
    let mut sum_err: f64 = 0.0;
    let mut mismatched_support = 0;
    for case in 0..200 {
        let dt = if case % 2 == 0 { DayType::Workday } else { DayType::Offday };
        let (users, days) = random_cluster(&mut rng, dt);
        let scheme = match dt {
            DayType::Workday => ThresholdScheme::new(SchemeContext::OdWorkday, &[2.0, 8.0]).unwrap(),
            DayType::Offday => ThresholdScheme::new(SchemeContext::OdOffday, &[1.0, 5.0, 15.0]).unwrap(),
        };
        let members: Vec<MemberCells> = users.iter().zip(&days).map(|(u, d)| member_cells(u, d, dt, &scheme).unwrap()).collect();
        let oracle: Vec<Vec<common::Cell>> = users.iter().zip(&days).map(|(u, d)| oracle_cells(u, d, dt)).collect();

        let com = user_commonality(0, &members, scheme.labels()).unwrap();
        let want = common::commonality(&oracle);
        for (a, b) in com.cells.iter().flatten().zip(want.iter().flatten()) {
            max_err = max_err.max((a - b).abs());
        }
        let freq = average_frequency(0, &members, scheme.labels(), FrequencyUnit::Visits);
        match (freq, common::frequency(&oracle)) {
            (Ok(g), Some(want)) => {
                for (a, b) in g.cells.iter().flatten().zip(want.iter().flatten()) {
                    max_err = max_err.max((a - b).abs());
                }
                for (x, y) in com.cells.iter().flatten().zip(g.cells.iter().flatten()) {
                    if (*x == 0.0) != (*y == 0.0) {
                        mismatched_support += 1;
                    }
                }
            }
            (Err(mobiscope::Error::DegenerateGrid), None) => {}
            (got, want) => {
                max_err = f64::INFINITY;
                eprintln!("case {case}: library {:?} vs oracle {:?}", got.map(|g| g.counted_users), want.is_some());
            }
        }
        for m in &members {
            if let Some(g) = mobiscope::analysis::member_frequency(m, FrequencyUnit::Visits) {
                sum_err = sum_err.max((g.iter().flatten().sum::<f64>() - 1.0).abs());
            }
        }
    }
    outcome(
        max_err <= 1e-12 && sum_err <= 1e-9 && mismatched_support == 0,
        format!("200 clusters, max |delta| = {max_err:.3e}, per-user sum error {sum_err:.3e}, support mismatches {mismatched_support}"),
    )
}

fn c8_trip_rules() -> Outcome {
    let tz = 480;
    let base = calendar::day_start(calendar::from_date(NaiveDate::from_ymd_opt(2021, 3, 1).unwrap()), tz);
    let strategy = (
        prop::collection::vec(prop::option::of(0u8..3), 3..8),
        prop::collection::vec((0u32..8, 600i64..20_000, 300i64..30_000), 1..40),
    );
    let config = PropConfig { cases: 1000, failure_persistence: None, ..PropConfig::default() };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    let cross = Cell::new(0usize);
    let same_zone = Cell::new(0usize);
    let trips_seen = Cell::new(0usize);
    let result = runner.run(&strategy, |(zones, steps)| {
        let n = zones.len() as u32;
        let pois: Vec<Poi> = zones
            .iter()
            .enumerate()
            .map(|(i, z)| Poi {
                poi_id: i as u32,
                centroid: home().offset_km(i as f64, 0.0),
                subzone: z.map(|z| format!("Z{z}")),
                category: None,
            })
            .collect();
        let mut visits = Vec::new();
        let mut t = base + 3600;
        for (p, gap, dwell) in steps {
            t += gap;
            visits.push(Visit { poi_id: p % n, arrival: t, departure: t + dwell });
            t += dwell;
        }
        let user = UserPois { profile: profile(None), tz_offset_minutes: tz, pois, visits: visits.clone() };
        let trips = extract_trips(&user.days(), &user);

        let zone = |id: PoiId| user.poi(id).unwrap().subzone.clone();
        let mut expected = Vec::new();
        for w in visits.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            let da = calendar::local_day(a.arrival, tz);
            let db = calendar::local_day(b.arrival, tz);
            let same_zone_pair = matches!((zone(a.poi_id), zone(b.poi_id)), (Some(x), Some(y)) if x == y);
            if da == db && !same_zone_pair && a.poi_id != b.poi_id {
                expected.push((a.poi_id, b.poi_id, calendar::to_date(da)));
            }
        }
        let got: Vec<_> = trips.iter().map(|t| (t.origin, t.dest, t.date)).collect();
        // Each extracted trip must be a same-date, cross-zone consecutive pair.
        for t in &trips {
            if matches!((zone(t.origin), zone(t.dest)), (Some(x), Some(y)) if x == y) {
                same_zone.set(same_zone.get() + 1);
            }
        }
        let legit: BTreeSet<_> = expected.iter().collect();
        cross.set(cross.get() + got.iter().filter(|g| !legit.contains(g)).count());
        trips_seen.set(trips_seen.get() + got.len());
        prop_assert_eq!(got, expected);
        Ok(())
    });
    let (cross, same_zone) = (cross.get(), same_zone.get());
    let pass = result.is_ok() && cross == 0 && same_zone == 0;
    let mut detail = format!("1000 schedules, {} trips, cross-midnight {cross}, same-subzone {same_zone}", trips_seen.get());
    if let Err(e) = result {
        detail.push_str(&format!("; counterexample: {e}"));
    }
    outcome(pass, detail)
}

fn c9_home_work(cache: &mut Cache) -> Outcome {
    let (truth, run) = cache.run(7);
    let mut matched = 0;
    let mut nonworking_wrong = 0;
    for t in &truth.users {
        let Some(u) = run.users.iter().find(|u| u.user_id() == t.user_id) else { continue };
        let home_ok = haversine_km(&u.home().unwrap().centroid, &t.home) <= 0.1;
        let work_ok = match (t.work, u.work()) {
            (Some(tw), Some(w)) => haversine_km(&tw, &w.centroid) <= 0.1,
            (None, None) => true,
            _ => false,
        };
        if home_ok && work_ok {
            matched += 1;
        }
        if t.work.is_none() && u.profile.work_poi.is_some() {
            nonworking_wrong += 1;
        }
    }
    let n = truth.users.len();
    let share = matched as f64 / n as f64;
    outcome(
        share >= 0.95 && nonworking_wrong == 0,
        format!("{matched}/{n} users with Home and Work within 100 m; {nonworking_wrong} non-working users given a Work"),
    )
}

fn c10_determinism() -> Outcome {
    let exe = env!("CARGO_BIN_EXE_mobiscope");
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("synth");
    let run = |args: &[&str]| Command::new(exe).args(args).output().expect("spawn mobiscope");
    let gen = run(&["synth", "--seed", "7", "--out", data.to_str().unwrap()]);
    if !gen.status.success() {
        return outcome(false, format!("synth failed: {}", String::from_utf8_lossy(&gen.stderr)));
    }
    let mut manifests = Vec::new();
    for i in 0..2 {
        let out = dir.path().join(format!("run{i}"));
        let r = run(&["run-all", "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        if !r.status.success() {
            return outcome(false, format!("run-all failed: {}", String::from_utf8_lossy(&r.stderr)));
        }
        manifests.push(std::fs::read(out.join("manifest.json")).unwrap());
    }
    let files = serde_json::from_slice::<serde_json::Value>(&manifests[0]).unwrap()["files"].as_array().map_or(0, Vec::len);
    outcome(manifests[0] == manifests[1], format!("two run-all manifests ({files} files) byte-identical: {}", manifests[0] == manifests[1]))
}

fn main() {
    let mut cache = Cache::default();
    type Check<'a> = Box<dyn FnMut(&mut Cache) -> Outcome + 'a>;
    let criteria: Vec<(u32, &str, Duration, Check)> = vec![
        (1, "table fixtures", Duration::from_secs(1), Box::new(|_| c1_tables())),
        (2, "DCD oracle", Duration::from_secs(5), Box::new(|_| c2_dcd_oracle())),
        (3, "radius of gyration oracle", Duration::from_secs(5), Box::new(|_| c3_rg_oracle())),
        (4, "k-means optimality", Duration::from_secs(60), Box::new(|_| c4_kmeans_optimality())),
        (5, "archetype recovery", Duration::from_secs(60), Box::new(c5_archetypes)),
        (6, "correlation reproduction", Duration::from_secs(60), Box::new(c6_correlation)),
        (7, "heatmap oracle", Duration::from_secs(5), Box::new(|_| c7_heatmap_oracle())),
        (8, "trip rules", Duration::from_secs(5), Box::new(|_| c8_trip_rules())),
        (9, "Home/Work inference", Duration::from_secs(30), Box::new(c9_home_work)),
        (10, "end-to-end determinism", Duration::from_secs(120), Box::new(|_| c10_determinism())),
    ];
    let mut failures = 0;
    for (id, name, budget, mut check) in criteria {
        let start = Instant::now();
        let o = check(&mut cache);
        let took = start.elapsed();
        let pass = o.pass && took <= budget;
        if !pass {
            failures += 1;
        }
        println!(
            "criterion {id:>2} [{}] {name}: {} ({:.2}s of {}s budget)",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("acceptance: {} of 10 criteria passed", 10 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
