//! The single TOML file that configures every stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::FrequencyUnit;
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::geo::DEFAULT_ZONE_PROPERTY;
use crate::ingest::{FixFormat, ValidityConfig};
use crate::poi::{HomeWorkConfig, StayPointConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputConfig {
    pub fixes: Option<PathBuf>,
    pub format: FixFormat,
    /// Reference places for category labels. Without it every POI stays
    /// unlabeled.
    pub catalog: Option<PathBuf>,
    /// GeoJSON subzone polygons. Without it no trip is filtered as
    /// intra-subzone.
    pub subzones: Option<PathBuf>,
    pub zone_property: String,
    pub tz_offset_minutes: i32,
    /// Fixes overlapping their successor by more than this are trimmed.
    pub overlap_tolerance_s: i64,
}

impl Default for InputConfig {
    fn default() -> Self {
        InputConfig {
            fixes: None,
            format: FixFormat::Csv,
            catalog: None,
            subzones: None,
            zone_property: DEFAULT_ZONE_PROPERTY.to_string(),
            tz_offset_minutes: 480,
            overlap_tolerance_s: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelConfig {
    /// POIs farther than this from every catalog place stay unlabeled.
    pub max_distance_m: f64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig { max_distance_m: 400.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterConfig {
    pub k: usize,
    pub restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
    /// SSE curve range, inclusive.
    pub k_min: usize,
    pub k_max: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig { k: 3, restarts: 50, max_iter: 300, tol: 1e-6, k_min: 1, k_max: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub frequency_unit: FrequencyUnit,
    /// Also write chart specifications next to the data files.
    pub plot_spec: bool,
    pub permutations: usize,
    pub histogram_bin_km: f64,
    pub histogram_smooth: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            frequency_unit: FrequencyUnit::Visits,
            plot_spec: true,
            permutations: 9999,
            histogram_bin_km: 1.0,
            histogram_smooth: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Seeds k-means and the permutation test.
    pub seed: u64,
    pub input: InputConfig,
    pub validity: ValidityConfig,
    pub stay_points: StayPointConfig,
    pub home_work: HomeWorkConfig,
    pub labeling: LabelConfig,
    pub features: FeatureConfig,
    pub cluster: ClusterConfig,
    pub analysis: AnalysisConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            input: InputConfig::default(),
            validity: ValidityConfig::default(),
            stay_points: StayPointConfig::default(),
            home_work: HomeWorkConfig::default(),
            labeling: LabelConfig::default(),
            features: FeatureConfig::default(),
            cluster: ClusterConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        PipelineConfig::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => config_err(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_err(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate().map_err(|e| config_err(format!("features: {e}")))?;

        let sp = &self.stay_points;
        if [sp.dist_m, sp.time_min, sp.merge_m].iter().any(|v| !(*v > 0.0)) || !(sp.gap_min >= 0.0) {
            return Err(config_err("stay_points: distances and durations must be positive"));
        }
        let hw = &self.home_work;
        for (name, [a, b]) in [("home_window_hours", hw.home_window_hours), ("work_window_hours", hw.work_window_hours)] {
            if a >= b || b > 24 {
                return Err(config_err(format!("home_work.{name}: need from < to <= 24")));
            }
        }
        if !(0.0..=1.0).contains(&hw.work_presence_ratio) {
            return Err(config_err("home_work.work_presence_ratio must lie in [0, 1]"));
        }
        let v = &self.validity;
        if !(0.0..=1.0).contains(&v.min_coverage) || !(0.0..=24.0).contains(&v.valid_day_hours) {
            return Err(config_err("validity: coverage in [0, 1] and hours in [0, 24]"));
        }
        if !(self.labeling.max_distance_m >= 0.0) {
            return Err(config_err("labeling.max_distance_m must be non-negative"));
        }
        let c = &self.cluster;
        if c.k == 0 || c.restarts == 0 || c.max_iter == 0 || !(c.tol >= 0.0) {
            return Err(config_err("cluster: k, restarts and max_iter must be positive"));
        }
        if c.k_min == 0 || c.k_min > c.k_max {
            return Err(config_err("cluster: need 1 <= k_min <= k_max"));
        }
        let a = &self.analysis;
        if !(a.histogram_bin_km > 0.0) {
            return Err(config_err("analysis.histogram_bin_km must be positive"));
        }
        if self.input.overlap_tolerance_s < 0 {
            return Err(config_err("input.overlap_tolerance_s must be non-negative"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn empty_file_is_default() {
        assert_eq!(PipelineConfig::from_toml("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let cfg = PipelineConfig::from_toml("seed = 5\n[cluster]\nk = 4\n").unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.cluster.k, 4);
        assert_eq!(cfg.cluster.restarts, 50);
        assert_eq!(cfg.features, FeatureConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(PipelineConfig::from_toml("sed = 5\n"), Err(Error::Config(_))));
        assert!(matches!(PipelineConfig::from_toml("[cluster]\nkk = 2\n"), Err(Error::Config(_))));
        assert!(matches!(PipelineConfig::from_toml("[nope]\n"), Err(Error::Config(_))));
    }

    #[test]
    fn edges_must_ascend() {
        let err = PipelineConfig::from_toml("[features]\ndcd_edges = [15.0, 5.0]\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let err = PipelineConfig::from_toml("[cluster]\nk_min = 4\nk_max = 2\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn paths_round_trip() {
        let mut cfg = PipelineConfig::default();
        cfg.input.fixes = Some("data/fixes.csv".into());
        cfg.input.catalog = Some("data/catalog.csv".into());
        let text = cfg.to_toml().unwrap();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);
    }
}
