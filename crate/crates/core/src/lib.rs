//! Mobility analytics over GPS trajectories.
//!
//! Raw fixes become stay points and POIs, POIs become Home, Work and
//! labeled places, and each user's days become Workday and Offday feature
//! vectors (an origin-destination matrix over distance bins plus the
//! distribution of a daily characteristic distance). Users are then
//! clustered with k-means and each cluster is summarised by which
//! (distance, place type) combinations its members visit.
//!
//! [`pipeline`] wires the stages together; [`synth`] produces trajectories
//! with known archetypes for checking the whole chain.

// `!(x > 0.0)` is used on purpose: it rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod calendar;
pub mod cluster;
pub mod config;
pub mod error;
pub mod features;
pub mod geo;
pub mod ingest;
pub mod labeling;
pub mod pipeline;
pub mod poi;
pub mod synth;

pub use analysis::{average_frequency, user_commonality, violin_export, FrequencyUnit, HeatmapGrid, ViolinExport};
pub use cluster::{adjusted_rand_index, kmeans, pearson_r, sse_curve, suggest_k, ClusterModel, KMeansConfig, SseCurve};
pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use features::{
    build_feature_vector, daily_characteristic_distance, od_matrix, radius_of_gyration, DcdFeatures, FeatureVector,
    OdMatrix, ThresholdScheme,
};
pub use geo::{haversine_km, mean_coordinate, GeoPoint, SubzoneMap};
pub use ingest::{parse_fixes, validity_filter, GpsFix, UserDataset};
pub use labeling::{LabelCatalog, PoiCategory};
pub use poi::{detect_home_work, detect_stay_points, segment_days, DayRecord, DayType, Poi, UserPois, UserProfile, Visit};
pub use synth::{generate, GroundTruth, SynthSpec};
