//! Training orchestration: configuration, presets, per-layer training,
//! stacking, metrics and feature export.

pub mod config;
pub mod features;
pub mod metrics;
pub mod presets;
pub mod train;

pub use config::{LayerConfig, ResetMode, RunConfig, CONFIG_VERSION, LAMBDA_M_GRID};
pub use features::{decode_features, encode_features, export_features, read_features, write_features, FeatureVolume};
pub use metrics::{read_metrics_csv, save_metrics_csv, write_metrics_csv, MetricsRow, METRICS_HEADER};
pub use presets::{classify, search_preset, Preset};
pub use train::{
    batch_mi, layer_input, run_multilayer, train_layer, FrozenLayer, LayerOutcome, LayerRun, ResetPolicy, SweepPoint,
    VideoSource,
};
