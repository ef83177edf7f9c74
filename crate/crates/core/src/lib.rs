//! Grid-quantized multi-label localization for Wi-Fi fingerprints and IMU
//! tracking, with regression and manifold-learning baselines.

pub mod baselines;
pub mod datasets;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod nn;
pub mod theory;
pub mod tracking;
pub mod wifi;

pub use datasets::{ImuCorpus, ImuPath, Segment, WifiCorpus, WifiSample};
pub use error::{Error, Result};
pub use grid::{CellIndex, CellMap, GridSpec, Point};
pub use metrics::MetricsReport;
pub use nn::{Network, TrainConfig, TrainReport};
pub use tracking::{ImuModel, ImuModelConfig};
pub use wifi::{WifiModel, WifiModelConfig};
