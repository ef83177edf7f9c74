//! Corpus ingestion, path construction and synthetic generators.

pub mod imu;
pub mod store;
pub mod synth;
pub mod wifi;

pub use imu::{
    build_imu_paths, ImuCorpus, ImuPath, ReferenceWalk, Segment, SplitRule, Splits,
};
pub use synth::{synth_imu, synth_wifi, OccupancyMask, SynthImuParams, SynthWifiParams};
pub use wifi::{load_ipin2016, load_ujiindoorloc, WifiCorpus, WifiSample};
