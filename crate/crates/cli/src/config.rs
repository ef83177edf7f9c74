//! Flat `key = value` experiment configuration.

use std::path::Path;

use noble_core::baselines::{EmbeddingConfig, RegressionConfig};
use noble_core::nn::OptimizerKind;
use noble_core::wifi::CoarseSource;
use noble_core::{ImuModelConfig, TrainConfig, WifiModelConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

/// One file fully determines an experiment. Every key is optional; missing
/// keys take the library defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Fine cell side in meters; defaults to 0.2 for Wi-Fi and 0.4 for IMU.
    pub tau: Option<f64>,
    pub coarse_side: Option<f64>,
    pub coarse_source: CoarseSource,
    pub adjacency: Option<bool>,
    pub include_building: bool,
    pub include_floor: bool,
    pub hidden: Vec<usize>,
    pub batch_norm: bool,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub l2: f64,
    /// Early-stopping patience in epochs; 0 disables it.
    pub patience: usize,
    pub validation_fraction: f64,
    pub projection_dim: usize,
    pub max_segments: usize,
    pub beta: f64,
    pub scale_axes: bool,
    pub k: usize,
    pub embedding_dim: usize,
    pub max_points: usize,
    pub lle_reg: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let wifi = WifiModelConfig::default();
        let imu = ImuModelConfig::default();
        let train = TrainConfig::default();
        let emb = EmbeddingConfig::default();
        Self {
            seed: 0,
            tau: None,
            coarse_side: None,
            coarse_source: wifi.coarse_source,
            adjacency: None,
            include_building: wifi.include_building,
            include_floor: wifi.include_floor,
            hidden: wifi.hidden,
            batch_norm: wifi.batch_norm,
            optimizer: train.optimizer,
            learning_rate: train.learning_rate,
            batch_size: train.batch_size,
            epochs: train.epochs,
            l2: train.l2,
            patience: train.patience.unwrap_or(0),
            validation_fraction: wifi.validation_fraction,
            projection_dim: imu.projection_dim,
            max_segments: imu.max_segments,
            beta: imu.beta,
            scale_axes: imu.scale_axes,
            k: emb.k,
            embedding_dim: emb.dim,
            max_points: emb.max_points,
            lle_reg: emb.reg,
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {}", e.message())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("--config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Usage(m) => CliError::Usage(format!("--config {}: {m}", path.display())),
            other => other,
        })
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            optimizer: self.optimizer,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            l2: self.l2,
            patience: (self.patience > 0).then_some(self.patience),
        }
    }

    pub fn wifi_tau(&self) -> f64 {
        self.tau.unwrap_or(WifiModelConfig::default().tau)
    }

    pub fn imu_tau(&self) -> f64 {
        self.tau.unwrap_or(ImuModelConfig::default().tau)
    }

    pub fn wifi_model(&self) -> WifiModelConfig {
        WifiModelConfig {
            tau: self.wifi_tau(),
            coarse_side: self.coarse_side,
            coarse_source: self.coarse_source,
            adjacency: self.adjacency.unwrap_or(WifiModelConfig::default().adjacency),
            hidden: self.hidden.clone(),
            batch_norm: self.batch_norm,
            include_building: self.include_building,
            include_floor: self.include_floor,
            validation_fraction: self.validation_fraction,
            seed: self.seed,
        }
    }

    pub fn imu_model(&self) -> ImuModelConfig {
        ImuModelConfig {
            tau: self.imu_tau(),
            projection_dim: self.projection_dim,
            max_segments: self.max_segments,
            hidden: self.hidden.clone(),
            batch_norm: self.batch_norm,
            beta: self.beta,
            adjacency: self.adjacency.unwrap_or(ImuModelConfig::default().adjacency),
            scale_axes: self.scale_axes,
            seed: self.seed,
        }
    }

    pub fn regression(&self, standardize_inputs: bool) -> RegressionConfig {
        RegressionConfig {
            hidden: self.hidden.clone(),
            batch_norm: self.batch_norm,
            standardize_inputs,
            validation_fraction: self.validation_fraction,
            seed: self.seed,
        }
    }

    pub fn embedding(&self) -> EmbeddingConfig {
        EmbeddingConfig {
            k: self.k,
            dim: self.embedding_dim,
            max_points: self.max_points,
            reg: self.lle_reg,
            seed: self.seed,
        }
    }

    /// The config as a JSON object for echoing into outputs. Unset optional
    /// keys are left out so they cannot mask resolved values.
    pub fn echo(&self) -> Map<String, Value> {
        match serde_json::to_value(self).expect("config serializes") {
            Value::Object(m) => m.into_iter().filter(|(_, v)| !v.is_null()).collect(),
            _ => unreachable!("struct serializes to an object"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(ExperimentConfig::parse("").unwrap(), ExperimentConfig::default());
        assert_eq!(ExperimentConfig::default().train(), TrainConfig::default());
    }

    #[test]
    fn unknown_key_names_the_field() {
        match ExperimentConfig::parse("tua = 1.0") {
            Err(CliError::Usage(m)) => assert!(m.contains("tua"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn flat_keys_map_through() {
        let c = ExperimentConfig::parse("seed = 4\ntau = 2.0\npatience = 0\nhidden = [8]\n").unwrap();
        assert_eq!(c.wifi_model().tau, 2.0);
        assert_eq!(c.imu_model().tau, 2.0);
        assert_eq!(c.train().patience, None);
        assert_eq!(c.train().seed, 4);
        assert_eq!(c.wifi_model().hidden, vec![8]);
    }
}
