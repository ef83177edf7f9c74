use ndarray::{Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CellMap, Point};
use crate::nn::{train, Activation, LossKind, Network, TrainConfig, TrainReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionConfig {
    pub hidden: Vec<usize>,
    pub batch_norm: bool,
    /// Standardize each input column with training statistics.
    pub standardize_inputs: bool,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            batch_norm: true,
            standardize_inputs: false,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl RegressionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) {
            return Err(Error::InvalidConfig("hidden layer widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::InvalidConfig("validation_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Dense network regressing 2-D coordinates under MSE. Targets are
/// standardized internally; predictions come back in map units.
#[derive(Debug, Clone, PartialEq)]
pub struct Regressor {
    pub network: Network,
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub target_mean: Point,
    pub target_scale: Point,
}

fn column_stats(x: ArrayView2<f64>) -> (Vec<f64>, Vec<f64>) {
    let mean = x.mean_axis(Axis(0)).expect("nonempty");
    let std = x.std_axis(Axis(0), 0.0);
    let scale = std.iter().map(|&s| if s > 1e-12 { s } else { 1.0 }).collect();
    (mean.to_vec(), scale)
}

pub fn positions_matrix(points: &[Point]) -> Array2<f64> {
    Array2::from_shape_fn((points.len(), 2), |(i, k)| points[i][k])
}

impl Regressor {
    /// Sets up normalization from the training data and a fresh network.
    pub fn new(x: ArrayView2<f64>, y: &[Point], config: &RegressionConfig) -> Result<Self> {
        config.validate()?;
        if x.nrows() == 0 {
            return Err(Error::EmptyDataset);
        }
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                actual: y.len(),
            });
        }
        let (input_mean, input_scale) = if config.standardize_inputs {
            column_stats(x)
        } else {
            (vec![0.0; x.ncols()], vec![1.0; x.ncols()])
        };
        let (tm, ts) = column_stats(positions_matrix(y).view());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let network = Network::mlp(x.ncols(), &config.hidden, 2, Activation::Tanh, config.batch_norm, &mut rng);
        Ok(Self {
            network,
            input_mean,
            input_scale,
            target_mean: [tm[0], tm[1]],
            target_scale: [ts[0], ts[1]],
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_mean.len()
    }

    fn inputs(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.ncols(),
            });
        }
        let mut out = x.to_owned();
        for (mut col, (m, s)) in out.columns_mut().into_iter().zip(self.input_mean.iter().zip(&self.input_scale)) {
            col.mapv_inplace(|v| (v - m) / s);
        }
        Ok(out)
    }

    fn targets(&self, y: &[Point]) -> Array2<f64> {
        Array2::from_shape_fn((y.len(), 2), |(i, k)| (y[i][k] - self.target_mean[k]) / self.target_scale[k])
    }

    pub fn fit(
        &mut self,
        x: ArrayView2<f64>,
        y: &[Point],
        config: &TrainConfig,
        validation: Option<(ArrayView2<f64>, &[Point])>,
    ) -> Result<TrainReport> {
        let xs = self.inputs(x)?;
        let ys = self.targets(y);
        let val = match validation {
            Some((vx, vy)) if vx.nrows() > 0 => Some((self.inputs(vx)?, self.targets(vy))),
            _ => None,
        };
        let val_view = val.as_ref().map(|(a, b)| (a.view(), b.view()));
        train(&mut self.network, xs.view(), ys.view(), LossKind::Mse, config, val_view)
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<Point>> {
        let xs = self.inputs(x)?;
        let out = self.network.infer(xs.view())?.logits;
        Ok(out
            .rows()
            .into_iter()
            .map(|r| {
                [
                    r[0] * self.target_scale[0] + self.target_mean[0],
                    r[1] * self.target_scale[1] + self.target_mean[1],
                ]
            })
            .collect())
    }
}

/// Replaces each prediction outside an occupied cell by the nearest occupied
/// centroid; on-map predictions pass through untouched.
pub fn project_to_map(predictions: &[Point], map: &CellMap) -> Vec<Point> {
    predictions
        .iter()
        .map(|&p| if map.is_on_map(p) { p } else { map.nearest_occupied_centroid(p) })
        .collect()
}
