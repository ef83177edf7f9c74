//! Comparison models: direct coordinate regression, its map projection, and
//! regressors over Isomap / LLE embeddings, with the graph and MDS pieces
//! they are built from.

pub mod embedding;
pub mod geodesic;
pub mod isomap;
pub mod knn;
pub mod lle;
pub mod mds;
pub mod regression;

use ndarray::Axis;
use serde_json::{Map, Value};

pub use embedding::{write_embedding_csv, Embedder, EmbeddingConfig, EmbeddingMethod};
pub use geodesic::{dijkstra, geodesic_distances};
pub use isomap::{isomap_fit, IsomapConfig, IsomapModel};
pub use knn::{knn_graph, NeighborGraph};
pub use lle::{lle_fit, reconstruction_weights, LleConfig, LleModel};
pub use mds::{classical_mds, MdsEmbedding};
pub use regression::{project_to_map, RegressionConfig, Regressor};

use crate::datasets::{WifiCorpus, WifiSample};
use crate::error::{Error, Result};
use crate::grid::{CellMap, GridSpec, Point};
use crate::metrics::{evaluate_positions, MetricsReport};
use crate::nn::{TrainConfig, TrainReport};
use crate::wifi::{holdout_split, rssi_matrix};

fn require_normalized(corpus: &WifiCorpus) -> Result<()> {
    if corpus.normalization.is_none() {
        return Err(Error::InvalidConfig("corpus must be normalized first".into()));
    }
    Ok(())
}

/// Per-epoch validation data: a seeded holdout from training, or the test
/// split when the fraction is zero.
enum Validation {
    Holdout(Vec<usize>),
    Test,
    Off,
}

fn split(corpus: &WifiCorpus, fraction: f64, seed: u64) -> (Vec<usize>, Validation) {
    let n = corpus.train.len();
    if fraction > 0.0 {
        let (fit, hold) = holdout_split(n, fraction, seed ^ 0x7a11);
        let v = if hold.is_empty() { Validation::Off } else { Validation::Holdout(hold) };
        return (fit, v);
    }
    let v = if corpus.test.is_empty() { Validation::Off } else { Validation::Test };
    ((0..n).collect(), v)
}

fn train_positions(corpus: &WifiCorpus, rows: &[usize]) -> Vec<Point> {
    rows.iter().map(|&i| corpus.train[i].position).collect()
}

/// Fine-cell map over the training positions; the yardstick for off-map
/// and fine-hit rates of every Wi-Fi model.
pub fn training_cell_map(corpus: &WifiCorpus, tau: f64) -> Result<CellMap> {
    let points = corpus.train_positions();
    CellMap::build(GridSpec::fit(&points, tau, None)?, &points)
}

fn positions(samples: &[WifiSample]) -> Vec<Point> {
    samples.iter().map(|s| s.position).collect()
}

/// Direct RSSI → coordinate regression under MSE.
pub fn deep_regression(
    corpus: &WifiCorpus,
    config: &RegressionConfig,
    train_config: &TrainConfig,
) -> Result<(Regressor, TrainReport)> {
    require_normalized(corpus)?;
    if corpus.train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let x = rssi_matrix(&corpus.train, corpus.wap_count)?;
    let (fit, validation) = split(corpus, config.validation_fraction, train_config.seed);
    let validation = match validation {
        Validation::Holdout(h) => Some((x.select(Axis(0), &h), train_positions(corpus, &h))),
        Validation::Test => Some((rssi_matrix(&corpus.test, corpus.wap_count)?, positions(&corpus.test))),
        Validation::Off => None,
    };
    let fx = x.select(Axis(0), &fit);
    let fy = train_positions(corpus, &fit);
    let mut model = Regressor::new(fx.view(), &fy, config)?;
    let val = validation.as_ref().map(|(vx, vy)| (vx.view(), vy.as_slice()));
    let report = model.fit(fx.view(), &fy, train_config, val)?;
    Ok((model, report))
}

/// (truth, prediction) pairs of a regressor over `samples`.
pub fn regression_pairs(model: &Regressor, samples: &[WifiSample], width: usize) -> Result<Vec<(Point, Point)>> {
    if samples.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let x = rssi_matrix(samples, width)?;
    let pred = model.predict(x.view())?;
    Ok(positions(samples).into_iter().zip(pred).collect())
}

/// Metrics for the projected version of existing regression pairs.
pub fn regression_projection(
    pairs: &[(Point, Point)],
    map: &CellMap,
    config: Map<String, Value>,
) -> Result<(MetricsReport, Vec<(Point, Point)>)> {
    let preds: Vec<Point> = pairs.iter().map(|p| p.1).collect();
    let projected: Vec<(Point, Point)> = pairs
        .iter()
        .map(|p| p.0)
        .zip(project_to_map(&preds, map))
        .collect();
    Ok((evaluate_positions(&projected, map, config)?, projected))
}

/// Isomap or LLE embedding of the training RSSI followed by a coordinate
/// regressor; test inputs are embedded out-of-sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    pub embedder: Embedder,
    pub regressor: Regressor,
}

impl EmbeddingModel {
    pub fn method(&self) -> EmbeddingMethod {
        self.embedder.method()
    }

    pub fn pairs(&self, samples: &[WifiSample], width: usize) -> Result<Vec<(Point, Point)>> {
        if samples.is_empty() {
            return Err(Error::EmptyEvaluation);
        }
        let x = rssi_matrix(samples, width)?;
        let e = self.embedder.transform(x.view())?;
        let pred = self.regressor.predict(e.view())?;
        Ok(positions(samples).into_iter().zip(pred).collect())
    }
}

pub fn embedding_regression(
    corpus: &WifiCorpus,
    method: EmbeddingMethod,
    embedding: &EmbeddingConfig,
    config: &RegressionConfig,
    train_config: &TrainConfig,
) -> Result<(EmbeddingModel, TrainReport)> {
    require_normalized(corpus)?;
    if corpus.train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let x = rssi_matrix(&corpus.train, corpus.wap_count)?;
    let embedder = Embedder::fit(x.view(), method, embedding)?;
    let e = embedder.embedding();
    let (fit, validation) = split(corpus, config.validation_fraction, train_config.seed);
    let validation = match validation {
        Validation::Holdout(h) => Some((e.select(Axis(0), &h), train_positions(corpus, &h))),
        Validation::Test => {
            let vx = rssi_matrix(&corpus.test, corpus.wap_count)?;
            Some((embedder.transform(vx.view())?, positions(&corpus.test)))
        }
        Validation::Off => None,
    };
    let fx = e.select(Axis(0), &fit);
    let fy = train_positions(corpus, &fit);
    let mut regressor = Regressor::new(fx.view(), &fy, config)?;
    let val = validation.as_ref().map(|(vx, vy)| (vx.view(), vy.as_slice()));
    let report = regressor.fit(fx.view(), &fy, train_config, val)?;
    Ok((EmbeddingModel { embedder, regressor }, report))
}
