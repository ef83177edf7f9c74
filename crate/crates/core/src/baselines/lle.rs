use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::knn::{knn_graph, nearest};
use super::mds::sorted_eigen;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LleConfig {
    pub k: usize,
    pub dim: usize,
    /// Regularizer as a fraction of the local Gram trace, applied when
    /// k exceeds the input dimension.
    pub reg: f64,
    /// Points beyond this count are embedded out-of-sample.
    pub max_points: usize,
    pub seed: u64,
}

impl Default for LleConfig {
    fn default() -> Self {
        Self {
            k: 10,
            dim: 2,
            reg: 1e-3,
            max_points: 1000,
            seed: 0,
        }
    }
}

/// Relative eigenvalue threshold for treating a local Gram direction as null.
const NULL_TOL: f64 = 1e-10;

/// Affine weights (summing to one) that best reconstruct `point` from the
/// rows of `neighbors`. `reg` is added as `reg * trace` to the diagonal.
/// With `reg == 0` a singular Gram is solved exactly: if the point lies in
/// the neighbors' affine span the minimum-norm exact weights are returned.
pub fn reconstruction_weights(
    point: ArrayView1<f64>,
    neighbors: ArrayView2<f64>,
    reg: f64,
    id: usize,
) -> Result<Vec<f64>> {
    let k = neighbors.nrows();
    let z = &neighbors - &point;
    let mut c = z.dot(&z.t());
    let trace = c.diag().sum();
    if reg > 0.0 {
        if trace <= 0.0 {
            return Err(Error::SingularLocalGram(id));
        }
        c.diag_mut().mapv_inplace(|v| v + reg * trace);
    }
    let (values, vectors) = sorted_eigen(c.view());
    let top = values[0].max(0.0);
    let cutoff = NULL_TOL * top.max(f64::MIN_POSITIVE);
    let ones = Array1::<f64>::ones(k);
    let mut w = Array1::<f64>::zeros(k);
    // component of 1 in the null space gives zero-residual weights
    for (col, &l) in values.iter().enumerate() {
        if l <= cutoff {
            let v = vectors.column(col);
            w.scaled_add(v.dot(&ones), &v);
        }
    }
    if w.sum().abs() <= 1e-12 {
        w.fill(0.0);
        for (col, &l) in values.iter().enumerate() {
            if l > cutoff {
                let v = vectors.column(col);
                w.scaled_add(v.dot(&ones) / l, &v);
            }
        }
    }
    let total = w.sum();
    if !total.is_finite() || total.abs() <= 1e-12 {
        return Err(Error::SingularLocalGram(id));
    }
    Ok(w.mapv(|v| v / total).to_vec())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LleModel {
    pub k: usize,
    pub reg: f64,
    /// Distinct points the embedding was solved on.
    pub nodes: Array2<f64>,
    pub node_embedding: Array2<f64>,
    /// Embedding of each input row, n × s.
    pub embedding: Array2<f64>,
}

fn effective_reg(config_reg: f64, k: usize, input_dim: usize) -> f64 {
    if k > input_dim {
        config_reg
    } else {
        0.0
    }
}

pub fn lle_fit(points: ArrayView2<f64>, config: &LleConfig) -> Result<LleModel> {
    if config.dim == 0 {
        return Err(Error::InvalidConfig("embedding dimension must be at least 1".into()));
    }
    if config.reg < 0.0 {
        return Err(Error::InvalidConfig("reg must be nonnegative".into()));
    }
    let fit_rows: Vec<usize> = if points.nrows() > config.max_points {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut rows = sample(&mut rng, points.nrows(), config.max_points).into_vec();
        rows.sort_unstable();
        rows
    } else {
        (0..points.nrows()).collect()
    };
    let fit_points = points.select(Axis(0), &fit_rows);
    let graph = knn_graph(fit_points.view(), config.k)?;
    let nodes = fit_points.select(Axis(0), &graph.representative);
    let n = nodes.nrows();
    if n <= config.dim + 1 {
        return Err(Error::DegenerateInput(format!(
            "need more than s + 1 = {} distinct points, got {n}",
            config.dim + 1
        )));
    }
    let reg = effective_reg(config.reg, config.k, points.ncols());
    let rows: Result<Vec<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let idx: Vec<usize> = graph.knn[i].iter().map(|p| p.0).collect();
            reconstruction_weights(nodes.row(i), nodes.select(Axis(0), &idx).view(), reg, i)
        })
        .collect();
    let rows = rows?;
    // M = (I - W)ᵀ (I - W)
    let mut iw = Array2::<f64>::eye(n);
    for (i, w) in rows.iter().enumerate() {
        for (&(j, _), &wij) in graph.knn[i].iter().zip(w) {
            iw[[i, j]] -= wij;
        }
    }
    let m = iw.t().dot(&iw);
    let (values, vectors) = sorted_eigen(m.view());
    // ascending order: skip the bottom (constant) eigenvector
    let scale = (n as f64).sqrt();
    let mut node_embedding = Array2::zeros((n, config.dim));
    for c in 0..config.dim {
        let src = n - 2 - c;
        debug_assert!(values[src] >= values[n - 1] - 1e-9);
        node_embedding.column_mut(c).assign(&(&vectors.column(src) * scale));
    }
    let mut model = LleModel {
        k: config.k,
        reg,
        nodes,
        node_embedding,
        embedding: Array2::zeros((points.nrows(), config.dim)),
    };
    let mut fitted = vec![None; points.nrows()];
    for (pos, &row) in fit_rows.iter().enumerate() {
        fitted[row] = Some(graph.node_of[pos]);
    }
    for row in 0..points.nrows() {
        let y = match fitted[row] {
            Some(node) => model.node_embedding.row(node).to_owned(),
            None => Array1::from(model.embed_point(points.row(row))?),
        };
        model.embedding.row_mut(row).assign(&y);
    }
    Ok(model)
}

impl LleModel {
    pub fn dim(&self) -> usize {
        self.node_embedding.ncols()
    }

    /// Reconstruction weights over the k nearest nodes, applied to their
    /// embeddings. An exact match returns that node's embedding.
    pub fn embed_point(&self, query: ArrayView1<f64>) -> Result<Vec<f64>> {
        if query.len() != self.nodes.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.nodes.ncols(),
                actual: query.len(),
            });
        }
        let near = nearest(self.nodes.view(), query, self.k, None);
        if near[0].1 == 0.0 {
            return Ok(self.node_embedding.row(near[0].0).to_vec());
        }
        let idx: Vec<usize> = near.iter().map(|p| p.0).collect();
        let w = reconstruction_weights(query, self.nodes.select(Axis(0), &idx).view(), self.reg, 0)?;
        let mut y = Array1::zeros(self.dim());
        for (&j, &wj) in idx.iter().zip(&w) {
            y.scaled_add(wj, &self.node_embedding.row(j));
        }
        Ok(y.to_vec())
    }

    pub fn transform(&self, queries: ArrayView2<f64>) -> Result<Array2<f64>> {
        let rows: Result<Vec<Vec<f64>>> = (0..queries.nrows())
            .into_par_iter()
            .map(|i| self.embed_point(queries.row(i)))
            .collect();
        let rows = rows?;
        let mut out = Array2::zeros((rows.len(), self.dim()));
        for (i, r) in rows.iter().enumerate() {
            out.row_mut(i).assign(&ArrayView1::from(r));
        }
        Ok(out)
    }
}
