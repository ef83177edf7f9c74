use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::geodesic::geodesics_from;
use super::knn::{knn_graph, nearest};
use super::mds::{classical_mds, Triangulation};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IsomapConfig {
    pub k: usize,
    pub dim: usize,
    /// All graph nodes are landmarks up to this count; above it a seeded
    /// random subset is used.
    pub max_landmarks: usize,
    pub seed: u64,
}

impl Default for IsomapConfig {
    fn default() -> Self {
        Self {
            k: 8,
            dim: 2,
            max_landmarks: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsomapModel {
    pub k: usize,
    /// Distinct training points (graph nodes).
    pub nodes: Array2<f64>,
    /// Node indices serving as landmarks.
    pub landmarks: Vec<usize>,
    /// Geodesic distance from every node (rows) to every landmark (columns).
    pub node_to_landmark: Array2<f64>,
    pub triangulation: Triangulation,
    /// Embedding of each input row, n × s.
    pub embedding: Array2<f64>,
}

pub fn isomap_fit(points: ArrayView2<f64>, config: &IsomapConfig) -> Result<IsomapModel> {
    if config.dim == 0 {
        return Err(Error::InvalidConfig("embedding dimension must be at least 1".into()));
    }
    let graph = knn_graph(points, config.k)?;
    let n = graph.node_count();
    if n <= config.dim {
        return Err(Error::DegenerateInput(format!(
            "need more than s = {} distinct points, got {n}",
            config.dim
        )));
    }
    let landmarks: Vec<usize> = if n <= config.max_landmarks {
        (0..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut l = sample(&mut rng, n, config.max_landmarks.max(config.dim + 1)).into_vec();
        l.sort_unstable();
        l
    };
    let from_landmarks = geodesics_from(&graph, &landmarks)?;
    let node_to_landmark = from_landmarks.t().as_standard_layout().into_owned();
    let mut between = node_to_landmark.select(Axis(0), &landmarks);
    // symmetrize the landmark block exactly
    let l = landmarks.len();
    for i in 0..l {
        for j in i + 1..l {
            let m = between[[i, j]].min(between[[j, i]]);
            between[[i, j]] = m;
            between[[j, i]] = m;
        }
    }
    let mds = classical_mds(between.view(), config.dim)?;
    let triangulation = Triangulation::new(between.view(), &mds);
    let node_embedding: Vec<_> = (0..n)
        .into_par_iter()
        .map(|i| triangulation.embed(node_to_landmark.row(i).as_slice().expect("standard layout")))
        .collect();
    let mut embedding = Array2::zeros((points.nrows(), config.dim));
    for (row, &node) in graph.node_of.iter().enumerate() {
        embedding.row_mut(row).assign(&node_embedding[node]);
    }
    Ok(IsomapModel {
        k: config.k,
        nodes: points.select(Axis(0), &graph.representative),
        landmarks,
        node_to_landmark,
        triangulation,
        embedding,
    })
}

impl IsomapModel {
    pub fn dim(&self) -> usize {
        self.embedding.ncols()
    }

    /// Embeds an unseen point: geodesic estimates to each landmark run
    /// through its k nearest training nodes, then get triangulated.
    pub fn embed_point(&self, query: ArrayView1<f64>) -> Result<Vec<f64>> {
        if query.len() != self.nodes.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.nodes.ncols(),
                actual: query.len(),
            });
        }
        let near = nearest(self.nodes.view(), query, self.k, None);
        let delta: Vec<f64> = (0..self.landmarks.len())
            .map(|l| {
                near.iter()
                    .map(|&(j, e)| e + self.node_to_landmark[[j, l]])
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        Ok(self.triangulation.embed(&delta).to_vec())
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

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::Rng;

    /// Strip of (t, h) rolled into 3-D: t ∈ [0, 1] maps to angle 1.5π(1 + 2t).
    pub fn swiss_roll(n: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array2::zeros((n, 3));
        let mut u = Array2::zeros((n, 2));
        for i in 0..n {
            let t: f64 = rng.random_range(0.0..1.0);
            let h: f64 = rng.random_range(0.0..1.0);
            let theta = 1.5 * std::f64::consts::PI * (1.0 + 2.0 * t);
            x[[i, 0]] = theta * theta.cos();
            x[[i, 1]] = 10.0 * h;
            x[[i, 2]] = theta * theta.sin();
            // arc length along the spiral makes the unrolled coordinate
            let arc = 0.5 * (theta * (1.0 + theta * theta).sqrt() + theta.asinh());
            u[[i, 0]] = arc;
            u[[i, 1]] = 10.0 * h;
        }
        (x, u)
    }

    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        for (rank, &i) in idx.iter().enumerate() {
            r[i] = rank as f64;
        }
        r
    }

    pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
        let (ra, rb) = (ranks(a), ranks(b));
        let n = a.len() as f64;
        let ma = ra.iter().sum::<f64>() / n;
        let mb = rb.iter().sum::<f64>() / n;
        let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    fn pairwise(m: &Array2<f64>) -> Vec<f64> {
        let n = m.nrows();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                out.push((&m.row(i) - &m.row(j)).mapv(|v| v * v).sum().sqrt());
            }
        }
        out
    }

    #[test]
    fn swiss_roll_unrolls() {
        let (x, u) = swiss_roll(400, 7);
        let model = isomap_fit(x.view(), &IsomapConfig { k: 8, dim: 2, ..Default::default() }).unwrap();
        let rho = spearman(&pairwise(&model.embedding), &pairwise(&u));
        assert!(rho > 0.95, "rank correlation {rho}");
    }

    #[test]
    fn out_of_sample_training_point_matches_fit() {
        let (x, _) = swiss_roll(200, 2);
        let model = isomap_fit(x.view(), &IsomapConfig::default()).unwrap();
        // a training node's nearest node is itself at distance 0
        let y = model.embed_point(x.row(5)).unwrap();
        for k in 0..2 {
            assert!((y[k] - model.embedding[[5, k]]).abs() < 1e-9);
        }
    }

    #[test]
    fn landmark_subset_still_embeds() {
        let (x, u) = swiss_roll(400, 4);
        let config = IsomapConfig { k: 8, dim: 2, max_landmarks: 100, seed: 1 };
        let model = isomap_fit(x.view(), &config).unwrap();
        assert_eq!(model.landmarks.len(), 100);
        let rho = spearman(&pairwise(&model.embedding), &pairwise(&u));
        assert!(rho > 0.9, "rank correlation {rho}");
    }

    #[test]
    fn disconnected_input() {
        let mut pts = Array2::zeros((10, 1));
        for i in 0..5 {
            pts[[i, 0]] = i as f64;
            pts[[i + 5, 0]] = 100.0 + i as f64;
        }
        let r = isomap_fit(pts.view(), &IsomapConfig { k: 2, dim: 1, ..Default::default() });
        assert!(matches!(r, Err(Error::DisconnectedGraph { .. })));
    }
}
