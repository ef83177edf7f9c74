use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::isomap::{isomap_fit, IsomapConfig, IsomapModel};
use super::lle::{lle_fit, LleConfig, LleModel};
use crate::datasets::store::write_atomic;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingMethod {
    Isomap,
    Lle,
}

impl EmbeddingMethod {
    pub fn name(self) -> &'static str {
        match self {
            Self::Isomap => "isomap",
            Self::Lle => "lle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub k: usize,
    /// Embedding dimension s.
    pub dim: usize,
    /// Landmark cap for Isomap, fit-set cap for LLE.
    pub max_points: usize,
    /// LLE regularizer (fraction of the local Gram trace).
    pub reg: f64,
    pub seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            k: 10,
            dim: 50,
            max_points: 1000,
            reg: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Embedder {
    Isomap(IsomapModel),
    Lle(LleModel),
}

impl Embedder {
    pub fn fit(points: ArrayView2<f64>, method: EmbeddingMethod, config: &EmbeddingConfig) -> Result<Self> {
        if config.dim >= points.nrows() {
            return Err(Error::DegenerateInput(format!(
                "embedding dimension {} needs more than that many points, got {}",
                config.dim,
                points.nrows()
            )));
        }
        Ok(match method {
            EmbeddingMethod::Isomap => Self::Isomap(isomap_fit(
                points,
                &IsomapConfig {
                    k: config.k,
                    dim: config.dim,
                    max_landmarks: config.max_points,
                    seed: config.seed,
                },
            )?),
            EmbeddingMethod::Lle => Self::Lle(lle_fit(
                points,
                &LleConfig {
                    k: config.k,
                    dim: config.dim,
                    reg: config.reg,
                    max_points: config.max_points,
                    seed: config.seed,
                },
            )?),
        })
    }

    pub fn method(&self) -> EmbeddingMethod {
        match self {
            Self::Isomap(_) => EmbeddingMethod::Isomap,
            Self::Lle(_) => EmbeddingMethod::Lle,
        }
    }

    /// Embedding of the training rows.
    pub fn embedding(&self) -> &Array2<f64> {
        match self {
            Self::Isomap(m) => &m.embedding,
            Self::Lle(m) => &m.embedding,
        }
    }

    pub fn transform(&self, queries: ArrayView2<f64>) -> Result<Array2<f64>> {
        match self {
            Self::Isomap(m) => m.transform(queries),
            Self::Lle(m) => m.transform(queries),
        }
    }
}

/// One CSV row per point, columns `e0..e{s-1}`.
pub fn write_embedding_csv(path: &Path, embedding: ArrayView2<f64>) -> Result<()> {
    let mut out = (0..embedding.ncols()).map(|c| format!("e{c}")).collect::<Vec<_>>().join(",");
    out.push('\n');
    for row in embedding.rows() {
        let line = row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
        let _ = writeln!(out, "{line}");
    }
    write_atomic(path, out.as_bytes())
}
