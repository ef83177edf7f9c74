//! Numerical checks of the classification/manifold-learning correspondence:
//! the MDS stress objective, the inner-product to distance rewrite of the
//! sigmoid, and the closeness bound for same-class embeddings.

use std::ops::Range;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datasets::store::write_atomic;
use crate::error::{Error, Result};
use crate::nn::network::sigmoid;
use crate::nn::{train, Activation, LossKind, Network, TrainConfig};
use crate::wifi::argmax;

/// Unit-length tolerance for the rewrite preconditions.
pub const UNIT_TOL: f64 = 1e-10;

fn distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Σ_{i<j} (‖zᵢ − zⱼ‖ − ‖xᵢ − xⱼ‖)².
pub fn mds_objective(z: ArrayView2<f64>, x: ArrayView2<f64>) -> Result<f64> {
    if z.nrows() != x.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            actual: z.nrows(),
        });
    }
    let n = z.nrows();
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let d = distance(z.row(i), z.row(j)) - distance(x.row(i), x.row(j));
            total += d * d;
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmoidRewrite {
    /// (1 + exp(−w·z))⁻¹
    pub inner_form: f64,
    /// (1 + exp(½‖w − z‖² − 1))⁻¹
    pub distance_form: f64,
    pub residual: f64,
}

fn require_unit(v: &[f64]) -> Result<()> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > UNIT_TOL {
        return Err(Error::NotNormalized(norm));
    }
    Ok(())
}

pub fn sigmoid_rewrite(w: &[f64], z: &[f64]) -> Result<SigmoidRewrite> {
    if w.len() != z.len() {
        return Err(Error::DimensionMismatch {
            expected: w.len(),
            actual: z.len(),
        });
    }
    require_unit(w)?;
    require_unit(z)?;
    let dot: f64 = w.iter().zip(z).map(|(a, b)| a * b).sum();
    let sq: f64 = w.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
    let inner_form = sigmoid(dot);
    let distance_form = 1.0 / (1.0 + (0.5 * sq - 1.0).exp());
    Ok(SigmoidRewrite {
        inner_form,
        distance_form,
        residual: (inner_form - distance_form).abs(),
    })
}

pub fn random_unit(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmoidSweep {
    pub pairs: usize,
    pub min_dim: usize,
    pub max_dim: usize,
    pub max_residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Rewrite residuals over random unit pairs with dimensions drawn from
/// `min_dim..=max_dim`.
pub fn sigmoid_rewrite_sweep(pairs: usize, min_dim: usize, max_dim: usize, seed: u64) -> Result<SigmoidSweep> {
    if min_dim == 0 || min_dim > max_dim {
        return Err(Error::InvalidConfig("need 1 <= min_dim <= max_dim".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_residual: f64 = 0.0;
    for _ in 0..pairs {
        let dim = rng.random_range(min_dim..=max_dim);
        let w = random_unit(dim, &mut rng);
        let z = random_unit(dim, &mut rng);
        max_residual = max_residual.max(sigmoid_rewrite(&w, &z)?.residual);
    }
    let tolerance = 1e-12;
    Ok(SigmoidSweep {
        pairs,
        min_dim,
        max_dim,
        max_residual,
        tolerance,
        passed: max_residual < tolerance,
    })
}

/// Unit-normalized penultimate embeddings, unit-normalized output-layer
/// class weights, and predicted classes of a trained classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassEmbedding {
    /// n × dim, unit rows.
    pub z: Array2<f64>,
    /// classes × dim, unit rows (output weight columns).
    pub w: Array2<f64>,
    pub predicted: Vec<usize>,
}

fn normalize_rows(m: &mut Array2<f64>) -> Result<()> {
    for mut row in m.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm <= 0.0 || !norm.is_finite() {
            return Err(Error::NotNormalized(norm));
        }
        row.mapv_inplace(|v| v / norm);
    }
    Ok(())
}

pub fn class_embedding(net: &Network, x: ArrayView2<f64>) -> Result<ClassEmbedding> {
    class_embedding_range(net, x, 0..net.output_dim())
}

/// Like [`class_embedding`] but restricted to the output units in `classes`
/// (one head of a multi-head net); class IDs are relative to the range.
pub fn class_embedding_range(net: &Network, x: ArrayView2<f64>, classes: Range<usize>) -> Result<ClassEmbedding> {
    let out = net
        .output_layer()
        .ok_or_else(|| Error::InvalidConfig("network has no linear output layer".into()))?;
    if classes.is_empty() || classes.end > out.outputs() {
        return Err(Error::InvalidConfig(format!(
            "class range {classes:?} outside {} outputs",
            out.outputs()
        )));
    }
    let pass = net.infer(x)?;
    let predicted = pass
        .logits
        .rows()
        .into_iter()
        .map(|r| argmax(&r.slice(ndarray::s![classes.clone()]).to_vec()))
        .collect();
    let mut z = pass.embeddings;
    normalize_rows(&mut z)?;
    let mut w = out.weight.slice(ndarray::s![.., classes]).t().to_owned();
    normalize_rows(&mut w)?;
    Ok(ClassEmbedding { z, w, predicted })
}

impl ClassEmbedding {
    /// ‖w_c − zᵢ‖² for each sample's predicted class c.
    pub fn sq_gap(&self, i: usize) -> f64 {
        let d = distance(self.w.row(self.predicted[i]), self.z.row(i));
        d * d
    }

    /// Smallest λ under which every sample qualifies.
    pub fn lambda_admitting_all(&self) -> f64 {
        (0..self.z.nrows()).map(|i| self.sq_gap(i)).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropositionReport {
    pub lambda: f64,
    pub qualifying_pairs: usize,
    /// Fraction with ‖zᵢ − zⱼ‖² ≤ 4λ (a theorem; must be 1).
    pub within_4_lambda: f64,
    /// Fraction with ‖zᵢ − zⱼ‖² ≤ 2λ (reported only).
    pub within_2_lambda: f64,
    pub max_pair_sq_distance: f64,
    /// Mean ‖zᵢ − zⱼ‖ over all same-predicted-class pairs.
    pub intra_class_mean: f64,
    /// Mean ‖zᵢ − zⱼ‖ over all pairs with different predicted classes.
    pub inter_class_mean: f64,
}

/// Relative slack on the 4λ comparison for floating-point rounding.
const BOUND_SLACK: f64 = 1e-12;

pub fn proposition_check(emb: &ClassEmbedding, lambda: f64) -> Result<PropositionReport> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidConfig("lambda must be nonnegative".into()));
    }
    let n = emb.z.nrows();
    let gaps: Vec<f64> = (0..n).map(|i| emb.sq_gap(i)).collect();
    let (mut qualifying, mut four, mut two) = (0usize, 0usize, 0usize);
    let mut max_sq: f64 = 0.0;
    let (mut intra_sum, mut intra_n, mut inter_sum, mut inter_n) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..n {
        for j in i + 1..n {
            let d = distance(emb.z.row(i), emb.z.row(j));
            if emb.predicted[i] != emb.predicted[j] {
                inter_sum += d;
                inter_n += 1;
                continue;
            }
            intra_sum += d;
            intra_n += 1;
            if gaps[i] <= lambda && gaps[j] <= lambda {
                let sq = d * d;
                qualifying += 1;
                max_sq = max_sq.max(sq);
                if sq <= 4.0 * lambda * (1.0 + BOUND_SLACK) {
                    four += 1;
                }
                if sq <= 2.0 * lambda {
                    two += 1;
                }
            }
        }
    }
    if qualifying == 0 {
        return Err(Error::NoQualifyingPairs(lambda));
    }
    let mean = |s: f64, k: usize| if k == 0 { f64::NAN } else { s / k as f64 };
    Ok(PropositionReport {
        lambda,
        qualifying_pairs: qualifying,
        within_4_lambda: four as f64 / qualifying as f64,
        within_2_lambda: two as f64 / qualifying as f64,
        max_pair_sq_distance: max_sq,
        intra_class_mean: mean(intra_sum, intra_n),
        inter_class_mean: mean(inter_sum, inter_n),
    })
}

/// Two isotropic Gaussian blobs in the plane, `per_class` points each,
/// centers at (±2, 0) with unit spread. Returns inputs and one-hot targets.
pub fn two_blobs(per_class: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 2 * per_class;
    let mut x = Array2::zeros((n, 2));
    let mut y = Array2::zeros((n, 2));
    for i in 0..n {
        let class = i / per_class;
        let cx = if class == 0 { -2.0 } else { 2.0 };
        let gx: f64 = StandardNormal.sample(&mut rng);
        let gy: f64 = StandardNormal.sample(&mut rng);
        x[[i, 0]] = cx + gx;
        x[[i, 1]] = gy;
        y[[i, class]] = 1.0;
    }
    (x, y)
}

/// Trains a small tanh classifier on [`two_blobs`].
pub fn train_blob_classifier(per_class: usize, seed: u64) -> Result<(Network, Array2<f64>)> {
    let (x, y) = two_blobs(per_class, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::mlp(2, &[16, 8], 2, Activation::Tanh, false, &mut rng);
    let config = TrainConfig {
        learning_rate: 0.01,
        batch_size: 32,
        epochs: 200,
        seed,
        patience: None,
        ..TrainConfig::default()
    };
    train(&mut net, x.view(), y.view(), LossKind::Bce, &config, None)?;
    Ok((net, x))
}

/// Contents of `theory_report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub sigmoid_rewrite: SigmoidSweep,
    pub proposition: PropositionReport,
    pub seed: u64,
}

impl TheoryReport {
    /// Everything that is asserted: the rewrite residual and the 4λ bound.
    pub fn passed(&self) -> bool {
        self.sigmoid_rewrite.passed && self.proposition.within_4_lambda == 1.0
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }
}

/// Rewrite sweep plus the proposition on `emb`; λ defaults to the value
/// admitting every sample.
pub fn theory_report(emb: &ClassEmbedding, lambda: Option<f64>, seed: u64) -> Result<TheoryReport> {
    let sweep = sigmoid_rewrite_sweep(10_000, 2, 64, seed)?;
    let lambda = lambda.unwrap_or_else(|| emb.lambda_admitting_all());
    Ok(TheoryReport {
        sigmoid_rewrite: sweep,
        proposition: proposition_check(emb, lambda)?,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn naive_objective(z: &Array2<f64>, x: &Array2<f64>) -> f64 {
        let n = z.nrows();
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i < j {
                    let mut dz = 0.0;
                    for k in 0..z.ncols() {
                        dz += (z[[i, k]] - z[[j, k]]).powi(2);
                    }
                    let mut dx = 0.0;
                    for k in 0..x.ncols() {
                        dx += (x[[i, k]] - x[[j, k]]).powi(2);
                    }
                    total += (dz.sqrt() - dx.sqrt()).powi(2);
                }
            }
        }
        total
    }

    #[test]
    fn objective_zero_for_isometries() {
        let x = array![[0.0, 0.0], [1.0, 0.0], [0.3, 2.0], [-1.0, 0.5]];
        assert_eq!(mds_objective(x.view(), x.view()).unwrap(), 0.0);
        let (s, c) = 0.7f64.sin_cos();
        let rot = array![[c, -s], [s, c]];
        let z = x.dot(&rot) + 3.0;
        assert!(mds_objective(z.view(), x.view()).unwrap() < 1e-24);
    }

    #[test]
    fn objective_matches_pair_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = Array2::from_shape_fn((5, 2), |_| rng.random_range(-1.0..1.0));
        let x = Array2::from_shape_fn((5, 4), |_| rng.random_range(-1.0..1.0));
        let got = mds_objective(z.view(), x.view()).unwrap();
        assert!((got - naive_objective(&z, &x)).abs() < 1e-12);
    }

    #[test]
    fn rewrite_fixed_points() {
        let z = [0.6, 0.8];
        let same = sigmoid_rewrite(&z, &z).unwrap();
        assert!((same.inner_form - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!((same.distance_form - 0.731_058_578_630_004_9).abs() < 1e-12);
        let anti = sigmoid_rewrite(&[-0.6, -0.8], &z).unwrap();
        assert!((anti.inner_form - 0.268_941_421_369_995_1).abs() < 1e-12);
        assert!(anti.residual < 1e-12);
        assert!(matches!(sigmoid_rewrite(&[1.0, 1.0], &z), Err(Error::NotNormalized(_))));
    }

    #[test]
    fn rewrite_sweep() {
        let s = sigmoid_rewrite_sweep(10_000, 2, 64, 0).unwrap();
        assert!(s.passed, "max residual {}", s.max_residual);
    }

    #[test]
    fn coincident_embeddings_have_zero_distance() {
        let emb = ClassEmbedding {
            z: array![[1.0, 0.0], [1.0, 0.0]],
            w: array![[1.0, 0.0], [0.0, 1.0]],
            predicted: vec![0, 0],
        };
        let r = proposition_check(&emb, 0.0).unwrap();
        assert_eq!(r.qualifying_pairs, 1);
        assert_eq!(r.max_pair_sq_distance, 0.0);
        assert_eq!(r.within_4_lambda, 1.0);
        assert_eq!(r.within_2_lambda, 1.0);
    }

    #[test]
    fn tiny_lambda_admits_nothing() {
        let emb = ClassEmbedding {
            z: array![[0.0, 1.0], [0.0, 1.0]],
            w: array![[1.0, 0.0]],
            predicted: vec![0, 0],
        };
        assert!(matches!(proposition_check(&emb, 0.5), Err(Error::NoQualifyingPairs(_))));
    }

    #[test]
    fn trained_blobs_separate() {
        let (net, x) = train_blob_classifier(100, 3).unwrap();
        let emb = class_embedding(&net, x.view()).unwrap();
        let r = proposition_check(&emb, emb.lambda_admitting_all()).unwrap();
        assert_eq!(r.within_4_lambda, 1.0);
        assert!(r.intra_class_mean < r.inter_class_mean, "{r:?}");
        // an independent pass over same-class pairs for the 4λ bound
        let n = emb.z.nrows();
        for i in 0..n {
            for j in i + 1..n {
                if emb.predicted[i] == emb.predicted[j] {
                    let bound = (emb.sq_gap(i).sqrt() + emb.sq_gap(j).sqrt()).powi(2);
                    let d = distance(emb.z.row(i), emb.z.row(j));
                    assert!(d * d <= bound + 1e-12);
                }
            }
        }
    }
}
