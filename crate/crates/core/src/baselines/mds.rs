use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};

/// Relative tolerance for the symmetry and zero-diagonal checks.
const SYMMETRY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct MdsEmbedding {
    /// n × s coordinates.
    pub coords: Array2<f64>,
    /// Retained eigenvalues, descending, negatives clamped to zero.
    pub eigenvalues: Vec<f64>,
    /// n × s unit eigenvectors matching `eigenvalues`.
    pub eigenvectors: Array2<f64>,
}

pub fn validate_distances(d: ArrayView2<f64>) -> Result<()> {
    let n = d.nrows();
    if d.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: d.ncols(),
        });
    }
    for i in 0..n {
        for j in 0..n {
            let v = d[[i, j]];
            if !v.is_finite() {
                return Err(Error::DegenerateInput(format!("non-finite distance at ({i}, {j})")));
            }
            if v < 0.0 {
                return Err(Error::NegativeEntries { i, j, value: v });
            }
            let dev = (v - d[[j, i]]).abs();
            if dev > SYMMETRY_TOL * v.abs().max(1.0) {
                return Err(Error::NonSymmetric { i, j, deviation: dev });
            }
        }
        if d[[i, i]] > SYMMETRY_TOL {
            return Err(Error::DegenerateInput(format!("nonzero diagonal at {i}")));
        }
    }
    Ok(())
}

/// B = -1/2 J D² J with J the centering matrix.
pub fn double_center(d: ArrayView2<f64>) -> Array2<f64> {
    let sq = d.mapv(|v| v * v);
    let row_mean = sq.mean_axis(ndarray::Axis(1)).expect("nonempty");
    let col_mean = sq.mean_axis(ndarray::Axis(0)).expect("nonempty");
    let grand = row_mean.mean().expect("nonempty");
    let n = d.nrows();
    Array2::from_shape_fn((n, n), |(i, j)| -0.5 * (sq[[i, j]] - row_mean[i] - col_mean[j] + grand))
}

/// Eigenpairs of a symmetric matrix sorted by descending eigenvalue (ties by
/// original index). Each eigenvector's largest-magnitude entry is made
/// positive so results are reproducible.
pub fn sorted_eigen(m: ArrayView2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = m.nrows();
    let mat = DMatrix::from_fn(n, n, |i, j| 0.5 * (m[[i, j]] + m[[j, i]]));
    let eig = SymmetricEigen::new(mat);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = Array2::zeros((n, n));
    for (c, &k) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(k);
        let pivot = (0..n).fold(0, |best, i| if col[i].abs() > col[best].abs() { i } else { best });
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            vectors[[i, c]] = sign * col[i];
        }
    }
    (values, vectors)
}

pub fn classical_mds(d: ArrayView2<f64>, s: usize) -> Result<MdsEmbedding> {
    validate_distances(d)?;
    let n = d.nrows();
    if s == 0 {
        return Err(Error::InvalidConfig("embedding dimension must be at least 1".into()));
    }
    if s > n {
        return Err(Error::DegenerateInput(format!("embedding dimension {s} exceeds {n} points")));
    }
    let b = double_center(d);
    let (values, vectors) = sorted_eigen(b.view());
    let mut kept = values[..s].to_vec();
    let negative = kept.iter().filter(|&&l| l < 0.0).count();
    if negative > 0 {
        log::warn!("classical MDS: {negative} of {s} retained eigenvalues negative, truncated to zero");
        for l in &mut kept {
            *l = l.max(0.0);
        }
    }
    let eigenvectors = vectors.slice(ndarray::s![.., ..s]).to_owned();
    let scale = Array1::from_iter(kept.iter().map(|l| l.sqrt()));
    let coords = &eigenvectors * &scale;
    Ok(MdsEmbedding {
        coords,
        eigenvalues: kept,
        eigenvectors,
    })
}

/// Distance-based triangulation onto an MDS embedding of landmark points.
#[derive(Debug, Clone, PartialEq)]
pub struct Triangulation {
    /// Columns scaled by 1/√λ (zero for zero eigenvalues); L × s.
    pseudo: Array2<f64>,
    /// Mean squared distance from each landmark to all landmarks.
    mean_sq: Array1<f64>,
}

impl Triangulation {
    pub fn new(landmark_distances: ArrayView2<f64>, mds: &MdsEmbedding) -> Self {
        let mean_sq = landmark_distances
            .mapv(|v| v * v)
            .mean_axis(ndarray::Axis(1))
            .expect("nonempty");
        let mut pseudo = mds.eigenvectors.clone();
        for (k, &l) in mds.eigenvalues.iter().enumerate() {
            let f = if l > 0.0 { 1.0 / l.sqrt() } else { 0.0 };
            pseudo.column_mut(k).mapv_inplace(|v| v * f);
        }
        Self { pseudo, mean_sq }
    }

    /// y = -1/2 · pseudoᵀ (δ² - μ) for distances δ to each landmark.
    pub fn embed(&self, distances: &[f64]) -> Array1<f64> {
        let centered = Array1::from_iter(distances.iter().zip(&self.mean_sq).map(|(d, m)| d * d - m));
        self.pseudo.t().dot(&centered) * -0.5
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn distances(points: &Array2<f64>) -> Array2<f64> {
        let n = points.nrows();
        Array2::from_shape_fn((n, n), |(i, j)| {
            let dx = points[[i, 0]] - points[[j, 0]];
            let dy = points[[i, 1]] - points[[j, 1]];
            (dx * dx + dy * dy).sqrt()
        })
    }

    /// Residual of the best rigid alignment of `a` onto `b` (both centered).
    fn procrustes_residual(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        let ca = a - &a.mean_axis(ndarray::Axis(0)).unwrap();
        let cb = b - &b.mean_axis(ndarray::Axis(0)).unwrap();
        let m = ca.t().dot(&cb);
        let h = Matrix2::new(m[[0, 0]], m[[0, 1]], m[[1, 0]], m[[1, 1]]);
        let svd = h.svd(true, true);
        let r = svd.u.unwrap() * svd.v_t.unwrap();
        let r = Array2::from_shape_fn((2, 2), |(i, j)| r[(i, j)]);
        let aligned = ca.dot(&r);
        (&aligned - &cb).mapv(|v| v * v).sum().sqrt()
    }

    #[test]
    fn recovers_planar_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = Array2::from_shape_fn((10, 2), |_| rng.random_range(-5.0..5.0));
        let emb = classical_mds(distances(&pts).view(), 2).unwrap();
        assert!(procrustes_residual(&emb.coords, &pts) < 1e-6);
        assert!(emb.eigenvalues[0] >= emb.eigenvalues[1]);
    }

    #[test]
    fn gram_reproduces_double_centered_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts = Array2::from_shape_fn((12, 2), |_| rng.random_range(-1.0..1.0));
        let d = distances(&pts);
        let emb = classical_mds(d.view(), 2).unwrap();
        let gram = emb.coords.dot(&emb.coords.t());
        let b = double_center(d.view());
        assert!((&gram - &b).iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn simplex_eigenvalues_are_degenerate() {
        let d = Array2::from_shape_fn((4, 4), |(i, j)| if i == j { 0.0 } else { 1.0 });
        let emb = classical_mds(d.view(), 2).unwrap();
        assert!((emb.eigenvalues[0] - emb.eigenvalues[1]).abs() < 1e-12);
        assert!((emb.eigenvalues[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        let d = Array2::from_shape_fn((3, 3), |(i, j)| if i == j { 0.0 } else { 1.0 });
        assert!(matches!(classical_mds(d.view(), 0), Err(Error::InvalidConfig(_))));
        let mut asym = d.clone();
        asym[[0, 1]] = 2.0;
        assert!(matches!(classical_mds(asym.view(), 1), Err(Error::NonSymmetric { .. })));
        let mut neg = d.clone();
        neg[[0, 1]] = -1.0;
        neg[[1, 0]] = -1.0;
        assert!(matches!(classical_mds(neg.view(), 1), Err(Error::NegativeEntries { .. })));
    }

    #[test]
    fn triangulation_reproduces_landmarks() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts = Array2::from_shape_fn((15, 2), |_| rng.random_range(-3.0..3.0));
        let d = distances(&pts);
        let emb = classical_mds(d.view(), 2).unwrap();
        let tri = Triangulation::new(d.view(), &emb);
        for i in 0..15 {
            let y = tri.embed(d.row(i).as_slice().unwrap());
            assert!((&y - &emb.coords.row(i)).iter().all(|v| v.abs() < 1e-9));
        }
        // a new planar point lands where the rigid map sends it
        let q = [0.7, -1.2];
        let dq: Vec<f64> = (0..15)
            .map(|j| ((q[0] - pts[[j, 0]]).powi(2) + (q[1] - pts[[j, 1]]).powi(2)).sqrt())
            .collect();
        let y = tri.embed(&dq);
        let mut with_q = pts.clone();
        with_q.push_row(ndarray::ArrayView1::from(&q)).unwrap();
        let mut emb_q = emb.coords.clone();
        emb_q.push_row(y.view()).unwrap();
        assert!(procrustes_residual(&emb_q, &with_q) < 1e-8);
    }
}
