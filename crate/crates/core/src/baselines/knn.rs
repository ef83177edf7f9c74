use std::collections::{BTreeMap, HashMap};

use ndarray::{ArrayView1, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Exact k-nearest-neighbor graph over the distinct rows of a point set.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    /// Directed k-NN lists, ordered by (distance, index).
    pub knn: Vec<Vec<(usize, f64)>>,
    /// Symmetrized (union) adjacency, ordered by neighbor index.
    pub adjacency: Vec<Vec<(usize, f64)>>,
    /// Graph node of each input row; duplicate rows share a node.
    pub node_of: Vec<usize>,
    /// First input row of each node.
    pub representative: Vec<usize>,
}

impl NeighborGraph {
    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }
}

pub fn squared_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Node IDs for the rows of `points`, collapsing exact duplicates.
pub fn collapse_duplicates(points: ArrayView2<f64>) -> (Vec<usize>, Vec<usize>) {
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut node_of = Vec::with_capacity(points.nrows());
    let mut representative = Vec::new();
    for (i, row) in points.rows().into_iter().enumerate() {
        // +0.0 and -0.0 compare equal, so normalize the sign of zero
        let key: Vec<u64> = row.iter().map(|v| (v + 0.0).to_bits()).collect();
        let node = *seen.entry(key).or_insert_with(|| {
            representative.push(i);
            representative.len() - 1
        });
        node_of.push(node);
    }
    (node_of, representative)
}

/// The `k` nearest rows of `points` to `query`, skipping `exclude`; ties go
/// to the lower index.
pub fn nearest(
    points: ArrayView2<f64>,
    query: ArrayView1<f64>,
    k: usize,
    exclude: Option<usize>,
) -> Vec<(usize, f64)> {
    let mut d: Vec<(usize, f64)> = points
        .rows()
        .into_iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != exclude)
        .map(|(j, row)| (j, squared_distance(row, query)))
        .collect();
    let order = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
    let k = k.min(d.len());
    if k < d.len() && k > 0 {
        d.select_nth_unstable_by(k - 1, order);
    }
    d.truncate(k);
    d.sort_by(order);
    d.into_iter().map(|(j, sq)| (j, sq.sqrt())).collect()
}

/// Builds the graph. Duplicate rows are merged into one node (with a
/// warning) so every edge has positive weight.
pub fn knn_graph(points: ArrayView2<f64>, k: usize) -> Result<NeighborGraph> {
    if k == 0 {
        return Err(Error::DegenerateInput("k must be at least 1".into()));
    }
    let (node_of, representative) = collapse_duplicates(points);
    let n = representative.len();
    if n < points.nrows() {
        log::warn!(
            "collapsed {} duplicate points into {} distinct nodes",
            points.nrows() - n,
            n
        );
    }
    if n <= k {
        return Err(Error::DegenerateInput(format!(
            "need more than k = {k} distinct points, got {n}"
        )));
    }
    let nodes = points.select(ndarray::Axis(0), &representative);
    let knn: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| nearest(nodes.view(), nodes.row(i), k, Some(i)))
        .collect();
    let mut sym: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
    for (i, list) in knn.iter().enumerate() {
        for &(j, d) in list {
            sym[i].insert(j, d);
            sym[j].insert(i, d);
        }
    }
    Ok(NeighborGraph {
        knn,
        adjacency: sym.into_iter().map(|m| m.into_iter().collect()).collect(),
        node_of,
        representative,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn collinear_middle_links_to_nearer_end() {
        let pts = array![[0.0], [1.0], [3.0]];
        let g = knn_graph(pts.view(), 1).unwrap();
        assert_eq!(g.knn[1], vec![(0, 1.0)]);
        assert_eq!(g.knn[2], vec![(1, 2.0)]);
        assert_eq!(g.adjacency[1], vec![(0, 1.0), (2, 2.0)]);
    }

    #[test]
    fn matches_brute_force_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts = Array2::from_shape_fn((200, 3), |_| rng.random_range(0.0..1.0));
        let k = 6;
        let g = knn_graph(pts.view(), k).unwrap();
        for i in 0..200 {
            let mut all: Vec<(f64, usize)> = (0..200)
                .filter(|&j| j != i)
                .map(|j| {
                    let d: f64 = (0..3).map(|c| (pts[[i, c]] - pts[[j, c]]).powi(2)).sum();
                    (d.sqrt(), j)
                })
                .collect();
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let expect: Vec<usize> = all[..k].iter().map(|p| p.1).collect();
            let got: Vec<usize> = g.knn[i].iter().map(|p| p.0).collect();
            assert_eq!(got, expect);
        }
        for (i, list) in g.adjacency.iter().enumerate() {
            for &(j, d) in list {
                assert!(d > 0.0 && j != i);
                assert!(g.adjacency[j].iter().any(|&(b, e)| b == i && e == d));
            }
        }
    }

    #[test]
    fn duplicates_collapse() {
        let pts = array![[0.0, 0.0], [1.0, 0.0], [0.0, 0.0], [5.0, 5.0]];
        let g = knn_graph(pts.view(), 1).unwrap();
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.node_of, vec![0, 1, 0, 2]);
        assert!(g.adjacency.iter().flatten().all(|&(_, d)| d > 0.0));
    }

    #[test]
    fn too_few_points() {
        let pts = array![[0.0], [1.0]];
        assert!(matches!(knn_graph(pts.view(), 2), Err(Error::DegenerateInput(_))));
    }
}
