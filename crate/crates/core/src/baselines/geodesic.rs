use std::cmp::Ordering;
use std::collections::BinaryHeap;

use ndarray::Array2;
use rayon::prelude::*;

use super::knn::NeighborGraph;
use crate::error::{Error, Result};

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Connected components, each sorted, ordered by smallest member.
pub fn components(graph: &NeighborGraph) -> Vec<Vec<usize>> {
    let n = graph.node_count();
    let mut label = vec![usize::MAX; n];
    let mut out = Vec::new();
    for start in 0..n {
        if label[start] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut members = vec![start];
        label[start] = id;
        let mut stack = vec![start];
        while let Some(u) = stack.pop() {
            for &(v, _) in &graph.adjacency[u] {
                if label[v] == usize::MAX {
                    label[v] = id;
                    members.push(v);
                    stack.push(v);
                }
            }
        }
        members.sort_unstable();
        out.push(members);
    }
    out
}

pub fn require_connected(graph: &NeighborGraph) -> Result<()> {
    let comps = components(graph);
    if comps.len() > 1 {
        return Err(Error::DisconnectedGraph {
            sizes: comps.iter().map(Vec::len).collect(),
        });
    }
    Ok(())
}

/// Single-source shortest path lengths.
pub fn dijkstra(graph: &NeighborGraph, source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; graph.node_count()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Entry(0.0, source));
    while let Some(Entry(d, u)) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, w) in &graph.adjacency[u] {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Entry(nd, v));
            }
        }
    }
    dist
}

/// Shortest path lengths from each source (rows) to every node (columns).
pub fn geodesics_from(graph: &NeighborGraph, sources: &[usize]) -> Result<Array2<f64>> {
    require_connected(graph)?;
    let rows: Vec<Vec<f64>> = sources.par_iter().map(|&s| dijkstra(graph, s)).collect();
    let n = graph.node_count();
    let mut out = Array2::zeros((sources.len(), n));
    for (r, row) in rows.into_iter().enumerate() {
        out.row_mut(r).assign(&ndarray::Array1::from(row));
    }
    Ok(out)
}

/// All-pairs geodesic distances, symmetrized by taking the smaller of the
/// two directed sums.
pub fn geodesic_distances(graph: &NeighborGraph) -> Result<Array2<f64>> {
    let all: Vec<usize> = (0..graph.node_count()).collect();
    let mut d = geodesics_from(graph, &all)?;
    let n = d.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let m = d[[i, j]].min(d[[j, i]]);
            d[[i, j]] = m;
            d[[j, i]] = m;
        }
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn graph_from_edges(n: usize, edges: &[(usize, usize, f64)]) -> NeighborGraph {
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b, w) in edges {
            adjacency[a].push((b, w));
            adjacency[b].push((a, w));
        }
        for list in &mut adjacency {
            list.sort_by(|x: &(usize, f64), y| x.0.cmp(&y.0));
        }
        NeighborGraph {
            knn: adjacency.clone(),
            adjacency,
            node_of: (0..n).collect(),
            representative: (0..n).collect(),
        }
    }

    #[test]
    fn path_graph() {
        let g = graph_from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)]);
        assert_eq!(geodesic_distances(&g).unwrap()[[0, 2]], 2.0);
    }

    #[test]
    fn two_cliques_are_disconnected() {
        let g = graph_from_edges(
            6,
            &[(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0), (3, 4, 1.0), (4, 5, 1.0), (3, 5, 1.0)],
        );
        match geodesic_distances(&g) {
            Err(Error::DisconnectedGraph { sizes }) => assert_eq!(sizes, vec![3, 3]),
            other => panic!("{other:?}"),
        }
    }

    fn floyd_warshall(n: usize, edges: &[(usize, usize, f64)]) -> Vec<Vec<f64>> {
        let mut d = vec![vec![f64::INFINITY; n]; n];
        for (i, row) in d.iter_mut().enumerate() {
            row[i] = 0.0;
        }
        for &(a, b, w) in edges {
            d[a][b] = d[a][b].min(w);
            d[b][a] = d[b][a].min(w);
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if d[i][k] + d[k][j] < d[i][j] {
                        d[i][j] = d[i][k] + d[k][j];
                    }
                }
            }
        }
        d
    }

    #[test]
    fn equals_floyd_warshall_exactly() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 50;
            // spanning chain keeps it connected; dyadic weights keep sums exact
            let mut edges: Vec<(usize, usize, f64)> =
                (1..n).map(|i| (i - 1, i, rng.random_range(1..64) as f64 / 8.0)).collect();
            for _ in 0..120 {
                let a = rng.random_range(0..n);
                let b = rng.random_range(0..n);
                if a != b && !edges.iter().any(|&(x, y, _)| (x, y) == (a, b) || (x, y) == (b, a)) {
                    edges.push((a, b, rng.random_range(1..64) as f64 / 8.0));
                }
            }
            let g = graph_from_edges(n, &edges);
            let d = geodesic_distances(&g).unwrap();
            let fw = floyd_warshall(n, &edges);
            for i in 0..n {
                for j in 0..n {
                    assert_eq!(d[[i, j]], fw[i][j]);
                }
            }
        }
    }
}
