//! Undirected weighted graphs and their Laplacians.
//!
//! A [`Graph`] stores a validated edge list; the adjacency and Laplacian
//! matrices are materialized on demand. Graphs are immutable once built.

use crate::error::{Error, Result};
use crate::util::{derive_seed, ContentHasher};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::Path;

/// Undirected weighted graph without self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize, f64)>,
}

/// On-disk form: `{ "n": int, "edges": [[i, j, w], ...] }`, 0-indexed, each
/// undirected edge listed once.
#[derive(Serialize, Deserialize)]
struct GraphFile {
    n: usize,
    edges: Vec<(usize, usize, f64)>,
}

impl Graph {
    /// Builds a graph from an edge list, validating the invariants: indices in
    /// range, no self-loops, nonnegative weights, each edge listed once.
    pub fn new(n: usize, edges: Vec<(usize, usize, f64)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("graph must have at least one node".into()));
        }
        let mut seen = HashSet::new();
        let mut canon = Vec::with_capacity(edges.len());
        for (i, j, w) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidInput(format!(
                    "edge ({i},{j}) out of range for n={n}"
                )));
            }
            if i == j {
                return Err(Error::InvalidInput(format!("self-loop at node {i}")));
            }
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "edge ({i},{j}) has invalid weight {w}"
                )));
            }
            let key = (i.min(j), i.max(j));
            if !seen.insert(key) {
                return Err(Error::InvalidInput(format!("duplicate edge ({i},{j})")));
            }
            canon.push((key.0, key.1, w));
        }
        canon.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        Ok(Self { n, edges: canon })
    }

    /// Unweighted graph: every listed edge gets weight 1.
    pub fn unweighted(n: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        Self::new(n, edges.into_iter().map(|(i, j)| (i, j, 1.0)).collect())
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    /// Canonically ordered edges (i < j).
    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    /// Symmetric nonnegative adjacency matrix W.
    pub fn adjacency(&self) -> DMatrix<f64> {
        let mut w = DMatrix::zeros(self.n, self.n);
        for &(i, j, wt) in &self.edges {
            w[(i, j)] = wt;
            w[(j, i)] = wt;
        }
        w
    }

    /// Combinatorial Laplacian L = diag(W·1) − W.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let w = self.adjacency();
        let mut l = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            let deg: f64 = w.row(i).sum();
            l[(i, i)] = deg;
        }
        l - w
    }

    pub fn degree(&self, node: usize) -> usize {
        self.edges
            .iter()
            .filter(|&&(i, j, _)| i == node || j == node)
            .count()
    }

    /// Connectivity via breadth-first search.
    pub fn is_connected(&self) -> bool {
        if self.n == 1 {
            return true;
        }
        let mut adj = vec![Vec::new(); self.n];
        for &(i, j, _) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        let mut visited = vec![false; self.n];
        let mut queue = std::collections::VecDeque::from([0usize]);
        visited[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !visited[v] {
                    visited[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == self.n
    }

    /// Content hash over (n, canonical edge list). Stable across runs; used
    /// for dataset lineage metadata.
    pub fn content_hash(&self) -> String {
        let mut h = ContentHasher::new();
        h.update(&(self.n as u64).to_le_bytes());
        for &(i, j, w) in &self.edges {
            h.update(&(i as u64).to_le_bytes());
            h.update(&(j as u64).to_le_bytes());
            h.update_f64(w);
        }
        h.finish()
    }

    pub fn to_json(&self) -> String {
        let file = GraphFile { n: self.n, edges: self.edges.clone() };
        serde_json::to_string_pretty(&file).expect("graph serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: GraphFile = serde_json::from_str(text)?;
        Self::new(file.n, file.edges)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }
}

const CONNECTIVITY_RETRY_CAP: usize = 1000;

/// Samples a connected d-regular unweighted graph via the pairing model,
/// retrying until the matching is simple and the graph connected.
/// Deterministic for a fixed seed.
pub fn random_regular_graph(n: usize, degree: usize, seed: u64) -> Result<Graph> {
    if n == 0 || degree >= n || (n * degree) % 2 != 0 {
        return Err(Error::InfeasibleDegree { n, degree });
    }
    if degree == 0 {
        // Edgeless graph: connected only when n == 1.
        if n == 1 {
            return Graph::unweighted(1, vec![]);
        }
        return Err(Error::InfeasibleDegree { n, degree });
    }
    if degree == n - 1 {
        // Complete graph, the unique (n−1)-regular graph.
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                edges.push((i, j));
            }
        }
        return Graph::unweighted(n, edges);
    }
    // Dense degrees: sample the sparse complement and flip it. The parity
    // constraint carries over since n(n−1) is always even.
    let complemented = degree > (n - 1) / 2;
    let sample_degree = if complemented { n - 1 - degree } else { degree };
    for attempt in 0..CONNECTIVITY_RETRY_CAP {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, attempt as u64));
        if let Some(mut edges) = try_pairing(n, sample_degree, &mut rng) {
            if complemented {
                let present: HashSet<(usize, usize)> = edges.iter().copied().collect();
                edges.clear();
                for i in 0..n {
                    for j in (i + 1)..n {
                        if !present.contains(&(i, j)) {
                            edges.push((i, j));
                        }
                    }
                }
            }
            let graph = Graph::unweighted(n, edges)?;
            if graph.is_connected() {
                return Ok(graph);
            }
        }
    }
    Err(Error::ConnectivityRetryExceeded { attempts: CONNECTIVITY_RETRY_CAP })
}

/// One pairing-model attempt: repeatedly draw random stub pairs, accepting
/// only suitable ones (no self-loop, no parallel edge). Restarting on a dead
/// end keeps the sampler practical at degrees where naive pairing almost
/// never produces a simple graph.
fn try_pairing(n: usize, degree: usize, rng: &mut ChaCha8Rng) -> Option<Vec<(usize, usize)>> {
    let mut stubs: Vec<usize> =
        (0..n).flat_map(|v| std::iter::repeat(v).take(degree)).collect();
    stubs.shuffle(rng);
    let mut seen = HashSet::new();
    let mut edges = Vec::with_capacity(n * degree / 2);
    while !stubs.is_empty() {
        let mut paired = false;
        for _ in 0..200 {
            let ai = rng.random_range(0..stubs.len());
            let bi = rng.random_range(0..stubs.len());
            if ai == bi || stubs[ai] == stubs[bi] {
                continue;
            }
            let (u, v) = (stubs[ai], stubs[bi]);
            let key = (u.min(v), u.max(v));
            if seen.contains(&key) {
                continue;
            }
            seen.insert(key);
            edges.push(key);
            let (hi, lo) = if ai > bi { (ai, bi) } else { (bi, ai) };
            stubs.swap_remove(hi);
            stubs.swap_remove(lo);
            paired = true;
            break;
        }
        if !paired {
            return None;
        }
    }
    Some(edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn laplacian_two_nodes_single_edge() {
        let g = Graph::unweighted(2, vec![(0, 1)]).unwrap();
        let l = g.laplacian();
        assert_eq!(l, nalgebra::dmatrix![1.0, -1.0; -1.0, 1.0]);
    }

    #[test]
    fn laplacian_edgeless_is_zero() {
        let g = Graph::unweighted(3, vec![]).unwrap();
        assert_eq!(g.laplacian(), DMatrix::<f64>::zeros(3, 3));
    }

    #[test]
    fn laplacian_triangle() {
        let g = Graph::unweighted(3, vec![(0, 1), (1, 2), (0, 2)]).unwrap();
        let l = g.laplacian();
        for i in 0..3 {
            assert_eq!(l[(i, i)], 2.0);
            for j in 0..3 {
                if i != j {
                    assert_eq!(l[(i, j)], -1.0);
                }
            }
            assert!(l.row(i).sum().abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_self_loops_and_duplicates() {
        assert!(Graph::unweighted(3, vec![(1, 1)]).is_err());
        assert!(Graph::unweighted(3, vec![(0, 1), (1, 0)]).is_err());
        assert!(Graph::new(3, vec![(0, 1, -2.0)]).is_err());
    }

    #[test]
    fn regular_graph_on_four_nodes_is_complete() {
        let g = random_regular_graph(4, 3, 1).unwrap();
        assert_eq!(g.edges().len(), 6);
        for v in 0..4 {
            assert_eq!(g.degree(v), 3);
        }
    }

    #[test]
    fn regular_graph_deterministic() {
        let a = random_regular_graph(10, 4, 7).unwrap();
        let b = random_regular_graph(10, 4, 7).unwrap();
        assert_eq!(a.edges(), b.edges());
    }

    #[test]
    fn regular_graph_degrees_and_connectivity() {
        let g = random_regular_graph(30, 10, 3).unwrap();
        for v in 0..30 {
            assert_eq!(g.degree(v), 10);
        }
        assert!(g.is_connected());
    }

    #[test]
    fn connectivity_retry_exhausts_on_perfect_matchings() {
        // Every 1-regular graph on 4 nodes is a pair of disjoint edges, so a
        // connected sample can never be found.
        assert!(matches!(
            random_regular_graph(4, 1, 0),
            Err(Error::ConnectivityRetryExceeded { .. })
        ));
    }

    #[test]
    fn dense_degrees_sample_via_complement() {
        let g = random_regular_graph(9, 6, 42).unwrap();
        for v in 0..9 {
            assert_eq!(g.degree(v), 6);
        }
        assert!(g.is_connected());
    }

    #[test]
    fn infeasible_degree_rejected() {
        assert!(matches!(
            random_regular_graph(5, 3, 0),
            Err(Error::InfeasibleDegree { .. })
        ));
        assert!(matches!(
            random_regular_graph(4, 4, 0),
            Err(Error::InfeasibleDegree { .. })
        ));
    }

    #[test]
    fn json_roundtrip() {
        let g = random_regular_graph(8, 3, 11).unwrap();
        let back = Graph::from_json(&g.to_json()).unwrap();
        assert_eq!(g, back);
        assert_eq!(g.content_hash(), back.content_hash());
    }
}
