//! Undirected graphs in compressed sparse row form.
//!
//! The estimation pipeline treats the network as fixed and queries it heavily:
//! neighbor scans for exposure mappings and feature construction, breadth-first
//! searches for path lengths and for the dependency windows of the
//! network-robust variance estimator, and induced subgraphs for matched
//! designs. Everything here is exact integer/combinatorial work; distances are
//! hop counts, never floating point.
//!
//! Graphs are simple and undirected: construction removes self-loops,
//! deduplicates parallel edges, and stores each edge in both adjacency lists.
//! Unreachable pairs have no distance; APIs expose that as `None` rather than
//! a large sentinel value so it cannot leak into arithmetic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Simple undirected graph stored as compressed sparse row adjacency.
///
/// Node identifiers are dense indices `0..n`. Neighbor lists are sorted, so
/// iteration order is deterministic and independent of input edge order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
}

impl Graph {
    /// Builds a graph on `n` nodes from an edge list.
    ///
    /// Self-loops are dropped, duplicate and reversed duplicates collapse to a
    /// single undirected edge, and both endpoint orders are accepted. Errors
    /// if any endpoint is `>= n`.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut canonical: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a >= n {
                return Err(Error::NodeOutOfRange { index: a, n });
            }
            if b >= n {
                return Err(Error::NodeOutOfRange { index: b, n });
            }
            if a == b {
                continue;
            }
            canonical.push((a.min(b), a.max(b)));
        }
        canonical.sort_unstable();
        canonical.dedup();

        let mut degree = vec![0usize; n];
        for &(a, b) in &canonical {
            degree[a] += 1;
            degree[b] += 1;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut acc = 0usize;
        offsets.push(0);
        for d in &degree {
            acc += d;
            offsets.push(acc);
        }
        let mut neighbors = vec![0usize; acc];
        let mut cursor = offsets[..n].to_vec();
        for &(a, b) in &canonical {
            neighbors[cursor[a]] = b;
            cursor[a] += 1;
            neighbors[cursor[b]] = a;
            cursor[b] += 1;
        }
        for i in 0..n {
            neighbors[offsets[i]..offsets[i + 1]].sort_unstable();
        }
        Ok(Graph {
            n,
            offsets,
            neighbors,
        })
    }

    /// Graph with `n` nodes and no edges.
    pub fn empty(n: usize) -> Self {
        Graph {
            n,
            offsets: vec![0; n + 1],
            neighbors: Vec::new(),
        }
    }

    /// Number of nodes.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        self.neighbors.len() / 2
    }

    /// Degree of node `i`.
    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    /// Sorted neighbor list of node `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Mean degree, `(1/n) * sum_i deg(i) = 2|E|/n`. Zero for an empty node
    /// set.
    pub fn average_degree(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        self.neighbors.len() as f64 / self.n as f64
    }

    /// Maximum degree over all nodes (zero for an empty graph).
    pub fn max_degree(&self) -> usize {
        (0..self.n).map(|i| self.degree(i)).max().unwrap_or(0)
    }

    /// Hop distance from `i` to `j`, or `None` when `j` is unreachable from
    /// `i`.
    pub fn shortest_path_distance(&self, i: usize, j: usize) -> Result<Option<usize>> {
        self.check_node(i)?;
        self.check_node(j)?;
        if i == j {
            return Ok(Some(0));
        }
        let mut dist = vec![usize::MAX; self.n];
        let mut queue = VecDeque::new();
        dist[i] = 0;
        queue.push_back(i);
        while let Some(u) = queue.pop_front() {
            for &v in self.neighbors(u) {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    if v == j {
                        return Ok(Some(dist[v]));
                    }
                    queue.push_back(v);
                }
            }
        }
        Ok(None)
    }

    /// All nodes within hop distance `k` of `i`, including `i` itself, in
    /// ascending index order.
    pub fn k_neighborhood(&self, i: usize, k: usize) -> Result<Vec<usize>> {
        self.check_node(i)?;
        let mut out: Vec<usize> = self
            .bfs_within(i, k)
            .into_iter()
            .map(|(node, _)| node)
            .collect();
        out.sort_unstable();
        Ok(out)
    }

    /// Nodes at hop distance exactly `k` from `i`, in ascending index order.
    /// `boundary(i, 0)` is `[i]`.
    pub fn boundary(&self, i: usize, k: usize) -> Result<Vec<usize>> {
        self.check_node(i)?;
        let mut out: Vec<usize> = self
            .bfs_within(i, k)
            .into_iter()
            .filter(|&(_, d)| d == k)
            .map(|(node, _)| node)
            .collect();
        out.sort_unstable();
        Ok(out)
    }

    /// Breadth-first search from `source` truncated at depth `max_depth`.
    ///
    /// Returns `(node, distance)` pairs for every node with distance at most
    /// `max_depth`, including `(source, 0)`, in BFS discovery order. This is
    /// the workhorse behind neighborhood queries and the variance estimator's
    /// dependency windows; discovery order is deterministic because neighbor
    /// lists are sorted.
    pub fn bfs_within(&self, source: usize, max_depth: usize) -> Vec<(usize, usize)> {
        let mut dist = vec![usize::MAX; self.n];
        let mut order = Vec::new();
        let mut queue = VecDeque::new();
        dist[source] = 0;
        order.push((source, 0));
        queue.push_back(source);
        while let Some(u) = queue.pop_front() {
            if dist[u] == max_depth {
                continue;
            }
            for &v in self.neighbors(u) {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    order.push((v, dist[v]));
                    queue.push_back(v);
                }
            }
        }
        order
    }

    /// Average shortest-path length over connected unordered pairs of
    /// distinct nodes.
    ///
    /// Disconnected pairs are excluded from both numerator and denominator.
    /// Errors with [`Error::NoConnectedPair`] when no pair of distinct nodes
    /// is connected (for example an edge-free graph), since the mean is then
    /// undefined.
    pub fn average_path_length(&self) -> Result<f64> {
        let mut total: u128 = 0;
        let mut pairs: u64 = 0;
        let mut dist = vec![usize::MAX; self.n];
        let mut queue = VecDeque::new();
        for s in 0..self.n {
            dist.iter_mut().for_each(|d| *d = usize::MAX);
            dist[s] = 0;
            queue.push_back(s);
            while let Some(u) = queue.pop_front() {
                for &v in self.neighbors(u) {
                    if dist[v] == usize::MAX {
                        dist[v] = dist[u] + 1;
                        queue.push_back(v);
                        // Count each unordered pair once, from its lower
                        // endpoint.
                        if v > s {
                            total += dist[v] as u128;
                            pairs += 1;
                        }
                    }
                }
            }
        }
        if pairs == 0 {
            return Err(Error::NoConnectedPair);
        }
        Ok(total as f64 / pairs as f64)
    }

    /// Subgraph induced by `nodes`, with nodes relabeled `0..nodes.len()` in
    /// the order given. Errors on out-of-range or duplicate entries.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Result<Graph> {
        let mut map = vec![usize::MAX; self.n];
        for (new, &old) in nodes.iter().enumerate() {
            self.check_node(old)?;
            if map[old] != usize::MAX {
                return Err(Error::InvalidData(format!(
                    "duplicate node {old} in induced subgraph selection"
                )));
            }
            map[old] = new;
        }
        let mut edges = Vec::new();
        for (new_a, &old_a) in nodes.iter().enumerate() {
            for &old_b in self.neighbors(old_a) {
                let new_b = map[old_b];
                if new_b != usize::MAX && new_a < new_b {
                    edges.push((new_a, new_b));
                }
            }
        }
        Graph::from_edges(nodes.len(), &edges)
    }

    fn check_node(&self, i: usize) -> Result<()> {
        if i >= self.n {
            return Err(Error::NodeOutOfRange { index: i, n: self.n });
        }
        Ok(())
    }
}

/// Samples `n` positions uniformly on the unit square, deterministically in
/// `seed`.
///
/// Positions are drawn in node order, x-coordinate before y-coordinate, from
/// a ChaCha stream cipher generator, so a given seed reproduces the same
/// layout on every platform.
pub fn sample_positions(n: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let x: f64 = rng.gen();
            let y: f64 = rng.gen();
            (x, y)
        })
        .collect()
}

/// Builds the random geometric graph on `positions` with connection radius
/// `radius`: nodes are adjacent iff their Euclidean distance is at most
/// `radius` (Penrose, 2003).
///
/// Uses a uniform grid with cell width `radius`, so only the 3x3 block of
/// cells around a point is scanned; the result is identical to the full
/// pairwise scan.
pub fn rgg_from_positions(positions: &[(f64, f64)], radius: f64) -> Result<Graph> {
    let n = positions.len();
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "rgg radius must be positive and finite, got {radius}"
        )));
    }
    for (i, &(x, y)) in positions.iter().enumerate() {
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::NonFinite {
                what: "node position",
                row: i,
            });
        }
    }
    // Cell width must be at least one radius (hence floor) so the 3x3 cell
    // scan is exhaustive; the count is capped so degenerate radii cannot
    // allocate an unbounded number of cells.
    let cells = ((1.0 / radius).floor() as usize).clamp(1, n.max(1));
    let cell_of = |x: f64, y: f64| -> (usize, usize) {
        let cx = ((x * cells as f64) as usize).min(cells - 1);
        let cy = ((y * cells as f64) as usize).min(cells - 1);
        (cx, cy)
    };
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); cells * cells];
    for (i, &(x, y)) in positions.iter().enumerate() {
        let (cx, cy) = cell_of(x, y);
        buckets[cy * cells + cx].push(i);
    }
    let r2 = radius * radius;
    let mut edges = Vec::new();
    for i in 0..n {
        let (xi, yi) = positions[i];
        let (cx, cy) = cell_of(xi, yi);
        let x_lo = cx.saturating_sub(1);
        let y_lo = cy.saturating_sub(1);
        for by in y_lo..=(cy + 1).min(cells - 1) {
            for bx in x_lo..=(cx + 1).min(cells - 1) {
                for &j in &buckets[by * cells + bx] {
                    if j <= i {
                        continue;
                    }
                    let (xj, yj) = positions[j];
                    let dx = xi - xj;
                    let dy = yi - yj;
                    if dx * dx + dy * dy <= r2 {
                        edges.push((i, j));
                    }
                }
            }
        }
    }
    Graph::from_edges(n, &edges)
}

/// Summary statistics for a graph, as reported by the CLI.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct GraphStats {
    /// Number of nodes.
    pub n: usize,
    /// Number of undirected edges.
    pub edge_count: usize,
    /// Mean degree `2|E|/n`.
    pub avg_degree: f64,
    /// Average shortest-path length over connected unordered pairs, absent
    /// when the graph has no connected pair.
    pub avg_path_length: Option<f64>,
    /// Maximum degree.
    pub max_degree: usize,
}

impl GraphStats {
    /// Computes summary statistics for `graph`.
    pub fn compute(graph: &Graph) -> Self {
        GraphStats {
            n: graph.n(),
            edge_count: graph.edge_count(),
            avg_degree: graph.average_degree(),
            avg_path_length: graph.average_path_length().ok(),
            max_degree: graph.max_degree(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn builds_simple_graph_with_dedup_and_loop_removal() {
        // Duplicates, reversed duplicates, and the self-loop (1,1) all
        // collapse.
        let g = Graph::from_edges(4, &[(0, 1), (1, 0), (1, 2), (1, 1), (1, 2)]).unwrap();
        assert_eq!(g.edge_count(), 2);
        assert_eq!(g.neighbors(1), &[0, 2]);
        assert_eq!(g.degree(1), 2);
        assert_eq!(g.degree(3), 0);
    }

    #[test]
    fn rejects_out_of_range_endpoint() {
        let err = Graph::from_edges(3, &[(0, 3)]).unwrap_err();
        assert!(matches!(err, Error::NodeOutOfRange { index: 3, n: 3 }));
    }

    #[test]
    fn distances_on_path_graph() {
        let g = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        assert_eq!(g.shortest_path_distance(0, 3).unwrap(), Some(3));
        assert_eq!(g.shortest_path_distance(2, 2).unwrap(), Some(0));
        let disconnected = Graph::from_edges(4, &[(0, 1), (2, 3)]).unwrap();
        assert_eq!(disconnected.shortest_path_distance(0, 3).unwrap(), None);
    }

    #[test]
    fn k_neighborhood_and_boundary_on_path_graph() {
        let g = Graph::from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4)]).unwrap();
        assert_eq!(g.k_neighborhood(2, 0).unwrap(), vec![2]);
        assert_eq!(g.k_neighborhood(2, 1).unwrap(), vec![1, 2, 3]);
        assert_eq!(g.k_neighborhood(2, 2).unwrap(), vec![0, 1, 2, 3, 4]);
        assert_eq!(g.boundary(2, 0).unwrap(), vec![2]);
        assert_eq!(g.boundary(2, 2).unwrap(), vec![0, 4]);
        assert_eq!(g.boundary(0, 3).unwrap(), vec![3]);
        assert!(g.boundary(0, 5).unwrap().is_empty());
    }

    #[test]
    fn average_path_length_on_path_graph() {
        // Path 0-1-2-3: pair distances 1,2,3,1,2,1 sum to 10 over 6 pairs.
        let g = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        assert_relative_eq!(g.average_path_length().unwrap(), 10.0 / 6.0, epsilon = 1e-12);
    }

    #[test]
    fn average_path_length_skips_disconnected_pairs() {
        // Two components: 0-1-2 and 3-4. Connected pairs: (0,1)=1, (0,2)=2,
        // (1,2)=1, (3,4)=1 -> mean 5/4.
        let g = Graph::from_edges(5, &[(0, 1), (1, 2), (3, 4)]).unwrap();
        assert_relative_eq!(g.average_path_length().unwrap(), 1.25, epsilon = 1e-12);
    }

    #[test]
    fn average_path_length_errors_without_connected_pair() {
        let g = Graph::empty(5);
        assert!(matches!(
            g.average_path_length().unwrap_err(),
            Error::NoConnectedPair
        ));
    }

    #[test]
    fn degree_statistics() {
        let g = Graph::from_edges(4, &[(0, 1), (0, 2), (0, 3)]).unwrap();
        assert_relative_eq!(g.average_degree(), 1.5);
        assert_eq!(g.max_degree(), 3);
        assert_eq!(Graph::empty(0).average_degree(), 0.0);
    }

    #[test]
    fn positions_are_deterministic_in_seed() {
        let a = sample_positions(10, 7);
        let b = sample_positions(10, 7);
        let c = sample_positions(10, 8);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.iter().all(|&(x, y)| (0.0..1.0).contains(&x) && (0.0..1.0).contains(&y)));
    }

    #[test]
    fn rgg_matches_brute_force_pair_scan() {
        for seed in 0..5 {
            let pos = sample_positions(200, seed);
            let r = 0.08;
            let g = rgg_from_positions(&pos, r).unwrap();
            let mut expected = Vec::new();
            for i in 0..pos.len() {
                for j in (i + 1)..pos.len() {
                    let dx = pos[i].0 - pos[j].0;
                    let dy = pos[i].1 - pos[j].1;
                    if dx * dx + dy * dy <= r * r {
                        expected.push((i, j));
                    }
                }
            }
            let brute = Graph::from_edges(pos.len(), &expected).unwrap();
            assert_eq!(g, brute);
        }
    }

    #[test]
    fn rgg_mean_degree_near_design_value() {
        // With radius sqrt(5/(pi*n)) the expected degree is about
        // (n-1)*pi*r^2 ~ 5, slightly less near the square's boundary.
        let n = 2000;
        let r = (5.0 / (std::f64::consts::PI * n as f64)).sqrt();
        let pos = sample_positions(n, 42);
        let g = rgg_from_positions(&pos, r).unwrap();
        assert!(
            (g.average_degree() - 5.0).abs() < 0.6,
            "mean degree {} too far from 5",
            g.average_degree()
        );
    }

    #[test]
    fn rgg_rejects_bad_radius() {
        let pos = sample_positions(5, 1);
        assert!(rgg_from_positions(&pos, 0.0).is_err());
        assert!(rgg_from_positions(&pos, f64::NAN).is_err());
    }

    #[test]
    fn induced_subgraph_keeps_internal_edges() {
        let g = Graph::from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)]).unwrap();
        let sub = g.induced_subgraph(&[1, 2, 4]).unwrap();
        // Only 1-2 survives; relabeled as 0-1.
        assert_eq!(sub.n(), 3);
        assert_eq!(sub.edge_count(), 1);
        assert_eq!(sub.neighbors(0), &[1]);
        assert!(sub.neighbors(2).is_empty());
        assert!(g.induced_subgraph(&[1, 1]).is_err());
    }

    #[test]
    fn bfs_within_respects_depth_cap() {
        let g = Graph::from_edges(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]).unwrap();
        let visited = g.bfs_within(0, 2);
        assert_eq!(visited, vec![(0, 0), (1, 1), (2, 2)]);
    }

    #[test]
    fn graph_stats_on_path_graph() {
        let g = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let stats = GraphStats::compute(&g);
        assert_eq!(stats.n, 4);
        assert_eq!(stats.edge_count, 3);
        assert_relative_eq!(stats.avg_degree, 1.5);
        assert_relative_eq!(stats.avg_path_length.unwrap(), 10.0 / 6.0);
        assert_eq!(stats.max_degree, 2);
    }
}
