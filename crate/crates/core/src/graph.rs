//! Graphs, dense cost matrices and the classical shortest-path references.
//!
//! Node ids are `0..n` and their ascending order matters: the smoothed
//! recursion in [`crate::engine`] introduces intermediates in that order.
//! Absent edges are `f64::INFINITY` in a [`CostMatrix`]; the diagonal is
//! always infinite (self-loops are never considered).

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Directed simple graph on nodes `0..node_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    /// `edge_index[u * n + v]` is the position of `(u, v)` in `edges`.
    edge_index: Vec<Option<usize>>,
}

impl Graph {
    /// Builds a directed graph. Duplicate edges and self-loops are rejected.
    pub fn new(node_count: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        if node_count == 0 {
            return invalid("graph must have at least one node");
        }
        let mut edge_index = vec![None; node_count * node_count];
        for (e, &(u, v)) in edges.iter().enumerate() {
            if u >= node_count || v >= node_count {
                return invalid(format!("edge ({u}, {v}) out of range for {node_count} nodes"));
            }
            if u == v {
                return invalid(format!("self-loop at node {u}"));
            }
            let slot = &mut edge_index[u * node_count + v];
            if slot.is_some() {
                return invalid(format!("duplicate edge ({u}, {v})"));
            }
            *slot = Some(e);
        }
        Ok(Self { node_count, edges, edge_index })
    }

    /// Builds a graph from undirected pairs, storing each as two directed edges.
    ///
    /// Pairs given in both orientations are merged.
    pub fn undirected(node_count: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        let mut edges = Vec::with_capacity(2 * pairs.len());
        for &(u, v) in pairs {
            for e in [(u, v), (v, u)] {
                if seen.insert(e) {
                    edges.push(e);
                }
            }
        }
        Self::new(node_count, edges)
    }

    pub fn complete(node_count: usize) -> Self {
        let edges =
            (0..node_count).flat_map(|u| (0..node_count).filter(move |&v| v != u).map(move |v| (u, v))).collect();
        Self::new(node_count, edges).expect("complete graph is valid")
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_id(&self, u: usize, v: usize) -> Option<usize> {
        if u >= self.node_count || v >= self.node_count {
            return None;
        }
        self.edge_index[u * self.node_count + v]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edge_id(u, v).is_some()
    }

    /// Out-neighbors of every node, in edge order.
    pub fn out_neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count];
        for &(u, v) in &self.edges {
            adj[u].push(v);
        }
        adj
    }

    /// Neighbors ignoring direction, sorted and deduplicated.
    pub fn undirected_neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for a in &mut adj {
            a.sort_unstable();
            a.dedup();
        }
        adj
    }

    /// Whether every node reaches every other node along directed edges.
    pub fn is_strongly_connected(&self) -> bool {
        let reach = |adj: &[Vec<usize>]| {
            let mut seen = vec![false; self.node_count];
            let mut stack = vec![0];
            seen[0] = true;
            while let Some(u) = stack.pop() {
                for &v in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
            seen.into_iter().all(|s| s)
        };
        let fwd = self.out_neighbors();
        let mut rev = vec![Vec::new(); self.node_count];
        for &(u, v) in &self.edges {
            rev[v].push(u);
        }
        reach(&fwd) && reach(&rev)
    }
}

/// Per-edge nonnegative prior costs aligned with [`Graph::edges`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriorCosts(Vec<f64>);

impl PriorCosts {
    pub fn new(graph: &Graph, costs: Vec<f64>) -> Result<Self> {
        if costs.len() != graph.edge_count() {
            return invalid(format!("prior has {} entries for {} edges", costs.len(), graph.edge_count()));
        }
        if let Some(c) = costs.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
            return invalid(format!("prior costs must be finite and nonnegative, got {c}"));
        }
        Ok(Self(costs))
    }

    /// Euclidean edge lengths between node positions.
    pub fn euclidean(graph: &Graph, positions: &[[f64; 2]]) -> Result<Self> {
        if positions.len() != graph.node_count() {
            return invalid(format!("{} positions for {} nodes", positions.len(), graph.node_count()));
        }
        let costs = graph
            .edges()
            .iter()
            .map(|&(u, v)| {
                let (a, b) = (positions[u], positions[v]);
                ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
            })
            .collect();
        Self::new(graph, costs)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Dense `n × n` matrix of edge costs, row-major.
///
/// Finite entries are strictly positive; absent edges and the diagonal are
/// `+inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    n: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    /// Validates and wraps a row-major buffer.
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return invalid(format!("cost matrix buffer has {} entries, expected {}", data.len(), n * n));
        }
        for i in 0..n {
            for j in 0..n {
                let x = data[i * n + j];
                if i == j {
                    if x != f64::INFINITY {
                        return invalid(format!("diagonal entry ({i}, {i}) must be +inf"));
                    }
                } else if x.is_nan() || x <= 0.0 {
                    return invalid(format!("entry ({i}, {j}) = {x} must be positive or +inf"));
                }
            }
        }
        Ok(Self { n, data })
    }

    /// All-infinite matrix (no edges).
    pub fn disconnected(n: usize) -> Self {
        Self { n, data: vec![f64::INFINITY; n * n] }
    }

    pub(crate) fn from_raw(n: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), n * n);
        Self { n, data }
    }

    /// Builds a matrix from a closure over off-diagonal pairs.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = vec![f64::INFINITY; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    data[i * n + j] = f(i, j);
                }
            }
        }
        Self::new(n, data)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Copy with the labels of nodes `a` and `b` exchanged.
    pub fn swap_nodes(&self, a: usize, b: usize) -> Result<Self> {
        if a >= self.n || b >= self.n {
            return invalid(format!("swap ({a}, {b}) out of range for {} nodes", self.n));
        }
        let perm = |x: usize| {
            if x == a {
                b
            } else if x == b {
                a
            } else {
                x
            }
        };
        let mut out = vec![f64::INFINITY; self.n * self.n];
        for i in 0..self.n {
            for j in 0..self.n {
                out[perm(i) * self.n + perm(j)] = self.get(i, j);
            }
        }
        Ok(Self::from_raw(self.n, out))
    }

    /// Sum of consecutive edge costs along a node sequence.
    pub fn walk_cost(&self, nodes: &[usize]) -> f64 {
        nodes.windows(2).map(|w| self.get(w[0], w[1])).sum()
    }
}

/// Fills a cost matrix from per-edge costs aligned with `graph.edges()`.
pub fn build_cost_matrix(edge_costs: &[f64], graph: &Graph) -> Result<CostMatrix> {
    if edge_costs.len() != graph.edge_count() {
        return invalid(format!("{} edge costs for {} edges", edge_costs.len(), graph.edge_count()));
    }
    let n = graph.node_count();
    let mut data = vec![f64::INFINITY; n * n];
    for (&(u, v), &c) in graph.edges().iter().zip(edge_costs) {
        if !(c > 0.0 && c.is_finite()) {
            return invalid(format!("edge ({u}, {v}) cost {c} must be positive and finite"));
        }
        data[u * n + v] = c;
    }
    Ok(CostMatrix::from_raw(n, data))
}

/// Output of [`classical_floyd_warshall`].
#[derive(Debug, Clone)]
pub struct AllPairs {
    pub distances: CostMatrix,
    /// `predecessors[i * n + j]`: node before `j` on an optimal `i → j` path.
    pub predecessors: Vec<Option<usize>>,
}

impl AllPairs {
    /// Reconstructs one optimal path, or `None` when `j` is unreachable.
    pub fn path(&self, i: usize, j: usize) -> Option<Vec<usize>> {
        let n = self.distances.n();
        if i == j {
            return Some(vec![i]);
        }
        if !self.distances.get(i, j).is_finite() {
            return None;
        }
        let mut rev = vec![j];
        let mut cur = j;
        while cur != i {
            cur = self.predecessors[i * n + cur]?;
            rev.push(cur);
            if rev.len() > n {
                return None;
            }
        }
        rev.reverse();
        Some(rev)
    }
}

/// Classical Floyd–Warshall with predecessor tracking.
///
/// Pairs `i == j` are never relaxed, so the diagonal stays `+inf` just as in
/// the smoothed recursion.
pub fn classical_floyd_warshall(m: &CostMatrix) -> AllPairs {
    let n = m.n();
    let mut d = m.as_slice().to_vec();
    let mut pred: Vec<Option<usize>> = (0..n * n).map(|ij| d[ij].is_finite().then_some(ij / n)).collect();
    for k in 0..n {
        for i in 0..n {
            let dik = d[i * n + k];
            if i == k || !dik.is_finite() {
                continue;
            }
            for j in 0..n {
                if j == i || j == k {
                    continue;
                }
                let via = dik + d[k * n + j];
                if via < d[i * n + j] {
                    d[i * n + j] = via;
                    pred[i * n + j] = pred[k * n + j];
                }
            }
        }
    }
    AllPairs { distances: CostMatrix::from_raw(n, d), predecessors: pred }
}

/// A minimum-cost node sequence and its cost.
#[derive(Debug, Clone, PartialEq)]
pub struct ShortestPath {
    pub nodes: Vec<usize>,
    pub cost: f64,
}

#[derive(PartialEq)]
struct Label {
    cost: f64,
    path: Vec<usize>,
}

impl Eq for Label {}

impl Ord for Label {
    // Reversed so the max-heap pops the cheapest, then lexicographically smallest, label.
    fn cmp(&self, other: &Self) -> Ordering {
        other.cost.total_cmp(&self.cost).then_with(|| other.path.cmp(&self.path))
    }
}

impl PartialOrd for Label {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-pair Dijkstra on positive costs.
///
/// Among equal-cost optimal paths the lexicographically smallest node sequence
/// is returned. `Ok(None)` means the target is unreachable.
pub fn dijkstra(m: &CostMatrix, source: usize, target: usize) -> Result<Option<ShortestPath>> {
    let n = m.n();
    if source >= n || target >= n {
        return invalid(format!("endpoints ({source}, {target}) out of range for {n} nodes"));
    }
    let mut best: Vec<Option<Label>> = (0..n).map(|_| None).collect();
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    best[source] = Some(Label { cost: 0.0, path: vec![source] });
    heap.push(Label { cost: 0.0, path: vec![source] });
    while let Some(label) = heap.pop() {
        let u = *label.path.last().expect("labels are nonempty");
        if done[u] {
            continue;
        }
        // Skip stale heap entries.
        if best[u].as_ref() != Some(&label) {
            continue;
        }
        done[u] = true;
        if u == target {
            return Ok(Some(ShortestPath { nodes: label.path, cost: label.cost }));
        }
        for v in 0..n {
            let w = m.get(u, v);
            if v == u || done[v] || !w.is_finite() {
                continue;
            }
            let cost = label.cost + w;
            let better = match &best[v] {
                None => true,
                Some(cur) => {
                    cost < cur.cost
                        || (cost == cur.cost && {
                            let mut cand = label.path.clone();
                            cand.push(v);
                            cand < cur.path
                        })
                }
            };
            if better {
                let mut path = label.path.clone();
                path.push(v);
                best[v] = Some(Label { cost, path: path.clone() });
                heap.push(Label { cost, path });
            }
        }
    }
    Ok(None)
}

/// On-disk graph document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub num_nodes: usize,
    pub directed: bool,
    pub edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_costs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_positions: Option<Vec<[f64; 2]>>,
}

impl GraphDocument {
    /// Resolves the document into a graph and its prior.
    ///
    /// Undirected edges are expanded to both orientations. Prior costs given
    /// for an undirected graph are per input pair and duplicated. Without
    /// explicit priors, Euclidean lengths are used when positions exist and
    /// unit costs otherwise.
    pub fn into_graph(&self) -> Result<(Graph, PriorCosts)> {
        let pairs: Vec<(usize, usize)> = self.edges.iter().map(|e| (e[0], e[1])).collect();
        let graph = if self.directed {
            Graph::new(self.num_nodes, pairs.clone())?
        } else {
            Graph::undirected(self.num_nodes, &pairs)?
        };
        let prior = match (&self.prior_costs, &self.node_positions) {
            (Some(costs), _) => {
                if costs.len() != pairs.len() {
                    return invalid(format!("{} prior costs for {} edges", costs.len(), pairs.len()));
                }
                let mut per_edge = vec![f64::NAN; graph.edge_count()];
                for (&(u, v), &c) in pairs.iter().zip(costs) {
                    per_edge[graph.edge_id(u, v).expect("edge present")] = c;
                    if !self.directed {
                        per_edge[graph.edge_id(v, u).expect("edge present")] = c;
                    }
                }
                PriorCosts::new(&graph, per_edge)?
            }
            (None, Some(pos)) => PriorCosts::euclidean(&graph, pos)?,
            (None, None) => PriorCosts::new(&graph, vec![1.0; graph.edge_count()])?,
        };
        Ok((graph, prior))
    }

    /// Directed document listing every edge with its prior.
    pub fn from_graph(graph: &Graph, prior: &PriorCosts, positions: Option<Vec<[f64; 2]>>) -> Self {
        Self {
            num_nodes: graph.node_count(),
            directed: true,
            edges: graph.edges().iter().map(|&(u, v)| [u, v]).collect(),
            prior_costs: Some(prior.as_slice().to_vec()),
            node_positions: positions,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(Error::from)
    }
}
