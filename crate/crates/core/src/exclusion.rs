//! Node exclusion: shrinking a cost matrix while keeping its short paths.
//!
//! Removing node `k` reconnects each in-neighbor `i` to each out-neighbor `j`
//! with `min_β(M[i,j], M[i,k] + M[k,j])` and then drops row and column `k`.
//! Only those two-hop pairs are touched.

use std::collections::VecDeque;

use rand::Rng as _;

use crate::error::{invalid, Result};
use crate::graph::{CostMatrix, Graph};
use crate::smooth::{softmin_pair, Beta};

#[derive(Debug, Clone, Copy, PartialEq)]
struct Reconnect {
    i: u32,
    j: u32,
    p_via: f64,
    p_direct: f64,
}

/// One elimination, in the indexing of the matrix it was applied to.
#[derive(Debug, Clone, PartialEq)]
struct Step {
    node: usize,
    n_before: usize,
    reconnects: Vec<Reconnect>,
}

/// Result of removing one node.
#[derive(Debug, Clone, PartialEq)]
pub struct Excluded {
    pub matrix: CostMatrix,
    /// `remap[v]` is the new index of old node `v`, `None` for the removed node.
    pub remap: Vec<Option<usize>>,
    step: Step,
}

/// Removes node `k` from `m`.
pub fn exclude_node(m: &CostMatrix, k: usize, beta: Beta) -> Result<Excluded> {
    let n = m.n();
    if k >= n {
        return invalid(format!("node {k} out of range for {n} nodes"));
    }
    let b = beta.get();
    let mut data = m.as_slice().to_vec();
    let mut reconnects = Vec::new();
    let ins: Vec<usize> = (0..n).filter(|&i| i != k && m.get(i, k).is_finite()).collect();
    let outs: Vec<usize> = (0..n).filter(|&j| j != k && m.get(k, j).is_finite()).collect();
    for &i in &ins {
        for &j in &outs {
            if i == j {
                continue;
            }
            let (p_via, p_direct, value) = softmin_pair(m.get(i, k) + m.get(k, j), m.get(i, j), b);
            data[i * n + j] = value;
            reconnects.push(Reconnect { i: i as u32, j: j as u32, p_via, p_direct });
        }
    }
    let remap: Vec<Option<usize>> = (0..n)
        .map(|v| match v.cmp(&k) {
            std::cmp::Ordering::Less => Some(v),
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Greater => Some(v - 1),
        })
        .collect();
    let mut out = Vec::with_capacity((n - 1) * (n - 1));
    for i in (0..n).filter(|&i| i != k) {
        for j in (0..n).filter(|&j| j != k) {
            out.push(data[i * n + j]);
        }
    }
    Ok(Excluded { matrix: CostMatrix::from_raw(n - 1, out), remap, step: Step { node: k, n_before: n, reconnects } })
}

/// A matrix compressed by a sequence of exclusions, with its adjoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Compressed {
    pub matrix: CostMatrix,
    /// Original ids of the kept nodes, ascending; new index = position.
    pub kept: Vec<usize>,
    /// Original id → new index.
    pub remap: Vec<Option<usize>>,
    steps: Vec<Step>,
}

impl Compressed {
    pub fn original_n(&self) -> usize {
        self.remap.len()
    }

    /// Maps `∂L/∂(compressed matrix)` back to `∂L/∂(original matrix)`.
    pub fn backward(&self, grad: &[f64]) -> Result<Vec<f64>> {
        let ns = self.matrix.n();
        if grad.len() != ns * ns {
            return invalid(format!("gradient has {} entries, expected {}", grad.len(), ns * ns));
        }
        let mut g = grad.to_vec();
        for step in self.steps.iter().rev() {
            let (n, k) = (step.n_before, step.node);
            let mut wide = vec![0.0; n * n];
            let mut src = g.iter();
            for i in (0..n).filter(|&i| i != k) {
                for j in (0..n).filter(|&j| j != k) {
                    wide[i * n + j] = *src.next().expect("sizes checked");
                }
            }
            for r in &step.reconnects {
                let ij = r.i as usize * n + r.j as usize;
                let up = wide[ij];
                wide[ij] = up * r.p_direct;
                wide[r.i as usize * n + k] += up * r.p_via;
                wide[k * n + r.j as usize] += up * r.p_via;
            }
            g = wide;
        }
        Ok(g)
    }
}

/// Removes every node in `removed` (original ids), highest id first.
pub fn compress(m: &CostMatrix, removed: &[usize], beta: Beta) -> Result<Compressed> {
    let n = m.n();
    let mut order = removed.to_vec();
    order.sort_unstable_by(|a, b| b.cmp(a));
    order.dedup();
    if let Some(&v) = order.first() {
        if v >= n {
            return invalid(format!("node {v} out of range for {n} nodes"));
        }
    }
    let mut matrix = m.clone();
    let mut steps = Vec::with_capacity(order.len());
    // Removing in descending order leaves the lower ids unshifted.
    for &k in &order {
        let ex = exclude_node(&matrix, k, beta)?;
        matrix = ex.matrix;
        steps.push(ex.step);
    }
    let kept: Vec<usize> = (0..n).filter(|v| !order.contains(v)).collect();
    let mut remap = vec![None; n];
    for (new, &old) in kept.iter().enumerate() {
        remap[old] = Some(new);
    }
    Ok(Compressed { matrix, kept, remap, steps })
}

fn weighted_pick(weights: &[f64], candidates: &[usize], rng: &mut crate::Rng) -> usize {
    let total: f64 = candidates.iter().map(|&v| weights[v]).sum();
    if total > 0.0 {
        let mut u = rng.random::<f64>() * total;
        for &v in candidates {
            u -= weights[v];
            if u < 0.0 && weights[v] > 0.0 {
                return v;
            }
        }
        // Rounding fell through: last positive candidate.
        if let Some(&v) = candidates.iter().rev().find(|&&v| weights[v] > 0.0) {
            return v;
        }
    }
    candidates[rng.random_range(0..candidates.len())]
}

/// Chooses `keep_count` nodes and excludes the rest.
///
/// Half of the kept nodes (rounded up) grow a connected region by random
/// breadth-first expansion from a frequency-weighted seed node; the others are
/// drawn without replacement proportionally to `node_frequencies`. When the
/// weights run out, remaining picks are uniform.
pub fn sample_subgraph(
    graph: &Graph,
    m: &CostMatrix,
    keep_count: usize,
    node_frequencies: &[f64],
    seed: u64,
    beta: Beta,
) -> Result<Compressed> {
    let n = graph.node_count();
    if m.n() != n || node_frequencies.len() != n {
        return invalid("graph, matrix and frequency sizes differ");
    }
    if keep_count < 2 || keep_count > n {
        return invalid(format!("keep_count must be in [2, {n}], got {keep_count}"));
    }
    if node_frequencies.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
        return invalid("node frequencies must be finite and nonnegative");
    }
    if keep_count == n {
        return compress(m, &[], beta);
    }
    let mut rng = crate::seeded_rng(seed);
    let adj = graph.undirected_neighbors();
    let mut chosen = vec![false; n];
    let all: Vec<usize> = (0..n).collect();
    let start = weighted_pick(node_frequencies, &all, &mut rng);
    chosen[start] = true;
    let mut count = 1;
    let connected = keep_count.div_ceil(2);
    let mut frontier: VecDeque<usize> = adj[start].iter().copied().collect();
    while count < connected && !frontier.is_empty() {
        let v = frontier.remove(rng.random_range(0..frontier.len())).expect("index in range");
        if chosen[v] {
            continue;
        }
        chosen[v] = true;
        count += 1;
        frontier.extend(adj[v].iter().copied().filter(|&w| !chosen[w]));
    }
    while count < keep_count {
        let rest: Vec<usize> = (0..n).filter(|&v| !chosen[v]).collect();
        let v = weighted_pick(node_frequencies, &rest, &mut rng);
        chosen[v] = true;
        count += 1;
    }
    let removed: Vec<usize> = (0..n).filter(|&v| !chosen[v]).collect();
    compress(m, &removed, beta)
}
