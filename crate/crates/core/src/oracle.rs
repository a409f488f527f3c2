//! Brute-force references for the smoothed recursion.
//!
//! The walk space reachable by the recursion is defined inductively. A walk
//! `a → b` whose intermediates all lie below `bound` is either the direct
//! edge, or for some `h < bound` with `h ∉ {a, b}` a walk `a → h` followed
//! by a walk `h → b`, both with intermediates below `h`. Every such walk has
//! `h` as its unique highest interior node, so the decomposition is unique.
//! This is exactly the support of [`crate::inference::sample_path`].

use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{forward_efficient, Forward, ShortcutTensor};
use crate::error::{invalid, Error, Result};
use crate::graph::CostMatrix;
use crate::inference::monte_carlo_path_distribution;
use crate::smooth::{softmin_value, Beta};

pub const MAX_ENUMERATION_NODES: usize = 10;
pub const MAX_ENUMERATED_WALKS: u64 = 1_000_000;

/// Above this many walks per pair, the theorem checks sum partition functions
/// instead of listing walks.
const LIST_FOR_CHECKS: f64 = 20_000.0;

/// A walk produced by the recursive decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitableWalk {
    pub nodes: Vec<usize>,
    pub cost: f64,
    /// `None` for the direct edge.
    pub highest_intermediate: Option<usize>,
}

struct Counter<'a> {
    m: &'a CostMatrix,
    memo: HashMap<(usize, usize, usize), f64>,
}

impl Counter<'_> {
    /// Number of walks, as a float so that overflow saturates to infinity.
    fn count(&mut self, a: usize, b: usize, bound: usize) -> f64 {
        if let Some(&c) = self.memo.get(&(a, b, bound)) {
            return c;
        }
        let mut c = if self.m.get(a, b).is_finite() { 1.0 } else { 0.0 };
        for h in (0..bound).filter(|&h| h != a && h != b) {
            let left = self.count(a, h, h);
            if left > 0.0 {
                c += left * self.count(h, b, h);
            }
        }
        self.memo.insert((a, b, bound), c);
        c
    }
}

type WalkList = Rc<Vec<(Vec<usize>, f64)>>;

struct Enumerator<'a> {
    m: &'a CostMatrix,
    memo: HashMap<(usize, usize, usize), WalkList>,
}

impl Enumerator<'_> {
    fn walks(&mut self, a: usize, b: usize, bound: usize) -> WalkList {
        if let Some(w) = self.memo.get(&(a, b, bound)) {
            return w.clone();
        }
        let mut out = Vec::new();
        if self.m.get(a, b).is_finite() {
            out.push((vec![a, b], self.m.get(a, b)));
        }
        for h in (0..bound).filter(|&h| h != a && h != b) {
            let left = self.walks(a, h, h);
            if left.is_empty() {
                continue;
            }
            let right = self.walks(h, b, h);
            for (l, lc) in left.iter() {
                for (r, rc) in right.iter() {
                    let mut w = l.clone();
                    w.extend_from_slice(&r[1..]);
                    out.push((w, lc + rc));
                }
            }
        }
        let out = Rc::new(out);
        self.memo.insert((a, b, bound), out.clone());
        out
    }
}

/// Number of visitable `i → j` walks with every intermediate `≤ max_node_bound`.
pub fn count_visitable_walks(m: &CostMatrix, i: usize, j: usize, max_node_bound: usize) -> Result<f64> {
    check_pair(m, i, j)?;
    let mut c = Counter { m, memo: HashMap::new() };
    Ok(c.count(i, j, (max_node_bound + 1).min(m.n())))
}

fn check_pair(m: &CostMatrix, i: usize, j: usize) -> Result<()> {
    if i >= m.n() || j >= m.n() || i == j {
        return invalid(format!("invalid pair ({i}, {j}) for {} nodes", m.n()));
    }
    Ok(())
}

/// Lists every visitable `i → j` walk with every intermediate `≤ max_node_bound`.
///
/// Refuses graphs above [`MAX_ENUMERATION_NODES`] nodes and outputs above
/// [`MAX_ENUMERATED_WALKS`] walks rather than truncating. Walks are sorted by
/// cost, then node sequence.
pub fn enumerate_visitable_walks(
    m: &CostMatrix,
    i: usize,
    j: usize,
    max_node_bound: usize,
) -> Result<Vec<VisitableWalk>> {
    if m.n() > MAX_ENUMERATION_NODES {
        return Err(Error::EnumerationRefused(format!("{} nodes exceeds the limit of {MAX_ENUMERATION_NODES}", m.n())));
    }
    let count = count_visitable_walks(m, i, j, max_node_bound)?;
    if count > MAX_ENUMERATED_WALKS as f64 {
        return Err(Error::EnumerationRefused(format!("{count:e} walks exceeds the limit of {MAX_ENUMERATED_WALKS}")));
    }
    let mut e = Enumerator { m, memo: HashMap::new() };
    let list = e.walks(i, j, (max_node_bound + 1).min(m.n()));
    let mut walks: Vec<VisitableWalk> = list
        .iter()
        .map(|(nodes, cost)| VisitableWalk {
            highest_intermediate: nodes[1..nodes.len() - 1].iter().copied().max(),
            nodes: nodes.clone(),
            cost: *cost,
        })
        .collect();
    walks.sort_by(|a, b| a.cost.total_cmp(&b.cost).then_with(|| a.nodes.cmp(&b.nodes)));
    walks.dedup_by(|a, b| a.nodes == b.nodes);
    Ok(walks)
}

/// Boltzmann distribution `exp(−β·cost) / Z` over the given walks.
pub fn maxent_distribution(walks: &[VisitableWalk], beta: Beta) -> Result<BTreeMap<Vec<usize>, f64>> {
    if walks.is_empty() {
        return invalid("no walks");
    }
    let b = beta.get();
    let lo = walks.iter().map(|w| w.cost).fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = walks.iter().map(|w| (-b * (w.cost - lo)).exp()).collect();
    let z: f64 = weights.iter().sum();
    Ok(walks.iter().zip(weights).map(|(w, x)| (w.nodes.clone(), x / z)).collect())
}

/// `log Σ exp(−β·cost)` over visitable walks, via the recursion on partition
/// functions instead of explicit lists.
struct LogPartition<'a> {
    m: &'a CostMatrix,
    beta: f64,
    memo: HashMap<(usize, usize, usize), f64>,
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let hi = a.max(b);
    hi + ((a - hi).exp() + (b - hi).exp()).ln()
}

impl LogPartition<'_> {
    fn log_z(&mut self, a: usize, b: usize, bound: usize) -> f64 {
        if let Some(&z) = self.memo.get(&(a, b, bound)) {
            return z;
        }
        let mut z = -self.beta * self.m.get(a, b);
        for h in (0..bound).filter(|&h| h != a && h != b) {
            z = log_add(z, self.log_z_through(a, b, h));
        }
        self.memo.insert((a, b, bound), z);
        z
    }

    /// Walks with highest intermediate exactly `h`.
    fn log_z_through(&mut self, a: usize, b: usize, h: usize) -> f64 {
        let left = self.log_z(a, h, h);
        if left == f64::NEG_INFINITY {
            return left;
        }
        left + self.log_z(h, b, h)
    }
}

/// Smoothed distance of every pair from the walk space.
///
/// Explicit enumeration is used when it fits the guards, the partition-function
/// recursion otherwise.
fn reference_distance(m: &CostMatrix, beta: Beta, i: usize, j: usize, lz: &mut LogPartition) -> Result<f64> {
    let n = m.n();
    if n <= MAX_ENUMERATION_NODES && count_visitable_walks(m, i, j, n - 1)? <= LIST_FOR_CHECKS {
        let walks = enumerate_visitable_walks(m, i, j, n - 1)?;
        if walks.is_empty() {
            return Ok(f64::INFINITY);
        }
        let costs: Vec<f64> = walks.iter().map(|w| w.cost).collect();
        return softmin_value(&costs, beta);
    }
    Ok(-lz.log_z(i, j, n) / beta.get())
}

fn deviation(a: f64, b: f64) -> f64 {
    match (a.is_finite(), b.is_finite()) {
        (true, true) => (a - b).abs(),
        (false, false) if a == b => 0.0,
        _ => f64::INFINITY,
    }
}

/// Largest `|M_engine − min_β(walk costs)|` over all ordered pairs.
pub fn verify_theorem1(m: &CostMatrix, beta: Beta) -> Result<f64> {
    let f = forward_efficient(m, beta)?;
    theorem1_deviation(m, beta, &f)
}

pub fn theorem1_deviation(m: &CostMatrix, beta: Beta, f: &Forward) -> Result<f64> {
    let n = m.n();
    let mut lz = LogPartition { m, beta: beta.get(), memo: HashMap::new() };
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            let reference = reference_distance(m, beta, i, j, &mut lz)?;
            worst = worst.max(deviation(f.distances.get(i, j), reference));
        }
    }
    Ok(worst)
}

/// Largest `|P[i,j,k] − Z_k / Z|` where `Z_k` sums over walks whose highest
/// intermediate is `k` (`k = i` for the direct edge).
pub fn verify_theorem2(m: &CostMatrix, beta: Beta) -> Result<f64> {
    let f = forward_efficient(m, beta)?;
    theorem2_deviation(m, beta, &f.shortcuts)
}

pub fn theorem2_deviation(m: &CostMatrix, beta: Beta, p: &ShortcutTensor) -> Result<f64> {
    let n = m.n();
    let b = beta.get();
    let enumerable = n <= MAX_ENUMERATION_NODES;
    let mut lz = LogPartition { m, beta: b, memo: HashMap::new() };
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            let mut expected = vec![0.0; n];
            let small = enumerable && count_visitable_walks(m, i, j, n - 1)? <= LIST_FOR_CHECKS;
            if small {
                let walks = enumerate_visitable_walks(m, i, j, n - 1)?;
                if !walks.is_empty() {
                    let dist = maxent_distribution(&walks, beta)?;
                    for w in &walks {
                        expected[w.highest_intermediate.unwrap_or(i)] += dist[&w.nodes];
                    }
                }
            } else {
                let total = lz.log_z(i, j, n);
                if total > f64::NEG_INFINITY {
                    expected[i] = (-b * m.get(i, j) - total).exp();
                    for (k, e) in expected.iter_mut().enumerate().filter(|&(k, _)| k != i && k != j) {
                        *e = (lz.log_z_through(i, j, k) - total).exp();
                    }
                }
            }
            for (k, e) in expected.iter().enumerate() {
                worst = worst.max((p.get(i, j, k) - e).abs());
            }
        }
    }
    Ok(worst)
}

/// Total-variation distance between sampled walk frequencies and the
/// Boltzmann distribution over the enumerated walk space of one pair.
pub fn verify_theorem3(
    p: &ShortcutTensor,
    m: &CostMatrix,
    beta: Beta,
    i: usize,
    j: usize,
    num_samples: usize,
    rng: &mut crate::Rng,
) -> Result<f64> {
    let walks = enumerate_visitable_walks(m, i, j, m.n() - 1)?;
    let target = maxent_distribution(&walks, beta)?;
    let est = monte_carlo_path_distribution(p, i, j, num_samples, rng, false)?;
    let mut tv = 0.0;
    for (w, &q) in &target {
        tv += (est.freq(w) - q).abs();
    }
    for (w, _, f) in est.entries() {
        if !target.contains_key(w) {
            tv += f;
        }
    }
    Ok(tv / 2.0)
}

/// Central-difference check of `analytic` against `f` at `x`.
///
/// Entries of `x` that are not finite are skipped. Returns the largest
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn finite_difference_gradcheck(f: impl Fn(&[f64]) -> f64, x: &[f64], analytic: &[f64], step: f64) -> Result<f64> {
    if x.len() != analytic.len() {
        return invalid("gradient length differs from input length");
    }
    if step.is_nan() || step <= 0.0 {
        return invalid("step must be positive");
    }
    let mut worst: f64 = 0.0;
    let mut probe = x.to_vec();
    for e in 0..x.len() {
        if !x[e].is_finite() {
            continue;
        }
        probe[e] = x[e] + step;
        let plus = f(&probe);
        probe[e] = x[e] - step;
        let minus = f(&probe);
        probe[e] = x[e];
        let numeric = (plus - minus) / (2.0 * step);
        let err = (analytic[e] - numeric).abs() / analytic[e].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Random cost matrix: each off-diagonal entry is present with probability
/// `density` and uniform on `[lo, hi)`.
pub fn random_cost_matrix(n: usize, density: f64, lo: f64, hi: f64, rng: &mut impl Rng) -> CostMatrix {
    CostMatrix::from_fn(n, |_, _| if rng.random::<f64>() < density { rng.random_range(lo..hi) } else { f64::INFINITY })
        .expect("random entries are positive")
}

/// Like [`random_cost_matrix`] but always strongly connected: a bidirectional
/// ring over a random node order is added first.
pub fn random_connected_cost_matrix(n: usize, density: f64, lo: f64, hi: f64, rng: &mut impl Rng) -> CostMatrix {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut ring = vec![false; n * n];
    if n > 1 {
        for w in 0..n {
            let (a, b) = (order[w], order[(w + 1) % n]);
            if a != b {
                ring[a * n + b] = true;
                ring[b * n + a] = true;
            }
        }
    }
    CostMatrix::from_fn(n, |i, j| {
        if ring[i * n + j] || rng.random::<f64>() < density {
            rng.random_range(lo..hi)
        } else {
            f64::INFINITY
        }
    })
    .expect("random entries are positive")
}
