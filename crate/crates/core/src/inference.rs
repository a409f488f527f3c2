//! Path sampling from a shortcut tensor, destination likelihoods and the
//! route-comparison metrics.

use std::collections::BTreeMap;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{forward_efficient, ShortcutTensor};
use crate::error::{invalid, Error, Result};
use crate::graph::{build_cost_matrix, dijkstra, CostMatrix, Graph};
use crate::smooth::Beta;
use crate::trajectory::Trajectory;

/// Attempts per row before a zero-mass row is reported to the caller.
const MAX_REDRAWS: usize = 100;

/// Samples per independent random stream in [`monte_carlo_path_distribution`].
const CHUNK: usize = 4096;

/// Counters kept while sampling.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerStats {
    /// Parent draws repeated because a masked child row had no mass.
    pub redraws: u64,
}

fn draw_slot(row: &[f64], a: usize, bound: usize, rng: &mut crate::Rng) -> Option<usize> {
    let allowed = |k: usize| k < bound || k == a;
    let total: f64 = row.iter().enumerate().filter(|&(k, _)| allowed(k)).map(|(_, p)| p).sum();
    if total <= 0.0 {
        return None;
    }
    let mut u = rng.random::<f64>() * total;
    let mut last = None;
    for (k, &p) in row.iter().enumerate() {
        if !allowed(k) || p <= 0.0 {
            continue;
        }
        u -= p;
        last = Some(k);
        if u < 0.0 {
            return last;
        }
    }
    last
}

/// Appends the nodes after `a` on a sampled `a → b` walk whose intermediates
/// are all below `bound`.
fn sample_into(
    p: &ShortcutTensor,
    a: usize,
    b: usize,
    bound: usize,
    rng: &mut crate::Rng,
    out: &mut Vec<usize>,
    stats: &mut SamplerStats,
) -> Result<()> {
    let row = p.row(a, b);
    let mark = out.len();
    for _ in 0..MAX_REDRAWS {
        let h = draw_slot(row, a, bound, rng).ok_or(Error::ZeroRow(a, b))?;
        if h == a {
            out.push(b);
            return Ok(());
        }
        let attempt = sample_into(p, a, h, h, rng, out, stats).and_then(|_| sample_into(p, h, b, h, rng, out, stats));
        match attempt {
            Ok(()) => return Ok(()),
            Err(Error::ZeroRow(..)) => {
                out.truncate(mark);
                stats.redraws += 1;
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::ZeroRow(a, b))
}

/// Draws one walk from `i` to `j`.
///
/// The highest intermediate `H` is drawn from `P[i,j,·]`; the halves `i → H`
/// and `H → j` are then sampled recursively from their own rows restricted to
/// slots below `H` plus the direct slot. The restriction is applied lazily to
/// the single row being drawn.
pub fn sample_path(p: &ShortcutTensor, i: usize, j: usize, rng: &mut crate::Rng) -> Result<Vec<usize>> {
    sample_path_with_stats(p, i, j, rng, &mut SamplerStats::default())
}

pub fn sample_path_with_stats(
    p: &ShortcutTensor,
    i: usize,
    j: usize,
    rng: &mut crate::Rng,
    stats: &mut SamplerStats,
) -> Result<Vec<usize>> {
    let n = p.n();
    if i >= n || j >= n || i == j {
        return invalid(format!("invalid pair ({i}, {j}) for {n} nodes"));
    }
    if !p.is_reachable(i, j) {
        return Err(Error::Unreachable(i, j));
    }
    let mut out = vec![i];
    sample_into(p, i, j, n, rng, &mut out, stats)?;
    Ok(out)
}

/// Empirical walk distribution from repeated sampling.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PathDistributionEstimate {
    pub counts: BTreeMap<Vec<usize>, u64>,
    /// Accepted samples.
    pub sample_count: u64,
    /// Walks discarded for revisiting a node.
    pub rejected_count: u64,
    pub stats: SamplerStats,
}

impl PathDistributionEstimate {
    pub fn freq(&self, walk: &[usize]) -> f64 {
        if self.sample_count == 0 {
            return 0.0;
        }
        self.counts.get(walk).copied().unwrap_or(0) as f64 / self.sample_count as f64
    }

    /// `(walk, count, frequency)` in lexicographic walk order.
    pub fn entries(&self) -> impl Iterator<Item = (&Vec<usize>, u64, f64)> + '_ {
        self.counts.iter().map(|(w, &c)| (w, c, c as f64 / self.sample_count as f64))
    }

    fn merge(&mut self, other: PathDistributionEstimate) {
        for (w, c) in other.counts {
            *self.counts.entry(w).or_insert(0) += c;
        }
        self.sample_count += other.sample_count;
        self.rejected_count += other.rejected_count;
        self.stats.redraws += other.stats.redraws;
    }
}

fn has_repeat(walk: &[usize]) -> bool {
    let mut seen = walk.to_vec();
    seen.sort_unstable();
    seen.windows(2).any(|w| w[0] == w[1])
}

/// Repeats [`sample_path`] `num_samples` times.
///
/// With `reject_cycles`, walks that revisit a node are discarded and counted;
/// sampling stops after `100 · num_samples` attempts in total. Work is split
/// into fixed chunks with their own derived random streams, so the result
/// does not depend on the number of worker threads.
pub fn monte_carlo_path_distribution(
    p: &ShortcutTensor,
    i: usize,
    j: usize,
    num_samples: usize,
    rng: &mut crate::Rng,
    reject_cycles: bool,
) -> Result<PathDistributionEstimate> {
    if num_samples == 0 {
        return invalid("num_samples must be at least 1");
    }
    let base: u64 = rng.random();
    let chunks = num_samples.div_ceil(CHUNK);
    let parts: Vec<Result<PathDistributionEstimate>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let quota = CHUNK.min(num_samples - c * CHUNK);
            let mut local = crate::seeded_rng(crate::derive_seed(&[base, c as u64]));
            let mut est = PathDistributionEstimate::default();
            let mut attempts = 0;
            while (est.sample_count as usize) < quota && attempts < 100 * quota {
                attempts += 1;
                let walk = sample_path_with_stats(p, i, j, &mut local, &mut est.stats)?;
                if reject_cycles && has_repeat(&walk) {
                    est.rejected_count += 1;
                    continue;
                }
                *est.counts.entry(walk).or_insert(0) += 1;
                est.sample_count += 1;
            }
            Ok(est)
        })
        .collect();
    let mut total = PathDistributionEstimate::default();
    for part in parts {
        total.merge(part?);
    }
    if total.sample_count == 0 {
        return Err(Error::AllRejected(total.rejected_count as usize));
    }
    Ok(total)
}

/// Prior weights over candidate destinations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DestinationPrior {
    pub kind: PriorKind,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorKind {
    Uniform,
    ExpNegativeDistance,
    Custom,
}

impl DestinationPrior {
    pub fn uniform(n: usize) -> Self {
        Self { kind: PriorKind::Uniform, weights: vec![1.0; n] }
    }

    /// `exp(−d)` for the given distances; infinite distances get weight 0.
    pub fn exp_negative_distance(distances: &[f64]) -> Result<Self> {
        if distances.iter().any(|d| d.is_nan() || *d < 0.0) {
            return invalid("distances must be nonnegative");
        }
        Self::checked(PriorKind::ExpNegativeDistance, distances.iter().map(|d| (-d).exp()).collect())
    }

    pub fn custom(weights: Vec<f64>) -> Result<Self> {
        Self::checked(PriorKind::Custom, weights)
    }

    fn checked(kind: PriorKind, weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return invalid("prior weights must be finite and nonnegative");
        }
        if !weights.iter().any(|&w| w > 0.0) {
            return invalid("prior needs at least one positive weight");
        }
        Ok(Self { kind, weights })
    }
}

/// Runs the forward pass with node `last` relabelled as the highest index.
pub fn swapped_shortcuts(m: &CostMatrix, beta: Beta, last: usize) -> Result<ShortcutTensor> {
    let n = m.n();
    let swapped = m.swap_nodes(last, n - 1)?;
    Ok(forward_efficient(&swapped, beta)?.shortcuts)
}

/// Posterior over destinations given a partial path.
///
/// `p_swapped` must come from a cost matrix in which the last node of
/// `partial` was swapped with `n − 1` (see [`swapped_shortcuts`]); the result
/// is indexed by the original node ids. A destination `x` off the partial
/// path scores `P[σ(n₁), σ(x), n−1] · prior(x)`, i.e. the probability that
/// the walk to `x` passes through the current node. The current node itself
/// scores with its direct slot `P[σ(n₁), n−1, σ(n₁)]`; other nodes of the
/// partial path score 0.
pub fn destination_likelihood(
    p_swapped: &ShortcutTensor,
    partial: &Trajectory,
    prior: &DestinationPrior,
) -> Result<Vec<f64>> {
    let n = p_swapped.n();
    if prior.weights.len() != n {
        return invalid("prior length differs from node count");
    }
    if partial.nodes().iter().any(|&v| v >= n) {
        return invalid("partial path has out-of-range nodes");
    }
    let last = partial.target();
    let sigma = |v: usize| {
        if v == last {
            n - 1
        } else if v == n - 1 {
            last
        } else {
            v
        }
    };
    let first = sigma(partial.source());
    let on_path: std::collections::HashSet<usize> = partial.nodes().iter().copied().collect();
    let mut scores = vec![0.0; n];
    for (x, s) in scores.iter_mut().enumerate() {
        let factor = if x == last {
            p_swapped.get(first, n - 1, first)
        } else if on_path.contains(&x) {
            0.0
        } else {
            p_swapped.get(first, sigma(x), n - 1)
        };
        *s = factor * prior.weights[x];
    }
    let total: f64 = scores.iter().sum();
    if total <= 0.0 {
        return Err(Error::Numerical("destination scores are all zero".into()));
    }
    scores.iter_mut().for_each(|s| *s /= total);
    Ok(scores)
}

/// Shortest path under the given per-edge costs.
pub fn expected_optimal_path(costs: &[f64], graph: &Graph, i: usize, j: usize) -> Result<Trajectory> {
    let m = build_cost_matrix(costs, graph)?;
    optimal_path(&m, i, j)
}

pub(crate) fn optimal_path(m: &CostMatrix, i: usize, j: usize) -> Result<Trajectory> {
    match dijkstra(m, i, j)? {
        Some(sp) => Trajectory::new(sp.nodes),
        None => Err(Error::NoPath { source_node: i, target: j }),
    }
}

/// Intersection over union of the edge sets of two paths.
pub fn jaccard_edges(pred: &Trajectory, obs: &Trajectory) -> f64 {
    let a = pred.edge_set();
    let b = obs.edge_set();
    let inter = a.intersection(&b).count();
    let union = a.union(&b).count();
    inter as f64 / union as f64
}

/// Fraction of predictions identical to the observation.
pub fn match_rate(preds: &[Trajectory], obs: &[Trajectory]) -> Result<f64> {
    if preds.is_empty() || preds.len() != obs.len() {
        return invalid("match_rate needs equally many, nonempty predictions and observations");
    }
    Ok(preds.iter().zip(obs).filter(|(p, o)| p == o).count() as f64 / preds.len() as f64)
}

/// Fraction of predictions that are optimal under the corresponding true costs.
pub fn optimal_cost_rate(preds: &[Trajectory], true_costs: &[CostMatrix]) -> Result<f64> {
    if preds.is_empty() || preds.len() != true_costs.len() {
        return invalid("optimal_cost_rate needs equally many, nonempty predictions and cost matrices");
    }
    let mut hits = 0;
    for (p, m) in preds.iter().zip(true_costs) {
        let best = dijkstra(m, p.source(), p.target())?
            .ok_or(Error::NoPath { source_node: p.source(), target: p.target() })?;
        let cost = m.walk_cost(p.nodes());
        if (cost - best.cost).abs() <= 1e-9 * best.cost.abs().max(1e-300) {
            hits += 1;
        }
    }
    Ok(hits as f64 / preds.len() as f64)
}
