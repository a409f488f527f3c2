//! Seeded synthetic graphs with context-dependent latent costs.
//!
//! Nodes are uniform in the unit square. Each node proposes its
//! `neighbor_count` nearest nodes as candidate partners; every candidate pair
//! is kept with probability `sparsity` and stored in both directions. The
//! prior of an edge is its Euclidean length.
//!
//! For a context `x ~ N(0, I)` the latent cost of edge `e` is
//!
//! ```text
//! y_e(x) = prior_e · (1 + softplus(w_e · tanh(W x))) · (1 + noise_scale · ε)
//! ```
//!
//! clipped below at `0.05 · prior_e`, where `ε` is drawn from an equal mixture
//! of `N(−1, 1)` and `N(1, 1)`. The observed trajectory of a sample is the
//! shortest path under `y(x)` between a pair drawn from a fixed pool.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::graph::{build_cost_matrix, Graph, GraphDocument, PriorCosts};
use crate::inference::optimal_path;
use crate::model::softplus;
use crate::trajectory::{ContextSample, Dataset, Record, Split};

const CONNECTIVITY_RETRIES: u64 = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub num_nodes: usize,
    /// Nearest neighbors proposed by each node.
    pub neighbor_count: usize,
    /// Probability of keeping a candidate pair.
    pub sparsity: f64,
    pub feature_dim: usize,
    /// Rows of the hidden projection `W`.
    pub latent_dim: usize,
    /// Standard deviation of the per-edge read-out weights `w_e`.
    pub weight_scale: f64,
    pub num_samples: usize,
    pub pair_pool_size: usize,
    pub noise_scale: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_nodes: 30,
            neighbor_count: 9,
            sparsity: 0.83,
            feature_dim: 8,
            latent_dim: 4,
            weight_scale: 1.5,
            num_samples: 2500,
            pair_pool_size: 40,
            noise_scale: 0.1,
            val_fraction: 0.1,
            test_fraction: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        if self.num_nodes < 2 || self.neighbor_count == 0 || self.feature_dim == 0 || self.latent_dim == 0 {
            return invalid("node count, neighbor count and dimensions must be positive (at least two nodes)");
        }
        if !(self.sparsity > 0.0 && self.sparsity <= 1.0) {
            return invalid("sparsity must be in (0, 1]");
        }
        if !(self.noise_scale >= 0.0 && self.weight_scale >= 0.0) {
            return invalid("noise and weight scales must be nonnegative");
        }
        if self.pair_pool_size == 0 {
            return invalid("pair pool must be nonempty");
        }
        if !(self.val_fraction >= 0.0 && self.test_fraction >= 0.0 && self.val_fraction + self.test_fraction <= 1.0) {
            return invalid("split fractions must be nonnegative and sum to at most 1");
        }
        Ok(())
    }
}

/// Hidden parameters of the latent cost function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentCosts {
    /// `latent_dim × feature_dim`, row-major.
    pub projection: Vec<f64>,
    /// `edge_count × latent_dim`, row-major.
    pub readout: Vec<f64>,
    pub latent_dim: usize,
    pub noise_scale: f64,
}

impl LatentCosts {
    /// Noise-free costs `prior · (1 + softplus(w · tanh(W x)))`.
    pub fn mean_costs(&self, prior: &PriorCosts, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        let h: Vec<f64> = (0..self.latent_dim)
            .map(|r| self.projection[r * d..(r + 1) * d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>().tanh())
            .collect();
        prior
            .as_slice()
            .iter()
            .enumerate()
            .map(|(e, &p)| {
                let z: f64 = self.readout[e * self.latent_dim..(e + 1) * self.latent_dim]
                    .iter()
                    .zip(&h)
                    .map(|(a, b)| a * b)
                    .sum();
                p * (1.0 + softplus(z))
            })
            .collect()
    }

    /// Mean costs with one draw of multiplicative mixture noise.
    pub fn sample_costs(&self, prior: &PriorCosts, x: &[f64], rng: &mut crate::Rng) -> Vec<f64> {
        self.mean_costs(prior, x)
            .into_iter()
            .zip(prior.as_slice())
            .map(|(c, &p)| {
                let z: f64 = StandardNormal.sample(rng);
                let eps = if rng.random::<bool>() { z + 1.0 } else { z - 1.0 };
                (c * (1.0 + self.noise_scale * eps)).max(0.05 * p)
            })
            .collect()
    }
}

/// Everything produced by [`generate_synthetic_dataset`].
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub graph: Graph,
    pub prior: PriorCosts,
    pub positions: Vec<[f64; 2]>,
    pub dataset: Dataset,
    pub latent: LatentCosts,
    pub pair_pool: Vec<(usize, usize)>,
}

impl SyntheticData {
    pub fn graph_document(&self) -> GraphDocument {
        GraphDocument::from_graph(&self.graph, &self.prior, Some(self.positions.clone()))
    }
}

/// Draws positions and edges; `None` if the result is not strongly connected.
fn sample_graph(cfg: &SyntheticConfig, rng: &mut crate::Rng) -> Result<Option<(Graph, Vec<[f64; 2]>)>> {
    let n = cfg.num_nodes;
    let positions: Vec<[f64; 2]> = (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
    let dist = |a: usize, b: usize| {
        ((positions[a][0] - positions[b][0]).powi(2) + (positions[a][1] - positions[b][1]).powi(2)).sqrt()
    };
    let mut candidates = BTreeSet::new();
    for u in 0..n {
        let mut others: Vec<usize> = (0..n).filter(|&v| v != u).collect();
        others.sort_by(|&a, &b| dist(u, a).total_cmp(&dist(u, b)).then(a.cmp(&b)));
        for &v in others.iter().take(cfg.neighbor_count) {
            candidates.insert((u.min(v), u.max(v)));
        }
    }
    let pairs: Vec<(usize, usize)> = candidates.into_iter().filter(|_| rng.random::<f64>() < cfg.sparsity).collect();
    let graph = Graph::undirected(n, &pairs)?;
    Ok(graph.is_strongly_connected().then_some((graph, positions)))
}

/// Generates a graph, its prior and a dataset of shortest-path observations.
pub fn generate_synthetic_dataset(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let mut found = None;
    for attempt in 0..CONNECTIVITY_RETRIES {
        let mut rng = crate::seeded_rng(crate::derive_seed(&[cfg.seed, 0, attempt]));
        if let Some(g) = sample_graph(cfg, &mut rng)? {
            found = Some(g);
            break;
        }
    }
    let (graph, positions) = found.ok_or_else(|| {
        Error::Generation(format!("graph not strongly connected after {CONNECTIVITY_RETRIES} attempts"))
    })?;
    let prior = PriorCosts::euclidean(&graph, &positions)?;

    let mut rng = crate::seeded_rng(crate::derive_seed(&[cfg.seed, 1]));
    let scale = 1.0 / (cfg.feature_dim as f64).sqrt();
    let projection =
        (0..cfg.latent_dim * cfg.feature_dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    let readout = (0..graph.edge_count() * cfg.latent_dim)
        .map(|_| cfg.weight_scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let latent = LatentCosts { projection, readout, latent_dim: cfg.latent_dim, noise_scale: cfg.noise_scale };

    let n = cfg.num_nodes;
    let mut all_pairs: Vec<(usize, usize)> =
        (0..n).flat_map(|s| (0..n).filter(move |&t| t != s).map(move |t| (s, t))).collect();
    all_pairs.shuffle(&mut rng);
    let pair_pool: Vec<(usize, usize)> = all_pairs.into_iter().take(cfg.pair_pool_size).collect();

    let mut records = Vec::with_capacity(cfg.num_samples);
    for s in 0..cfg.num_samples {
        let mut srng = crate::seeded_rng(crate::derive_seed(&[cfg.seed, 2, s as u64]));
        let x: Vec<f64> = (0..cfg.feature_dim).map(|_| srng.sample(StandardNormal)).collect();
        let (src, dst) = pair_pool[srng.random_range(0..pair_pool.len())];
        let costs = latent.sample_costs(&prior, &x, &mut srng);
        let path = optimal_path(&build_cost_matrix(&costs, &graph)?, src, dst)?;
        records.push(Record {
            context: ContextSample { features: x, discrete: Vec::new() },
            trajectories: vec![path],
            true_costs: Some(costs),
        });
    }
    let n_test = (cfg.test_fraction * cfg.num_samples as f64).round() as usize;
    let n_val = ((cfg.val_fraction * cfg.num_samples as f64).round() as usize).min(cfg.num_samples - n_test);
    let n_train = cfg.num_samples - n_val - n_test;
    let splits = (0..cfg.num_samples)
        .map(|s| {
            if s < n_train {
                Split::Train
            } else if s < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            }
        })
        .collect();
    let dataset = Dataset::new(records, splits)?;
    Ok(SyntheticData { graph, prior, positions, dataset, latent, pair_pool })
}
