//! Observed trajectories and their shortcut-frequency encoding.
//!
//! A trajectory `n_0 → … → n_L` is summarized by the highest intermediate
//! node of every one of its subpaths: for positions `a < b`, the triple
//! `(n_a, n_b, k)` with `k = max(n_{a+1}, …, n_{b-1})`, or `k = n_a` when the
//! subpath is a single edge. Normalizing those counts per `(i, j)` gives the
//! empirical counterpart `F` of the shortcut tensor.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::graph::Graph;

/// Node sequence of length at least two with distinct consecutive nodes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Trajectory(Vec<usize>);

impl Trajectory {
    pub fn new(nodes: Vec<usize>) -> Result<Self> {
        if nodes.len() < 2 {
            return invalid(format!("trajectory needs at least 2 nodes, got {}", nodes.len()));
        }
        if let Some(w) = nodes.windows(2).find(|w| w[0] == w[1]) {
            return invalid(format!("trajectory repeats node {} consecutively", w[0]));
        }
        Ok(Self(nodes))
    }

    pub fn nodes(&self) -> &[usize] {
        &self.0
    }

    pub fn source(&self) -> usize {
        self.0[0]
    }

    pub fn target(&self) -> usize {
        *self.0.last().expect("nonempty")
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_cycle_free(&self) -> bool {
        let mut seen = std::collections::HashSet::with_capacity(self.0.len());
        self.0.iter().all(|v| seen.insert(*v))
    }

    /// Checks that every consecutive pair is an edge of `graph`.
    pub fn check_on(&self, graph: &Graph) -> Result<()> {
        for w in self.0.windows(2) {
            if !graph.has_edge(w[0], w[1]) {
                return invalid(format!("trajectory step ({}, {}) is not an edge", w[0], w[1]));
            }
        }
        Ok(())
    }

    /// Consecutive-pair edge set.
    pub fn edge_set(&self) -> std::collections::BTreeSet<(usize, usize)> {
        self.0.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

impl TryFrom<Vec<usize>> for Trajectory {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        Trajectory::new(v)
    }
}

impl From<Trajectory> for Vec<usize> {
    fn from(t: Trajectory) -> Self {
        t.0
    }
}

/// Keeps a walk only if no node repeats; nothing is spliced out.
pub fn remove_cycles(walk: &[usize]) -> Option<Trajectory> {
    let t = Trajectory::new(walk.to_vec()).ok()?;
    t.is_cycle_free().then_some(t)
}

/// One `(i, j, k)` triple per subpath of a cycle-free trajectory.
pub fn highest_intermediate_decomposition(traj: &Trajectory) -> Result<Vec<(usize, usize, usize)>> {
    if !traj.is_cycle_free() {
        return invalid("trajectory contains a cycle; remove cycles first");
    }
    let nodes = traj.nodes();
    let mut out = Vec::with_capacity(nodes.len() * (nodes.len() - 1) / 2);
    for a in 0..nodes.len() {
        let mut highest: Option<usize> = None;
        for b in a + 1..nodes.len() {
            out.push((nodes[a], nodes[b], highest.unwrap_or(nodes[a])));
            highest = Some(highest.map_or(nodes[b], |h| h.max(nodes[b])));
        }
    }
    Ok(out)
}

/// Sparse empirical shortcut distribution `F` over observed pairs `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyTensor {
    n: usize,
    /// Per observed pair, `(k, frequency)` sorted by `k`, summing to one.
    rows: BTreeMap<(usize, usize), Vec<(usize, f64)>>,
}

impl FrequencyTensor {
    pub fn n(&self) -> usize {
        self.n
    }

    /// The observed pair set `D`.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.rows.keys().copied()
    }

    pub fn pair_count(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize, j: usize) -> Option<&[(usize, f64)]> {
        self.rows.get(&(i, j)).map(Vec::as_slice)
    }

    pub fn rows(&self) -> impl Iterator<Item = (&(usize, usize), &Vec<(usize, f64)>)> {
        self.rows.iter()
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.row(i, j).and_then(|r| r.iter().find(|e| e.0 == k)).map_or(0.0, |e| e.1)
    }

    /// Builds `F` from explicit per-pair distributions (used for tests and oracles).
    pub fn from_rows(n: usize, rows: BTreeMap<(usize, usize), Vec<(usize, f64)>>) -> Result<Self> {
        for (&(i, j), row) in &rows {
            if i >= n || j >= n || row.iter().any(|e| e.0 >= n) {
                return invalid(format!("frequency row ({i}, {j}) out of range"));
            }
            let s: f64 = row.iter().map(|e| e.1).sum();
            if (s - 1.0).abs() > 1e-9 || row.iter().any(|e| e.1 < 0.0) {
                return invalid(format!("frequency row ({i}, {j}) is not a distribution"));
            }
        }
        Ok(Self { n, rows })
    }
}

/// Counts all subpath triples of `trajs` and normalizes per pair.
pub fn build_frequency_tensor(n: usize, trajs: &[Trajectory]) -> Result<FrequencyTensor> {
    if trajs.is_empty() {
        return invalid("no trajectories to encode");
    }
    let mut counts: BTreeMap<(usize, usize), BTreeMap<usize, u64>> = BTreeMap::new();
    for t in trajs {
        if let Some(&v) = t.nodes().iter().find(|&&v| v >= n) {
            return invalid(format!("node {v} out of range for {n} nodes"));
        }
        for (i, j, k) in highest_intermediate_decomposition(t)? {
            *counts.entry((i, j)).or_default().entry(k).or_default() += 1;
        }
    }
    let rows = counts
        .into_iter()
        .map(|(pair, ks)| {
            let total: u64 = ks.values().sum();
            let row = ks.into_iter().map(|(k, c)| (k, c as f64 / total as f64)).collect();
            (pair, row)
        })
        .collect();
    Ok(FrequencyTensor { n, rows })
}

/// Rewrites a path after node exclusion.
///
/// `remap[v]` is the new index of a kept node and `None` for removed ones.
/// Returns `None` when fewer than two nodes survive.
pub fn apply_node_exclusion_to_path(traj: &Trajectory, remap: &[Option<usize>]) -> Option<Trajectory> {
    let kept: Vec<usize> = traj.nodes().iter().filter_map(|&v| remap.get(v).copied().flatten()).collect();
    Trajectory::new(kept).ok()
}

/// Context features of one sample.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ContextSample {
    pub features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub discrete: Vec<i64>,
}

impl ContextSample {
    /// Euclidean distance over continuous features plus Hamming distance over
    /// discrete ones, both with unit weight.
    pub fn distance(&self, other: &ContextSample) -> f64 {
        let euclid = self.features.iter().zip(&other.features).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let hamming = self.discrete.iter().zip(&other.discrete).filter(|(a, b)| a != b).count();
        euclid + hamming as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// A context with its observed trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub context: ContextSample,
    pub trajectories: Vec<Trajectory>,
    /// Latent per-edge costs that generated the trajectories, when known.
    pub true_costs: Option<Vec<f64>>,
}

/// Records plus their split assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<Record>,
    pub splits: Vec<Split>,
}

impl Dataset {
    pub fn new(records: Vec<Record>, splits: Vec<Split>) -> Result<Self> {
        if records.len() != splits.len() {
            return invalid("one split tag per record required");
        }
        if let Some(r) = records.first() {
            let (d, q) = (r.context.features.len(), r.context.discrete.len());
            if records.iter().any(|r| r.context.features.len() != d || r.context.discrete.len() != q) {
                return invalid("context length differs across records");
            }
        }
        Ok(Self { records, splits })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.records.first().map_or(0, |r| r.context.features.len())
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    /// Checks every trajectory against the graph.
    pub fn check_on(&self, graph: &Graph) -> Result<()> {
        for r in &self.records {
            for t in &r.trajectories {
                t.check_on(graph)?;
            }
            if let Some(c) = &r.true_costs {
                if c.len() != graph.edge_count() {
                    return invalid("true cost vector length differs from edge count");
                }
            }
        }
        Ok(())
    }

    /// Node visit counts over the trajectories of `indices`.
    pub fn node_frequencies(&self, n: usize, indices: &[usize]) -> Vec<f64> {
        let mut freq = vec![0.0; n];
        for &r in indices {
            for t in &self.records[r].trajectories {
                for &v in t.nodes() {
                    freq[v] += 1.0;
                }
            }
        }
        freq
    }
}

/// Record indices of the samples in `pool` closest in context to `anchor`.
///
/// Selects `⌈fraction · |pool|⌉` samples (at least two when the pool allows),
/// ordered by distance with ties broken by index. The anchor itself always
/// comes first.
pub fn similarity_neighbors(dataset: &Dataset, pool: &[usize], anchor: usize, fraction: f64) -> Result<Vec<usize>> {
    if pool.is_empty() || dataset.is_empty() {
        return invalid("empty dataset");
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return invalid(format!("similarity fraction must be in (0, 1], got {fraction}"));
    }
    if anchor >= dataset.len() {
        return invalid(format!("anchor {anchor} out of range"));
    }
    let total = pool.len() + usize::from(!pool.contains(&anchor));
    let want = ((fraction * pool.len() as f64).ceil() as usize).max(2).min(total);
    let ctx = &dataset.records[anchor].context;
    let mut ranked: Vec<(f64, usize)> =
        pool.iter().filter(|&&r| r != anchor).map(|&r| (ctx.distance(&dataset.records[r].context), r)).collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut out = Vec::with_capacity(want);
    out.push(anchor);
    out.extend(ranked.into_iter().take(want - 1).map(|e| e.1));
    Ok(out)
}

/// Trajectories of the context-similarity batch around `anchor`.
pub fn batch_by_context_similarity(
    dataset: &Dataset,
    pool: &[usize],
    anchor: usize,
    fraction: f64,
) -> Result<Vec<Trajectory>> {
    Ok(similarity_neighbors(dataset, pool, anchor, fraction)?
        .into_iter()
        .flat_map(|r| dataset.records[r].trajectories.iter().cloned())
        .collect())
}

/// One line of a trajectory file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLine {
    pub context: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discrete: Option<Vec<i64>>,
    pub path: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_costs: Option<Vec<f64>>,
}

pub fn read_trajectory_lines(path: &Path) -> Result<Vec<TrajectoryLine>> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), lineno + 1)))?,
        );
    }
    Ok(out)
}

pub fn write_trajectory_lines(path: &Path, lines: &[TrajectoryLine]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for l in lines {
        serde_json::to_writer(&mut w, l)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Split assignment by record index.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Dataset manifest: graph file, trajectory files and split assignment.
///
/// Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub graph: PathBuf,
    pub trajectories: Vec<PathBuf>,
    pub splits: SplitIndices,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Loads graph, prior and dataset referenced by the manifest at `path`.
    pub fn load_all(path: &Path) -> Result<(Graph, crate::graph::PriorCosts, Dataset)> {
        let manifest = Self::load(path)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let (graph, prior) = crate::graph::GraphDocument::load(&dir.join(&manifest.graph))?.into_graph()?;
        let mut lines = Vec::new();
        for t in &manifest.trajectories {
            lines.extend(read_trajectory_lines(&dir.join(t))?);
        }
        let dataset = dataset_from_lines(lines, &manifest.splits)?;
        dataset.check_on(&graph)?;
        Ok((graph, prior, dataset))
    }
}

/// Writes `graph.json`, `trajectories.jsonl` and `manifest.json` into `dir`
/// and returns the manifest path.
pub fn write_dataset(
    dir: &Path,
    graph: &crate::graph::GraphDocument,
    dataset: &Dataset,
    provenance: Option<serde_json::Value>,
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("graph.json"), serde_json::to_string_pretty(graph)?)?;
    let (lines, splits) = dataset_to_lines(dataset);
    write_trajectory_lines(&dir.join("trajectories.jsonl"), &lines)?;
    let manifest = Manifest {
        graph: PathBuf::from("graph.json"),
        trajectories: vec![PathBuf::from("trajectories.jsonl")],
        splits,
        provenance,
    };
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}

/// Assembles a dataset; records not named in any split default to train.
pub fn dataset_from_lines(lines: Vec<TrajectoryLine>, splits: &SplitIndices) -> Result<Dataset> {
    let mut tags = vec![Split::Train; lines.len()];
    for (list, tag) in [(&splits.val, Split::Val), (&splits.test, Split::Test)] {
        for &i in list {
            *tags.get_mut(i).ok_or_else(|| Error::Format(format!("split index {i} out of range")))? = tag;
        }
    }
    let records = lines
        .into_iter()
        .map(|l| {
            Ok(Record {
                context: ContextSample { features: l.context, discrete: l.discrete.unwrap_or_default() },
                trajectories: vec![Trajectory::new(l.path)?],
                true_costs: l.true_costs,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(records, tags)
}

/// Inverse of [`dataset_from_lines`] for single-trajectory records.
pub fn dataset_to_lines(dataset: &Dataset) -> (Vec<TrajectoryLine>, SplitIndices) {
    let mut splits = SplitIndices::default();
    let mut lines = Vec::new();
    for (r, tag) in dataset.records.iter().zip(&dataset.splits) {
        for t in &r.trajectories {
            let idx = lines.len();
            match tag {
                Split::Train => splits.train.push(idx),
                Split::Val => splits.val.push(idx),
                Split::Test => splits.test.push(idx),
            }
            lines.push(TrajectoryLine {
                context: r.context.features.clone(),
                discrete: (!r.context.discrete.is_empty()).then(|| r.context.discrete.clone()),
                path: t.nodes().to_vec(),
                true_costs: r.true_costs.clone(),
            });
        }
    }
    (lines, splits)
}
