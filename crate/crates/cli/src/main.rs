mod config;
mod verify;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use datasp::engine::forward_efficient;
use datasp::graph::{build_cost_matrix, classical_floyd_warshall, GraphDocument};
use datasp::inference::{destination_likelihood, monte_carlo_path_distribution, swapped_shortcuts, DestinationPrior};
use datasp::model::CostModel;
use datasp::synthetic::generate_synthetic_dataset;
use datasp::tensor_io::Tensor;
use datasp::training::{evaluate_model, evaluate_prior, train_loop, Resume, RouteMetrics};
use datasp::trajectory::{write_dataset, Manifest, Split};
use datasp::{Beta, CostMatrix, Error, Trajectory};
use serde::Serialize;
use sha2::{Digest, Sha256};

use config::{PriorSpec, RunConfig};

#[derive(Parser)]
#[command(
    name = "datasp",
    version,
    about = "Learn edge costs from trajectories with smoothed all-pairs shortest paths"
)]
struct Cli {
    /// JSON run configuration; missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed (and DATASP_SEED).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for internal parallelism.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic graph and trajectory dataset.
    Gen,
    /// Train a cost model.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Compare a trained model with the prior on the test split.
    Eval {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Sample walks between two nodes.
    SamplePaths {
        #[command(flatten)]
        costs: CostArgs,
        #[arg(long)]
        source: Option<usize>,
        #[arg(long)]
        target: Option<usize>,
        #[arg(long)]
        num_samples: Option<usize>,
        #[arg(long)]
        reject_cycles: bool,
        #[arg(long)]
        save_tensors: bool,
    },
    /// Posterior over destinations of a partial path.
    PredictDest {
        #[command(flatten)]
        costs: CostArgs,
        /// Comma-separated node ids.
        #[arg(long, value_delimiter = ',')]
        partial: Option<Vec<usize>>,
        /// uniform or exp_negative_distance; custom weights go in the config.
        #[arg(long)]
        prior: Option<String>,
    },
    /// Check the engine against the brute-force oracle.
    Verify {
        /// Cost matrix tensor; defaults to the 4-node |i - j| fixture.
        #[arg(long)]
        costs: Option<PathBuf>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        source: Option<usize>,
        #[arg(long)]
        target: Option<usize>,
    },
}

#[derive(Args)]
struct CostArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Cost matrix tensor.
    #[arg(long)]
    costs: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset record supplying the context features.
    #[arg(long)]
    record: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
}

enum Failure {
    Lib(Error),
    Verification,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Lib(e.into())
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::Numerical(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
        Err(Failure::Verification) => {
            eprintln!("verification failed");
            ExitCode::from(4)
        }
    }
}

fn run(cli: Cli) -> CmdResult {
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(Error::Validation("--workers must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(w).build_global().map_err(|e| Error::Validation(e.to_string()))?;
    }
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.resolve_seed(cli.seed, std::env::var("DATASP_SEED").ok().as_deref())?;
    let out = cli.out.as_path();
    match cli.command {
        Command::Gen => cmd_gen(&cfg, out),
        Command::Train { data, resume } => {
            set_opt(&mut cfg.inputs.data, data);
            set_opt(&mut cfg.inputs.resume, resume);
            cmd_train(&cfg, out)
        }
        Command::Eval { data, checkpoint } => {
            set_opt(&mut cfg.inputs.data, data);
            set_opt(&mut cfg.inputs.checkpoint, checkpoint);
            cmd_eval(&cfg, out)
        }
        Command::SamplePaths { costs, source, target, num_samples, reject_cycles, save_tensors } => {
            apply_cost_args(&mut cfg, costs);
            set(&mut cfg.inference.source, source);
            set_opt(&mut cfg.inference.target, target);
            set(&mut cfg.inference.num_samples, num_samples);
            cfg.inference.reject_cycles |= reject_cycles;
            cfg.inference.save_tensors |= save_tensors;
            cmd_sample_paths(&cfg, out)
        }
        Command::PredictDest { costs, partial, prior } => {
            apply_cost_args(&mut cfg, costs);
            set(&mut cfg.inference.partial, partial);
            if let Some(p) = prior {
                cfg.inference.prior = match p.as_str() {
                    "uniform" => PriorSpec::Uniform,
                    "exp_negative_distance" => PriorSpec::ExpNegativeDistance,
                    other => return Err(Error::Validation(format!("unknown prior {other:?}")).into()),
                };
            }
            cmd_predict_dest(&cfg, out)
        }
        Command::Verify { costs, beta, source, target } => {
            set_opt(&mut cfg.inputs.costs, costs);
            set(&mut cfg.verify.beta, beta);
            set(&mut cfg.verify.source, source);
            set_opt(&mut cfg.verify.target, target);
            cmd_verify(&cfg, out)
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *slot = value;
    }
}

fn apply_cost_args(cfg: &mut RunConfig, a: CostArgs) {
    set_opt(&mut cfg.inputs.data, a.data);
    set_opt(&mut cfg.inputs.graph, a.graph);
    set_opt(&mut cfg.inputs.costs, a.costs);
    set_opt(&mut cfg.inputs.checkpoint, a.checkpoint);
    set_opt(&mut cfg.inputs.record, a.record);
    set(&mut cfg.inference.beta, a.beta);
}

fn write_json(path: &Path, value: &impl Serialize) -> datasp::Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn sha256_file(path: &Path) -> datasp::Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

fn require<'a>(p: &'a Option<PathBuf>, what: &str) -> datasp::Result<&'a PathBuf> {
    p.as_ref().ok_or_else(|| Error::Validation(format!("missing input: {what}")))
}

fn cmd_gen(cfg: &RunConfig, out: &Path) -> CmdResult {
    let data = generate_synthetic_dataset(&cfg.generator)?;
    let provenance = serde_json::json!({ "generator": "synthetic", "config": cfg.generator });
    write_dataset(out, &data.graph_document(), &data.dataset, Some(provenance))?;
    cfg.write(out)?;
    eprintln!(
        "wrote {} nodes, {} edges, {} records to {}",
        data.graph.node_count(),
        data.graph.edge_count(),
        data.dataset.len(),
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    steps: u64,
    best_val_jaccard: Option<f64>,
    epochs: Vec<datasp::training::EpochRecord>,
}

fn cmd_train(cfg: &RunConfig, out: &Path) -> CmdResult {
    let (graph, prior, dataset) = Manifest::load_all(require(&cfg.inputs.data, "data manifest")?)?;
    let resume = match &cfg.inputs.resume {
        Some(p) => {
            let (model, step) = CostModel::load(p)?;
            Resume { model: Some(model), step }
        }
        None => Resume::default(),
    };
    cfg.write(out)?;
    let outcome = train_loop(&dataset, &graph, &prior, &cfg.training, Some(out), resume)?;
    write_json(
        &out.join("summary.json"),
        &TrainSummary { steps: outcome.steps, best_val_jaccard: outcome.best_val_jaccard, epochs: outcome.epochs },
    )?;
    eprintln!("trained {} steps; checkpoints in {}", outcome.steps, out.display());
    Ok(())
}

#[derive(Serialize)]
struct MetricsRow<'a> {
    method: &'a str,
    #[serde(flatten)]
    metrics: RouteMetrics,
}

fn cmd_eval(cfg: &RunConfig, out: &Path) -> CmdResult {
    let (graph, prior, dataset) = Manifest::load_all(require(&cfg.inputs.data, "data manifest")?)?;
    let test = dataset.indices(Split::Test);
    if test.is_empty() {
        return Err(Error::Validation("dataset has no test split".into()).into());
    }
    let mut rows = Vec::new();
    if let Some(path) = &cfg.inputs.checkpoint {
        let (model, _) = CostModel::load(path)?;
        rows.push(MetricsRow { method: "DataSP", metrics: evaluate_model(&model, &dataset, &graph, &prior, &test)? });
    }
    rows.push(MetricsRow { method: "PRIOR", metrics: evaluate_prior(&dataset, &graph, &prior, &test)? });
    std::fs::create_dir_all(out)?;
    let mut csv = String::from("method,jaccard_mean,jaccard_std,match_pct,optimal_cost_pct,n_test\n");
    for r in &rows {
        let m = &r.metrics;
        let opt = m.optimal_cost_rate.map(|x| (100.0 * x).to_string()).unwrap_or_default();
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.method,
            m.jaccard_mean,
            m.jaccard_std,
            100.0 * m.match_rate,
            opt,
            m.n
        ));
    }
    std::fs::write(out.join("metrics.csv"), csv)?;
    write_json(&out.join("metrics.json"), &rows)?;
    cfg.write(out)?;
    for r in &rows {
        eprintln!("{:>7}: jaccard {:.4}, match {:.4}", r.method, r.metrics.jaccard_mean, r.metrics.match_rate);
    }
    Ok(())
}

/// Cost matrix for inference commands and the hash of the checkpoint used.
fn resolve_costs(cfg: &RunConfig) -> datasp::Result<(CostMatrix, Option<String>)> {
    if let Some(p) = &cfg.inputs.costs {
        let t = Tensor::load(p)?;
        if t.dims.len() != 2 || t.dims[0] != t.dims[1] {
            return Err(Error::Validation(format!("cost tensor must be square, got {:?}", t.dims)));
        }
        return Ok((CostMatrix::new(t.dims[0], t.data)?, None));
    }
    let (graph, prior, dataset) = match (&cfg.inputs.data, &cfg.inputs.graph) {
        (Some(d), _) => {
            let (g, p, ds) = Manifest::load_all(d)?;
            (g, p, Some(ds))
        }
        (None, Some(g)) => {
            let (g, p) = GraphDocument::load(g)?.into_graph()?;
            (g, p, None)
        }
        (None, None) => return Err(Error::Validation("missing input: costs, data or graph".into())),
    };
    let (costs, hash) = match &cfg.inputs.checkpoint {
        Some(path) => {
            let (model, _) = CostModel::load(path)?;
            let context = match (&cfg.inference.context, &dataset) {
                (Some(c), _) => c.clone(),
                (None, Some(ds)) => {
                    let r = cfg.inputs.record.unwrap_or(0);
                    ds.records
                        .get(r)
                        .ok_or_else(|| Error::Validation(format!("record {r} out of range")))?
                        .context
                        .features
                        .clone()
                }
                (None, None) => {
                    return Err(Error::Validation("a checkpoint needs a context or a dataset record".into()))
                }
            };
            (model.predict_costs(&context, &prior)?.0, Some(sha256_file(path)?))
        }
        None => (prior.as_slice().to_vec(), None),
    };
    Ok((build_cost_matrix(&costs, &graph)?, hash))
}

#[derive(Serialize)]
struct PathLine<'a> {
    path: &'a [usize],
    count: u64,
    freq: f64,
    beta: f64,
    checkpoint_sha256: &'a Option<String>,
}

#[derive(Serialize)]
struct SampleSummary<'a> {
    beta: f64,
    checkpoint_sha256: &'a Option<String>,
    source: usize,
    target: usize,
    sample_count: u64,
    rejected_count: u64,
    redraws: u64,
    distinct_walks: usize,
}

fn save_tensors(m: &CostMatrix, beta: Beta, out: &Path) -> datasp::Result<()> {
    let n = m.n();
    let f = forward_efficient(m, beta)?;
    Tensor::new(vec![n, n, n], f.shortcuts.as_slice().to_vec())?.save(&out.join("P.tensor"))?;
    Tensor::new(vec![n, n], f.distances.as_slice().to_vec())?.save(&out.join("M.tensor"))
}

fn cmd_sample_paths(cfg: &RunConfig, out: &Path) -> CmdResult {
    let inf = &cfg.inference;
    let beta = Beta::new(inf.beta)?;
    let (m, hash) = resolve_costs(cfg)?;
    let n = m.n();
    let target = inf.target.unwrap_or(n.saturating_sub(1));
    if inf.source >= n || target >= n || inf.source == target {
        return Err(Error::Validation(format!("invalid pair ({}, {target}) for {n} nodes", inf.source)).into());
    }
    let p = forward_efficient(&m, beta)?.shortcuts;
    let mut rng = datasp::seeded_rng(datasp::derive_seed(&[cfg.seed, 5]));
    let est = monte_carlo_path_distribution(&p, inf.source, target, inf.num_samples, &mut rng, inf.reject_cycles)?;
    let mut entries: Vec<_> = est.entries().collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    std::fs::create_dir_all(out)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(out.join("paths.jsonl"))?);
    for (path, count, freq) in entries {
        serde_json::to_writer(&mut w, &PathLine { path, count, freq, beta: inf.beta, checkpoint_sha256: &hash })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    write_json(
        &out.join("summary.json"),
        &SampleSummary {
            beta: inf.beta,
            checkpoint_sha256: &hash,
            source: inf.source,
            target,
            sample_count: est.sample_count,
            rejected_count: est.rejected_count,
            redraws: est.stats.redraws,
            distinct_walks: est.counts.len(),
        },
    )?;
    if inf.save_tensors {
        save_tensors(&m, beta, out)?;
    }
    cfg.write(out)?;
    eprintln!("{} samples, {} distinct walks, {} rejected", est.sample_count, est.counts.len(), est.rejected_count);
    Ok(())
}

#[derive(Serialize)]
struct DestinationReport<'a> {
    beta: f64,
    checkpoint_sha256: &'a Option<String>,
    partial: &'a [usize],
    prior: DestinationPrior,
    probabilities: BTreeMap<usize, f64>,
}

fn cmd_predict_dest(cfg: &RunConfig, out: &Path) -> CmdResult {
    let inf = &cfg.inference;
    let beta = Beta::new(inf.beta)?;
    let (m, hash) = resolve_costs(cfg)?;
    let n = m.n();
    let partial = Trajectory::new(inf.partial.clone())?;
    if partial.nodes().iter().any(|&v| v >= n) {
        return Err(Error::Validation("partial path has out-of-range nodes".into()).into());
    }
    let last = partial.target();
    let prior = match &inf.prior {
        PriorSpec::Uniform => DestinationPrior::uniform(n),
        PriorSpec::ExpNegativeDistance => {
            let d = classical_floyd_warshall(&m).distances;
            DestinationPrior::exp_negative_distance(&(0..n).map(|x| d.get(last, x)).collect::<Vec<_>>())?
        }
        PriorSpec::Custom(w) => DestinationPrior::custom(w.clone())?,
    };
    let p = swapped_shortcuts(&m, beta, last)?;
    let probs = destination_likelihood(&p, &partial, &prior)?;
    std::fs::create_dir_all(out)?;
    write_json(
        &out.join("destinations.json"),
        &DestinationReport {
            beta: inf.beta,
            checkpoint_sha256: &hash,
            partial: partial.nodes(),
            prior,
            probabilities: probs.into_iter().enumerate().collect(),
        },
    )?;
    cfg.write(out)?;
    Ok(())
}

fn cmd_verify(cfg: &RunConfig, out: &Path) -> CmdResult {
    let (m, source) = match &cfg.inputs.costs {
        Some(_) => {
            (resolve_costs(cfg)?.0, cfg.inputs.costs.as_ref().map(|p| p.display().to_string()).unwrap_or_default())
        }
        None => (verify::fixture(), "fixture".to_string()),
    };
    let report = verify::run(&m, source, &cfg.verify, cfg.seed)?;
    std::fs::create_dir_all(out)?;
    write_json(&out.join("verify.json"), &report)?;
    cfg.write(out)?;
    println!("{}", serde_json::to_string(&report)?);
    if report.pass {
        Ok(())
    } else {
        Err(Failure::Verification)
    }
}
