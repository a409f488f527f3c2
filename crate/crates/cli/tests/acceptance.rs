//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use datasp::engine::{forward, forward_efficient};
use datasp::exclusion::compress;
use datasp::graph::classical_floyd_warshall;
use datasp::model::{Architecture, CostModel};
use datasp::oracle::{
    finite_difference_gradcheck, random_connected_cost_matrix, theorem1_deviation, theorem2_deviation, verify_theorem3,
};
use datasp::smooth::{softmin_value, softmin_vjp, softmin_weights};
use datasp::synthetic::{generate_synthetic_dataset, SyntheticConfig};
use datasp::training::{
    anchor_gradient, evaluate_model, evaluate_prior, train_loop, Resume, TrainConfig, TrainContext,
};
use datasp::trajectory::Split;
use datasp::{derive_seed, seeded_rng, Beta};
use serde_json::{json, Value};

const BIN: &str = env!("CARGO_BIN_EXE_datasp");

struct Outcome {
    pass: bool,
    detail: String,
}

fn cli(args: &[&str], dir: &Path) -> std::process::Output {
    let out = Command::new(BIN).args(args).current_dir(dir).env_remove("DATASP_SEED").output().expect("run datasp");
    if !out.status.success() && out.status.code() != Some(4) {
        panic!("datasp {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn write_config(dir: &Path, name: &str, cfg: Value) -> String {
    std::fs::write(dir.join(name), serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    name.to_string()
}

fn beta(b: f64) -> Beta {
    Beta::new(b).unwrap()
}

fn criterion_1(dir: &Path) -> Outcome {
    let start = Instant::now();
    cli(&["--out", "c1", "verify"], dir);
    let elapsed = start.elapsed();
    let r = read_json(&dir.join("c1/verify.json"));
    let walks = r["support"]["walks"].as_array().unwrap();
    let mut multiset: Vec<(f64, u64)> = r["support"]["cost_multiset"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| (c["cost"].as_f64().unwrap(), c["count"].as_u64().unwrap()))
        .collect();
    multiset.sort_by(|a, b| a.0.total_cmp(&b.0));
    let expected = vec![(3.0, 4), (5.0, 4), (7.0, 7), (9.0, 5)];
    let support_ok = walks.len() == 20 && multiset == expected;
    let mut freq_ok = r["listing"]["num_samples"] == 10_000;
    let mut worst3: f64 = 0.0;
    let mut worst5: f64 = 0.0;
    for w in walks {
        let cost = w["cost"].as_f64().unwrap();
        let f = w["frequency"].as_f64().unwrap();
        if cost == 3.0 {
            worst3 = worst3.max((f - 0.2136).abs());
        } else if cost == 5.0 {
            worst5 = worst5.max((f - 0.0289).abs());
        }
    }
    freq_ok &= worst3 <= 0.02 && worst5 <= 0.01;
    let time_ok = elapsed < Duration::from_secs(5);
    Outcome {
        pass: support_ok && freq_ok && time_ok,
        detail: format!(
            "support {} walks, cost multiset {multiset:?} (expected 20, {expected:?}); \
             cost-3 max |f-0.2136| {worst3:.4}, cost-5 max |f-0.0289| {worst5:.4}; {:.2?}",
            walks.len(),
            elapsed
        ),
    }
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut rng = seeded_rng(derive_seed(&[2, 0]));
    for g in 0..20 {
        let n = 4 + g % 5;
        let b = beta([0.5, 1.0, 2.0][g % 3]);
        let m = random_connected_cost_matrix(n, 0.4, 0.2, 2.0, &mut rng);
        let f = forward_efficient(&m, b).unwrap();
        worst = worst.max(theorem1_deviation(&m, b, &f).unwrap());
        worst = worst.max(theorem2_deviation(&m, b, &f.shortcuts).unwrap());
    }
    let elapsed = start.elapsed();
    Outcome {
        pass: worst <= 1e-9 && elapsed < Duration::from_secs(60),
        detail: format!("max deviation {worst:.3e} over 20 graphs; {elapsed:.2?}"),
    }
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut rng = seeded_rng(derive_seed(&[3, 0]));
    for g in 0..10 {
        let n = 3 + g % 3;
        let b = beta([0.5, 1.0][g % 2]);
        let m = random_connected_cost_matrix(n, 0.5, 0.5, 2.0, &mut rng);
        let f = forward_efficient(&m, b).unwrap();
        let tv = verify_theorem3(&f.shortcuts, &m, b, 0, n - 1, 100_000, &mut rng).unwrap();
        worst = worst.max(tv);
    }
    let elapsed = start.elapsed();
    Outcome {
        pass: worst <= 0.01 && elapsed < Duration::from_secs(60),
        detail: format!("max TV {worst:.4} over 10 graphs with |V| in 3..=5, 1e5 draws each; {elapsed:.2?}"),
    }
}

fn pipeline_gradient_error(num_nodes: usize, keep: usize, seed: u64) -> f64 {
    let d = generate_synthetic_dataset(&SyntheticConfig {
        num_nodes,
        neighbor_count: 3,
        sparsity: 1.0,
        feature_dim: 3,
        num_samples: 40,
        pair_pool_size: 6,
        seed,
        ..Default::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        keep_count: Some(keep),
        alpha: 0.5,
        beta: 2.0,
        hidden: vec![5],
        similarity_fraction: 0.1,
        ..Default::default()
    };
    let ctx = TrainContext::new(&d.dataset, &d.graph, &d.prior, &cfg).unwrap();
    let arch = Architecture { feature_dim: 3, hidden: vec![5], edge_count: d.graph.edge_count() };
    let mut model = CostModel::init(arch, cfg.cost_floor, seed).unwrap();
    // Move off the zero-initialized output layer so every parameter has a gradient.
    model.params.iter_mut().enumerate().for_each(|(i, p)| *p += 0.1 * ((i * 13) as f64).sin());
    let mut worst: f64 = 0.0;
    for &anchor in ctx.train.iter().take(3) {
        let Some(r) = anchor_gradient(&model, &ctx, anchor, 17).unwrap() else { continue };
        assert_eq!(r.kept_nodes, keep);
        let loss = |params: &[f64]| {
            let m = CostModel { params: params.to_vec(), ..model.clone() };
            let r = anchor_gradient(&m, &ctx, anchor, 17).unwrap().unwrap();
            r.shortcut_loss + cfg.alpha * r.prior_loss
        };
        worst = worst.max(finite_difference_gradcheck(loss, &model.params, &r.grad, 1e-5).unwrap());
    }
    worst
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let full = pipeline_gradient_error(6, 6, 1);
    let excluded = pipeline_gradient_error(8, 6, 2);
    let mut smooth: f64 = 0.0;
    let mut rng = seeded_rng(derive_seed(&[4, 0]));
    for t in 0..20 {
        let m = random_connected_cost_matrix(2 + t % 6, 1.0, 0.1, 3.0, &mut rng);
        let v: Vec<f64> = m.as_slice().iter().copied().filter(|x| *x > 0.0).collect();
        let b = beta([0.5, 1.0, 3.0][t % 3]);
        let g: Vec<f64> = (0..v.len()).map(|k| ((k * 7 + t) as f64).cos()).collect();
        let f = |x: &[f64]| {
            let w = softmin_weights(x, b).unwrap();
            0.7 * softmin_value(x, b).unwrap() + w.iter().zip(&g).map(|(a, c)| a * c).sum::<f64>()
        };
        let analytic = softmin_vjp(&v, b, 0.7, &g).unwrap();
        smooth = smooth.max(finite_difference_gradcheck(f, &v, &analytic, 1e-5).unwrap());
    }
    let elapsed = start.elapsed();
    Outcome {
        pass: full <= 1e-3 && excluded <= 1e-3 && smooth <= 1e-6 && elapsed < Duration::from_secs(120),
        detail: format!(
            "pipeline |V|=6 {full:.2e}, |V|=8 with 2 excluded {excluded:.2e}, smooth ops {smooth:.2e}; {elapsed:.2?}"
        ),
    }
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut over = 0;
    let mut rng = seeded_rng(derive_seed(&[5, 0]));
    for g in 0..20u64 {
        let m = random_connected_cost_matrix(12, 0.5, 0.05, 1.0, &mut rng);
        let removed: Vec<usize> = (0..4).map(|r| ((g as usize) * 5 + r * 3) % 12).collect();
        let c = compress(&m, &removed, beta(100.0)).unwrap();
        let full = classical_floyd_warshall(&m).distances;
        let small = classical_floyd_warshall(&c.matrix).distances;
        let mut w: f64 = 0.0;
        for (a, &i) in c.kept.iter().enumerate() {
            for (b, &j) in c.kept.iter().enumerate() {
                if a != b {
                    w = w.max((full.get(i, j) - small.get(a, b)).abs());
                }
            }
        }
        if w > 1e-4 {
            over += 1;
        }
        worst = worst.max(w);
    }

    let data = generate_synthetic_dataset(&SyntheticConfig::default()).unwrap();
    let keep = (0.2 * data.graph.node_count() as f64).round() as usize;
    let cfg = TrainConfig { beta: 10.0, keep_count: Some(keep), epochs: 15, ..Default::default() };
    let out = train_loop(&data.dataset, &data.graph, &data.prior, &cfg, None, Resume::default()).unwrap();
    let test = data.dataset.indices(Split::Test);
    let model = evaluate_model(&out.model, &data.dataset, &data.graph, &data.prior, &test).unwrap().jaccard_mean;
    let prior = evaluate_prior(&data.dataset, &data.graph, &data.prior, &test).unwrap().jaccard_mean;
    Outcome {
        pass: worst <= 1e-4 && model > prior,
        detail: format!(
            "max distance error {worst:.3e} ({over}/20 graphs above 1e-4); \
             keep {keep}/{} nodes: Jaccard {:.1} vs PRIOR {:.1}; {:.2?}",
            data.graph.node_count(),
            100.0 * model,
            100.0 * prior,
            start.elapsed()
        ),
    }
}

fn criterion_6(dir: &Path) -> Outcome {
    let start = Instant::now();
    let cfg = write_config(
        dir,
        "c6.json",
        json!({ "generator": { "num_samples": 2500 }, "training": { "beta": 10.0, "epochs": 5 } }),
    );
    cli(&["--config", &cfg, "--out", "c6/data", "gen"], dir);
    let manifest = read_json(&dir.join("c6/data/manifest.json"));
    let train = manifest["splits"]["train"].as_array().unwrap().len();
    let edges = read_json(&dir.join("c6/data/graph.json"))["edges"].as_array().unwrap().len();
    cli(&["--config", &cfg, "--out", "c6/run", "train", "--data", "c6/data/manifest.json"], dir);
    cli(&["--out", "c6/eval", "eval", "--data", "c6/data/manifest.json", "--checkpoint", "c6/run/best.ckpt"], dir);
    let csv = std::fs::read_to_string(dir.join("c6/eval/metrics.csv")).unwrap();
    let jaccard = |method: &str| -> f64 {
        csv.lines().find(|l| l.starts_with(&format!("{method},"))).unwrap().split(',').nth(1).unwrap().parse().unwrap()
    };
    let (model, prior) = (jaccard("DataSP"), jaccard("PRIOR"));
    let elapsed = start.elapsed();
    Outcome {
        pass: model - prior >= 0.10 && elapsed < Duration::from_secs(1800),
        detail: format!(
            "{edges} edges, {train} training samples; Jaccard {:.1} vs PRIOR {:.1}; {elapsed:.2?}",
            100.0 * model,
            100.0 * prior
        ),
    }
}

fn median(mut v: Vec<Duration>) -> Duration {
    v.sort();
    v[v.len() / 2]
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut rng = seeded_rng(derive_seed(&[7, 0]));
    for t in 0..50 {
        let n = 2 + t % 11;
        let m = random_connected_cost_matrix(n, 0.5, 0.1, 3.0, &mut rng);
        let b = beta([0.5, 1.0, 5.0, 30.0][t % 4]);
        let (a, e) = (forward(&m, b).unwrap(), forward_efficient(&m, b).unwrap());
        let pairs = a.shortcuts.as_slice().iter().zip(e.shortcuts.as_slice());
        let dists = a.distances.as_slice().iter().zip(e.distances.as_slice());
        for (x, y) in pairs.chain(dists) {
            worst = worst.max(if x == y { 0.0 } else { (x - y).abs() });
        }
    }
    let m = random_connected_cost_matrix(50, 0.5, 0.1, 3.0, &mut rng);
    let time = |f: &dyn Fn()| {
        median(
            (0..5)
                .map(|_| {
                    let t = Instant::now();
                    f();
                    t.elapsed()
                })
                .collect(),
        )
    };
    let naive = time(&|| drop(forward(&m, beta(1.0)).unwrap()));
    let efficient = time(&|| drop(forward_efficient(&m, beta(1.0)).unwrap()));
    let speedup = naive.as_secs_f64() / efficient.as_secs_f64();
    let elapsed = start.elapsed();
    Outcome {
        pass: worst <= 1e-12 && speedup >= 5.0 && elapsed < Duration::from_secs(120),
        detail: format!("max difference {worst:.1e} over 50 instances; |V|=50 speedup {speedup:.2}x ({naive:.2?} vs {efficient:.2?}); {elapsed:.2?}"),
    }
}

fn files_under(root: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn criterion_8(dir: &Path) -> Outcome {
    let start = Instant::now();
    let config = json!({
        "seed": 11,
        "generator": { "num_nodes": 12, "neighbor_count": 4, "sparsity": 1.0, "num_samples": 120, "pair_pool_size": 8 },
        "training": { "beta": 5.0, "epochs": 2, "hidden": [16], "keep_count": 8, "similarity_fraction": 0.05 },
        "inference": { "beta": 5.0, "num_samples": 5000, "partial": [0, 1] }
    });
    let steps: [&[&str]; 6] = [
        &["--out", "data", "gen"],
        &["--out", "train", "train", "--data", "data/manifest.json"],
        &["--out", "eval", "eval", "--data", "data/manifest.json", "--checkpoint", "train/best.ckpt"],
        &[
            "--out",
            "paths",
            "sample-paths",
            "--data",
            "data/manifest.json",
            "--checkpoint",
            "train/best.ckpt",
            "--save-tensors",
        ],
        &["--out", "dest", "predict-dest", "--data", "data/manifest.json", "--checkpoint", "train/best.ckpt"],
        &["--out", "verify", "verify"],
    ];
    // Identical commands in two working directories, with different worker counts.
    for (run, workers) in [("a", "1"), ("b", "3")] {
        let cwd = dir.join("c8").join(run);
        std::fs::create_dir_all(&cwd).unwrap();
        let cfg = write_config(&cwd, "config.json", config.clone());
        for s in steps {
            let args: Vec<&str> =
                ["--config", cfg.as_str(), "--workers", workers].into_iter().chain(s.iter().copied()).collect();
            cli(&args, &cwd);
        }
    }
    let (a, b) = (dir.join("c8/a"), dir.join("c8/b"));
    let files = files_under(&a);
    let same_list = files == files_under(&b);
    let differing: Vec<String> = files
        .iter()
        .filter(|f| std::fs::read(a.join(f)).ok() != std::fs::read(b.join(f)).ok())
        .map(|f| f.display().to_string())
        .collect();
    Outcome {
        pass: same_list && differing.is_empty() && files.len() > 6,
        detail: format!(
            "{} files from gen, train, eval, sample-paths, predict-dest, verify (1 vs 3 workers); differing: {differing:?}; {:.2?}",
            files.len(),
            start.elapsed()
        ),
    }
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;
    let criteria: Vec<(&str, Check)> = vec![
        ("1 fixture walk support and Monte Carlo frequencies", Box::new(|| criterion_1(dir))),
        ("2 distances and shortcut probabilities match enumeration", Box::new(criterion_2)),
        ("3 sampler matches the max-entropy distribution", Box::new(criterion_3)),
        ("4 gradients match finite differences", Box::new(criterion_4)),
        ("5 node exclusion preserves distances; 20% sampling beats PRIOR", Box::new(criterion_5)),
        ("6 synthetic end-to-end learning beats PRIOR by 10 points", Box::new(|| criterion_6(dir))),
        ("7 efficient forward equals the literal one and is 5x faster", Box::new(criterion_7)),
        ("8 seeded commands are byte-identical on re-run", Box::new(|| criterion_8(dir))),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!("[{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("{} of 8 criteria passed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
