//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any fails. Numeric arguments select criteria by number.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use deepmri::data::{self, SampleMatrix};
use deepmri::embed::{self, ConstraintMode, EmbedConfig, EmbedStatus, ReplicaState, Solver};
use deepmri::eval::{self, Classifier, DepthExperimentConfig, FeatureDepth};
use deepmri::rbm::{self, RbmParams, RbmTrainConfig};
use deepmri::{dbn, synth};
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Seeds every stochastic criterion is evaluated on.
const SOURCE_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const DEPTH_SEEDS: [u64; 3] = [0, 1, 2];
const EMBED_SEEDS: [u64; 4] = [0, 1, 2, 3];
const SHUFFLE_SEED: u64 = 99;
const OVERLAP_LEVELS: [f64; 4] = [0.0, 2.0, 4.0, 6.0];

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Duration,
    check: fn() -> Outcome,
}

const fn criterion(
    id: u32,
    name: &'static str,
    limit_secs: u64,
    check: fn() -> Outcome,
) -> Criterion {
    Criterion {
        id,
        name,
        limit: Duration::from_secs(limit_secs),
        check,
    }
}

const CRITERIA: [Criterion; 11] = [
    criterion(1, "RBM gradient oracle", 10, rbm_gradient_oracle),
    criterion(2, "sparsity effect", 60, sparsity_effect),
    criterion(3, "source recovery", 300, source_recovery),
    criterion(4, "overlap degradation", 600, overlap_degradation),
    criterion(5, "depth trend", 900, depth_trend),
    criterion(6, "difference-map fixed point", 10, fixed_point),
    criterion(7, "solution-exists convergence", 60, convergence),
    criterion(
        8,
        "embedding determinism and scaling",
        120,
        determinism_and_scaling,
    ),
    criterion(9, "cluster separation", 60, cluster_separation),
    criterion(10, "eval correctness", 30, eval_correctness),
    criterion(11, "end-to-end CLI", 300, end_to_end_cli),
];

fn main() {
    let args: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let selected: Vec<u32> = args.iter().filter_map(|a| a.parse().ok()).collect();
    // A name filter aimed at other test targets selects nothing here.
    if args
        .iter()
        .any(|a| a.parse::<u32>().is_err() && !"acceptance".contains(a.as_str()))
    {
        return;
    }
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for c in &CRITERIA {
        if !selected.is_empty() && !selected.contains(&c.id) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(c.check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Outcome::new(false, format!("panic: {msg}"))
        });
        let elapsed = start.elapsed();
        let in_time = elapsed <= c.limit;
        let pass = outcome.pass && in_time;
        failed += usize::from(!pass);
        println!(
            "criterion {:>2} {} {} [{:.1}s / {}s{}]: {}",
            c.id,
            if pass { "PASS" } else { "FAIL" },
            c.name,
            elapsed.as_secs_f64(),
            c.limit.as_secs(),
            if in_time { "" } else { ", over time" },
            outcome.detail
        );
    }
    if failed > 0 {
        println!("acceptance: {failed} criterion(s) failed");
        std::process::exit(1);
    }
}

fn random_params(seed: u64) -> RbmParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = RbmParams::zeros(2, 2);
    p.weights = Array2::from_shape_fn((2, 2), |_| rng.random::<f64>() - 0.5);
    p.visible_bias = Array1::from_shape_fn(2, |_| 0.5 * (rng.random::<f64>() - 0.5));
    p.hidden_bias = Array1::from_shape_fn(2, |_| 0.5 * (rng.random::<f64>() - 0.5));
    p
}

fn random_batch(rows: usize, seed: u64) -> SampleMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SampleMatrix::new(Array2::from_shape_fn((rows, 2), |_| {
        2.0 * rng.random::<f64>() - 1.0
    }))
    .unwrap()
}

fn params_mut(p: &mut RbmParams) -> Vec<&mut f64> {
    let mut out: Vec<&mut f64> = p.weights.iter_mut().collect();
    out.extend(p.visible_bias.iter_mut());
    out.extend(p.hidden_bias.iter_mut());
    out
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn rbm_gradient_oracle() -> Outcome {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let p = random_params(seed);
        let x = random_batch(8, 100 + seed);
        let analytic = rbm::exact_loglik_gradient(&x, &p).unwrap().flatten();
        let numeric: Vec<f64> = (0..analytic.len())
            .map(|k| {
                let mut plus = p.clone();
                *params_mut(&mut plus)[k] += h;
                let mut minus = p.clone();
                *params_mut(&mut minus)[k] -= h;
                (rbm::exact_log_likelihood(&x, &plus).unwrap()
                    - rbm::exact_log_likelihood(&x, &minus).unwrap())
                    / (2.0 * h)
            })
            .collect();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
        worst = worst.max(norm(&diff) / norm(&analytic));
    }
    let cfg = RbmTrainConfig::default();
    let mut cosine = 0.0;
    for seed in 0..100 {
        let p = random_params(1000 + seed);
        let batch = random_batch(10, 2000 + seed);
        let exact = rbm::exact_loglik_gradient(&batch, &p).unwrap().flatten();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (cd, _) = rbm::cd_gradient(batch.view(), &p, &cfg, &mut rng).unwrap();
        let cd = cd.flatten();
        let dot: f64 = cd.iter().zip(&exact).map(|(a, b)| a * b).sum();
        cosine += dot / (norm(&cd) * norm(&exact));
    }
    cosine /= 100.0;
    Outcome::new(
        worst < 1e-5 && cosine > 0.0,
        format!("max relative FD error {worst:.2e} (< 1e-5), mean CD-1 cosine {cosine:.3} (> 0)"),
    )
}

/// The RBM configuration used on synthetic sources.
fn source_rbm(seed: u64) -> RbmTrainConfig {
    RbmTrainConfig {
        hidden_units: 16,
        seed,
        ..RbmTrainConfig::default()
    }
}

fn sparsity_effect() -> Outcome {
    let gt = synth::generate(&synth::SynthSpec::default()).unwrap();
    let x = data::zscore_voxels(&gt.data).unwrap();
    let cfg = source_rbm(0);
    let (sparse, _) = rbm::train(&x, &cfg).unwrap();
    let (dense, _) = rbm::train(&x, &RbmTrainConfig { lambda: 0.0, ..cfg }).unwrap();
    let (s, d) = (sparse.mean_abs_weight(), dense.mean_abs_weight());
    Outcome::new(
        s < d,
        format!("mean |W| {s:.4} at lambda 0.1 vs {d:.4} at lambda 0"),
    )
}

/// Mean matched SM correlation of the RBM and of the PCA baseline.
fn recovery(gt: &synth::SynthGroundTruth, seed: u64) -> (f64, f64) {
    let x = data::zscore_voxels(&gt.data).unwrap();
    let (p, _) = rbm::train(&x, &source_rbm(seed)).unwrap();
    let sm = rbm::receptive_fields(&rbm::flip_negative_fields(&p)).unwrap();
    let r = eval::match_components(&sm, &gt.spatial_maps)
        .unwrap()
        .mean_sm_correlation;
    let pca = eval::pca_baseline(&x, gt.spec.sources()).unwrap();
    let b = eval::match_components(
        &SampleMatrix::new(pca.components).unwrap(),
        &gt.spatial_maps,
    )
    .unwrap()
    .mean_sm_correlation;
    (r, b)
}

fn source_recovery() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in SOURCE_SEEDS {
        let gt = synth::generate(&synth::SynthSpec {
            seed,
            ..synth::SynthSpec::default()
        })
        .unwrap();
        let (r, b) = recovery(&gt, seed);
        pass &= r >= 0.6 && r > b;
        parts.push(format!("seed {seed} rbm {r:.3} pca {b:.3}"));
    }
    Outcome::new(pass, parts.join(", "))
}

fn overlap_degradation() -> Outcome {
    let mut curve = vec![0.0; OVERLAP_LEVELS.len()];
    for seed in SOURCE_SEEDS {
        let base = synth::SynthSpec {
            seed,
            ..synth::SynthSpec::default()
        };
        for (i, gt) in synth::overlap_sweep(&base, &OVERLAP_LEVELS)
            .unwrap()
            .iter()
            .enumerate()
        {
            curve[i] += recovery(gt, seed).0 / SOURCE_SEEDS.len() as f64;
        }
    }
    let inversions = curve.windows(2).filter(|w| w[1] > w[0]).count();
    let shown: Vec<String> = OVERLAP_LEVELS
        .iter()
        .zip(&curve)
        .map(|(l, c)| format!("{l}: {c:.3}"))
        .collect();
    Outcome::new(
        inversions <= 1,
        format!(
            "mean SM correlation by overlap {{{}}}, {inversions} inversion(s)",
            shown.join(", ")
        ),
    )
}

fn depth_scores(labels_shuffled: bool, seed: u64) -> [(f64, f64); 2] {
    let spec = synth::SynthSpec {
        seed,
        ..synth::SynthSpec::labeled()
    };
    let (x, mut y) =
        synth::generate_labeled(&spec, synth::DEFAULT_PER_CLASS, synth::DEFAULT_EFFECT).unwrap();
    if labels_shuffled {
        y.shuffle(&mut ChaCha8Rng::seed_from_u64(SHUFFLE_SEED));
    }
    let cfg = DepthExperimentConfig {
        seed,
        ..DepthExperimentConfig::default()
    };
    let table = eval::depth_experiment(&x, &y, &cfg).unwrap();
    let f = |d, c| table.get(d, c).unwrap().mean_f;
    [
        (
            f(FeatureDepth::Raw, Classifier::LogReg),
            f(FeatureDepth::Raw, Classifier::Knn),
        ),
        (
            f(FeatureDepth::Hidden(3), Classifier::LogReg),
            f(FeatureDepth::Hidden(3), Classifier::Knn),
        ),
    ]
}

fn depth_trend() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in DEPTH_SEEDS {
        let [(raw_lr, raw_knn), (deep_lr, deep_knn)] = depth_scores(false, seed);
        pass &= deep_lr > raw_lr && deep_knn > raw_knn;
        parts.push(format!(
            "seed {seed} LR {raw_lr:.3}->{deep_lr:.3} KNN {raw_knn:.3}->{deep_knn:.3}"
        ));
    }
    let [(a, b), (c, d)] = depth_scores(true, DEPTH_SEEDS[0]);
    let control = [a, b, c, d];
    let within = control.iter().all(|f| (f - 0.5).abs() <= 0.15);
    pass &= within;
    parts.push(format!(
        "shuffled control {}",
        control
            .iter()
            .map(|f| format!("{f:.3}"))
            .collect::<Vec<_>>()
            .join("/")
    ));
    Outcome::new(pass, parts.join(", "))
}

fn uniform_points(n: usize, rng: &mut ChaCha8Rng) -> SampleMatrix {
    SampleMatrix::new(Array2::from_shape_fn((n, 2), |_| {
        rng.random::<f64>() * 10.0
    }))
    .unwrap()
}

fn fixed_point() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = uniform_points(60, &mut rng);
    let mut pass = true;
    for k in [3, 8] {
        let g = embed::build_constraints(&x, k, ConstraintMode::ExactDistance).unwrap();
        let j = g.neighbors(0)[0];
        let raw = (x.values()[[0, 0]] - x.values()[[j, 0]])
            .hypot(x.values()[[0, 1]] - x.values()[[j, 1]]);
        let scaled = x.values() * (g.targets(0)[0] / raw);
        let mut state = ReplicaState::from_positions(scaled.view(), &g).unwrap();
        let before = state.replicas.clone();
        let residual = embed::difference_map_step(&mut state, &g, 0.9);
        pass &= residual == 0.0 && state.replicas == before;
    }
    Outcome::new(
        pass,
        "satisfying layouts give bit-identical replicas and residual 0.0 (k = 3, 8)",
    )
}

fn convergence() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in EMBED_SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = uniform_points(200, &mut rng);
        let cfg = EmbedConfig {
            k: 16,
            seed,
            ..EmbedConfig::default()
        };
        let g = embed::build_constraints(&x, cfg.k, cfg.mode).unwrap();
        let start =
            embed::initial_positions(&x, &g, seed).mapv(|v| v + 0.5 * (rng.random::<f64>() - 0.5));
        let r = embed::embed_from(&x, start.view(), &cfg).unwrap();
        let r0 = embed::embed(&x, &cfg).unwrap();
        let ok =
            r.status == EmbedStatus::Converged && r.final_residual() < 1e-6 && r.iterations <= 2000;
        pass &= ok;
        let agreement =
            embed::procrustes_residual(r.positions.view(), r0.positions.view()).unwrap();
        parts.push(format!(
            "seed {seed} {} in {} its (res {:.2e}, default start {} its, Procrustes {:.1e})",
            r.status,
            r.iterations,
            r.final_residual(),
            r0.iterations,
            agreement
        ));
    }
    Outcome::new(pass, parts.join("; "))
}

fn per_iteration(n: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = SampleMatrix::new(Array2::from_shape_fn((n, 10), |_| rng.random::<f64>())).unwrap();
    let g = embed::build_constraints(&x, 10, ConstraintMode::ExactDistance).unwrap();
    let init = embed::initial_positions(&x, &g, 0);
    let mut solver = Solver::new(g, init.view(), 0.9, 100).unwrap();
    for _ in 0..5 {
        solver.step();
    }
    let steps = 40;
    let t = Instant::now();
    for _ in 0..steps {
        solver.step();
    }
    t.elapsed().as_secs_f64() / steps as f64
}

fn determinism_and_scaling() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = SampleMatrix::new(Array2::from_shape_fn((300, 10), |_| rng.random::<f64>())).unwrap();
    let cfg = EmbedConfig {
        max_iters: 200,
        seed: 7,
        ..EmbedConfig::default()
    };
    let a = embed::embed(&x, &cfg).unwrap();
    let b = embed::embed(&x, &cfg).unwrap();
    let bits = |r: &embed::EmbedResult| r.positions.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let identical = bits(&a) == bits(&b) && a.residual_trace == b.residual_trace;
    let small = per_iteration(1000);
    let large = per_iteration(2000);
    let ratio = large / small;
    Outcome::new(
        identical && ratio <= 3.0,
        format!(
            "reruns bit-identical: {identical}; per-iteration {:.1} ms at n=1000, {:.1} ms at n=2000, ratio {ratio:.2} (<= 3)",
            small * 1e3,
            large * 1e3
        ),
    )
}

fn cluster_separation() -> Outcome {
    let (dims, per, shift) = (50, 100, 10.0);
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in EMBED_SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array2::<f64>::zeros((2 * per, dims));
        let labels: Vec<usize> = (0..2 * per).map(|i| usize::from(i >= per)).collect();
        for ((i, j), v) in x.indexed_iter_mut() {
            *v = rng.sample::<f64, _>(StandardNormal)
                + if labels[i] == 1 && j == 0 { shift } else { 0.0 };
        }
        let cfg = EmbedConfig {
            k: 10,
            max_iters: 500,
            seed,
            ..EmbedConfig::default()
        };
        let r = embed::embed(&SampleMatrix::new(x).unwrap(), &cfg).unwrap();
        let s = eval::silhouette(r.positions.view(), &labels).unwrap();
        pass &= s >= 0.5;
        parts.push(format!("seed {seed} silhouette {s:.3} ({})", r.status));
    }
    Outcome::new(pass, parts.join(", "))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn eval_correctness() -> Outcome {
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(10);

    // Matching against exhaustive search.
    for r in 1..=6 {
        for _ in 0..10 {
            let v = 12;
            let gt =
                SampleMatrix::new(Array2::from_shape_fn((r, v), |_| rng.random::<f64>() - 0.5))
                    .unwrap();
            let est =
                SampleMatrix::new(Array2::from_shape_fn((r, v), |_| rng.random::<f64>() - 0.5))
                    .unwrap();
            let corr = |g: usize, e: usize| eval::pearson(gt.row(g), est.row(e)).abs();
            let best = permutations(r)
                .iter()
                .map(|p| p.iter().enumerate().map(|(g, &e)| corr(g, e)).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max);
            let got: f64 = eval::match_components(&est, &gt)
                .unwrap()
                .pairs
                .iter()
                .map(|p| p.correlation)
                .sum();
            if (got - best).abs() > 1e-10 {
                failures.push(format!("matching R={r}: {got} vs {best}"));
            }
        }
    }

    // Macro F: all-zero predictions on a balanced pair give F = (2/3 + 0) / 2.
    let f = eval::macro_f_score(&[0, 0, 0, 0], &[0, 0, 1, 1]).unwrap();
    if (f - 1.0 / 3.0).abs() > 1e-10 {
        failures.push(format!("macro F {f}"));
    }
    // Three classes: per-class F of 1, 2/3 and 2/3.
    let f = eval::macro_f_score(&[0, 1, 1, 2], &[0, 1, 2, 2]).unwrap();
    if (f - 7.0 / 9.0).abs() > 1e-10 {
        failures.push(format!("three-class macro F {f}"));
    }

    // Paired t on d = [1, 2, 3, 6]; with 3 degrees of freedom the two-sided
    // p-value is 1 - (2 / pi) (theta + sin theta cos theta), theta = atan(t / sqrt 3).
    let t = eval::paired_t_test(&[3.0, 5.0, 4.0, 10.0], &[2.0, 3.0, 1.0, 4.0]).unwrap();
    let t_expected = 3.0 / ((14.0f64 / 3.0).sqrt() / 2.0);
    let theta = (t_expected / 3.0f64.sqrt()).atan();
    let p_expected = 1.0 - 2.0 / PI * (theta + theta.sin() * theta.cos());
    if (t.t - t_expected).abs() > 1e-10 || (t.p - p_expected).abs() > 1e-10 || t.dof != 3 {
        failures.push(format!(
            "t-test t {} p {} vs {t_expected} {p_expected}",
            t.t, t.p
        ));
    }

    // K-fold balance: 10 folds over 20 alternating labels give one of each class per fold.
    let labels: Vec<usize> = (0..20).map(|i| i % 2).collect();
    let plan = eval::kfold_split(&labels, 10, 3).unwrap();
    for fold in 0..10 {
        let (_, test) = plan.split(fold);
        if test.len() != 2 || test.iter().filter(|&&i| labels[i] == 1).count() != 1 {
            failures.push(format!("fold {fold} unbalanced"));
        }
    }

    // Block models: b equal disconnected blocks have Q = 1 - 1/b.
    for blocks in [2usize, 3] {
        let n = 3 * blocks;
        let c = Array2::from_shape_fn((n, n), |(i, j)| if i / 3 == j / 3 { 1.0 } else { 0.0 });
        let m = eval::modularity(c.view()).unwrap();
        let expected = 1.0 - 1.0 / blocks as f64;
        let truth: Vec<usize> = (0..n).map(|i| i / 3).collect();
        if (m.q - expected).abs() > 1e-10 || m.labels != truth {
            failures.push(format!(
                "{blocks}-block modularity {} labels {:?}",
                m.q, m.labels
            ));
        }
    }

    let detail = if failures.is_empty() {
        "matching = brute force for R <= 6 (60 cases); macro F, t-test, k-fold and block-model values exact".to_string()
    } else {
        failures.join("; ")
    };
    Outcome::new(failures.is_empty(), detail)
}

fn deepmri(sub: &str, config: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_deepmri"))
        .arg(sub)
        .arg("--config")
        .arg(config)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "{sub} exited {:?}: {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&path).unwrap(),
                );
            }
        }
    }
    out
}

/// Runs `stages` from their config files twice and compares every output byte.
fn pipeline(dir: &Path, stages: &[(&str, &str, &str)]) -> Result<usize, String> {
    fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    for (_, file, text) in stages {
        fs::write(dir.join(file), text).map_err(|e| e.to_string())?;
    }
    let run = || -> Result<(), String> {
        for (sub, file, _) in stages {
            deepmri(sub, &dir.join(file))?;
        }
        Ok(())
    };
    run()?;
    let first = snapshot(dir);
    run()?;
    if snapshot(dir) != first {
        return Err(format!("rerun of {} is not byte-identical", dir.display()));
    }
    Ok(first.len())
}

fn end_to_end_cli() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut parts = Vec::new();
    let mut check = |name: &str, result: Result<String, String>| match result {
        Ok(msg) => {
            parts.push(format!("{name}: {msg}"));
            true
        }
        Err(msg) => {
            parts.push(format!("{name}: {msg}"));
            false
        }
    };

    let a = tmp.path().join("sources");
    let ok_a = check(
        "synth->train-rbm->eval->plot",
        pipeline(
            &a,
            &[
                ("synth", "synth.toml", "seed = 1\nout = \"synth\"\n[synth]\ntimepoints = 100\n"),
                (
                    "train-rbm",
                    "rbm.toml",
                    "seed = 1\nout = \"rbm\"\n[rbm]\ninput = \"synth/x.mat\"\nhidden_units = 12\nepochs = 10\n",
                ),
                (
                    "eval",
                    "eval.toml",
                    "out = \"eval\"\n[eval]\nkind = \"match\"\nestimate_sm = \"rbm/sm.mat\"\nestimate_tc = \"rbm/tc.mat\"\ntruth_sm = \"synth/sm.mat\"\ntruth_tc = \"synth/tc.mat\"\ninput = \"synth/x.mat\"\n",
                ),
                ("plot", "plot.toml", "out = \"plot\"\n[plot]\nkind = \"heatmap\"\ninput = \"eval/fnc.mat\"\n"),
            ],
        )
        .and_then(|files| {
            let sm = data::load_matrix(a.join("rbm/sm.mat")).map_err(|e| e.to_string())?;
            let model = rbm::load_rbm(a.join("rbm/rbm.model")).map_err(|e| e.to_string())?;
            let fnc = data::load_matrix(a.join("eval/fnc.mat")).map_err(|e| e.to_string())?;
            let svg = fs::read_to_string(a.join("plot/heatmap.svg")).map_err(|e| e.to_string())?;
            let report = fs::read_to_string(a.join("eval/match.txt")).map_err(|e| e.to_string())?;
            let cells = svg.matches("class=\"cell\"").count();
            if sm.rows() != 12 || model.n_hidden() != 12 || cells != fnc.rows() * fnc.cols() {
                return Err("artifacts have unexpected shapes".into());
            }
            let first = report.lines().next().unwrap_or_default().to_string();
            Ok(format!("{files} files, {first}"))
        }),
    );

    let b = tmp.path().join("labeled");
    let ok_b = check(
        "synth->dbn-pretrain->dbn-finetune->eval",
        pipeline(
            &b,
            &[
                (
                    "synth",
                    "synth.toml",
                    "seed = 2\nout = \"synth\"\n[synth]\nkind = \"labeled\"\nn_per_class = 30\n",
                ),
                (
                    "dbn-pretrain",
                    "pretrain.toml",
                    "seed = 2\nout = \"pretrain\"\n[dbn]\ninput = \"synth/x.mat\"\nlayers = [50, 50, 100]\nepochs = 3\n",
                ),
                (
                    "dbn-finetune",
                    "finetune.toml",
                    "seed = 2\nout = \"finetune\"\n[finetune]\nmodel = \"pretrain/dbn.model\"\ninput = \"synth/x.mat\"\nlabels = \"synth/labels.txt\"\nepochs = 20\n",
                ),
                (
                    "eval",
                    "eval.toml",
                    "out = \"eval\"\n[eval]\nkind = \"classify\"\nmodel = \"finetune/dbn.model\"\ninput = \"synth/x.mat\"\nlabels = \"synth/labels.txt\"\n",
                ),
            ],
        )
        .and_then(|files| {
            let model = dbn::load_dbn(b.join("finetune/dbn.model")).map_err(|e| e.to_string())?;
            let pred = data::load_labels(b.join("eval/predictions.txt")).map_err(|e| e.to_string())?;
            let report = fs::read_to_string(b.join("eval/classify.txt")).map_err(|e| e.to_string())?;
            if model.widths() != vec![50, 50, 100] || model.classes() != Some(2) || pred.len() != 60 {
                return Err("artifacts have unexpected shapes".into());
            }
            Ok(format!("{files} files, {}", report.lines().next().unwrap_or_default()))
        }),
    );

    let c = tmp.path().join("embedding");
    let ok_c = check(
        "embed->plot",
        (|| {
            fs::create_dir_all(&c).map_err(|e| e.to_string())?;
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let n = 80;
            let x = Array2::from_shape_fn((n, 5), |(i, j)| {
                rng.random::<f64>() + if i >= n / 2 && j == 0 { 4.0 } else { 0.0 }
            });
            data::save_matrix(&SampleMatrix::new(x).unwrap(), c.join("x.mat"))
                .map_err(|e| e.to_string())?;
            let severity: String = (0..n)
                .map(|i| ["low\n", "medium\n", "high\n"][i % 3])
                .collect();
            fs::write(c.join("severity.txt"), severity).map_err(|e| e.to_string())?;
            let files = pipeline(
                &c,
                &[
                    (
                        "embed",
                        "embed.toml",
                        "seed = 3\nout = \"embed\"\n[embed]\ninput = \"x.mat\"\nk = 8\nmax_iters = 300\n",
                    ),
                    (
                        "plot",
                        "plot.toml",
                        "out = \"plot\"\n[plot]\nkind = \"scatter\"\ninput = \"embed/positions.mat\"\nlabels = \"severity.txt\"\n",
                    ),
                ],
            )?;
            let positions =
                data::load_matrix(c.join("embed/positions.mat")).map_err(|e| e.to_string())?;
            let svg = fs::read_to_string(c.join("plot/scatter.svg")).map_err(|e| e.to_string())?;
            let points = svg.matches("class=\"point\"").count();
            if positions.rows() != n || points != n {
                return Err(format!(
                    "{points} points drawn for {} positions",
                    positions.rows()
                ));
            }
            Ok(format!("{files} files, {points} points drawn"))
        })(),
    );

    Outcome::new(ok_a && ok_b && ok_c, parts.join("; "))
}
