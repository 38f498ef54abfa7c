//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line
//! with its runtime against the budget; the process exits non-zero if any
//! line fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use raincdf::baselines::train_histogram;
use raincdf::ensemble::{fit_voting_weights, DEFAULT_OUTLIER_MM};
use raincdf::harness::{
    infer_histogram, run_benchmark, sweep_k, sweep_size, BenchmarkConfig, PredictorKind,
};
use raincdf::ingest::{
    derive_dataset, generate_synthetic, split_raw, Dataset, FeatureVector, MissingDataPolicy,
    SyntheticConfig, Table,
};
use raincdf::knn::{brute_force_knn, knn_predict, KdTree, Metric};
use raincdf::linalg::{solve_least_squares, Matrix};
use raincdf::logistic::{nll_and_gradient, LogisticModel};
use raincdf::scoring::{score, CdfPrediction};
use raincdf::N_BINS;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }
}

fn run_criterion(id: u32, name: &str, budget: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = f();
    let elapsed = start.elapsed();
    let in_time = budget.is_none_or(|b| elapsed <= b);
    let pass = outcome.pass && in_time;
    let budget_text = budget.map_or("amortized".to_string(), |b| format!("< {:.0?}", b));
    println!(
        "[{}] {id}. {name}: {} ({:.2?}, budget {budget_text})",
        if pass { "PASS" } else { "FAIL" },
        outcome.detail,
        elapsed,
    );
    pass
}

// ---------------------------------------------------------------------------
// Independent oracles

fn naive_score(preds: &[[f64; N_BINS]], labels: &[f64]) -> f64 {
    let mut total = 0.0;
    for (p, &y) in preds.iter().zip(labels) {
        for (j, &pj) in p.iter().enumerate() {
            let h = if j as f64 >= y { 1.0 } else { 0.0 };
            total += (pj - h) * (pj - h);
        }
    }
    total / (N_BINS as f64 * labels.len() as f64)
}

fn naive_empirical(labels: &[f64]) -> [f64; N_BINS] {
    let mut out = [0.0; N_BINS];
    for (j, o) in out.iter_mut().enumerate() {
        let below = labels.iter().filter(|&&y| y <= j as f64).count();
        *o = below as f64 / labels.len() as f64;
    }
    out
}

fn random_cdf(rng: &mut impl Rng) -> [f64; N_BINS] {
    let mut p = [0.0; N_BINS];
    for v in p.iter_mut() {
        *v = rng.random::<f64>();
    }
    p.sort_by(f64::total_cmp);
    p
}

fn random_label(rng: &mut impl Rng) -> f64 {
    match rng.random_range(0..4) {
        0 => 0.0,
        1 => rng.random_range(0..80) as f64,
        _ => (rng.random_range(0.0..75.0_f64) * 100.0).round() / 100.0,
    }
}

fn synthetic(rows: usize, seed: u64) -> Dataset {
    let raw = generate_synthetic(&SyntheticConfig::with_rows(rows), seed).unwrap();
    derive_dataset(&raw, &MissingDataPolicy::default())
}

// ---------------------------------------------------------------------------
// Criteria

fn scoring_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..50);
        let preds: Vec<[f64; N_BINS]> = (0..n).map(|_| random_cdf(&mut rng)).collect();
        let labels: Vec<f64> = (0..n).map(|_| random_label(&mut rng)).collect();
        let cdfs: Vec<CdfPrediction> =
            preds.iter().map(|p| CdfPrediction::new(*p).unwrap()).collect();
        let got = score(&cdfs, &labels).unwrap().score;
        worst = worst.max((got - naive_score(&preds, &labels)).abs());
    }
    let mut perfect = [0.0; N_BINS];
    for p in perfect.iter_mut().skip(3) {
        *p = 1.0;
    }
    let perfect_score = score(&[CdfPrediction::new(perfect).unwrap()], &[2.5]).unwrap().score;
    Outcome::new(
        worst <= 1e-12 && perfect_score == 0.0,
        format!("max |score - oracle| = {worst:.1e}, perfect example = {perfect_score}"),
    )
}

fn histogram_optimality() -> Outcome {
    let labels = synthetic(10_000, 11).labels().unwrap();
    let hist = train_histogram(&labels).unwrap();
    let hist_score = score(&vec![hist.cdf; labels.len()], &labels).unwrap().score;
    let oracle = naive_empirical(&labels);
    let matches_oracle = hist.cdf.probs().iter().zip(&oracle).all(|(a, b)| a == b);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut beaten = 0;
    let mut best_rival = f64::INFINITY;
    for i in 0..1000 {
        let rival = if i % 2 == 0 {
            random_cdf(&mut rng)
        } else {
            // Perturbations near the optimum are the hard cases.
            let mut p = oracle;
            for v in p.iter_mut() {
                *v = (*v + rng.random_range(-0.02..0.02)).clamp(0.0, 1.0);
            }
            p.sort_by(f64::total_cmp);
            p
        };
        let s = score(&vec![CdfPrediction::new(rival).unwrap(); labels.len()], &labels)
            .unwrap()
            .score;
        best_rival = best_rival.min(s);
        if s < hist_score {
            beaten += 1;
        }
    }
    Outcome::new(
        beaten == 0 && matches_oracle,
        format!("histogram {hist_score:.6} vs best of 1000 rivals {best_rival:.6}, {beaten} better"),
    )
}

fn tree_oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dim = 4;
    // Coarse grid so distance ties are common.
    let points: Vec<f64> = (0..1000 * dim).map(|_| rng.random_range(0..12) as f64).collect();
    let labels: Vec<f64> = (0..1000).map(|i| i as f64 % 7.0).collect();
    let queries: Vec<f64> = (0..100 * dim).map(|_| rng.random_range(-1.0..13.0)).collect();
    let mut checked = 0;
    let mut mismatches = 0;
    for leaf in [1, 16] {
        let tree = KdTree::build(&points, &labels, leaf).unwrap();
        for p in [1.0, 2.0, f64::INFINITY] {
            let metric = Metric::new(p).unwrap();
            for k in [1, 10, 150] {
                for q in queries.chunks(dim) {
                    let mut got = tree.query(q, k, metric).unwrap().indices;
                    let mut want = brute_force_knn(&points, dim, q, k, p).unwrap().indices;
                    got.sort_unstable();
                    want.sort_unstable();
                    checked += 1;
                    if got != want {
                        mismatches += 1;
                    }
                }
            }
        }
    }
    Outcome::new(
        mismatches == 0 && checked == 1800,
        format!("{checked} queries, {mismatches} index-set mismatches"),
    )
}

fn k_equals_m() -> Outcome {
    let data = synthetic(1000, 4);
    let labels = data.labels().unwrap();
    let tree = KdTree::from_dataset(&data, 16).unwrap();
    let hist = train_histogram(&labels).unwrap();
    let mut differing = 0;
    for row in &data.rows {
        let cdf = knn_predict(&tree, &row.values, data.len(), 2.0).unwrap();
        let same = cdf
            .probs()
            .iter()
            .zip(hist.cdf.probs())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        if !same {
            differing += 1;
        }
    }
    Outcome::new(
        differing == 0,
        format!("{} rows, {differing} not bitwise equal to the histogram", data.len()),
    )
}

fn least_squares_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_rel = 0.0f64;
    let mut worst_res = 0.0f64;
    for _ in 0..100 {
        let (m, n) = (200, 3);
        let a: Vec<f64> = (0..m * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let a = Matrix::new(m, n, a).unwrap();
        let b = a.mul_vec(&w);
        let got = solve_least_squares(&a, &b).unwrap();
        let err: f64 = got.iter().zip(&w).map(|(g, t)| (g - t).powi(2)).sum::<f64>().sqrt();
        let wn: f64 = w.iter().map(|t| t * t).sum::<f64>().sqrt();
        worst_rel = worst_rel.max(err / wn);

        // Normal equations on a noisy right-hand side.
        let noisy: Vec<f64> = b.iter().map(|v| v + rng.random_range(-1.0..1.0)).collect();
        let x = solve_least_squares(&a, &noisy).unwrap();
        let ax = a.mul_vec(&x);
        let r: Vec<f64> = noisy.iter().zip(&ax).map(|(y, f)| y - f).collect();
        let atr = a.tr_mul_vec(&r);
        let aty = a.tr_mul_vec(&noisy);
        let rel = atr.iter().map(|v| v * v).sum::<f64>().sqrt()
            / aty.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst_res = worst_res.max(rel);
    }

    let raw = generate_synthetic(&SyntheticConfig::with_rows(20_000), 6).unwrap();
    let data = derive_dataset(&raw, &MissingDataPolicy::keep_all());
    let weights = fit_voting_weights(&data, DEFAULT_OUTLIER_MM, false).unwrap();
    let w = &weights.w;
    let dominant = w[0].abs() > w[1].abs() && w[0].abs() > w[2].abs();
    Outcome::new(
        worst_rel <= 1e-8 && worst_res <= 1e-8 && dominant,
        format!(
            "max rel error {worst_rel:.1e}, max normal residual {worst_res:.1e}, w = [{:.3}, {:.3}, {:.3}]",
            w[0], w[1], w[2]
        ),
    )
}

fn logistic_gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (m, d) = (50, 5);
    let schema: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
    let rows: Vec<FeatureVector> = (0..m)
        .map(|_| FeatureVector {
            values: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
            label: Some(rng.random_range(0.0..72.0)),
        })
        .collect();
    let data = Dataset::new(schema, rows).unwrap();

    let zero = LogisticModel::zeros(N_BINS, d);
    let (loss0, _) = nll_and_gradient(&zero, &data, 0.0).unwrap();
    let log70_err = (loss0 - (N_BINS as f64).ln()).abs();

    let mut model = LogisticModel::zeros(N_BINS, d);
    for i in 0..model.theta.rows() {
        for j in 0..model.theta.cols() {
            model.theta[(i, j)] = rng.random_range(-0.5..0.5);
        }
    }
    let (_, grad) = nll_and_gradient(&model, &data, 0.0).unwrap();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..model.theta.rows() {
        for j in 0..model.theta.cols() {
            let mut plus = model.clone();
            plus.theta[(i, j)] += h;
            let mut minus = model.clone();
            minus.theta[(i, j)] -= h;
            let lp = nll_and_gradient(&plus, &data, 0.0).unwrap().0;
            let lm = nll_and_gradient(&minus, &data, 0.0).unwrap().0;
            let fd = (lp - lm) / (2.0 * h);
            let g = grad[(i, j)];
            let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Outcome::new(
        worst <= 1e-4 && log70_err <= 1e-10,
        format!("max rel gradient error {worst:.1e}, |L(0) - ln 70| = {log70_err:.1e}"),
    )
}

fn probe_round_trip() -> Outcome {
    let labels = synthetic(10_000, 8).labels().unwrap();
    let truth = naive_empirical(&labels);
    let rows = infer_histogram(&labels).unwrap();
    let worst = rows
        .iter()
        .map(|r| (r.inferred - truth[r.bin]).abs())
        .fold(0.0, f64::max);
    Outcome::new(
        rows.len() == N_BINS && worst <= 1e-12,
        format!("{} bins, max |inferred - empirical| = {worst:.1e}", rows.len()),
    )
}

fn qualitative_orderings() -> Outcome {
    let n_val = 100_000;
    let n_pool = 100_000;
    let n_train = 33_000;
    let raw = generate_synthetic(&SyntheticConfig::with_rows(n_val + n_pool), 2024).unwrap();
    let (pool, val) = split_raw(&raw, n_pool, n_val, 2024).unwrap();
    let policy = MissingDataPolicy::default();
    let pool_x = derive_dataset(&pool, &policy);
    let val_x = derive_dataset(&val, &policy);
    let train_idx: Vec<usize> = (0..n_train).collect();
    let train_x = pool_x.subset(&train_idx);

    let ks = [1, 5, 15, 50, 150, 500, 5000];
    let ksweep = sweep_k(&train_x, &val_x, &ks, 2.0, 16).unwrap();
    let best = ksweep.best();
    let u_shape = best > 0 && best + 1 < ks.len();

    let sizes = [333, 1000, 3333, 10_000, 31_623, 100_000];
    let ssweep = sweep_size(&pool_x, &val_x, &sizes, 150, 2.0, 2024, 16).unwrap();
    let s = &ssweep.scores;
    let improving = s.windows(2).all(|w| w[1] < w[0]);
    let first = s[0] - s[1];
    let last = s[s.len() - 2] - s[s.len() - 1];
    let diminishing = first > last;

    let train_raw = pool.subset(&train_idx);
    let bench = run_benchmark(
        &Table::Raw(train_raw),
        &Table::Raw(val),
        &[PredictorKind::Knn, PredictorKind::Histogram, PredictorKind::NoRain],
        &BenchmarkConfig::default(),
    )
    .unwrap();
    let knn = bench.score_of(PredictorKind::Knn).unwrap();
    let hist = bench.score_of(PredictorKind::Histogram).unwrap();
    let norain = bench.score_of(PredictorKind::NoRain).unwrap();
    let ordered = knn < hist && hist < norain;

    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(" ");
    println!("    k-sweep {ks:?}: {}", fmt(&ksweep.scores));
    println!("    size-sweep {sizes:?}: {}", fmt(s));
    println!("    benchmark: knn {knn:.6}, histogram {hist:.6}, norain {norain:.6}");
    Outcome::new(
        u_shape && improving && diminishing && ordered,
        format!(
            "(a) interior minimum at k={}: {u_shape}; (b) monotone: {improving}, first gain {first:.2e} > last gain {last:.2e}: {diminishing}; (c) knn < histogram < norain: {ordered}",
            ks[best]
        ),
    )
}

// ---------------------------------------------------------------------------
// CLI determinism

fn cli(args: &[&str], dir: &Path) -> bool {
    let status = Command::new(env!("CARGO_BIN_EXE_raincdf"))
        .args(args)
        .current_dir(dir)
        .status()
        .expect("spawn raincdf");
    status.success()
}

/// Runs every subcommand in `dir` and returns the produced files.
fn cli_session(dir: &Path, threads: &str) -> Result<Vec<PathBuf>, String> {
    std::fs::write(dir.join("gen.toml"), "rows = 3000\np0 = 0.85\n").unwrap();
    std::fs::create_dir_all(dir.join("preds")).unwrap();
    let t = ["--seed", "9", "--threads", threads];
    let steps: Vec<Vec<&str>> = vec![
        vec!["generate", "--config", "gen.toml", "--out", "raw.csv"],
        vec!["derive", "--in", "raw.csv", "--out", "derived.csv"],
        vec!["derive", "--in", "raw.csv", "--out", "derived_all.csv", "--keep-rr23"],
        vec!["train", "--model", "voting", "--train", "raw.csv", "--out", "voting.json"],
        vec![
            "train", "--model", "logistic", "--train", "derived.csv", "--out", "logistic.json",
            "--iters", "15", "--lr", "1", "--l1", "0.001",
        ],
        vec!["train", "--model", "knn", "--train", "derived.csv", "--out", "tree.bin"],
        vec!["predict", "--model", "voting", "--model-file", "voting.json", "--test", "raw.csv", "--out", "p_voting.csv"],
        vec!["predict", "--model", "logistic", "--model-file", "logistic.json", "--test", "derived.csv", "--out", "p_logistic.csv"],
        vec!["predict", "--model", "knn", "--tree", "tree.bin", "--test", "derived.csv", "--out", "p_knn.csv", "--k", "25"],
        vec!["predict", "--model", "histogram", "--train", "derived.csv", "--test", "derived.csv", "--out", "p_hist.csv"],
        vec!["predict", "--model", "sigmoid", "--test", "raw.csv", "--out", "p_sigmoid.csv"],
        vec!["predict", "--model", "norain", "--test", "raw.csv", "--out", "p_norain.csv"],
        vec!["predict", "--model", "simpleavg", "--test", "raw.csv", "--out", "p_simpleavg.csv"],
        vec!["score", "--pred", "p_knn.csv", "--labels", "derived.csv", "--report", "score.json"],
        vec!["sweep-k", "--data", "raw.csv", "--n-train", "2000", "--n-val", "1000", "--k-values", "1,5,50,500", "--out", "ksweep"],
        vec!["sweep-size", "--data", "derived.csv", "--n-train", "2000", "--n-val", "1000", "--sizes", "100,400,2000", "--k", "20", "--out", "ssweep"],
        vec![
            "benchmark", "--data", "raw.csv", "--n-train", "2000", "--n-val", "1000", "--iters", "10",
            "--out", "bench", "--pred-dir", "preds",
        ],
        vec!["infer-histogram", "--labels", "derived.csv", "--out", "probes.csv"],
        vec!["infer-histogram", "--score-ones", "0.0052", "--score-zeroed", "0.0159", "--out", "probe1.txt"],
    ];
    for step in &steps {
        let args: Vec<&str> = t.iter().chain(step).copied().collect();
        if !cli(&args, dir) {
            return Err(format!("`raincdf {}` failed", step.join(" ")));
        }
    }
    let mut files = Vec::new();
    for sub in [dir.to_path_buf(), dir.join("preds")] {
        for entry in std::fs::read_dir(&sub).unwrap() {
            let path = entry.unwrap().path();
            if path.is_file() {
                files.push(path.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    files.sort();
    Ok(files)
}

fn cli_determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (fa, fb) = match (cli_session(a.path(), "1"), cli_session(b.path(), "4")) {
        (Ok(fa), Ok(fb)) => (fa, fb),
        (Err(e), _) | (_, Err(e)) => return Outcome::new(false, e),
    };
    if fa != fb {
        return Outcome::new(false, "runs produced different file sets");
    }
    let differing: Vec<String> = fa
        .iter()
        .filter(|f| std::fs::read(a.path().join(f)).unwrap() != std::fs::read(b.path().join(f)).unwrap())
        .map(|f| f.display().to_string())
        .collect();
    Outcome::new(
        differing.is_empty(),
        format!(
            "{} output files compared across 1 and 4 threads, differing: {differing:?}",
            fa.len()
        ),
    )
}

fn main() {
    let secs = Duration::from_secs;
    let results = [
        run_criterion(1, "scoring correctness", Some(secs(1)), scoring_correctness),
        run_criterion(2, "histogram optimality", Some(secs(10)), histogram_optimality),
        run_criterion(3, "k-d tree matches brute force", Some(secs(30)), tree_oracle_equivalence),
        run_criterion(4, "k = m reproduces the histogram", Some(secs(5)), k_equals_m),
        run_criterion(5, "least-squares recovery", Some(secs(5)), least_squares_recovery),
        run_criterion(6, "logistic gradient check", Some(secs(10)), logistic_gradient_check),
        run_criterion(7, "histogram inference round trip", Some(secs(10)), probe_round_trip),
        run_criterion(8, "qualitative orderings", Some(secs(600)), qualitative_orderings),
        run_criterion(9, "CLI determinism", None, cli_determinism),
    ];
    let failed: Vec<usize> = results
        .iter()
        .enumerate()
        .filter(|(_, ok)| !**ok)
        .map(|(i, _)| i + 1)
        .collect();
    let passed = results.len() - failed.len();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
