//! Acceptance suite. Runs every criterion in sequence (so wall-clock limits
//! are measured without competing tests) and prints one PASS/FAIL line each
//! straight to stderr, bypassing the test harness's output capture.

#[path = "../../core/tests/support/gradcheck.rs"]
mod gradcheck;

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use hyfuse_core::data::{make_folds, pair_datasets, synth_generate, SynthSpec};
use hyfuse_core::hypergeom::{exp_map_zero, log_map_zero, mobius_add_raw, norm, PoincareConfig};
use hyfuse_core::models::ModelSpec;
use hyfuse_core::rng;
use hyfuse_core::train::{cross_validate, Dataset, Evaluation, TrainConfig, ValidationMode};
use rand::Rng;

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn report(o: &Outcome) {
    let line = format!("{} {}: {}\n", if o.pass { "PASS" } else { "FAIL" }, o.name, o.detail);
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn in_ball(r: &mut impl Rng, dim: usize, max: f64) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| r.random_range(-1.0..1.0)).collect();
    let n = norm(&v).max(1e-12);
    let target = r.random_range(0.0..max);
    v.iter().map(|x| x * target / n).collect()
}

fn gyro_algebra() -> Outcome {
    const PAIRS: usize = 1000;
    let start = Instant::now();
    let cfg = PoincareConfig::default();
    let mut r = rng::stream(11, "acceptance-gyro", &[]);
    let (mut identity, mut inverse, mut oracle) = (0.0f64, 0.0f64, 0.0f64);
    let mut closure_ok = true;
    let mut oracle_checked = 0;
    for _ in 0..PAIRS {
        let dim = r.random_range(1..8);
        let x = in_ball(&mut r, dim, 0.99);
        let y = in_ball(&mut r, dim, 0.99);
        let zero = vec![0.0; dim];
        let out = mobius_add_raw(&zero, &y, &cfg).unwrap();
        identity = identity.max(out.coords().iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        inverse = inverse.max(mobius_add_raw(&x, &neg, &cfg).unwrap().norm());
        closure_ok &= mobius_add_raw(&x, &y, &cfg).unwrap().norm() < 1.0;

        // 1-D oracle on a random line through the origin
        let u: Vec<f64> = {
            let v = in_ball(&mut r, dim, 1.0);
            let n = norm(&v);
            if n < 1e-6 {
                continue;
            }
            v.iter().map(|c| c / n).collect()
        };
        let (a, b): (f64, f64) = (r.random_range(-0.99..0.99), r.random_range(-0.99..0.99));
        let want = (a + b) / (1.0 + a * b);
        if want.abs() > cfg.max_norm() {
            continue;
        }
        let xa: Vec<f64> = u.iter().map(|c| c * a).collect();
        let yb: Vec<f64> = u.iter().map(|c| c * b).collect();
        let got = mobius_add_raw(&xa, &yb, &cfg).unwrap();
        oracle = oracle.max(got.coords().iter().zip(&u).map(|(g, c)| (g - c * want).abs()).fold(0.0, f64::max));
        oracle_checked += 1;
    }
    let elapsed = start.elapsed();
    let pass = identity < 1e-9
        && inverse < 1e-9
        && closure_ok
        && oracle < 1e-9
        && oracle_checked >= PAIRS * 9 / 10
        && elapsed < Duration::from_secs(1);
    Outcome {
        name: "gyro-algebra suite",
        pass,
        detail: format!(
            "{PAIRS} pairs, identity {identity:.1e}, inverse {inverse:.1e}, closure {closure_ok}, \
             1-D oracle {oracle:.1e} over {oracle_checked} lines (tol 1e-9), {:.3}s (limit 1s)",
            elapsed.as_secs_f64()
        ),
    }
}

fn round_trip() -> Outcome {
    let start = Instant::now();
    let mut r = rng::stream(12, "acceptance-round-trip", &[]);
    let mut worst = 0.0f64;
    for k in [0.25, 0.5, 1.0, 2.0] {
        let cfg = PoincareConfig::with_curvature(k).unwrap();
        let mut checked = 0;
        while checked < 100 {
            let dim = r.random_range(1..8);
            let x = in_ball(&mut r, dim, 2.0);
            if norm(&x) < 1e-6 {
                continue;
            }
            let p = exp_map_zero(&x, &cfg).unwrap();
            // keep clear of the clamp, where the identity cannot hold
            if p.norm() > 0.999 {
                continue;
            }
            let back = log_map_zero(&p, &cfg).unwrap();
            let want: Vec<f64> = x.iter().map(|v| 2.0 * k * v).collect();
            let diff: Vec<f64> = back.iter().zip(&want).map(|(a, b)| a - b).collect();
            worst = worst.max(norm(&diff) / norm(&want));
            checked += 1;
        }
    }
    let elapsed = start.elapsed();
    Outcome {
        name: "round-trip scaling",
        pass: worst < 1e-6 && elapsed < Duration::from_secs(1),
        detail: format!(
            "log(exp(x)) = 2κx for κ in {{0.25, 0.5, 1, 2}} × 100 inputs, worst relative {worst:.1e} (tol 1e-6), {:.3}s (limit 1s)",
            elapsed.as_secs_f64()
        ),
    }
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let mut worst_op = ("", 0.0f64);
    let mut count = 0;
    for (name, mut make) in gradcheck::op_cases() {
        let e = gradcheck::worst_error(name, &mut make);
        if e >= worst_op.1 {
            worst_op = (name, e);
        }
        count += 1;
    }
    let hyfuse = gradcheck::hyfuse_error(5, "a-first").max(gradcheck::hyfuse_error(6, "b-first"));
    let elapsed = start.elapsed();
    Outcome {
        name: "gradient fidelity",
        pass: worst_op.1 < 1e-4 && hyfuse < 1e-3 && elapsed < Duration::from_secs(30),
        detail: format!(
            "{count} ops × {} instances, worst {:.1e} ({}) (tol 1e-4); HYFuse end-to-end {hyfuse:.1e} (tol 1e-3); {:.2}s (limit 30s)",
            gradcheck::TRIALS,
            worst_op.1,
            worst_op.0,
            elapsed.as_secs_f64()
        ),
    }
}

fn metric_oracle() -> Outcome {
    let e = Evaluation::from_predictions(&[0, 0, 1, 1], &[0, 1, 1, 1], 2);
    let hand = (e.macro_f1 - 11.0 / 15.0).abs();
    // recompute from the confusion matrix for a batch of random predictions
    let mut r = rng::stream(13, "acceptance-metrics", &[]);
    let mut exact = true;
    for _ in 0..200 {
        let n = r.random_range(1..50);
        let k = r.random_range(2..6);
        let truth: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let pred: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let e = Evaluation::from_predictions(&truth, &pred, k);
        let c = &e.confusion;
        let total: u64 = c.iter().flatten().sum();
        let trace: u64 = (0..k).map(|i| c[i][i]).sum();
        let f1: Vec<f64> = (0..k)
            .map(|i| {
                let tp = c[i][i] as f64;
                let fp: f64 = (0..k).filter(|&j| j != i).map(|j| c[j][i] as f64).sum();
                let fn_: f64 = (0..k).filter(|&j| j != i).map(|j| c[i][j] as f64).sum();
                if tp == 0.0 {
                    0.0
                } else {
                    2.0 * tp / (2.0 * tp + fp + fn_)
                }
            })
            .collect();
        exact &= e.accuracy == trace as f64 / total as f64;
        exact &= f1 == e.per_class_f1;
        exact &= e.macro_f1 == f1.iter().sum::<f64>() / k as f64;
    }
    Outcome {
        name: "metric oracle",
        pass: hand < 1e-9 && exact,
        detail: format!(
            "hand example macro-F1 {:.10} vs 11/15 (|Δ| {hand:.1e}, tol 1e-9); 200 confusion recounts exact: {exact}",
            e.macro_f1
        ),
    }
}

fn complementarity() -> Outcome {
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let (a, b) = synth_generate(&SynthSpec::default()).unwrap();
    let plan = make_folds(&a, 5, 0).unwrap();
    let cfg = TrainConfig {
        learning_rate: 3e-4,
        validation: ValidationMode::Holdout,
        seed: 0,
        ..Default::default()
    };
    let pair = pair_datasets(&a, &b).unwrap();
    let joint = Dataset::paired(&pair).unwrap();
    let only_a = Dataset::single(&a).unwrap();
    let only_b = Dataset::single(&b).unwrap();
    let run = |ds: &Dataset, spec: ModelSpec| pool.install(|| cross_validate(ds, &spec, &cfg, &plan).unwrap().mean_accuracy);
    let cnn_a = run(&only_a, ModelSpec::cnn(32, 4));
    let cnn_b = run(&only_b, ModelSpec::cnn(32, 4));
    let concat = run(&joint, ModelSpec::concat(32, 32, 4));
    let hyfuse = run(&joint, ModelSpec::hyfuse(32, 32, 4));
    let elapsed = start.elapsed();
    let checks = [
        (cnn_a <= 0.60, "CNN-A ≤ 0.60"),
        (cnn_b <= 0.60, "CNN-B ≤ 0.60"),
        (hyfuse >= 0.90, "HYFuse ≥ 0.90"),
        (hyfuse >= concat, "HYFuse ≥ Concat"),
        (elapsed < Duration::from_secs(300), "< 5 min"),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.0).map(|c| c.1).collect();
    Outcome {
        name: "complementarity",
        pass: failed.is_empty(),
        detail: format!(
            "split synth 4×200, 32+32 dims, 5-fold: CNN-A {cnn_a:.4}, CNN-B {cnn_b:.4}, Concat {concat:.4}, HYFuse {hyfuse:.4}; \
             {:.1}s single-threaded{}",
            elapsed.as_secs_f64(),
            if failed.is_empty() {
                String::new()
            } else {
                format!("; failed: {}", failed.join(", "))
            }
        ),
    }
}

fn hyfuse_bin(args: &[&str]) {
    let code = hyfuse_cli::run(std::iter::once("hyfuse").chain(args.iter().copied()));
    assert_eq!(code, 0, "hyfuse {args:?} exited with {code}");
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn determinism(dir: &Path) -> Outcome {
    let data = dir.join("det-data");
    hyfuse_bin(&["synth", "--out", p(&data), "--samples-per-class", "30", "--dim-a", "12", "--dim-b", "10"]);
    let (ra, rb) = (data.join("synth_a.hyfe"), data.join("synth_b.hyfe"));
    let run = |name: &str, jobs: &str| {
        let out = dir.join(name);
        hyfuse_bin(&[
            "cross-validate", "--model", "hyfuse", "--rep-a", p(&ra), "--rep-b", p(&rb), "--folds", "5", "--seed", "7",
            "--epochs", "4", "--lr", "1e-3", "--hidden-units", "16", "--conv-filters", "8,8", "--jobs", jobs, "--out",
            p(&out),
        ]);
        std::fs::read(out.join("report.json")).unwrap()
    };
    let first = run("det-1", "1");
    let second = run("det-2", "1");
    let threaded = run("det-3", "2");
    Outcome {
        name: "determinism",
        pass: first == second && first == threaded,
        detail: format!(
            "cross-validate --seed 7 twice: report.json byte-identical {}; with --jobs 2: {} ({} bytes)",
            first == second,
            first == threaded,
            first.len()
        ),
    }
}

fn param_count() -> Outcome {
    let n = ModelSpec::hyfuse(768, 256, 4).param_count();
    Outcome {
        name: "parameter count",
        pass: (8_000_000..=13_000_000).contains(&n),
        detail: format!("HYFuse at (768, 256): {n} trainable parameters (band [8e6, 1.3e7])"),
    }
}

fn pair_matrix(dir: &Path) -> Outcome {
    let files = dir.join("pm-files");
    for (seed, ra, cb) in [("1", "rlr1", "cbr1"), ("2", "rlr2", "cbr2")] {
        let out = dir.join(format!("pm-synth-{seed}"));
        hyfuse_bin(&[
            "synth", "--out", p(&out), "--seed", seed, "--samples-per-class", "10", "--dim-a", "8", "--dim-b", "6",
            "--name-a", ra, "--name-b", cb,
        ]);
        std::fs::create_dir_all(&files).unwrap();
        for name in [ra, cb] {
            for ext in ["hyfe", "json"] {
                let f = format!("{name}.{ext}");
                std::fs::copy(out.join(&f), files.join(&f)).unwrap();
            }
        }
    }
    let out = dir.join("pm-out");
    hyfuse_bin(&[
        "pair-matrix", "--dir", p(&files), "--combination", "rlr+cbr", "--epochs", "2", "--hidden-units", "8",
        "--conv-filters", "4,4", "--fusion-width", "4", "--out", p(&out),
    ]);
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("matrix.json")).unwrap()).unwrap();
    let rows = m["rows"].as_array().unwrap();
    let mut cells = 0;
    let mut schema_ok = true;
    for row in rows {
        schema_ok &= row["family_a"] == "rlr" && row["family_b"] == "cbr";
        for method in ["concat", "hyfuse"] {
            let c = &row[method];
            let ok = c["Acc"].is_f64() && c["F1"].is_f64() && c.as_object().is_some_and(|o| o.len() == 2);
            schema_ok &= ok;
            cells += usize::from(ok);
        }
    }
    let summary = std::fs::read_to_string(out.join("summary.txt")).unwrap();
    let best_line = summary.lines().any(|l| l.starts_with("best pair: "));
    Outcome {
        name: "pair-matrix shape",
        pass: rows.len() == 4 && cells == 8 && schema_ok && best_line,
        detail: format!(
            "2 RLR + 2 CBR files, rlr+cbr: {} pairs, {cells} cells with Acc/F1 (want 8), schema ok {schema_ok}, best-pair line {best_line}",
            rows.len()
        ),
    }
}

#[test]
fn acceptance_criteria() {
    let dir = tempfile::tempdir().unwrap();
    let steps: [&dyn Fn() -> Outcome; 8] = [
        &gyro_algebra,
        &round_trip,
        &gradient_fidelity,
        &metric_oracle,
        &complementarity,
        &|| determinism(dir.path()),
        &param_count,
        &|| pair_matrix(dir.path()),
    ];
    let mut failed = Vec::new();
    for step in steps {
        let o = step();
        report(&o);
        if !o.pass {
            failed.push(format!("{}: {}", o.name, o.detail));
        }
    }
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.join("\n"));
}
