//! End-to-end acceptance checks. Each check prints one PASS/FAIL line; the
//! test fails if any check fails. Runs sequentially so the timing check has
//! the machine to itself.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rag_importance::approx::{approx_instance_gradients, boundary_index_bound, instance_boundary};
use rag_importance::bench::{linear_fit, synth_prepared, time_epochs, BenchConfig};
use rag_importance::corpus::{save_evaluation_set, Candidate, EvaluationSet, ValidationInstance};
use rag_importance::exact_grad::{gradient_points, instance_gradients};
use rag_importance::grouped::grouped_instance_gradients;
use rag_importance::mcmc::{mcmc_instance_gradients, sample_count, AdditiveTopK, McmcConfig};
use rag_importance::oracle::{brute_gradient_set, brute_grouped_gradient};
use rag_importance::prepared::PreparedSet;
use rag_importance::refine::{
    evaluate, inject_noise, keep_sources, loo_keep, prune, reweight_expected_accuracy, split_validation_test,
    synthetic_qa, tune_threshold, SyntheticQa,
};
use rag_importance::trainer::{fit, TrainConfig, Trainer};
use rag_importance::SourceWeights;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn binary_instance(rng: &mut ChaCha8Rng, q: usize, m: usize, sources: usize) -> ValidationInstance {
    ValidationInstance {
        query_id: format!("q{q}"),
        gold: None,
        candidates: (0..m)
            .map(|j| {
                let u = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
                // coarse scores so that ties exercise the stable ordering
                let score = rng.gen_range(0..6) as f64;
                let src = format!("s{}", rng.gen_range(0..sources));
                Candidate::with_utility(&format!("q{q}p{j}"), &src, score, u)
            })
            .collect(),
    }
}

fn random_weight(rng: &mut ChaCha8Rng) -> f64 {
    match rng.gen_range(0..10) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.gen(),
    }
}

fn exact_matches_enumeration() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.gen_range(1..=4);
        let v = (0..n)
            .map(|q| {
                let m = rng.gen_range(1..=12);
                binary_instance(&mut rng, q, m, 3)
            })
            .collect();
        let set = EvaluationSet::new(v).unwrap();
        let k = rng.gen_range(1..=4);
        let w: Vec<f64> = (0..set.num_points()).map(|_| random_weight(&mut rng)).collect();
        let fast = gradient_points(&set, &w, k).unwrap();
        let brute = brute_gradient_set(&set, &w, k).unwrap();
        worst = worst.max(fast.max_abs_diff(&brute));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-9 && secs < 10.0,
        format!("max |exact - brute| = {worst:.2e} (tol 1e-9), {secs:.2} s (limit 10 s)"),
    )
}

fn truncation_within_eps() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_ratio: f64 = 0.0;
    let mut bound_ok = true;
    for case in 0..50 {
        let inst = binary_instance(&mut rng, case, 200, 1);
        let w: Vec<f64> = (0..200).map(|_| rng.gen_range(0.2..=1.0)).collect();
        let lambda = w.iter().copied().fold(1.0, f64::min);
        let k = [1, 5, 10][case % 3];
        let exact = instance_gradients(&inst, &w, k).unwrap();
        for eps in [1e-2, 1e-3] {
            let approx = approx_instance_gradients(&inst, &w, k, eps).unwrap();
            let err = exact
                .iter()
                .zip(&approx)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            worst_ratio = worst_ratio.max(err / eps);
            let b = instance_boundary(&inst, &w, k, eps).unwrap().b as f64;
            bound_ok &= b <= boundary_index_bound(lambda, k, eps);
        }
    }
    outcome(
        worst_ratio <= 1.0 && bound_ok,
        format!("max |approx - exact| / eps = {worst_ratio:.3} (tol 1), boundary bound holds: {bound_ok}"),
    )
}

fn sampling_estimator() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inst = binary_instance(&mut rng, 0, 8, 1);
    let w: Vec<f64> = (0..8).map(|_| rng.gen_range(0.1..0.9)).collect();
    let k = 3;
    let exact = instance_gradients(&inst, &w, k).unwrap();
    let (eps, delta) = (0.2, 0.1);
    let mut failures = 0;
    let mut total = 0;
    for seed in 0..200 {
        let cfg = McmcConfig { eps, delta, seed, k };
        let est = mcmc_instance_gradients(&inst, &w, &AdditiveTopK { k }, &cfg, 0, 1).unwrap();
        for (a, b) in est.iter().zip(&exact) {
            total += 1;
            failures += usize::from((a - b).abs() > eps);
        }
    }
    let rate = failures as f64 / total as f64;
    let t = sample_count(0.1, 0.05, 100);
    outcome(
        rate <= delta + 0.05 && t == 1659,
        format!("failure rate {rate:.4} (limit {:.2}), T(0.1, 0.05, 100) = {t} (expect 1659)", delta + 0.05),
    )
}

fn grouped_matches_enumeration() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for _ in 0..300 {
        let sources = rng.gen_range(1..=8);
        let m = rng.gen_range(1..=16);
        let inst = binary_instance(&mut rng, 0, m, sources);
        let sw = SourceWeights::new((0..8).map(|s| (format!("s{s}"), random_weight(&mut rng)))).unwrap();
        for k in 1..=2 {
            let fast = grouped_instance_gradients(&inst, &sw, k).unwrap();
            let brute = brute_grouped_gradient(&inst, &sw, k).unwrap();
            for ((ka, a), (kb, b)) in fast.iter().zip(&brute) {
                assert_eq!(ka, kb);
                worst = worst.max((a - b).abs());
            }
            cases += 1;
        }
    }
    outcome(worst <= 1e-9, format!("{cases} fixtures, max |grouped - brute| = {worst:.2e} (tol 1e-9)"))
}

fn two_source_separation() -> Outcome {
    // more candidates than K, otherwise a wrong point can never displace a correct one
    let per_instance = 20;
    let v = (0..20)
        .map(|q| ValidationInstance {
            query_id: format!("q{q}"),
            gold: None,
            candidates: (0..per_instance)
                .map(|j| {
                    let good = j % 2 == 0;
                    Candidate::with_utility(
                        &format!("q{q}p{j}"),
                        if good { "correct" } else { "wrong" },
                        (per_instance - j) as f64,
                        if good { 1.0 } else { 0.0 },
                    )
                })
                .collect(),
        })
        .collect();
    let set = EvaluationSet::new(v).unwrap();
    let cfg = TrainConfig {
        k: TrainConfig::default().k.min(per_instance),
        ..Default::default()
    };
    let prep = PreparedSet::from_set(&set);
    let mut t = Trainer::new(&prep, cfg).unwrap();
    let mut invariant = true;
    for _ in 0..cfg.iterations {
        t.step();
        for (&w, &s) in t.point_weights().iter().zip(prep.point_sources()) {
            invariant &= w == t.source_weights()[s as usize] && (0.0..=1.0).contains(&w);
        }
    }
    let sw = t.source_weights();
    let (good, bad) = (sw[set.sources().get("correct").unwrap()], sw[set.sources().get("wrong").unwrap()]);
    outcome(
        good - bad >= 0.8 && invariant,
        format!("w(correct) = {good:.4}, w(wrong) = {bad:.4}, gap {:.4} (min 0.8), projection invariant: {invariant}", good - bad),
    )
}

fn noise_recovery() -> Outcome {
    let seeds = 16u64;
    let levels = [0.0, 0.2, 0.4, 0.6, 0.8];
    let k = 10;
    let (mut clean, mut dirty, mut pruned, mut reweight, mut loo) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for seed in 0..seeds {
        let clean_set = synthetic_qa(&SyntheticQa { seed, ..Default::default() });
        let dirty_set = inject_noise(&clean_set, &levels, 10, seed).unwrap();
        let (_, clean_test) = split_validation_test(&clean_set, seed);
        let (val, test) = split_validation_test(&dirty_set, seed);
        let w = fit(&val, &TrainConfig::default()).unwrap().weights;
        let t = tune_threshold(&val, &w, k).unwrap();
        clean += evaluate(&clean_test, k).unwrap().accuracy;
        dirty += evaluate(&test, k).unwrap().accuracy;
        pruned += evaluate(&prune(&test, &w, t).unwrap(), k).unwrap().accuracy;
        reweight += reweight_expected_accuracy(&test, &w, 32, seed, k).unwrap().accuracy;
        let (_, keep) = loo_keep(&val, k).unwrap();
        loo += evaluate(&keep_sources(&test, &keep), k).unwrap().accuracy;
    }
    let n = seeds as f64;
    let (clean, dirty, pruned, reweight, loo) = (clean / n, dirty / n, pruned / n, reweight / n, loo / n);
    outcome(
        pruned >= dirty && (pruned - clean).abs() <= 0.02,
        format!(
            "clean {clean:.4}, dirty {dirty:.4}, pruned {pruned:.4} (|pruned - clean| = {:.4}, tol 0.02); reweight {reweight:.4}, loo {loo:.4}",
            (pruned - clean).abs()
        ),
    )
}

fn runtime_scaling() -> Outcome {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let train = TrainConfig { k: 10, eps: 1e-3, ..Default::default() };
    let sizes = [(1_000, 50), (10_000, 50), (50_000, 100), (100_000, 100)];
    let mut ms = Vec::new();
    let mut m_values = Vec::new();
    let mut speedup = None;
    for &(n, b) in &sizes {
        let cfg = BenchConfig { n, b, ..Default::default() };
        let prep = synth_prepared(&cfg);
        let t4 = time_epochs(&prep, train, 3, 4).unwrap();
        let mean4 = t4.iter().sum::<f64>() / t4.len() as f64;
        if n * b == 10_000_000 && cores >= 4 {
            let t1 = time_epochs(&prep, train, 3, 1).unwrap();
            speedup = Some(t1.iter().sum::<f64>() / t1.len() as f64 / mean4);
        }
        ms.push(mean4);
        m_values.push((n * b) as f64);
    }
    let (_, _, r2) = linear_fit(&m_values, &ms);
    let largest = *ms.last().unwrap();
    let timing_ok = largest <= 10_000.0 && r2 >= 0.95;
    let speed_note = match speedup {
        Some(s) => format!("1->4 thread speedup {s:.2}x (min 2x)"),
        None => format!("1->4 thread speedup NOT EVALUATED: host exposes {cores} hardware thread(s)"),
    };
    outcome(
        timing_ok && speedup.is_none_or(|s| s >= 2.0),
        format!("epoch at M=10M with 4 threads: {:.1} ms (limit 10000), R^2 = {r2:.4} (min 0.95); {speed_note}", largest),
    )
}

fn fixture(dir: &Path) -> std::path::PathBuf {
    let set = synthetic_qa(&SyntheticQa { questions: 24, candidates: 12, seed: 9, ..Default::default() });
    let noisy = inject_noise(&set, &[0.0, 0.5], 3, 9).unwrap();
    let path = dir.join("eval.jsonl");
    save_evaluation_set(&noisy, &path).unwrap();
    path
}

fn cli_determinism() -> Outcome {
    let exe = env!("CARGO_BIN_EXE_rag-importance");
    let dir = tempfile::tempdir().unwrap();
    let input = fixture(dir.path());
    let small = dir.path().join("small.jsonl");
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let tiny = EvaluationSet::new((0..2).map(|q| binary_instance(&mut rng, q, 5, 2)).collect()).unwrap();
    save_evaluation_set(&tiny, &small).unwrap();
    let weights = dir.path().join("weights.jsonl");
    let st = Command::new(exe)
        .args(["fit", "--input", input.to_str().unwrap(), "--k", "3", "--out", weights.to_str().unwrap()])
        .status()
        .unwrap();
    assert!(st.success());

    let inp = input.to_str().unwrap().to_owned();
    let sml = small.to_str().unwrap().to_owned();
    let wts = weights.to_str().unwrap().to_owned();
    let invocations: Vec<Vec<String>> = [
        vec!["grad", "--input", &inp, "--k", "3", "--mode", "exact"],
        vec!["grad", "--input", &inp, "--k", "3", "--mode", "approx", "--eps", "1e-2", "--level", "source"],
        vec!["grad", "--input", &inp, "--k", "2", "--mode", "mcmc", "--eps", "0.3", "--delta", "0.3", "--seed", "5", "--utility", "vote"],
        vec!["grad", "--input", &sml, "--k", "2", "--mode", "grouped"],
        vec!["grad", "--input", &sml, "--k", "2", "--oracle"],
        vec!["fit", "--input", &inp, "--k", "3", "--iters", "10", "--split-seed", "4", "--log", "{dir}/log.jsonl"],
        vec!["refine", "--input", &inp, "--k", "3", "--mode", "prune", "--weights", &wts, "--csv", "{dir}/w.csv"],
        vec!["refine", "--input", &inp, "--k", "3", "--mode", "reweight", "--weights", &wts, "--seed", "2"],
        vec!["refine", "--input", &inp, "--k", "3", "--mode", "loo-prune", "--tune-on", "all"],
        vec!["eval", "--input", &inp, "--k", "3"],
        vec!["noise", "--input", &inp, "--seed", "3", "--fabricate", "2"],
        vec!["oracle", "--input", &sml, "--k", "2", "--level", "source"],
    ]
    .iter()
    .map(|v| v.iter().map(|s| s.to_string()).collect())
    .collect();

    let mut mismatches = Vec::new();
    for (i, args) in invocations.iter().enumerate() {
        let mut outputs = Vec::new();
        for threads in ["1", "4", "1"] {
            let run_dir = dir.path().join(format!("run{i}_{threads}_{}", outputs.len()));
            std::fs::create_dir(&run_dir).unwrap();
            let out = run_dir.join("out");
            let mut full: Vec<String> = args.iter().map(|a| a.replace("{dir}", run_dir.to_str().unwrap())).collect();
            full.extend(["--out".into(), out.to_str().unwrap().into(), "--threads".into(), threads.into()]);
            let st = Command::new(exe).args(&full).output().unwrap();
            assert!(st.status.success(), "{full:?}: {}", String::from_utf8_lossy(&st.stderr));
            let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(&run_dir)
                .unwrap()
                .map(|e| {
                    let e = e.unwrap();
                    (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
                })
                .collect();
            files.sort();
            outputs.push(files);
        }
        if outputs.windows(2).any(|w| w[0] != w[1]) {
            mismatches.push(args[0].clone());
        }
    }
    outcome(
        mismatches.is_empty(),
        format!(
            "{} invocations x threads {{1, 4, 1}}: {}",
            invocations.len(),
            if mismatches.is_empty() { "all outputs byte-identical".to_string() } else { format!("differ: {mismatches:?}") }
        ),
    )
}

#[test]
fn acceptance() {
    let checks: [(&str, fn() -> Outcome); 8] = [
        ("1 exact gradient vs enumeration", exact_matches_enumeration),
        ("2 truncated gradient within eps", truncation_within_eps),
        ("3 sampling estimator (eps, delta)", sampling_estimator),
        ("4 grouped gradient vs enumeration", grouped_matches_enumeration),
        ("5 two-source separation", two_source_separation),
        ("6 noise recovery by pruning", noise_recovery),
        ("7 epoch runtime and scaling", runtime_scaling),
        ("8 CLI output determinism", cli_determinism),
    ];
    let mut failed = Vec::new();
    for (name, check) in checks {
        let o = check();
        // Bypasses the test harness capture so the lines show up in plain `cargo test`.
        let _ = writeln!(
            std::io::stderr(),
            "criterion {name}: {} -- {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.pass {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
