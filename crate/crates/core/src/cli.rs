//! Command-line front end. Every randomized path takes `--seed`, and output
//! files depend only on inputs and flags, never on `--threads`.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::bench::{run_benchmark, BenchPlan};
use crate::corpus::{load_evaluation_set, write_evaluation_set, EvaluationSet};
use crate::error::{Error, Result};
use crate::exact_grad::{prepared_gradient, GradientVector, Truncation};
use crate::grouped::grouped_gradient;
use crate::mcmc::{mcmc_gradient, AdditiveTopK, GeneralUtility, MajorityVoteCorrect, McmcConfig};
use crate::oracle::{brute_gradient_set, brute_grouped_gradient_set, brute_multilinear_set};
use crate::prepared::PreparedSet;
use crate::refine::{
    add_fabricated_source, evaluate_labeled, inject_noise, keep_sources, loo_keep, loo_scores, prune,
    reweight_expected_accuracy, split_validation_test, tune_threshold, AccuracyReport, FabricationPlan,
    RankPolicy, RefineMode,
};
use crate::trainer::{fit, write_telemetry, TrainConfig};
use crate::weights::{point_weights, SourceWeights};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_INVALID: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "rag-importance", version, about = "Learn and apply importance weights for a retrieval corpus")]
pub struct Cli {
    /// Worker threads (0 = all cores). Never changes output.
    #[arg(long, global = true, env = "RAG_IMPORTANCE_THREADS", default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Per-point or per-source gradients of the expected utility.
    Grad(GradArgs),
    /// Learn source weights by projected gradient ascent.
    Fit(FitArgs),
    /// Prune or reweight a corpus with learned weights or LOO scores.
    Refine(RefineArgs),
    /// Majority-vote accuracy of an evaluation set.
    Eval(EvalArgs),
    /// Build a noisy multi-copy corpus, optionally with a fabricated source.
    Noise(NoiseArgs),
    /// Time training epochs on synthetic corpora.
    Bench(BenchArgs),
    /// Brute-force expected utility and gradients for small inputs.
    Oracle(OracleArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Evaluation set, one JSON record per line.
    #[arg(long)]
    input: PathBuf,
    /// Output file (standard output when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum GradMode {
    Exact,
    Approx,
    Mcmc,
    Grouped,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Level {
    Point,
    Source,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum UtilityKind {
    Additive,
    Vote,
}

#[derive(Args, Debug)]
struct GradArgs {
    #[command(flatten)]
    common: Common,
    /// Source weights; every source at --init when absent.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    init: f64,
    #[arg(long, value_enum, default_value_t = GradMode::Approx)]
    mode: GradMode,
    #[arg(long, default_value_t = 1e-3)]
    eps: f64,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    /// Utility for the sampling estimator.
    #[arg(long, value_enum, default_value_t = UtilityKind::Additive)]
    utility: UtilityKind,
    #[arg(long, value_enum, default_value_t = Level::Point)]
    level: Level,
    /// Use brute-force enumeration (small inputs only).
    #[arg(long)]
    oracle: bool,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 50)]
    iters: usize,
    #[arg(long, default_value_t = 500.0)]
    lr: f64,
    #[arg(long, default_value_t = 0.5)]
    init: f64,
    #[arg(long, default_value_t = 1e-3)]
    eps: f64,
    /// Fit on the validation half of a seeded 50/50 split.
    #[arg(long)]
    split_seed: Option<u64>,
    /// Per-iteration telemetry, one JSON record per line.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum TuneOn {
    Val,
    All,
}

#[derive(Args, Debug)]
struct RefineArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "prune")]
    mode: String,
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Fixed threshold; tuned when absent.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, value_enum, default_value_t = TuneOn::Val)]
    tune_on: TuneOn,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    #[arg(long, default_value_t = 32)]
    samples: usize,
    /// Writes `source,weight,loo_delta` for every source.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct NoiseArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.2, 0.4, 0.6, 0.8])]
    noise_levels: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    sources_per_level: usize,
    /// Fabricated candidates per instance (0 = none).
    #[arg(long, default_value_t = 0)]
    fabricate: usize,
    #[arg(long, default_value_t = 0.5)]
    fabricate_rate: f64,
    /// Place fabricated candidates below every retrieved one.
    #[arg(long)]
    fabricate_bottom: bool,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Output CSV (standard output when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated N x b sizes, e.g. 1000x50,10000x50.
    #[arg(long, value_delimiter = ',', default_values_t = vec!["1000x50".to_string(), "10000x50".into(), "100000x50".into(), "200000x50".into()])]
    sizes: Vec<String>,
    /// Thread counts to time; defaults to --threads.
    #[arg(long = "bench-threads", value_delimiter = ',')]
    bench_threads: Vec<usize>,
    #[arg(long, default_value_t = 7)]
    repeats: usize,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 1e-3)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    sources: usize,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    init: f64,
    #[arg(long, value_enum, default_value_t = Level::Point)]
    level: Level,
}

/// Parses `args` (including the program name), runs, and returns an exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return EXIT_INVALID;
        }
    };
    match pool.install(|| dispatch(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_io() {
                EXIT_IO
            } else {
                EXIT_INVALID
            }
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Grad(a) => cmd_grad(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Refine(a) => cmd_refine(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Noise(a) => cmd_noise(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Oracle(a) => cmd_oracle(a),
    }
}

fn with_output(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            let file = File::create(p).map_err(|e| Error::io(p, e))?;
            let mut w = BufWriter::new(file);
            f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(p, e))
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            f(&mut w).map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn write_records<T: Serialize>(out: &mut dyn Write, records: impl IntoIterator<Item = T>) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, &r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

fn load_weights(path: Option<&Path>, set: &EvaluationSet, init: f64) -> Result<SourceWeights> {
    match path {
        Some(p) => SourceWeights::load(p),
        None => SourceWeights::uniform(set, init),
    }
}

#[derive(Serialize)]
struct PointGrad<'a> {
    id: &'a str,
    gradient: f64,
}

#[derive(Serialize)]
struct SourceGrad<'a> {
    source: &'a str,
    gradient: f64,
}

fn write_gradient(out: &mut dyn Write, g: &GradientVector, source_level: bool) -> io::Result<()> {
    let pairs = g.keys.iter().zip(&g.values);
    if source_level {
        write_records(out, pairs.map(|(k, &v)| SourceGrad { source: k, gradient: v }))
    } else {
        write_records(out, pairs.map(|(k, &v)| PointGrad { id: k, gradient: v }))
    }
}

fn cmd_grad(a: GradArgs) -> Result<()> {
    let set = load_evaluation_set(&a.common.input)?;
    let sw = load_weights(a.weights.as_deref(), &set, a.init)?;
    let k = a.common.k;
    let g = if a.oracle {
        match a.mode {
            GradMode::Grouped => GradientVector::sources(&set, brute_grouped_gradient_set(&set, &sw, k)?),
            _ => GradientVector::points(&set, brute_gradient_set(&set, &point_weights(&set, &sw)?, k)?),
        }
    } else {
        match a.mode {
            GradMode::Exact | GradMode::Approx => {
                let trunc = if a.mode == GradMode::Exact {
                    Truncation::Exact
                } else {
                    Truncation::Epsilon(a.eps)
                };
                trunc.validate()?;
                let prep = PreparedSet::from_set(&set);
                let pw = point_weights(&set, &sw)?;
                GradientVector::points(&set, prepared_gradient(&prep, &pw, k, trunc)?)
            }
            GradMode::Mcmc => {
                let cfg = McmcConfig {
                    eps: a.eps,
                    delta: a.delta,
                    seed: a.common.seed,
                    k,
                };
                let util: Box<dyn GeneralUtility> = match a.utility {
                    UtilityKind::Additive => Box::new(AdditiveTopK { k }),
                    UtilityKind::Vote => Box::new(MajorityVoteCorrect { k }),
                };
                mcmc_gradient(&set, &sw, util.as_ref(), &cfg)?
            }
            GradMode::Grouped => grouped_gradient(&set, &sw, k)?,
        }
    };
    let (g, source_level) = match (g.level, a.level) {
        (crate::exact_grad::GradientLevel::Source, _) => (g, true),
        (_, Level::Source) => (g.source_means(&set), true),
        (_, Level::Point) => (g, false),
    };
    with_output(a.common.out.as_deref(), |w| write_gradient(w, &g, source_level))
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let set = load_evaluation_set(&a.common.input)?;
    let train_set = match a.split_seed {
        Some(s) => split_validation_test(&set, s).0,
        None => set,
    };
    let cfg = TrainConfig {
        k: a.common.k,
        iterations: a.iters,
        learning_rate: a.lr,
        init_weight: a.init,
        eps: a.eps,
        seed: a.common.seed,
    };
    let r = fit(&train_set, &cfg)?;
    if let Some(p) = &a.log {
        with_output(Some(p), |w| write_telemetry(&r.telemetry, w))?;
    }
    with_output(a.common.out.as_deref(), |w| r.weights.write(w))
}

fn report_line(r: &AccuracyReport) -> String {
    format!("{:<16} {:>8.4}  ({}/{})", r.label, r.accuracy, r.correct, r.n)
}

fn cmd_refine(a: RefineArgs) -> Result<()> {
    let mode: RefineMode = a.mode.parse()?;
    let set = load_evaluation_set(&a.common.input)?;
    let k = a.common.k;
    let (val, target) = match a.tune_on {
        TuneOn::Val => split_validation_test(&set, a.split_seed),
        TuneOn::All => (set.clone(), set.clone()),
    };
    let weights = match (&a.weights, mode) {
        (Some(p), _) => Some(SourceWeights::load(p)?),
        (None, RefineMode::LooPrune) => None,
        (None, _) => return Err(Error::invalid("--weights is required for this mode")),
    };

    let mut reports = vec![evaluate_labeled(&val, k, "val-vanilla")?];
    let mut refined: Option<EvaluationSet> = None;
    let mut threshold = None;
    match mode {
        RefineMode::Prune => {
            let sw = weights.as_ref().unwrap();
            let t = match a.threshold {
                Some(t) => t,
                None => tune_threshold(&val, sw, k)?,
            };
            reports.push(evaluate_labeled(&prune(&val, sw, t)?, k, "val-pruned")?);
            refined = Some(prune(&target, sw, t)?);
            threshold = Some(t);
        }
        RefineMode::LooPrune => {
            let (t, keep) = match a.threshold {
                Some(t) => {
                    let d = loo_scores(&val, k)?;
                    let keep = val
                        .sources()
                        .keys()
                        .iter()
                        .zip(&d)
                        .filter(|(_, &v)| v >= t)
                        .map(|(s, _)| s.clone())
                        .collect::<Vec<_>>();
                    (t, keep)
                }
                None => loo_keep(&val, k)?,
            };
            reports.push(evaluate_labeled(&keep_sources(&val, &keep), k, "val-loo-pruned")?);
            // sources unseen during validation have no LOO evidence and are kept
            let unseen: Vec<String> = target
                .sources()
                .keys()
                .iter()
                .filter(|s| val.sources().get(s).is_none())
                .cloned()
                .collect();
            let keep: Vec<String> = keep.into_iter().chain(unseen).collect();
            refined = Some(keep_sources(&target, &keep));
            threshold = Some(t);
        }
        RefineMode::Reweight => {
            let sw = weights.as_ref().unwrap();
            reports.push(evaluate_labeled(&target, k, "target-vanilla")?);
            let mut r = reweight_expected_accuracy(&target, sw, a.samples, a.common.seed, k)?;
            r.label = "target-reweight".into();
            reports.push(r);
        }
    }
    if let Some(r) = &refined {
        reports.push(evaluate_labeled(r, k, "target-refined")?);
    }

    if let Some(p) = &a.csv {
        let deltas = loo_scores(&val, k)?;
        with_output(Some(p), |w| {
            writeln!(w, "source,weight,loo_delta")?;
            for key in set.sources().keys() {
                let wt = weights.as_ref().and_then(|sw| sw.get(key));
                let d = val.sources().get(key).map(|i| deltas[i]);
                writeln!(w, "{},{},{}", csv_field(key), opt(wt), opt(d))?;
            }
            Ok(())
        })?;
    }

    for r in &reports {
        eprintln!("{}", report_line(r));
    }
    if let Some(t) = threshold {
        eprintln!("threshold        {t}");
    }
    match refined {
        Some(r) => with_output(a.common.out.as_deref(), |w| write_evaluation_set(&r, w)),
        None => with_output(a.common.out.as_deref(), |w| write_records(w, &reports)),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let set = load_evaluation_set(&a.common.input)?;
    let r = evaluate_labeled(&set, a.common.k, "eval")?;
    eprintln!("{}", report_line(&r));
    with_output(a.common.out.as_deref(), |w| write_records(w, [&r]))
}

fn cmd_noise(a: NoiseArgs) -> Result<()> {
    let set = load_evaluation_set(&a.common.input)?;
    let mut noisy = inject_noise(&set, &a.noise_levels, a.sources_per_level, a.common.seed)?;
    if a.fabricate > 0 {
        let plan = FabricationPlan {
            count: a.fabricate,
            correctness_rate: a.fabricate_rate,
            rank_policy: if a.fabricate_bottom {
                RankPolicy::Bottom
            } else {
                RankPolicy::Top
            },
            seed: a.common.seed,
            ..Default::default()
        };
        noisy = add_fabricated_source(&noisy, &plan)?;
    }
    with_output(a.common.out.as_deref(), |w| write_evaluation_set(&noisy, w))
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let (n, b) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| Error::invalid(format!("size {s:?} is not of the form NxB")))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|_| Error::invalid(format!("size {s:?} is not of the form NxB")))
    };
    Ok((parse(n)?, parse(b)?))
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let sizes = a.sizes.iter().map(|s| parse_size(s)).collect::<Result<Vec<_>>>()?;
    let threads = if a.bench_threads.is_empty() {
        vec![rayon::current_num_threads()]
    } else {
        a.bench_threads
    };
    let plan = BenchPlan {
        sizes,
        threads,
        k: a.k,
        eps: a.eps,
        repeats: a.repeats,
        seed: a.seed,
        sources: a.sources,
        ..Default::default()
    };
    let report = run_benchmark(&plan)?;
    with_output(a.out.as_deref(), |w| report.write_csv(w))
}

#[derive(Serialize)]
struct OracleValue {
    expected_utility: f64,
}

fn cmd_oracle(a: OracleArgs) -> Result<()> {
    let set = load_evaluation_set(&a.common.input)?;
    let sw = load_weights(a.weights.as_deref(), &set, a.init)?;
    let k = a.common.k;
    let pw = point_weights(&set, &sw)?;
    let value = brute_multilinear_set(&set, &pw, k)?;
    let g = match a.level {
        Level::Point => GradientVector::points(&set, brute_gradient_set(&set, &pw, k)?),
        Level::Source => GradientVector::sources(&set, brute_grouped_gradient_set(&set, &sw, k)?),
    };
    with_output(a.common.out.as_deref(), |w| {
        write_records(&mut *w, [OracleValue { expected_utility: value }])?;
        write_gradient(w, &g, a.level == Level::Source)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_parse() {
        assert_eq!(parse_size("1000x50").unwrap(), (1000, 50));
        assert!(parse_size("1000").is_err());
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["rag-importance", "grad", "--bogus"]), EXIT_USAGE);
        assert_eq!(run(["rag-importance"]), EXIT_USAGE);
    }

    #[test]
    fn missing_input_exits_3() {
        assert_eq!(run(["rag-importance", "grad", "--input", "/nonexistent/eval.jsonl"]), EXIT_IO);
    }
}
