//! Synthetic corpora and per-epoch runtime measurement.
//!
//! Scores are uniform in `[0, 1)`, utilities are fair coin flips in `{0, 1}`,
//! and every candidate is its own point drawn from one of `sources` sources
//! uniformly at random.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{Candidate, EvaluationSet, ValidationInstance};
use crate::error::{Error, Result};
use crate::prepared::{PreparedBuilder, PreparedSet};
use crate::trainer::{TrainConfig, Trainer};

pub const DISTRIBUTION_NOTE: &str =
    "scores ~ U[0,1), utilities ~ Bernoulli(0.5) over {0,1}, sources uniform";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchConfig {
    pub n: usize,
    pub b: usize,
    pub threads: usize,
    pub repeats: usize,
    pub seed: u64,
    pub sources: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            n: 1000,
            b: 50,
            threads: 1,
            repeats: 7,
            seed: 0,
            sources: 1000,
        }
    }
}

impl BenchConfig {
    pub fn m(&self) -> usize {
        self.n * self.b
    }
}

struct Draw {
    score: f64,
    utility: f64,
    source: usize,
}

fn draws(cfg: &BenchConfig, mut f: impl FnMut(usize, &[Draw])) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sources = cfg.sources.max(1);
    let mut buf = Vec::with_capacity(cfg.b);
    for i in 0..cfg.n {
        buf.clear();
        for _ in 0..cfg.b {
            buf.push(Draw {
                score: rng.gen::<f64>(),
                utility: if rng.gen::<bool>() { 1.0 } else { 0.0 },
                source: rng.gen_range(0..sources),
            });
        }
        f(i, &buf);
    }
}

/// The synthetic corpus as an ordinary evaluation set.
pub fn synth_corpus(cfg: &BenchConfig) -> EvaluationSet {
    let mut out = Vec::with_capacity(cfg.n);
    draws(cfg, |i, d| {
        out.push(ValidationInstance {
            query_id: format!("q{i}"),
            gold: None,
            candidates: d
                .iter()
                .enumerate()
                .map(|(j, x)| Candidate::with_utility(&format!("q{i}c{j}"), &format!("src{}", x.source), x.score, x.utility))
                .collect(),
        });
    });
    EvaluationSet::new(out).expect("synthetic corpus is valid")
}

/// The same corpus built straight into the flat layout, without strings.
/// Equal to `PreparedSet::from_set(&synth_corpus(cfg))`.
pub fn synth_prepared(cfg: &BenchConfig) -> PreparedSet {
    let m = cfg.m();
    let mut point_source = Vec::with_capacity(m);
    let mut remap = vec![u32::MAX; cfg.sources.max(1)];
    let mut next = 0u32;
    let mut ranked: Vec<Vec<(u32, f64)>> = Vec::with_capacity(cfg.n);
    let mut order: Vec<usize> = Vec::with_capacity(cfg.b);
    draws(cfg, |i, d| {
        for x in d {
            if remap[x.source] == u32::MAX {
                remap[x.source] = next;
                next += 1;
            }
            point_source.push(remap[x.source]);
        }
        order.clear();
        order.extend(0..d.len());
        order.sort_by(|&a, &b| d[b].score.total_cmp(&d[a].score));
        let base = (i * cfg.b) as u32;
        ranked.push(order.iter().map(|&j| (base + j as u32, d[j].utility)).collect());
    });
    let mut builder = PreparedBuilder::new(point_source, next as usize);
    builder.reserve(cfg.n, m);
    for r in ranked {
        builder.push_ranked(r);
    }
    builder.finish()
}

/// Estimated peak bytes for generating and running one configuration.
pub fn estimated_footprint(cfg: &BenchConfig) -> usize {
    // slot arrays, point sources, trainer buffers and generation staging
    cfg.m() * (14 + 4 + 24 + 16) + cfg.n * 64 + cfg.sources * 24
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub m: usize,
    pub n: usize,
    pub b: usize,
    pub threads: usize,
    pub mean_ms: f64,
    pub min_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LinearFit {
    pub threads: usize,
    pub slope_ms_per_point: f64,
    pub intercept_ms: f64,
    pub r2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub k: usize,
    pub eps: f64,
    pub rows: Vec<BenchRow>,
    pub fits: Vec<LinearFit>,
}

/// Least-squares fit of `y` against `x` with its R².
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let e = b - (intercept + slope * a);
            e * e
        })
        .sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    (slope, intercept, r2)
}

/// Times `repeats` epochs on a prepared set, each from the initial weights.
/// Returns per-epoch milliseconds.
pub fn time_epochs(prep: &PreparedSet, train: TrainConfig, repeats: usize, threads: usize) -> Result<Vec<f64>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(|| {
        let mut times = Vec::with_capacity(repeats);
        // warm-up epoch, not timed
        Trainer::new(prep, train)?.step();
        for _ in 0..repeats {
            let mut t = Trainer::new(prep, train)?;
            let start = Instant::now();
            t.step();
            times.push(start.elapsed().as_secs_f64() * 1e3);
        }
        Ok(times)
    })
}

pub struct BenchPlan {
    pub sizes: Vec<(usize, usize)>,
    pub threads: Vec<usize>,
    pub k: usize,
    pub eps: f64,
    pub repeats: usize,
    pub seed: u64,
    pub sources: usize,
    pub memory_cap_bytes: usize,
}

impl Default for BenchPlan {
    fn default() -> Self {
        BenchPlan {
            sizes: vec![(1000, 50), (10_000, 50), (100_000, 50), (200_000, 50)],
            threads: vec![1],
            k: 10,
            eps: 1e-3,
            repeats: 7,
            seed: 0,
            sources: 1000,
            memory_cap_bytes: 3 << 30,
        }
    }
}

/// Times one epoch per configuration and fits runtime against M.
pub fn run_benchmark(plan: &BenchPlan) -> Result<BenchReport> {
    if plan.repeats == 0 {
        return Err(Error::invalid("repeats must be at least 1"));
    }
    let train = TrainConfig {
        k: plan.k,
        eps: plan.eps,
        seed: plan.seed,
        ..Default::default()
    };
    train.validate()?;
    let mut rows = Vec::new();
    for &(n, b) in &plan.sizes {
        let cfg = BenchConfig {
            n,
            b,
            threads: 1,
            repeats: plan.repeats,
            seed: plan.seed,
            sources: plan.sources,
        };
        let needed = estimated_footprint(&cfg);
        if needed > plan.memory_cap_bytes {
            return Err(Error::TooLarge {
                what: "benchmark memory (bytes)",
                needed,
                limit: plan.memory_cap_bytes,
            });
        }
        let prep = synth_prepared(&cfg);
        for &threads in &plan.threads {
            let times = time_epochs(&prep, train, plan.repeats, threads)?;
            rows.push(BenchRow {
                m: cfg.m(),
                n,
                b,
                threads,
                mean_ms: times.iter().sum::<f64>() / times.len() as f64,
                min_ms: times.iter().copied().fold(f64::INFINITY, f64::min),
            });
        }
    }
    let fits = plan
        .threads
        .iter()
        .map(|&t| {
            let (x, y): (Vec<f64>, Vec<f64>) = rows
                .iter()
                .filter(|r| r.threads == t)
                .map(|r| (r.m as f64, r.mean_ms))
                .unzip();
            let (slope, intercept, r2) = linear_fit(&x, &y);
            LinearFit {
                threads: t,
                slope_ms_per_point: slope,
                intercept_ms: intercept,
                r2,
            }
        })
        .collect();
    Ok(BenchReport {
        k: plan.k,
        eps: plan.eps,
        rows,
        fits,
    })
}

impl BenchReport {
    pub fn fit_for(&self, threads: usize) -> Option<&LinearFit> {
        self.fits.iter().find(|f| f.threads == threads)
    }

    /// CSV with a commented header describing the synthetic distribution.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "# synthetic corpus: {DISTRIBUTION_NOTE}; K={}, eps={}", self.k, self.eps)?;
        for f in &self.fits {
            writeln!(
                out,
                "# threads={} slope_ms_per_point={:e} intercept_ms={:.4} r2={:.6}",
                f.threads, f.slope_ms_per_point, f.intercept_ms, f.r2
            )?;
        }
        writeln!(out, "M,N,b,threads,mean_ms,min_ms,r2_slope")?;
        for r in &self.rows {
            let r2 = self.fit_for(r.threads).map_or(f64::NAN, |f| f.r2);
            writeln!(
                out,
                "{},{},{},{},{:.4},{:.4},{:.6}",
                r.m, r.n, r.b, r.threads, r.mean_ms, r.min_ms, r2
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact_grad::{prepared_gradient, Truncation};

    #[test]
    fn corpus_size() {
        let cfg = BenchConfig { n: 1000, b: 50, ..Default::default() };
        let set = synth_corpus(&cfg);
        assert_eq!(set.num_candidates(), 50_000);
        assert!(synth_corpus(&BenchConfig { n: 0, ..cfg }).is_empty());
        assert_eq!(synth_corpus(&cfg), set);
    }

    #[test]
    fn flat_generator_matches() {
        let cfg = BenchConfig { n: 37, b: 20, sources: 15, seed: 4, ..Default::default() };
        assert_eq!(synth_prepared(&cfg), PreparedSet::from_set(&synth_corpus(&cfg)));
    }

    #[test]
    fn fit_of_a_line() {
        let (s, i, r2) = linear_fit(&[1.0, 2.0, 3.0, 4.0], &[3.0, 5.0, 7.0, 9.0]);
        assert!((s - 2.0).abs() < 1e-12 && (i - 1.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn thread_count_does_not_change_gradients() {
        let prep = synth_prepared(&BenchConfig { n: 300, b: 60, ..Default::default() });
        let w = vec![0.5; prep.num_points()];
        let run = |t| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .unwrap()
                .install(|| prepared_gradient(&prep, &w, 10, Truncation::Epsilon(1e-3)).unwrap())
        };
        let one = run(1);
        for t in [2, 3, 4] {
            assert!(one.iter().zip(run(t)).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn memory_guard() {
        let plan = BenchPlan {
            sizes: vec![(1_000_000, 100)],
            memory_cap_bytes: 1 << 20,
            ..Default::default()
        };
        assert!(matches!(run_benchmark(&plan), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn small_report() {
        let plan = BenchPlan {
            sizes: vec![(50, 50), (100, 50), (200, 50), (400, 50)],
            repeats: 2,
            ..Default::default()
        };
        let r = run_benchmark(&plan).unwrap();
        assert_eq!(r.rows.len(), 4);
        let mut csv = Vec::new();
        r.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.lines().any(|l| l == "M,N,b,threads,mean_ms,min_ms,r2_slope"));
    }
}
