//! Projected gradient ascent on source weights.
//!
//! Each iteration expands source weights to points, takes an ε-truncated
//! gradient step per point, clamps to `[0, 1]`, and projects back by giving
//! every source the mean of its points' weights.

use std::io::Write;

use serde::Serialize;

use crate::corpus::EvaluationSet;
use crate::error::{Error, Result};
use crate::exact_grad::{check_common, reduce_to_points, slot_gradients, Truncation};
use crate::prepared::PreparedSet;
use crate::weights::SourceWeights;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub k: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub init_weight: f64,
    pub eps: f64,
    /// Recorded for reproducibility; the ascent itself draws no randomness.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 10,
            iterations: 50,
            learning_rate: 500.0,
            init_weight: 0.5,
            eps: 1e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("K must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.init_weight) {
            return Err(Error::invalid(format!("initial weight {} is outside [0, 1]", self.init_weight)));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::invalid(format!("learning rate {} is not a finite non-negative number", self.learning_rate)));
        }
        Truncation::Epsilon(self.eps).validate()
    }
}

/// Summary of the weights after one iteration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub mean_weight: f64,
    pub min: f64,
    pub max: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub weights: SourceWeights,
    pub telemetry: Vec<IterationRecord>,
}

/// Optimizer state over a prepared set with buffers reused across iterations.
pub struct Trainer<'a> {
    prep: &'a PreparedSet,
    cfg: TrainConfig,
    source_w: Vec<f64>,
    point_w: Vec<f64>,
    slots: Vec<f64>,
    grad: Vec<f64>,
    sums: Vec<f64>,
    counts: Vec<usize>,
    iter: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(prep: &'a PreparedSet, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let source_w = vec![cfg.init_weight; prep.num_sources()];
        let point_w = vec![cfg.init_weight; prep.num_points()];
        check_common(prep, &point_w, cfg.k)?;
        let mut counts = vec![0; prep.num_sources()];
        for &s in prep.point_sources() {
            counts[s as usize] += 1;
        }
        Ok(Trainer {
            prep,
            cfg,
            source_w,
            point_w,
            slots: vec![0.0; prep.num_slots()],
            grad: vec![0.0; prep.num_points()],
            sums: vec![0.0; prep.num_sources()],
            counts,
            iter: 0,
        })
    }

    /// One gradient computation, update and projection.
    pub fn step(&mut self) -> IterationRecord {
        slot_gradients(
            self.prep,
            &self.point_w,
            self.cfg.k,
            Truncation::Epsilon(self.cfg.eps),
            &mut self.slots,
        );
        reduce_to_points(self.prep, &self.slots, &mut self.grad);
        self.apply_gradient()
    }

    /// Applies `self.grad` as the ascent direction.
    fn apply_gradient(&mut self) -> IterationRecord {
        ascend(
            &mut self.point_w,
            &self.grad,
            self.cfg.learning_rate,
            self.prep.point_sources(),
            &self.counts,
            &mut self.sums,
            &mut self.source_w,
        );
        self.iter += 1;
        record(self.iter, &self.source_w, &self.grad)
    }

    pub fn source_weights(&self) -> &[f64] {
        &self.source_w
    }

    pub fn point_weights(&self) -> &[f64] {
        &self.point_w
    }

    pub fn gradient(&self) -> &[f64] {
        &self.grad
    }
}

/// Clamped ascent step per point followed by the per-source mean. Leaves
/// `point_w` holding the projected weights.
fn ascend(
    point_w: &mut [f64],
    grad: &[f64],
    lr: f64,
    point_source: &[u32],
    counts: &[usize],
    sums: &mut [f64],
    source_w: &mut [f64],
) {
    sums.iter_mut().for_each(|s| *s = 0.0);
    for ((w, g), &s) in point_w.iter().zip(grad).zip(point_source) {
        sums[s as usize] += (w + lr * g).clamp(0.0, 1.0);
    }
    for ((sw, &sum), &c) in source_w.iter_mut().zip(sums.iter()).zip(counts) {
        if c > 0 {
            *sw = (sum / c as f64).clamp(0.0, 1.0);
        }
    }
    for (w, &s) in point_w.iter_mut().zip(point_source) {
        *w = source_w[s as usize];
    }
}

fn record(iter: usize, source_w: &[f64], grad: &[f64]) -> IterationRecord {
    let n = source_w.len().max(1) as f64;
    IterationRecord {
        iter,
        mean_weight: source_w.iter().sum::<f64>() / n,
        min: source_w.iter().copied().fold(f64::INFINITY, f64::min),
        max: source_w.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        grad_norm: grad.iter().map(|g| g * g).sum::<f64>().sqrt(),
    }
}

/// Learns source weights on `set`.
pub fn fit(set: &EvaluationSet, cfg: &TrainConfig) -> Result<FitResult> {
    let prep = PreparedSet::from_set(set);
    let mut t = Trainer::new(&prep, *cfg)?;
    let telemetry = (0..cfg.iterations).map(|_| t.step()).collect();
    Ok(FitResult {
        weights: SourceWeights::from_aligned(set, t.source_w),
        telemetry,
    })
}

/// Runs the same ascent with gradients supplied by `grad(point_weights)`.
/// Useful for checking the optimizer against a reference gradient.
pub fn fit_with_gradient(
    set: &EvaluationSet,
    cfg: &TrainConfig,
    mut grad: impl FnMut(&[f64]) -> Result<Vec<f64>>,
) -> Result<FitResult> {
    let prep = PreparedSet::from_set(set);
    let mut t = Trainer::new(&prep, *cfg)?;
    let mut telemetry = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let g = grad(&t.point_w)?;
        if g.len() != t.grad.len() {
            return Err(Error::invalid("gradient length does not match the point count"));
        }
        t.grad = g;
        telemetry.push(t.apply_gradient());
    }
    Ok(FitResult {
        weights: SourceWeights::from_aligned(set, t.source_w),
        telemetry,
    })
}

pub fn write_telemetry(records: &[IterationRecord], mut out: impl Write) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Candidate, ValidationInstance};
    use crate::oracle::{brute_gradient_set, brute_multilinear_set};
    use crate::weights::point_weights;

    fn two_sources(n: usize, per: usize) -> EvaluationSet {
        let v = (0..n)
            .map(|q| ValidationInstance {
                query_id: format!("q{q}"),
                gold: None,
                candidates: (0..2 * per)
                    .map(|i| {
                        let good = i % 2 == 1;
                        Candidate::with_utility(
                            &format!("q{q}p{i}"),
                            if good { "good" } else { "bad" },
                            -(i as f64),
                            if good { 1.0 } else { 0.0 },
                        )
                    })
                    .collect(),
            })
            .collect();
        EvaluationSet::new(v).unwrap()
    }

    #[test]
    fn defaults_follow_protocol() {
        let c = TrainConfig::default();
        assert_eq!((c.k, c.iterations, c.learning_rate, c.init_weight), (10, 50, 500.0, 0.5));
    }

    #[test]
    fn separates_pure_sources() {
        let set = two_sources(4, 2);
        let cfg = TrainConfig { k: 1, ..Default::default() };
        let r = fit(&set, &cfg).unwrap();
        assert!(r.weights.get("good").unwrap() > 0.9);
        assert!(r.weights.get("bad").unwrap() < 0.1);
        assert_eq!(r.telemetry.len(), 50);
    }

    #[test]
    fn projection_invariant_each_iteration() {
        let set = two_sources(3, 3);
        let prep = PreparedSet::from_set(&set);
        let mut t = Trainer::new(&prep, TrainConfig { k: 2, learning_rate: 3.0, ..Default::default() }).unwrap();
        for _ in 0..20 {
            t.step();
            for (&w, &s) in t.point_weights().iter().zip(prep.point_sources()) {
                assert_eq!(w, t.source_weights()[s as usize]);
                assert!((0.0..=1.0).contains(&w));
            }
        }
    }

    #[test]
    fn deterministic() {
        let set = two_sources(5, 3);
        let cfg = TrainConfig { k: 3, learning_rate: 2.0, ..Default::default() };
        assert_eq!(fit(&set, &cfg).unwrap(), fit(&set, &cfg).unwrap());
    }

    #[test]
    fn constant_utilities_track_reference() {
        let v = (0..2)
            .map(|q| ValidationInstance {
                query_id: format!("q{q}"),
                gold: None,
                candidates: (0..5)
                    .map(|i| Candidate::with_utility(&format!("q{q}p{i}"), &format!("s{}", i % 3), -(i as f64), 1.0))
                    .collect(),
            })
            .collect();
        let set = EvaluationSet::new(v).unwrap();
        let cfg = TrainConfig { k: 3, iterations: 10, learning_rate: 0.7, init_weight: 0.2, ..Default::default() };
        let ours = fit(&set, &cfg).unwrap();
        let reference = fit_with_gradient(&set, &cfg, |w| brute_gradient_set(&set, w, cfg.k)).unwrap();
        for (a, b) in ours.weights.weights().iter().zip(reference.weights.weights()) {
            assert!((a - b).abs() < 1e-9);
        }
        // correct points keep adding utility while fewer than K are sampled
        assert!(ours.telemetry.last().unwrap().mean_weight > 0.2);
    }

    #[test]
    fn small_steps_ascend() {
        let v = (0..3)
            .map(|q| ValidationInstance {
                query_id: format!("q{q}"),
                gold: None,
                candidates: (0..6)
                    .map(|i| {
                        let u = ((q + i) % 3 == 0) as u8 as f64;
                        Candidate::with_utility(&format!("q{q}p{i}"), &format!("s{}", i % 3), -(i as f64), u)
                    })
                    .collect(),
            })
            .collect();
        let set = EvaluationSet::new(v).unwrap();
        let cfg = TrainConfig { k: 2, learning_rate: 0.01, iterations: 1, eps: 1.0, ..Default::default() };
        let mut sw = SourceWeights::uniform(&set, 0.5).unwrap();
        let mut prev = brute_multilinear_set(&set, &point_weights(&set, &sw).unwrap(), 2).unwrap();
        for _ in 0..15 {
            let pw = point_weights(&set, &sw).unwrap();
            let prep = PreparedSet::from_set(&set);
            let mut t = Trainer::new(&prep, cfg).unwrap();
            t.point_w = pw;
            t.grad = brute_gradient_set(&set, &t.point_w, 2).unwrap();
            t.apply_gradient();
            sw = SourceWeights::from_aligned(&set, t.source_w.clone());
            let now = brute_multilinear_set(&set, &point_weights(&set, &sw).unwrap(), 2).unwrap();
            assert!(now >= prev - 1e-9, "{now} < {prev}");
            prev = now;
        }
    }

    #[test]
    fn rejects_bad_config() {
        let set = two_sources(1, 1);
        for cfg in [
            TrainConfig { k: 0, ..Default::default() },
            TrainConfig { init_weight: 1.5, ..Default::default() },
            TrainConfig { eps: 0.0, ..Default::default() },
            TrainConfig { learning_rate: f64::NAN, ..Default::default() },
        ] {
            assert!(fit(&set, &cfg).is_err());
        }
        assert!(matches!(fit(&EvaluationSet::empty(), &TrainConfig::default()), Err(Error::EmptySet)));
    }
}
