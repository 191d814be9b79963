//! (ε, δ)-approximate gradients for arbitrary bounded utilities.
//!
//! Each point above its instance's boundary gets the mean of `T` sampled
//! marginal contributions `U(S ∪ {d_i}) - U(S)`, where `S` includes every
//! other point independently with its weight. Points at or below the boundary
//! get zero. Randomness for a point is derived from `(seed, instance, rank)`,
//! so results do not depend on scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::approx::find_boundary;
use crate::corpus::{candidate_utility, rank_order, Candidate, EvaluationSet, ValidationInstance};
use crate::error::{Error, Result};
use crate::exact_grad::GradientVector;
use crate::refine::majority_vote_ranked;
use crate::weights::{point_weights, SourceWeights};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McmcConfig {
    pub eps: f64,
    pub delta: f64,
    pub seed: u64,
    pub k: usize,
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Error::invalid(format!("epsilon {} is outside (0, 1)", self.eps)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!("delta {} is outside (0, 1)", self.delta)));
        }
        if self.k == 0 {
            return Err(Error::invalid("K must be at least 1"));
        }
        Ok(())
    }

    /// Samples per evaluated point for a validation set of `n` instances.
    pub fn samples(&self, n: usize) -> usize {
        sample_count(self.eps, self.delta, n)
    }
}

/// `⌈(2/ε²)·ln(2N/δ)⌉`
pub fn sample_count(eps: f64, delta: f64, n: usize) -> usize {
    let t = 2.0 / (eps * eps) * (2.0 * n as f64 / delta).ln();
    t.ceil().max(1.0) as usize
}

/// One instance with its ranking resolved.
#[derive(Debug)]
pub struct RankedInstance<'a> {
    pub instance: &'a ValidationInstance,
    /// Candidate position of each rank.
    pub order: Vec<usize>,
    /// Utility of each rank.
    pub utilities: Vec<f64>,
}

impl<'a> RankedInstance<'a> {
    pub fn new(instance: &'a ValidationInstance) -> Self {
        let order = rank_order(&instance.candidates);
        let gold = instance.gold.as_deref();
        let utilities = order
            .iter()
            .map(|&c| candidate_utility(&instance.candidates[c], gold))
            .collect();
        RankedInstance {
            instance,
            order,
            utilities,
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn candidate(&self, rank: usize) -> &Candidate {
        &self.instance.candidates[self.order[rank]]
    }
}

/// A set function over the ranked candidates of one instance, valued in `[0, 1]`.
///
/// `subset` lists ranks in ascending order.
pub trait GeneralUtility: Sync {
    fn evaluate(&self, ranked: &RankedInstance<'_>, subset: &[usize]) -> f64;
}

impl<F> GeneralUtility for F
where
    F: Fn(&RankedInstance<'_>, &[usize]) -> f64 + Sync,
{
    fn evaluate(&self, ranked: &RankedInstance<'_>, subset: &[usize]) -> f64 {
        self(ranked, subset)
    }
}

/// The additive top-K utility.
#[derive(Clone, Copy, Debug)]
pub struct AdditiveTopK {
    pub k: usize,
}

impl GeneralUtility for AdditiveTopK {
    fn evaluate(&self, ranked: &RankedInstance<'_>, subset: &[usize]) -> f64 {
        subset.iter().take(self.k).map(|&r| ranked.utilities[r]).sum::<f64>() / self.k as f64
    }
}

/// 1 if the majority vote over the subset's top-K answers matches gold.
#[derive(Clone, Copy, Debug)]
pub struct MajorityVoteCorrect {
    pub k: usize,
}

impl GeneralUtility for MajorityVoteCorrect {
    fn evaluate(&self, ranked: &RankedInstance<'_>, subset: &[usize]) -> f64 {
        let answers = subset
            .iter()
            .take(self.k)
            .filter_map(|&r| ranked.candidate(r).answer.as_deref());
        match (majority_vote_ranked(answers), ranked.instance.gold.as_deref()) {
            (Some(p), Some(g)) if crate::corpus::answers_match(p, g) => 1.0,
            _ => 0.0,
        }
    }
}

fn point_rng(seed: u64, instance: usize, rank: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((instance as u64) << 32) ^ rank as u64);
    rng
}

fn checked(u: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&u) {
        Ok(u)
    } else {
        Err(Error::UtilityOutOfRange(u))
    }
}

/// Mean sampled marginal contribution of the point at `rank`.
fn estimate_point(
    ranked: &RankedInstance<'_>,
    w: &[f64],
    rank: usize,
    trials: usize,
    util: &dyn GeneralUtility,
    mut rng: ChaCha8Rng,
) -> Result<f64> {
    let m = ranked.len();
    let mut without = Vec::with_capacity(m);
    let mut with = Vec::with_capacity(m);
    let mut sum = 0.0;
    for _ in 0..trials {
        without.clear();
        with.clear();
        for r in 0..m {
            if r == rank {
                with.push(r);
                continue;
            }
            if rng.gen::<f64>() < w[r] {
                without.push(r);
                with.push(r);
            }
        }
        let hi = checked(util.evaluate(ranked, &with))?;
        let lo = checked(util.evaluate(ranked, &without))?;
        sum += hi - lo;
    }
    Ok(sum / trials as f64)
}

/// Per-candidate estimates for one instance, in input order. `n_total` is the
/// validation-set size used for the sample count.
pub fn mcmc_instance_gradients(
    instance: &ValidationInstance,
    weights: &[f64],
    util: &dyn GeneralUtility,
    cfg: &McmcConfig,
    instance_index: usize,
    n_total: usize,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if instance.candidates.is_empty() {
        return Err(Error::EmptyInstance(instance.query_id.clone()));
    }
    let ranked = RankedInstance::new(instance);
    let w: Vec<f64> = ranked.order.iter().map(|&c| weights[c]).collect();
    let b = find_boundary(&w, cfg.k, cfg.eps)?.b;
    let trials = cfg.samples(n_total);
    let live = (b - 1).min(ranked.len());
    let est = (0..live)
        .into_par_iter()
        .map(|r| {
            estimate_point(
                &ranked,
                &w,
                r,
                trials,
                util,
                point_rng(cfg.seed, instance_index, r),
            )
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut out = vec![0.0; ranked.len()];
    for (r, g) in est.into_iter().enumerate() {
        out[ranked.order[r]] = g;
    }
    Ok(out)
}

/// Estimated per-point gradient averaged over the validation set.
pub fn mcmc_gradient(
    set: &EvaluationSet,
    sw: &SourceWeights,
    util: &dyn GeneralUtility,
    cfg: &McmcConfig,
) -> Result<GradientVector> {
    let pw = point_weights(set, sw)?;
    mcmc_gradient_points(set, &pw, util, cfg)
}

pub fn mcmc_gradient_points(
    set: &EvaluationSet,
    point_w: &[f64],
    util: &dyn GeneralUtility,
    cfg: &McmcConfig,
) -> Result<GradientVector> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(Error::EmptySet);
    }
    let n = set.len();
    let per_instance = set
        .instances()
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            let w: Vec<f64> = set.instance_points(i).iter().map(|&p| point_w[p]).collect();
            mcmc_instance_gradients(inst, &w, util, cfg, i, n)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut g = vec![0.0; set.num_points()];
    for (i, est) in per_instance.iter().enumerate() {
        for (&p, v) in set.instance_points(i).iter().zip(est) {
            g[p] += v;
        }
    }
    g.iter_mut().for_each(|v| *v /= n as f64);
    Ok(GradientVector::points(set, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact_grad::instance_gradients;

    fn small() -> ValidationInstance {
        ValidationInstance {
            query_id: "q".into(),
            gold: Some("a".into()),
            candidates: vec![
                Candidate::with_answer("x", "s1", 3.0, "a"),
                Candidate::with_answer("y", "s2", 2.0, "b"),
                Candidate::with_answer("z", "s1", 1.0, "a"),
            ],
        }
    }

    #[test]
    fn sample_count_formula() {
        assert_eq!(sample_count(0.1, 0.05, 100), 1659);
        assert_eq!(sample_count(0.2, 0.1, 1), 150);
    }

    #[test]
    fn constant_utility_gives_zero() {
        let set = EvaluationSet::new(vec![small()]).unwrap();
        let cfg = McmcConfig {
            eps: 0.2,
            delta: 0.1,
            seed: 7,
            k: 1,
        };
        let c = |_: &RankedInstance<'_>, _: &[usize]| 0.4;
        let g = mcmc_gradient_points(&set, &[0.5; 3], &c, &cfg).unwrap();
        assert!(g.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn seeded_runs_repeat() {
        let set = EvaluationSet::new(vec![small(), small()]).unwrap();
        let cfg = McmcConfig {
            eps: 0.3,
            delta: 0.2,
            seed: 99,
            k: 2,
        };
        let u = MajorityVoteCorrect { k: 2 };
        let a = mcmc_gradient_points(&set, &[0.3, 0.6, 0.9], &u, &cfg).unwrap();
        let b = mcmc_gradient_points(&set, &[0.3, 0.6, 0.9], &u, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn out_of_range_utility_errors() {
        let set = EvaluationSet::new(vec![small()]).unwrap();
        let cfg = McmcConfig {
            eps: 0.5,
            delta: 0.5,
            seed: 1,
            k: 1,
        };
        let bad = |_: &RankedInstance<'_>, s: &[usize]| s.len() as f64 * 2.0;
        assert!(matches!(
            mcmc_gradient_points(&set, &[0.5; 3], &bad, &cfg),
            Err(Error::UtilityOutOfRange(_))
        ));
    }

    #[test]
    fn additive_close_to_exact() {
        let inst = small();
        let w = [0.5, 0.5, 0.5];
        let exact = instance_gradients(&inst, &w, 1).unwrap();
        let cfg = McmcConfig {
            eps: 0.05,
            delta: 0.05,
            seed: 0,
            k: 1,
        };
        let mut hits = 0;
        for seed in 0..200 {
            let cfg = McmcConfig { seed, ..cfg };
            let est = mcmc_instance_gradients(&inst, &w, &AdditiveTopK { k: 1 }, &cfg, 0, 1).unwrap();
            if est.iter().zip(&exact).all(|(a, b)| (a - b).abs() <= 0.05) {
                hits += 1;
            }
        }
        assert!(hits >= 190, "{hits} of 200 runs within tolerance");
    }
}
