//! ε-approximate gradients by truncating each ranking at its boundary point.
//!
//! A point at rank `b` can only reach the top-K set if at most `K-1` of the
//! `b-1` points above it are sampled. With `μ_b` the weight mass strictly
//! above `b`, a Chernoff bound gives that probability at most
//! `exp(-(μ_b-K+1)²/(2μ_b))` once `μ_b > K-1`. The boundary is the first rank
//! where that bound drops below ε; gradients at and below it are reported as
//! zero and the points underneath it are dropped from the computation.

use crate::corpus::{rank_order, EvaluationSet, ValidationInstance};
use crate::error::{Error, Result};
use crate::exact_grad::{prepared_gradient, single_instance, GradientVector, Truncation};
use crate::prepared::PreparedSet;
use crate::weights::{point_weights, SourceWeights};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryIndex {
    /// 1-based rank in `1..=M+1`; `M+1` means nothing can be dropped.
    pub b: usize,
    /// Weight mass of the ranks strictly above `b`.
    pub mu_b: f64,
}

#[inline]
fn beyond_reach(mu: f64, k: usize, eps: f64) -> bool {
    let c = (k - 1) as f64;
    mu > c && (-(mu - c) * (mu - c) / (2.0 * mu)).exp() < eps
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("epsilon {eps} is outside (0, 1]")))
    }
}

/// Binary search over prefix sums `mu[b-1] = μ_b`, `b = 1..=M+1`.
pub(crate) fn boundary_from_prefix(mu: &[f64], k: usize, eps: f64) -> BoundaryIndex {
    let idx = mu.partition_point(|&m| !beyond_reach(m, k, eps));
    if idx < mu.len() {
        BoundaryIndex {
            b: idx + 1,
            mu_b: mu[idx],
        }
    } else {
        BoundaryIndex {
            b: mu.len(),
            mu_b: *mu.last().unwrap(),
        }
    }
}

fn prefix_sums(ranked_weights: &[f64]) -> Vec<f64> {
    let mut mu = Vec::with_capacity(ranked_weights.len() + 1);
    let mut acc = 0.0;
    mu.push(0.0);
    for &w in ranked_weights {
        acc += w;
        mu.push(acc);
    }
    mu
}

/// Boundary point of a ranked weight sequence.
pub fn find_boundary(ranked_weights: &[f64], k: usize, eps: f64) -> Result<BoundaryIndex> {
    check_eps(eps)?;
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    Ok(boundary_from_prefix(&prefix_sums(ranked_weights), k, eps))
}

/// Linear-scan reference for [`find_boundary`].
pub fn find_boundary_linear(ranked_weights: &[f64], k: usize, eps: f64) -> Result<BoundaryIndex> {
    check_eps(eps)?;
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    let mut mu = 0.0;
    for b in 1..=ranked_weights.len() {
        if beyond_reach(mu, k, eps) {
            return Ok(BoundaryIndex { b, mu_b: mu });
        }
        mu += ranked_weights[b - 1];
    }
    // b = M+1 is returned whether or not it satisfies the condition
    Ok(BoundaryIndex {
        b: ranked_weights.len() + 1,
        mu_b: mu,
    })
}

/// Boundary of one instance given per-candidate weights in input order.
pub fn instance_boundary(instance: &ValidationInstance, weights: &[f64], k: usize, eps: f64) -> Result<BoundaryIndex> {
    let order = rank_order(&instance.candidates);
    let ranked: Vec<f64> = order.iter().map(|&c| weights[c]).collect();
    find_boundary(&ranked, k, eps)
}

/// `Ĝ(x, w_i)` for each candidate of one instance, in input order.
pub fn approx_instance_gradients(
    instance: &ValidationInstance,
    weights: &[f64],
    k: usize,
    eps: f64,
) -> Result<Vec<f64>> {
    check_eps(eps)?;
    single_instance(instance, weights, k, Truncation::Epsilon(eps))
}

/// ε-approximate per-point gradient averaged over the validation set.
pub fn approx_gradient(set: &EvaluationSet, sw: &SourceWeights, k: usize, eps: f64) -> Result<GradientVector> {
    let pw = point_weights(set, sw)?;
    approx_gradient_points(set, &pw, k, eps)
}

pub fn approx_gradient_points(set: &EvaluationSet, point_w: &[f64], k: usize, eps: f64) -> Result<GradientVector> {
    check_eps(eps)?;
    let prep = PreparedSet::from_set(set);
    let g = prepared_gradient(&prep, point_w, k, Truncation::Epsilon(eps))?;
    Ok(GradientVector::points(set, g))
}

/// Upper bound on the boundary index when every weight is at least `lambda`.
pub fn boundary_index_bound(lambda: f64, k: usize, eps: f64) -> f64 {
    4.0 / lambda * (1.0 / eps).ln() + (2.0 * k as f64 - 2.0) / lambda + 1.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Candidate;
    use crate::exact_grad::instance_gradients;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_never_truncate() {
        let b = find_boundary(&[0.0; 20], 3, 0.01).unwrap();
        assert_eq!(b.b, 21);
        assert_eq!(b.mu_b, 0.0);
    }

    #[test]
    fn k1_unit_weights() {
        let b = find_boundary(&[1.0; 5], 1, 1.0).unwrap();
        assert_eq!(b, BoundaryIndex { b: 2, mu_b: 1.0 });
    }

    #[test]
    fn k10_half_weights() {
        // (mu-9)^2/(2mu) > ln 100 first holds at mu = 24, i.e. b - 1 = 48
        let b = find_boundary(&[0.5; 100], 10, 0.01).unwrap();
        assert_eq!(b.b, 49);
        assert_eq!(b.mu_b, 24.0);
    }

    #[test]
    fn rejects_bad_eps() {
        assert!(find_boundary(&[0.5], 1, 0.0).is_err());
        assert!(find_boundary(&[0.5], 1, 1.5).is_err());
    }

    fn random_instance(rng: &mut ChaCha8Rng, m: usize) -> (ValidationInstance, Vec<f64>) {
        let inst = ValidationInstance {
            query_id: "q".into(),
            gold: None,
            candidates: (0..m)
                .map(|i| {
                    let u = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
                    Candidate::with_utility(&format!("p{i}"), "s", rng.gen(), u)
                })
                .collect(),
        };
        let w = (0..m).map(|_| rng.gen_range(0.2..=1.0)).collect();
        (inst, w)
    }

    #[test]
    fn full_prefix_when_nothing_truncates() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (inst, _) = random_instance(&mut rng, 12);
        let w = vec![0.0; 12];
        assert_eq!(
            approx_instance_gradients(&inst, &w, 3, 1.0).unwrap(),
            instance_gradients(&inst, &w, 3).unwrap()
        );
    }

    #[test]
    fn within_eps_m200() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (inst, _) = random_instance(&mut rng, 200);
        let w = vec![0.5; 200];
        let exact = instance_gradients(&inst, &w, 5).unwrap();
        let approx = approx_instance_gradients(&inst, &w, 5, 1e-3).unwrap();
        let err = exact
            .iter()
            .zip(&approx)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-3, "max error {err}");
    }

    #[test]
    fn below_boundary_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (inst, w) = random_instance(&mut rng, 80);
        let b = instance_boundary(&inst, &w, 3, 1e-2).unwrap();
        assert!(b.b <= 80);
        let g = approx_instance_gradients(&inst, &w, 3, 1e-2).unwrap();
        let order = rank_order(&inst.candidates);
        for (r, &c) in order.iter().enumerate() {
            if r + 1 >= b.b {
                assert_eq!(g[c], 0.0);
            }
        }
    }

    proptest! {
        #[test]
        fn binary_search_matches_scan(
            w in prop::collection::vec(0.0f64..=1.0, 0..120),
            k in 1usize..=12,
            eps in prop::sample::select(vec![1.0, 0.5, 1e-1, 1e-2, 1e-3, 1e-6]),
        ) {
            prop_assert_eq!(find_boundary(&w, k, eps).unwrap(), find_boundary_linear(&w, k, eps).unwrap());
        }

        #[test]
        fn boundary_monotone(
            w in prop::collection::vec(0.0f64..=1.0, 0..120),
            k in 1usize..=10,
        ) {
            let epss = [1e-6, 1e-4, 1e-2, 0.5, 1.0];
            for pair in epss.windows(2) {
                let tight = find_boundary(&w, k, pair[0]).unwrap().b;
                let loose = find_boundary(&w, k, pair[1]).unwrap().b;
                prop_assert!(loose <= tight);
            }
            let now = find_boundary(&w, k, 1e-3).unwrap().b;
            let bigger_k = find_boundary(&w, k + 1, 1e-3).unwrap().b;
            prop_assert!(bigger_k >= now);
        }

        #[test]
        fn boundary_obeys_lambda_bound(
            lambda in 0.05f64..=1.0,
            extra in prop::collection::vec(0.0f64..=1.0, 400),
            k in 1usize..=10,
            eps in prop::sample::select(vec![1e-1, 1e-2, 1e-3, 1e-6]),
        ) {
            let w: Vec<f64> = extra.iter().map(|x| lambda + (1.0 - lambda) * x).collect();
            let b = find_boundary(&w, k, eps).unwrap();
            let bound = boundary_index_bound(lambda, k, eps);
            if bound < w.len() as f64 {
                prop_assert!((b.b as f64) <= bound, "b = {} bound = {}", b.b, bound);
            }
        }
    }
}
