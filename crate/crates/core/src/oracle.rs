//! Brute-force references: full subset enumeration of the multilinear
//! extension of the additive top-K utility and of its gradient.
//!
//! Everything here is exponential and exists to check the fast paths.

use crate::corpus::{candidate_utility, rank_order, EvaluationSet, ValidationInstance};
use crate::error::{Error, Result};
use crate::weights::SourceWeights;

#[derive(Clone, Copy, Debug)]
pub struct OracleLimits {
    pub max_points: usize,
    pub max_sources: usize,
}

impl Default for OracleLimits {
    fn default() -> Self {
        OracleLimits {
            max_points: 20,
            max_sources: 16,
        }
    }
}

impl OracleLimits {
    fn check_points(&self, m: usize) -> Result<()> {
        if m > self.max_points {
            return Err(Error::TooLarge {
                what: "point enumeration",
                needed: m,
                limit: self.max_points,
            });
        }
        Ok(())
    }

    fn check_sources(&self, s: usize) -> Result<()> {
        if s > self.max_sources {
            return Err(Error::TooLarge {
                what: "source enumeration",
                needed: s,
                limit: self.max_sources,
            });
        }
        Ok(())
    }
}

/// Additive top-K utility of a subset given as a bitmask over ranked positions.
pub fn topk_utility_mask(ranked_utils: &[f64], mask: u64, k: usize) -> f64 {
    let mut total = 0.0;
    let mut taken = 0;
    for (r, &u) in ranked_utils.iter().enumerate() {
        if taken == k {
            break;
        }
        if mask >> r & 1 == 1 {
            total += u;
            taken += 1;
        }
    }
    total / k as f64
}

fn mask_prob(weights: &[f64], mask: u64, skip: Option<usize>) -> f64 {
    let mut p = 1.0;
    for (r, &w) in weights.iter().enumerate() {
        if Some(r) == skip {
            continue;
        }
        p *= if mask >> r & 1 == 1 { w } else { 1.0 - w };
    }
    p
}

/// Multilinear extension of a set function over `m` ranked elements.
pub fn multilinear_general(weights: &[f64], util: impl Fn(u64) -> f64) -> f64 {
    let m = weights.len();
    (0u64..1 << m)
        .map(|mask| util(mask) * mask_prob(weights, mask, None))
        .sum()
}

/// Gradient of the multilinear extension of an arbitrary set function.
pub fn gradient_general(weights: &[f64], util: impl Fn(u64) -> f64) -> Vec<f64> {
    let m = weights.len();
    (0..m)
        .map(|i| {
            let bit = 1u64 << i;
            (0u64..1 << m)
                .filter(|mask| mask & bit == 0)
                .map(|mask| (util(mask | bit) - util(mask)) * mask_prob(weights, mask, Some(i)))
                .sum()
        })
        .collect()
}

fn ranked(instance: &ValidationInstance) -> (Vec<usize>, Vec<f64>) {
    let order = rank_order(&instance.candidates);
    let gold = instance.gold.as_deref();
    let utils = order
        .iter()
        .map(|&c| candidate_utility(&instance.candidates[c], gold))
        .collect();
    (order, utils)
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    Ok(())
}

/// `U(S)` for a subset of candidate positions (input order).
pub fn brute_utility(instance: &ValidationInstance, subset: &[usize], k: usize) -> Result<f64> {
    check_k(k)?;
    let m = instance.candidates.len();
    let (order, utils) = ranked(instance);
    let mut pos = vec![0; m];
    for (r, &c) in order.iter().enumerate() {
        pos[c] = r;
    }
    let mut in_set = vec![false; m];
    for &c in subset {
        if c >= m {
            return Err(Error::invalid(format!("subset index {c} out of range")));
        }
        in_set[pos[c]] = true;
    }
    let total: f64 = utils
        .iter()
        .zip(&in_set)
        .filter(|(_, &inc)| inc)
        .take(k)
        .map(|(u, _)| u)
        .sum();
    Ok(total / k as f64)
}

/// Multilinear extension with weights aligned to the input candidate order.
pub fn brute_multilinear(instance: &ValidationInstance, weights: &[f64], k: usize) -> Result<f64> {
    brute_multilinear_with(instance, weights, k, &OracleLimits::default())
}

pub fn brute_multilinear_with(
    instance: &ValidationInstance,
    weights: &[f64],
    k: usize,
    limits: &OracleLimits,
) -> Result<f64> {
    check_k(k)?;
    let m = instance.candidates.len();
    limits.check_points(m)?;
    if weights.len() != m {
        return Err(Error::invalid("weights do not match candidates"));
    }
    let (order, utils) = ranked(instance);
    let w: Vec<f64> = order.iter().map(|&c| weights[c]).collect();
    Ok(multilinear_general(&w, |mask| topk_utility_mask(&utils, mask, k)))
}

/// Per-candidate gradient, aligned to the input candidate order.
pub fn brute_gradient(instance: &ValidationInstance, weights: &[f64], k: usize) -> Result<Vec<f64>> {
    brute_gradient_with(instance, weights, k, &OracleLimits::default())
}

pub fn brute_gradient_with(
    instance: &ValidationInstance,
    weights: &[f64],
    k: usize,
    limits: &OracleLimits,
) -> Result<Vec<f64>> {
    check_k(k)?;
    let m = instance.candidates.len();
    limits.check_points(m)?;
    if weights.len() != m {
        return Err(Error::invalid("weights do not match candidates"));
    }
    let (order, utils) = ranked(instance);
    let w: Vec<f64> = order.iter().map(|&c| weights[c]).collect();
    let g = gradient_general(&w, |mask| topk_utility_mask(&utils, mask, k));
    let mut out = vec![0.0; m];
    for (r, &c) in order.iter().enumerate() {
        out[c] = g[r];
    }
    Ok(out)
}

/// Set-level gradient per point index: mean of per-instance gradients.
pub fn brute_gradient_set(set: &EvaluationSet, point_w: &[f64], k: usize) -> Result<Vec<f64>> {
    if set.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut g = vec![0.0; set.num_points()];
    for (i, inst) in set.instances().iter().enumerate() {
        let pts = set.instance_points(i);
        let w: Vec<f64> = pts.iter().map(|&p| point_w[p]).collect();
        let gi = brute_gradient(inst, &w, k)?;
        for (&p, v) in pts.iter().zip(gi) {
            g[p] += v;
        }
    }
    let n = set.len() as f64;
    Ok(g.into_iter().map(|v| v / n).collect())
}

/// Set-level multilinear extension averaged over instances.
pub fn brute_multilinear_set(set: &EvaluationSet, point_w: &[f64], k: usize) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut total = 0.0;
    for (i, inst) in set.instances().iter().enumerate() {
        let w: Vec<f64> = set.instance_points(i).iter().map(|&p| point_w[p]).collect();
        total += brute_multilinear(inst, &w, k)?;
    }
    Ok(total / set.len() as f64)
}

/// Source-level gradient where each source is included or excluded as a
/// whole. Returns `(source_key, gradient)` for the sources present in the
/// instance, in first-appearance order.
pub fn brute_grouped_gradient(
    instance: &ValidationInstance,
    sw: &SourceWeights,
    k: usize,
) -> Result<Vec<(String, f64)>> {
    brute_grouped_gradient_with(instance, sw, k, &OracleLimits::default())
}

pub fn brute_grouped_gradient_with(
    instance: &ValidationInstance,
    sw: &SourceWeights,
    k: usize,
    limits: &OracleLimits,
) -> Result<Vec<(String, f64)>> {
    check_k(k)?;
    let (order, utils) = ranked(instance);
    let mut keys: Vec<String> = Vec::new();
    for c in &instance.candidates {
        if !keys.contains(&c.source_key) {
            keys.push(c.source_key.clone());
        }
    }
    limits.check_sources(keys.len())?;
    let sw_local: Vec<f64> = keys
        .iter()
        .map(|k| sw.get(k).ok_or_else(|| Error::UnknownSource(k.clone())))
        .collect::<Result<_>>()?;
    let src_of_rank: Vec<usize> = order
        .iter()
        .map(|&c| {
            let key = &instance.candidates[c].source_key;
            keys.iter().position(|k| k == key).unwrap()
        })
        .collect();
    let points_mask = |src_mask: u64| -> u64 {
        src_of_rank
            .iter()
            .enumerate()
            .filter(|(_, &s)| src_mask >> s & 1 == 1)
            .fold(0u64, |acc, (r, _)| acc | 1 << r)
    };
    let g = gradient_general(&sw_local, |src_mask| {
        topk_utility_mask(&utils, points_mask(src_mask), k)
    });
    Ok(keys.into_iter().zip(g).collect())
}

/// Set-level grouped gradient aligned to the set's source registry.
pub fn brute_grouped_gradient_set(set: &EvaluationSet, sw: &SourceWeights, k: usize) -> Result<Vec<f64>> {
    if set.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut g = vec![0.0; set.sources().len()];
    for inst in set.instances() {
        for (key, v) in brute_grouped_gradient(inst, sw, k)? {
            g[set.sources().get(&key).unwrap()] += v;
        }
    }
    let n = set.len() as f64;
    Ok(g.into_iter().map(|v| v / n).collect())
}
