//! Exact source-level gradients when every source is included or excluded as
//! a whole.
//!
//! For a pivot point `t` the top-K utility is fixed by the tally `γ` of
//! sampled points ranked strictly above `t`: if `t` is sampled and `|γ| = K-1`
//! then `U = (Σ_v γ_v·v + u_t)/K`. A count DP over sources gives the
//! probability of every reachable tally. An extra "absent" pivot covers
//! samples with fewer than `K` points, where the tally is the whole sample.
//! The gradient for source `i` is `E[U | i in] - E[U | i out]`.
//!
//! This is a small-scale reference path. Its cost grows with the number of
//! reachable tallies, which is capped.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::corpus::{candidate_utility, rank_order, EvaluationSet, UtilityValueSet, ValidationInstance};
use crate::error::{Error, Result};
use crate::exact_grad::GradientVector;
use crate::weights::SourceWeights;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GroupedLimits {
    /// Largest number of distinct tally vectors an instance may need.
    pub max_tallies: usize,
}

impl Default for GroupedLimits {
    fn default() -> Self {
        GroupedLimits { max_tallies: 1 << 16 }
    }
}

/// Tallies with total at most `K-1` over `V` values: `C(K-1+V, V)`.
fn tally_space(k: usize, v: usize) -> usize {
    let n = k - 1 + v;
    let mut c: u128 = 1;
    for i in 0..v {
        c = c * (n - i) as u128 / (i + 1) as u128;
        if c > usize::MAX as u128 {
            return usize::MAX;
        }
    }
    c as usize
}

struct Layout {
    /// Local source of each rank.
    src: Vec<usize>,
    /// Value index of each rank.
    vidx: Vec<usize>,
    values: Vec<f64>,
    num_sources: usize,
}

type Tally = Vec<u16>;

/// Probability of each tally with total `< k`, where source `j` is included
/// with probability `q[j]` and then contributes `counts[j]`.
fn count_dp(counts: &[Vec<u16>], q: &[f64], k: usize, v: usize) -> BTreeMap<Tally, f64> {
    let mut cur: BTreeMap<Tally, f64> = BTreeMap::new();
    cur.insert(vec![0; v], 1.0);
    for (cj, &qj) in counts.iter().zip(q) {
        let add: usize = cj.iter().map(|&c| c as usize).sum();
        let mut next = BTreeMap::new();
        for (g, &p) in &cur {
            if qj < 1.0 {
                *next.entry(g.clone()).or_insert(0.0) += p * (1.0 - qj);
            }
            if qj > 0.0 {
                let total: usize = g.iter().map(|&c| c as usize).sum::<usize>() + add;
                if total < k {
                    let g2: Tally = g.iter().zip(cj).map(|(a, b)| a + b).collect();
                    *next.entry(g2).or_insert(0.0) += p * qj;
                }
            }
        }
        cur = next;
    }
    cur
}

fn tally_value(g: &[u16], values: &[f64]) -> f64 {
    g.iter().zip(values).map(|(&c, &v)| c as f64 * v).sum()
}

/// `E[U]` with source `j` included independently with probability `p[j]`.
fn expected_utility(l: &Layout, p: &[f64], k: usize) -> f64 {
    let v = l.values.len();
    let kf = k as f64;
    let mut total = 0.0;
    let mut above = vec![vec![0u16; v]; l.num_sources];
    for t in 0..l.src.len() {
        let st = l.src[t];
        if p[st] > 0.0 {
            let mut q = p.to_vec();
            q[st] = 1.0;
            let dist = count_dp(&above, &q, k, v);
            let ut = l.values[l.vidx[t]];
            let mass: f64 = dist
                .iter()
                .filter(|(g, _)| g.iter().map(|&c| c as usize).sum::<usize>() == k - 1)
                .map(|(g, &pr)| pr * (tally_value(g, &l.values) + ut))
                .sum();
            total += p[st] * mass / kf;
        }
        above[st][l.vidx[t]] += 1;
    }
    // fewer than K points sampled
    let dist = count_dp(&above, p, k, v);
    total += dist.iter().map(|(g, &pr)| pr * tally_value(g, &l.values)).sum::<f64>() / kf;
    total
}

fn layout(instance: &ValidationInstance) -> (Layout, Vec<String>) {
    let order = rank_order(&instance.candidates);
    let gold = instance.gold.as_deref();
    let utils: Vec<f64> = order
        .iter()
        .map(|&c| candidate_utility(&instance.candidates[c], gold))
        .collect();
    let vs = UtilityValueSet::from_utilities(&utils);
    let mut keys: Vec<String> = Vec::new();
    for c in &instance.candidates {
        if !keys.contains(&c.source_key) {
            keys.push(c.source_key.clone());
        }
    }
    let src = order
        .iter()
        .map(|&c| keys.iter().position(|k| *k == instance.candidates[c].source_key).unwrap())
        .collect();
    let vidx = utils.iter().map(|&u| vs.index_of(u).unwrap()).collect();
    let l = Layout {
        src,
        vidx,
        values: vs.values().to_vec(),
        num_sources: keys.len(),
    };
    (l, keys)
}

/// Source-level gradients for one instance, keyed by source in order of
/// first appearance.
pub fn grouped_instance_gradients(
    instance: &ValidationInstance,
    sw: &SourceWeights,
    k: usize,
) -> Result<Vec<(String, f64)>> {
    grouped_instance_gradients_with(instance, sw, k, &GroupedLimits::default())
}

pub fn grouped_instance_gradients_with(
    instance: &ValidationInstance,
    sw: &SourceWeights,
    k: usize,
    limits: &GroupedLimits,
) -> Result<Vec<(String, f64)>> {
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    if instance.candidates.is_empty() {
        return Err(Error::EmptyInstance(instance.query_id.clone()));
    }
    let (l, keys) = layout(instance);
    let needed = tally_space(k, l.values.len());
    if needed > limits.max_tallies {
        return Err(Error::TooLarge {
            what: "tally vectors",
            needed,
            limit: limits.max_tallies,
        });
    }
    let p: Vec<f64> = keys
        .iter()
        .map(|key| sw.get(key).ok_or_else(|| Error::UnknownSource(key.clone())))
        .collect::<Result<_>>()?;
    Ok(keys
        .iter()
        .enumerate()
        .map(|(i, key)| {
            let mut q = p.clone();
            q[i] = 1.0;
            let with = expected_utility(&l, &q, k);
            q[i] = 0.0;
            let without = expected_utility(&l, &q, k);
            (key.clone(), with - without)
        })
        .collect())
}

/// Source-level gradient averaged over the validation set.
pub fn grouped_gradient(set: &EvaluationSet, sw: &SourceWeights, k: usize) -> Result<GradientVector> {
    grouped_gradient_with(set, sw, k, &GroupedLimits::default())
}

pub fn grouped_gradient_with(
    set: &EvaluationSet,
    sw: &SourceWeights,
    k: usize,
    limits: &GroupedLimits,
) -> Result<GradientVector> {
    if set.is_empty() {
        return Err(Error::EmptySet);
    }
    let per = set
        .instances()
        .par_iter()
        .map(|inst| grouped_instance_gradients_with(inst, sw, k, limits))
        .collect::<Result<Vec<_>>>()?;
    let mut g = vec![0.0; set.sources().len()];
    for inst in per {
        for (key, v) in inst {
            g[set.sources().get(&key).unwrap()] += v;
        }
    }
    let n = set.len() as f64;
    g.iter_mut().for_each(|v| *v /= n);
    Ok(GradientVector::sources(set, g))
}
