//! Poisson-binomial subset probabilities and boundary value probabilities.
//!
//! Ranks are 1-based in the accessors to match the usual notation:
//! `prefix(k, i)` is the probability that exactly `k` of points `1..=i` are
//! sampled, `suffix(k, i)` the same for points `i..=M`, and `bvp(k, i, e)` the
//! probability that a subset of points `i..=M` has its `k`-th ranked member
//! carrying utility value `e`. All updates are convex combinations, so plain
//! `f64` linear space is sufficient.

use crate::corpus::UtilityValueSet;
use crate::error::{Error, Result};

fn check_weights(weights: &[f64]) -> Result<()> {
    match weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
        Some(&w) => Err(Error::WeightOutOfRange(w)),
        None => Ok(()),
    }
}

/// Prefix and suffix subset-probability tables for sizes `0..=K`.
#[derive(Clone, Debug, Default)]
pub struct SubsetProbTables {
    k: usize,
    m: usize,
    // row i in 0..=m: P_.(1, i)
    prefix: Vec<f64>,
    // row s in 0..=m: P_.(s + 1, m)
    suffix: Vec<f64>,
}

impl SubsetProbTables {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Rebuilds in place, reusing the allocation.
    pub fn rebuild(&mut self, weights: &[f64], k: usize) -> Result<()> {
        if k == 0 {
            return Err(Error::invalid("K must be at least 1"));
        }
        check_weights(weights)?;
        self.rebuild_unchecked(weights, k);
        Ok(())
    }

    pub(crate) fn rebuild_unchecked(&mut self, weights: &[f64], k: usize) {
        let m = weights.len();
        let w = k + 1;
        self.k = k;
        self.m = m;
        self.prefix.clear();
        self.prefix.resize((m + 1) * w, 0.0);
        self.suffix.clear();
        self.suffix.resize((m + 1) * w, 0.0);

        self.prefix[0] = 1.0;
        for i in 1..=m {
            let p = weights[i - 1];
            let (prev, cur) = self.prefix[(i - 1) * w..(i + 1) * w].split_at_mut(w);
            cur[0] = prev[0] * (1.0 - p);
            for j in 1..=k {
                cur[j] = prev[j] * (1.0 - p) + prev[j - 1] * p;
            }
        }

        self.suffix[m * w] = 1.0;
        for s in (0..m).rev() {
            let p = weights[s];
            let (cur, next) = self.suffix[s * w..(s + 2) * w].split_at_mut(w);
            cur[0] = next[0] * (1.0 - p);
            for j in 1..=k {
                cur[j] = next[j] * (1.0 - p) + next[j - 1] * p;
            }
        }
    }

    /// `P_j(1, i)` for `i` in `0..=M` (`i = 0` is the empty range).
    pub fn prefix(&self, j: usize, i: usize) -> f64 {
        self.prefix_row(i)[j]
    }

    /// `P_j(i, M)` for `i` in `1..=M+1` (`i = M+1` is the empty range).
    pub fn suffix(&self, j: usize, i: usize) -> f64 {
        self.suffix_row(i)[j]
    }

    pub fn prefix_row(&self, i: usize) -> &[f64] {
        let w = self.k + 1;
        &self.prefix[i * w..(i + 1) * w]
    }

    pub fn suffix_row(&self, i: usize) -> &[f64] {
        debug_assert!(i >= 1);
        let w = self.k + 1;
        &self.suffix[(i - 1) * w..i * w]
    }
}

pub fn build_subset_prob(weights: &[f64], k: usize) -> Result<SubsetProbTables> {
    let mut t = SubsetProbTables::default();
    t.rebuild(weights, k)?;
    Ok(t)
}

/// Boundary value probabilities `B_k(i, e)` for `k` in `1..=K`, `i` in `1..=M+1`.
#[derive(Clone, Debug, Default)]
pub struct BvpTable {
    k: usize,
    v: usize,
    m: usize,
    data: Vec<f64>,
}

impl BvpTable {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_values(&self) -> usize {
        self.v
    }

    /// Rebuilds from dense value indices (each `< num_values`).
    pub(crate) fn rebuild_indexed(
        &mut self,
        value_index: &[u16],
        weights: &[f64],
        k: usize,
        num_values: usize,
    ) {
        let m = weights.len();
        debug_assert_eq!(value_index.len(), m);
        let row = k * num_values;
        self.k = k;
        self.v = num_values;
        self.m = m;
        self.data.clear();
        self.data.resize((m + 1) * row, 0.0);

        for s in (0..m).rev() {
            let p = weights[s];
            let q = 1.0 - p;
            let e_s = value_index[s] as usize;
            let (cur, next) = self.data[s * row..(s + 2) * row].split_at_mut(row);
            for e in 0..num_values {
                let hit = if e == e_s { p } else { 0.0 };
                cur[e] = next[e] * q + hit;
            }
            for kk in 1..k {
                let (lo, hi) = (kk * num_values, (kk - 1) * num_values);
                for e in 0..num_values {
                    cur[lo + e] = next[lo + e] * q + next[hi + e] * p;
                }
            }
        }
    }

    /// `B_k(i, e)` with 1-based `k` and `i`, and `e` a dense value index.
    pub fn get(&self, k: usize, i: usize, e: usize) -> f64 {
        self.row(i, k)[e]
    }

    /// All values of `B_k(i, ·)`.
    pub fn row(&self, i: usize, k: usize) -> &[f64] {
        debug_assert!(k >= 1 && k <= self.k && i >= 1 && i <= self.m + 1);
        let start = ((i - 1) * self.k + (k - 1)) * self.v;
        &self.data[start..start + self.v]
    }
}

pub fn build_bvp(
    ranked_utilities: &[f64],
    weights: &[f64],
    k: usize,
    values: &UtilityValueSet,
) -> Result<BvpTable> {
    if ranked_utilities.len() != weights.len() {
        return Err(Error::invalid("utilities and weights differ in length"));
    }
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    check_weights(weights)?;
    let idx = ranked_utilities
        .iter()
        .map(|&u| {
            values
                .index_of(u)
                .map(|i| i as u16)
                .ok_or(Error::UnknownUtility(u))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut t = BvpTable::default();
    t.rebuild_indexed(&idx, weights, k, values.len());
    Ok(t)
}
