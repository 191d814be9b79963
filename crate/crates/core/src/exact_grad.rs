//! Exact gradients of the multilinear extension for the additive top-K utility.
//!
//! For a point at rank `i` the per-instance gradient splits into the case
//! where fewer than `K` other points are sampled (the point simply joins the
//! top-K) and the case where it expels the current `K`-th member. Both reduce
//! to sums over prefix subset probabilities, suffix subset probabilities and
//! boundary value probabilities; see [`crate::pb_tables`].
//!
//! The inner double sum of the first case is folded into a cumulative suffix
//! sum, so each point costs `O(K·V)` once the tables are built.

use rayon::prelude::*;

use crate::approx::boundary_from_prefix;
use crate::corpus::{EvaluationSet, ValidationInstance};
use crate::error::{Error, Result};
use crate::pb_tables::{BvpTable, SubsetProbTables};
use crate::prepared::{InstanceView, PreparedSet};
use crate::weights::{point_weights, SourceWeights};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradientLevel {
    Point,
    Source,
}

/// Gradient values with the point ids or source keys they belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientVector {
    pub level: GradientLevel,
    pub keys: Vec<String>,
    pub values: Vec<f64>,
}

impl GradientVector {
    pub(crate) fn points(set: &EvaluationSet, values: Vec<f64>) -> Self {
        GradientVector {
            level: GradientLevel::Point,
            keys: set.points().keys().to_vec(),
            values,
        }
    }

    pub(crate) fn sources(set: &EvaluationSet, values: Vec<f64>) -> Self {
        GradientVector {
            level: GradientLevel::Source,
            keys: set.sources().keys().to_vec(),
            values,
        }
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.keys.iter().position(|k| k == key).map(|i| self.values[i])
    }

    pub fn max_abs_diff(&self, other: &[f64]) -> f64 {
        self.values
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Mean of point gradients within each source.
    pub fn source_means(&self, set: &EvaluationSet) -> GradientVector {
        assert_eq!(self.level, GradientLevel::Point);
        let ns = set.sources().len();
        let mut sum = vec![0.0; ns];
        let mut cnt = vec![0usize; ns];
        for (&s, &g) in set.point_sources().iter().zip(&self.values) {
            sum[s] += g;
            cnt[s] += 1;
        }
        let values = sum
            .into_iter()
            .zip(cnt)
            .map(|(s, c)| if c == 0 { 0.0 } else { s / c as f64 })
            .collect();
        GradientVector::sources(set, values)
    }
}

/// How far down the ranking each instance is evaluated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Truncation {
    Exact,
    /// Cut at the boundary point for this ε.
    Epsilon(f64),
}

impl Truncation {
    pub(crate) fn validate(self) -> Result<()> {
        match self {
            Truncation::Exact => Ok(()),
            Truncation::Epsilon(eps) if eps > 0.0 && eps <= 1.0 => Ok(()),
            Truncation::Epsilon(eps) => Err(Error::invalid(format!("epsilon {eps} is outside (0, 1]"))),
        }
    }
}

/// Per-thread buffers reused across instances.
#[derive(Default, Debug)]
pub(crate) struct Scratch {
    weights: Vec<f64>,
    mu: Vec<f64>,
    cum: Vec<f64>,
    diff: Vec<f64>,
    tables: SubsetProbTables,
    bvp: BvpTable,
}

/// Writes `G(x, w_i)` for every ranked position of `view` into `out`.
/// `w` holds the ranked weights of the same positions.
pub(crate) fn ranked_kernel(view: InstanceView<'_>, w: &[f64], k: usize, out: &mut [f64], s: &mut Scratch) {
    let m = view.len();
    let nv = view.values.len();
    s.tables.rebuild_unchecked(w, k);
    s.bvp.rebuild_indexed(view.value_index, w, k, nv);
    s.cum.resize(k, 0.0);
    s.diff.resize(nv, 0.0);
    let inv_k = 1.0 / k as f64;

    for p in 0..m {
        let u = view.utilities[p];
        // P_.(1, i-1) and P_.(i+1, M) for 1-based rank i = p + 1
        let pre = s.tables.prefix_row(p);
        let suf = s.tables.suffix_row(p + 2);
        let mut acc = 0.0;
        for (x, c) in s.cum.iter_mut().enumerate() {
            acc += suf[x];
            *c = acc;
        }
        for (d, &e) in s.diff.iter_mut().zip(view.values) {
            *d = u - e;
        }
        let mut g = 0.0;
        for j in 0..k {
            // fewer than K others sampled: the point joins without expelling
            let mut inner = u * s.cum[k - 1 - j];
            // j others above, the (K-j)-th below is expelled
            let b = s.bvp.row(p + 2, k - j);
            for (d, bv) in s.diff.iter().zip(b) {
                inner += d * bv;
            }
            g += pre[j] * inner;
        }
        out[p] = g * inv_k;
    }
}

/// Gradient of one ranked instance under the given truncation.
pub(crate) fn instance_kernel(
    view: InstanceView<'_>,
    point_w: &[f64],
    k: usize,
    trunc: Truncation,
    out: &mut [f64],
    s: &mut Scratch,
) {
    let m = view.len();
    let mut weights = std::mem::take(&mut s.weights);
    weights.clear();
    weights.extend(view.points.iter().map(|&p| point_w[p as usize]));

    let (len, zero_at) = match trunc {
        Truncation::Exact => (m, None),
        Truncation::Epsilon(eps) => {
            s.mu.clear();
            s.mu.push(0.0);
            let mut acc = 0.0;
            for &w in &weights {
                acc += w;
                s.mu.push(acc);
            }
            let b = boundary_from_prefix(&s.mu, k, eps).b;
            if b <= m {
                (b, Some(b - 1))
            } else {
                (m, None)
            }
        }
    };

    let head = InstanceView {
        points: &view.points[..len],
        utilities: &view.utilities[..len],
        value_index: &view.value_index[..len],
        values: view.values,
    };
    ranked_kernel(head, &weights[..len], k, &mut out[..len], s);
    if let Some(z) = zero_at {
        out[z] = 0.0;
    }
    out[len..].iter_mut().for_each(|g| *g = 0.0);
    s.weights = weights;
}

const BLOCK: usize = 64;

/// Per-slot gradients for every instance (not yet averaged). Slot order is
/// the prepared (ranked) order. Independent of the rayon thread count.
pub fn slot_gradients(prep: &PreparedSet, point_w: &[f64], k: usize, trunc: Truncation, out: &mut [f64]) {
    assert_eq!(out.len(), prep.num_slots());
    assert_eq!(point_w.len(), prep.num_points());
    let n = prep.num_instances();
    let offsets = prep.offsets();
    let mut blocks = Vec::with_capacity(n / BLOCK + 1);
    let mut rest = out;
    let mut start = 0;
    while start < n {
        let end = (start + BLOCK).min(n);
        let (head, tail) = rest.split_at_mut(offsets[end] - offsets[start]);
        blocks.push((start, end, head));
        rest = tail;
        start = end;
    }
    blocks
        .into_par_iter()
        .for_each_init(Scratch::default, |s, (a, b, buf)| {
            let base = offsets[a];
            for i in a..b {
                let view = prep.instance(i);
                let r = offsets[i] - base..offsets[i + 1] - base;
                instance_kernel(view, point_w, k, trunc, &mut buf[r], s);
            }
        });
}

/// Sums slot gradients into points in instance order, then divides by N.
pub fn reduce_to_points(prep: &PreparedSet, slots: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|g| *g = 0.0);
    for (&p, &g) in prep.slot_points().iter().zip(slots) {
        out[p as usize] += g;
    }
    let n = prep.num_instances() as f64;
    out.iter_mut().for_each(|g| *g /= n);
}

pub(crate) fn check_common(prep: &PreparedSet, point_w: &[f64], k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    if prep.num_instances() == 0 {
        return Err(Error::EmptySet);
    }
    if point_w.len() != prep.num_points() {
        return Err(Error::invalid(format!(
            "expected {} point weights, got {}",
            prep.num_points(),
            point_w.len()
        )));
    }
    if let Some(&w) = point_w.iter().find(|w| !(0.0..=1.0).contains(*w)) {
        return Err(Error::WeightOutOfRange(w));
    }
    for i in 0..prep.num_instances() {
        if prep.instance(i).is_empty() {
            return Err(Error::EmptyInstance(format!("#{i}")));
        }
    }
    Ok(())
}

/// Averaged per-point gradient over a prepared set.
pub fn prepared_gradient(prep: &PreparedSet, point_w: &[f64], k: usize, trunc: Truncation) -> Result<Vec<f64>> {
    check_common(prep, point_w, k)?;
    trunc.validate()?;
    let mut slots = vec![0.0; prep.num_slots()];
    slot_gradients(prep, point_w, k, trunc, &mut slots);
    let mut g = vec![0.0; prep.num_points()];
    reduce_to_points(prep, &slots, &mut g);
    Ok(g)
}

/// Gradient of one instance, aligned to its input candidate order.
pub(crate) fn single_instance(
    instance: &ValidationInstance,
    weights: &[f64],
    k: usize,
    trunc: Truncation,
) -> Result<Vec<f64>> {
    if instance.candidates.is_empty() {
        return Err(Error::EmptyInstance(instance.query_id.clone()));
    }
    if weights.len() != instance.candidates.len() {
        return Err(Error::invalid("weights do not match candidates"));
    }
    let set = EvaluationSet::new(vec![instance.clone()])?;
    let prep = PreparedSet::from_set(&set);
    // point indices of a single instance are its candidate positions
    let g = prepared_gradient(&prep, weights, k, trunc)?;
    Ok(g)
}

/// `G(x, w_i)` for each candidate of one instance, in input order.
pub fn instance_gradients(instance: &ValidationInstance, weights: &[f64], k: usize) -> Result<Vec<f64>> {
    single_instance(instance, weights, k, Truncation::Exact)
}

/// Exact per-point gradient averaged over the validation set.
pub fn gradient(set: &EvaluationSet, sw: &SourceWeights, k: usize) -> Result<GradientVector> {
    let pw = point_weights(set, sw)?;
    gradient_points(set, &pw, k)
}

/// As [`gradient`], with weights given per point index.
pub fn gradient_points(set: &EvaluationSet, point_w: &[f64], k: usize) -> Result<GradientVector> {
    let prep = PreparedSet::from_set(set);
    let g = prepared_gradient(&prep, point_w, k, Truncation::Exact)?;
    Ok(GradientVector::points(set, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Candidate;
    use crate::oracle::brute_gradient;

    fn instance(utils: &[f64]) -> ValidationInstance {
        ValidationInstance {
            query_id: "q".into(),
            gold: None,
            candidates: utils
                .iter()
                .enumerate()
                .map(|(i, &u)| Candidate::with_utility(&format!("p{i}"), "s", 10.0 - i as f64, u))
                .collect(),
        }
    }

    #[test]
    fn single_point() {
        for u in [0.0, 0.3, 1.0] {
            let g = instance_gradients(&instance(&[u]), &[0.42], 1).unwrap();
            assert!((g[0] - u).abs() < 1e-15);
        }
    }

    #[test]
    fn two_points() {
        let g = instance_gradients(&instance(&[1.0, 0.0]), &[0.5, 0.5], 1).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-15 && g[1].abs() < 1e-15);
        let g = instance_gradients(&instance(&[0.0, 1.0]), &[0.5, 0.5], 1).unwrap();
        assert!((g[0] + 0.5).abs() < 1e-15 && (g[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ranking_is_rederived() {
        let mut inst = instance(&[1.0, 0.0, 1.0, 0.5]);
        inst.candidates.reverse();
        let w = [0.3, 0.6, 0.9, 0.2];
        let g = instance_gradients(&inst, &w, 2).unwrap();
        let b = brute_gradient(&inst, &w, 2).unwrap();
        for (x, y) in g.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn k_larger_than_m() {
        let inst = instance(&[1.0, 0.0, 1.0]);
        let w = [0.3, 0.6, 0.9];
        let g = instance_gradients(&inst, &w, 5).unwrap();
        let b = brute_gradient(&inst, &w, 5).unwrap();
        for (x, y) in g.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn set_average() {
        let a = instance(&[1.0, 0.0, 1.0]);
        let set1 = EvaluationSet::new(vec![a.clone()]).unwrap();
        let set2 = EvaluationSet::new(vec![a.clone(), a.clone()]).unwrap();
        let pw = [0.2, 0.5, 0.7];
        let g1 = gradient_points(&set1, &pw, 2).unwrap();
        let g2 = gradient_points(&set2, &pw, 2).unwrap();
        let direct = instance_gradients(&a, &pw, 2).unwrap();
        assert_eq!(g1.values, direct);
        assert_eq!(g2.values, direct);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            gradient_points(&EvaluationSet::empty(), &[], 1),
            Err(Error::EmptySet)
        ));
        let empty_inst = ValidationInstance {
            query_id: "e".into(),
            gold: None,
            candidates: vec![],
        };
        assert!(instance_gradients(&empty_inst, &[], 1).is_err());
        let set = EvaluationSet::new(vec![instance(&[1.0])]).unwrap();
        assert!(gradient_points(&set, &[1.5], 1).is_err());
        assert!(gradient_points(&set, &[0.5], 0).is_err());
    }

    #[test]
    fn bounded_by_one() {
        let inst = instance(&[1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
        let w = [0.9, 0.1, 0.5, 0.5, 0.7, 0.3, 1.0];
        for k in 1..=4 {
            for g in instance_gradients(&inst, &w, k).unwrap() {
                assert!((-1.0..=1.0).contains(&g));
            }
        }
    }
}
