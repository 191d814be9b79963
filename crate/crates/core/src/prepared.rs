//! Flat, ranked, struct-of-arrays view of an evaluation set.
//!
//! All gradient kernels run over this layout: one contiguous run of slots per
//! instance, already sorted by rank, with utilities mapped to dense per-instance
//! value indices.

use crate::corpus::{candidate_utility, rank_order, EvaluationSet, UtilityValueSet};

#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSet {
    offsets: Vec<usize>,
    slot_point: Vec<u32>,
    slot_utility: Vec<f64>,
    slot_value: Vec<u16>,
    value_offsets: Vec<usize>,
    values: Vec<f64>,
    point_source: Vec<u32>,
    num_sources: usize,
}

/// Borrowed view of one ranked instance.
#[derive(Clone, Copy, Debug)]
pub struct InstanceView<'a> {
    pub points: &'a [u32],
    pub utilities: &'a [f64],
    pub value_index: &'a [u16],
    pub values: &'a [f64],
}

impl InstanceView<'_> {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Incremental builder; instances must be pushed already ranked.
#[derive(Debug)]
pub struct PreparedBuilder {
    inner: PreparedSet,
}

impl PreparedBuilder {
    pub fn new(point_source: Vec<u32>, num_sources: usize) -> Self {
        PreparedBuilder {
            inner: PreparedSet {
                offsets: vec![0],
                slot_point: Vec::new(),
                slot_utility: Vec::new(),
                slot_value: Vec::new(),
                value_offsets: vec![0],
                values: Vec::new(),
                point_source,
                num_sources,
            },
        }
    }

    pub fn reserve(&mut self, instances: usize, slots: usize) {
        let p = &mut self.inner;
        p.offsets.reserve(instances);
        p.value_offsets.reserve(instances);
        p.slot_point.reserve(slots);
        p.slot_utility.reserve(slots);
        p.slot_value.reserve(slots);
    }

    /// Appends one ranked instance given `(point, utility)` pairs in rank order.
    pub fn push_ranked(&mut self, ranked: impl IntoIterator<Item = (u32, f64)>) {
        let p = &mut self.inner;
        let start = p.slot_point.len();
        for (pt, u) in ranked {
            p.slot_point.push(pt);
            p.slot_utility.push(u);
        }
        let vs = UtilityValueSet::from_utilities(&p.slot_utility[start..]);
        assert!(vs.len() <= u16::MAX as usize, "too many distinct utilities");
        for s in start..p.slot_point.len() {
            let idx = vs.index_of(p.slot_utility[s]).expect("value present");
            p.slot_value.push(idx as u16);
        }
        p.values.extend_from_slice(vs.values());
        p.value_offsets.push(p.values.len());
        p.offsets.push(p.slot_point.len());
    }

    pub fn finish(self) -> PreparedSet {
        self.inner
    }
}

impl PreparedSet {
    /// Ranks every instance and derives utilities.
    pub fn from_set(set: &EvaluationSet) -> Self {
        let point_source = set.point_sources().iter().map(|&s| s as u32).collect();
        let mut b = PreparedBuilder::new(point_source, set.sources().len());
        b.reserve(set.len(), set.num_candidates());
        for (i, inst) in set.instances().iter().enumerate() {
            let points = set.instance_points(i);
            let gold = inst.gold.as_deref();
            let order = rank_order(&inst.candidates);
            b.push_ranked(order.iter().map(|&c| {
                (
                    points[c] as u32,
                    candidate_utility(&inst.candidates[c], gold),
                )
            }));
        }
        b.finish()
    }

    pub fn num_instances(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_slots(&self) -> usize {
        self.slot_point.len()
    }

    pub fn num_points(&self) -> usize {
        self.point_source.len()
    }

    pub fn num_sources(&self) -> usize {
        self.num_sources
    }

    pub fn point_sources(&self) -> &[u32] {
        &self.point_source
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn slot_points(&self) -> &[u32] {
        &self.slot_point
    }

    pub fn instance(&self, i: usize) -> InstanceView<'_> {
        let r = self.offsets[i]..self.offsets[i + 1];
        let v = self.value_offsets[i]..self.value_offsets[i + 1];
        InstanceView {
            points: &self.slot_point[r.clone()],
            utilities: &self.slot_utility[r.clone()],
            value_index: &self.slot_value[r],
            values: &self.values[v],
        }
    }

    /// Approximate heap footprint in bytes.
    pub fn footprint_bytes(&self) -> usize {
        self.slot_point.len() * (4 + 8 + 2)
            + self.point_source.len() * 4
            + self.values.len() * 8
            + self.offsets.len() * 16
    }
}
