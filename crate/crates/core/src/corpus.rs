//! Evaluation sets: validation queries, their retrieved candidates, and the
//! point/source registries that weights and gradients are indexed by.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One retrieved data point for a query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    #[serde(rename = "id")]
    pub point_id: String,
    #[serde(rename = "source")]
    pub source_key: String,
    #[serde(rename = "score")]
    pub rank_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utility: Option<f64>,
}

impl Candidate {
    pub fn with_answer(id: &str, source: &str, score: f64, answer: &str) -> Self {
        Candidate {
            point_id: id.to_owned(),
            source_key: source.to_owned(),
            rank_score: score,
            answer: Some(answer.to_owned()),
            utility: None,
        }
    }

    pub fn with_utility(id: &str, source: &str, score: f64, utility: f64) -> Self {
        Candidate {
            point_id: id.to_owned(),
            source_key: source.to_owned(),
            rank_score: score,
            answer: None,
            utility: Some(utility),
        }
    }
}

/// A validation query with its gold answer and retrieved candidates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationInstance {
    pub query_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<String>,
    pub candidates: Vec<Candidate>,
}

/// Sorts candidates by descending rank score. Equal scores keep input order.
pub fn rank_candidates(mut instance: ValidationInstance) -> ValidationInstance {
    instance
        .candidates
        .sort_by(|a, b| b.rank_score.total_cmp(&a.rank_score));
    instance
}

/// Ranked permutation of candidate positions, stable on ties.
pub fn rank_order(candidates: &[Candidate]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        candidates[b]
            .rank_score
            .total_cmp(&candidates[a].rank_score)
    });
    order
}

/// Exact match after trimming surrounding whitespace.
pub fn answers_match(answer: &str, gold: &str) -> bool {
    answer.trim() == gold.trim()
}

/// Fills in missing utilities as exact-match correctness against the gold answer.
pub fn derive_utilities(mut instance: ValidationInstance) -> Result<ValidationInstance> {
    for c in &mut instance.candidates {
        if c.utility.is_some() {
            continue;
        }
        let gold = instance.gold.as_deref().ok_or_else(|| {
            Error::invalid(format!(
                "instance {} needs a gold answer to derive utilities",
                instance.query_id
            ))
        })?;
        let answer = c.answer.as_deref().ok_or_else(|| {
            Error::invalid(format!(
                "candidate {} has neither answer nor utility",
                c.point_id
            ))
        })?;
        c.utility = Some(if answers_match(answer, gold) { 1.0 } else { 0.0 });
    }
    Ok(instance)
}

/// Utility of a candidate, either explicit or derived from the gold answer.
pub(crate) fn candidate_utility(c: &Candidate, gold: Option<&str>) -> f64 {
    match (c.utility, c.answer.as_deref(), gold) {
        (Some(u), _, _) => u,
        (None, Some(a), Some(g)) => {
            if answers_match(a, g) {
                1.0
            } else {
                0.0
            }
        }
        // validated at construction
        _ => unreachable!("candidate {} has no derivable utility", c.point_id),
    }
}

/// Sorted distinct utility values appearing in one instance.
#[derive(Clone, Debug, PartialEq)]
pub struct UtilityValueSet {
    values: Vec<f64>,
}

impl UtilityValueSet {
    pub fn from_utilities(utilities: &[f64]) -> Self {
        let mut values = utilities.to_vec();
        values.sort_by(f64::total_cmp);
        values.dedup_by(|a, b| a.to_bits() == b.to_bits());
        UtilityValueSet { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index_of(&self, u: f64) -> Option<usize> {
        self.values.binary_search_by(|v| v.total_cmp(&u)).ok()
    }
}

/// Insertion-ordered string interner.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Registry {
    keys: Vec<String>,
    index: HashMap<String, usize>,
}

impl Registry {
    pub fn intern(&mut self, key: &str) -> usize {
        if let Some(&i) = self.index.get(key) {
            return i;
        }
        let i = self.keys.len();
        self.keys.push(key.to_owned());
        self.index.insert(key.to_owned(), i);
        i
    }

    pub fn get(&self, key: &str) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

/// A validated, immutable collection of validation instances.
///
/// Points are identified by `point_id` across instances; a point that is
/// retrieved for several queries carries one weight and one gradient entry.
/// Sources and points are indexed in first-appearance order.
#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationSet {
    instances: Vec<ValidationInstance>,
    sources: Registry,
    points: Registry,
    point_source: Vec<usize>,
    // point index of every candidate, instance-major, input order
    slot_point: Vec<usize>,
    slot_offsets: Vec<usize>,
}

impl EvaluationSet {
    pub fn new(instances: Vec<ValidationInstance>) -> Result<Self> {
        let mut sources = Registry::default();
        let mut points = Registry::default();
        let mut point_source = Vec::new();
        let mut slot_point = Vec::new();
        let mut slot_offsets = Vec::with_capacity(instances.len() + 1);
        slot_offsets.push(0);

        for inst in &instances {
            validate_instance(inst)?;
            let mut seen = std::collections::HashSet::with_capacity(inst.candidates.len());
            for c in &inst.candidates {
                if !seen.insert(c.point_id.as_str()) {
                    return Err(Error::invalid(format!(
                        "point {} appears twice in instance {}",
                        c.point_id, inst.query_id
                    )));
                }
                let s = sources.intern(&c.source_key);
                let before = points.len();
                let p = points.intern(&c.point_id);
                if p == before {
                    point_source.push(s);
                } else if point_source[p] != s {
                    return Err(Error::invalid(format!(
                        "point {} is attributed to sources {} and {}",
                        c.point_id,
                        sources.keys()[point_source[p]],
                        c.source_key
                    )));
                }
                slot_point.push(p);
            }
            slot_offsets.push(slot_point.len());
        }

        Ok(EvaluationSet {
            instances,
            sources,
            points,
            point_source,
            slot_point,
            slot_offsets,
        })
    }

    pub fn empty() -> Self {
        EvaluationSet::new(Vec::new()).expect("empty set is valid")
    }

    pub fn instances(&self) -> &[ValidationInstance] {
        &self.instances
    }

    pub fn into_instances(self) -> Vec<ValidationInstance> {
        self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn sources(&self) -> &Registry {
        &self.sources
    }

    pub fn points(&self) -> &Registry {
        &self.points
    }

    pub fn num_points(&self) -> usize {
        self.points.len()
    }

    pub fn num_candidates(&self) -> usize {
        self.slot_point.len()
    }

    /// Source index of each point.
    pub fn point_sources(&self) -> &[usize] {
        &self.point_source
    }

    /// Point indices of one instance's candidates in input order.
    pub fn instance_points(&self, i: usize) -> &[usize] {
        &self.slot_point[self.slot_offsets[i]..self.slot_offsets[i + 1]]
    }

    /// Builds a new set from a subset of instances (registries are rebuilt).
    pub fn select(&self, indices: &[usize]) -> EvaluationSet {
        let instances = indices.iter().map(|&i| self.instances[i].clone()).collect();
        EvaluationSet::new(instances).expect("subset of a valid set is valid")
    }

    /// Builds a new set keeping only candidates for which `keep` holds.
    pub fn filter_candidates(&self, mut keep: impl FnMut(&Candidate) -> bool) -> EvaluationSet {
        let instances = self
            .instances
            .iter()
            .map(|inst| ValidationInstance {
                query_id: inst.query_id.clone(),
                gold: inst.gold.clone(),
                candidates: inst.candidates.iter().filter(|c| keep(c)).cloned().collect(),
            })
            .collect();
        EvaluationSet::new(instances).expect("filtered set is valid")
    }
}

fn validate_instance(inst: &ValidationInstance) -> Result<()> {
    for c in &inst.candidates {
        if !c.rank_score.is_finite() {
            return Err(Error::invalid(format!(
                "candidate {} has non-finite score",
                c.point_id
            )));
        }
        match c.utility {
            Some(u) if !(0.0..=1.0).contains(&u) => return Err(Error::UtilityOutOfRange(u)),
            Some(_) => {}
            None => {
                if c.answer.is_none() {
                    return Err(Error::invalid(format!(
                        "candidate {} has neither answer nor utility",
                        c.point_id
                    )));
                }
                if inst.gold.is_none() {
                    return Err(Error::invalid(format!(
                        "instance {} lacks gold but candidate {} has no utility",
                        inst.query_id, c.point_id
                    )));
                }
            }
        }
    }
    Ok(())
}

pub fn parse_evaluation_set(reader: impl BufRead) -> Result<EvaluationSet> {
    let mut instances = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: ValidationInstance = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        validate_instance(&inst).map_err(|e| Error::Parse {
            line: n + 1,
            message: e.to_string(),
        })?;
        instances.push(inst);
    }
    EvaluationSet::new(instances)
}

pub fn load_evaluation_set(path: impl AsRef<Path>) -> Result<EvaluationSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_evaluation_set(BufReader::new(file))
}

pub fn write_evaluation_set(set: &EvaluationSet, mut out: impl Write) -> std::io::Result<()> {
    for inst in set.instances() {
        serde_json::to_writer(&mut out, inst)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_evaluation_set(set: &EvaluationSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_evaluation_set(set, &mut out)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}
