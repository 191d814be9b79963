//! Source-level weights and their expansion to per-point weights.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::EvaluationSet;
use crate::error::{Error, Result};

/// Weight per source key, kept in a fixed key order.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceWeights {
    keys: Vec<String>,
    weights: Vec<f64>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct WeightRecord<'a> {
    source: std::borrow::Cow<'a, str>,
    weight: f64,
}

impl SourceWeights {
    pub fn new(entries: impl IntoIterator<Item = (String, f64)>) -> Result<Self> {
        let mut sw = SourceWeights {
            keys: Vec::new(),
            weights: Vec::new(),
            index: HashMap::new(),
        };
        for (k, w) in entries {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::WeightOutOfRange(w));
            }
            if sw.index.contains_key(&k) {
                return Err(Error::invalid(format!("duplicate source {k:?}")));
            }
            sw.index.insert(k.clone(), sw.keys.len());
            sw.keys.push(k);
            sw.weights.push(w);
        }
        Ok(sw)
    }

    /// Every source of `set` at weight `w`, in the set's source order.
    pub fn uniform(set: &EvaluationSet, w: f64) -> Result<Self> {
        Self::new(set.sources().keys().iter().map(|k| (k.clone(), w)))
    }

    /// Weights aligned with `set`'s source registry.
    pub(crate) fn from_aligned(set: &EvaluationSet, weights: Vec<f64>) -> Self {
        Self::new(set.sources().keys().iter().cloned().zip(weights))
            .expect("aligned weights are valid")
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.index.get(key).map(|&i| self.weights[i])
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.keys.iter().map(String::as_str).zip(self.weights.iter().copied())
    }

    /// Weights for every source of `set`, in the set's source order.
    pub fn aligned(&self, set: &EvaluationSet) -> Result<Vec<f64>> {
        set.sources()
            .keys()
            .iter()
            .map(|k| self.get(k).ok_or_else(|| Error::UnknownSource(k.clone())))
            .collect()
    }

    pub fn write(&self, mut out: impl Write) -> std::io::Result<()> {
        for (k, w) in self.iter() {
            let rec = WeightRecord {
                source: k.into(),
                weight: w,
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn parse(reader: impl BufRead) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::Parse {
                line: n + 1,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: WeightRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: n + 1,
                message: e.to_string(),
            })?;
            entries.push((rec.source.into_owned(), rec.weight));
        }
        Self::new(entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse(BufReader::new(f))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(f);
        self.write(&mut out)
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(path, e))
    }
}

/// Per-point weights, indexed by the set's point registry.
pub fn point_weights(set: &EvaluationSet, sw: &SourceWeights) -> Result<Vec<f64>> {
    let by_source = sw.aligned(set)?;
    Ok(set.point_sources().iter().map(|&s| by_source[s]).collect())
}

/// Per-candidate weights for every instance, in input candidate order.
pub fn expand_source_weights(set: &EvaluationSet, sw: &SourceWeights) -> Result<Vec<Vec<f64>>> {
    let pw = point_weights(set, sw)?;
    Ok((0..set.len())
        .map(|i| set.instance_points(i).iter().map(|&p| pw[p]).collect())
        .collect())
}
