//! Corpus refinement and evaluation: majority-vote accuracy, pruning and
//! reweighting by learned source weights, the leave-one-out baseline, and
//! synthetic noise/fabrication scenarios.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{answers_match, rank_order, Candidate, EvaluationSet, ValidationInstance};
use crate::error::{Error, Result};
use crate::weights::SourceWeights;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RefineMode {
    Prune,
    Reweight,
    LooPrune,
}

impl std::str::FromStr for RefineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prune" => Ok(RefineMode::Prune),
            "reweight" => Ok(RefineMode::Reweight),
            "loo-prune" | "loo" => Ok(RefineMode::LooPrune),
            other => Err(Error::invalid(format!("unknown refine mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefinePlan {
    pub mode: RefineMode,
    /// Fixed threshold; tuned on the validation split when absent.
    pub threshold: Option<f64>,
    pub samples: usize,
    pub seed: u64,
}

impl Default for RefinePlan {
    fn default() -> Self {
        RefinePlan {
            mode: RefineMode::Prune,
            threshold: None,
            samples: 32,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AccuracyReport {
    pub label: String,
    pub n: usize,
    /// Expected number of correct predictions (integral unless sampled).
    pub correct: f64,
    pub accuracy: f64,
}

impl AccuracyReport {
    fn new(label: &str, n: usize, correct: f64) -> Self {
        AccuracyReport {
            label: label.to_owned(),
            n,
            correct,
            accuracy: if n == 0 { 0.0 } else { correct / n as f64 },
        }
    }
}

/// Most frequent answer in rank order; ties go to the answer whose best-ranked
/// supporter ranks highest. Answers are compared after trimming.
pub fn majority_vote_ranked<'a>(answers: impl IntoIterator<Item = &'a str>) -> Option<&'a str> {
    // (answer, count, first rank)
    let mut tally: Vec<(&str, usize, usize)> = Vec::new();
    for (r, a) in answers.into_iter().enumerate() {
        let key = a.trim();
        match tally.iter_mut().find(|t| t.0 == key) {
            Some(t) => t.1 += 1,
            None => tally.push((key, 1, r)),
        }
    }
    tally
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.2.cmp(&a.2)))
        .map(|t| t.0)
}

fn top_answers(instance: &ValidationInstance, k: usize) -> Result<Vec<&str>> {
    let order = rank_order(&instance.candidates);
    order
        .iter()
        .take(k)
        .map(|&c| {
            let cand = &instance.candidates[c];
            cand.answer.as_deref().ok_or_else(|| {
                Error::invalid(format!("candidate {} has no answer to vote with", cand.point_id))
            })
        })
        .collect()
}

/// Majority-vote prediction over the top-`k` ranked candidates.
pub fn majority_vote_predict(instance: &ValidationInstance, k: usize) -> Result<String> {
    if instance.candidates.is_empty() {
        return Err(Error::EmptyInstance(instance.query_id.clone()));
    }
    let answers = top_answers(instance, k)?;
    Ok(majority_vote_ranked(answers).unwrap().to_owned())
}

fn instance_correct(instance: &ValidationInstance, k: usize) -> Result<bool> {
    let gold = instance.gold.as_deref().ok_or_else(|| {
        Error::invalid(format!("instance {} has no gold answer", instance.query_id))
    })?;
    let answers = top_answers(instance, k)?;
    Ok(majority_vote_ranked(answers).is_some_and(|p| answers_match(p, gold)))
}

/// Fraction of instances whose majority vote matches gold. Instances with no
/// candidates count as wrong.
pub fn evaluate(set: &EvaluationSet, k: usize) -> Result<AccuracyReport> {
    evaluate_labeled(set, k, "eval")
}

pub fn evaluate_labeled(set: &EvaluationSet, k: usize, label: &str) -> Result<AccuracyReport> {
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    let correct = set
        .instances()
        .par_iter()
        .map(|inst| instance_correct(inst, k).map(usize::from))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(AccuracyReport::new(label, set.len(), correct as f64))
}

/// Removes candidates whose source weight is below `threshold`.
pub fn prune(set: &EvaluationSet, sw: &SourceWeights, threshold: f64) -> Result<EvaluationSet> {
    let w = sw.aligned(set)?;
    let src = set.sources();
    Ok(set.filter_candidates(|c| w[src.get(&c.source_key).unwrap()] >= threshold))
}

/// Picks the pruning threshold among `floor` and the distinct scores that
/// maximizes accuracy on `set`; ties go to the smallest threshold.
fn tune_by_scores(set: &EvaluationSet, scores: &[f64], floor: f64, k: usize) -> Result<f64> {
    let mut cands: Vec<f64> = scores.to_vec();
    cands.push(floor);
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    let src = set.sources();
    let mut best = (f64::NEG_INFINITY, floor);
    for &t in &cands {
        let pruned = set.filter_candidates(|c| scores[src.get(&c.source_key).unwrap()] >= t);
        let acc = evaluate(&pruned, k)?.accuracy;
        if acc > best.0 {
            best = (acc, t);
        }
    }
    Ok(best.1)
}

/// Threshold on learned weights that maximizes validation accuracy.
pub fn tune_threshold(val_set: &EvaluationSet, sw: &SourceWeights, k: usize) -> Result<f64> {
    let w = sw.aligned(val_set)?;
    tune_by_scores(val_set, &w, 0.0, k)
}

/// Expected accuracy when each candidate is kept with its source's weight,
/// averaged over `samples` seeded draws.
pub fn reweight_expected_accuracy(
    test_set: &EvaluationSet,
    sw: &SourceWeights,
    samples: usize,
    seed: u64,
    k: usize,
) -> Result<AccuracyReport> {
    if samples == 0 {
        return Err(Error::invalid("samples must be at least 1"));
    }
    let w = sw.aligned(test_set)?;
    let src = test_set.sources();
    let per_trial = (0..samples)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, t as u64);
            let kept = test_set.filter_candidates(|c| {
                rng.gen::<f64>() < w[src.get(&c.source_key).unwrap()]
            });
            evaluate(&kept, k).map(|r| r.correct)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean_correct = per_trial.iter().sum::<f64>() / samples as f64;
    Ok(AccuracyReport::new("reweight", test_set.len(), mean_correct))
}

pub(crate) fn trial_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Accuracy change from removing each source, `acc(full) - acc(without s)`,
/// aligned to the set's source registry.
pub fn loo_scores(val_set: &EvaluationSet, k: usize) -> Result<Vec<f64>> {
    let full = evaluate(val_set, k)?.accuracy;
    let src = val_set.sources();
    (0..src.len())
        .into_par_iter()
        .map(|s| {
            let without = val_set.filter_candidates(|c| src.get(&c.source_key) != Some(s));
            Ok(full - evaluate(&without, k)?.accuracy)
        })
        .collect()
}

/// LOO deltas keyed by source, for reporting.
pub fn loo_table(val_set: &EvaluationSet, k: usize) -> Result<Vec<(String, f64)>> {
    let d = loo_scores(val_set, k)?;
    Ok(val_set.sources().keys().iter().cloned().zip(d).collect())
}

/// Tunes a threshold on LOO deltas and returns the sources it keeps.
pub fn loo_keep(val_set: &EvaluationSet, k: usize) -> Result<(f64, Vec<String>)> {
    let d = loo_scores(val_set, k)?;
    let floor = d.iter().copied().fold(f64::INFINITY, f64::min);
    let floor = if floor.is_finite() { floor } else { 0.0 };
    let t = tune_by_scores(val_set, &d, floor, k)?;
    let keep = val_set
        .sources()
        .keys()
        .iter()
        .zip(&d)
        .filter(|(_, &v)| v >= t)
        .map(|(k, _)| k.clone())
        .collect();
    Ok((t, keep))
}

/// Keeps only candidates from the listed sources.
pub fn keep_sources(set: &EvaluationSet, keep: &[String]) -> EvaluationSet {
    set.filter_candidates(|c| keep.contains(&c.source_key))
}

/// Seeded 50/50 split into validation and test sets (validation gets the
/// extra instance when N is odd).
pub fn split_validation_test(set: &EvaluationSet, seed: u64) -> (EvaluationSet, EvaluationSet) {
    let mut idx: Vec<usize> = (0..set.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = set.len().div_ceil(2);
    let mut val = idx[..cut].to_vec();
    let mut test = idx[cut..].to_vec();
    val.sort_unstable();
    test.sort_unstable();
    (set.select(&val), set.select(&test))
}

pub const WRONG_PREFIX: &str = "WRONG::";

fn is_correct(c: &Candidate, gold: Option<&str>) -> bool {
    match (c.answer.as_deref(), gold) {
        (Some(a), Some(g)) => answers_match(a, g),
        (None, _) => c.utility.is_some_and(|u| u > 0.0),
        (Some(_), None) => c.utility.is_some_and(|u| u > 0.0),
    }
}

/// Makes one copy of the corpus per noise level, corrupts correct answers with
/// probability equal to the level, and splits each copy by rank into
/// `sources_per_level` sources. Scores are left untouched.
pub fn inject_noise(
    set: &EvaluationSet,
    levels: &[f64],
    sources_per_level: usize,
    seed: u64,
) -> Result<EvaluationSet> {
    if let Some(&l) = levels.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(Error::invalid(format!("noise level {l} is outside [0, 1]")));
    }
    if sources_per_level == 0 {
        return Err(Error::invalid("sources per level must be at least 1"));
    }
    let mut out: Vec<ValidationInstance> = set
        .instances()
        .iter()
        .map(|inst| ValidationInstance {
            query_id: inst.query_id.clone(),
            gold: inst.gold.clone(),
            candidates: Vec::with_capacity(inst.candidates.len() * levels.len()),
        })
        .collect();

    for (li, &level) in levels.iter().enumerate() {
        let mut rng = trial_rng(seed, li as u64);
        for (inst, dst) in set.instances().iter().zip(out.iter_mut()) {
            let m = inst.candidates.len();
            let mut part = vec![0; m];
            for (r, &c) in rank_order(&inst.candidates).iter().enumerate() {
                part[c] = r * sources_per_level / m;
            }
            for (c, cand) in inst.candidates.iter().enumerate() {
                let mut copy = cand.clone();
                let flip = rng.gen::<f64>() < level;
                if flip && is_correct(cand, inst.gold.as_deref()) {
                    if let Some(a) = &cand.answer {
                        copy.answer = Some(format!("{WRONG_PREFIX}{a}"));
                    }
                    if copy.utility.is_some() {
                        copy.utility = Some(0.0);
                    }
                }
                copy.point_id = format!("{}@noise{li}", cand.point_id);
                copy.source_key = format!("noise{li}:{level}/part{}", part[c]);
                dst.candidates.push(copy);
            }
        }
    }
    EvaluationSet::new(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RankPolicy {
    /// Above every existing candidate.
    Top,
    /// Below every existing candidate.
    Bottom,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FabricationPlan {
    pub count: usize,
    pub correctness_rate: f64,
    pub rank_policy: RankPolicy,
    pub source_key: String,
    pub seed: u64,
}

impl Default for FabricationPlan {
    fn default() -> Self {
        FabricationPlan {
            count: 5,
            correctness_rate: 0.5,
            rank_policy: RankPolicy::Top,
            source_key: "fabricated".to_owned(),
            seed: 0,
        }
    }
}

pub const FABRICATED_PREFIX: &str = "FABRICATED::";

/// Prepends synthetic candidates from one new source whose answers are
/// correct with the given probability.
pub fn add_fabricated_source(set: &EvaluationSet, plan: &FabricationPlan) -> Result<EvaluationSet> {
    if !(0.0..=1.0).contains(&plan.correctness_rate) {
        return Err(Error::invalid(format!(
            "correctness rate {} is outside [0, 1]",
            plan.correctness_rate
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut out = Vec::with_capacity(set.len());
    for inst in set.instances() {
        let gold = inst.gold.as_deref().ok_or_else(|| {
            Error::invalid(format!("instance {} has no gold answer", inst.query_id))
        })?;
        let scores = inst.candidates.iter().map(|c| c.rank_score);
        let (hi, lo) = scores.fold((f64::NEG_INFINITY, f64::INFINITY), |(h, l), s| (h.max(s), l.min(s)));
        let (hi, lo) = if hi.is_finite() { (hi, lo) } else { (0.0, 0.0) };
        let mut cands = Vec::with_capacity(inst.candidates.len() + plan.count);
        for j in 0..plan.count {
            let score = match plan.rank_policy {
                RankPolicy::Top => hi + (plan.count - j) as f64,
                RankPolicy::Bottom => lo - 1.0 - j as f64,
            };
            let answer = if rng.gen::<f64>() < plan.correctness_rate {
                gold.to_owned()
            } else {
                format!("{FABRICATED_PREFIX}{gold}")
            };
            cands.push(Candidate {
                point_id: format!("fab{j}@{}", inst.query_id),
                source_key: plan.source_key.clone(),
                rank_score: score,
                answer: Some(answer),
                utility: None,
            });
        }
        cands.extend(inst.candidates.iter().cloned());
        out.push(ValidationInstance {
            query_id: inst.query_id.clone(),
            gold: inst.gold.clone(),
            candidates: cands,
        });
    }
    EvaluationSet::new(out)
}

/// Parameters of a synthetic question-answering corpus with a single source.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticQa {
    pub questions: usize,
    pub candidates: usize,
    /// Per-question probability that a candidate is correct is drawn
    /// uniformly from this range, then decays mildly with rank.
    pub min_correct: f64,
    pub max_correct: f64,
    /// Number of distinct wrong answers per question.
    pub distractors: usize,
    pub seed: u64,
}

impl Default for SyntheticQa {
    fn default() -> Self {
        SyntheticQa {
            questions: 200,
            candidates: 50,
            min_correct: 0.2,
            max_correct: 0.8,
            distractors: 3,
            seed: 0,
        }
    }
}

/// Generates the corpus. Scores strictly decrease with rank; wrong answers
/// favour the first distractor so that errors can win a vote.
pub fn synthetic_qa(cfg: &SyntheticQa) -> EvaluationSet {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let m = cfg.candidates.max(1) as f64;
    let instances = (0..cfg.questions)
        .map(|q| {
            let gold = format!("a{q}");
            let p = rng.gen_range(cfg.min_correct..=cfg.max_correct);
            let candidates = (0..cfg.candidates)
                .map(|j| {
                    let pj = p * (1.0 - 0.3 * j as f64 / m);
                    let answer = if rng.gen::<f64>() < pj {
                        gold.clone()
                    } else {
                        // geometric preference for low distractor indices
                        let mut d = 0;
                        while d + 1 < cfg.distractors.max(1) && rng.gen::<bool>() {
                            d += 1;
                        }
                        format!("d{q}_{d}")
                    };
                    Candidate::with_answer(&format!("q{q}c{j}"), "corpus", (cfg.candidates - j) as f64, &answer)
                })
                .collect();
            ValidationInstance {
                query_id: format!("q{q}"),
                gold: Some(gold),
                candidates,
            }
        })
        .collect();
    EvaluationSet::new(instances).expect("synthetic corpus is valid")
}

/// Per-source candidate counts, handy for reports.
pub fn source_sizes(set: &EvaluationSet) -> HashMap<String, usize> {
    let mut m = HashMap::new();
    for inst in set.instances() {
        for c in &inst.candidates {
            *m.entry(c.source_key.clone()).or_insert(0) += 1;
        }
    }
    m
}
