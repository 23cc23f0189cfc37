//! Alignment metrics and diagnostics.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::names::levenshtein;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision over the predicted pairs, recall over the gold pairs.
pub fn prf(pred: &[(usize, usize)], gold: &[(usize, usize)]) -> Result<Prf> {
    if gold.is_empty() {
        return Err(Error::Evaluation("gold alignment is empty".into()));
    }
    let gold_set: HashSet<(usize, usize)> = gold.iter().copied().collect();
    let correct = pred.iter().filter(|p| gold_set.contains(p)).count() as f64;
    let precision = if pred.is_empty() { 0.0 } else { correct / pred.len() as f64 };
    let recall = correct / gold.len() as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else if precision == recall {
        precision
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(Prf {
        precision,
        recall,
        f1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankMetrics {
    pub hits: BTreeMap<usize, f64>,
    pub mrr: f64,
}

/// Hits@k for every `k` in `ks` and the mean reciprocal rank of the gold
/// targets. Each gold source needs a ranked list that contains its gold
/// target.
pub fn hits_mrr(
    ranked: &HashMap<usize, Vec<usize>>,
    gold: &[(usize, usize)],
    ks: &[usize],
) -> Result<RankMetrics> {
    if gold.is_empty() {
        return Err(Error::Evaluation("gold alignment is empty".into()));
    }
    let mut ranks = Vec::with_capacity(gold.len());
    for &(s, t) in gold {
        let list = ranked
            .get(&s)
            .ok_or_else(|| Error::Evaluation(format!("no ranked list for source {s}")))?;
        let pos = list.iter().position(|&c| c == t).ok_or_else(|| {
            Error::Evaluation(format!("gold target {t} missing from the ranked list of source {s}"))
        })?;
        ranks.push(pos + 1);
    }
    let n = gold.len() as f64;
    let hits = ks
        .iter()
        .map(|&k| (k, ranks.iter().filter(|&&r| r <= k).count() as f64 / n))
        .collect();
    let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
    Ok(RankMetrics { hits, mrr })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceStats {
    pub average: f64,
    pub median: usize,
    pub p10: usize,
    pub p90: usize,
}

/// Nearest-rank percentile of sorted data: the value at 1-based rank
/// `ceil(percent/100 · n)`, clamped to `[1, n]`.
pub fn nearest_rank(sorted: &[usize], percent: usize) -> usize {
    let n = sorted.len();
    let rank = (percent * n).div_ceil(100);
    sorted[rank.clamp(1, n) - 1]
}

/// Edit-distance statistics over the names of gold pairs. Percentiles use
/// the nearest-rank rule.
pub fn name_distance_stats(
    gold: &[(usize, usize)],
    source_names: &[String],
    target_names: &[String],
) -> Result<DistanceStats> {
    if gold.is_empty() {
        return Err(Error::Evaluation("gold alignment is empty".into()));
    }
    let mut distances = Vec::with_capacity(gold.len());
    for &(s, t) in gold {
        let (a, b) = source_names
            .get(s)
            .zip(target_names.get(t))
            .ok_or_else(|| Error::Evaluation(format!("no names for pair ({s}, {t})")))?;
        distances.push(levenshtein(a, b));
    }
    Ok(distance_stats(distances))
}

pub fn distance_stats(mut distances: Vec<usize>) -> DistanceStats {
    distances.sort_unstable();
    DistanceStats {
        average: distances.iter().sum::<usize>() as f64 / distances.len() as f64,
        median: nearest_rank(&distances, 50),
        p10: nearest_rank(&distances, 10),
        p90: nearest_rank(&distances, 90),
    }
}

/// Fraction of the distinct correspondences that are gold pairs; `None`
/// for an empty set.
pub fn fusion_poc(correspondences: &[(usize, usize)], gold: &[(usize, usize)]) -> Option<f64> {
    let distinct: HashSet<(usize, usize)> = correspondences.iter().copied().collect();
    if distinct.is_empty() {
        return None;
    }
    let gold: HashSet<(usize, usize)> = gold.iter().copied().collect();
    Some(distinct.iter().filter(|p| gold.contains(p)).count() as f64 / distinct.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub hits: BTreeMap<usize, f64>,
    pub mrr: Option<f64>,
    pub mulse: usize,
    pub multe: usize,
    pub poc: Option<f64>,
    pub predictions: usize,
    pub gold: usize,
}

impl EvalReport {
    pub fn new(prf: Prf, ranks: Option<RankMetrics>, multiplicities: (usize, usize), predictions: usize, gold: usize) -> Self {
        let (hits, mrr) = match ranks {
            Some(r) => (r.hits, Some(r.mrr)),
            None => (BTreeMap::new(), None),
        };
        Self {
            precision: prf.precision,
            recall: prf.recall,
            f1: prf.f1,
            hits,
            mrr,
            mulse: multiplicities.0,
            multe: multiplicities.1,
            poc: None,
            predictions,
            gold,
        }
    }

    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("precision = {:.6}\n", self.precision));
        out.push_str(&format!("recall = {:.6}\n", self.recall));
        out.push_str(&format!("f1 = {:.6}\n", self.f1));
        for (k, v) in &self.hits {
            out.push_str(&format!("hits@{k} = {v:.6}\n"));
        }
        if let Some(mrr) = self.mrr {
            out.push_str(&format!("mrr = {mrr:.6}\n"));
        }
        out.push_str(&format!("mulse = {}\n", self.mulse));
        out.push_str(&format!("multe = {}\n", self.multe));
        if let Some(poc) = self.poc {
            out.push_str(&format!("poc = {poc:.6}\n"));
        }
        out.push_str(&format!("predictions = {}\n", self.predictions));
        out.push_str(&format!("gold = {}\n", self.gold));
        out
    }

    /// One row in the layout `method | Hits@1 Hits@10 MRR | P R F1`, with
    /// `-` for missing rank metrics.
    pub fn table_row(&self, method: &str) -> String {
        let hit = |k| self.hits.get(&k).map_or("-".to_owned(), |v| format!("{v:.3}"));
        let mrr = self.mrr.map_or("-".to_owned(), |v| format!("{v:.3}"));
        format!(
            "{method:<16} | {:>6} {:>6} {:>6} | {:.3} {:.3} {:.3}",
            hit(1),
            hit(10),
            mrr,
            self.precision,
            self.recall,
            self.f1
        )
    }
}
