//! Adaptive outcome-level fusion of feature-specific similarity matrices.
//!
//! Each feature votes with its confident correspondences: cells that are
//! strictly maximal in both their row and their column. A correspondence
//! produced by `q` features weighs `1/q` in each of them, and an occurrence
//! whose score exceeds `theta1` is reset to `theta2` so that near-perfect
//! features cannot take all the weight. A feature's weight is the mean
//! weight of its correspondences, normalized over features.

use std::collections::{BTreeMap, HashMap};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simmat::{FeatureTag, SimilarityMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidentCorrespondence {
    pub source: usize,
    pub target: usize,
    pub score: f64,
    pub feature: FeatureTag,
}

/// Order in which the inverse-frequency weight and the high-score override
/// are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OverrideOrder {
    /// Weight `1/q`, then replace by `theta2` when the score exceeds `theta1`.
    #[default]
    AfterInverse,
    /// Replace by `theta2` first, then divide by `q`.
    BeforeInverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub theta1: f64,
    pub theta2: f64,
    pub override_order: OverrideOrder,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            theta1: 0.99,
            theta2: 0.48,
            override_order: OverrideOrder::AfterInverse,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta2 > 0.0) || !self.theta1.is_finite() {
            return Err(Error::Argument(format!(
                "need theta2 > 0 and finite theta1, got theta1={}, theta2={}",
                self.theta1, self.theta2
            )));
        }
        Ok(())
    }
}

/// Cells strictly greater than every other cell of their row and of their
/// column. Tied maxima produce nothing.
pub fn confident_correspondences(m: &SimilarityMatrix) -> Vec<ConfidentCorrespondence> {
    let scores = m.scores();
    let strict_argmax = |values: ndarray::ArrayView1<'_, f64>| -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        let mut tied = false;
        for (k, &v) in values.iter().enumerate() {
            match best {
                None => best = Some((k, v)),
                Some((_, b)) if v > b => {
                    best = Some((k, v));
                    tied = false;
                }
                Some((_, b)) if v == b => tied = true,
                _ => {}
            }
        }
        best.filter(|_| !tied).map(|(k, _)| k)
    };
    let col_best: Vec<Option<usize>> = scores.columns().into_iter().map(strict_argmax).collect();
    scores
        .rows()
        .into_iter()
        .enumerate()
        .filter_map(|(i, row)| {
            let j = strict_argmax(row)?;
            (col_best[j] == Some(i)).then(|| ConfidentCorrespondence {
                source: i,
                target: j,
                score: scores[[i, j]],
                feature: m.tag(),
            })
        })
        .collect()
}

/// Confident correspondences of several features, computed in parallel.
pub fn all_confident_correspondences(matrices: &[SimilarityMatrix]) -> Vec<Vec<ConfidentCorrespondence>> {
    matrices.par_iter().map(confident_correspondences).collect()
}

/// A confident correspondence together with its weight inside its feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedCorrespondence {
    pub correspondence: ConfidentCorrespondence,
    /// Number of features that generated the same (source, target) pair.
    pub occurrences: usize,
    pub weight: f64,
    pub overridden: bool,
}

/// Weights every occurrence of every confident correspondence. The output
/// mirrors the input: one list per feature, same order.
pub fn correspondence_weights(
    per_feature: &[Vec<ConfidentCorrespondence>],
    cfg: &FusionConfig,
) -> Vec<Vec<WeightedCorrespondence>> {
    let mut occurrences: HashMap<(usize, usize), usize> = HashMap::new();
    for corrs in per_feature {
        for c in corrs {
            *occurrences.entry((c.source, c.target)).or_default() += 1;
        }
    }
    per_feature
        .iter()
        .map(|corrs| {
            corrs
                .iter()
                .map(|&c| {
                    let q = occurrences[&(c.source, c.target)];
                    let overridden = c.score > cfg.theta1;
                    let weight = match (overridden, cfg.override_order) {
                        (false, _) => 1.0 / q as f64,
                        (true, OverrideOrder::AfterInverse) => cfg.theta2,
                        (true, OverrideOrder::BeforeInverse) => cfg.theta2 / q as f64,
                    };
                    WeightedCorrespondence {
                        correspondence: c,
                        occurrences: q,
                        weight,
                        overridden,
                    }
                })
                .collect()
        })
        .collect()
}

/// Normalized per-feature weights. Nonnegative and summing to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureWeights {
    weights: Vec<(FeatureTag, f64)>,
}

impl FeatureWeights {
    pub fn new(weights: Vec<(FeatureTag, f64)>) -> Result<Self> {
        if weights.iter().any(|&(_, w)| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::Fusion(format!("negative or non-finite weight in {weights:?}")));
        }
        let total: f64 = weights.iter().map(|&(_, w)| w).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Fusion(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self { weights })
    }

    pub fn equal(tags: &[FeatureTag]) -> Self {
        let w = 1.0 / tags.len() as f64;
        Self {
            weights: tags.iter().map(|&t| (t, w)).collect(),
        }
    }

    pub fn get(&self, tag: FeatureTag) -> Option<f64> {
        self.weights.iter().find(|(t, _)| *t == tag).map(|&(_, w)| w)
    }

    pub fn iter(&self) -> impl Iterator<Item = (FeatureTag, f64)> + '_ {
        self.weights.iter().copied()
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().map(|&(_, w)| w).sum()
    }
}

/// Per-feature weight scores (mean correspondence weight; 0 for a feature
/// with no correspondences), normalized to sum to 1.
///
/// Fails with [`Error::Fusion`] when no feature has a correspondence.
pub fn feature_weights(
    tags: &[FeatureTag],
    weighted: &[Vec<WeightedCorrespondence>],
) -> Result<FeatureWeights> {
    if tags.len() != weighted.len() {
        return Err(Error::Fusion(format!(
            "{} feature tags for {} correspondence lists",
            tags.len(),
            weighted.len()
        )));
    }
    let scores: Vec<f64> = weighted
        .iter()
        .map(|corrs| {
            if corrs.is_empty() {
                0.0
            } else {
                corrs.iter().map(|c| c.weight).sum::<f64>() / corrs.len() as f64
            }
        })
        .collect();
    let total: f64 = scores.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Fusion("no feature produced a confident correspondence".into()));
    }
    FeatureWeights::new(tags.iter().copied().zip(scores.iter().map(|s| s / total)).collect())
}

/// `Σ_p weight_p · M^p`, tagged as fused.
pub fn fuse(matrices: &[SimilarityMatrix], weights: &FeatureWeights) -> Result<SimilarityMatrix> {
    let first = matrices
        .first()
        .ok_or_else(|| Error::Fusion("nothing to fuse".into()))?;
    let shape = first.scores().raw_dim();
    let mut out = Array2::<f64>::zeros(shape);
    for m in matrices {
        if m.scores().raw_dim() != shape {
            return Err(Error::Fusion(format!(
                "{} matrix is {}x{}, expected {}x{}",
                m.tag(),
                m.n_src(),
                m.n_tgt(),
                first.n_src(),
                first.n_tgt()
            )));
        }
        let w = weights
            .get(m.tag())
            .ok_or_else(|| Error::Fusion(format!("no weight for feature {}", m.tag())))?;
        out.scaled_add(w, m.scores());
    }
    if let Some((tag, _)) = weights
        .iter()
        .find(|(t, _)| !matrices.iter().any(|m| m.tag() == *t))
    {
        return Err(Error::Fusion(format!("weight given for absent feature {tag}")));
    }
    SimilarityMatrix::new(out, FeatureTag::Fused)
}

/// Full record of one adaptive fusion run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionReport {
    pub config: FusionConfig,
    pub correspondences: Vec<Vec<WeightedCorrespondence>>,
    pub weights: FeatureWeights,
    /// Set when no feature had a correspondence and equal weights were used.
    pub fell_back_to_equal: bool,
    /// Features that produced no confident correspondence.
    pub empty_features: Vec<FeatureTag>,
}

impl FusionReport {
    /// `key = value` lines for auditing.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("theta1 = {}\n", self.config.theta1));
        out.push_str(&format!("theta2 = {}\n", self.config.theta2));
        out.push_str(&format!("fell_back_to_equal = {}\n", self.fell_back_to_equal));
        for (tag, w) in self.weights.iter() {
            out.push_str(&format!("weight.{tag} = {w}\n"));
        }
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for corrs in &self.correspondences {
            for c in corrs {
                *counts.entry(c.correspondence.feature.to_string()).or_default() += 1;
            }
        }
        for (tag, n) in counts {
            out.push_str(&format!("correspondences.{tag} = {n}\n"));
        }
        for corrs in &self.correspondences {
            for c in corrs {
                let cc = c.correspondence;
                out.push_str(&format!(
                    "corr.{} = {}\t{}\t{}\t{}\t{}\n",
                    cc.feature, cc.source, cc.target, cc.score, c.occurrences, c.weight
                ));
            }
        }
        out
    }
}

/// Runs the whole adaptive scheme and returns the fused matrix with its
/// report. Falls back to equal weights when no feature has a confident
/// correspondence.
pub fn adaptive_fuse(
    matrices: &[SimilarityMatrix],
    cfg: &FusionConfig,
) -> Result<(SimilarityMatrix, FusionReport)> {
    cfg.validate()?;
    let tags: Vec<FeatureTag> = matrices.iter().map(SimilarityMatrix::tag).collect();
    let corrs = all_confident_correspondences(matrices);
    let weighted = correspondence_weights(&corrs, cfg);
    let (weights, fell_back) = match feature_weights(&tags, &weighted) {
        Ok(w) => (w, false),
        Err(Error::Fusion(msg)) => {
            log::warn!("adaptive fusion fell back to equal weights: {msg}");
            (FeatureWeights::equal(&tags), true)
        }
        Err(e) => return Err(e),
    };
    let empty_features = tags
        .iter()
        .zip(&weighted)
        .filter(|(_, c)| c.is_empty())
        .map(|(&t, _)| t)
        .collect();
    let fused = fuse(matrices, &weights)?;
    Ok((
        fused,
        FusionReport {
            config: *cfg,
            correspondences: weighted,
            weights,
            fell_back_to_equal: fell_back,
            empty_features,
        },
    ))
}
