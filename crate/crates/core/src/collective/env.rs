use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::KnowledgeGraph;
use crate::simmat::SimilarityMatrix;

use super::prelim::PreliminaryOutcome;

/// The three components of the agent's observation over the candidate
/// slots of one source entity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    /// Fused similarity to each candidate.
    pub s1: Vec<f64>,
    /// `+1` for a candidate nobody has taken yet, `−1` otherwise.
    pub s2: Vec<f64>,
    /// Number of contextual entities adjacent to each candidate.
    pub s3: Vec<f64>,
}

impl StateVector {
    /// `s1 ∘ s2 + s3`, the network input.
    pub fn combined(&self) -> Vec<f64> {
        self.s1
            .iter()
            .zip(&self.s2)
            .zip(&self.s3)
            .map(|((a, b), c)| a * b + c)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.s1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s1.is_empty()
    }
}

/// Neighbor lists of the entities `members` inside `kg`, re-indexed by
/// their position in `members`. Entities outside `members` are dropped.
pub fn induced_neighbors(kg: &KnowledgeGraph, members: &[usize]) -> Result<Vec<Vec<usize>>> {
    let position: HashMap<usize, usize> = members.iter().enumerate().map(|(i, &e)| (e, i)).collect();
    members
        .iter()
        .map(|&e| {
            let mut list: Vec<usize> = kg
                .neighbor_slice(e)?
                .iter()
                .filter_map(|n| position.get(n).copied())
                .collect();
            list.sort_unstable();
            Ok(list)
        })
        .collect()
}

/// Coherence counts for the candidates of `source`.
///
/// The contextual entities are the targets already assigned to neighbors
/// of `source`; each candidate scores the number of distinct contextual
/// entities adjacent to it in the target graph.
pub fn coherence_vector(
    source: usize,
    assignment: &[Option<usize>],
    source_neighbors: &[Vec<usize>],
    target_neighbors: &[Vec<usize>],
    candidates: &[usize],
) -> Vec<f64> {
    let contextual: BTreeSet<usize> = source_neighbors[source]
        .iter()
        .filter_map(|&n| assignment[n])
        .collect();
    candidates
        .iter()
        .map(|&c| {
            contextual
                .iter()
                .filter(|&&t| target_neighbors[c].binary_search(&t).is_ok())
                .count() as f64
        })
        .collect()
}

/// Everything the agent interacts with: the fused matrix, both graphs'
/// adjacency restricted to the matrix entities, the processing order and
/// the top-τ candidate lists of the residual sources.
#[derive(Debug, Clone)]
pub struct AlignmentEnvironment {
    scores: SimilarityMatrix,
    source_neighbors: Vec<Vec<usize>>,
    target_neighbors: Vec<Vec<usize>>,
    order: Vec<usize>,
    /// Candidate targets, indexed like `order`.
    candidates: Vec<Vec<usize>>,
    confirmed: Vec<(usize, usize)>,
    width: usize,
}

/// Mutable bookkeeping of one pass over the sources.
#[derive(Debug, Clone)]
pub(super) struct Episode {
    pub assignment: Vec<Option<usize>>,
    pub taken: Vec<bool>,
}

impl AlignmentEnvironment {
    /// `source_neighbors[i]` lists the rows adjacent to row `i` in the
    /// source graph, `target_neighbors[j]` the columns adjacent to column
    /// `j` in the target graph.
    pub fn new(
        scores: SimilarityMatrix,
        mut source_neighbors: Vec<Vec<usize>>,
        mut target_neighbors: Vec<Vec<usize>>,
        prelim: &PreliminaryOutcome,
        tau: usize,
    ) -> Result<Self> {
        if tau == 0 {
            return Err(Error::Argument("tau must be >= 1".into()));
        }
        if source_neighbors.len() != scores.n_src() || target_neighbors.len() != scores.n_tgt() {
            return Err(Error::Argument(format!(
                "neighbor lists ({}, {}) do not match a {}x{} matrix",
                source_neighbors.len(),
                target_neighbors.len(),
                scores.n_src(),
                scores.n_tgt()
            )));
        }
        let in_range = |lists: &[Vec<usize>], n: usize| lists.iter().flatten().all(|&x| x < n);
        if !in_range(&source_neighbors, scores.n_src()) || !in_range(&target_neighbors, scores.n_tgt()) {
            return Err(Error::Argument("neighbor index out of range".into()));
        }
        for list in source_neighbors.iter_mut().chain(target_neighbors.iter_mut()) {
            list.sort_unstable();
            list.dedup();
        }
        let residual_t = &prelim.residual_targets;
        if residual_t.is_empty() && !prelim.residual_sources.is_empty() {
            return Err(Error::Argument(
                "residual sources remain but no residual target is left".into(),
            ));
        }
        let width = tau.min(residual_t.len());
        let mut ranked: Vec<(usize, Vec<usize>)> = prelim
            .residual_sources
            .iter()
            .map(|&s| {
                let mut cands = residual_t.clone();
                cands.sort_by(|&a, &b| scores.get(s, b).total_cmp(&scores.get(s, a)).then(a.cmp(&b)));
                cands.truncate(width);
                (s, cands)
            })
            .collect();
        // Highest best-candidate score first; ties by source index.
        ranked.sort_by(|(sa, ca), (sb, cb)| {
            scores.get(*sb, cb[0]).total_cmp(&scores.get(*sa, ca[0])).then(sa.cmp(sb))
        });
        let (order, candidates) = ranked.into_iter().unzip();
        Ok(Self {
            scores,
            source_neighbors,
            target_neighbors,
            order,
            candidates,
            confirmed: prelim.confirmed(),
            width,
        })
    }

    /// Number of candidate slots, `min(τ, residual targets)`.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn candidates(&self, position: usize) -> &[usize] {
        &self.candidates[position]
    }

    pub fn confirmed(&self) -> &[(usize, usize)] {
        &self.confirmed
    }

    pub fn scores(&self) -> &SimilarityMatrix {
        &self.scores
    }

    pub(super) fn start_episode(&self) -> Episode {
        let mut ep = Episode {
            assignment: vec![None; self.scores.n_src()],
            taken: vec![false; self.scores.n_tgt()],
        };
        for &(s, t) in &self.confirmed {
            ep.assignment[s] = Some(t);
            ep.taken[t] = true;
        }
        ep
    }

    /// Raw observation for the source at `position` of the order.
    pub(super) fn observe(&self, ep: &Episode, position: usize) -> StateVector {
        let source = self.order[position];
        let cands = &self.candidates[position];
        StateVector {
            s1: cands.iter().map(|&c| self.scores.get(source, c)).collect(),
            s2: cands.iter().map(|&c| if ep.taken[c] { -1.0 } else { 1.0 }).collect(),
            s3: coherence_vector(
                source,
                &ep.assignment,
                &self.source_neighbors,
                &self.target_neighbors,
                cands,
            ),
        }
    }

    /// Assigns the candidate in `slot` and returns its target index.
    pub(super) fn take(&self, ep: &mut Episode, position: usize, slot: usize) -> usize {
        let target = self.candidates[position][slot];
        ep.assignment[self.order[position]] = Some(target);
        ep.taken[target] = true;
        target
    }
}
