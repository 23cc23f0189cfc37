use serde::{Deserialize, Serialize};

use crate::simmat::SimilarityMatrix;

/// Pairs fixed before the collective stage and what is left for it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreliminaryOutcome {
    /// Confirmed pairs, grouped by the round that produced them.
    pub rounds: Vec<Vec<(usize, usize)>>,
    pub residual_sources: Vec<usize>,
    pub residual_targets: Vec<usize>,
}

impl PreliminaryOutcome {
    /// No filtering: everything is residual.
    pub fn untouched(m: &SimilarityMatrix) -> Self {
        Self {
            rounds: Vec::new(),
            residual_sources: (0..m.n_src()).collect(),
            residual_targets: (0..m.n_tgt()).collect(),
        }
    }

    pub fn confirmed(&self) -> Vec<(usize, usize)> {
        self.rounds.iter().flatten().copied().collect()
    }
}

/// Strict maximum of `values` over `candidates`; `None` on a tie.
fn strict_best(candidates: &[usize], score: impl Fn(usize) -> f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    let mut tied = false;
    for &c in candidates {
        let v = score(c);
        match best {
            None => best = Some((c, v)),
            Some((_, b)) if v > b => {
                best = Some((c, v));
                tied = false;
            }
            Some((_, b)) if v == b => tied = true,
            _ => {}
        }
    }
    best.filter(|_| !tied).map(|(c, _)| c)
}

/// Repeats `rounds` times: confirm every pair whose source ranks the target
/// first among the remaining targets and whose target ranks the source
/// first among the remaining sources, then drop those rows and columns.
/// Tied maxima never confirm.
pub fn preliminary_filter(m: &SimilarityMatrix, rounds: usize) -> PreliminaryOutcome {
    let mut out = PreliminaryOutcome::untouched(m);
    for _ in 0..rounds {
        let sources = &out.residual_sources;
        let targets = &out.residual_targets;
        let confirmed: Vec<(usize, usize)> = sources
            .iter()
            .filter_map(|&s| {
                let t = strict_best(targets, |t| m.get(s, t))?;
                (strict_best(sources, |x| m.get(x, t)) == Some(s)).then_some((s, t))
            })
            .collect();
        if confirmed.is_empty() {
            break;
        }
        out.residual_sources
            .retain(|s| !confirmed.iter().any(|&(cs, _)| cs == *s));
        out.residual_targets
            .retain(|t| !confirmed.iter().any(|&(_, ct)| ct == *t));
        out.rounds.push(confirmed);
    }
    out
}
