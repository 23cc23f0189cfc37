//! Alignment decoding over a fused similarity matrix.
//!
//! Indices here are matrix indices: row `i` is the `i`-th source entity of
//! the matrix and column `j` its `j`-th target entity.

mod a2c;
mod baselines;
mod env;
mod nets;
mod prelim;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub use a2c::{a2c_align, reward, CoordinationMode, RlConfig, RlRun};
pub use baselines::{greedy_independent, hungarian, stable_matching};
pub use env::{coherence_vector, induced_neighbors, AlignmentEnvironment, StateVector};
pub use nets::{
    actor_forward, actor_log_prob_gradient, critic_gradient, critic_value, ActorParameters,
    CriticParameters,
};
pub use prelim::{preliminary_filter, PreliminaryOutcome};

/// Which stage fixed a source entity's target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Preliminary,
    Rl,
    Greedy,
    Stable,
    Hungarian,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Preliminary => "preliminary",
            Provenance::Rl => "rl",
            Provenance::Greedy => "greedy",
            Provenance::Stable => "stable",
            Provenance::Hungarian => "hungarian",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "preliminary" => Ok(Provenance::Preliminary),
            "rl" => Ok(Provenance::Rl),
            "greedy" => Ok(Provenance::Greedy),
            "stable" => Ok(Provenance::Stable),
            "hungarian" => Ok(Provenance::Hungarian),
            other => Err(Error::Argument(format!("unknown provenance `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub target: usize,
    pub provenance: Provenance,
}

/// Chosen target per source, with the stage that chose it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentResult {
    decisions: BTreeMap<usize, Decision>,
}

impl AlignmentResult {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, source: usize, target: usize, provenance: Provenance) {
        self.decisions.insert(source, Decision { target, provenance });
    }

    pub fn target_of(&self, source: usize) -> Option<usize> {
        self.decisions.get(&source).map(|d| d.target)
    }

    pub fn decision(&self, source: usize) -> Option<Decision> {
        self.decisions.get(&source).copied()
    }

    pub fn len(&self) -> usize {
        self.decisions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.decisions.is_empty()
    }

    /// `(source, target)` pairs in source order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.decisions.iter().map(|(&s, d)| (s, d.target)).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, Decision)> + '_ {
        self.decisions.iter().map(|(&s, &d)| (s, d))
    }

    pub fn is_injective(&self) -> bool {
        count_multiplicities(self) == (0, 0)
    }

    /// Sum of the matrix scores of the chosen pairs.
    pub fn total_score(&self, m: &crate::simmat::SimilarityMatrix) -> f64 {
        self.decisions.iter().map(|(&s, d)| m.get(s, d.target)).sum()
    }
}

/// `(MulSE, MulTE)`: the number of sources that share their target with
/// another source, and the number of targets assigned more than once.
pub fn count_multiplicities(result: &AlignmentResult) -> (usize, usize) {
    let mut per_target: HashMap<usize, usize> = HashMap::new();
    for (_, d) in result.iter() {
        *per_target.entry(d.target).or_default() += 1;
    }
    per_target
        .values()
        .filter(|&&c| c > 1)
        .fold((0, 0), |(se, te), &c| (se + c, te + 1))
}
