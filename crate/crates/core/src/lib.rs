//! Entity alignment between two knowledge graphs.
//!
//! The pipeline has three stages:
//!
//! 1. feature generation: structural embeddings from a two-layer GCN
//!    ([`embed`]), averaged word embeddings of entity names and Levenshtein
//!    string similarity ([`names`]);
//! 2. adaptive fusion of the per-feature similarity matrices ([`simmat`],
//!    [`fusion`]);
//! 3. collective decoding of the fused matrix with an advantage
//!    actor-critic agent that models exclusiveness and coherence, plus the
//!    greedy, stable-matching and Hungarian baselines ([`collective`]).
//!
//! [`eval`] holds the metrics, [`pipeline`] wires the stages together and
//! [`synth`] generates planted-alignment test beds.

pub mod collective;
pub mod embed;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod kg;
pub mod matrix_io;
pub mod names;
pub mod pipeline;
pub mod simmat;
pub mod synth;

pub use error::{Error, Result};
