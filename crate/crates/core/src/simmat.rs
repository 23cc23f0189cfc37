//! Distance measures between embedding vectors and the dense
//! source × target similarity matrices built from them.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};

/// Which feature a similarity matrix was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureTag {
    Structural,
    Semantic,
    String,
    Fused,
}

impl FeatureTag {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureTag::Structural => "structural",
            FeatureTag::Semantic => "semantic",
            FeatureTag::String => "string",
            FeatureTag::Fused => "fused",
        }
    }
}

impl fmt::Display for FeatureTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "structural" => Ok(FeatureTag::Structural),
            "semantic" => Ok(FeatureTag::Semantic),
            "string" => Ok(FeatureTag::String),
            "fused" => Ok(FeatureTag::Fused),
            other => Err(Error::Argument(format!("unknown feature tag `{other}`"))),
        }
    }
}

/// Dense similarity scores, rows are source entities and columns target
/// entities. All scores are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    scores: Array2<f64>,
    tag: FeatureTag,
}

impl SimilarityMatrix {
    pub fn new(scores: Array2<f64>, tag: FeatureTag) -> Result<Self> {
        if let Some(((i, j), v)) = scores.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Argument(format!(
                "{tag} similarity at ({i}, {j}) is not finite: {v}"
            )));
        }
        Ok(Self { scores, tag })
    }

    pub fn from_rows(rows: &[Vec<f64>], tag: FeatureTag) -> Result<Self> {
        let n_tgt = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_tgt) {
            return Err(Error::Argument("ragged similarity rows".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let scores = Array2::from_shape_vec((rows.len(), n_tgt), flat)
            .map_err(|e| Error::Argument(e.to_string()))?;
        Self::new(scores, tag)
    }

    pub fn n_src(&self) -> usize {
        self.scores.nrows()
    }

    pub fn n_tgt(&self) -> usize {
        self.scores.ncols()
    }

    pub fn tag(&self) -> FeatureTag {
        self.tag
    }

    pub fn with_tag(mut self, tag: FeatureTag) -> Self {
        self.tag = tag;
        self
    }

    pub fn scores(&self) -> &Array2<f64> {
        &self.scores
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.scores[[i, j]]
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.scores.row(i)
    }

    pub fn transpose(&self) -> Self {
        Self {
            scores: self.scores.t().to_owned(),
            tag: self.tag,
        }
    }

    /// Column indices of row `i` ordered by score descending, ties by index.
    pub fn ranked_targets(&self, i: usize) -> Vec<usize> {
        let row = self.scores.row(i);
        let mut idx: Vec<usize> = (0..row.len()).collect();
        idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        idx
    }

    /// Replaces every cell whose row is flagged in `rows` or whose column is
    /// flagged in `cols` with the minimum score among unflagged cells, so
    /// those entities cannot win any row or column maximum.
    pub fn neutralize(&mut self, rows: &[bool], cols: &[bool]) {
        let flagged = |i: usize, j: usize| rows.get(i) == Some(&true) || cols.get(j) == Some(&true);
        let floor = self
            .scores
            .indexed_iter()
            .filter(|&((i, j), _)| !flagged(i, j))
            .map(|(_, &v)| v)
            .fold(f64::INFINITY, f64::min);
        let floor = if floor.is_finite() { floor } else { 0.0 };
        for ((i, j), v) in self.scores.indexed_iter_mut() {
            if flagged(i, j) {
                *v = floor;
            }
        }
    }
}

/// Normalization variant for the Bray-Curtis measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BrayCurtisForm {
    /// `Σ_i |u_i − v_i| / |u_i + v_i|`, each coordinate normalized on its own.
    #[default]
    PerCoordinate,
    /// `Σ_i |u_i − v_i| / Σ_i |u_i + v_i|`, the textbook pooled form.
    Pooled,
}

/// Serialized with its CLI spelling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum DistanceMeasure {
    BrayCurtis(BrayCurtisForm),
    Manhattan,
    Euclidean,
    Cosine,
}

impl Default for DistanceMeasure {
    fn default() -> Self {
        DistanceMeasure::BrayCurtis(BrayCurtisForm::PerCoordinate)
    }
}

impl FromStr for DistanceMeasure {
    type Err = Error;

    /// Accepts the CLI spellings `bc`, `bc-pooled`, `cos`, `man`, `euc`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bc" | "bray-curtis" => Ok(DistanceMeasure::BrayCurtis(BrayCurtisForm::PerCoordinate)),
            "bc-pooled" => Ok(DistanceMeasure::BrayCurtis(BrayCurtisForm::Pooled)),
            "cos" | "cosine" => Ok(DistanceMeasure::Cosine),
            "man" | "manhattan" => Ok(DistanceMeasure::Manhattan),
            "euc" | "euclidean" => Ok(DistanceMeasure::Euclidean),
            other => Err(Error::Argument(format!("unknown measure `{other}`"))),
        }
    }
}

impl DistanceMeasure {
    pub fn as_str(self) -> &'static str {
        match self {
            DistanceMeasure::BrayCurtis(BrayCurtisForm::PerCoordinate) => "bc",
            DistanceMeasure::BrayCurtis(BrayCurtisForm::Pooled) => "bc-pooled",
            DistanceMeasure::Cosine => "cos",
            DistanceMeasure::Manhattan => "man",
            DistanceMeasure::Euclidean => "euc",
        }
    }
}

impl fmt::Display for DistanceMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl TryFrom<String> for DistanceMeasure {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<DistanceMeasure> for String {
    fn from(m: DistanceMeasure) -> Self {
        m.as_str().to_owned()
    }
}

fn check_dims(u: &[f64], v: &[f64]) -> Result<()> {
    if u.len() != v.len() {
        return Err(Error::Argument(format!(
            "vector dimensions differ: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    Ok(())
}

/// Bray-Curtis dissimilarity with the per-coordinate normalization.
///
/// Coordinates with `u_i + v_i = 0` contribute 0. The second value counts
/// those coordinates whose numerator was nonzero.
pub fn bray_curtis_counted(u: &[f64], v: &[f64]) -> Result<(f64, usize)> {
    check_dims(u, v)?;
    let mut d = 0.0;
    let mut degenerate = 0;
    for (&a, &b) in u.iter().zip(v) {
        let num = (a - b).abs();
        let den = (a + b).abs();
        if den == 0.0 {
            if num != 0.0 {
                degenerate += 1;
            }
        } else {
            d += num / den;
        }
    }
    Ok((d, degenerate))
}

pub fn bray_curtis(u: &[f64], v: &[f64]) -> Result<f64> {
    bray_curtis_counted(u, v).map(|(d, _)| d)
}

/// Pooled Bray-Curtis `Σ|u−v| / Σ|u+v|`; 0 when the denominator is 0.
pub fn bray_curtis_pooled(u: &[f64], v: &[f64]) -> Result<f64> {
    check_dims(u, v)?;
    let (num, den) = u.iter().zip(v).fold((0.0, 0.0), |(n, d), (&a, &b)| {
        (n + (a - b).abs(), d + (a + b).abs())
    });
    Ok(if den == 0.0 { 0.0 } else { num / den })
}

pub fn manhattan(u: &[f64], v: &[f64]) -> Result<f64> {
    check_dims(u, v)?;
    Ok(u.iter().zip(v).map(|(a, b)| (a - b).abs()).sum())
}

pub fn euclidean(u: &[f64], v: &[f64]) -> Result<f64> {
    check_dims(u, v)?;
    Ok(u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
}

/// Cosine similarity; 0 when either vector is all zeros.
pub fn cosine_sim(u: &[f64], v: &[f64]) -> Result<f64> {
    check_dims(u, v)?;
    let (dot, nu, nv) = u.iter().zip(v).fold((0.0, 0.0, 0.0), |(d, x, y), (&a, &b)| {
        (d + a * b, x + a * a, y + b * b)
    });
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    Ok(dot / (nu.sqrt() * nv.sqrt()))
}

impl DistanceMeasure {
    /// Similarity score: `1 − D` for the distances, the cosine itself
    /// otherwise. Not clamped, so distance-derived scores may be negative.
    pub fn similarity(self, u: &[f64], v: &[f64]) -> Result<f64> {
        Ok(match self {
            DistanceMeasure::BrayCurtis(BrayCurtisForm::PerCoordinate) => 1.0 - bray_curtis(u, v)?,
            DistanceMeasure::BrayCurtis(BrayCurtisForm::Pooled) => 1.0 - bray_curtis_pooled(u, v)?,
            DistanceMeasure::Manhattan => 1.0 - manhattan(u, v)?,
            DistanceMeasure::Euclidean => 1.0 - euclidean(u, v)?,
            DistanceMeasure::Cosine => cosine_sim(u, v)?,
        })
    }
}

/// Side information collected while building a similarity matrix.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimDiagnostics {
    /// Bray-Curtis coordinates where `u_i + v_i = 0` but `u_i ≠ v_i`.
    pub zero_denominator_events: usize,
}

pub fn sim_matrix(
    source: &EmbeddingMatrix,
    target: &EmbeddingMatrix,
    measure: DistanceMeasure,
    tag: FeatureTag,
) -> Result<SimilarityMatrix> {
    sim_matrix_with_diagnostics(source, target, measure, tag).map(|(m, _)| m)
}

/// Entry `(i, j)` is `measure.similarity(source_i, target_j)`. Rows are
/// computed in parallel.
pub fn sim_matrix_with_diagnostics(
    source: &EmbeddingMatrix,
    target: &EmbeddingMatrix,
    measure: DistanceMeasure,
    tag: FeatureTag,
) -> Result<(SimilarityMatrix, SimDiagnostics)> {
    if source.dim() != target.dim() {
        return Err(Error::Argument(format!(
            "embedding dimensions differ: {} vs {}",
            source.dim(),
            target.dim()
        )));
    }
    let src = source.as_array();
    let tgt = target.as_array();
    let tgt_rows: Vec<Vec<f64>> = tgt.axis_iter(Axis(0)).map(|r| r.to_vec()).collect();
    let rows: Vec<(Vec<f64>, usize)> = (0..src.nrows())
        .into_par_iter()
        .map(|i| {
            let u = src.row(i).to_vec();
            let mut events = 0;
            let row = tgt_rows
                .iter()
                .map(|v| match measure {
                    DistanceMeasure::BrayCurtis(BrayCurtisForm::PerCoordinate) => {
                        let (d, e) = bray_curtis_counted(&u, v).expect("dimensions checked");
                        events += e;
                        1.0 - d
                    }
                    m => m.similarity(&u, v).expect("dimensions checked"),
                })
                .collect();
            (row, events)
        })
        .collect();
    let events = rows.iter().map(|(_, e)| e).sum();
    let flat: Vec<f64> = rows.into_iter().flat_map(|(r, _)| r).collect();
    let scores = Array2::from_shape_vec((src.nrows(), tgt.nrows()), flat)
        .expect("row lengths equal target count");
    Ok((
        SimilarityMatrix::new(scores, tag)?,
        SimDiagnostics {
            zero_denominator_events: events,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use proptest::prelude::*;

    const ALL: [DistanceMeasure; 5] = [
        DistanceMeasure::BrayCurtis(BrayCurtisForm::PerCoordinate),
        DistanceMeasure::BrayCurtis(BrayCurtisForm::Pooled),
        DistanceMeasure::Manhattan,
        DistanceMeasure::Euclidean,
        DistanceMeasure::Cosine,
    ];

    #[test]
    fn bray_curtis_examples() {
        assert_eq!(bray_curtis(&[0.3, -0.2], &[0.3, -0.2]).unwrap(), 0.0);
        // 0.25/0.75 + 0.25/1.25 = 1/3 + 1/5 = 8/15
        let d = bray_curtis(&[0.5, 0.5], &[0.25, 0.75]).unwrap();
        assert!((d - 8.0 / 15.0).abs() < 1e-15);
        assert!((1.0 - d - 7.0 / 15.0).abs() < 1e-15);
        let (d, events) = bray_curtis_counted(&[1.0], &[-1.0]).unwrap();
        assert_eq!((d, events), (0.0, 1));
        let (_, events) = bray_curtis_counted(&[0.0], &[0.0]).unwrap();
        assert_eq!(events, 0);
    }

    #[test]
    fn orthogonal_unit_vectors() {
        let (u, v) = ([1.0, 0.0], [0.0, 1.0]);
        assert_eq!(manhattan(&u, &v).unwrap(), 2.0);
        assert_eq!(euclidean(&u, &v).unwrap(), 2f64.sqrt());
        assert_eq!(cosine_sim(&u, &v).unwrap(), 0.0);
    }

    #[test]
    fn identical_vectors_have_unit_similarity() {
        let u = [0.2, -1.5, 3.0];
        for m in ALL {
            assert_eq!(m.similarity(&u, &u).unwrap(), 1.0, "{m:?}");
        }
        assert_eq!(manhattan(&u, &u).unwrap(), 0.0);
        assert_eq!(euclidean(&u, &u).unwrap(), 0.0);
    }

    #[test]
    fn cosine_zero_vector_convention() {
        assert_eq!(cosine_sim(&[0.0, 0.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(cosine_sim(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch() {
        for m in ALL {
            assert!(matches!(m.similarity(&[1.0], &[1.0, 2.0]), Err(Error::Argument(_))));
        }
    }

    #[test]
    fn sim_matrix_identity_rows() {
        let e = EmbeddingMatrix::new(arr2(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])).unwrap();
        let m = sim_matrix(&e, &e, DistanceMeasure::default(), FeatureTag::Semantic).unwrap();
        assert_eq!(m.tag(), FeatureTag::Semantic);
        for i in 0..3 {
            assert_eq!(m.get(i, i), 1.0);
        }
    }

    #[test]
    fn sim_matrix_dimension_mismatch() {
        let a = EmbeddingMatrix::new(Array2::zeros((2, 3))).unwrap();
        let b = EmbeddingMatrix::new(Array2::zeros((2, 4))).unwrap();
        assert!(sim_matrix(&a, &b, DistanceMeasure::Cosine, FeatureTag::Structural).is_err());
    }

    #[test]
    fn neutralize_floors_flagged_cells() {
        let mut m = SimilarityMatrix::from_rows(
            &[vec![0.9, 0.2], vec![0.5, 1.0]],
            FeatureTag::Semantic,
        )
        .unwrap();
        m.neutralize(&[false, true], &[false, false]);
        assert_eq!(m.scores(), &arr2(&[[0.9, 0.2], [0.2, 0.2]]));
    }

    fn vec_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..12).prop_flat_map(|d| {
            (
                proptest::collection::vec(-2.0f64..2.0, d),
                proptest::collection::vec(-2.0f64..2.0, d),
            )
        })
    }

    proptest! {
        #[test]
        fn measures_are_symmetric((u, v) in vec_pair()) {
            for m in ALL {
                prop_assert_eq!(m.similarity(&u, &v).unwrap(), m.similarity(&v, &u).unwrap());
            }
        }

        #[test]
        fn cosine_argmax_invariant_under_scaling(
            u in proptest::collection::vec(-1.0f64..1.0, 4),
            cands in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 4), 2..8),
            c in 0.01f64..100.0,
        ) {
            let argmax = |scale: f64| {
                cands
                    .iter()
                    .enumerate()
                    .map(|(j, v)| {
                        let scaled: Vec<f64> = v.iter().map(|x| x * scale).collect();
                        (j, cosine_sim(&u, &scaled).unwrap())
                    })
                    .fold((0, f64::NEG_INFINITY), |best, (j, s)| if s > best.1 + 1e-12 { (j, s) } else { best })
                    .0
            };
            prop_assert_eq!(argmax(1.0), argmax(c));
        }

        #[test]
        fn transpose_swaps_arguments(
            a in proptest::collection::vec(-1.0f64..1.0, 3 * 4),
            b in proptest::collection::vec(-1.0f64..1.0, 5 * 4),
        ) {
            let e1 = EmbeddingMatrix::new(Array2::from_shape_vec((3, 4), a).unwrap()).unwrap();
            let e2 = EmbeddingMatrix::new(Array2::from_shape_vec((5, 4), b).unwrap()).unwrap();
            for m in ALL {
                let fwd = sim_matrix(&e1, &e2, m, FeatureTag::Structural).unwrap();
                let back = sim_matrix(&e2, &e1, m, FeatureTag::Structural).unwrap();
                prop_assert_eq!(fwd.transpose(), back);
            }
        }
    }
}
