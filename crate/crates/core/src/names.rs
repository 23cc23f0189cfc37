//! Name-based features: averaged word embeddings and Levenshtein string
//! similarity.

use std::collections::HashMap;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;

use crate::embed::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::kg::read_file;
use crate::simmat::{FeatureTag, SimilarityMatrix};

/// Pre-trained word vectors, all of dimension `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct WordVectorTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl WordVectorTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn insert(&mut self, token: &str, vector: Vec<f64>) -> Result<()> {
        if token.is_empty() {
            return Err(Error::Argument("empty token".into()));
        }
        if vector.len() != self.dim {
            return Err(Error::Argument(format!(
                "vector for `{token}` has dimension {}, table has {}",
                vector.len(),
                self.dim
            )));
        }
        self.vectors.insert(token.to_owned(), vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    /// Writes the table in `.vec` text format with a `count dim` header,
    /// tokens sorted.
    pub fn to_vec_text(&self) -> String {
        let mut tokens: Vec<&String> = self.vectors.keys().collect();
        tokens.sort();
        let mut out = format!("{} {}\n", tokens.len(), self.dim);
        for t in tokens {
            out.push_str(t);
            for v in &self.vectors[t] {
                out.push_str(&format!(" {v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Loads a fastText-style `.vec` file: an optional `count dim` header, then
/// `token v1 … vd` per line.
pub fn load_word_vectors(path: &Path) -> Result<WordVectorTable> {
    parse_word_vectors(&read_file(path)?, path)
}

pub fn parse_word_vectors(text: &str, path: &Path) -> Result<WordVectorTable> {
    let mut dim: Option<usize> = None;
    let mut table: Option<WordVectorTable> = None;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if line_no == 1 && fields.len() == 2 {
            if let (Ok(_), Ok(d)) = (fields[0].parse::<usize>(), fields[1].parse::<usize>()) {
                dim = Some(d);
                continue;
            }
        }
        let token = fields[0];
        let values = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::parse(path, line_no, format!("bad vector component: {e}")))?;
        let d = *dim.get_or_insert(values.len());
        if values.len() != d || d == 0 {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected {d} components, found {}", values.len()),
            ));
        }
        table
            .get_or_insert_with(|| WordVectorTable::new(d))
            .insert(token, values)
            .map_err(|e| Error::parse(path, line_no, e.to_string()))?;
    }
    Ok(table.unwrap_or_else(|| WordVectorTable::new(dim.unwrap_or(0))))
}

/// Lowercases, turns every character that is neither alphanumeric nor
/// whitespace (punctuation, underscores, symbols) into a separator, and
/// splits on whitespace.
pub fn tokenize(name: &str) -> Vec<String> {
    let cleaned: String = name
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    cleaned.split_whitespace().map(str::to_owned).collect()
}

/// Human-readable label of an entity: the last path segment when the stored
/// name is a URI, the name itself otherwise.
pub fn display_label(name: &str) -> &str {
    if name.contains("://") {
        name.trim_end_matches('/').rsplit('/').next().unwrap_or(name)
    } else {
        name
    }
}

/// Mean of the vectors of the in-vocabulary tokens of `name`. Returns the
/// zero vector and `true` when no token is in the vocabulary.
pub fn name_embedding(name: &str, table: &WordVectorTable) -> (Vec<f64>, bool) {
    let mut sum = vec![0.0; table.dim()];
    let mut hits = 0usize;
    for token in tokenize(name) {
        if let Some(v) = table.get(&token) {
            for (s, x) in sum.iter_mut().zip(v) {
                *s += x;
            }
            hits += 1;
        }
    }
    if hits == 0 {
        return (sum, true);
    }
    let n = hits as f64;
    (sum.into_iter().map(|s| s / n).collect(), false)
}

/// Name embeddings of a whole graph with their out-of-vocabulary mask.
/// Flagged rows are exactly the all-zero rows.
#[derive(Debug, Clone)]
pub struct NameEmbeddingMatrix {
    pub rows: EmbeddingMatrix,
    pub oov_mask: Vec<bool>,
}

impl NameEmbeddingMatrix {
    pub fn oov_count(&self) -> usize {
        self.oov_mask.iter().filter(|&&f| f).count()
    }
}

pub fn name_embedding_matrix<S: AsRef<str>>(names: &[S], table: &WordVectorTable) -> NameEmbeddingMatrix {
    let mut rows = Array2::zeros((names.len(), table.dim()));
    let mut oov_mask = Vec::with_capacity(names.len());
    for (i, name) in names.iter().enumerate() {
        let (v, oov) = name_embedding(name.as_ref(), table);
        // An in-vocabulary average can still be exactly zero; flag it too so
        // the mask matches the zero rows.
        let zero = v.iter().all(|&x| x == 0.0);
        rows.row_mut(i).assign(&ndarray::Array1::from(v));
        oov_mask.push(oov || zero);
    }
    NameEmbeddingMatrix {
        rows: EmbeddingMatrix::new(rows).expect("averages of finite vectors are finite"),
        oov_mask,
    }
}

/// Edit distance over Unicode scalar values with unit-cost insertion,
/// deletion and substitution.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 − levenshtein(a, b) / max(|a|, |b|)`, and 1 for two empty strings.
pub fn lev_ratio(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(a, b) as f64 / longest as f64
}

/// Entry `(i, j)` is `lev_ratio(source[i], target[j])`.
pub fn string_sim_matrix<S: AsRef<str> + Sync>(source: &[S], target: &[S]) -> Result<SimilarityMatrix> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::Argument("string similarity needs nonempty name lists".into()));
    }
    let rows: Vec<Vec<f64>> = source
        .par_iter()
        .map(|s| target.iter().map(|t| lev_ratio(s.as_ref(), t.as_ref())).collect())
        .collect();
    SimilarityMatrix::from_rows(&rows, FeatureTag::String)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table() -> WordVectorTable {
        let mut t = WordVectorTable::new(2);
        t.insert("paris", vec![1.0, 0.0]).unwrap();
        t.insert("france", vec![0.0, 1.0]).unwrap();
        t
    }

    #[test]
    fn parse_without_and_with_header() {
        let p = Path::new("v.vec");
        let a = parse_word_vectors("a 1 2 3\nb 4 5 6\n", p).unwrap();
        assert_eq!((a.len(), a.dim()), (2, 3));
        let b = parse_word_vectors("2 3\na 1 2 3\nb 4 5 6\n", p).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.get("b"), Some(&[4.0, 5.0, 6.0][..]));
    }

    #[test]
    fn parse_rejects_inconsistent_dimension() {
        let p = Path::new("v.vec");
        match parse_word_vectors("a 1 2 3\nb 4 5\n", p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(parse_word_vectors("2 3\na 1 2\n", p).is_err());
    }

    #[test]
    fn text_round_trip() {
        let t = table();
        assert_eq!(parse_word_vectors(&t.to_vec_text(), Path::new("x")).unwrap(), t);
    }

    #[test]
    fn tokenizer_handles_dbpedia_style_names() {
        assert_eq!(tokenize("Paris_(France)"), vec!["paris", "france"]);
        assert_eq!(tokenize("  São  Paulo "), vec!["são", "paulo"]);
        assert_eq!(display_label("http://dbpedia.org/resource/Barack_Obama"), "Barack_Obama");
        assert_eq!(display_label("Obama"), "Obama");
    }

    #[test]
    fn embedding_examples() {
        let t = table();
        assert_eq!(name_embedding("Paris", &t), (vec![1.0, 0.0], false));
        assert_eq!(name_embedding("Paris France", &t), (vec![0.5, 0.5], false));
        assert_eq!(name_embedding("Lyon Nord", &t), (vec![0.0, 0.0], true));
        assert_eq!(name_embedding("paris lyon", &t), (vec![1.0, 0.0], false));
    }

    #[test]
    fn oov_mask_matches_zero_rows() {
        let m = name_embedding_matrix(&["Paris", "nowhere", "France_Paris"], &table());
        assert_eq!(m.oov_mask, vec![false, true, false]);
        assert_eq!(m.oov_count(), 1);
        for (row, &flag) in m.rows.as_array().rows().into_iter().zip(&m.oov_mask) {
            assert_eq!(row.iter().all(|&x| x == 0.0), flag);
        }
    }

    #[test]
    fn levenshtein_examples() {
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        assert_eq!(levenshtein("abc", "abc"), 0);
        assert_eq!(levenshtein("", "héllo"), 5);
        assert_eq!(levenshtein("flaw", "lawn"), 2);
    }

    #[test]
    fn ratio_examples() {
        assert!((lev_ratio("kitten", "sitting") - 4.0 / 7.0).abs() < 1e-15);
        assert_eq!(lev_ratio("same", "same"), 1.0);
        assert_eq!(lev_ratio("abcd", "wxyz"), 0.0);
        assert_eq!(lev_ratio("", ""), 1.0);
    }

    #[test]
    fn string_matrix_examples() {
        let m = string_sim_matrix(&["x"], &["x"]).unwrap();
        assert_eq!(m.scores(), &ndarray::arr2(&[[1.0]]));
        let m = string_sim_matrix(&["ab"], &["ab", "cd"]).unwrap();
        assert_eq!(m.scores(), &ndarray::arr2(&[[1.0, 0.0]]));
        assert_eq!(m.tag(), FeatureTag::String);
        let empty: [&str; 0] = [];
        assert!(string_sim_matrix(&empty, &["a"]).is_err());
    }

    /// Textbook full-table DP, kept separate from the two-row version.
    fn dp_oracle(a: &str, b: &str) -> usize {
        let a: Vec<char> = a.chars().collect();
        let b: Vec<char> = b.chars().collect();
        let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for (i, row) in d.iter_mut().enumerate() {
            row[0] = i;
        }
        for j in 0..=b.len() {
            d[0][j] = j;
        }
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                let cost = usize::from(a[i - 1] != b[j - 1]);
                d[i][j] = (d[i - 1][j] + 1).min(d[i][j - 1] + 1).min(d[i - 1][j - 1] + cost);
            }
        }
        d[a.len()][b.len()]
    }

    proptest! {
        #[test]
        fn levenshtein_matches_dp_and_is_a_metric(
            a in "[abcé]{0,8}", b in "[abcé]{0,8}", c in "[abcé]{0,8}",
        ) {
            prop_assert_eq!(levenshtein(&a, &b), dp_oracle(&a, &b));
            prop_assert_eq!(levenshtein(&a, &b), levenshtein(&b, &a));
            prop_assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
            let r = lev_ratio(&a, &b);
            prop_assert!((0.0..=1.0).contains(&r));
            prop_assert_eq!(r, lev_ratio(&b, &a));
        }

        #[test]
        fn embedding_ignores_token_order(perm in Just(vec!["paris", "france", "lyon"]).prop_shuffle()) {
            let t = table();
            let (base, _) = name_embedding("paris france lyon", &t);
            let (shuffled, _) = name_embedding(&perm.join(" "), &t);
            prop_assert_eq!(base, shuffled);
        }

        #[test]
        fn matrix_rows_match_scalar_calls(
            src in proptest::collection::vec("[a-d]{0,5}", 1..6),
            tgt in proptest::collection::vec("[a-d]{0,5}", 1..6),
        ) {
            let m = string_sim_matrix(&src, &tgt).unwrap();
            for (i, s) in src.iter().enumerate() {
                for (j, t) in tgt.iter().enumerate() {
                    prop_assert_eq!(m.get(i, j), lev_ratio(s, t));
                }
            }
        }
    }
}
