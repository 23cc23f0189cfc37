//! Knowledge-graph data model, TSV ingestion, seed splits and the
//! normalized adjacency operator used by the GCN encoder.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bidirectional map between external ids and dense indices `0..len`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the index of `id`, assigning the next free index if unseen.
    pub fn intern(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.ids.len();
        self.ids.push(id.to_owned());
        self.index.insert(id.to_owned(), i);
        i
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id_of(&self, index: usize) -> Option<&str> {
        self.ids.get(index).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

/// One knowledge graph with densely indexed entities and relations.
///
/// Immutable after construction. Neighbor lists are undirected and built
/// once so that coherence lookups and adjacency construction are cheap.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entities: IdMap,
    relations: IdMap,
    triples: Vec<Triple>,
    names: Vec<String>,
    neighbors: Vec<Vec<usize>>,
}

impl KnowledgeGraph {
    /// Builds a graph from already indexed parts, checking every invariant.
    pub fn from_parts(
        entities: IdMap,
        relations: IdMap,
        triples: Vec<Triple>,
        names: Vec<String>,
    ) -> Result<Self> {
        let n = entities.len();
        if names.len() != n {
            return Err(Error::Integrity(format!(
                "{} names for {} entities",
                names.len(),
                n
            )));
        }
        for t in &triples {
            if t.head >= n || t.tail >= n || t.relation >= relations.len() {
                return Err(Error::Integrity(format!(
                    "triple ({}, {}, {}) out of range",
                    t.head, t.relation, t.tail
                )));
            }
        }
        let mut neighbors = vec![Vec::new(); n];
        for t in &triples {
            if t.head != t.tail {
                neighbors[t.head].push(t.tail);
                neighbors[t.tail].push(t.head);
            }
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self {
            entities,
            relations,
            triples,
            names,
            neighbors,
        })
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn entities(&self) -> &IdMap {
        &self.entities
    }

    pub fn relations(&self) -> &IdMap {
        &self.relations
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, e: usize) -> &str {
        &self.names[e]
    }

    /// Entities sharing any triple with `e` in either direction, excluding `e`.
    pub fn neighbors(&self, e: usize) -> Result<BTreeSet<usize>> {
        self.neighbor_slice(e).map(|s| s.iter().copied().collect())
    }

    /// Sorted neighbor list of `e`.
    pub fn neighbor_slice(&self, e: usize) -> Result<&[usize]> {
        self.neighbors.get(e).map(Vec::as_slice).ok_or_else(|| {
            Error::Argument(format!(
                "entity index {e} out of range for {} entities",
                self.num_entities()
            ))
        })
    }

    pub fn are_adjacent(&self, a: usize, b: usize) -> bool {
        self.neighbors
            .get(a)
            .is_some_and(|list| list.binary_search(&b).is_ok())
    }

    /// Symmetrically normalized adjacency with self-loops, unit edge weights.
    pub fn adjacency(&self) -> AdjacencyMatrix {
        self.adjacency_with(&UnitWeights)
    }

    pub fn adjacency_with(&self, weighting: &dyn EdgeWeighting) -> AdjacencyMatrix {
        AdjacencyMatrix::normalized(self, weighting)
    }

    /// Writes the graph back out as a triples TSV and a names TSV using the
    /// original external ids, in dense index order.
    pub fn write_tsv(&self, triples_path: &Path, names_path: &Path) -> Result<()> {
        let mut out = String::new();
        for t in &self.triples {
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                self.entities.ids[t.head], self.relations.ids[t.relation], self.entities.ids[t.tail]
            ));
        }
        write_file(triples_path, out.as_bytes())?;
        let mut out = String::new();
        for (id, name) in self.entities.ids.iter().zip(&self.names) {
            out.push_str(&format!("{id}\t{name}\n"));
        }
        write_file(names_path, out.as_bytes())
    }
}

pub(crate) fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Non-blank lines with their 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

/// Loads a graph from a `head\trel\ttail` triples file and an `id\tname`
/// names file. Entity indices follow the order of the names file; relation
/// indices follow first appearance in the triples file.
pub fn load_kg(triples_path: &Path, names_path: &Path) -> Result<KnowledgeGraph> {
    let names_text = read_file(names_path)?;
    let mut entities = IdMap::new();
    let mut names = Vec::new();
    for (line_no, line) in data_lines(&names_text) {
        let (id, name) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(names_path, line_no, "expected `id<TAB>name`"))?;
        let id = id.trim();
        if id.is_empty() {
            return Err(Error::parse(names_path, line_no, "empty entity id"));
        }
        if entities.index_of(id).is_some() {
            return Err(Error::parse(
                names_path,
                line_no,
                format!("duplicate entity id `{id}`"),
            ));
        }
        entities.intern(id);
        names.push(name.to_owned());
    }

    let triples_text = read_file(triples_path)?;
    let mut relations = IdMap::new();
    let mut triples = Vec::new();
    for (line_no, line) in data_lines(&triples_text) {
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        if cols.len() != 3 || cols.iter().any(|c| c.is_empty()) {
            return Err(Error::parse(
                triples_path,
                line_no,
                format!("expected 3 tab-separated columns, found {}", cols.len()),
            ));
        }
        let lookup = |id: &str| {
            entities.index_of(id).ok_or_else(|| {
                Error::Integrity(format!(
                    "{}:{line_no}: entity `{id}` missing from names file {}",
                    triples_path.display(),
                    names_path.display()
                ))
            })
        };
        let head = lookup(cols[0])?;
        let tail = lookup(cols[2])?;
        let relation = relations.intern(cols[1]);
        triples.push(Triple {
            head,
            relation,
            tail,
        });
    }
    KnowledgeGraph::from_parts(entities, relations, triples, names)
}

/// Loads `source_id\ttarget_id` pairs. Gold alignments are 1-to-1, so a
/// repeated source or target id is rejected.
pub fn load_alignment(path: &Path) -> Result<Vec<(String, String)>> {
    let text = read_file(path)?;
    let mut pairs = Vec::new();
    let mut seen_src = HashSet::new();
    let mut seen_tgt = HashSet::new();
    for (line_no, line) in data_lines(&text) {
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        if cols.len() != 2 || cols.iter().any(|c| c.is_empty()) {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected 2 tab-separated columns, found {}", cols.len()),
            ));
        }
        if !seen_src.insert(cols[0].to_owned()) {
            return Err(Error::Integrity(format!(
                "{}:{line_no}: duplicate source id `{}`",
                path.display(),
                cols[0]
            )));
        }
        if !seen_tgt.insert(cols[1].to_owned()) {
            return Err(Error::Integrity(format!(
                "{}:{line_no}: duplicate target id `{}`",
                path.display(),
                cols[1]
            )));
        }
        pairs.push((cols[0].to_owned(), cols[1].to_owned()));
    }
    Ok(pairs)
}

pub fn write_alignment(path: &Path, pairs: &[(String, String)]) -> Result<()> {
    let mut out = String::new();
    for (s, t) in pairs {
        out.push_str(&format!("{s}\t{t}\n"));
    }
    write_file(path, out.as_bytes())
}

/// Maps external id pairs onto entity indices of the two graphs.
pub fn resolve_alignment(
    pairs: &[(String, String)],
    source: &KnowledgeGraph,
    target: &KnowledgeGraph,
) -> Result<Vec<(usize, usize)>> {
    pairs
        .iter()
        .map(|(s, t)| {
            let si = source.entities().index_of(s).ok_or_else(|| {
                Error::Integrity(format!("aligned source `{s}` is not an entity of KG1"))
            })?;
            let ti = target.entities().index_of(t).ok_or_else(|| {
                Error::Integrity(format!("aligned target `{t}` is not an entity of KG2"))
            })?;
            Ok((si, ti))
        })
        .collect()
}

/// Gold pairs partitioned into train, validation and test seeds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentDataset {
    pub train: Vec<(usize, usize)>,
    pub val: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
}

impl AlignmentDataset {
    /// Checks that no source or target index occurs twice across the splits.
    pub fn new(
        train: Vec<(usize, usize)>,
        val: Vec<(usize, usize)>,
        test: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let mut src = HashSet::new();
        let mut tgt = HashSet::new();
        for &(s, t) in train.iter().chain(&val).chain(&test) {
            if !src.insert(s) {
                return Err(Error::Integrity(format!(
                    "source index {s} appears in more than one gold pair"
                )));
            }
            if !tgt.insert(t) {
                return Err(Error::Integrity(format!(
                    "target index {t} appears in more than one gold pair"
                )));
            }
        }
        Ok(Self { train, val, test })
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Shuffles `pairs` under `rng_seed` and cuts off `round(train_frac * n)`
/// training and `round(val_frac * n)` validation pairs; the rest is test.
pub fn split_alignment(
    pairs: &[(usize, usize)],
    train_frac: f64,
    val_frac: f64,
    rng_seed: u64,
) -> Result<AlignmentDataset> {
    if !(train_frac > 0.0 && val_frac > 0.0 && train_frac + val_frac < 1.0) {
        return Err(Error::Argument(format!(
            "split fractions must be positive with sum < 1, got train={train_frac}, val={val_frac}"
        )));
    }
    let n = pairs.len();
    let n_train = (train_frac * n as f64).round() as usize;
    let n_val = ((val_frac * n as f64).round() as usize).min(n - n_train);
    let mut shuffled = pairs.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
    let test = shuffled.split_off(n_train + n_val);
    let val = shuffled.split_off(n_train);
    AlignmentDataset::new(shuffled, val, test)
}

/// Raw (pre-normalization) weight of an undirected edge. Implementations
/// plug alternative schemes, such as relation-functionality weights, into
/// [`KnowledgeGraph::adjacency_with`].
pub trait EdgeWeighting {
    /// Weight of the edge between distinct adjacent entities `a < b`.
    fn edge_weight(&self, kg: &KnowledgeGraph, a: usize, b: usize) -> f64;
}

/// Every edge has weight 1.
#[derive(Debug, Clone, Copy, Default)]
pub struct UnitWeights;

impl EdgeWeighting for UnitWeights {
    fn edge_weight(&self, _kg: &KnowledgeGraph, _a: usize, _b: usize) -> f64 {
        1.0
    }
}

/// Sparse symmetric matrix `D^(-1/2) (A + I) D^(-1/2)` in CSR layout.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMatrix {
    n: usize,
    row_offsets: Vec<usize>,
    cols: Vec<usize>,
    weights: Vec<f64>,
}

impl AdjacencyMatrix {
    fn normalized(kg: &KnowledgeGraph, weighting: &dyn EdgeWeighting) -> Self {
        let n = kg.num_entities();
        // Raw weights of A + I, row by row, columns ascending.
        let mut raw: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for i in 0..n {
            raw[i].push((i, 1.0));
            for &j in &kg.neighbors[i] {
                if i < j {
                    let w = weighting.edge_weight(kg, i, j).max(0.0);
                    raw[i].push((j, w));
                    raw[j].push((i, w));
                }
            }
        }
        let deg: Vec<f64> = raw.iter().map(|row| row.iter().map(|&(_, w)| w).sum()).collect();
        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut weights = Vec::new();
        row_offsets.push(0);
        for (i, mut row) in raw.into_iter().enumerate() {
            row.sort_unstable_by_key(|&(j, _)| j);
            for (j, w) in row {
                cols.push(j);
                weights.push(w / (deg[i] * deg[j]).sqrt());
            }
            row_offsets.push(cols.len());
        }
        Self {
            n,
            row_offsets,
            cols,
            weights,
        }
    }

    /// Builds a matrix from explicit `(row, col, weight)` entries. Used for
    /// tests and for callers that bring their own operator.
    pub fn from_entries(n: usize, mut entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        entries.sort_by_key(|&(i, j, _)| (i, j));
        let mut row_offsets = vec![0; n + 1];
        for &(i, j, w) in &entries {
            if i >= n || j >= n {
                return Err(Error::Argument(format!(
                    "entry ({i}, {j}) out of range for n = {n}"
                )));
            }
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Argument(format!("entry ({i}, {j}) has weight {w}")));
            }
            row_offsets[i + 1] += 1;
        }
        for i in 0..n {
            row_offsets[i + 1] += row_offsets[i];
        }
        Ok(Self {
            n,
            row_offsets,
            cols: entries.iter().map(|e| e.1).collect(),
            weights: entries.iter().map(|e| e.2).collect(),
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n,
            row_offsets: (0..=n).collect(),
            cols: (0..n).collect(),
            weights: vec![1.0; n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_offsets[i]..self.row_offsets[i + 1];
        self.cols[range.clone()]
            .iter()
            .copied()
            .zip(self.weights[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, w)| w)
    }

    /// All stored entries as `(row, col, weight)`, row-major.
    pub fn entries(&self) -> Vec<(usize, usize, f64)> {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, w)| (i, j, w)))
            .collect()
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut dense = Array2::zeros((self.n, self.n));
        for (i, j, w) in self.entries() {
            dense[[i, j]] = w;
        }
        dense
    }

    /// Sparse-dense product `self · x`.
    pub fn matmul(&self, x: &Array2<f64>) -> Array2<f64> {
        assert_eq!(x.nrows(), self.n, "adjacency/feature row mismatch");
        let mut out = Array2::zeros((self.n, x.ncols()));
        for i in 0..self.n {
            let mut out_row = out.row_mut(i);
            for (j, w) in self.row(i) {
                out_row.scaled_add(w, &x.row(j));
            }
        }
        out
    }
}
