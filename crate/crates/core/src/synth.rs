//! Planted-alignment test bed: a random graph, a perturbed and renamed copy
//! of it, and the word vectors needed for the semantic feature.
//!
//! Source entities get ids `0..n`, their counterparts `n..2n`. The target
//! graph lists its entities in shuffled order so that index position says
//! nothing about the gold pairing.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{write_alignment, write_file, IdMap, KnowledgeGraph, Triple};
use crate::names::WordVectorTable;

const CONSONANTS: &[u8] = b"bcdfghklmnprstvz";
const VOWELS: &[u8] = b"aeiou";
const LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n: usize,
    /// Probability of each unordered pair being linked in the source graph.
    pub edge_prob: f64,
    /// Per-character probability of an edit in a target name.
    pub name_noise: f64,
    /// Fraction of target edges removed, replaced by as many random edges.
    pub edge_perturbation: f64,
    pub num_relations: usize,
    pub word_dim: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 200,
            edge_prob: 0.03,
            name_noise: 0.1,
            edge_perturbation: 0.1,
            num_relations: 8,
            word_dim: 32,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 4 {
            return Err(Error::Argument(format!("n must be >= 4, got {}", self.n)));
        }
        for (name, p) in [
            ("edge_prob", self.edge_prob),
            ("name_noise", self.name_noise),
            ("edge_perturbation", self.edge_perturbation),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Argument(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if self.num_relations == 0 || self.word_dim == 0 {
            return Err(Error::Argument("num_relations and word_dim must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub kg1: KnowledgeGraph,
    pub kg2: KnowledgeGraph,
    /// Gold pairs as `(kg1 index, kg2 index)`, ordered by source.
    pub gold: Vec<(usize, usize)>,
    pub word_vectors: WordVectorTable,
}

impl SynthDataset {
    pub fn gold_ids(&self) -> Vec<(String, String)> {
        self.gold
            .iter()
            .map(|&(s, t)| {
                (
                    self.kg1.entities().ids()[s].clone(),
                    self.kg2.entities().ids()[t].clone(),
                )
            })
            .collect()
    }

    /// Writes the dataset into `dir` using the layout of [`DatasetFiles`].
    pub fn write(&self, dir: &Path) -> Result<DatasetFiles> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = DatasetFiles::in_dir(dir);
        self.kg1.write_tsv(&files.triples1, &files.names1)?;
        self.kg2.write_tsv(&files.triples2, &files.names2)?;
        write_alignment(&files.alignment, &self.gold_ids())?;
        write_file(&files.vectors, self.word_vectors.to_vec_text().as_bytes())?;
        Ok(files)
    }
}

/// File names of a dataset directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetFiles {
    pub triples1: PathBuf,
    pub names1: PathBuf,
    pub triples2: PathBuf,
    pub names2: PathBuf,
    pub alignment: PathBuf,
    pub vectors: PathBuf,
}

impl DatasetFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            triples1: dir.join("kg1_triples.tsv"),
            names1: dir.join("kg1_names.tsv"),
            triples2: dir.join("kg2_triples.tsv"),
            names2: dir.join("kg2_names.tsv"),
            alignment: dir.join("alignment.tsv"),
            vectors: dir.join("vectors.vec"),
        }
    }
}

fn pseudo_word<R: Rng>(rng: &mut R) -> String {
    let syllables = rng.random_range(2..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push(CONSONANTS[rng.random_range(0..CONSONANTS.len())] as char);
        w.push(VOWELS[rng.random_range(0..VOWELS.len())] as char);
    }
    w
}

fn vocabulary<R: Rng>(size: usize, rng: &mut R) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut words = Vec::with_capacity(size);
    while words.len() < size {
        let w = pseudo_word(rng);
        if seen.insert(w.clone()) {
            words.push(w);
        }
    }
    words
}

/// Substitutes, deletes or inserts a random letter at each position with
/// probability `p`. Spaces are kept.
pub fn add_name_noise<R: Rng>(name: &str, p: f64, rng: &mut R) -> String {
    let mut out = String::with_capacity(name.len() + 4);
    for c in name.chars() {
        if c == ' ' || !rng.random_bool(p) {
            out.push(c);
            continue;
        }
        let letter = LETTERS[rng.random_range(0..LETTERS.len())] as char;
        match rng.random_range(0..3) {
            0 => out.push(letter),
            1 => {}
            _ => {
                out.push(c);
                out.push(letter);
            }
        }
    }
    out
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

pub fn gen_synthetic(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let n = cfg.n;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Distinct two-word names over a small vocabulary so that many names
    // share a word.
    let vocab = vocabulary(2 * (n as f64).sqrt().ceil() as usize + 2, &mut rng);
    let mut used = BTreeSet::new();
    let mut names1 = Vec::with_capacity(n);
    while names1.len() < n {
        let a = rng.random_range(0..vocab.len());
        let b = rng.random_range(0..vocab.len());
        if a != b && used.insert((a, b)) {
            names1.push(format!("{} {}", vocab[a], vocab[b]));
        }
    }
    let mut word_vectors = WordVectorTable::new(cfg.word_dim);
    for w in &vocab {
        let v: Vec<f64> = (0..cfg.word_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        word_vectors.insert(w, v)?;
    }

    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random_bool(cfg.edge_prob) {
                edges.push((a, b, rng.random_range(0..cfg.num_relations)));
            }
        }
    }

    // Target edges over source indices: drop a fraction, add as many new.
    let mut kept: Vec<(usize, usize, usize)> = edges.clone();
    kept.shuffle(&mut rng);
    let changes = (cfg.edge_perturbation * edges.len() as f64).round() as usize;
    kept.truncate(edges.len() - changes);
    let mut present: BTreeSet<(usize, usize)> = edges.iter().map(|&(a, b, _)| edge_key(a, b)).collect();
    let max_edges = n * (n - 1) / 2;
    let mut added = 0;
    while added < changes && present.len() < max_edges {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a != b && present.insert(edge_key(a, b)) {
            kept.push((a, b, rng.random_range(0..cfg.num_relations)));
            added += 1;
        }
    }
    kept.sort_unstable();

    let mut relations = IdMap::new();
    for r in 0..cfg.num_relations {
        relations.intern(&format!("r{r}"));
    }
    let to_triple = |(a, b, r): (usize, usize, usize), index: &dyn Fn(usize) -> usize| Triple {
        head: index(a),
        relation: r,
        tail: index(b),
    };

    let mut entities1 = IdMap::new();
    for i in 0..n {
        entities1.intern(&i.to_string());
    }
    let triples1 = edges.iter().map(|&e| to_triple(e, &|i| i)).collect();
    let kg1 = KnowledgeGraph::from_parts(entities1, relations.clone(), triples1, names1.clone())?;

    // position_of[i] is the kg2 index of the counterpart of source i.
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut position_of = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        position_of[i] = pos;
    }
    let mut entities2 = IdMap::new();
    let mut names2 = Vec::with_capacity(n);
    for &i in &order {
        entities2.intern(&(n + i).to_string());
        names2.push(add_name_noise(&names1[i], cfg.name_noise, &mut rng));
    }
    let triples2 = kept.iter().map(|&e| to_triple(e, &|i| position_of[i])).collect();
    let kg2 = KnowledgeGraph::from_parts(entities2, relations, triples2, names2)?;

    let gold = (0..n).map(|i| (i, position_of[i])).collect();
    Ok(SynthDataset {
        kg1,
        kg2,
        gold,
        word_vectors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gold_maps_to_fresh_ids() {
        let d = gen_synthetic(&SynthConfig { n: 30, ..SynthConfig::default() }).unwrap();
        assert_eq!(d.gold.len(), 30);
        for (s, t) in d.gold_ids() {
            assert_eq!(t.parse::<usize>().unwrap(), s.parse::<usize>().unwrap() + 30);
        }
    }

    #[test]
    fn noiseless_copy_keeps_names_and_edges() {
        let cfg = SynthConfig {
            n: 40,
            edge_prob: 0.1,
            name_noise: 0.0,
            edge_perturbation: 0.0,
            ..SynthConfig::default()
        };
        let d = gen_synthetic(&cfg).unwrap();
        for &(s, t) in &d.gold {
            assert_eq!(d.kg1.name(s), d.kg2.name(t));
        }
        let map: std::collections::HashMap<usize, usize> = d.gold.iter().copied().collect();
        for t in d.kg1.triples() {
            assert!(d.kg2.are_adjacent(map[&t.head], map[&t.tail]));
        }
        assert_eq!(d.kg1.triples().len(), d.kg2.triples().len());
    }

    #[test]
    fn seeded_generation_is_deterministic() {
        let cfg = SynthConfig { n: 50, seed: 9, ..SynthConfig::default() };
        let (a, b) = (gen_synthetic(&cfg).unwrap(), gen_synthetic(&cfg).unwrap());
        assert_eq!(a.kg2.names(), b.kg2.names());
        assert_eq!(a.kg2.triples(), b.kg2.triples());
        assert_eq!(a.gold, b.gold);
        assert_eq!(a.word_vectors, b.word_vectors);
    }

    #[test]
    fn rejects_tiny_graphs() {
        assert!(gen_synthetic(&SynthConfig { n: 3, ..SynthConfig::default() }).is_err());
    }

    #[test]
    fn noise_changes_some_names() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(add_name_noise("kalo ture", 0.0, &mut rng), "kalo ture");
        let noisy: Vec<String> = (0..20).map(|_| add_name_noise("kalo ture", 0.5, &mut rng)).collect();
        assert!(noisy.iter().any(|s| s != "kalo ture"));
        assert!(noisy.iter().all(|s| s.contains(' ')));
    }
}
