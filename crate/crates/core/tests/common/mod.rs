#![allow(dead_code)]

pub mod gradcheck;
pub mod matching;

use kgalign::collective::{
    a2c_align, AlignmentEnvironment, AlignmentResult, PreliminaryOutcome, RlConfig,
};
use kgalign::kg::{IdMap, KnowledgeGraph, Triple};
use kgalign::simmat::{FeatureTag, SimilarityMatrix};
use ndarray::Array2;
use rand::Rng;

/// Graph with entities `0..n`, one relation and the given undirected edges.
pub fn graph(n: usize, edges: &[(usize, usize)]) -> KnowledgeGraph {
    let mut entities = IdMap::new();
    for i in 0..n {
        entities.intern(&format!("e{i}"));
    }
    let mut relations = IdMap::new();
    relations.intern("r");
    let triples = edges
        .iter()
        .map(|&(head, tail)| Triple { head, relation: 0, tail })
        .collect();
    let names = (0..n).map(|i| format!("entity {i}")).collect();
    KnowledgeGraph::from_parts(entities, relations, triples, names).unwrap()
}

pub fn random_graph<R: Rng>(n: usize, p: f64, rng: &mut R) -> KnowledgeGraph {
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random_bool(p) {
                edges.push((a, b));
            }
        }
    }
    graph(n, &edges)
}

pub fn uniform_matrix<R: Rng>(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(lo..hi))
}

pub fn sim(rows: &[&[f64]]) -> SimilarityMatrix {
    let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
    SimilarityMatrix::from_rows(&rows, FeatureTag::Fused).unwrap()
}

/// `‖a − b‖ / max(‖a‖ + ‖b‖, 1e-12)` over flattened values.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / (na + nb).max(1e-12)
}

/// Central differences of `f` at every coordinate of `x`.
pub fn numeric_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            let orig = probe[k];
            probe[k] = orig + h;
            let up = f(&probe);
            probe[k] = orig - h;
            let down = f(&probe);
            probe[k] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// The four-entity example: `u1…u4` should match `v1…v4`. Independent
/// greedy gets only `u1` right, deferred acceptance gets `u1` and `u4`.
pub fn four_entity_matrix() -> SimilarityMatrix {
    sim(&[
        &[0.9, 0.3, 0.2, 0.1],
        &[0.7, 0.5, 0.4, 0.1],
        &[0.2, 0.8, 0.6, 0.1],
        &[0.1, 0.6, 0.2, 0.5],
    ])
}

/// `u1–u2` in the source graph and `v1–v2` in the target graph.
pub fn four_entity_neighbors() -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let lists = vec![vec![1], vec![0], vec![], vec![]];
    (lists.clone(), lists)
}

pub const FOUR_ENTITY_EPOCHS: usize = 10_000;

pub fn four_entity_rl(cfg: &RlConfig) -> AlignmentResult {
    let m = four_entity_matrix();
    let (src, tgt) = four_entity_neighbors();
    let env = AlignmentEnvironment::new(m.clone(), src, tgt, &PreliminaryOutcome::untouched(&m), cfg.tau).unwrap();
    a2c_align(&env, cfg).unwrap().result
}

pub fn correct(result: &AlignmentResult, gold: &[(usize, usize)]) -> usize {
    result.pairs().iter().filter(|p| gold.contains(p)).count()
}
