use crate::simmat::SimilarityMatrix;

use super::{AlignmentResult, Provenance};

/// Index of the largest value, lowest index on ties.
pub(super) fn argmax<I: IntoIterator<Item = f64>>(values: I) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, v) in values.into_iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((k, v));
        }
    }
    best.map(|(k, _)| k)
}

/// Each source independently takes its highest-scoring target.
pub fn greedy_independent(m: &SimilarityMatrix) -> AlignmentResult {
    let mut out = AlignmentResult::new();
    for i in 0..m.n_src() {
        if let Some(j) = argmax(m.row(i).iter().copied()) {
            out.insert(i, j, Provenance::Greedy);
        }
    }
    out
}

/// Source-proposing deferred acceptance. Sources rank targets by score
/// (ties: lower index first); targets keep the highest-scoring proposer
/// (ties: lower source index). With more sources than targets the surplus
/// sources stay unmatched, which is equivalent to padding with dummy
/// targets of score −∞ and dropping those matches.
pub fn stable_matching(m: &SimilarityMatrix) -> AlignmentResult {
    let (n_src, n_tgt) = (m.n_src(), m.n_tgt());
    let prefs: Vec<Vec<usize>> = (0..n_src).map(|i| m.ranked_targets(i)).collect();
    let mut next = vec![0usize; n_src];
    let mut holder: Vec<Option<usize>> = vec![None; n_tgt];
    let mut free: Vec<usize> = (0..n_src).rev().collect();
    let prefers = |t: usize, a: usize, b: usize| {
        let (sa, sb) = (m.get(a, t), m.get(b, t));
        sa > sb || (sa == sb && a < b)
    };
    while let Some(s) = free.pop() {
        let Some(&t) = prefs[s].get(next[s]) else {
            continue;
        };
        next[s] += 1;
        match holder[t] {
            None => holder[t] = Some(s),
            Some(cur) if prefers(t, s, cur) => {
                holder[t] = Some(s);
                free.push(cur);
            }
            Some(_) => free.push(s),
        }
    }
    let mut out = AlignmentResult::new();
    for (t, h) in holder.into_iter().enumerate() {
        if let Some(s) = h {
            out.insert(s, t, Provenance::Stable);
        }
    }
    out
}

/// Maximum-weight assignment via the O(n²m) shortest augmenting path
/// Hungarian method with potentials. Every source is assigned when
/// `n_src ≤ n_tgt`; otherwise every target is.
pub fn hungarian(m: &SimilarityMatrix) -> AlignmentResult {
    let transposed = m.n_src() > m.n_tgt();
    let scores = if transposed {
        m.scores().t().to_owned()
    } else {
        m.scores().clone()
    };
    let (n, k) = scores.dim();
    let mut out = AlignmentResult::new();
    if n == 0 || k == 0 {
        return out;
    }
    // 1-based arrays; row 0 / column 0 are the virtual start.
    let cost = |i: usize, j: usize| -scores[[i - 1, j - 1]];
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; k + 1];
    let mut p = vec![0usize; k + 1];
    let mut way = vec![0usize; k + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; k + 1];
        let mut used = vec![false; k + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=k {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=k {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    for j in 1..=k {
        if p[j] != 0 {
            let (row, col) = (p[j] - 1, j - 1);
            if transposed {
                out.insert(col, row, Provenance::Hungarian);
            } else {
                out.insert(row, col, Provenance::Hungarian);
            }
        }
    }
    out
}
