use kgalign::collective::AlignmentResult;
use kgalign::simmat::SimilarityMatrix;

/// Every unmatched pair `(s, t)` where `s` scores `t` above its own partner
/// (or has none) and `t` scores `s` above its partner (or has none).
pub fn blocking_pairs(m: &SimilarityMatrix, result: &AlignmentResult) -> Vec<(usize, usize)> {
    let mut holder = vec![None; m.n_tgt()];
    for (s, t) in result.pairs() {
        holder[t] = Some(s);
    }
    let mut out = Vec::new();
    for s in 0..m.n_src() {
        for t in 0..m.n_tgt() {
            let partner = result.target_of(s);
            if partner == Some(t) {
                continue;
            }
            let s_wants = partner.is_none_or(|p| m.get(s, t) > m.get(s, p));
            let t_wants = holder[t].is_none_or(|h| m.get(s, t) > m.get(h, t));
            if s_wants && t_wants {
                out.push((s, t));
            }
        }
    }
    out
}

/// Best total score over all permutations of a square matrix.
pub fn brute_force_best(m: &SimilarityMatrix) -> f64 {
    fn go(m: &SimilarityMatrix, row: usize, used: &mut Vec<bool>) -> f64 {
        if row == m.n_src() {
            return 0.0;
        }
        let mut best = f64::NEG_INFINITY;
        for t in 0..m.n_tgt() {
            if !used[t] {
                used[t] = true;
                best = best.max(m.get(row, t) + go(m, row + 1, used));
                used[t] = false;
            }
        }
        best
    }
    assert_eq!(m.n_src(), m.n_tgt());
    go(m, 0, &mut vec![false; m.n_tgt()])
}

/// Mutual strict argmax on the still-unconfirmed submatrix, repeated
/// `rounds` times. Returns the confirmed pairs sorted.
pub fn iterated_mutual_argmax(m: &SimilarityMatrix, rounds: usize) -> Vec<(usize, usize)> {
    let mut live_rows = vec![true; m.n_src()];
    let mut live_cols = vec![true; m.n_tgt()];
    let mut confirmed = Vec::new();
    for _ in 0..rounds {
        let row_best: Vec<Option<usize>> = (0..m.n_src())
            .map(|s| unique_max((0..m.n_tgt()).filter(|&t| live_cols[t]).map(|t| (t, m.get(s, t)))))
            .collect();
        let col_best: Vec<Option<usize>> = (0..m.n_tgt())
            .map(|t| unique_max((0..m.n_src()).filter(|&s| live_rows[s]).map(|s| (s, m.get(s, t)))))
            .collect();
        let round: Vec<(usize, usize)> = (0..m.n_src())
            .filter(|&s| live_rows[s])
            .filter_map(|s| row_best[s].filter(|&t| col_best[t] == Some(s)).map(|t| (s, t)))
            .collect();
        for &(s, t) in &round {
            live_rows[s] = false;
            live_cols[t] = false;
        }
        confirmed.extend(round);
    }
    confirmed.sort_unstable();
    confirmed
}

fn unique_max(items: impl Iterator<Item = (usize, f64)>) -> Option<usize> {
    let items: Vec<(usize, f64)> = items.collect();
    let top = items.iter().map(|&(_, v)| v).fold(f64::NEG_INFINITY, f64::max);
    let at: Vec<usize> = items.iter().filter(|&&(_, v)| v == top).map(|&(k, _)| k).collect();
    (at.len() == 1).then(|| at[0])
}
