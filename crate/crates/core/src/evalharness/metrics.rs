//! Ranking and classification metrics.

use std::collections::BTreeSet;

/// Fraction of the relevant set found in the top `k` of the ranking.
pub fn recall_at_k(ranking: &[String], relevant: &BTreeSet<String>, k: usize) -> f64 {
    debug_assert!(k >= 1);
    debug_assert!(!relevant.is_empty(), "empty relevance sets are excluded upstream");
    let hits = ranking
        .iter()
        .take(k)
        .filter(|id| relevant.contains(*id))
        .count();
    hits as f64 / relevant.len() as f64
}

/// Average precision over the top `k`, normalized by `min(|relevant|, k)` so
/// a perfect top-k scores 1.
pub fn average_precision_at_k(ranking: &[String], relevant: &BTreeSet<String>, k: usize) -> f64 {
    debug_assert!(k >= 1);
    debug_assert!(!relevant.is_empty(), "empty relevance sets are excluded upstream");
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (idx, id) in ranking.iter().take(k).enumerate() {
        if relevant.contains(id) {
            hits += 1;
            sum += hits as f64 / (idx + 1) as f64;
        }
    }
    sum / relevant.len().min(k) as f64
}

/// Probability that a random positive outranks a random negative, ties
/// counting one half; computed from midranks. `None` when either class is
/// missing.
pub fn roc_auc(scores: &[f64], truth: &[bool]) -> Option<f64> {
    debug_assert_eq!(scores.len(), truth.len());
    let n_pos = truth.iter().filter(|&&t| t).count();
    let n_neg = truth.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));

    // midranks over tie groups, ranks 1-based ascending
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if truth[idx] {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }

    let auc = (rank_sum_pos - n_pos as f64 * (n_pos as f64 + 1.0) / 2.0)
        / (n_pos as f64 * n_neg as f64);
    Some(auc)
}

/// Area under the precision-recall curve in the average-precision
/// formulation, integrating over distinct-score thresholds. `None` when
/// either class is missing.
pub fn pr_auc(scores: &[f64], truth: &[bool]) -> Option<f64> {
    debug_assert_eq!(scores.len(), truth.len());
    let n_pos = truth.iter().filter(|&&t| t).count();
    if n_pos == 0 || n_pos == truth.len() {
        return None;
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));

    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let mut group_tp = 0usize;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if truth[order[j]] {
                group_tp += 1;
            }
            j += 1;
        }
        tp += group_tp;
        seen = j;
        if group_tp > 0 {
            let precision = tp as f64 / seen as f64;
            let recall_gain = group_tp as f64 / n_pos as f64;
            ap += recall_gain * precision;
        }
        i = j;
    }
    let _ = seen;
    Some(ap)
}

/// Fraction of exact argmax matches against single-label truth.
pub fn accuracy(predicted: &[usize], truth: &[usize]) -> f64 {
    debug_assert_eq!(predicted.len(), truth.len());
    if predicted.is_empty() {
        return 0.0;
    }
    let correct = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    correct as f64 / predicted.len() as f64
}

/// Index of the row maximum; the first maximum wins on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ids(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    fn relset(names: &[&str]) -> BTreeSet<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn recall_examples() {
        let ranking = ids(&["a", "b", "c", "d", "e", "f"]);
        let relevant = relset(&["a", "c", "x", "y"]);
        // 2 of 4 relevant in the top 3
        assert!((recall_at_k(&ranking, &relevant, 3) - 0.5).abs() < 1e-12);
        assert!((recall_at_k(&ranking, &relset(&["a", "b"]), 2) - 1.0).abs() < 1e-12);
        assert_eq!(recall_at_k(&ranking, &relset(&["zz"]), 3), 0.0);
    }

    #[test]
    fn average_precision_worked_example() {
        // relevance pattern [1, 0, 1], k = 3, |relevant| = 2
        let ranking = ids(&["a", "b", "c"]);
        let relevant = relset(&["a", "c"]);
        let ap = average_precision_at_k(&ranking, &relevant, 3);
        assert!((ap - 5.0 / 6.0).abs() < 1e-12, "got {ap}");
    }

    #[test]
    fn average_precision_boundaries() {
        let ranking = ids(&["a", "b", "c", "d"]);
        assert!((average_precision_at_k(&ranking, &relset(&["a", "b"]), 4) - 1.0).abs() < 1e-12);
        assert_eq!(average_precision_at_k(&ranking, &relset(&["zz"]), 4), 0.0);
        // more relevant docs than k: normalizer is k
        let rel = relset(&["a", "b", "c", "d"]);
        assert!((average_precision_at_k(&ranking, &rel, 2) - 1.0).abs() < 1e-12);
    }

    /// Brute-force metrics straight from their definitions.
    fn brute_recall(ranking: &[String], relevant: &BTreeSet<String>, k: usize) -> f64 {
        let top: BTreeSet<&String> = ranking.iter().take(k).collect();
        let inter = relevant.iter().filter(|r| top.contains(r)).count();
        inter as f64 / relevant.len() as f64
    }

    fn brute_ap(ranking: &[String], relevant: &BTreeSet<String>, k: usize) -> f64 {
        let mut sum = 0.0;
        for r in 1..=k.min(ranking.len()) {
            if relevant.contains(&ranking[r - 1]) {
                let prec = ranking[..r].iter().filter(|x| relevant.contains(*x)).count() as f64
                    / r as f64;
                sum += prec;
            }
        }
        sum / relevant.len().min(k) as f64
    }

    fn permutations(items: &[String]) -> Vec<Vec<String>> {
        if items.len() <= 1 {
            return vec![items.to_vec()];
        }
        let mut out = Vec::new();
        for i in 0..items.len() {
            let mut rest = items.to_vec();
            let head = rest.remove(i);
            for mut tail in permutations(&rest) {
                tail.insert(0, head.clone());
                out.push(tail);
            }
        }
        out
    }

    #[test]
    fn metrics_match_brute_force_exhaustively_up_to_five() {
        // all rankings of up to 5 items x all non-empty relevant subsets x all k
        for n in 1..=5usize {
            let items: Vec<String> = (0..n).map(|i| format!("d{i}")).collect();
            for ranking in permutations(&items) {
                for mask in 1u32..(1 << n) {
                    let relevant: BTreeSet<String> = (0..n)
                        .filter(|i| mask & (1 << i) != 0)
                        .map(|i| format!("d{i}"))
                        .collect();
                    for k in 1..=n {
                        let r = recall_at_k(&ranking, &relevant, k);
                        let rb = brute_recall(&ranking, &relevant, k);
                        assert!((r - rb).abs() < 1e-12);
                        let a = average_precision_at_k(&ranking, &relevant, k);
                        let ab = brute_ap(&ranking, &relevant, k);
                        assert!((a - ab).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn roc_auc_worked_example() {
        let auc = roc_auc(&[0.9, 0.8, 0.7, 0.6], &[true, false, true, false]).unwrap();
        assert!((auc - 0.75).abs() < 1e-12, "got {auc}");
    }

    #[test]
    fn roc_auc_perfect_and_single_class() {
        assert!((roc_auc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap() - 1.0).abs() < 1e-12);
        assert!(roc_auc(&[0.5, 0.4], &[true, true]).is_none());
        assert!(roc_auc(&[0.5, 0.4], &[false, false]).is_none());
    }

    /// Pairwise concordance oracle with half-credit ties.
    fn concordance_auc(scores: &[f64], truth: &[bool]) -> Option<f64> {
        let pos: Vec<f64> = scores
            .iter()
            .zip(truth)
            .filter(|(_, &t)| t)
            .map(|(&s, _)| s)
            .collect();
        let neg: Vec<f64> = scores
            .iter()
            .zip(truth)
            .filter(|(_, &t)| !t)
            .map(|(&s, _)| s)
            .collect();
        if pos.is_empty() || neg.is_empty() {
            return None;
        }
        let mut acc = 0.0;
        for &p in &pos {
            for &n in &neg {
                acc += if p > n {
                    1.0
                } else if p == n {
                    0.5
                } else {
                    0.0
                };
            }
        }
        Some(acc / (pos.len() * neg.len()) as f64)
    }

    #[test]
    fn roc_auc_matches_concordance_on_random_instances_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..500 {
            let n = rng.gen_range(2..30);
            // quantized scores so ties occur
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64 / 7.0).collect();
            let truth: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
            match (roc_auc(&scores, &truth), concordance_auc(&scores, &truth)) {
                (Some(a), Some(b)) => assert!((a - b).abs() < 1e-9, "{a} vs {b}"),
                (None, None) => {}
                other => panic!("disagree on degeneracy: {other:?}"),
            }
        }
    }

    #[test]
    fn pr_auc_perfect_separation_is_one() {
        let ap = pr_auc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
        assert!((ap - 1.0).abs() < 1e-12);
        assert!(pr_auc(&[0.5], &[true]).is_none());
    }

    #[test]
    fn pr_auc_hand_example() {
        // ranked: pos, neg, pos -> AP = (1/2)(1/1) + (1/2)(2/3)
        let ap = pr_auc(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap();
        assert!((ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn accuracy_examples() {
        assert!((accuracy(&[0, 1, 2], &[0, 1, 2]) - 1.0).abs() < 1e-12);
        assert!((accuracy(&[0, 1, 0], &[0, 1, 2]) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn argmax_breaks_ties_to_the_first() {
        assert_eq!(argmax(&[0.1, 0.9, 0.9]), 1);
        assert_eq!(argmax(&[2.0]), 0);
    }

    #[test]
    fn rank_metrics_invariant_under_monotone_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..100 {
            let n = rng.gen_range(3..15);
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let truth: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            let transformed: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() + 2.0).collect();
            assert_eq!(roc_auc(&scores, &truth), roc_auc(&transformed, &truth));
            assert_eq!(pr_auc(&scores, &truth), pr_auc(&transformed, &truth));
        }
    }
}
