//! Scoring helpers: ROC AUC and adjusted Rand index.

use std::collections::HashMap;
use std::hash::Hash;

/// Area under the ROC curve of `scores` for binary `labels`.
///
/// Computed as the Mann-Whitney statistic with tied scores counted as one
/// half. Returns `None` when either class is absent.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average ranks over tie groups
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            if labels[k] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// Macro-averaged one-vs-rest AUC over the classes present in `labels`.
///
/// `probs[i][a]` is the predicted probability of class `a` for sample `i`.
/// Classes for which every sample is positive (or none is) are skipped;
/// returns `None` if no class is scorable.
pub fn macro_ovr_auc(probs: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Option<f64> {
    let mut total = 0.0;
    let mut count = 0;
    for c in 0..n_classes {
        let bin: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
        if let Some(auc) = roc_auc(&scores, &bin) {
            total += auc;
            count += 1;
        }
    }
    (count > 0).then(|| total / count as f64)
}

fn choose2(n: u64) -> f64 {
    (n as f64) * (n.saturating_sub(1) as f64) / 2.0
}

/// Adjusted Rand index between two labelings of the same points.
///
/// Two trivial partitions that agree (e.g. both single-cluster) score 1.
pub fn adjusted_rand_index<A, B>(a: &[A], b: &[B]) -> f64
where
    A: Eq + Hash + Clone,
    B: Eq + Hash + Clone,
{
    assert_eq!(a.len(), b.len(), "labelings must have equal length");
    let n = a.len() as u64;
    let mut joint: HashMap<(A, B), u64> = HashMap::new();
    let mut ca: HashMap<A, u64> = HashMap::new();
    let mut cb: HashMap<B, u64> = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        *joint.entry((x.clone(), y.clone())).or_default() += 1;
        *ca.entry(x.clone()).or_default() += 1;
        *cb.entry(y.clone()).or_default() += 1;
    }
    let index: f64 = joint.values().map(|&c| choose2(c)).sum();
    let sa: f64 = ca.values().map(|&c| choose2(c)).sum();
    let sb: f64 = cb.values().map(|&c| choose2(c)).sum();
    let total = choose2(n);
    if total == 0.0 {
        return 1.0;
    }
    let expected = sa * sb / total;
    let max = 0.5 * (sa + sb);
    if (max - expected).abs() < 1e-12 {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_perfect_and_inverted() {
        let s = [0.1, 0.2, 0.8, 0.9];
        assert_eq!(roc_auc(&s, &[false, false, true, true]), Some(1.0));
        assert_eq!(roc_auc(&s, &[true, true, false, false]), Some(0.0));
        assert_eq!(roc_auc(&[0.5; 4], &[true, false, true, false]), Some(0.5));
        assert_eq!(roc_auc(&s, &[true; 4]), None);
    }

    #[test]
    fn auc_matches_pair_count() {
        // brute force over positive/negative pairs
        let s = [0.3, 0.3, 0.1, 0.7, 0.5, 0.3];
        let l = [true, false, false, true, false, true];
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..6 {
            for j in 0..6 {
                if l[i] && !l[j] {
                    den += 1.0;
                    num += if s[i] > s[j] {
                        1.0
                    } else if s[i] == s[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        assert!((roc_auc(&s, &l).unwrap() - num / den).abs() < 1e-12);
    }

    #[test]
    fn ari_identity_permutation_and_split() {
        let a = [1, 1, 2, 2, 3, 3];
        let b = [7, 7, 9, 9, 4, 4];
        assert!((adjusted_rand_index(&a, &b) - 1.0).abs() < 1e-12);
        // hand value: contingency {(1,a):2,(2,a):1,(2,b):1,(3,b):2}
        let c = ['a', 'a', 'a', 'b', 'b', 'b'];
        let ari = adjusted_rand_index(&a, &c);
        // index = 1 + 1 = 2; sa = 3; sb = 6; total = 15; expected = 1.2; max = 4.5
        assert!((ari - (2.0 - 1.2) / (4.5 - 1.2)).abs() < 1e-12);
    }
}
