//! Exhaustive pair counting as an independent check of the rank-sum AUC,
//! including heavy score ties.

use cropseries_core::metrics::{auc, auc_from_probs, f1, macro_auc};
use cropseries_core::rng::SplitMix64;

/// AUC by counting every (positive, negative) pair: 1 for a correctly
/// ordered pair, 1/2 for a tie.
fn pair_count_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut won = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                won += 1.0;
            } else if scores[i] == scores[j] {
                won += 0.5;
            }
        }
    }
    won / pairs
}

/// Random labeled score set with at least one of each label. Scores are
/// quantized to a few levels so ties actually happen.
fn random_case(rng: &mut SplitMix64, max_n: usize, levels: usize) -> (Vec<f64>, Vec<bool>) {
    loop {
        let n = 2 + rng.index(max_n - 1);
        let scores: Vec<f64> = (0..n)
            .map(|_| rng.index(levels) as f64 / levels as f64)
            .collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.next_f64() < 0.5).collect();
        let pos = labels.iter().filter(|&&l| l).count();
        if pos > 0 && pos < n {
            return (scores, labels);
        }
    }
}

#[test]
fn rank_sum_equals_pair_counting() {
    let mut rng = SplitMix64::new(31);
    for case in 0..200 {
        // alternate tie-heavy and tie-free score sets
        let levels = if case % 2 == 0 { 5 } else { 1_000_000 };
        let (scores, labels) = random_case(&mut rng, 50, levels);
        let got = auc(&scores, &labels).unwrap();
        let want = pair_count_auc(&scores, &labels);
        assert!(
            (got - want).abs() < 1e-12,
            "case {case}: rank-sum {got} vs pairs {want} on {scores:?} / {labels:?}"
        );
    }
}

#[test]
fn complement_labels_mirror_the_auc() {
    let mut rng = SplitMix64::new(32);
    for _ in 0..100 {
        let (scores, labels) = random_case(&mut rng, 30, 8);
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        let a = auc(&scores, &labels).unwrap();
        let b = auc(&scores, &flipped).unwrap();
        assert!((a + b - 1.0).abs() < 1e-12, "{a} + {b} != 1");
    }
}

#[test]
fn macro_auc_equals_mean_of_one_vs_rest_pair_counts() {
    let mut rng = SplitMix64::new(33);
    for case in 0..50 {
        let n_classes = 3 + case % 2;
        let n = 12 + rng.index(30);
        let labels: Vec<usize> = (0..n).map(|_| rng.index(n_classes)).collect();
        if (0..n_classes).any(|c| !labels.contains(&c)) {
            continue;
        }
        let probs: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..n_classes).map(|_| 0.05 + rng.next_f64()).collect();
                let sum: f64 = raw.iter().sum();
                raw.iter().map(|v| v / sum).collect()
            })
            .collect();
        let got = macro_auc(&probs, &labels, n_classes).unwrap();
        let mut total = 0.0;
        for c in 0..n_classes {
            let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
            let bools: Vec<bool> = labels.iter().map(|&l| l == c).collect();
            total += pair_count_auc(&scores, &bools);
        }
        let want = total / n_classes as f64;
        assert!((got - want).abs() < 1e-12, "case {case}: {got} vs {want}");
        // the binary helper agrees with its own pair count per class
        for c in 0..n_classes {
            let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
            let bools: Vec<bool> = labels.iter().map(|&l| l == c).collect();
            let direct = auc_from_probs(&probs, &labels, c).unwrap();
            assert!((direct - pair_count_auc(&scores, &bools)).abs() < 1e-12);
        }
    }
}

#[test]
fn f1_equals_count_based_oracle() {
    let mut rng = SplitMix64::new(34);
    for case in 0..100 {
        let n = 4 + rng.index(40);
        let n_classes = 2 + case % 3;
        let labels: Vec<usize> = (0..n).map(|_| rng.index(n_classes)).collect();
        let preds: Vec<usize> = (0..n).map(|_| rng.index(n_classes)).collect();
        let positive = case % n_classes;
        if !labels.contains(&positive) {
            continue;
        }
        let tp = preds
            .iter()
            .zip(&labels)
            .filter(|(&p, &l)| p == positive && l == positive)
            .count() as f64;
        let fp = preds
            .iter()
            .zip(&labels)
            .filter(|(&p, &l)| p == positive && l != positive)
            .count() as f64;
        let fnn = preds
            .iter()
            .zip(&labels)
            .filter(|(&p, &l)| p != positive && l == positive)
            .count() as f64;
        let want = if tp == 0.0 {
            0.0
        } else {
            2.0 * tp / (2.0 * tp + fp + fnn)
        };
        let got = f1(&preds, &labels, positive).unwrap();
        assert!(
            (got - want).abs() < 1e-12,
            "case {case}: {got} vs {want} (tp {tp} fp {fp} fn {fnn})"
        );
    }
}
