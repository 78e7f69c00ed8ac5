//! Independent reference implementations used by the integration tests.

#![allow(dead_code)]

pub mod forward_oracle;

/// AUC as the fraction of (positive, negative) pairs ranked correctly,
/// ties counting one half.
pub fn auc_all_pairs(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Average precision by sweeping every distinct score as a threshold:
/// `Σ (R(τ_k) − R(τ_{k−1}))·P(τ_k)` with thresholds in descending order.
pub fn ap_threshold_sweep(scores: &[f64], labels: &[bool]) -> f64 {
    let total = labels.iter().filter(|&&l| l).count() as f64;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for tau in thresholds {
        let predicted: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= tau).collect();
        let tp = predicted.iter().filter(|&&i| labels[i]).count() as f64;
        let recall = tp / total;
        let precision = tp / predicted.len() as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

/// Early stopping replayed from its definition: the best epoch is the first
/// maximum so far, training stops at the first epoch `e` with
/// `e − best ≥ patience` or at `max_epochs`, or when the scores run out.
/// Returns `(stop, best)`.
pub fn early_stop_reference(scores: &[f64], patience: usize, max_epochs: usize) -> (usize, usize) {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    let last = scores.len().min(max_epochs);
    for e in 1..=last {
        if scores[e - 1] > best_score {
            best_score = scores[e - 1];
            best = e;
        }
        if e - best >= patience || e == max_epochs {
            return (e, best);
        }
    }
    (last, best)
}

/// Grid cell chosen by sorting on (score descending, lr ascending, wd
/// ascending) with NaN scores last.
pub fn grid_reference(cells: &[(f64, f64, f64)]) -> usize {
    let mut idx: Vec<usize> = (0..cells.len()).collect();
    idx.sort_by(|&a, &b| {
        let (la, wa, sa) = cells[a];
        let (lb, wb, sb) = cells[b];
        let key = |s: f64| if s.is_nan() { f64::NEG_INFINITY } else { s };
        key(sb).total_cmp(&key(sa)).then(la.total_cmp(&lb)).then(wa.total_cmp(&wb)).then(a.cmp(&b))
    });
    idx[0]
}
