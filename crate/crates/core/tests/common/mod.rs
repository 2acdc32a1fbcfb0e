//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rankdro::metrics::GroupStats;
use rankdro::nn::{Batch, Mlp};

pub fn test_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random stats with deliberate ties in loss and accuracy.
pub fn random_stats(rng: &mut impl RngCore, max_groups: usize) -> Vec<GroupStats> {
    let m = rng.random_range(1..=max_groups);
    let tie_pool: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..3.0)).collect();
    let mut ids: Vec<usize> = (0..m).map(|i| i * 3 + rng.random_range(0..3)).collect();
    // shuffle order so nothing relies on input order
    for i in (1..ids.len()).rev() {
        let j = rng.random_range(0..=i);
        ids.swap(i, j);
    }
    ids.into_iter()
        .map(|group_id| {
            let n = rng.random_range(1..=8);
            let correct = rng.random_range(0..=n);
            let mean_loss = if rng.random_bool(0.3) {
                tie_pool[rng.random_range(0..tie_pool.len())]
            } else {
                rng.random_range(0.0..3.0)
            };
            GroupStats {
                group_id,
                n,
                correct,
                mean_loss,
                accuracy: correct as f64 / n as f64,
            }
        })
        .collect()
}

/// Order by repeated selection of the worst remaining group (highest loss,
/// smaller id on ties).
pub fn brute_loss_order(stats: &[GroupStats]) -> Vec<f64> {
    let mut left: Vec<&GroupStats> = stats.iter().collect();
    let mut out = Vec::new();
    while !left.is_empty() {
        let mut best = 0;
        for (i, s) in left.iter().enumerate() {
            let b = left[best];
            if s.mean_loss > b.mean_loss || (s.mean_loss == b.mean_loss && s.group_id < b.group_id) {
                best = i;
            }
        }
        out.push(left.remove(best).mean_loss);
    }
    out
}

/// Accuracies ascending, smaller id first on ties.
pub fn brute_accuracy_order(stats: &[GroupStats]) -> Vec<f64> {
    let mut left: Vec<&GroupStats> = stats.iter().collect();
    let mut out = Vec::new();
    while !left.is_empty() {
        let mut best = 0;
        for (i, s) in left.iter().enumerate() {
            let b = left[best];
            if s.accuracy < b.accuracy || (s.accuracy == b.accuracy && s.group_id < b.group_id) {
                best = i;
            }
        }
        out.push(left.remove(best).accuracy);
    }
    out
}

fn disc(pos: usize) -> f64 {
    1.0 / ((pos + 1) as f64).log2()
}

/// Half-up rounding of `num / den` in integers.
fn round_ratio(num: usize, den: usize) -> usize {
    (2 * num + den) / (2 * den)
}

pub fn brute_worst(stats: &[GroupStats]) -> f64 {
    brute_accuracy_order(stats)[0]
}

pub fn brute_average(stats: &[GroupStats]) -> f64 {
    let mut by_id: Vec<&GroupStats> = stats.iter().collect();
    by_id.sort_by_key(|s| s.group_id);
    let mut sum = 0.0;
    for s in by_id {
        sum += s.accuracy;
    }
    sum / stats.len() as f64
}

pub fn brute_percentile(stats: &[GroupStats], p: usize) -> f64 {
    brute_accuracy_order(stats)[round_ratio(p * (stats.len() - 1), 100)]
}

pub fn brute_gdcg(stats: &[GroupStats], k: usize) -> f64 {
    let order = brute_loss_order(stats);
    let top = round_ratio(k * stats.len(), 100).clamp(1, stats.len());
    let mut sum = 0.0;
    for (i, l) in order.iter().take(top).enumerate() {
        sum += l * disc(i + 1);
    }
    sum
}

pub fn brute_qdcg(stats: &[GroupStats], quantiles: &[usize]) -> f64 {
    let order = brute_loss_order(stats);
    let mut sum = 0.0;
    for (i, &q) in quantiles.iter().enumerate() {
        sum += order[round_ratio(q * (stats.len() - 1), 100)] * disc(i + 1);
    }
    sum
}

pub fn random_batch(rng: &mut impl RngCore, n: usize, d_in: usize, n_classes: usize) -> Batch {
    Batch {
        features: Array2::from_shape_fn((n, d_in), |_| rng.random_range(-2.0..2.0)),
        labels: (0..n).map(|_| rng.random_range(0..n_classes)).collect(),
        sample_weights: (0..n).map(|_| rng.random_range(0.5..3.0)).collect(),
        group_ids: (0..n).map(|_| rng.random_range(0..3)).collect(),
    }
}

/// Largest relative error between analytic and central-difference
/// gradients over every parameter, `|a - n| / max(|a| + |n|, 1e-8)`.
pub fn max_grad_rel_error(model: &Mlp, batch: &Batch, h: f64) -> f64 {
    let (_, grads) = model.loss_and_grads(batch, None).unwrap();
    let loss_at = |m: &Mlp| m.loss_and_grads(batch, None).unwrap().0;
    let rel = |a: f64, n: f64| (a - n).abs() / (a.abs() + n.abs()).max(1e-8);
    let mut worst: f64 = 0.0;
    for l in 0..model.weights().len() {
        let (rows, cols) = model.weights()[l].dim();
        for i in 0..rows {
            for j in 0..cols {
                let mut plus = model.clone();
                plus.weights_mut()[l][[i, j]] += h;
                let mut minus = model.clone();
                minus.weights_mut()[l][[i, j]] -= h;
                let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
                worst = worst.max(rel(grads.weights[l][[i, j]], numeric));
            }
        }
        for i in 0..model.biases()[l].len() {
            let mut plus = model.clone();
            plus.biases_mut()[l][i] += h;
            let mut minus = model.clone();
            minus.biases_mut()[l][i] -= h;
            let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
            worst = worst.max(rel(grads.biases[l][i], numeric));
        }
    }
    worst
}
