//! Group t-statistics and group-level bootstrap comparisons.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

pub const DEFAULT_RESAMPLES: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TStatReport {
    pub mean: f64,
    pub standard_error: f64,
    /// `mean / standard_error`; `None` when the standard error is zero.
    pub t: Option<f64>,
    pub infinite_t: bool,
}

impl TStatReport {
    /// `t` for display and comparison; zero-SE reports rank above any finite t.
    pub fn t_or_inf(&self) -> f64 {
        self.t.unwrap_or(f64::INFINITY)
    }
}

/// `t = mean / (sd / sqrt(m))` with the sample standard deviation.
pub fn group_tstat(accuracies: &[f64]) -> Result<TStatReport> {
    let m = accuracies.len();
    if m < 2 {
        return Err(Error::input(format!("t-statistic needs at least 2 groups, got {m}")));
    }
    if accuracies.iter().any(|a| !a.is_finite()) {
        return Err(Error::input("non-finite group accuracy"));
    }
    let mean = accuracies.iter().sum::<f64>() / m as f64;
    let var = accuracies.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (m - 1) as f64;
    let standard_error = var.sqrt() / (m as f64).sqrt();
    let infinite_t = standard_error == 0.0;
    Ok(TStatReport {
        mean,
        standard_error,
        t: (!infinite_t).then(|| mean / standard_error),
        infinite_t,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Statistic {
    Mean,
    WorstGroup,
    /// Accuracy at the given percentile of the ascending list, same indexing
    /// as the percentile selection metric.
    Percentile(f64),
}

impl Statistic {
    pub fn of(self, xs: &[f64]) -> f64 {
        match self {
            Statistic::Mean => xs.iter().sum::<f64>() / xs.len() as f64,
            Statistic::WorstGroup => xs.iter().copied().fold(f64::INFINITY, f64::min),
            Statistic::Percentile(p) => {
                let mut sorted = xs.to_vec();
                sorted.sort_by(f64::total_cmp);
                let idx = (p / 100.0 * (sorted.len() - 1) as f64).round() as usize;
                sorted[idx.min(sorted.len() - 1)]
            }
        }
    }
}

/// Two-sided bootstrap p-value for `statistic(a) - statistic(b)`.
///
/// Each resample draws groups with replacement within each list. The p-value
/// is `min(1, 2 (min(#{d <= 0}, #{d >= 0}) + 1) / (B + 1))` over the resampled
/// differences `d`.
pub fn bootstrap_compare(a: &[f64], b: &[f64], statistic: Statistic, n_resamples: usize, seed: u64) -> Result<f64> {
    bootstrap_compare_stratified(&[a.to_vec()], &[b.to_vec()], statistic, n_resamples, seed)
}

/// Bootstrap over several independent runs per method (one stratum per seed).
///
/// Groups are resampled within each stratum, the statistic is computed per
/// stratum and averaged, matching a seed-mean table entry.
pub fn bootstrap_compare_stratified(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    statistic: Statistic,
    n_resamples: usize,
    seed: u64,
) -> Result<f64> {
    if a.is_empty() || b.is_empty() || a.iter().chain(b).any(|s| s.is_empty()) {
        return Err(Error::input("bootstrap needs non-empty accuracy lists"));
    }
    if n_resamples < 100 {
        return Err(Error::input(format!("n_resamples = {n_resamples} is below 100")));
    }
    if a.iter().chain(b).flatten().any(|x| !x.is_finite()) {
        return Err(Error::input("non-finite group accuracy"));
    }
    // Resample in a fixed order of the two sides so swapping the arguments
    // mirrors the difference distribution exactly.
    let (first, second) = if canonical_key(b) < canonical_key(a) { (b, a) } else { (a, b) };

    let mut rng = rng::stream(seed, Purpose::Bootstrap, 0, 0);
    let mut buf = Vec::new();
    let mut side = |strata: &[Vec<f64>], rng: &mut rng::StreamRng| {
        let mut total = 0.0;
        for s in strata {
            buf.clear();
            buf.extend((0..s.len()).map(|_| s[rng.random_range(0..s.len())]));
            total += statistic.of(&buf);
        }
        total / strata.len() as f64
    };
    let (mut le, mut ge) = (0usize, 0usize);
    for _ in 0..n_resamples {
        let d = side(first, &mut rng) - side(second, &mut rng);
        if d <= 0.0 {
            le += 1;
        }
        if d >= 0.0 {
            ge += 1;
        }
    }
    let tail = le.min(ge) + 1;
    Ok((2.0 * tail as f64 / (n_resamples + 1) as f64).min(1.0))
}

fn canonical_key(strata: &[Vec<f64>]) -> Vec<Vec<u64>> {
    strata.iter().map(|s| std::iter::once(s.len() as u64).chain(s.iter().map(|x| x.to_bits())).collect()).collect()
}
