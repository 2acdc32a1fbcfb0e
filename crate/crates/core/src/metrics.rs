//! Per-group statistics, worst-first group rankings and selection metrics.
//!
//! Reporting metrics (worst-group, average, percentile) read group accuracies.
//! Selection DCG metrics read group losses ranked worst (largest) first and
//! discount position `i` (1-based) by `1 / log2(i + 1)`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub group_id: usize,
    pub n: usize,
    pub correct: usize,
    pub mean_loss: f64,
    pub accuracy: f64,
}

/// Aggregate per-sample results into one [`GroupStats`] per group, ordered by id.
pub fn compute_group_stats(losses: &[f64], correct: &[bool], group_ids: &[usize]) -> Result<Vec<GroupStats>> {
    if losses.is_empty() {
        return Err(Error::input("no samples to aggregate"));
    }
    if losses.len() != correct.len() || losses.len() != group_ids.len() {
        return Err(Error::Shape(format!(
            "{} losses, {} correctness flags, {} group ids",
            losses.len(),
            correct.len(),
            group_ids.len()
        )));
    }
    let mut acc: BTreeMap<usize, (usize, usize, f64)> = BTreeMap::new();
    for ((&loss, &ok), &g) in losses.iter().zip(correct).zip(group_ids) {
        let e = acc.entry(g).or_insert((0, 0, 0.0));
        e.0 += 1;
        e.1 += usize::from(ok);
        e.2 += loss;
    }
    Ok(acc
        .into_iter()
        .map(|(group_id, (n, correct, loss_sum))| GroupStats {
            group_id,
            n,
            correct,
            mean_loss: loss_sum / n as f64,
            accuracy: correct as f64 / n as f64,
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankingKey {
    LossDescending,
    AccuracyAscending,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedGroup {
    pub group_id: usize,
    /// 0-based position, worst first.
    pub rank: usize,
    /// `floor(100 · rank / max(m − 1, 1))`.
    pub quantile: usize,
    /// The ranked value (loss or accuracy).
    pub value: f64,
}

/// Groups ordered worst first; ties broken by ascending group id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedGroups {
    pub key: RankingKey,
    pub entries: Vec<RankedGroup>,
}

impl RankedGroups {
    pub fn order(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.group_id).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry for `group_id`, if ranked.
    pub fn get(&self, group_id: usize) -> Option<&RankedGroup> {
        self.entries.iter().find(|e| e.group_id == group_id)
    }

    /// Map group id → entry, for repeated lookups.
    pub fn by_group(&self) -> BTreeMap<usize, &RankedGroup> {
        self.entries.iter().map(|e| (e.group_id, e)).collect()
    }
}

pub fn rank_groups(stats: &[GroupStats], key: RankingKey) -> Result<RankedGroups> {
    if stats.is_empty() {
        return Err(Error::input("cannot rank an empty group list"));
    }
    let value = |s: &GroupStats| match key {
        RankingKey::LossDescending => s.mean_loss,
        RankingKey::AccuracyAscending => s.accuracy,
    };
    let mut sorted: Vec<&GroupStats> = stats.iter().collect();
    sorted.sort_by(|a, b| {
        let primary = match key {
            RankingKey::LossDescending => value(b).total_cmp(&value(a)),
            RankingKey::AccuracyAscending => value(a).total_cmp(&value(b)),
        };
        primary.then(a.group_id.cmp(&b.group_id))
    });
    let denom = (stats.len() - 1).max(1);
    let entries = sorted
        .into_iter()
        .enumerate()
        .map(|(rank, s)| RankedGroup {
            group_id: s.group_id,
            rank,
            quantile: 100 * rank / denom,
            value: value(s),
        })
        .collect();
    Ok(RankedGroups { key, entries })
}

fn non_empty(stats: &[GroupStats]) -> Result<()> {
    if stats.is_empty() {
        Err(Error::input("metric over an empty group list"))
    } else {
        Ok(())
    }
}

/// Lowest group accuracy.
pub fn worst_group(stats: &[GroupStats]) -> Result<f64> {
    non_empty(stats)?;
    Ok(stats.iter().map(|s| s.accuracy).fold(f64::INFINITY, f64::min))
}

/// Unweighted mean of group accuracies, summed in group-id order.
pub fn average(stats: &[GroupStats]) -> Result<f64> {
    non_empty(stats)?;
    let mut by_id: Vec<&GroupStats> = stats.iter().collect();
    by_id.sort_by_key(|s| s.group_id);
    Ok(by_id.iter().map(|s| s.accuracy).sum::<f64>() / stats.len() as f64)
}

/// Accuracy of the group at position `round(p/100 · (m − 1))` counting up
/// from the worst (accuracy ascending).
pub fn percentile(stats: &[GroupStats], p: f64) -> Result<f64> {
    non_empty(stats)?;
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::input(format!("percentile {p} outside [0, 100]")));
    }
    let ranked = rank_groups(stats, RankingKey::AccuracyAscending)?;
    let idx = (p * (stats.len() - 1) as f64 / 100.0).round() as usize;
    Ok(ranked.entries[idx].value)
}

/// Discount for 1-based position `i`.
pub fn discount(i: usize) -> f64 {
    1.0 / ((i + 1) as f64).log2()
}

/// DCG over the `k_percent` worst groups by loss.
pub fn gdcg_at_k(stats: &[GroupStats], k_percent: f64) -> Result<f64> {
    non_empty(stats)?;
    if !(k_percent > 0.0 && k_percent <= 100.0) {
        return Err(Error::input(format!("k = {k_percent} must lie in (0, 100]")));
    }
    let ranked = rank_groups(stats, RankingKey::LossDescending)?;
    let m = stats.len();
    let k = ((k_percent * m as f64 / 100.0).round() as usize).clamp(1, m);
    Ok(ranked.entries[..k]
        .iter()
        .enumerate()
        .map(|(i, e)| e.value * discount(i + 1))
        .sum())
}

/// DCG over the groups found at the given loss quantiles (0 = worst).
pub fn qdcg_at_k(stats: &[GroupStats], quantiles: &[u32]) -> Result<f64> {
    non_empty(stats)?;
    if quantiles.is_empty() {
        return Err(Error::input("quantile list is empty"));
    }
    if quantiles.iter().any(|&q| q > 100) || quantiles.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::input(format!(
            "quantiles {quantiles:?} must be strictly increasing within 0..=100"
        )));
    }
    let ranked = rank_groups(stats, RankingKey::LossDescending)?;
    let span = stats.len() - 1;
    Ok(quantiles
        .iter()
        .enumerate()
        .map(|(i, &q)| {
            let idx = quantile_index(q, span);
            ranked.entries[idx].value * discount(i + 1)
        })
        .sum())
}

/// `round(q/100 · span)` computed from the exact rational `q·span/100`.
fn quantile_index(q: u32, span: usize) -> usize {
    let num = q as usize * span;
    let (whole, rem) = (num / 100, num % 100);
    whole + usize::from(rem >= 50)
}

/// qDCG over the consecutive quantiles `0, 1, ..., k`.
pub fn qdcg_top(stats: &[GroupStats], k: u32) -> Result<f64> {
    let quantiles: Vec<u32> = (0..=k.min(100)).collect();
    qdcg_at_k(stats, &quantiles)
}

/// Metric used to rank checkpoints and candidate models.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SelectionMetric {
    WorstGroup,
    Average,
    /// Group accuracy at the given percentile from the worst.
    Percentile(f64),
    /// DCG over the given percent of worst groups by loss.
    GroupDcg(f64),
    /// DCG over loss quantiles `0..=k`.
    QuantileDcg(u32),
}

impl SelectionMetric {
    /// The seven metrics compared in selection studies.
    pub fn standard_set() -> Vec<SelectionMetric> {
        vec![
            SelectionMetric::WorstGroup,
            SelectionMetric::Average,
            SelectionMetric::Percentile(10.0),
            SelectionMetric::GroupDcg(10.0),
            SelectionMetric::GroupDcg(50.0),
            SelectionMetric::QuantileDcg(10),
            SelectionMetric::QuantileDcg(50),
        ]
    }

    /// DCG metrics are sums of losses: smaller is better.
    pub fn lower_is_better(&self) -> bool {
        matches!(self, SelectionMetric::GroupDcg(_) | SelectionMetric::QuantileDcg(_))
    }

    pub fn value(&self, stats: &[GroupStats]) -> Result<f64> {
        match *self {
            SelectionMetric::WorstGroup => worst_group(stats),
            SelectionMetric::Average => average(stats),
            SelectionMetric::Percentile(p) => percentile(stats, p),
            SelectionMetric::GroupDcg(k) => gdcg_at_k(stats, k),
            SelectionMetric::QuantileDcg(k) => qdcg_top(stats, k),
        }
    }

    /// True when `a` is strictly better than `b` under this metric.
    pub fn better(&self, a: f64, b: f64) -> bool {
        if self.lower_is_better() {
            a < b
        } else {
            a > b
        }
    }
}

impl fmt::Display for SelectionMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectionMetric::WorstGroup => write!(f, "worst-group"),
            SelectionMetric::Average => write!(f, "average"),
            SelectionMetric::Percentile(p) => write!(f, "percentile@{p}"),
            SelectionMetric::GroupDcg(k) => write!(f, "gdcg@{k}"),
            SelectionMetric::QuantileDcg(k) => write!(f, "qdcg@{k}"),
        }
    }
}

impl FromStr for SelectionMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let bad = || Error::config(format!("unknown selection metric {s:?}"));
        let parse_num = |rest: &str| rest.parse::<f64>().map_err(|_| bad());
        match lower.as_str() {
            "worst-group" | "worst" => return Ok(SelectionMetric::WorstGroup),
            "average" | "avg" => return Ok(SelectionMetric::Average),
            "10th-percentile" | "p10" => return Ok(SelectionMetric::Percentile(10.0)),
            _ => {}
        }
        if let Some(rest) = lower.strip_prefix("percentile@") {
            let p = parse_num(rest)?;
            if !(0.0..=100.0).contains(&p) {
                return Err(bad());
            }
            return Ok(SelectionMetric::Percentile(p));
        }
        if let Some(rest) = lower.strip_prefix("gdcg@") {
            let k = parse_num(rest)?;
            if !(k > 0.0 && k <= 100.0) {
                return Err(bad());
            }
            return Ok(SelectionMetric::GroupDcg(k));
        }
        if let Some(rest) = lower.strip_prefix("qdcg@") {
            let k: u32 = rest.parse().map_err(|_| bad())?;
            if k > 100 {
                return Err(bad());
            }
            return Ok(SelectionMetric::QuantileDcg(k));
        }
        Err(bad())
    }
}

impl Serialize for SelectionMetric {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SelectionMetric {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Average / 10th-percentile / worst-group accuracy of one split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub average: f64,
    pub p10: f64,
    pub worst: f64,
}

impl AccuracySummary {
    pub fn of(stats: &[GroupStats]) -> Result<Self> {
        Ok(AccuracySummary {
            average: average(stats)?,
            p10: percentile(stats, 10.0)?,
            worst: worst_group(stats)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn stats_from(losses: &[f64], accs: &[f64]) -> Vec<GroupStats> {
        losses
            .iter()
            .zip(accs)
            .enumerate()
            .map(|(g, (&l, &a))| GroupStats {
                group_id: g,
                n: 100,
                correct: (a * 100.0).round() as usize,
                mean_loss: l,
                accuracy: a,
            })
            .collect()
    }

    #[test]
    fn single_group_means() {
        let s = compute_group_stats(&[1.0, 3.0], &[true, false], &[4, 4]).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].group_id, 4);
        assert_eq!(s[0].mean_loss, 2.0);
        assert_eq!(s[0].accuracy, 0.5);
        assert_eq!(s[0].correct, 1);
    }

    #[test]
    fn identical_groups_identical_stats() {
        let s = compute_group_stats(&[0.5, 0.25, 0.5, 0.25], &[true, false, true, false], &[0, 0, 1, 1]).unwrap();
        assert_eq!((s[0].mean_loss, s[0].accuracy), (s[1].mean_loss, s[1].accuracy));
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(matches!(compute_group_stats(&[], &[], &[]), Err(Error::InvalidInput(_))));
        assert!(rank_groups(&[], RankingKey::LossDescending).is_err());
        assert!(worst_group(&[]).is_err());
    }

    #[test]
    fn rank_by_accuracy() {
        let s = stats_from(&[0.0; 3], &[0.9, 0.5, 0.7]);
        let r = rank_groups(&s, RankingKey::AccuracyAscending).unwrap();
        assert_eq!(r.order(), vec![1, 2, 0]);
        let ranks: Vec<_> = (0..3).map(|g| r.get(g).unwrap().rank).collect();
        assert_eq!(ranks, vec![2, 0, 1]);
    }

    #[test]
    fn equal_keys_fall_back_to_ids() {
        let s = stats_from(&[0.3; 4], &[0.6; 4]);
        assert_eq!(rank_groups(&s, RankingKey::AccuracyAscending).unwrap().order(), vec![0, 1, 2, 3]);
        assert_eq!(rank_groups(&s, RankingKey::LossDescending).unwrap().order(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn quantiles_for_eleven_groups() {
        let accs: Vec<f64> = (0..11).map(|i| i as f64 / 10.0).collect();
        let s = stats_from(&[0.0; 11], &accs);
        let r = rank_groups(&s, RankingKey::AccuracyAscending).unwrap();
        let q: Vec<_> = r.entries.iter().map(|e| e.quantile).collect();
        assert_eq!(q, (0..=10).map(|i| i * 10).collect::<Vec<_>>());
        let single = rank_groups(&s[..1], RankingKey::AccuracyAscending).unwrap();
        assert_eq!(single.entries[0].quantile, 0);
    }

    #[test]
    fn reporting_metrics() {
        let s = stats_from(&[0.0, 0.0], &[0.2, 0.8]);
        assert_eq!(worst_group(&s).unwrap(), 0.2);
        assert_eq!(average(&s).unwrap(), 0.5);
        assert_eq!(percentile(&s, 0.0).unwrap(), 0.2);
        assert!(percentile(&s, 101.0).is_err());
        assert!(percentile(&s, -1.0).is_err());
    }

    #[test]
    fn percentile_index_formula() {
        let accs: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        let s = stats_from(&[0.0; 100], &accs);
        // round(0.1 · 99) = 10
        assert_eq!(percentile(&s, 10.0).unwrap(), 0.10);
    }

    #[test]
    fn gdcg_hand_values() {
        let s = stats_from(&[0.4, 0.8], &[0.5, 0.5]);
        assert_eq!(gdcg_at_k(&s, 1.0).unwrap(), 0.8);
        assert_abs_diff_eq!(gdcg_at_k(&s, 100.0).unwrap(), 1.052372, epsilon = 1e-6);
        let flat = stats_from(&[0.3; 5], &[0.5; 5]);
        let closed: f64 = (1..=5).map(|i| 1.0 / ((i + 1) as f64).log2()).sum();
        assert_abs_diff_eq!(gdcg_at_k(&flat, 100.0).unwrap(), 0.3 * closed, epsilon = 1e-15);
        assert!(gdcg_at_k(&s, 0.0).is_err());
    }

    #[test]
    fn qdcg_hand_values() {
        let mut losses = vec![0.1; 101];
        losses[0] = 1.0;
        losses[1] = 0.9;
        losses[2] = 0.8;
        let s = stats_from(&losses, &[0.5; 101]);
        assert_eq!(qdcg_at_k(&s, &[0]).unwrap(), 1.0);
        let hand = 1.0 + 0.9 / 3f64.log2() + 0.8 / 2.0;
        assert_abs_diff_eq!(qdcg_at_k(&s, &[0, 1, 2]).unwrap(), hand, epsilon = 1e-12);
        assert_abs_diff_eq!(hand, 1.967837, epsilon = 1e-6);
        assert!(qdcg_at_k(&s, &[2, 1]).is_err());
        assert!(qdcg_at_k(&s, &[0, 101]).is_err());
        assert!(qdcg_at_k(&s, &[1, 1]).is_err());
    }

    #[test]
    fn qdcg_full_grid_equals_gdcg_100() {
        for m in [2usize, 3, 5, 6, 11, 21] {
            let losses: Vec<f64> = (0..m).map(|i| ((i * 7919) % 13) as f64 / 13.0).collect();
            let s = stats_from(&losses, &vec![0.5; m]);
            let step = 100 / (m - 1);
            let qs: Vec<u32> = (0..m).map(|j| (j * step) as u32).collect();
            assert_eq!(qdcg_at_k(&s, &qs).unwrap(), gdcg_at_k(&s, 100.0).unwrap(), "m={m}");
        }
    }

    #[test]
    fn metric_names_round_trip() {
        for m in SelectionMetric::standard_set() {
            let parsed: SelectionMetric = m.to_string().parse().unwrap();
            assert_eq!(parsed, m);
        }
        assert!("kendall".parse::<SelectionMetric>().is_err());
        assert!("qdcg@101".parse::<SelectionMetric>().is_err());
        assert_eq!("p10".parse::<SelectionMetric>().unwrap(), SelectionMetric::Percentile(10.0));
    }
}
