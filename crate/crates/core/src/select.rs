//! Concordance between validation-metric model rankings and the test
//! worst-group ranking of the same candidates.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Split;
use crate::error::{Error, Result};
use crate::json::fmt_f64;
use crate::metrics::{discount, worst_group, GroupStats, SelectionMetric};
use crate::train::MethodSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateModel {
    pub model_id: usize,
    pub spec: MethodSpec,
    pub val_stats: Vec<GroupStats>,
    pub test_stats: Vec<GroupStats>,
}

impl CandidateModel {
    pub fn stats(&self, split: Split) -> Result<&[GroupStats]> {
        match split {
            Split::OodVal => Ok(&self.val_stats),
            Split::OodTest => Ok(&self.test_stats),
            Split::Train => Err(Error::input("candidates carry validation and test stats only")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedModelList {
    pub metric: SelectionMetric,
    /// Model ids, best first.
    pub order: Vec<usize>,
    /// Metric value per model id.
    pub values: BTreeMap<usize, f64>,
    /// 1-based rank per model id.
    pub rank_of: BTreeMap<usize, usize>,
    /// Number of models whose value is shared with at least one other model.
    pub tied_models: usize,
}

impl RankedModelList {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn tie_fraction(&self) -> f64 {
        if self.order.is_empty() {
            0.0
        } else {
            self.tied_models as f64 / self.order.len() as f64
        }
    }
}

/// Rank candidates by `metric` on `split`; ties go to the smaller model id.
pub fn rank_models(candidates: &[CandidateModel], metric: SelectionMetric, split: Split) -> Result<RankedModelList> {
    if candidates.is_empty() {
        return Err(Error::input("no candidate models to rank"));
    }
    let mut values = BTreeMap::new();
    for c in candidates {
        let v = metric.value(c.stats(split)?)?;
        if values.insert(c.model_id, v).is_some() {
            return Err(Error::input(format!("duplicate model id {}", c.model_id)));
        }
    }
    let mut order: Vec<usize> = values.keys().copied().collect();
    order.sort_by(|a, b| {
        let (va, vb) = (values[a], values[b]);
        let by_value = if metric.lower_is_better() { va.total_cmp(&vb) } else { vb.total_cmp(&va) };
        by_value.then(a.cmp(b))
    });
    let rank_of = order.iter().enumerate().map(|(i, &id)| (id, i + 1)).collect();

    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for v in values.values() {
        *counts.entry(v.to_bits()).or_default() += 1;
    }
    let tied_models = counts.values().filter(|&&n| n > 1).sum();
    Ok(RankedModelList {
        metric,
        order,
        values,
        rank_of,
        tied_models,
    })
}

/// Rank-position vectors of two lists, indexed by ascending model id.
pub fn rank_vectors(a: &RankedModelList, b: &RankedModelList) -> Result<(Vec<f64>, Vec<f64>)> {
    let ids_a: BTreeSet<_> = a.rank_of.keys().collect();
    let ids_b: BTreeSet<_> = b.rank_of.keys().collect();
    if ids_a != ids_b {
        return Err(Error::input("ranked lists cover different model ids"));
    }
    let va = a.rank_of.values().map(|&r| r as f64).collect();
    let vb = b.rank_of.values().map(|&r| r as f64).collect();
    Ok((va, vb))
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::input(format!("vectors of length {} and {}", a.len(), b.len())));
    }
    Ok(())
}

pub fn euclidean(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::input("cosine similarity of a zero vector"));
    }
    Ok(dot / (na * nb))
}

/// NDCG of the validation order with test worst-group accuracy as relevance.
pub fn ndcg_concordance(val_ranking: &RankedModelList, test_relevance: &BTreeMap<usize, f64>) -> Result<f64> {
    let mut rel = Vec::with_capacity(val_ranking.len());
    for id in &val_ranking.order {
        let r = *test_relevance
            .get(id)
            .ok_or_else(|| Error::input(format!("model {id} has no test accuracy")))?;
        if !(r >= 0.0) {
            return Err(Error::input(format!("model {id} has negative relevance {r}")));
        }
        rel.push(r);
    }
    let dcg = |xs: &[f64]| xs.iter().enumerate().map(|(i, r)| r * discount(i + 1)).sum::<f64>();
    let actual = dcg(&rel);
    rel.sort_by(|a, b| b.total_cmp(a));
    let ideal = dcg(&rel);
    Ok(if ideal == 0.0 { 1.0 } else { actual / ideal })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcordanceRow {
    pub metric: SelectionMetric,
    pub euclidean: f64,
    pub cosine: f64,
    pub ndcg: f64,
    pub tie_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcordanceReport {
    pub n_models: usize,
    pub rows: Vec<ConcordanceRow>,
}

impl ConcordanceReport {
    pub fn row(&self, metric: SelectionMetric) -> Option<&ConcordanceRow> {
        self.rows.iter().find(|r| r.metric == metric)
    }

    /// Element-wise mean of reports over the same metrics.
    pub fn mean(reports: &[ConcordanceReport]) -> Result<ConcordanceReport> {
        let first = reports.first().ok_or_else(|| Error::input("no reports to average"))?;
        let n = reports.len() as f64;
        let mut rows = Vec::with_capacity(first.rows.len());
        for (i, row) in first.rows.iter().enumerate() {
            let mut acc = [0.0; 4];
            for rep in reports {
                let r = rep
                    .rows
                    .get(i)
                    .filter(|r| r.metric == row.metric)
                    .ok_or_else(|| Error::input("reports cover different metrics"))?;
                acc[0] += r.euclidean;
                acc[1] += r.cosine;
                acc[2] += r.ndcg;
                acc[3] += r.tie_fraction;
            }
            rows.push(ConcordanceRow {
                metric: row.metric,
                euclidean: acc[0] / n,
                cosine: acc[1] / n,
                ndcg: acc[2] / n,
                tie_fraction: acc[3] / n,
            });
        }
        Ok(ConcordanceReport {
            n_models: first.n_models,
            rows,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,euclidean,cosine,ndcg,tie_fraction\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.metric,
                fmt_f64(r.euclidean),
                fmt_f64(r.cosine),
                fmt_f64(r.ndcg),
                fmt_f64(r.tie_fraction)
            );
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| metric | ED | CS | NDCG | ties |\n|---|---:|---:|---:|---:|\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "| {} | {:.3} | {:.3} | {:.3} | {:.1}% |",
                r.metric,
                r.euclidean,
                r.cosine,
                r.ndcg,
                100.0 * r.tie_fraction
            );
        }
        out
    }

    pub fn write(&self, csv_path: &Path, md_path: &Path) -> Result<()> {
        std::fs::write(csv_path, self.to_csv()).map_err(|e| Error::io(csv_path, e))?;
        std::fs::write(md_path, self.to_markdown()).map_err(|e| Error::io(md_path, e))
    }
}

/// Rank candidates under each metric on validation and compare with their
/// test worst-group ranking.
pub fn concordance(candidates: &[CandidateModel], metrics: &[SelectionMetric]) -> Result<ConcordanceReport> {
    if candidates.len() < 2 {
        return Err(Error::input(format!("concordance needs at least 2 candidates, got {}", candidates.len())));
    }
    let test = rank_models(candidates, SelectionMetric::WorstGroup, Split::OodTest)?;
    let relevance: BTreeMap<usize, f64> = candidates
        .iter()
        .map(|c| Ok((c.model_id, worst_group(&c.test_stats)?)))
        .collect::<Result<_>>()?;
    let rows = metrics
        .iter()
        .map(|&metric| {
            let val = rank_models(candidates, metric, Split::OodVal)?;
            let (va, vt) = rank_vectors(&val, &test)?;
            Ok(ConcordanceRow {
                metric,
                euclidean: euclidean(&va, &vt)?,
                cosine: cosine(&va, &vt)?,
                ndcg: ndcg_concordance(&val, &relevance)?,
                tie_fraction: val.tie_fraction(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(ConcordanceReport {
        n_models: candidates.len(),
        rows,
    })
}
