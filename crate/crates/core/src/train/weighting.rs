//! Per-epoch sample weights derived from the previous epoch's group ranking.

use serde::{Deserialize, Serialize};

use super::{Method, MethodSpec, Scope};
use crate::dataset::GroupedDataset;
use crate::error::{Error, Result};
use crate::metrics::RankedGroups;

/// Discounted rank weight: `log2(C + 2) / log2(r + 2)` for `r <= C`, else 1.
///
/// `r` is a rank index (gDRU) or a rank quantile in 0..=100 (qDRU).
pub fn dru_weight(r: i64, cutoff: i64) -> Result<f64> {
    if r < 0 || cutoff < 0 {
        return Err(Error::input(format!("rank {r} and cutoff {cutoff} must be non-negative")));
    }
    if r > cutoff {
        return Ok(1.0);
    }
    Ok(((cutoff + 2) as f64).log2() / ((r + 2) as f64).log2())
}

/// How a rank at or below the cutoff turns into a weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RankWeight {
    /// The DRU logarithmic discount.
    Discounted,
    /// A flat upweight.
    Constant(f64),
}

impl RankWeight {
    pub fn weight(self, r: i64, cutoff: i64) -> Result<f64> {
        match self {
            RankWeight::Discounted => dru_weight(r, cutoff),
            RankWeight::Constant(lambda) => {
                if r < 0 || cutoff < 0 {
                    return Err(Error::input("rank and cutoff must be non-negative"));
                }
                Ok(if r <= cutoff { lambda } else { 1.0 })
            }
        }
    }
}

/// Samples misclassified at one epoch-end training evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorSet {
    pub epoch: usize,
    /// Sorted row indices into the training set.
    pub samples: Vec<usize>,
    #[serde(skip)]
    mask: Vec<bool>,
}

impl ErrorSet {
    pub fn from_correct(epoch: usize, correct: &[bool]) -> Self {
        let mask: Vec<bool> = correct.iter().map(|c| !c).collect();
        let samples = mask.iter().enumerate().filter(|(_, m)| **m).map(|(i, _)| i).collect();
        ErrorSet { epoch, samples, mask }
    }

    pub fn contains(&self, row: usize) -> bool {
        self.mask.get(row).copied().unwrap_or(false)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Number of training rows the set was built over.
    pub fn universe(&self) -> usize {
        self.mask.len()
    }
}

/// Group weights for one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightTable {
    pub epoch: usize,
    pub scope: Scope,
    /// Weight per group id (dense ids).
    pub group_weights: Vec<f64>,
    pub source_ranking: Option<RankedGroups>,
}

impl WeightTable {
    pub fn uniform(epoch: usize, n_groups: usize) -> Self {
        WeightTable {
            epoch,
            scope: Scope::G,
            group_weights: vec![1.0; n_groups],
            source_ranking: None,
        }
    }

    /// Expand to one weight per training row. Scope M only upweights rows in `errors`.
    pub fn sample_weights(&self, data: &GroupedDataset, errors: Option<&ErrorSet>) -> Result<Vec<f64>> {
        if self.group_weights.len() != data.n_groups() {
            return Err(Error::Shape(format!(
                "weight table covers {} groups, dataset has {}",
                self.group_weights.len(),
                data.n_groups()
            )));
        }
        let errors = match self.scope {
            Scope::G => None,
            Scope::M => {
                let e = errors.ok_or_else(|| Error::config("scope M needs an error set"))?;
                if e.universe() != data.len() {
                    return Err(Error::Shape(format!(
                        "error set covers {} rows, dataset has {}",
                        e.universe(),
                        data.len()
                    )));
                }
                Some(e)
            }
        };
        Ok(data
            .group_ids()
            .iter()
            .enumerate()
            .map(|(row, &g)| match errors {
                Some(e) if !e.contains(row) => 1.0,
                _ => self.group_weights[g],
            })
            .collect())
    }
}

/// Group weights for `epoch` from the ranking (training accuracy ascending)
/// observed at the end of the previous epoch.
pub fn build_weight_table(
    spec: &MethodSpec,
    epoch: usize,
    ranking: &RankedGroups,
    errors: Option<&ErrorSet>,
) -> Result<WeightTable> {
    let n_groups = ranking.len();
    let scope = spec.scope.unwrap_or(Scope::G);
    if scope == Scope::M && errors.is_none() {
        return Err(Error::config(format!("{} needs the previous epoch's error set", spec.label())));
    }
    let mut group_weights = vec![1.0; n_groups];
    let mut by_rank = |kind: RankWeight, use_quantile: bool, cutoff: i64| -> Result<()> {
        for e in &ranking.entries {
            if e.group_id >= n_groups {
                return Err(Error::input(format!("group id {} is not dense", e.group_id)));
            }
            let r = if use_quantile { e.quantile } else { e.rank };
            group_weights[e.group_id] = kind.weight(r as i64, cutoff)?;
        }
        Ok(())
    };
    match spec.method {
        Method::Erm | Method::GroupDro => {}
        Method::QDru => by_rank(RankWeight::Discounted, true, spec.cutoff as i64)?,
        Method::GDru => by_rank(RankWeight::Discounted, false, spec.cutoff as i64)?,
        Method::Worst => {
            let worst = ranking.entries.first().ok_or_else(|| Error::input("empty ranking"))?;
            group_weights[worst.group_id] = spec.lambda;
        }
        Method::Const | Method::Jtt => group_weights.fill(spec.lambda),
    }
    Ok(WeightTable {
        epoch,
        scope,
        group_weights,
        source_ranking: Some(ranking.clone()),
    })
}

/// Online Group DRO weights over training groups.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DroState {
    pub q: Vec<f64>,
}

impl DroState {
    pub fn uniform(n_groups: usize) -> Self {
        DroState {
            q: vec![1.0 / n_groups as f64; n_groups],
        }
    }
}

/// Exponentiated-gradient step: `q'_g ∝ q_g · exp(η · l_g)` for groups present
/// in the batch, other groups keep their mass, then renormalise.
pub fn group_dro_update(q: &[f64], batch_group_losses: &[(usize, f64)], eta: f64) -> Result<Vec<f64>> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::config(format!("Group DRO step size {eta} must be finite and >= 0")));
    }
    if let Some((g, l)) = batch_group_losses.iter().find(|(_, l)| !l.is_finite()) {
        return Err(Error::Numeric(format!("group {g} has non-finite batch loss {l}")));
    }
    let mut next = q.to_vec();
    for &(g, loss) in batch_group_losses {
        let slot = next
            .get_mut(g)
            .ok_or_else(|| Error::input(format!("group {g} outside the {} DRO groups", q.len())))?;
        *slot *= (eta * loss).exp();
    }
    let total: f64 = next.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Numeric(format!("Group DRO mass collapsed to {total}")));
    }
    next.iter_mut().for_each(|v| *v /= total);
    Ok(next)
}
