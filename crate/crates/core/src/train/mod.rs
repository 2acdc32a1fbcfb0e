//! Training methods: ERM, discounted rank upweighting (qDRU / gDRU with +G or
//! +M scope), Worst, Const, JTT and online Group DRO.
//!
//! Every non-JTT method trains one model for `total_epochs`. Epoch 0 uses unit
//! weights; each later epoch uses weights built from the ranking (training
//! accuracy ascending) and error set observed at the end of the previous one.
//! After every epoch the model is scored on the validation split and the best
//! checkpoint under the selection metric is retained.

mod weighting;

pub use weighting::{
    build_weight_table, dru_weight, group_dro_update, DroState, ErrorSet, RankWeight, WeightTable,
};

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::GroupedDataset;
use crate::error::{Error, Result};
use crate::metrics::{compute_group_stats, rank_groups, AccuracySummary, GroupStats, RankedGroups, RankingKey, SelectionMetric};
use crate::nn::{self, Batch, Mlp, Optimizer, OptimizerKind};
use crate::rng::{self, Purpose, StreamRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Erm,
    QDru,
    GDru,
    Worst,
    Const,
    Jtt,
    GroupDro,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Erm => "ERM",
            Method::QDru => "qDRU",
            Method::GDru => "gDRU",
            Method::Worst => "Worst",
            Method::Const => "Const",
            Method::Jtt => "JTT",
            Method::GroupDro => "GroupDRO",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "erm" => Method::Erm,
            "qdru" => Method::QDru,
            "gdru" => Method::GDru,
            "worst" => Method::Worst,
            "const" => Method::Const,
            "jtt" => Method::Jtt,
            "groupdro" | "dro" => Method::GroupDro,
            _ => return Err(Error::config(format!("unknown method {s:?}"))),
        })
    }
}

/// Which samples of a targeted group are upweighted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scope {
    /// Every sample of the group.
    #[serde(rename = "g", alias = "G")]
    G,
    /// Only samples misclassified at the previous epoch.
    #[serde(rename = "m", alias = "M")]
    M,
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "g" | "G" => Ok(Scope::G),
            "m" | "M" => Ok(Scope::M),
            _ => Err(Error::config(format!("unknown scope {s:?}; expected g or m"))),
        }
    }
}

fn default_lambda() -> f64 {
    1.0
}

fn default_dro_step() -> f64 {
    0.01
}

fn default_epochs() -> usize {
    30
}

fn default_selection() -> SelectionMetric {
    SelectionMetric::QuantileDcg(10)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scope: Option<Scope>,
    /// Rank (gDRU) or quantile (qDRU) cutoff C.
    #[serde(default)]
    pub cutoff: u32,
    /// Constant upweight λ for Worst, Const and JTT.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// JTT first-stage epochs T.
    #[serde(default)]
    pub first_stage_epochs: usize,
    /// Group DRO step size η.
    #[serde(default = "default_dro_step")]
    pub dro_step: f64,
    #[serde(default = "default_epochs")]
    pub total_epochs: usize,
    #[serde(default = "default_selection")]
    pub selection_metric: SelectionMetric,
}

impl MethodSpec {
    pub fn erm() -> Self {
        MethodSpec {
            method: Method::Erm,
            scope: None,
            cutoff: 0,
            lambda: 1.0,
            first_stage_epochs: 0,
            dro_step: default_dro_step(),
            total_epochs: default_epochs(),
            selection_metric: default_selection(),
        }
    }

    pub fn dru(quantile: bool, scope: Scope, cutoff: u32) -> Self {
        MethodSpec {
            method: if quantile { Method::QDru } else { Method::GDru },
            scope: Some(scope),
            cutoff,
            ..MethodSpec::erm()
        }
    }

    pub fn worst(scope: Scope, lambda: f64) -> Self {
        MethodSpec {
            method: Method::Worst,
            scope: Some(scope),
            lambda,
            ..MethodSpec::erm()
        }
    }

    pub fn constant(lambda: f64) -> Self {
        MethodSpec {
            method: Method::Const,
            scope: Some(Scope::M),
            lambda,
            ..MethodSpec::erm()
        }
    }

    pub fn jtt(first_stage_epochs: usize, lambda: f64) -> Self {
        MethodSpec {
            method: Method::Jtt,
            scope: Some(Scope::M),
            lambda,
            first_stage_epochs,
            ..MethodSpec::erm()
        }
    }

    pub fn group_dro(step: f64) -> Self {
        MethodSpec {
            method: Method::GroupDro,
            dro_step: step,
            ..MethodSpec::erm()
        }
    }

    pub fn with_epochs(mut self, total_epochs: usize) -> Self {
        self.total_epochs = total_epochs;
        self
    }

    pub fn with_selection(mut self, metric: SelectionMetric) -> Self {
        self.selection_metric = metric;
        self
    }

    /// Display name such as `qDRU+M`.
    pub fn label(&self) -> String {
        match self.scope {
            Some(Scope::G) => format!("{}+G", self.method.name()),
            Some(Scope::M) if self.method != Method::Jtt => format!("{}+M", self.method.name()),
            _ => self.method.name().to_string(),
        }
    }

    /// Label plus the hyperparameters that matter for this method.
    pub fn slug(&self) -> String {
        let base = self.label().replace('+', "-").to_ascii_lowercase();
        match self.method {
            Method::Erm => base,
            Method::QDru | Method::GDru => format!("{base}_c{}", self.cutoff),
            Method::Worst | Method::Const => format!("{base}_l{}", self.lambda),
            Method::Jtt => format!("{base}_t{}_l{}", self.first_stage_epochs, self.lambda),
            Method::GroupDro => format!("{base}_eta{}", self.dro_step),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let label = self.label();
        match (self.method, self.scope) {
            (Method::Erm | Method::GroupDro, Some(_)) => {
                return Err(Error::config(format!("{} takes no scope", self.method.name())))
            }
            (Method::Const | Method::Jtt, s) if s != Some(Scope::M) => {
                return Err(Error::config(format!("{} requires scope m", self.method.name())))
            }
            (Method::QDru | Method::GDru | Method::Worst, None) => {
                return Err(Error::config(format!("{} requires a scope (g or m)", self.method.name())))
            }
            _ => {}
        }
        if self.total_epochs == 0 {
            return Err(Error::config("total_epochs must be positive"));
        }
        if !(self.lambda >= 1.0 && self.lambda.is_finite()) {
            return Err(Error::config(format!("{label}: lambda {} must be >= 1", self.lambda)));
        }
        if self.method == Method::QDru && self.cutoff > 100 {
            return Err(Error::config(format!("{label}: quantile cutoff {} exceeds 100", self.cutoff)));
        }
        if self.method == Method::GroupDro && !(self.dro_step > 0.0 && self.dro_step.is_finite()) {
            return Err(Error::config(format!("{label}: step size {} must be positive", self.dro_step)));
        }
        if self.method == Method::Jtt && self.first_stage_epochs >= self.total_epochs {
            return Err(Error::config(format!(
                "JTT first stage T = {} must be below total_epochs = {}",
                self.first_stage_epochs, self.total_epochs
            )));
        }
        Ok(())
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.slug())
    }
}

fn default_hidden() -> Vec<usize> {
    vec![128, 128]
}

fn default_leaky() -> f64 {
    nn::DEFAULT_LEAKY_SLOPE
}

fn default_dropout() -> f64 {
    0.5
}

fn default_lr() -> f64 {
    1e-3
}

fn default_batch() -> usize {
    64
}

fn default_optimizer() -> OptimizerKind {
    OptimizerKind::AdaptiveMoment
}

/// Base learner and optimizer settings shared by every method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_hidden")]
    pub hidden_dims: Vec<usize>,
    #[serde(default = "default_leaky")]
    pub leaky_slope: f64,
    #[serde(default = "default_dropout")]
    pub dropout_rate: f64,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden_dims: default_hidden(),
            leaky_slope: default_leaky(),
            dropout_rate: default_dropout(),
            learning_rate: default_lr(),
            batch_size: default_batch(),
            optimizer: default_optimizer(),
        }
    }
}

impl TrainConfig {
    pub fn layer_dims(&self, input_dim: usize, n_classes: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend(&self.hidden_dims);
        dims.push(n_classes);
        dims
    }

    pub fn init_model(&self, input_dim: usize, n_classes: usize, seed: u64) -> Result<Mlp> {
        Mlp::new(&self.layer_dims(input_dim, n_classes), self.leaky_slope, self.dropout_rate, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        Ok(())
    }
}

/// How the samples of one epoch are weighted.
pub enum EpochWeighting<'a> {
    /// Fixed per-row weights for the whole epoch.
    Samples(&'a [f64]),
    /// Online Group DRO; `q` is updated after every batch.
    GroupDro { state: &'a mut DroState, step: f64 },
}

/// Epoch-end evaluation of the training set.
#[derive(Clone, Debug)]
pub struct EpochOutcome {
    /// Mean of the mini-batch objective values.
    pub batch_loss: f64,
    pub train_stats: Vec<GroupStats>,
    pub ranking: RankedGroups,
    pub errors: ErrorSet,
}

/// Shuffled mini-batch pass over `data`, followed by an eval-mode pass that
/// yields group stats, the accuracy-ascending ranking and the error set.
pub fn run_epoch(
    model: &mut Mlp,
    optimizer: &mut Optimizer,
    data: &GroupedDataset,
    weighting: EpochWeighting<'_>,
    batch_size: usize,
    epoch: usize,
    rng: &mut StreamRng,
) -> Result<EpochOutcome> {
    if batch_size == 0 {
        return Err(Error::config("batch_size must be positive"));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);

    let mut weighting = weighting;
    if let EpochWeighting::Samples(w) = &weighting {
        if w.len() != data.len() {
            return Err(Error::Shape(format!("{} weights for {} rows", w.len(), data.len())));
        }
    }

    let mut loss_sum = 0.0;
    let mut n_batches = 0usize;
    for rows in order.chunks(batch_size) {
        let mut batch = Batch {
            features: data.gather_features(rows),
            labels: rows.iter().map(|&r| data.labels()[r]).collect(),
            sample_weights: vec![1.0; rows.len()],
            group_ids: rows.iter().map(|&r| data.group_ids()[r]).collect(),
        };
        let (loss, grads) = match &mut weighting {
            EpochWeighting::Samples(w) => {
                batch.sample_weights = rows.iter().map(|&r| w[r]).collect();
                model.loss_and_grads(&batch, Some(rng))?
            }
            EpochWeighting::GroupDro { state, step } => {
                let group_ids = batch.group_ids.clone();
                let step = *step;
                model.loss_and_grads_with(&batch, Some(rng), |losses| {
                    let present = batch_group_means(&group_ids, losses);
                    state.q = group_dro_update(&state.q, &present, step)?;
                    Ok(dro_sample_weights(&state.q, &group_ids, &present))
                })?
            }
        };
        optimizer.apply(model, &grads);
        loss_sum += loss;
        n_batches += 1;
    }

    let (losses, correct) = nn::evaluate(model, data.features(), data.labels())?;
    let train_stats = compute_group_stats(&losses, &correct, data.group_ids())?;
    let ranking = rank_groups(&train_stats, RankingKey::AccuracyAscending)?;
    Ok(EpochOutcome {
        batch_loss: loss_sum / n_batches as f64,
        train_stats,
        ranking,
        errors: ErrorSet::from_correct(epoch, &correct),
    })
}

/// Mean loss per group present in a batch, ordered by group id.
fn batch_group_means(group_ids: &[usize], losses: &[f64]) -> Vec<(usize, f64)> {
    let mut sums: std::collections::BTreeMap<usize, (f64, usize)> = Default::default();
    for (&g, &l) in group_ids.iter().zip(losses) {
        let e = sums.entry(g).or_insert((0.0, 0));
        e.0 += l;
        e.1 += 1;
    }
    sums.into_iter().map(|(g, (s, n))| (g, s / n as f64)).collect()
}

/// Row weights `q_g / n_g` so the normalised batch loss is `Σ q_g l_g / Σ q_g`
/// over the groups present.
fn dro_sample_weights(q: &[f64], group_ids: &[usize], present: &[(usize, f64)]) -> Vec<f64> {
    let counts: std::collections::BTreeMap<usize, usize> =
        group_ids.iter().fold(Default::default(), |mut m, &g| {
            *m.entry(g).or_default() += 1;
            m
        });
    debug_assert_eq!(counts.len(), present.len());
    group_ids.iter().map(|&g| q[g] / counts[&g] as f64).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub upweighted_samples: usize,
    pub max_weight: f64,
    pub mean_weight: f64,
}

impl WeightSummary {
    fn of(weights: &[f64]) -> Self {
        WeightSummary {
            upweighted_samples: weights.iter().filter(|&&w| w > 1.0).count(),
            max_weight: weights.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean_weight: weights.iter().sum::<f64>() / weights.len() as f64,
        }
    }

    fn of_dro(state: &DroState) -> Self {
        let n = state.q.len() as f64;
        // scaled so uniform q reads as weight 1
        let scaled: Vec<f64> = state.q.iter().map(|q| q * n).collect();
        WeightSummary::of(&scaled)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub batch_loss: f64,
    pub train: AccuracySummary,
    pub train_mean_loss: f64,
    pub val: AccuracySummary,
    pub val_stats: Vec<GroupStats>,
    pub selection_value: f64,
    pub weights: WeightSummary,
    /// The retained checkpoint was replaced by this epoch's model.
    pub checkpoint_updated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub method: MethodSpec,
    pub seed: u64,
    /// JTT first-stage epochs (not eligible for checkpoint selection).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub first_stage: Vec<EpochRecord>,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// Size of the frozen JTT error set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frozen_error_set: Option<usize>,
}

impl TrainHistory {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch]
    }
}

pub struct TrainOutcome {
    pub best_model: Mlp,
    pub history: TrainHistory,
}

fn mean_loss(stats: &[GroupStats]) -> f64 {
    let n: usize = stats.iter().map(|s| s.n).sum();
    stats.iter().map(|s| s.mean_loss * s.n as f64).sum::<f64>() / n as f64
}

/// Tracks the best validation checkpoint.
struct Selector {
    metric: SelectionMetric,
    best: Option<(usize, f64, Mlp)>,
}

impl Selector {
    fn offer(&mut self, epoch: usize, value: f64, model: &Mlp) -> bool {
        let improved = match &self.best {
            None => true,
            Some((_, best, _)) => self.metric.better(value, *best),
        };
        if improved {
            self.best = Some((epoch, value, model.clone()));
        }
        improved
    }
}

struct Run<'a> {
    cfg: &'a TrainConfig,
    train: &'a GroupedDataset,
    val: &'a GroupedDataset,
    n_classes: usize,
}

impl Run<'_> {
    fn fresh(&self, seed: u64) -> Result<(Mlp, Optimizer, StreamRng)> {
        let model = self.cfg.init_model(self.train.feature_dim(), self.n_classes, seed)?;
        let optimizer = Optimizer::new(self.cfg.optimizer, self.cfg.learning_rate, &model)?;
        Ok((model, optimizer, rng::stream(seed, Purpose::Training, 0, 0)))
    }

    fn record(
        &self,
        epoch: usize,
        outcome: &EpochOutcome,
        model: &Mlp,
        metric: SelectionMetric,
        weights: WeightSummary,
    ) -> Result<EpochRecord> {
        let (losses, correct) = nn::evaluate(model, self.val.features(), self.val.labels())?;
        let val_stats = compute_group_stats(&losses, &correct, self.val.group_ids())?;
        Ok(EpochRecord {
            epoch,
            batch_loss: outcome.batch_loss,
            train: AccuracySummary::of(&outcome.train_stats)?,
            train_mean_loss: mean_loss(&outcome.train_stats),
            val: AccuracySummary::of(&val_stats)?,
            selection_value: metric.value(&val_stats)?,
            val_stats,
            weights,
            checkpoint_updated: false,
        })
    }
}

/// Train one method and keep the best validation checkpoint.
///
/// The model is initialised from `seed` and the shuffle / dropout stream is
/// derived from the same seed. JTT's second stage uses `seed + 1`, so JTT with
/// `λ = 1` retraces ERM run with `seed + 1`.
pub fn train(
    spec: &MethodSpec,
    cfg: &TrainConfig,
    train_set: &GroupedDataset,
    val_set: &GroupedDataset,
    seed: u64,
) -> Result<TrainOutcome> {
    spec.validate()?;
    cfg.validate()?;
    if train_set.feature_dim() != val_set.feature_dim() {
        return Err(Error::Shape(format!(
            "train has {} features, validation has {}",
            train_set.feature_dim(),
            val_set.feature_dim()
        )));
    }
    let run = Run {
        cfg,
        train: train_set,
        val: val_set,
        n_classes: train_set.n_classes().max(val_set.n_classes()),
    };
    let mut selector = Selector {
        metric: spec.selection_metric,
        best: None,
    };
    let mut epochs = Vec::with_capacity(spec.total_epochs);
    let mut first_stage = Vec::new();
    let mut frozen_error_set = None;

    if spec.method == Method::Jtt {
        let (mut model, mut opt, mut rng) = run.fresh(seed)?;
        let unit = vec![1.0; train_set.len()];
        let mut errors = None;
        for t in 0..spec.first_stage_epochs {
            let out = run_epoch(&mut model, &mut opt, train_set, EpochWeighting::Samples(&unit), cfg.batch_size, t, &mut rng)?;
            first_stage.push(run.record(t, &out, &model, spec.selection_metric, WeightSummary::of(&unit))?);
            errors = Some(out.errors);
        }
        let errors = match errors {
            Some(e) => e,
            None => {
                let (_, correct) = nn::evaluate(&model, train_set.features(), train_set.labels())?;
                ErrorSet::from_correct(0, &correct)
            }
        };
        frozen_error_set = Some(errors.len());
        let table = WeightTable {
            epoch: 0,
            scope: Scope::M,
            group_weights: vec![spec.lambda; train_set.n_groups()],
            source_ranking: None,
        };
        let weights = table.sample_weights(train_set, Some(&errors))?;
        let summary = WeightSummary::of(&weights);

        let (mut model, mut opt, mut rng) = run.fresh(seed.wrapping_add(1))?;
        for t in 0..spec.total_epochs {
            let out = run_epoch(&mut model, &mut opt, train_set, EpochWeighting::Samples(&weights), cfg.batch_size, t, &mut rng)?;
            let mut rec = run.record(t, &out, &model, spec.selection_metric, summary.clone())?;
            rec.checkpoint_updated = selector.offer(t, rec.selection_value, &model);
            epochs.push(rec);
        }
    } else {
        let (mut model, mut opt, mut rng) = run.fresh(seed)?;
        let mut dro = DroState::uniform(train_set.n_groups());
        let mut previous: Option<EpochOutcome> = None;
        for t in 0..spec.total_epochs {
            let (out, summary) = if spec.method == Method::GroupDro {
                let out = run_epoch(
                    &mut model,
                    &mut opt,
                    train_set,
                    EpochWeighting::GroupDro {
                        state: &mut dro,
                        step: spec.dro_step,
                    },
                    cfg.batch_size,
                    t,
                    &mut rng,
                )?;
                (out, WeightSummary::of_dro(&dro))
            } else {
                let weights = match &previous {
                    None => vec![1.0; train_set.len()],
                    Some(prev) => {
                        build_weight_table(spec, t, &prev.ranking, Some(&prev.errors))?
                            .sample_weights(train_set, Some(&prev.errors))?
                    }
                };
                let out = run_epoch(&mut model, &mut opt, train_set, EpochWeighting::Samples(&weights), cfg.batch_size, t, &mut rng)?;
                (out, WeightSummary::of(&weights))
            };
            let mut rec = run.record(t, &out, &model, spec.selection_metric, summary)?;
            rec.checkpoint_updated = selector.offer(t, rec.selection_value, &model);
            epochs.push(rec);
            previous = Some(out);
        }
    }

    let (best_epoch, _, best_model) = selector.best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best_model,
        history: TrainHistory {
            method: spec.clone(),
            seed,
            first_stage,
            epochs,
            best_epoch,
            frozen_error_set,
        },
    })
}
