use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{DatasetSource, ExperimentConfig};
use super::{create_dir, write_manifest};
use crate::dataset::{read_dataset, write_dataset, write_group_stats, GroupedDataset, Split};
use crate::error::{Error, Result};
use crate::json::{self, fmt_f64};
use crate::metrics::{compute_group_stats, AccuracySummary, GroupStats};
use crate::nn::{self, Mlp};
use crate::stats::{group_tstat, TStatReport};
use crate::synth::{generate_split_with, SyntheticSetting};
use crate::train::{train, MethodSpec};

pub struct StudyData {
    pub train: GroupedDataset,
    pub val: GroupedDataset,
    pub test: GroupedDataset,
}

impl StudyData {
    pub fn generate(setting_id: u32, counts: [usize; 3], q: usize, seed: u64) -> Result<Self> {
        let mut setting = SyntheticSetting::preset(setting_id)?;
        setting.samples_per_group = q;
        let gen = |split, n| generate_split_with(&setting, split, n, seed);
        Ok(StudyData {
            train: gen(Split::Train, counts[0])?,
            val: gen(Split::OodVal, counts[1])?,
            test: gen(Split::OodTest, counts[2])?,
        })
    }

    pub fn read(train: &Path, val: &Path, test: &Path) -> Result<Self> {
        Ok(StudyData {
            train: read_dataset(train)?,
            val: read_dataset(val)?,
            test: read_dataset(test)?,
        })
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let [a, b, c] = split_paths(dir);
        Self::read(&a, &b, &c)
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        create_dir(dir)?;
        let [a, b, c] = split_paths(dir);
        write_dataset(&self.train, &a)?;
        write_dataset(&self.val, &b)?;
        write_dataset(&self.test, &c)
    }
}

/// `train.csv`, `ood_val.csv`, `ood_test.csv` inside `dir`.
pub fn split_paths(dir: &Path) -> [PathBuf; 3] {
    Split::ALL.map(|s| dir.join(format!("{}.csv", s.as_str())))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub summary: AccuracySummary,
    pub tstat: TStatReport,
    pub group_stats: Vec<GroupStats>,
}

impl SplitResult {
    fn evaluate(model: &Mlp, data: &GroupedDataset) -> Result<Self> {
        let (losses, correct) = nn::evaluate(model, data.features(), data.labels())?;
        let group_stats = compute_group_stats(&losses, &correct, data.group_ids())?;
        let accs: Vec<f64> = group_stats.iter().map(|s| s.accuracy).collect();
        Ok(SplitResult {
            summary: AccuracySummary::of(&group_stats)?,
            tstat: group_tstat(&accs)?,
            group_stats,
        })
    }

    pub fn accuracies(&self) -> Vec<f64> {
        self.group_stats.iter().map(|s| s.accuracy).collect()
    }
}

/// Everything reported about one trained grid point, evaluated at its best
/// validation checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub label: String,
    pub slug: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_seed: Option<u64>,
    pub spec: MethodSpec,
    pub best_epoch: usize,
    pub selection_value: f64,
    pub train: SplitResult,
    pub ood_val: SplitResult,
    pub ood_test: SplitResult,
}

impl RunRecord {
    pub fn split(&self, split: Split) -> &SplitResult {
        match split {
            Split::Train => &self.train,
            Split::OodVal => &self.ood_val,
            Split::OodTest => &self.ood_test,
        }
    }
}

pub fn run_dir(out: &Path, slug: &str, seed: u64) -> PathBuf {
    out.join("runs").join(slug).join(format!("seed-{seed}"))
}

/// Train one grid point and write its artifacts; `run.json` is written last
/// and marks the point complete.
pub fn run_point(spec: &MethodSpec, cfg: &ExperimentConfig, seed: u64, data: &StudyData, dir: &Path) -> Result<RunRecord> {
    let outcome = train(spec, &cfg.model, &data.train, &data.val, seed)?;
    let model = &outcome.best_model;
    let record = RunRecord {
        label: spec.label(),
        slug: spec.slug(),
        seed,
        data_seed: data_seed(&cfg.dataset, seed),
        spec: spec.clone(),
        best_epoch: outcome.history.best_epoch,
        selection_value: outcome.history.best().selection_value,
        train: SplitResult::evaluate(model, &data.train)?,
        ood_val: SplitResult::evaluate(model, &data.val)?,
        ood_test: SplitResult::evaluate(model, &data.test)?,
    };
    create_dir(dir)?;
    json::write_file(&dir.join("history.json"), &outcome.history, false)?;
    model.save(&dir.join("model.json"))?;
    for split in Split::ALL {
        write_group_stats(&record.split(split).group_stats, &dir.join(format!("group_stats_{}.csv", split.as_str())))?;
    }
    json::write_file(&dir.join("run.json"), &record, true)?;
    Ok(record)
}

fn data_seed(source: &DatasetSource, run_seed: u64) -> Option<u64> {
    match source {
        DatasetSource::Synthetic { seed, .. } => Some(seed.unwrap_or(run_seed)),
        DatasetSource::Files { .. } => None,
    }
}

fn load_data(cfg: &ExperimentConfig, out: &Path) -> Result<BTreeMap<Option<u64>, Arc<StudyData>>> {
    let mut map = BTreeMap::new();
    match &cfg.dataset {
        DatasetSource::Synthetic {
            setting,
            n_train,
            n_val,
            n_test,
            q,
            ..
        } => {
            let mut seeds: Vec<u64> = cfg.seeds.iter().filter_map(|&s| data_seed(&cfg.dataset, s)).collect();
            seeds.sort_unstable();
            seeds.dedup();
            for s in seeds {
                let data = StudyData::generate(*setting, [*n_train, *n_val, *n_test], *q, s)?;
                data.write_dir(&out.join("data").join(format!("seed-{s}")))?;
                map.insert(Some(s), Arc::new(data));
            }
        }
        DatasetSource::Files { train, val, test } => {
            map.insert(None, Arc::new(StudyData::read(train, val, test)?));
        }
    }
    Ok(map)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailedPoint {
    pub slug: String,
    pub seed: u64,
    pub error: String,
    pub exit_code: i32,
}

#[derive(Debug, Default)]
pub struct StudySummary {
    pub trained: usize,
    pub skipped: usize,
    pub failed: Vec<FailedPoint>,
    pub records: Vec<RunRecord>,
    pub winners: Vec<Winner>,
}

/// Train every grid point for every seed (skipping completed points), then
/// regenerate `results.csv`, `winners.csv` and `failures.json` from the
/// stored run records.
pub fn run_study(cfg: &ExperimentConfig) -> Result<StudySummary> {
    cfg.validate()?;
    let out = cfg.out_dir()?;
    create_dir(out)?;
    json::write_file(&out.join("config.json"), cfg, true)?;
    let specs = cfg.expand()?;
    let data = load_data(cfg, out)?;

    let points: Vec<(&MethodSpec, u64)> = specs.iter().flat_map(|s| cfg.seeds.iter().map(move |&seed| (s, seed))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::config(format!("jobs: {e}")))?;
    let outcomes: Vec<Option<Result<RunRecord>>> = pool.install(|| {
        points
            .par_iter()
            .map(|&(spec, seed)| {
                let dir = run_dir(out, &spec.slug(), seed);
                if dir.join("run.json").is_file() {
                    return None;
                }
                let d = &data[&data_seed(&cfg.dataset, seed)];
                Some(run_point(spec, cfg, seed, d, &dir))
            })
            .collect()
    });

    let mut summary = StudySummary::default();
    for ((spec, seed), outcome) in points.iter().zip(outcomes) {
        match outcome {
            None => summary.skipped += 1,
            Some(Ok(_)) => summary.trained += 1,
            Some(Err(e)) => summary.failed.push(FailedPoint {
                slug: spec.slug(),
                seed: *seed,
                error: e.to_string(),
                exit_code: e.exit_code(),
            }),
        }
    }
    json::write_file(&out.join("failures.json"), &summary.failed, true)?;
    summary.records = load_records(out)?;
    summary.winners = select_winners(&summary.records);
    write_results(out, &summary.records, &summary.winners)?;
    write_manifest(out)?;
    Ok(summary)
}

/// Every stored run record under `out/runs`, in method / hyperparameter /
/// seed order.
pub fn load_records(out: &Path) -> Result<Vec<RunRecord>> {
    let runs = out.join("runs");
    let mut records = Vec::new();
    if !runs.is_dir() {
        return Ok(records);
    }
    for slug_dir in read_dir_sorted(&runs)? {
        for seed_dir in read_dir_sorted(&slug_dir)? {
            let path = seed_dir.join("run.json");
            if path.is_file() {
                records.push(json::read_file::<RunRecord>(&path)?);
            }
        }
    }
    records.sort_by(|a, b| record_order(a, b));
    Ok(records)
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    v.retain(|p| p.is_dir());
    v.sort();
    Ok(v)
}

pub fn record_order(a: &RunRecord, b: &RunRecord) -> std::cmp::Ordering {
    let (x, y) = (&a.spec, &b.spec);
    (x.method, x.scope, x.cutoff, x.first_stage_epochs)
        .cmp(&(y.method, y.scope, y.cutoff, y.first_stage_epochs))
        .then(x.lambda.total_cmp(&y.lambda))
        .then(x.dro_step.total_cmp(&y.dro_step))
        .then(a.slug.cmp(&b.slug))
        .then(a.seed.cmp(&b.seed))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Winner {
    pub label: String,
    pub seed: u64,
    pub slug: String,
    pub selection_value: f64,
}

/// Best grid point per (method label, seed) by the validation selection
/// metric; ties go to the earlier point in record order.
pub fn select_winners(records: &[RunRecord]) -> Vec<Winner> {
    let mut best: BTreeMap<(String, u64), &RunRecord> = BTreeMap::new();
    for r in records {
        let key = (r.label.clone(), r.seed);
        match best.get(&key) {
            Some(cur) if !r.spec.selection_metric.better(r.selection_value, cur.selection_value) => {}
            _ => {
                best.insert(key, r);
            }
        }
    }
    let mut winners: Vec<&RunRecord> = best.into_values().collect();
    winners.sort_by(|a, b| record_order(a, b));
    winners.sort_by_key(|r| (r.spec.method, r.spec.scope, r.seed));
    winners
        .into_iter()
        .map(|r| Winner {
            label: r.label.clone(),
            seed: r.seed,
            slug: r.slug.clone(),
            selection_value: r.selection_value,
        })
        .collect()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::input(format!("{}: {e}", path.display())))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::input(format!("{}: {e}", path.display()))
}

pub fn write_results(out: &Path, records: &[RunRecord], winners: &[Winner]) -> Result<()> {
    let path = out.join("results.csv");
    let mut w = csv_writer(&path)?;
    let mut header: Vec<String> = [
        "label",
        "slug",
        "seed",
        "cutoff",
        "lambda",
        "first_stage_epochs",
        "dro_step",
        "selection_metric",
        "selection_value",
        "best_epoch",
    ]
    .map(String::from)
    .to_vec();
    for split in Split::ALL {
        for col in ["average", "p10", "worst", "t"] {
            header.push(format!("{}_{col}", split.as_str()));
        }
    }
    w.write_record(&header).map_err(csv_err(&path))?;
    for r in records {
        let mut row = vec![
            r.label.clone(),
            r.slug.clone(),
            r.seed.to_string(),
            r.spec.cutoff.to_string(),
            fmt_f64(r.spec.lambda),
            r.spec.first_stage_epochs.to_string(),
            fmt_f64(r.spec.dro_step),
            r.spec.selection_metric.to_string(),
            fmt_f64(r.selection_value),
            r.best_epoch.to_string(),
        ];
        for split in Split::ALL {
            let s = r.split(split);
            row.push(fmt_f64(s.summary.average));
            row.push(fmt_f64(s.summary.p10));
            row.push(fmt_f64(s.summary.worst));
            row.push(fmt_t(&s.tstat));
        }
        w.write_record(&row).map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = out.join("winners.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["label", "seed", "slug", "selection_value"]).map_err(csv_err(&path))?;
    for win in winners {
        w.write_record([win.label.clone(), win.seed.to_string(), win.slug.clone(), fmt_f64(win.selection_value)])
            .map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

pub fn fmt_t(t: &TStatReport) -> String {
    match t.t {
        Some(v) => fmt_f64(v),
        None => "inf".to_string(),
    }
}
