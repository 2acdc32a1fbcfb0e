use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::run::{load_records, select_winners, RunRecord};
use super::{create_dir, write_manifest};
use crate::dataset::Split;
use crate::error::{Error, Result};
use crate::json::{self, fmt_f64};
use crate::metrics::{AccuracySummary, SelectionMetric};
use crate::select::{concordance, CandidateModel, ConcordanceReport};
use crate::stats::{bootstrap_compare_stratified, Statistic};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionStudy {
    pub filter: Option<String>,
    /// Model id per grid-point slug (shared across seeds).
    pub candidates: Vec<String>,
    pub per_seed: Vec<(u64, ConcordanceReport)>,
    pub mean: ConcordanceReport,
}

fn file_stem(label: &str) -> String {
    label.to_ascii_lowercase().replace('+', "-")
}

/// Concordance of every validation metric with the test worst-group ranking,
/// over the stored runs (optionally only one method label), per seed and
/// averaged over seeds.
pub fn cmd_select(out: &Path, label: Option<&str>, metrics: &[SelectionMetric]) -> Result<SelectionStudy> {
    let records: Vec<RunRecord> = load_records(out)?
        .into_iter()
        .filter(|r| label.is_none_or(|l| r.label.eq_ignore_ascii_case(l)))
        .collect();
    if records.is_empty() {
        return Err(Error::input(format!("{}: no completed runs to select from", out.display())));
    }
    let mut slugs: Vec<String> = Vec::new();
    for r in &records {
        if !slugs.contains(&r.slug) {
            slugs.push(r.slug.clone());
        }
    }
    let mut by_seed: BTreeMap<u64, Vec<CandidateModel>> = BTreeMap::new();
    for r in &records {
        by_seed.entry(r.seed).or_default().push(CandidateModel {
            model_id: slugs.iter().position(|s| *s == r.slug).expect("slug listed"),
            spec: r.spec.clone(),
            val_stats: r.ood_val.group_stats.clone(),
            test_stats: r.ood_test.group_stats.clone(),
        });
    }
    let per_seed: Vec<(u64, ConcordanceReport)> = by_seed
        .into_iter()
        .map(|(seed, cands)| Ok((seed, concordance(&cands, metrics)?)))
        .collect::<Result<_>>()?;
    let reports: Vec<ConcordanceReport> = per_seed.iter().map(|(_, r)| r.clone()).collect();
    let study = SelectionStudy {
        filter: label.map(str::to_string),
        candidates: slugs,
        mean: ConcordanceReport::mean(&reports)?,
        per_seed,
    };

    let dir = out.join("select").join(label.map_or("all".to_string(), file_stem));
    create_dir(&dir)?;
    for (seed, rep) in &study.per_seed {
        rep.write(&dir.join(format!("concordance_seed-{seed}.csv")), &dir.join(format!("concordance_seed-{seed}.md")))?;
    }
    study.mean.write(&dir.join("concordance_mean.csv"), &dir.join("concordance_mean.md"))?;
    let mut ids = String::from("model_id,slug\n");
    for (i, s) in study.candidates.iter().enumerate() {
        let _ = writeln!(ids, "{i},{s}");
    }
    std::fs::write(dir.join("candidates.csv"), ids).map_err(|e| Error::io(dir.join("candidates.csv"), e))?;
    json::write_file(&dir.join("concordance.json"), &study, true)?;
    write_manifest(out)?;
    Ok(study)
}

/// Seed-aggregated results of one method's selected grid points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub label: String,
    pub seeds: Vec<u64>,
    pub selected: Vec<String>,
    /// Seed-mean summary per split, in `Split::ALL` order.
    pub mean: Vec<AccuracySummary>,
    /// Seed-mean t per split; `None` if any seed had zero spread.
    pub mean_t: Vec<Option<f64>>,
    /// `[split][column]` best markers for average, p10, worst.
    pub best: Vec<[bool; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub bootstrap_resamples: usize,
    pub bootstrap_seed: u64,
    pub methods: Vec<MethodSummary>,
}

impl Report {
    pub fn method(&self, label: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.label == label)
    }
}

const COLUMNS: [(&str, Statistic); 3] = [
    ("average", Statistic::Mean),
    ("p10", Statistic::Percentile(10.0)),
    ("worst", Statistic::WorstGroup),
];

fn column(s: &AccuracySummary, c: usize) -> f64 {
    [s.average, s.p10, s.worst][c]
}

pub fn build_report(records: &[RunRecord], resamples: usize, seed: u64) -> Result<Report> {
    if records.is_empty() {
        return Err(Error::input("no results to report"));
    }
    let winners = select_winners(records);
    let find = |slug: &str, s: u64| records.iter().find(|r| r.slug == slug && r.seed == s).expect("winner exists");

    let mut labels: Vec<&str> = Vec::new();
    for w in &winners {
        if !labels.contains(&w.label.as_str()) {
            labels.push(&w.label);
        }
    }
    let mut chosen: Vec<Vec<&RunRecord>> = Vec::new();
    let mut methods = Vec::new();
    for label in &labels {
        let runs: Vec<&RunRecord> = winners.iter().filter(|w| w.label == *label).map(|w| find(&w.slug, w.seed)).collect();
        let n = runs.len() as f64;
        let mean = Split::ALL
            .iter()
            .map(|&sp| {
                let sum = |f: fn(&AccuracySummary) -> f64| runs.iter().map(|r| f(&r.split(sp).summary)).sum::<f64>() / n;
                AccuracySummary {
                    average: sum(|s| s.average),
                    p10: sum(|s| s.p10),
                    worst: sum(|s| s.worst),
                }
            })
            .collect();
        let mean_t = Split::ALL
            .iter()
            .map(|&sp| {
                let ts: Option<Vec<f64>> = runs.iter().map(|r| r.split(sp).tstat.t).collect();
                ts.map(|v| v.iter().sum::<f64>() / n)
            })
            .collect();
        methods.push(MethodSummary {
            label: label.to_string(),
            seeds: runs.iter().map(|r| r.seed).collect(),
            selected: runs.iter().map(|r| r.slug.clone()).collect(),
            mean,
            mean_t,
            best: vec![[false; 3]; Split::ALL.len()],
        });
        chosen.push(runs);
    }

    for (si, &split) in Split::ALL.iter().enumerate() {
        for (ci, &(_, stat)) in COLUMNS.iter().enumerate() {
            let mut top = 0;
            for (i, m) in methods.iter().enumerate() {
                if column(&m.mean[si], ci) > column(&methods[top].mean[si], ci) {
                    top = i;
                }
            }
            let strata = |runs: &[&RunRecord]| runs.iter().map(|r| r.split(split).accuracies()).collect::<Vec<_>>();
            let top_accs = strata(&chosen[top]);
            for i in 0..methods.len() {
                let best = i == top || bootstrap_compare_stratified(&top_accs, &strata(&chosen[i]), stat, resamples, seed)? >= 0.05;
                methods[i].best[si][ci] = best;
            }
        }
    }
    Ok(Report {
        bootstrap_resamples: resamples,
        bootstrap_seed: seed,
        methods,
    })
}

fn pct(v: f64) -> String {
    format!("{:.1}", 100.0 * v)
}

/// `70.1/53.3/18.7`, bolding best entries when `bold` is set.
pub fn cell(s: &AccuracySummary, best: [bool; 3], bold: bool) -> String {
    (0..3)
        .map(|c| {
            let v = pct(column(s, c));
            if bold && best[c] {
                format!("**{v}**")
            } else {
                v
            }
        })
        .collect::<Vec<_>>()
        .join("/")
}

fn t_text(t: Option<f64>) -> String {
    t.map_or("inf".to_string(), |v| format!("{v:.1}"))
}

impl Report {
    pub fn accuracy_csv(&self) -> String {
        let mut out = String::from("split,method,n_seeds,average,p10,worst,average_best,p10_best,worst_best,cell\n");
        for (si, split) in Split::ALL.iter().enumerate() {
            for m in &self.methods {
                let s = &m.mean[si];
                let b = m.best[si];
                let _ = writeln!(
                    out,
                    "{split},{},{},{},{},{},{},{},{},{}",
                    m.label,
                    m.seeds.len(),
                    fmt_f64(s.average),
                    fmt_f64(s.p10),
                    fmt_f64(s.worst),
                    b[0],
                    b[1],
                    b[2],
                    cell(s, b, false)
                );
            }
        }
        out
    }

    pub fn tstat_csv(&self) -> String {
        let mut out = String::from("method,n_seeds,train_t,ood_val_t,ood_test_t\n");
        for m in &self.methods {
            let ts: Vec<String> = m.mean_t.iter().map(|t| t.map_or("inf".to_string(), fmt_f64)).collect();
            let _ = writeln!(out, "{},{},{}", m.label, m.seeds.len(), ts.join(","));
        }
        out
    }

    pub fn markdown(&self, records: &[RunRecord]) -> String {
        let mut out = String::from("# Results\n\n");
        let _ = writeln!(
            out,
            "Cells are seed means of average / 10th-percentile / worst-group accuracy (%). \
             Bold marks the best method per column and methods not significantly different from it \
             (group bootstrap, {} resamples, p >= 0.05).\n",
            self.bootstrap_resamples
        );
        for (si, split) in Split::ALL.iter().enumerate() {
            let _ = writeln!(out, "## {split}\n\n| method | seeds | avg/p10/worst |\n|---|---:|---|");
            for m in &self.methods {
                let _ = writeln!(out, "| {} | {} | {} |", m.label, m.seeds.len(), cell(&m.mean[si], m.best[si], true));
            }
            out.push('\n');
        }
        out.push_str("## t-statistics\n\n| method | train | ood_val | ood_test |\n|---|---:|---:|---:|\n");
        for m in &self.methods {
            let ts: Vec<String> = m.mean_t.iter().map(|&t| t_text(t)).collect();
            let _ = writeln!(out, "| {} | {} |", m.label, ts.join(" | "));
        }
        out.push_str("\n## Selected grid points\n\n| method | seed | grid point | selection value | test t |\n|---|---:|---|---:|---:|\n");
        for m in &self.methods {
            for (seed, slug) in m.seeds.iter().zip(&m.selected) {
                let r = records.iter().find(|r| r.slug == *slug && r.seed == *seed).expect("selected record");
                let _ = writeln!(
                    out,
                    "| {} | {seed} | {slug} | {:.6} | {} |",
                    m.label,
                    r.selection_value,
                    t_text(r.ood_test.tstat.t)
                );
            }
        }
        out
    }
}

/// Render report tables for the study in `out`. Bootstrap settings default
/// to the stored study config.
pub fn cmd_report(out: &Path, resamples: Option<usize>, seed: Option<u64>) -> Result<(Report, PathBuf)> {
    let (mut b, mut s) = (crate::stats::DEFAULT_RESAMPLES, 0);
    let cfg_path = out.join("config.json");
    if cfg_path.is_file() {
        let cfg = super::ExperimentConfig::load(&cfg_path)?;
        b = cfg.bootstrap_resamples;
        s = cfg.bootstrap_seed;
    }
    let records = load_records(out)?;
    if records.is_empty() {
        return Err(Error::input(format!("{}: no results to report", out.display())));
    }
    let report = build_report(&records, resamples.unwrap_or(b), seed.unwrap_or(s))?;
    let dir = out.join("report");
    create_dir(&dir)?;
    let write = |name: &str, text: String| std::fs::write(dir.join(name), text).map_err(|e| Error::io(dir.join(name), e));
    write("accuracy.csv", report.accuracy_csv())?;
    write("tstat.csv", report.tstat_csv())?;
    write("report.md", report.markdown(&records))?;
    json::write_file(&dir.join("report.json"), &report, true)?;
    write_manifest(out)?;
    Ok((report, dir))
}
