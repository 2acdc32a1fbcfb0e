//! Acceptance suite: one test per criterion, each printing a single
//! PASS/FAIL line to stderr (bypassing the test harness capture).

mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rand::Rng;
use rankdro::dataset::Split;
use rankdro::harness::{self, ExperimentConfig, Report};
use rankdro::metrics::{GroupStats, SelectionMetric};
use rankdro::nn::Mlp;
use rankdro::select::{
    concordance, cosine, euclidean, ndcg_concordance, rank_models, rank_vectors, CandidateModel, ConcordanceReport,
};
use rankdro::stats::group_tstat;
use rankdro::train::{dru_weight, group_dro_update, MethodSpec};

fn verdict(criterion: u32, pass: bool, detail: String) {
    let line = format!("criterion {criterion}: {} {detail}", if pass { "PASS" } else { "FAIL" });
    let _ = writeln!(std::io::stderr(), "{line}");
    assert!(pass, "{line}");
}

fn test_index() -> usize {
    Split::ALL.iter().position(|&s| s == Split::OodTest).unwrap()
}

struct Study {
    dir: PathBuf,
    report: Report,
    select: ConcordanceReport,
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    if dir.exists() {
        std::fs::remove_dir_all(&dir).unwrap();
    }
    dir
}

fn run(config: &str, out_name: &str, jobs: usize) -> Study {
    let mut cfg = ExperimentConfig::load(&workspace_root().join("configs").join(config)).unwrap();
    let dir = scratch(out_name);
    cfg.out = Some(dir.clone());
    cfg.jobs = jobs;
    let summary = harness::run_study(&cfg).unwrap();
    assert!(summary.failed.is_empty(), "{config}: {:?}", summary.failed);
    let (report, _) = harness::cmd_report(&dir, None, None).unwrap();
    let select = harness::cmd_select(&dir, None, &SelectionMetric::standard_set()).unwrap().mean;
    Study { dir, report, select }
}

fn setting3() -> &'static Study {
    static S: OnceLock<Study> = OnceLock::new();
    S.get_or_init(|| run("desk_setting3.json", "setting3", 1))
}

fn setting4() -> &'static Study {
    static S: OnceLock<Study> = OnceLock::new();
    S.get_or_init(|| run("desk_setting4.json", "setting4", 1))
}

fn jtt_study() -> &'static Study {
    static S: OnceLock<Study> = OnceLock::new();
    S.get_or_init(|| run("jtt_selection_setting3.json", "jtt_selection", 1))
}

fn test_summary(report: &Report, label: &str) -> (f64, f64) {
    let m = report.method(label).unwrap_or_else(|| panic!("{label} missing from report"));
    let s = &m.mean[test_index()];
    (s.worst, s.average)
}

#[test]
fn criterion_01_dru_weight() {
    let hand_r0 = 12f64.log2() / 2f64.log2();
    let hand_r3 = 12f64.log2() / 5f64.log2();
    let checks = [
        dru_weight(11, 10).unwrap() == 1.0,
        dru_weight(10, 10).unwrap() == 1.0,
        (dru_weight(0, 10).unwrap() - 3.584963).abs() < 1e-6 && (dru_weight(0, 10).unwrap() - hand_r0).abs() < 1e-9,
        (dru_weight(3, 10).unwrap() - 1.543959).abs() < 1e-6 && (dru_weight(3, 10).unwrap() - hand_r3).abs() < 1e-9,
    ];
    verdict(
        1,
        checks.iter().all(|&c| c),
        format!(
            "w(0,10)={:.9} w(3,10)={:.9} w(10,10)={} w(11,10)={}",
            dru_weight(0, 10).unwrap(),
            dru_weight(3, 10).unwrap(),
            dru_weight(10, 10).unwrap(),
            dru_weight(11, 10).unwrap()
        ),
    );
}

#[test]
fn criterion_02_gradients() {
    let mut rng = common::test_rng(2);
    let mut worst: f64 = 0.0;
    let nets = 25;
    for i in 0..nets {
        let mut dims = vec![rng.random_range(1..4)];
        for _ in 0..rng.random_range(1..3) {
            dims.push(rng.random_range(2..7));
        }
        dims.push(rng.random_range(2..4));
        let model = Mlp::new(&dims, 0.01, 0.0, i).unwrap();
        let n = rng.random_range(1..9);
        let batch = common::random_batch(&mut rng, n, dims[0], *dims.last().unwrap());
        worst = worst.max(common::max_grad_rel_error(&model, &batch, 1e-5));
    }
    verdict(2, worst < 1e-4, format!("{nets} networks, max relative error {worst:.2e}"));
}

#[test]
fn criterion_03_metric_oracles() {
    let mut rng = common::test_rng(3);
    let mut mismatches = 0;
    let instances = 100;
    for _ in 0..instances {
        let stats = common::random_stats(&mut rng, 20);
        let k = rng.random_range(1..=100);
        let expected = [
            (SelectionMetric::WorstGroup, common::brute_worst(&stats)),
            (SelectionMetric::Average, common::brute_average(&stats)),
            (SelectionMetric::Percentile(10.0), common::brute_percentile(&stats, 10)),
            (SelectionMetric::GroupDcg(10.0), common::brute_gdcg(&stats, 10)),
            (SelectionMetric::GroupDcg(50.0), common::brute_gdcg(&stats, 50)),
            (SelectionMetric::GroupDcg(k as f64), common::brute_gdcg(&stats, k)),
            (SelectionMetric::QuantileDcg(10), common::brute_qdcg(&stats, &(0..=10).collect::<Vec<_>>())),
            (SelectionMetric::QuantileDcg(50), common::brute_qdcg(&stats, &(0..=50).collect::<Vec<_>>())),
            (SelectionMetric::QuantileDcg(k as u32), common::brute_qdcg(&stats, &(0..=k).collect::<Vec<_>>())),
        ];
        for (metric, want) in expected {
            if metric.value(&stats).unwrap().to_bits() != want.to_bits() {
                mismatches += 1;
            }
        }
    }
    verdict(3, mismatches == 0, format!("{instances} instances, {mismatches} bit mismatches"));
}

#[test]
fn criterion_04_group_dro_simplex() {
    let mut rng = common::test_rng(4);
    let groups = 8;
    let mut q = vec![1.0 / groups as f64; groups];
    let (mut max_dev, mut min_q) = (0.0f64, f64::INFINITY);
    for _ in 0..10_000 {
        let mut present = Vec::new();
        for g in 0..groups {
            if rng.random_bool(0.5) {
                present.push((g, rng.random_range(0.0..5.0)));
            }
        }
        q = group_dro_update(&q, &present, rng.random_range(0.0..0.5)).unwrap();
        max_dev = max_dev.max((q.iter().sum::<f64>() - 1.0).abs());
        min_q = min_q.min(q.iter().cloned().fold(f64::INFINITY, f64::min));
    }
    let mut max_shift: f64 = 0.0;
    for _ in 0..100 {
        let loss = rng.random_range(0.0..5.0);
        let all: Vec<(usize, f64)> = (0..groups).map(|g| (g, loss)).collect();
        let next = group_dro_update(&q, &all, 0.01).unwrap();
        for (a, b) in q.iter().zip(&next) {
            max_shift = max_shift.max((a - b).abs() / a.max(f64::MIN_POSITIVE));
        }
    }
    verdict(
        4,
        max_dev < 1e-12 && min_q >= 0.0 && max_shift < 1e-14,
        format!("max |sum q - 1| = {max_dev:.1e}, min q = {min_q:.3e}, equal-loss relative shift {max_shift:.1e}"),
    );
}

fn cand(id: usize, val: &[f64], test: &[f64]) -> CandidateModel {
    let stats = |accs: &[f64]| -> Vec<GroupStats> {
        accs.iter()
            .enumerate()
            .map(|(g, &a)| GroupStats {
                group_id: g,
                n: 10,
                correct: (a * 10.0).round() as usize,
                mean_loss: 1.0 - a,
                accuracy: a,
            })
            .collect()
    };
    CandidateModel {
        model_id: id,
        spec: MethodSpec::erm(),
        val_stats: stats(val),
        test_stats: stats(test),
    }
}

#[test]
fn criterion_05_concordance_identities() {
    let same: Vec<CandidateModel> = (0..5).map(|i| cand(i, &[0.1 * i as f64 + 0.2], &[0.1 * i as f64 + 0.2])).collect();
    let rep = concordance(&same, &[SelectionMetric::WorstGroup]).unwrap();
    let row = &rep.rows[0];
    let identical = row.euclidean == 0.0 && (row.cosine - 1.0).abs() < 1e-12 && (row.ndcg - 1.0).abs() < 1e-12;

    let rev = [cand(0, &[0.9], &[0.1]), cand(1, &[0.5], &[0.5]), cand(2, &[0.1], &[0.9])];
    let val = rank_models(&rev, SelectionMetric::WorstGroup, Split::OodVal).unwrap();
    let test = rank_models(&rev, SelectionMetric::WorstGroup, Split::OodTest).unwrap();
    let (a, b) = rank_vectors(&val, &test).unwrap();
    let ed = euclidean(&a, &b).unwrap();
    let cs = cosine(&a, &b).unwrap();

    let pair = [cand(0, &[0.1], &[0.5]), cand(1, &[0.9], &[0.1])];
    let val = rank_models(&pair, SelectionMetric::WorstGroup, Split::OodVal).unwrap();
    let ndcg = ndcg_concordance(&val, &BTreeMap::from([(0, 0.5), (1, 0.1)])).unwrap();

    verdict(
        5,
        identical && (ed - 8f64.sqrt()).abs() < 1e-12 && (cs - 10.0 / 14.0).abs() < 1e-12 && (ndcg - 0.737).abs() < 1e-3,
        format!(
            "identical ({}, {}, {}), reversal ED {ed:.12} CS {cs:.12}, NDCG {ndcg:.4}",
            row.euclidean, row.cosine, row.ndcg
        ),
    );
}

#[test]
fn criterion_06_dru_beats_erm_on_worst_group() {
    let mut pass = true;
    let mut detail = Vec::new();
    for (name, study) in [("setting 3", setting3()), ("setting 4", setting4())] {
        let (erm_w, erm_a) = test_summary(&study.report, "ERM");
        let (dru_w, dru_a) = test_summary(&study.report, "qDRU+M");
        let ok = dru_w - erm_w >= 0.05 && dru_a >= erm_a - 0.03;
        pass &= ok;
        detail.push(format!(
            "{name}: worst qDRU+M {:.1} vs ERM {:.1}, average {:.1} vs {:.1}",
            100.0 * dru_w,
            100.0 * erm_w,
            100.0 * dru_a,
            100.0 * erm_a
        ));
    }
    verdict(6, pass, detail.join("; "));
}

#[test]
fn criterion_07_soft_vs_hard_minimax() {
    let report = &setting3().report;
    let (best_label, best) = ["qDRU+G", "qDRU+M", "gDRU+G", "gDRU+M"]
        .iter()
        .map(|l| (*l, test_summary(report, l).0))
        .fold(("", f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
    let (worst_g, _) = test_summary(report, "Worst+G");
    verdict(
        7,
        best >= worst_g,
        format!("best DRU {best_label} {:.1} vs Worst+G {:.1}", 100.0 * best, 100.0 * worst_g),
    );
}

#[test]
fn criterion_08_selection_concordance() {
    let study = jtt_study();
    let n = harness::load_records(&study.dir).unwrap().iter().filter(|r| r.seed == 1).count();
    let wg = study.select.row(SelectionMetric::WorstGroup).unwrap();
    let qd = study.select.row(SelectionMetric::QuantileDcg(10)).unwrap();
    verdict(
        8,
        n >= 8 && qd.ndcg >= wg.ndcg && wg.tie_fraction > qd.tie_fraction,
        format!(
            "{n} candidates, NDCG qdcg@10 {:.4} vs worst-group {:.4}, ties {:.3} vs {:.3}",
            qd.ndcg, wg.ndcg, wg.tie_fraction, qd.tie_fraction
        ),
    );
}

#[test]
fn criterion_09_tstat() {
    let hand = group_tstat(&[0.8, 0.6, 0.7]).unwrap().t.unwrap();
    let oracle = 0.7 / (0.1 / 3f64.sqrt());
    let report = &setting3().report;
    let t = |label: &str| report.method(label).unwrap().mean_t[test_index()].unwrap_or(f64::INFINITY);
    let (dru, erm) = (t("qDRU+M"), t("ERM"));
    verdict(
        9,
        (hand - 12.124).abs() < 1e-3 && (hand - oracle).abs() < 1e-12 && dru >= erm,
        format!("hand t {hand:.4}, setting-3 test t qDRU+M {dru:.2} vs ERM {erm:.2}"),
    );
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn criterion_10_determinism() {
    let mut detail = Vec::new();
    let mut pass = true;
    for (config, first) in [("desk_setting3.json", setting3()), ("desk_setting4.json", setting4())] {
        let again = run(config, &format!("{}-rerun", config.trim_end_matches(".json")), 2);
        let (a, b) = (tree(&first.dir), tree(&again.dir));
        let differing: Vec<&PathBuf> = a.keys().chain(b.keys()).filter(|k| a.get(*k) != b.get(*k)).collect();
        pass &= differing.is_empty() && !a.is_empty();
        detail.push(format!("{config}: {} files, {} differ", a.len(), differing.len()));
    }
    verdict(10, pass, detail.join("; "));
}
