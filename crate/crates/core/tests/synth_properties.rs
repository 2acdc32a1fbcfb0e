mod common;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rankdro::dataset::{read_dataset, write_dataset, Split};
use rankdro::synth::{generate_split, generate_split_with, SyntheticSetting};

fn shared_only(noise_variance: f64) -> SyntheticSetting {
    let mut s = SyntheticSetting::preset(1).unwrap();
    s.idiosyncratic_fraction = [0.0; 3];
    s.label_noise_variance = noise_variance;
    s
}

#[test]
fn shared_signal_moments() {
    let data = generate_split_with(&shared_only(0.25), Split::Train, 700, 17).unwrap();
    assert!(data.len() >= 50_000);
    let x = data.features();
    for d in 0..2 {
        let col = x.column(d);
        let n = col.len() as f64;
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.1, "dim {d} mean {mean}");
        assert!((var - 4.0).abs() < 0.3, "dim {d} var {var}");
    }
}

/// Two-sample Kolmogorov-Smirnov statistic.
fn ks_statistic(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

#[test]
fn groups_are_exchangeable_without_idiosyncratic_signal() {
    let data = generate_split_with(&shared_only(0.25), Split::Train, 400, 3).unwrap();
    let half = data.group_range(200).start;
    let pooled = |rows: std::ops::Range<usize>| rows.flat_map(|r| data.features().row(r).to_vec()).collect::<Vec<f64>>();
    let a = pooled(0..half);
    let b = pooled(half..data.len());
    let (n, m) = (a.len() as f64, b.len() as f64);
    let critical = 1.628 * ((n + m) / (n * m)).sqrt();
    let d = ks_statistic(a, b);
    assert!(d < critical, "KS {d} >= {critical}");
}

#[test]
fn noiseless_label_balance_matches_monte_carlo() {
    let data = generate_split_with(&shared_only(0.0), Split::Train, 300, 9).unwrap();
    let frac = data.labels().iter().filter(|&&l| l == 1).count() as f64 / data.len() as f64;
    // sum of two independent N(0, 4) coordinates is N(0, 8)
    let sum = Normal::new(0.0, 8f64.sqrt()).unwrap();
    let mut rng = common::test_rng(2024);
    let trials = 200_000;
    let hits = (0..trials).filter(|_| sum.sample(&mut rng).sin() > 0.0).count();
    let oracle = hits as f64 / trials as f64;
    assert!((frac - oracle).abs() < 0.02, "{frac} vs {oracle}");
}

#[test]
fn regenerated_files_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.csv", "b.csv"] {
        let ds = generate_split(3, Split::OodTest, 12, 41).unwrap();
        write_dataset(&ds, &dir.path().join(name)).unwrap();
    }
    let read = |n: &str| std::fs::read(dir.path().join(n)).unwrap();
    assert_eq!(read("a.csv"), read("b.csv"));
    assert_eq!(read("a.meta.json"), read("b.meta.json"));
    let back = read_dataset(&dir.path().join("a.csv")).unwrap();
    assert_eq!(back, generate_split(3, Split::OodTest, 12, 41).unwrap());
}

#[test]
fn setting_four_test_split_uses_only_held_out_signals() {
    let ds = generate_split(4, Split::OodTest, 300, 5).unwrap();
    let counts = &ds.meta().synthetic.as_ref().unwrap().signal_counts;
    assert_eq!(&counts[..2], &[0, 0]);
    assert!(counts[2] > 0 && counts[3] > 0);
    let train = generate_split(4, Split::Train, 300, 5).unwrap();
    let counts = &train.meta().synthetic.as_ref().unwrap().signal_counts;
    assert_eq!(&counts[2..], &[0, 0]);
}

#[test]
fn group_data_is_independent_of_other_groups() {
    let mut rng = common::test_rng(1);
    let seed: u64 = rng.random();
    let small = generate_split(2, Split::OodVal, 5, seed).unwrap();
    let large = generate_split(2, Split::OodVal, 50, seed).unwrap();
    let r = small.group_range(4);
    assert_eq!(small.features().slice(ndarray::s![r.clone(), ..]), large.features().slice(ndarray::s![r.clone(), ..]));
    assert_eq!(&small.labels()[r.clone()], &large.labels()[r]);
}
