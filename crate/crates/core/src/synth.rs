//! Synthetic grouped classification data with controlled group shift.
//!
//! Each sample is a shared Gaussian signal, plus (for idiosyncratic groups) a
//! group-level signal drawn from one of several Gaussians and scaled by a
//! per-group strength. Labels are `1[sin(Σ x) + ε > 0]`.
//!
//! Every random quantity is drawn from its own counter-based stream keyed by
//! `(seed, purpose, split, group_id)`, so a group's samples do not depend on
//! how many other groups are generated or in which order.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{GroupedDataset, Split, SyntheticMeta};
use crate::error::{Error, Result};
use crate::rng::{self, Purpose, StreamRng, GENERATOR_VERSION};

pub const MAX_TRUNCATION_TRIES: usize = 10_000;

/// Isotropic Gaussian `N(mean, variance · I)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: Vec<f64>,
    pub variance: f64,
}

impl Gaussian {
    fn sample_into(&self, rng: &mut StreamRng, out: &mut [f64], scale: f64) {
        let std = self.variance.sqrt();
        for (o, m) in out.iter_mut().zip(&self.mean) {
            let z: f64 = rng.sample(StandardNormal);
            *o += scale * (m + std * z);
        }
    }
}

/// Normal distribution truncated to `[lower, upper]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncatedNormal {
    pub mean: f64,
    pub variance: f64,
    pub lower: f64,
    pub upper: f64,
}

impl TruncatedNormal {
    /// Rejection sampling from the untruncated normal.
    pub fn sample(&self, rng: &mut StreamRng) -> Result<f64> {
        let std = self.variance.sqrt();
        for _ in 0..MAX_TRUNCATION_TRIES {
            let z: f64 = rng.sample(StandardNormal);
            let v = self.mean + std * z;
            if v >= self.lower && v <= self.upper {
                return Ok(v);
            }
        }
        Err(Error::Numeric(format!(
            "truncated normal rejected {MAX_TRUNCATION_TRIES} draws in a row"
        )))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSetting {
    pub setting_id: u32,
    pub samples_per_group: usize,
    /// Fraction of groups with an idiosyncratic signal, indexed by [`Split::index`].
    pub idiosyncratic_fraction: [f64; 3],
    pub signals: Vec<Gaussian>,
    /// Unnormalized signal priors, indexed by [`Split::index`].
    pub priors: [Vec<f64>; 3],
    pub shared: Gaussian,
    pub strength: TruncatedNormal,
    pub label_noise_variance: f64,
}

impl SyntheticSetting {
    /// One of the four benchmark shift settings (1..=4).
    pub fn preset(setting_id: u32) -> Result<Self> {
        let ones = vec![1.0, 1.0, 1.0, 1.0];
        let test_skew = vec![1.0, 5.0, 1.0, 5.0];
        let (priors, fractions) = match setting_id {
            1 => ([ones.clone(), ones, test_skew], [0.8, 0.8, 0.8]),
            2 => ([ones.clone(), ones, test_skew], [0.2, 0.2, 0.8]),
            3 => ([vec![0.0, 1.0, 1.0, 1.0], ones, test_skew], [0.2, 0.2, 0.8]),
            4 => (
                [vec![1.0, 1.0, 0.0, 0.0], vec![1.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, 1.0]],
                [0.2, 0.2, 0.8],
            ),
            other => return Err(Error::config(format!("unknown synthetic setting {other}; expected 1-4"))),
        };
        let signal = |a: f64, b: f64| Gaussian {
            mean: vec![a, b],
            variance: 1.0,
        };
        Ok(SyntheticSetting {
            setting_id,
            samples_per_group: 75,
            idiosyncratic_fraction: fractions,
            signals: vec![signal(0.25, 0.25), signal(0.25, -0.25), signal(-0.25, 0.25), signal(-0.25, -0.25)],
            priors,
            shared: Gaussian {
                mean: vec![0.0, 0.0],
                variance: 4.0,
            },
            strength: TruncatedNormal {
                mean: 0.75,
                variance: 0.25,
                lower: 0.0,
                upper: 1.0,
            },
            label_noise_variance: 0.25,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.shared.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.feature_dim();
        if dim == 0 || self.samples_per_group == 0 {
            return Err(Error::config("feature dim and samples per group must be positive"));
        }
        if self.signals.iter().any(|s| s.mean.len() != dim) {
            return Err(Error::config("idiosyncratic signal dimension differs from shared signal"));
        }
        let variances = self
            .signals
            .iter()
            .map(|s| s.variance)
            .chain([self.shared.variance, self.strength.variance, self.label_noise_variance]);
        if variances.into_iter().any(|v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::config("variances must be finite and non-negative"));
        }
        if !(self.strength.lower < self.strength.upper) {
            return Err(Error::config("truncation bounds need lower < upper"));
        }
        for split in Split::ALL {
            let u = self.idiosyncratic_fraction[split.index()];
            if !(0.0..=1.0).contains(&u) {
                return Err(Error::config(format!("U for {split} is {u}, outside [0, 1]")));
            }
            let prior = &self.priors[split.index()];
            if prior.len() != self.signals.len() {
                return Err(Error::config(format!(
                    "{split} prior has {} entries for {} signals",
                    prior.len(),
                    self.signals.len()
                )));
            }
            if prior.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
                return Err(Error::config(format!("{split} prior has a negative entry")));
            }
            if u > 0.0 && !prior.iter().any(|p| *p > 0.0) {
                return Err(Error::config(format!("{split} prior is all zero while U = {u}")));
            }
        }
        Ok(())
    }
}

/// Label rule: 1 iff `sin(Σ x) + noise` is strictly positive.
pub fn label_for(features: &[f64], noise: f64) -> usize {
    let s: f64 = features.iter().sum();
    usize::from(s.sin() + noise > 0.0)
}

/// One generated group.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupDraw {
    pub strength: f64,
    /// Index into the setting's signals, if the group is idiosyncratic.
    pub signal: Option<usize>,
    pub samples: Vec<(Vec<f64>, usize)>,
}

fn choose_signal(prior: &[f64], rng: &mut StreamRng) -> usize {
    let total: f64 = prior.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, p) in prior.iter().enumerate() {
        acc += p;
        if u < acc && *p > 0.0 {
            return i;
        }
    }
    // u landed on the rounding edge: take the last signal with mass
    prior.iter().rposition(|p| *p > 0.0).expect("validated non-zero prior")
}

/// Draw the samples of `group_id` in `split`.
pub fn sample_group(setting: &SyntheticSetting, split: Split, group_id: usize, seed: u64) -> Result<GroupDraw> {
    let s = split.index() as u64;
    let g = group_id as u64;
    let stream = |purpose| rng::stream(seed, purpose, s, g);

    let strength = setting.strength.sample(&mut stream(Purpose::Strength))?;
    let has_signal = stream(Purpose::HasIdiosyncratic).random::<f64>() < setting.idiosyncratic_fraction[split.index()];
    let signal = if has_signal {
        Some(choose_signal(&setting.priors[split.index()], &mut stream(Purpose::SignalChoice)))
    } else {
        None
    };

    let mut shared_rng = stream(Purpose::Shared);
    let mut idio_rng = stream(Purpose::Idiosyncratic);
    let mut noise_rng = stream(Purpose::LabelNoise);
    let noise_std = setting.label_noise_variance.sqrt();
    let dim = setting.feature_dim();
    let samples = (0..setting.samples_per_group)
        .map(|_| {
            let mut x = vec![0.0; dim];
            setting.shared.sample_into(&mut shared_rng, &mut x, 1.0);
            if let Some(w) = signal {
                setting.signals[w].sample_into(&mut idio_rng, &mut x, strength);
            }
            let z: f64 = noise_rng.sample(StandardNormal);
            let y = label_for(&x, noise_std * z);
            (x, y)
        })
        .collect();
    Ok(GroupDraw {
        strength,
        signal,
        samples,
    })
}

/// Generate one split of a preset setting.
pub fn generate_split(setting_id: u32, split: Split, n_groups: usize, seed: u64) -> Result<GroupedDataset> {
    generate_split_with(&SyntheticSetting::preset(setting_id)?, split, n_groups, seed)
}

pub fn generate_split_with(
    setting: &SyntheticSetting,
    split: Split,
    n_groups: usize,
    seed: u64,
) -> Result<GroupedDataset> {
    setting.validate()?;
    if n_groups == 0 {
        return Err(Error::config("n_groups must be at least 1"));
    }
    let groups: Vec<GroupDraw> = (0..n_groups)
        .into_par_iter()
        .map(|g| sample_group(setting, split, g, seed))
        .collect::<Result<_>>()?;

    let dim = setting.feature_dim();
    let n = n_groups * setting.samples_per_group;
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    let mut group_ids = Vec::with_capacity(n);
    let mut signal_counts = vec![0usize; setting.signals.len()];
    for (g, draw) in groups.into_iter().enumerate() {
        if let Some(w) = draw.signal {
            signal_counts[w] += 1;
        }
        for (x, y) in draw.samples {
            features.extend(x);
            labels.push(y);
            group_ids.push(g);
        }
    }
    let features = Array2::from_shape_vec((n, dim), features).expect("rows have feature_dim entries");
    let meta = SyntheticMeta {
        setting_id: setting.setting_id,
        seed,
        samples_per_group: setting.samples_per_group,
        idiosyncratic_fraction: setting.idiosyncratic_fraction[split.index()],
        priors: setting.priors[split.index()].clone(),
        generator_version: GENERATOR_VERSION.to_string(),
        signal_counts,
    };
    GroupedDataset::new(split, features, labels, group_ids, Some(meta))
}
