use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::SelectionMetric;
use crate::stats::DEFAULT_RESAMPLES;
use crate::train::{Method, MethodSpec, Scope, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic {
        setting: u32,
        n_train: usize,
        n_val: usize,
        n_test: usize,
        #[serde(default = "default_q")]
        q: usize,
        /// Fixed data seed; when absent each run seed generates its own data.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Files {
        train: PathBuf,
        val: PathBuf,
        test: PathBuf,
    },
}

fn default_q() -> usize {
    75
}

impl DatasetSource {
    pub fn desk_scale(setting: u32) -> Self {
        DatasetSource::Synthetic {
            setting,
            n_train: 200,
            n_val: 100,
            n_test: 100,
            q: default_q(),
            seed: None,
        }
    }
}

/// One method with lists of hyperparameter values; expands to the product of
/// the axes the method uses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodGrid {
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scope: Option<Scope>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cutoff: Vec<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lambda: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub first_stage_epochs: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dro_step: Vec<f64>,
}

impl MethodGrid {
    pub fn single(method: Method, scope: Option<Scope>) -> Self {
        MethodGrid {
            method,
            scope,
            cutoff: Vec::new(),
            lambda: Vec::new(),
            first_stage_epochs: Vec::new(),
            dro_step: Vec::new(),
        }
    }

    pub fn dru(quantile: bool, scope: Scope, cutoff: &[u32]) -> Self {
        MethodGrid {
            cutoff: cutoff.to_vec(),
            ..MethodGrid::single(if quantile { Method::QDru } else { Method::GDru }, Some(scope))
        }
    }

    pub fn worst(scope: Scope, lambda: &[f64]) -> Self {
        MethodGrid {
            lambda: lambda.to_vec(),
            ..MethodGrid::single(Method::Worst, Some(scope))
        }
    }

    pub fn jtt(first_stage_epochs: &[usize], lambda: &[f64]) -> Self {
        MethodGrid {
            first_stage_epochs: first_stage_epochs.to_vec(),
            lambda: lambda.to_vec(),
            ..MethodGrid::single(Method::Jtt, Some(Scope::M))
        }
    }

    fn axis<T: Clone>(&self, name: &str, values: &[T], default: Option<T>) -> Result<Vec<T>> {
        match (values.is_empty(), default) {
            (false, _) => Ok(values.to_vec()),
            (true, Some(d)) => Ok(vec![d]),
            (true, None) => Err(Error::config(format!(
                "methods[{}].{name}: grid must list at least one value",
                self.method.name()
            ))),
        }
    }

    fn unused(&self, name: &str, present: bool) -> Result<()> {
        if present {
            return Err(Error::config(format!("methods[{}].{name} does not apply to this method", self.method.name())));
        }
        Ok(())
    }

    /// Grid points in axis order.
    pub fn expand(&self, base: &MethodSpec) -> Result<Vec<MethodSpec>> {
        let scope = match self.method {
            // misclassified-only is the only scope these methods support
            Method::Const | Method::Jtt => self.scope.or(Some(Scope::M)),
            _ => self.scope,
        };
        let spec = MethodSpec {
            method: self.method,
            scope,
            ..base.clone()
        };
        let specs = match self.method {
            Method::Erm => {
                self.unused("cutoff", !self.cutoff.is_empty())?;
                self.unused("lambda", !self.lambda.is_empty())?;
                vec![spec]
            }
            Method::QDru | Method::GDru => {
                self.unused("lambda", !self.lambda.is_empty())?;
                self.axis("cutoff", &self.cutoff, None)?
                    .into_iter()
                    .map(|cutoff| MethodSpec { cutoff, ..spec.clone() })
                    .collect()
            }
            Method::Worst | Method::Const => {
                self.unused("cutoff", !self.cutoff.is_empty())?;
                self.axis("lambda", &self.lambda, None)?
                    .into_iter()
                    .map(|lambda| MethodSpec { lambda, ..spec.clone() })
                    .collect()
            }
            Method::Jtt => {
                let mut out = Vec::new();
                for t in self.axis("first_stage_epochs", &self.first_stage_epochs, None)? {
                    for &lambda in &self.axis("lambda", &self.lambda, None)? {
                        out.push(MethodSpec {
                            first_stage_epochs: t,
                            lambda,
                            ..spec.clone()
                        });
                    }
                }
                out
            }
            Method::GroupDro => self
                .axis("dro_step", &self.dro_step, Some(base.dro_step))?
                .into_iter()
                .map(|dro_step| MethodSpec { dro_step, ..spec.clone() })
                .collect(),
        };
        for s in &specs {
            s.validate()?;
        }
        Ok(specs)
    }
}

fn default_selection() -> SelectionMetric {
    SelectionMetric::QuantileDcg(10)
}

fn default_epochs() -> usize {
    30
}

fn default_jobs() -> usize {
    1
}

fn default_resamples() -> usize {
    DEFAULT_RESAMPLES
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub methods: Vec<MethodGrid>,
    #[serde(default = "default_selection")]
    pub selection_metric: SelectionMetric,
    pub seeds: Vec<u64>,
    #[serde(default = "default_epochs")]
    pub total_epochs: usize,
    #[serde(default)]
    pub model: TrainConfig,
    /// Output directory; not part of the stored study config.
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
    #[serde(default = "default_jobs", skip_serializing)]
    pub jobs: usize,
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
    #[serde(default)]
    pub bootstrap_seed: u64,
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetSource, methods: Vec<MethodGrid>, seeds: Vec<u64>) -> Self {
        ExperimentConfig {
            dataset,
            methods,
            selection_metric: default_selection(),
            seeds,
            total_epochs: default_epochs(),
            model: TrainConfig::default(),
            out: None,
            jobs: default_jobs(),
            bootstrap_resamples: default_resamples(),
            bootstrap_seed: 0,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn out_dir(&self) -> Result<&Path> {
        self.out.as_deref().ok_or_else(|| Error::config("out: no output directory given"))
    }

    pub fn base_spec(&self) -> MethodSpec {
        MethodSpec::erm()
            .with_epochs(self.total_epochs)
            .with_selection(self.selection_metric)
    }

    /// Every grid point, in config order, with duplicate points rejected.
    pub fn expand(&self) -> Result<Vec<MethodSpec>> {
        let base = self.base_spec();
        let mut specs = Vec::new();
        for grid in &self.methods {
            for spec in grid.expand(&base)? {
                if specs.iter().any(|s: &MethodSpec| s.slug() == spec.slug()) {
                    return Err(Error::config(format!("methods: grid point {} listed twice", spec.slug())));
                }
                specs.push(spec);
            }
        }
        Ok(specs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::config("methods: at least one method is required"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds: at least one seed is required"));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(Error::config("seeds: duplicate seed"));
        }
        if self.jobs == 0 {
            return Err(Error::config("jobs must be at least 1"));
        }
        if self.bootstrap_resamples < 100 {
            return Err(Error::config("bootstrap_resamples must be at least 100"));
        }
        if let DatasetSource::Synthetic {
            setting,
            n_train,
            n_val,
            n_test,
            q,
            ..
        } = &self.dataset
        {
            crate::synth::SyntheticSetting::preset(*setting)?;
            if [*n_train, *n_val, *n_test, *q].contains(&0) {
                return Err(Error::config("dataset: group counts and q must be positive"));
            }
        }
        self.model.validate()?;
        self.expand().map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dru_grid_expands_to_four() {
        let cfg = ExperimentConfig::new(
            DatasetSource::desk_scale(3),
            vec![MethodGrid::dru(true, Scope::M, &[10, 20, 50, 100])],
            vec![1],
        );
        let specs = cfg.expand().unwrap();
        assert_eq!(specs.len(), 4);
        assert_eq!(specs[2].cutoff, 50);
        assert!(specs.iter().all(|s| s.total_epochs == 30));
    }

    #[test]
    fn jtt_grid_is_a_product() {
        let g = MethodGrid::jtt(&[1, 2, 3, 5], &[2.0, 3.0, 5.0, 10.0]);
        assert_eq!(g.expand(&MethodSpec::erm()).unwrap().len(), 16);
    }

    #[test]
    fn empty_axis_names_the_field() {
        let g = MethodGrid::dru(true, Scope::M, &[]);
        let err = g.expand(&MethodSpec::erm()).unwrap_err().to_string();
        assert!(err.contains("cutoff"), "{err}");
    }

    #[test]
    fn config_json_round_trip() {
        let text = r#"{
            "dataset": {"kind": "synthetic", "setting": 4, "n_train": 20, "n_val": 10, "n_test": 10},
            "methods": [{"method": "erm"}, {"method": "qdru", "scope": "m", "cutoff": [10, 20]}],
            "seeds": [1, 2],
            "total_epochs": 3
        }"#;
        let cfg: ExperimentConfig = serde_json::from_str(text).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.expand().unwrap().len(), 3);
        assert_eq!(cfg.selection_metric, SelectionMetric::QuantileDcg(10));
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = ExperimentConfig::new(DatasetSource::desk_scale(9), vec![MethodGrid::single(Method::Erm, None)], vec![1]);
        assert!(cfg.validate().is_err());
        cfg.dataset = DatasetSource::desk_scale(1);
        cfg.validate().unwrap();
        cfg.seeds = vec![1, 1];
        assert!(cfg.validate().is_err());
        cfg.seeds = vec![1];
        cfg.methods.push(MethodGrid::single(Method::Erm, None));
        assert!(cfg.validate().is_err());
        let bad: std::result::Result<ExperimentConfig, _> =
            serde_json::from_str(r#"{"dataset": {"kind": "synthetic", "setting": 1, "n_train": 1, "n_val": 1, "n_test": 1}, "methods": [], "seeds": [1], "bogus": 1}"#);
        assert!(bad.is_err());
    }
}
