use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rankdro::harness::{self, DatasetSource, ExperimentConfig, MethodGrid};
use rankdro::metrics::SelectionMetric;
use rankdro::train::{Method, Scope};
use rankdro::{Error, Result};

/// Ranking-based group-robust training and model selection.
#[derive(Parser)]
#[command(name = "rr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the train / ood_val / ood_test splits of a synthetic setting.
    Gen {
        #[arg(long)]
        setting: u32,
        #[arg(long = "train", default_value_t = 200)]
        n_train: usize,
        #[arg(long = "val", default_value_t = 100)]
        n_val: usize,
        #[arg(long = "test", default_value_t = 100)]
        n_test: usize,
        /// Samples per group.
        #[arg(long, default_value_t = 75)]
        q: usize,
        #[arg(long, env = "RR_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a single method with fixed hyperparameters.
    Train(TrainArgs),
    /// Train every point of a config's hyperparameter grids.
    Grid(GridArgs),
    /// Concordance of validation metrics with test worst-group ranking.
    Select {
        #[arg(long)]
        out: PathBuf,
        /// Only use runs of this method label (e.g. JTT, qDRU+M).
        #[arg(long)]
        method: Option<String>,
    },
    /// Render accuracy and t-statistic tables for a study directory.
    Report {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        bootstrap_resamples: Option<usize>,
        #[arg(long)]
        bootstrap_seed: Option<u64>,
    },
}

#[derive(Args)]
struct Common {
    /// JSON study config; flags below override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    selection_metric: Option<SelectionMetric>,
    /// Directory holding train.csv, ood_val.csv and ood_test.csv.
    #[arg(long, conflicts_with = "setting")]
    data: Option<PathBuf>,
    /// Synthetic setting generated per seed at desk scale.
    #[arg(long)]
    setting: Option<u32>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    scope: Option<Scope>,
    #[arg(long)]
    cutoff: Option<u32>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    first_stage_epochs: Option<usize>,
    #[arg(long)]
    dro_step: Option<f64>,
    #[arg(long, env = "RR_SEED")]
    seed: Option<u64>,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated seeds overriding the config's list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

fn base_config(common: &Common) -> Result<Option<ExperimentConfig>> {
    common.config.as_deref().map(ExperimentConfig::load).transpose()
}

fn apply_common(cfg: &mut ExperimentConfig, common: &Common) -> Result<()> {
    if let Some(out) = &common.out {
        cfg.out = Some(out.clone());
    }
    if let Some(j) = common.jobs {
        cfg.jobs = j;
    }
    if let Some(e) = common.epochs {
        cfg.total_epochs = e;
    }
    if let Some(m) = common.selection_metric {
        cfg.selection_metric = m;
    }
    if let Some(dir) = &common.data {
        let [train, val, test] = harness::split_paths(dir);
        cfg.dataset = DatasetSource::Files { train, val, test };
    }
    if let Some(s) = common.setting {
        cfg.dataset = DatasetSource::desk_scale(s);
    }
    cfg.out_dir()?;
    Ok(())
}

fn train_config(args: &TrainArgs) -> Result<ExperimentConfig> {
    let mut cfg = match base_config(&args.common)? {
        Some(c) => c,
        None => {
            if args.common.data.is_none() && args.common.setting.is_none() {
                return Err(Error::config("train: give --config, --data or --setting"));
            }
            ExperimentConfig::new(DatasetSource::desk_scale(1), Vec::new(), vec![0])
        }
    };
    apply_common(&mut cfg, &args.common)?;
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
    }
    if args.method.is_some() || cfg.methods.len() != 1 {
        let method = args
            .method
            .ok_or_else(|| Error::config("train: --method is required unless the config lists exactly one method"))?;
        cfg.methods = vec![MethodGrid::single(method, args.scope)];
    }
    let grid = &mut cfg.methods[0];
    if let Some(s) = args.scope {
        grid.scope = Some(s);
    }
    if let Some(c) = args.cutoff {
        grid.cutoff = vec![c];
    }
    if let Some(l) = args.lambda {
        grid.lambda = vec![l];
    }
    if let Some(t) = args.first_stage_epochs {
        grid.first_stage_epochs = vec![t];
    }
    if let Some(e) = args.dro_step {
        grid.dro_step = vec![e];
    }
    if cfg.expand()?.len() != 1 {
        return Err(Error::config("train: hyperparameters must select exactly one grid point; use `rr grid`"));
    }
    Ok(cfg)
}

fn run_study(cfg: &ExperimentConfig, strict: bool) -> Result<()> {
    let summary = harness::run_study(cfg)?;
    eprintln!(
        "{} trained, {} already complete, {} failed",
        summary.trained,
        summary.skipped,
        summary.failed.len()
    );
    for f in &summary.failed {
        eprintln!("  failed {} seed {}: {}", f.slug, f.seed, f.error);
    }
    for w in &summary.winners {
        let r = summary.records.iter().find(|r| r.slug == w.slug && r.seed == w.seed).expect("winner record");
        println!(
            "{:<10} seed {:<4} {:<22} test {}",
            w.label,
            w.seed,
            w.slug,
            harness::cell(&r.ood_test.summary, [false; 3], false)
        );
    }
    match summary.failed.first() {
        Some(f) if strict || summary.records.is_empty() => {
            // single-run commands surface the failure's own exit status
            Err(match f.exit_code {
                2 => Error::config(f.error.clone()),
                4 => Error::Numeric(f.error.clone()),
                _ => Error::input(f.error.clone()),
            })
        }
        _ => Ok(()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen {
            setting,
            n_train,
            n_val,
            n_test,
            q,
            seed,
            out,
        } => {
            for p in harness::cmd_gen(setting, [n_train, n_val, n_test], q, seed, &out)? {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Train(args) => run_study(&train_config(&args)?, true),
        Command::Grid(args) => {
            let mut cfg = base_config(&args.common)?.ok_or_else(|| Error::config("grid: --config is required"))?;
            apply_common(&mut cfg, &args.common)?;
            if let Some(seeds) = args.seeds {
                cfg.seeds = seeds;
            }
            run_study(&cfg, false)
        }
        Command::Select { out, method } => {
            let study = harness::cmd_select(&out, method.as_deref(), &SelectionMetric::standard_set())?;
            print!("{}", study.mean.to_markdown());
            Ok(())
        }
        Command::Report {
            out,
            bootstrap_resamples,
            bootstrap_seed,
        } => {
            let (_, dir) = harness::cmd_report(&out, bootstrap_resamples, bootstrap_seed)?;
            let text = std::fs::read_to_string(dir.join("report.md")).map_err(|e| Error::io(dir.join("report.md"), e))?;
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
