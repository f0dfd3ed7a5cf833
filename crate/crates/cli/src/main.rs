use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use fedcache::bounds::{max_rademacher_over_cover, write_bound_csv, ModelClass};
use fedcache::data::write_datasets_csv;
use fedcache::eval::{load_datasets, write_metrics_csv, Algorithm, DataSource};
use fedcache::{
    build_cover_for, coverage_trial, evaluate_bound, run_dmtfl, run_experiment, CoverageConfig, ExperimentConfig,
};

#[derive(Parser)]
#[command(name = "fedcache", version, about = "Federated VR tile caching experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (stdout when absent and the config names none).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep and write one metrics row per point.
    Run { config: PathBuf },
    /// Write the synthetic datasets of a config as CSV.
    Gen { config: PathBuf },
    /// Train DMTFL once and report every term of the generalization bound.
    Bound {
        config: PathBuf,
        /// Cache size in tiles (default: first entry of the sweep).
        #[arg(long)]
        cache_size: Option<usize>,
        /// Rademacher sign draws.
        #[arg(long, default_value_t = 20)]
        draws: usize,
        /// Random candidates approximating the model class.
        #[arg(long, default_value_t = 64)]
        class_size: usize,
    },
    /// Monte-Carlo check of how often the bound holds.
    CoverTrial {
        #[arg(long, default_value_t = 200)]
        trials: usize,
        /// Training windows per station and trial.
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
    },
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_path(path)?;
    if let Some(s) = seed {
        cfg.dmtfl.seed = s;
        if let DataSource::Synthetic(g) = &mut cfg.data {
            g.seed = s;
        }
    }
    Ok(cfg)
}

fn open_out(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run(config: &Path, common: &Common) -> Result<()> {
    let cfg = load_config(config, common.seed)?;
    let rows = run_experiment(&cfg)?;
    let out = common.out.clone().or_else(|| cfg.experiment.output.clone());
    write_metrics_csv(&rows, &cfg, open_out(out.as_deref())?)?;
    eprintln!("{:<10} {:>5} {:>8} {:>8}", "algorithm", "C", "avg_hit", "min_hit");
    for &alg in &cfg.experiment.algorithms {
        for &c in &cfg.experiment.cache_sizes {
            let pts: Vec<_> = rows
                .iter()
                .filter(|r| r.algorithm == alg && r.cache_size == c)
                .collect();
            let n = pts.len() as f64;
            let avg = pts.iter().map(|r| r.avg_cache_hit).sum::<f64>() / n;
            let min = pts.iter().map(|r| r.min_per_bs_hit).sum::<f64>() / n;
            eprintln!("{:<10} {:>5} {:>8.4} {:>8.4}", alg.name(), c, avg, min);
        }
    }
    Ok(())
}

fn gen(config: &Path, common: &Common) -> Result<()> {
    let cfg = load_config(config, common.seed)?;
    let DataSource::Synthetic(g) = &cfg.data else {
        bail!("gen needs a synthetic data source");
    };
    let data = load_datasets(&cfg.data, g.seed)?;
    write_datasets_csv(&data, open_out(common.out.as_deref())?)?;
    Ok(())
}

fn bound(config: &Path, cache_size: Option<usize>, draws: usize, class_size: usize, common: &Common) -> Result<()> {
    let cfg = load_config(config, common.seed)?;
    if !cfg.experiment.algorithms.contains(&Algorithm::Dmtfl) {
        eprintln!("note: bound always trains DMTFL");
    }
    let seed = match &cfg.data {
        DataSource::Synthetic(g) => g.seed,
        DataSource::Traces { .. } => cfg.dmtfl.seed,
    };
    let data = load_datasets(&cfg.data, seed)?;
    let train = data
        .iter()
        .map(|d| d.split(cfg.experiment.train_fraction).map(|(a, _)| a))
        .collect::<fedcache::Result<Vec<_>>>()?;
    let mut hp = cfg.dmtfl.clone();
    hp.cache_budget = cache_size.unwrap_or(cfg.experiment.cache_sizes[0]) as f64;
    hp.validate_for(train.len(), train[0].num_tiles())?;
    let out = run_dmtfl(&train, &hp)?;
    let cover = build_cover_for::<f64>(&hp.mixture_set, train.len(), hp.eps_cover)?;
    let class = ModelClass::sample(train.len(), train[0].num_tiles(), hp.cache_budget, class_size, hp.seed)?
        .with_candidate(&out.models)?;
    let (rad, _) = max_rademacher_over_cover(&train, &cover, &class, &hp.loss_spec(), draws, hp.seed)?;
    let report = evaluate_bound(
        &out.models,
        &out.weights,
        &out.alpha,
        &train,
        &out.discrepancy,
        &hp,
        rad.mean,
    )?;
    eprintln!(
        "theta_hat {:.4}  2R {:.4} (se {:.4})  H*P {:.4}  HBe {:.4}  total {:.4}",
        report.theta_hat,
        2.0 * report.rademacher,
        rad.std_err,
        report.penalty,
        report.cover_term,
        report.total
    );
    write_bound_csv(&[report], open_out(common.out.as_deref())?)?;
    Ok(())
}

fn cover_trial(trials: usize, samples: usize, delta: f64, common: &Common) -> Result<()> {
    let mut cfg = CoverageConfig {
        trials,
        ..CoverageConfig::default()
    };
    cfg.generator.samples_per_bs = samples;
    cfg.hp.delta = delta;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let report = coverage_trial(&cfg)?;
    let mut out = open_out(common.out.as_deref())?;
    writeln!(out, "trial,true_theta,theta_hat,total")?;
    for (t, r) in report.trials.iter().enumerate() {
        writeln!(
            out,
            "{t},{:?},{:?},{:?}",
            r.true_theta, r.report.theta_hat, r.report.total
        )?;
    }
    out.flush()?;
    eprintln!(
        "violation fraction {:.4}; with slack zeroed {:.4}",
        report.violation_fraction(),
        report.mutated_violation_fraction()
    );
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Some(n) = cli.common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    }
    let result = match &cli.command {
        Command::Run { config } => run(config, &cli.common),
        Command::Gen { config } => gen(config, &cli.common),
        Command::Bound {
            config,
            cache_size,
            draws,
            class_size,
        } => bound(config, *cache_size, *draws, *class_size, &cli.common),
        Command::CoverTrial { trials, samples, delta } => cover_trial(*trials, *samples, *delta, &cli.common),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
