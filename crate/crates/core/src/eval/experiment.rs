use std::io::{Read, Write};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{fedprox, heuristic_popular, FedParams};
use crate::data::{ingest_trace, synth_noniid};
use crate::dmtfl::run_dmtfl;
use crate::domain::{BsDataset, HyperParams};
use crate::error::{Error, Result};
use crate::objective::empirical_loss;

use super::config::{Algorithm, DataSource, ExperimentConfig};
use super::{avg_cache_hit, cache_set_from_model, min_per_bs_hit};

/// One evaluated (algorithm, cache size, repetition) point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub algorithm: Algorithm,
    pub cache_size: usize,
    pub cache_fraction: f64,
    pub repetition: usize,
    pub avg_cache_hit: f64,
    pub min_per_bs_hit: f64,
    /// Mean over stations of each station's training loss under its model.
    pub final_objective: f64,
    pub wall_time_s: Option<f64>,
}

/// Datasets of one repetition. The synthetic generator is reseeded with
/// `seed`; trace files are read as they are.
pub fn load_datasets(source: &DataSource, seed: u64) -> Result<Vec<BsDataset<f64>>> {
    match source {
        DataSource::Synthetic(g) => {
            let mut g = g.clone();
            g.seed = seed;
            synth_noniid(&g)
        }
        DataSource::Traces {
            paths,
            grid,
            fov_deg,
            window_sec,
        } => paths
            .iter()
            .enumerate()
            .map(|(b, p)| ingest_trace(p, b, grid, *fov_deg, *window_sec))
            .collect(),
    }
}

struct Split {
    train: Vec<BsDataset<f64>>,
    test: Vec<BsDataset<f64>>,
    seed: u64,
}

fn evaluate(cfg: &ExperimentConfig, split: &Split, alg: Algorithm, cache_size: usize, rep: usize) -> Result<MetricRow> {
    let start = Instant::now();
    let tiles = split.train[0].num_tiles();
    let mut hp: HyperParams = cfg.dmtfl.clone();
    hp.cache_budget = cache_size as f64;
    hp.seed = split.seed;
    let num_bs = split.train.len();
    let models: Vec<Vec<f64>> = match alg {
        Algorithm::Dmtfl => run_dmtfl(&split.train, &hp)?
            .models
            .into_iter()
            .map(|m| m.into_phi())
            .collect(),
        Algorithm::Fedavg | Algorithm::Fedprox => {
            let b = &cfg.baselines;
            let mut p = FedParams::<f64>::from_hyper(&hp, b.local_steps);
            p.rounds = b.rounds.unwrap_or(hp.rounds);
            p.eta = b.descent_step.unwrap_or(hp.descent_step);
            let mu = if alg == Algorithm::Fedprox { b.mu_prox } else { 0.0 };
            vec![fedprox(&split.train, &p, mu)?.phi().to_vec(); num_bs]
        }
        Algorithm::Heuristic => {
            let set = heuristic_popular(&split.train, cache_size)?;
            let mut phi = vec![0.0; tiles];
            set.iter().for_each(|&t| phi[t] = 1.0);
            vec![phi; num_bs]
        }
    };
    let caches = models
        .iter()
        .map(|m| cache_set_from_model(m, cache_size))
        .collect::<Result<Vec<_>>>()?;
    let spec = hp.loss_spec();
    let mut objective = 0.0;
    for (m, d) in models.iter().zip(&split.train) {
        objective += empirical_loss(m, d, &spec)?;
    }
    let wall = start.elapsed().as_secs_f64();
    Ok(MetricRow {
        algorithm: alg,
        cache_size,
        cache_fraction: cache_size as f64 / tiles as f64,
        repetition: rep,
        avg_cache_hit: avg_cache_hit(&caches, &split.test)?,
        min_per_bs_hit: min_per_bs_hit(&caches, &split.test)?,
        final_objective: objective / num_bs as f64,
        wall_time_s: cfg.experiment.record_timing.then_some(wall),
    })
}

/// Runs every (repetition, cache size, algorithm) point. Each station's
/// samples are split in order into train and test parts. Rows come back
/// sorted by algorithm (in config order), cache size, then repetition.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<MetricRow>> {
    cfg.validate()?;
    let e = &cfg.experiment;
    let base_seed = match &cfg.data {
        DataSource::Synthetic(g) => g.seed,
        DataSource::Traces { .. } => cfg.dmtfl.seed,
    };
    let splits: Vec<Split> = (0..e.repetitions)
        .into_par_iter()
        .map(|r| {
            let seed = if e.vary_seed {
                base_seed.wrapping_add(r as u64)
            } else {
                base_seed
            };
            let data = load_datasets(&cfg.data, seed)?;
            let (mut train, mut test) = (Vec::new(), Vec::new());
            for d in &data {
                let (a, b) = d.split(e.train_fraction)?;
                train.push(a);
                test.push(b);
            }
            Ok(Split { train, test, seed })
        })
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, Algorithm, usize, usize)> = e
        .algorithms
        .iter()
        .enumerate()
        .flat_map(|(k, &alg)| {
            e.cache_sizes
                .iter()
                .flat_map(move |&c| (0..e.repetitions).map(move |r| (k, alg, c, r)))
        })
        .collect();
    let mut rows: Vec<(usize, MetricRow)> = jobs
        .into_par_iter()
        .map(|(k, alg, c, r)| evaluate(cfg, &splits[r], alg, c, r).map(|row| (k, row)))
        .collect::<Result<_>>()?;
    rows.sort_by(|a, b| (a.0, a.1.cache_size, a.1.repetition).cmp(&(b.0, b.1.cache_size, b.1.repetition)));
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

/// Writes the rows as CSV, preceded by the resolved configuration as `#`
/// comment lines.
pub fn write_metrics_csv<W: Write>(rows: &[MetricRow], cfg: &ExperimentConfig, mut out: W) -> Result<()> {
    for line in cfg.to_toml()?.lines() {
        writeln!(out, "# {line}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record([
            "algorithm",
            "cache_size",
            "cache_fraction",
            "repetition",
            "avg_cache_hit",
            "min_per_bs_hit",
            "final_objective",
            "wall_time_s",
        ])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv<R: Read>(input: R) -> Result<Vec<MetricRow>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}
