//! Numerical evaluation of the generalization bound and its Monte-Carlo
//! coverage check.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{station_profiles, synth_from_profiles, GenConfig};
use crate::discrepancy::DiscrepancyMatrix;
use crate::dmtfl::run_dmtfl;
use crate::domain::{common_tiles, AlphaMatrix, BsDataset, HyperParams, LossSpec, MixtureWeights};
use crate::error::{Error, Result};
use crate::numerics::{build_cover_for, cover_cardinality, project_capped_simplex, EpsCover};
use crate::objective::{empirical_loss, penalty, sample_value, PenaltyParams, Problem};
use crate::scalar::Real;

/// SplitMix64 finalizer, used to derive independent sub-seeds.
pub(crate) fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Finite stand-in for the model class: a list of candidate network
/// models `Phi`, each holding one caching vector per station.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelClass<T> {
    candidates: Vec<Vec<Vec<T>>>,
}

impl<T: Real> ModelClass<T> {
    pub fn from_candidates(candidates: Vec<Vec<Vec<T>>>) -> Result<Self> {
        let first = candidates
            .first()
            .ok_or(Error::Empty("model class without candidates"))?;
        let (b, f) = (first.len(), first.first().map_or(0, Vec::len));
        if b == 0 || f == 0 {
            return Err(Error::Empty("candidate without models"));
        }
        for c in &candidates {
            if c.len() != b || c.iter().any(|m| m.len() != f) {
                return Err(Error::DimensionMismatch {
                    expected: b * f,
                    actual: c.iter().map(Vec::len).sum(),
                    context: "model class candidate",
                });
            }
        }
        Ok(Self { candidates })
    }

    /// `count` random feasible candidates: uniform vectors projected onto the
    /// cache polytope with budget `budget`.
    pub fn sample(num_bs: usize, tiles: usize, budget: T, count: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let candidates = (0..count.max(1))
            .map(|_| {
                (0..num_bs)
                    .map(|_| {
                        let v: Vec<T> = (0..tiles).map(|_| T::lit(rng.random::<f64>())).collect();
                        project_capped_simplex(&v, T::one(), budget)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_candidates(candidates)
    }

    /// Adds a candidate, typically the trained models.
    pub fn with_candidate<M: AsRef<[T]>>(mut self, models: &[M]) -> Result<Self> {
        self.candidates
            .push(models.iter().map(|m| m.as_ref().to_vec()).collect());
        Self::from_candidates(self.candidates)
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn candidates(&self) -> &[Vec<Vec<T>>] {
        &self.candidates
    }
}

/// Mean of the per-draw suprema and its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RademacherEstimate<T> {
    pub mean: T,
    pub std_err: T,
    pub draws: usize,
}

/// Signed sums `S[k][c][b][i] = sum_j sigma_{k,b,i,j} l(phi_{c,i}; x_{b,j}, y_{b,j})`.
/// The signs depend only on `(seed, k)`, so every mixture sees the same draws.
struct SignedSums<T> {
    sums: Vec<Vec<Vec<Vec<T>>>>,
    sizes: Vec<T>,
}

impl<T: Real> SignedSums<T> {
    fn new(
        datasets: &[BsDataset<T>],
        class: &ModelClass<T>,
        spec: &LossSpec<T>,
        draws: usize,
        seed: u64,
    ) -> Result<Self> {
        let tiles = common_tiles(datasets)?;
        let b = datasets.len();
        if draws == 0 {
            return Err(Error::InvalidParameter(
                "at least one Rademacher draw is required".into(),
            ));
        }
        let c0 = &class.candidates()[0];
        if c0.len() != b || c0[0].len() != tiles {
            return Err(Error::DimensionMismatch {
                expected: b,
                actual: c0.len(),
                context: "model class vs datasets",
            });
        }
        // losses[c][i][b][j]: loss of candidate c's model i on sample j of station b.
        let losses: Vec<Vec<Vec<Vec<T>>>> = class
            .candidates()
            .par_iter()
            .map(|cand| {
                cand.iter()
                    .map(|phi| {
                        datasets
                            .iter()
                            .map(|d| d.samples().iter().map(|s| sample_value(phi, s, spec)).collect())
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let sums = (0..draws)
            .into_par_iter()
            .map(|k| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(k as u64);
                let sigma: Vec<Vec<Vec<bool>>> = datasets
                    .iter()
                    .map(|d| {
                        (0..b)
                            .map(|_| (0..d.len()).map(|_| rng.random::<bool>()).collect())
                            .collect()
                    })
                    .collect();
                losses
                    .iter()
                    .map(|cand| {
                        (0..b)
                            .map(|bb| {
                                (0..b)
                                    .map(|i| {
                                        let mut acc = T::zero();
                                        for (&s, &l) in sigma[bb][i].iter().zip(&cand[i][bb]) {
                                            if s {
                                                acc += l;
                                            } else {
                                                acc -= l;
                                            }
                                        }
                                        acc
                                    })
                                    .collect()
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let sizes = datasets.iter().map(|d| T::from_usize_lossy(d.len())).collect();
        Ok(Self { sums, sizes })
    }

    /// Per-draw supremum over the class and over collaboration rows; the
    /// latter is exact because the objective is linear in each row.
    fn estimate(&self, w: &[T]) -> RademacherEstimate<T> {
        let values: Vec<T> = self
            .sums
            .iter()
            .map(|draw| {
                draw.iter()
                    .map(|cand| {
                        let mut total = T::zero();
                        for (bb, row) in cand.iter().enumerate() {
                            let best = row.iter().copied().fold(T::neg_infinity(), T::max);
                            total += w[bb] / self.sizes[bb] * best;
                        }
                        total
                    })
                    .fold(T::neg_infinity(), T::max)
            })
            .collect();
        let k = T::from_usize_lossy(values.len());
        let mean = values.iter().copied().sum::<T>() / k;
        let std_err = if values.len() > 1 {
            let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / (k - T::one());
            (var / k).sqrt()
        } else {
            T::zero()
        };
        RademacherEstimate {
            mean,
            std_err,
            draws: values.len(),
        }
    }
}

/// Monte-Carlo estimate of the empirical Rademacher complexity at mixture
/// `w`, conditioned on the observed datasets.
pub fn mc_rademacher<T: Real>(
    datasets: &[BsDataset<T>],
    w: &MixtureWeights<T>,
    class: &ModelClass<T>,
    spec: &LossSpec<T>,
    draws: usize,
    seed: u64,
) -> Result<RademacherEstimate<T>> {
    if w.len() != datasets.len() {
        return Err(Error::DimensionMismatch {
            expected: datasets.len(),
            actual: w.len(),
            context: "mixture vs datasets",
        });
    }
    Ok(SignedSums::new(datasets, class, spec, draws, seed)?.estimate(w.as_slice()))
}

/// Largest [`mc_rademacher`] over the cover centres, with the signs shared
/// across centres. Returns the estimate and the index of the maximising centre.
pub fn max_rademacher_over_cover<T: Real>(
    datasets: &[BsDataset<T>],
    cover: &EpsCover<T>,
    class: &ModelClass<T>,
    spec: &LossSpec<T>,
    draws: usize,
    seed: u64,
) -> Result<(RademacherEstimate<T>, usize)> {
    if cover.is_empty() {
        return Err(Error::Empty("mixture cover"));
    }
    let sums = SignedSums::new(datasets, class, spec, draws, seed)?;
    let mut best: Option<(RademacherEstimate<T>, usize)> = None;
    for (k, c) in cover.centers().iter().enumerate() {
        if c.len() != datasets.len() {
            return Err(Error::DimensionMismatch {
                expected: datasets.len(),
                actual: c.len(),
                context: "cover centre",
            });
        }
        let est = sums.estimate(c.as_slice());
        if best.as_ref().is_none_or(|(b, _)| est.mean > b.mean) {
            best = Some((est, k));
        }
    }
    Ok(best.expect("nonempty cover"))
}

/// Constants the bound was evaluated with.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs {
    pub loss_bound: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub cover_size: usize,
    pub sizes: Vec<usize>,
}

/// The four terms of the bound and their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub theta_hat: f64,
    pub rademacher: f64,
    /// `H * P(w, alpha)`.
    pub penalty: f64,
    /// `H * B * epsilon`.
    pub cover_term: f64,
    pub total: f64,
    pub inputs: BoundInputs,
}

impl BoundReport {
    pub fn assemble(
        theta_hat: f64,
        rademacher: f64,
        penalty: f64,
        cover_term: f64,
        inputs: BoundInputs,
    ) -> Result<Self> {
        for (name, v) in [
            ("theta_hat", theta_hat),
            ("rademacher", rademacher),
            ("penalty", penalty),
            ("cover_term", cover_term),
        ] {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("bound term {name} = {v}")));
            }
        }
        Ok(Self {
            theta_hat,
            rademacher,
            penalty,
            cover_term,
            total: theta_hat + 2.0 * rademacher + penalty + cover_term,
            inputs,
        })
    }

    /// The bound with every slack term removed, i.e. the empirical objective.
    pub fn without_slack(&self) -> f64 {
        self.theta_hat
    }

    pub const CSV_HEADER: [&'static str; 10] = [
        "theta_hat",
        "rademacher",
        "penalty",
        "cover_term",
        "total",
        "loss_bound",
        "delta",
        "epsilon",
        "cover_size",
        "sizes",
    ];

    fn csv_record(&self) -> Vec<String> {
        let i = &self.inputs;
        vec![
            format!("{:?}", self.theta_hat),
            format!("{:?}", self.rademacher),
            format!("{:?}", self.penalty),
            format!("{:?}", self.cover_term),
            format!("{:?}", self.total),
            format!("{:?}", i.loss_bound),
            format!("{:?}", i.delta),
            format!("{:?}", i.epsilon),
            i.cover_size.to_string(),
            i.sizes.iter().map(usize::to_string).collect::<Vec<_>>().join(";"),
        ]
    }
}

/// Writes one CSV row per report.
pub fn write_bound_csv<W: Write>(reports: &[BoundReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(BoundReport::CSV_HEADER)?;
    for r in reports {
        w.write_record(r.csv_record())?;
    }
    w.flush()?;
    Ok(())
}

/// Assembles the bound for trained models: the empirical weighted objective,
/// twice the supplied Rademacher estimate, `H * P(w, alpha)` and `H B epsilon`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_bound<T: Real, M: AsRef<[T]>>(
    models: &[M],
    w: &MixtureWeights<T>,
    alpha: &AlphaMatrix<T>,
    datasets: &[BsDataset<T>],
    v: &DiscrepancyMatrix<T>,
    hp: &HyperParams,
    rademacher: T,
) -> Result<BoundReport> {
    let b = datasets.len();
    let cover_size = cover_cardinality(&hp.mixture_set, b, hp.eps_cover)?;
    let params = PenaltyParams {
        bound: T::lit(hp.loss_bound),
        delta: T::lit(hp.delta),
        cover_size,
    };
    let problem = Problem::new(datasets, hp.loss_spec(), params, vec![T::zero()])?;
    let theta = problem.weighted_objective(models, w, alpha)?;
    let sizes = problem.sizes();
    let p = penalty(w, alpha, v, &sizes, &params)?;
    BoundReport::assemble(
        theta.to_f64_lossy(),
        rademacher.to_f64_lossy(),
        hp.loss_bound * p.to_f64_lossy(),
        hp.loss_bound * b as f64 * hp.eps_cover,
        BoundInputs {
            loss_bound: hp.loss_bound,
            delta: hp.delta,
            epsilon: hp.eps_cover,
            cover_size,
            sizes,
        },
    )
}

/// Settings of a coverage experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageConfig {
    /// Station populations: profiles come from `generator.seed`, and every
    /// trial draws `generator.samples_per_bs` fresh windows per station.
    pub generator: GenConfig,
    pub hp: HyperParams,
    pub trials: usize,
    /// Held-out sample size as a multiple of the training size.
    pub holdout_factor: usize,
    pub rademacher_draws: usize,
    pub class_size: usize,
    pub seed: u64,
}

impl Default for CoverageConfig {
    /// Two stations on a 4x4 grid with 200 training windows each and a
    /// short training run.
    fn default() -> Self {
        Self {
            generator: GenConfig {
                num_bs: 2,
                grid: crate::domain::TileGrid::new(4, 4).expect("valid grid"),
                users_per_bs: 10,
                samples_per_bs: 200,
                gamma: 0.3,
                fov_deg: 100.0,
                seed: 0,
            },
            hp: HyperParams {
                rounds: 20,
                inner_steps: 5,
                cache_budget: 4.0,
                ..HyperParams::default()
            },
            trials: 200,
            holdout_factor: 50,
            rademacher_draws: 20,
            class_size: 64,
            seed: 0,
        }
    }
}

/// Outcome of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub true_theta: f64,
    pub report: BoundReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub trials: Vec<TrialRecord>,
}

impl CoverageReport {
    /// Fraction of trials with `true_theta <= total`.
    pub fn fraction(&self) -> f64 {
        let ok = self.trials.iter().filter(|t| t.true_theta <= t.report.total).count();
        ok as f64 / self.trials.len() as f64
    }

    pub fn violation_fraction(&self) -> f64 {
        1.0 - self.fraction()
    }

    /// Violation fraction of the bound with every slack term zeroed.
    pub fn mutated_violation_fraction(&self) -> f64 {
        let bad = self
            .trials
            .iter()
            .filter(|t| t.true_theta > t.report.without_slack())
            .count();
        bad as f64 / self.trials.len() as f64
    }
}

/// Trains on fresh samples from fixed station populations, evaluates the
/// bound, and compares it with the loss on a large independent sample.
pub fn coverage_trial(cfg: &CoverageConfig) -> Result<CoverageReport> {
    if cfg.trials == 0 || cfg.holdout_factor == 0 {
        return Err(Error::InvalidParameter("trials and holdout_factor must be >= 1".into()));
    }
    let profiles = station_profiles(&cfg.generator)?;
    let m = cfg.generator.samples_per_bs;
    let b = cfg.generator.num_bs;
    let tiles = cfg.generator.grid.num_tiles();
    cfg.hp.validate_for(b, tiles)?;
    let cover = build_cover_for::<f64>(&cfg.hp.mixture_set, b, cfg.hp.eps_cover)?;
    let trials = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let t = t as u64;
            let train = synth_from_profiles::<f64>(&cfg.generator, &profiles, m, mix_seed(cfg.seed, 3 * t + 1))?;
            let holdout = synth_from_profiles::<f64>(
                &cfg.generator,
                &profiles,
                m * cfg.holdout_factor,
                mix_seed(cfg.seed, 3 * t + 2),
            )?;
            let out = run_dmtfl(&train, &cfg.hp)?;
            let class = ModelClass::sample(
                b,
                tiles,
                cfg.hp.cache_budget,
                cfg.class_size,
                mix_seed(cfg.seed, 3 * t + 3),
            )?
            .with_candidate(&out.models)?;
            let spec = cfg.hp.loss_spec();
            let (rad, _) = max_rademacher_over_cover(
                &train,
                &cover,
                &class,
                &spec,
                cfg.rademacher_draws,
                mix_seed(cfg.seed, !t),
            )?;
            let report = evaluate_bound(
                &out.models,
                &out.weights,
                &out.alpha,
                &train,
                &out.discrepancy,
                &cfg.hp,
                rad.mean,
            )?;
            let mut true_theta = 0.0;
            for ((model, d), &wb) in out.models.iter().zip(&holdout).zip(out.weights.as_slice()) {
                true_theta += wb * empirical_loss(model.phi(), d, &spec)?;
            }
            Ok(TrialRecord { true_theta, report })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CoverageReport { trials })
}
