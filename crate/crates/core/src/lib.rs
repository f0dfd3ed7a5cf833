//! Personalized, fairness-aware federated learning for VR tile caching at
//! edge base stations.
//!
//! The core is generic over the scalar type ([`Real`], implemented for `f32`
//! and `f64`); the aliases at the bottom of this file fix it to `f64`.

pub mod baselines;
pub mod bounds;
pub mod data;
pub mod discrepancy;
pub mod dmtfl;
pub mod domain;
pub mod error;
pub mod eval;
pub mod numerics;
pub mod objective;
mod scalar;

pub use baselines::{fedavg, fedprox, heuristic_popular, FedParams};
pub use bounds::{
    coverage_trial, evaluate_bound, max_rademacher_over_cover, mc_rademacher, BoundReport, CoverageConfig,
};
pub use data::{fov_tiles, ingest_trace, synth_noniid, tile_index, GenConfig};
pub use discrepancy::{delta, estimate_discrepancy, subgrad_delta, DiscrepancyEstimate};
pub use dmtfl::{init_state, run_dmtfl, run_dmtfl_with, w_step, RunOptions};
pub use domain::{
    validate_dataset, ErrorModel, HyperParams, LossSpec, MixtureSet, TileGrid, WeightPolicy, SIMPLEX_TOL,
};
pub use error::{Error, Result};
pub use eval::{avg_cache_hit, cache_set_from_model, min_per_bs_hit, run_experiment, ExperimentConfig, MetricRow};
pub use numerics::{build_cover_for, build_eps_cover, project_capped_simplex, project_simplex, project_simplex_vec};
pub use objective::{empirical_loss, empirical_loss_grad, penalty, predict, sample_loss, PenaltyParams};
pub use scalar::Real;

pub type Sample = domain::Sample<f64>;
pub type BsDataset = domain::BsDataset<f64>;
pub type CachingModel = domain::CachingModel<f64>;
pub type MixtureWeights = domain::MixtureWeights<f64>;
pub type AlphaMatrix = domain::AlphaMatrix<f64>;
pub type DiscrepancyMatrix = discrepancy::DiscrepancyMatrix<f64>;
pub type EpsCover = numerics::EpsCover<f64>;
pub type LossReport = objective::LossReport<f64>;
pub type Problem<'a> = objective::Problem<'a, f64>;
pub type GlobalModel = baselines::GlobalModel<f64>;
pub type DmtflOutput = dmtfl::DmtflOutput<f64>;
pub type TrainingHistory = dmtfl::TrainingHistory<f64>;
