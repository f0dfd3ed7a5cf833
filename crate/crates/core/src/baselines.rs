//! Comparison algorithms sharing the DMTFL loss and data: FedAvg, FedProx
//! and the global popularity heuristic.

use rayon::prelude::*;

use crate::domain::{common_tiles, BsDataset, CachingModel, HyperParams, LossSpec};
use crate::error::{Error, Result};
use crate::numerics::project_capped_simplex;
use crate::objective::empirical_loss_grad;
use crate::scalar::Real;

/// One caching strategy shared by every station.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalModel<T> {
    phi: Vec<T>,
}

impl<T: Real> GlobalModel<T> {
    pub fn phi(&self) -> &[T] {
        &self.phi
    }

    /// The shared model as a per-station model for each of `num_bs` stations.
    pub fn per_station(&self, num_bs: usize) -> Vec<CachingModel<T>> {
        (0..num_bs)
            .map(|b| CachingModel::from_feasible(b, self.phi.clone()))
            .collect()
    }
}

impl<T: Real> AsRef<[T]> for GlobalModel<T> {
    fn as_ref(&self) -> &[T] {
        &self.phi
    }
}

/// Settings shared by the federated baselines.
#[derive(Debug, Clone, PartialEq)]
pub struct FedParams<T> {
    pub rounds: usize,
    pub eta: T,
    pub local_steps: usize,
    pub budget: T,
    pub spec: LossSpec<T>,
}

impl<T: Real> FedParams<T> {
    /// Rounds, step size, budget and loss taken from the DMTFL settings.
    pub fn from_hyper(hp: &HyperParams, local_steps: usize) -> Self {
        Self {
            rounds: hp.rounds,
            eta: T::lit(hp.descent_step),
            local_steps,
            budget: T::lit(hp.cache_budget),
            spec: hp.loss_spec(),
        }
    }

    fn validate(&self, tiles: usize) -> Result<()> {
        if self.rounds == 0 || self.local_steps == 0 {
            return Err(Error::InvalidParameter("rounds and local_steps must be >= 1".into()));
        }
        if !(self.eta > T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "step size must be > 0, got {}",
                self.eta
            )));
        }
        if !(self.budget >= T::one() && self.budget <= T::from_usize_lossy(tiles)) {
            return Err(Error::InvalidParameter(format!(
                "cache budget {} outside [1, {tiles}]",
                self.budget
            )));
        }
        Ok(())
    }
}

/// Local proximal step on `L(phi) + mu/2 ||phi - anchor||^2`, with the
/// proximal part taken implicitly:
/// `phi <- (phi - eta grad + eta mu anchor) / (1 + eta mu)`, then projected.
fn local_step<T: Real>(phi: &[T], anchor: &[T], d: &BsDataset<T>, p: &FedParams<T>, mu: T) -> Result<Vec<T>> {
    let (_, g) = empirical_loss_grad(phi, d, &p.spec)?;
    let em = p.eta * mu;
    let denom = T::one() + em;
    let raw: Vec<T> = phi
        .iter()
        .zip(&g)
        .zip(anchor)
        .map(|((&x, &gx), &a)| (x - p.eta * gx + em * a) / denom)
        .collect();
    if raw.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("local baseline update".into()));
    }
    project_capped_simplex(&raw, T::one(), p.budget)
}

/// Global model after every round of federated training with proximal
/// weight `mu` (0 gives FedAvg); entry 0 is the initial model.
pub fn federated_trajectory<T: Real>(datasets: &[BsDataset<T>], p: &FedParams<T>, mu: T) -> Result<Vec<Vec<T>>> {
    let tiles = common_tiles(datasets)?;
    p.validate(tiles)?;
    if !(mu >= T::zero()) {
        return Err(Error::InvalidParameter(format!(
            "proximal weight must be >= 0, got {mu}"
        )));
    }
    let total = T::from_usize_lossy(datasets.iter().map(BsDataset::len).sum());
    let mut global = vec![p.budget / T::from_usize_lossy(tiles); tiles];
    let mut out = Vec::with_capacity(p.rounds + 1);
    out.push(global.clone());
    for _ in 0..p.rounds {
        let locals: Vec<Vec<T>> = datasets
            .par_iter()
            .map(|d| {
                let mut phi = global.clone();
                for _ in 0..p.local_steps {
                    phi = local_step(&phi, &global, d, p, mu)?;
                }
                Ok(phi)
            })
            .collect::<Result<_>>()?;
        let mut avg = vec![T::zero(); tiles];
        for (d, phi) in datasets.iter().zip(&locals) {
            let weight = T::from_usize_lossy(d.len()) / total;
            for (a, &x) in avg.iter_mut().zip(phi) {
                *a += weight * x;
            }
        }
        global = project_capped_simplex(&avg, T::one(), p.budget)?;
        out.push(global.clone());
    }
    Ok(out)
}

pub fn fedavg<T: Real>(datasets: &[BsDataset<T>], p: &FedParams<T>) -> Result<GlobalModel<T>> {
    fedprox(datasets, p, T::zero())
}

pub fn fedprox<T: Real>(datasets: &[BsDataset<T>], p: &FedParams<T>, mu_prox: T) -> Result<GlobalModel<T>> {
    let mut traj = federated_trajectory(datasets, p, mu_prox)?;
    Ok(GlobalModel {
        phi: traj.pop().expect("trajectory holds the initial model"),
    })
}

/// The `cache_size` tiles with the largest total demand over all samples
/// of all stations, ties to the lower index; returned ascending.
pub fn heuristic_popular<T: Real>(datasets: &[BsDataset<T>], cache_size: usize) -> Result<Vec<usize>> {
    let tiles = common_tiles(datasets)?;
    if cache_size > tiles {
        return Err(Error::InvalidParameter(format!(
            "cache size {cache_size} exceeds {tiles} tiles"
        )));
    }
    let mut demand = vec![T::zero(); tiles];
    for d in datasets {
        for s in d.samples() {
            for (a, &y) in demand.iter_mut().zip(s.label()) {
                *a += y;
            }
        }
    }
    Ok(top_k(&demand, cache_size))
}

/// Indices of the `k` largest entries, ties to the lower index; ascending.
pub(crate) fn top_k<T: Real>(v: &[T], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| {
        v[b].partial_cmp(&v[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    idx.sort_unstable();
    idx
}
