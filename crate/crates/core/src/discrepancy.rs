//! Pairwise discrepancy between base-station distributions, estimated by
//! projected subgradient ascent on the absolute loss gap.

use crate::domain::{BsDataset, LossSpec};
use crate::error::{Error, Result};
use crate::numerics::project_capped_simplex;
use crate::objective::{empirical_loss, empirical_loss_grad};
use crate::scalar::Real;

/// Symmetric matrix of discrepancy estimates with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscrepancyMatrix<T> {
    v: Vec<Vec<T>>,
}

impl<T: Real> DiscrepancyMatrix<T> {
    pub fn zeros(num_bs: usize) -> Self {
        Self {
            v: vec![vec![T::zero(); num_bs]; num_bs],
        }
    }

    /// Builds a matrix from raw directed estimates, symmetrizing each pair as
    /// `max(v_bi, v_ib)` and zeroing the diagonal.
    pub fn from_estimates(raw: Vec<Vec<T>>) -> Result<Self> {
        let b = raw.len();
        if let Some(r) = raw.iter().find(|r| r.len() != b) {
            return Err(Error::DimensionMismatch {
                expected: b,
                actual: r.len(),
                context: "discrepancy row",
            });
        }
        for (i, r) in raw.iter().enumerate() {
            if let Some((j, x)) = r
                .iter()
                .enumerate()
                .find(|(_, x)| !(**x >= T::zero()) || !x.is_finite())
            {
                return Err(Error::OutOfRange(format!("discrepancy ({i}, {j}) = {x}")));
            }
        }
        let mut v = vec![vec![T::zero(); b]; b];
        for i in 0..b {
            for j in 0..b {
                if i != j {
                    v[i][j] = raw[i][j].max(raw[j][i]);
                }
            }
        }
        Ok(Self { v })
    }

    pub fn size(&self) -> usize {
        self.v.len()
    }

    pub fn get(&self, b: usize, i: usize) -> T {
        self.v[b][i]
    }

    pub fn row(&self, b: usize) -> &[T] {
        &self.v[b]
    }

    pub fn rows(&self) -> &[Vec<T>] {
        &self.v
    }

    pub fn max_entry(&self) -> T {
        self.v.iter().flatten().fold(T::zero(), |m, &x| m.max(x))
    }
}

/// `|L_b(phi) - L_i(phi)|`.
pub fn delta<T: Real>(phi: &[T], d_b: &BsDataset<T>, d_i: &BsDataset<T>, spec: &LossSpec<T>) -> Result<T> {
    Ok((empirical_loss(phi, d_b, spec)? - empirical_loss(phi, d_i, spec)?).abs())
}

/// The branch subgradient of the absolute gap given both losses and
/// gradients. Ties take the negative branch.
pub(crate) fn gap_subgradient<T: Real>(l_b: T, g_b: &[T], l_i: T, g_i: &[T]) -> Vec<T> {
    let sign = if l_b > l_i { T::one() } else { -T::one() };
    g_b.iter().zip(g_i).map(|(&a, &b)| sign * (a - b)).collect()
}

/// Subgradient of [`delta`] with respect to `phi`.
pub fn subgrad_delta<T: Real>(phi: &[T], d_b: &BsDataset<T>, d_i: &BsDataset<T>, spec: &LossSpec<T>) -> Result<Vec<T>> {
    let (l_b, g_b) = empirical_loss_grad(phi, d_b, spec)?;
    let (l_i, g_i) = empirical_loss_grad(phi, d_i, spec)?;
    Ok(gap_subgradient(l_b, &g_b, l_i, &g_i))
}

/// One projected ascent step `phi + mu * g` onto the cache polytope.
pub(crate) fn ascent_step<T: Real>(phi: &[T], g: &[T], mu: T, budget: T) -> Result<Vec<T>> {
    let raw: Vec<T> = phi.iter().zip(g).map(|(&p, &s)| p + mu * s).collect();
    project_capped_simplex(&raw, T::one(), budget)
}

/// Result of a discrepancy ascent.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscrepancyEstimate<T> {
    /// Largest gap over the visited iterates.
    pub v_hat: T,
    /// The iterate attaining `v_hat`.
    pub phi_star: Vec<T>,
    /// Running maximum after each visited iterate.
    pub trace: Vec<T>,
}

/// Ascent on `|L_b - L_i|` from `phi0`, visiting `n_inner` iterates (the
/// first is `phi0` itself) and keeping the best one.
pub fn estimate_discrepancy<T: Real>(
    d_b: &BsDataset<T>,
    d_i: &BsDataset<T>,
    spec: &LossSpec<T>,
    mu: T,
    n_inner: usize,
    phi0: &[T],
    budget: T,
) -> Result<DiscrepancyEstimate<T>> {
    if n_inner == 0 {
        return Err(Error::InvalidParameter("ascent needs at least one iterate".into()));
    }
    if !(mu > T::zero()) {
        return Err(Error::InvalidParameter(format!("ascent step must be > 0, got {mu}")));
    }
    let mut phi = phi0.to_vec();
    let mut best = (-T::one(), phi.clone());
    let mut trace = Vec::with_capacity(n_inner);
    for n in 0..n_inner {
        let (l_b, g_b) = empirical_loss_grad(&phi, d_b, spec)?;
        let (l_i, g_i) = empirical_loss_grad(&phi, d_i, spec)?;
        let gap = (l_b - l_i).abs();
        if !gap.is_finite() {
            return Err(Error::NonFinite(format!("discrepancy gap at iterate {n}")));
        }
        if gap > best.0 {
            best = (gap, phi.clone());
        }
        trace.push(best.0);
        if n + 1 < n_inner {
            phi = ascent_step(&phi, &gap_subgradient(l_b, &g_b, l_i, &g_i), mu, budget)?;
        }
    }
    Ok(DiscrepancyEstimate {
        v_hat: best.0,
        phi_star: best.1,
        trace,
    })
}
