//! The log-MSE caching loss, its empirical and mixture-weighted aggregates,
//! the generalization penalty, and analytic gradients.

use crate::discrepancy::DiscrepancyMatrix;
use crate::domain::{common_tiles, AlphaMatrix, BsDataset, CachingModel, ErrorModel, LossSpec, MixtureWeights, Sample};
use crate::error::{Error, Result};
use crate::scalar::{l2_norm, ordered_sum, Real};

impl<T: Real> AsRef<[T]> for CachingModel<T> {
    fn as_ref(&self) -> &[T] {
        self.phi()
    }
}

/// Per-sample loss with its per-tile addends `phi_f * log10(e_f)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport<T> {
    pub value: T,
    pub per_tile: Vec<T>,
}

/// Relaxed cache indicator `h_phi(x)_f = clamp(phi_f * x_f, 0, 1)`.
pub fn predict<T: Real>(phi: &[T], x: &[T]) -> Result<Vec<T>> {
    if phi.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: phi.len(),
            actual: x.len(),
            context: "model vs features",
        });
    }
    Ok(phi
        .iter()
        .zip(x)
        .map(|(&p, &xf)| (p * xf).max(T::zero()).min(T::one()))
        .collect())
}

#[inline]
fn tile_addend<T: Real>(phi: T, x: T, y: T, spec: &LossSpec<T>) -> T {
    let e = match spec.model {
        ErrorModel::Predicted => {
            let d = (phi * x).max(T::zero()).min(T::one()) - y;
            (d * d).max(spec.e_floor)
        }
        ErrorModel::CachedTile => {
            let d = T::one() - y;
            (d * d).max(spec.e_floor)
        }
    };
    (phi * e.log10()).max(-spec.bound).min(spec.bound)
}

/// Derivative of one tile addend with respect to `phi`. Saturated clamps and
/// the error floor contribute zero.
#[inline]
fn tile_addend_grad<T: Real>(phi: T, x: T, y: T, spec: &LossSpec<T>) -> T {
    let (e, de) = match spec.model {
        ErrorModel::Predicted => {
            let raw = phi * x;
            let (h, dh) = if raw <= T::zero() {
                (T::zero(), if raw == T::zero() { x } else { T::zero() })
            } else if raw < T::one() {
                (raw, x)
            } else {
                (T::one(), T::zero())
            };
            let d = h - y;
            let e = d * d;
            if e < spec.e_floor {
                (spec.e_floor, T::zero())
            } else {
                (e, T::lit(2.0) * d * dh)
            }
        }
        ErrorModel::CachedTile => {
            let d = T::one() - y;
            ((d * d).max(spec.e_floor), T::zero())
        }
    };
    let log_e = e.log10();
    let raw = phi * log_e;
    if raw < -spec.bound || raw > spec.bound {
        return T::zero();
    }
    log_e + phi * de / (e * T::lit(std::f64::consts::LN_10))
}

/// Loss of one sample, reporting every tile's addend.
pub fn sample_loss<T: Real>(phi: &[T], s: &Sample<T>, spec: &LossSpec<T>) -> Result<LossReport<T>> {
    check_len(phi, s)?;
    let per_tile: Vec<T> = phi
        .iter()
        .zip(s.features().iter().zip(s.label()))
        .map(|(&p, (&x, &y))| tile_addend(p, x, y, spec))
        .collect();
    Ok(LossReport {
        value: ordered_sum(per_tile.iter().copied()),
        per_tile,
    })
}

fn check_len<T: Real>(phi: &[T], s: &Sample<T>) -> Result<()> {
    if phi.len() != s.num_tiles() {
        return Err(Error::DimensionMismatch {
            expected: s.num_tiles(),
            actual: phi.len(),
            context: "model vs sample",
        });
    }
    Ok(())
}

fn check_dataset<T: Real>(phi: &[T], d: &BsDataset<T>) -> Result<()> {
    if phi.len() != d.num_tiles() {
        return Err(Error::DimensionMismatch {
            expected: d.num_tiles(),
            actual: phi.len(),
            context: "model vs dataset",
        });
    }
    Ok(())
}

#[inline]
pub(crate) fn sample_value<T: Real>(phi: &[T], s: &Sample<T>, spec: &LossSpec<T>) -> T {
    let mut acc = T::zero();
    for ((&p, &x), &y) in phi.iter().zip(s.features()).zip(s.label()) {
        acc += tile_addend(p, x, y, spec);
    }
    acc
}

/// Mean per-sample loss of `phi` on dataset `d`.
pub fn empirical_loss<T: Real>(phi: &[T], d: &BsDataset<T>, spec: &LossSpec<T>) -> Result<T> {
    check_dataset(phi, d)?;
    let total = ordered_sum(d.samples().iter().map(|s| sample_value(phi, s, spec)));
    Ok(total / T::from_usize_lossy(d.len()))
}

/// Empirical loss together with its gradient with respect to `phi`.
pub fn empirical_loss_grad<T: Real>(phi: &[T], d: &BsDataset<T>, spec: &LossSpec<T>) -> Result<(T, Vec<T>)> {
    check_dataset(phi, d)?;
    let mut grad = vec![T::zero(); phi.len()];
    let mut total = T::zero();
    for s in d.samples() {
        let mut value = T::zero();
        for (f, ((&p, &x), &y)) in phi.iter().zip(s.features()).zip(s.label()).enumerate() {
            value += tile_addend(p, x, y, spec);
            grad[f] += tile_addend_grad(p, x, y, spec);
        }
        total += value;
    }
    let m = T::from_usize_lossy(d.len());
    for g in &mut grad {
        *g /= m;
    }
    Ok((total / m, grad))
}

/// `acc += coef * g`, the accumulation used for every gradient sum.
#[inline]
pub(crate) fn accumulate_scaled<T: Real>(acc: &mut [T], coef: T, g: &[T]) {
    for (a, &x) in acc.iter_mut().zip(g) {
        *a += coef * x;
    }
}

/// Adds the subgradient of `rho * ||phi||_2`; zero at the origin.
#[inline]
pub(crate) fn add_norm_subgradient<T: Real>(acc: &mut [T], phi: &[T], rho: T) {
    let norm = l2_norm(phi);
    if norm > T::zero() && rho != T::zero() {
        for (a, &p) in acc.iter_mut().zip(phi) {
            *a += rho * p / norm;
        }
    }
}

/// Constants of the generalization penalty: loss bound `H`, confidence
/// `delta`, and cover size `|Lambda_eps|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyParams<T> {
    pub bound: T,
    pub delta: T,
    pub cover_size: usize,
}

impl<T: Real> PenaltyParams<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > T::zero() && self.delta < T::one()) {
            return Err(Error::InvalidParameter(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if self.cover_size == 0 {
            return Err(Error::InvalidParameter("cover size must be >= 1".into()));
        }
        if !(self.bound > T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "loss bound must be > 0, got {}",
                self.bound
            )));
        }
        Ok(())
    }

    fn log_term(&self) -> T {
        (T::from_usize_lossy(self.cover_size) / self.delta).ln()
    }
}

fn sqrt_term_parts<T: Real>(w: &[T], a: &AlphaMatrix<T>, sizes: &[usize], params: &PenaltyParams<T>) -> (T, T) {
    let half_log = T::lit(0.5) * params.log_term();
    let mut sum_sq = T::zero();
    for (b, &wb) in w.iter().enumerate() {
        let mb = T::from_usize_lossy(sizes[b]);
        for &ab in a.row(b) {
            let c = wb * ab / mb;
            sum_sq += c * c;
        }
    }
    ((half_log * sum_sq).sqrt(), half_log)
}

/// The penalty `P(w, alpha)`: a concentration term shrinking with the sample
/// sizes plus the alpha-weighted discrepancies divided by `H`.
pub fn penalty<T: Real>(
    w: &MixtureWeights<T>,
    a: &AlphaMatrix<T>,
    v: &DiscrepancyMatrix<T>,
    sizes: &[usize],
    params: &PenaltyParams<T>,
) -> Result<T> {
    params.validate()?;
    let b = w.len();
    if a.size() != b || v.size() != b || sizes.len() != b {
        return Err(Error::DimensionMismatch {
            expected: b,
            actual: a.size().min(v.size()).min(sizes.len()),
            context: "penalty inputs",
        });
    }
    if sizes.contains(&0) {
        return Err(Error::Empty("penalty with an empty dataset"));
    }
    let (sqrt_term, _) = sqrt_term_parts(w.as_slice(), a, sizes, params);
    let mut disc = T::zero();
    for (bi, &wb) in w.as_slice().iter().enumerate() {
        for (i, &ab) in a.row(bi).iter().enumerate() {
            disc += wb * ab * v.get(bi, i);
        }
    }
    Ok(sqrt_term + disc / params.bound)
}

/// The distributed learning problem over a fixed set of base-station
/// datasets.
#[derive(Debug, Clone)]
pub struct Problem<'a, T> {
    data: &'a [BsDataset<T>],
    spec: LossSpec<T>,
    penalty: PenaltyParams<T>,
    rho: Vec<T>,
    tiles: usize,
}

impl<'a, T: Real> Problem<'a, T> {
    pub fn new(data: &'a [BsDataset<T>], spec: LossSpec<T>, penalty: PenaltyParams<T>, rho: Vec<T>) -> Result<Self> {
        let tiles = common_tiles(data)?;
        penalty.validate()?;
        let rho = match rho.len() {
            1 => vec![rho[0]; data.len()],
            n if n == data.len() => rho,
            n => {
                return Err(Error::DimensionMismatch {
                    expected: data.len(),
                    actual: n,
                    context: "regularizer weights",
                })
            }
        };
        Ok(Self {
            data,
            spec,
            penalty,
            rho,
            tiles,
        })
    }

    pub fn datasets(&self) -> &'a [BsDataset<T>] {
        self.data
    }

    pub fn num_bs(&self) -> usize {
        self.data.len()
    }

    pub fn tiles(&self) -> usize {
        self.tiles
    }

    pub fn spec(&self) -> &LossSpec<T> {
        &self.spec
    }

    pub fn penalty_params(&self) -> &PenaltyParams<T> {
        &self.penalty
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.data.iter().map(BsDataset::len).collect()
    }

    fn check<M: AsRef<[T]>>(&self, models: &[M], w: &MixtureWeights<T>, a: &AlphaMatrix<T>) -> Result<()> {
        let b = self.num_bs();
        for (n, ctx) in [
            (models.len(), "models"),
            (w.len(), "mixture weights"),
            (a.size(), "alpha matrix"),
        ] {
            if n != b {
                return Err(Error::DimensionMismatch {
                    expected: b,
                    actual: n,
                    context: ctx,
                });
            }
        }
        if let Some(m) = models.iter().find(|m| m.as_ref().len() != self.tiles) {
            return Err(Error::DimensionMismatch {
                expected: self.tiles,
                actual: m.as_ref().len(),
                context: "model tiles",
            });
        }
        Ok(())
    }

    /// Matrix `L[b][i]` of the loss of model `i` on dataset `b`.
    pub fn loss_matrix<M: AsRef<[T]>>(&self, models: &[M]) -> Result<Vec<Vec<T>>> {
        self.data
            .iter()
            .map(|d| {
                models
                    .iter()
                    .map(|m| empirical_loss(m.as_ref(), d, &self.spec))
                    .collect()
            })
            .collect()
    }

    /// `sum_b w_b sum_i alpha_{b,i} L_b(phi_i, D_b)`.
    pub fn weighted_objective<M: AsRef<[T]>>(
        &self,
        models: &[M],
        w: &MixtureWeights<T>,
        a: &AlphaMatrix<T>,
    ) -> Result<T> {
        self.check(models, w, a)?;
        let mut total = T::zero();
        for (b, d) in self.data.iter().enumerate() {
            let mut inner = T::zero();
            for (i, m) in models.iter().enumerate() {
                inner += a.get(b, i) * empirical_loss(m.as_ref(), d, &self.spec)?;
            }
            total += w.as_slice()[b] * inner;
        }
        Ok(total)
    }

    pub fn penalty<M: AsRef<[T]>>(
        &self,
        _models: &[M],
        w: &MixtureWeights<T>,
        a: &AlphaMatrix<T>,
        v: &DiscrepancyMatrix<T>,
    ) -> Result<T> {
        penalty(w, a, v, &self.sizes(), &self.penalty)
    }

    pub fn regularizer<M: AsRef<[T]>>(&self, models: &[M]) -> T {
        ordered_sum(models.iter().zip(&self.rho).map(|(m, &r)| r * l2_norm(m.as_ref())))
    }

    /// Weighted objective plus regularizer plus `H * P(w, alpha)`.
    pub fn full_objective<M: AsRef<[T]>>(
        &self,
        models: &[M],
        w: &MixtureWeights<T>,
        a: &AlphaMatrix<T>,
        v: &DiscrepancyMatrix<T>,
    ) -> Result<T> {
        let theta = self.weighted_objective(models, w, a)?;
        let reg = self.regularizer(models);
        let pen = self.penalty(models, w, a, v)?;
        Ok(theta + reg + self.penalty.bound * pen)
    }

    /// Gradient of the full objective with respect to model `b`.
    pub fn grad_phi<M: AsRef<[T]>>(
        &self,
        models: &[M],
        w: &MixtureWeights<T>,
        a: &AlphaMatrix<T>,
        b: usize,
    ) -> Result<Vec<T>> {
        self.check(models, w, a)?;
        if b >= self.num_bs() {
            return Err(Error::InvalidParameter(format!("model index {b} out of range")));
        }
        let phi = models[b].as_ref();
        let mut acc = vec![T::zero(); self.tiles];
        for (bp, d) in self.data.iter().enumerate() {
            let coef = w.as_slice()[bp] * a.get(bp, b);
            if coef != T::zero() {
                let (_, g) = empirical_loss_grad(phi, d, &self.spec)?;
                accumulate_scaled(&mut acc, coef, &g);
            }
        }
        add_norm_subgradient(&mut acc, phi, self.rho[b]);
        Ok(acc)
    }

    /// Gradient of the full objective with respect to row `b` of alpha.
    pub fn grad_alpha<M: AsRef<[T]>>(
        &self,
        models: &[M],
        w: &MixtureWeights<T>,
        a: &AlphaMatrix<T>,
        v: &DiscrepancyMatrix<T>,
        b: usize,
    ) -> Result<Vec<T>> {
        self.check(models, w, a)?;
        if b >= self.num_bs() {
            return Err(Error::InvalidParameter(format!("alpha row {b} out of range")));
        }
        let losses: Vec<T> = models
            .iter()
            .map(|m| empirical_loss(m.as_ref(), &self.data[b], &self.spec))
            .collect::<Result<_>>()?;
        let sizes = self.sizes();
        let (sqrt_term, half_log) = sqrt_term_parts(w.as_slice(), a, &sizes, &self.penalty);
        Ok(alpha_row_gradient(
            w.as_slice()[b],
            a.row(b),
            &losses,
            v.row(b),
            sizes[b],
            sqrt_term,
            half_log,
            self.penalty.bound,
        ))
    }
}

/// Row gradient `w_b L_b(phi_i) + H dP/dalpha_{b,i}` from locally available
/// quantities. `sqrt_term` is the current concentration term.
#[allow(clippy::too_many_arguments)]
pub(crate) fn alpha_row_gradient<T: Real>(
    wb: T,
    alpha_row: &[T],
    losses: &[T],
    v_row: &[T],
    mb: usize,
    sqrt_term: T,
    half_log: T,
    bound: T,
) -> Vec<T> {
    let mb = T::from_usize_lossy(mb);
    let scale = wb / mb;
    alpha_row
        .iter()
        .zip(losses)
        .zip(v_row)
        .map(|((&ab, &l), &vb)| {
            let conc = if sqrt_term > T::zero() {
                half_log * scale * scale * ab / sqrt_term
            } else {
                T::zero()
            };
            wb * l + bound * conc + wb * vb
        })
        .collect()
}

/// Concentration term from per-BS shares `q_b = sum_i (alpha_{b,i} / m_b)^2`.
pub(crate) fn sqrt_term_from_shares<T: Real>(w: &[T], shares: &[T], params: &PenaltyParams<T>) -> (T, T) {
    let half_log = T::lit(0.5) * params.log_term();
    let mut sum_sq = T::zero();
    for (&wb, &q) in w.iter().zip(shares) {
        sum_sq += wb * wb * q;
    }
    ((half_log * sum_sq).sqrt(), half_log)
}
