//! Core data types. Every constructor validates its invariants, so a value of
//! one of these types is always well-formed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{ordered_sum, Real};

/// Tolerance on simplex sums (mixture weights, collaboration rows).
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Equirectangular tile grid of `rows x cols` tiles, indexed row-major from
/// the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileGrid {
    rows: usize,
    cols: usize,
}

impl TileGrid {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidParameter(format!(
                "tile grid must be at least 1x1, got {rows}x{cols}"
            )));
        }
        Ok(Self { rows, cols })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn num_tiles(&self) -> usize {
        self.rows * self.cols
    }

    pub fn tile_id(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }
}

/// One labelled observation: per-tile features and normalised tile demand.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    features: Vec<T>,
    label: Vec<T>,
}

impl<T: Real> Sample<T> {
    pub fn new(features: Vec<T>, label: Vec<T>) -> Result<Self> {
        if features.len() != label.len() {
            return Err(Error::DimensionMismatch {
                expected: label.len(),
                actual: features.len(),
                context: "sample features vs label",
            });
        }
        if features.is_empty() {
            return Err(Error::Empty("sample has no tiles"));
        }
        if let Some((f, x)) = features
            .iter()
            .enumerate()
            .find(|(_, x)| !x.is_finite() || **x < T::zero())
        {
            return Err(Error::OutOfRange(format!(
                "feature {f} = {x} must be finite and nonnegative"
            )));
        }
        if let Some((f, y)) = label
            .iter()
            .enumerate()
            .find(|(_, y)| !(**y >= T::zero() && **y <= T::one()))
        {
            return Err(Error::OutOfRange(format!("label {f} = {y} outside [0, 1]")));
        }
        Ok(Self { features, label })
    }

    pub fn features(&self) -> &[T] {
        &self.features
    }

    pub fn label(&self) -> &[T] {
        &self.label
    }

    pub fn num_tiles(&self) -> usize {
        self.label.len()
    }
}

/// The labelled samples held by one base station.
#[derive(Debug, Clone, PartialEq)]
pub struct BsDataset<T> {
    bs_id: usize,
    samples: Vec<Sample<T>>,
}

impl<T: Real> BsDataset<T> {
    pub fn new(bs_id: usize, samples: Vec<Sample<T>>) -> Result<Self> {
        let first = samples.first().ok_or(Error::Empty("dataset has no samples"))?;
        let f = first.num_tiles();
        if let Some(bad) = samples.iter().find(|s| s.num_tiles() != f) {
            return Err(Error::DimensionMismatch {
                expected: f,
                actual: bad.num_tiles(),
                context: "samples within one dataset",
            });
        }
        Ok(Self { bs_id, samples })
    }

    /// Builds a dataset from raw `(features, label)` rows and checks it
    /// against `grid`.
    pub fn from_rows(bs_id: usize, rows: Vec<(Vec<T>, Vec<T>)>, grid: &TileGrid) -> Result<Self> {
        let samples = rows
            .into_iter()
            .map(|(x, y)| Sample::new(x, y))
            .collect::<Result<Vec<_>>>()?;
        let d = Self::new(bs_id, samples)?;
        validate_dataset(&d, grid)?;
        Ok(d)
    }

    pub fn bs_id(&self) -> usize {
        self.bs_id
    }

    pub fn samples(&self) -> &[Sample<T>] {
        &self.samples
    }

    /// Sample count `m_b`.
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_tiles(&self) -> usize {
        self.samples[0].num_tiles()
    }

    /// Splits by sample order: the first `ceil(fraction * m)` samples train,
    /// the rest test. Both halves keep at least one sample.
    pub fn split(&self, fraction: f64) -> Result<(Self, Self)> {
        if self.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "BS {} needs at least 2 samples to split, has {}",
                self.bs_id,
                self.len()
            )));
        }
        let cut = ((fraction * self.len() as f64).ceil() as usize).clamp(1, self.len() - 1);
        let (a, b) = self.samples.split_at(cut);
        Ok((Self::new(self.bs_id, a.to_vec())?, Self::new(self.bs_id, b.to_vec())?))
    }
}

/// Checks `d` against the grid: every sample has `F` tiles and labels in `[0, 1]`.
pub fn validate_dataset<T: Real>(d: &BsDataset<T>, grid: &TileGrid) -> Result<()> {
    let f = grid.num_tiles();
    for (j, s) in d.samples().iter().enumerate() {
        if s.features().len() != f {
            return Err(Error::DimensionMismatch {
                expected: f,
                actual: s.features().len(),
                context: "sample features vs tile grid",
            });
        }
        if s.label().len() != f {
            return Err(Error::DimensionMismatch {
                expected: f,
                actual: s.label().len(),
                context: "sample label vs tile grid",
            });
        }
        if s.label().iter().any(|y| !(*y >= T::zero() && *y <= T::one())) {
            return Err(Error::OutOfRange(format!("sample {j} has a label outside [0, 1]")));
        }
    }
    Ok(())
}

/// Checks that all datasets share one tile count and returns it.
pub(crate) fn common_tiles<T: Real>(datasets: &[BsDataset<T>]) -> Result<usize> {
    let f = datasets
        .first()
        .ok_or(Error::Empty("no base-station datasets"))?
        .num_tiles();
    if let Some(d) = datasets.iter().find(|d| d.num_tiles() != f) {
        return Err(Error::DimensionMismatch {
            expected: f,
            actual: d.num_tiles(),
            context: "tile count across base stations",
        });
    }
    Ok(f)
}

/// Per-BS caching strategy `phi_b`: entries in `[0, 1]`, sum at most the budget.
#[derive(Debug, Clone, PartialEq)]
pub struct CachingModel<T> {
    bs_id: usize,
    phi: Vec<T>,
}

impl<T: Real> CachingModel<T> {
    pub fn new(bs_id: usize, phi: Vec<T>, budget: T) -> Result<Self> {
        if phi.is_empty() {
            return Err(Error::Empty("caching model has no tiles"));
        }
        if let Some((f, p)) = phi
            .iter()
            .enumerate()
            .find(|(_, p)| !(**p >= T::zero() && **p <= T::one()))
        {
            return Err(Error::OutOfRange(format!("phi[{f}] = {p} outside [0, 1]")));
        }
        let total = ordered_sum(phi.iter().copied());
        if total > budget + T::lit(1e-9) * budget.max(T::one()) {
            return Err(Error::Infeasible(format!(
                "caching model sums to {total}, above budget {budget}"
            )));
        }
        Ok(Self { bs_id, phi })
    }

    /// Wraps a vector already produced by a feasibility-preserving routine.
    pub(crate) fn from_feasible(bs_id: usize, phi: Vec<T>) -> Self {
        Self { bs_id, phi }
    }

    /// The all-zero model (empty cache). Always feasible.
    pub fn zeros(bs_id: usize, tiles: usize) -> Self {
        Self {
            bs_id,
            phi: vec![T::zero(); tiles],
        }
    }

    pub fn bs_id(&self) -> usize {
        self.bs_id
    }

    pub fn phi(&self) -> &[T] {
        &self.phi
    }

    pub fn into_phi(self) -> Vec<T> {
        self.phi
    }

    pub fn num_tiles(&self) -> usize {
        self.phi.len()
    }
}

fn check_simplex<T: Real>(v: &[T], what: &str) -> Result<()> {
    if v.is_empty() {
        return Err(Error::Empty("simplex point has no coordinates"));
    }
    if let Some((i, x)) = v
        .iter()
        .enumerate()
        .find(|(_, x)| !(**x >= T::zero()) || !x.is_finite())
    {
        return Err(Error::OutOfRange(format!("{what}[{i}] = {x} must be nonnegative")));
    }
    let s = ordered_sum(v.iter().copied()).to_f64_lossy();
    if (s - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::OutOfRange(format!("{what} sums to {s}, expected 1")));
    }
    Ok(())
}

/// Target mixture `w` on the simplex over base stations.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureWeights<T> {
    w: Vec<T>,
}

impl<T: Real> MixtureWeights<T> {
    pub fn new(w: Vec<T>) -> Result<Self> {
        check_simplex(&w, "w")?;
        Ok(Self { w })
    }

    pub(crate) fn from_simplex(w: Vec<T>) -> Self {
        Self { w }
    }

    pub fn uniform(num_bs: usize) -> Result<Self> {
        if num_bs == 0 {
            return Err(Error::Empty("mixture over zero base stations"));
        }
        Ok(Self {
            w: vec![T::one() / T::from_usize_lossy(num_bs); num_bs],
        })
    }

    /// `w_b` proportional to the dataset sizes `m_b`.
    pub fn proportional(sizes: &[usize]) -> Result<Self> {
        let total: usize = sizes.iter().sum();
        if sizes.is_empty() || total == 0 {
            return Err(Error::Empty("mixture over empty datasets"));
        }
        let total = T::from_usize_lossy(total);
        Ok(Self {
            w: sizes.iter().map(|&m| T::from_usize_lossy(m) / total).collect(),
        })
    }

    pub fn as_slice(&self) -> &[T] {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

/// Row-stochastic collaboration weights `alpha[b][i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaMatrix<T> {
    rows: Vec<Vec<T>>,
}

impl<T: Real> AlphaMatrix<T> {
    pub fn new(rows: Vec<Vec<T>>) -> Result<Self> {
        let b = rows.len();
        if b == 0 {
            return Err(Error::Empty("alpha matrix has no rows"));
        }
        for r in &rows {
            if r.len() != b {
                return Err(Error::DimensionMismatch {
                    expected: b,
                    actual: r.len(),
                    context: "alpha row length",
                });
            }
            check_simplex(r, "alpha row")?;
        }
        Ok(Self { rows })
    }

    pub(crate) fn from_rows_unchecked(rows: Vec<Vec<T>>) -> Self {
        Self { rows }
    }

    pub fn uniform(num_bs: usize) -> Result<Self> {
        if num_bs == 0 {
            return Err(Error::Empty("alpha matrix has no rows"));
        }
        let v = T::one() / T::from_usize_lossy(num_bs);
        Ok(Self {
            rows: vec![vec![v; num_bs]; num_bs],
        })
    }

    pub fn identity(num_bs: usize) -> Result<Self> {
        if num_bs == 0 {
            return Err(Error::Empty("alpha matrix has no rows"));
        }
        Ok(Self {
            rows: (0..num_bs)
                .map(|b| (0..num_bs).map(|i| if b == i { T::one() } else { T::zero() }).collect())
                .collect(),
        })
    }

    pub fn size(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, b: usize) -> &[T] {
        &self.rows[b]
    }

    pub fn get(&self, b: usize, i: usize) -> T {
        self.rows[b][i]
    }

    pub fn rows(&self) -> &[Vec<T>] {
        &self.rows
    }
}

/// How the per-tile error entering the log-MSE loss is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorModel {
    /// `e_f = (clamp(phi_f * x_f, 0, 1) - y_f)^2`, the bilinear predictor.
    Predicted,
    /// `e_f = (1 - y_f)^2`: the error tile `f` incurs when it is cached. The
    /// loss is then linear in `phi` and agrees with the binary-cache loss at
    /// every integral `phi`.
    #[default]
    CachedTile,
}

/// Loss-shaping constants: the MSE floor, the per-addend bound `H`, and the
/// error model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec<T> {
    pub e_floor: T,
    pub bound: T,
    pub model: ErrorModel,
}

impl<T: Real> LossSpec<T> {
    pub fn new(e_floor: T, bound: T, model: ErrorModel) -> Self {
        Self { e_floor, bound, model }
    }
}

/// Policy for the target mixture `w` during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightPolicy {
    Uniform,
    Proportional,
    /// Per round, the cover centre maximising the weighted objective.
    #[default]
    Adversarial,
}

/// The set `Lambda` of admissible mixtures.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MixtureSet {
    #[default]
    Simplex,
    /// Simplex intersected with the box `lower <= w_b <= upper`.
    Box { lower: f64, upper: f64 },
}

fn default_rho() -> Vec<f64> {
    vec![0.01]
}

/// Training and bound hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    /// Outer rounds `T`.
    pub rounds: usize,
    /// Discrepancy ascent steps per pair and round.
    pub inner_steps: usize,
    /// Discrepancy ascent step size `mu`.
    pub ascent_step: f64,
    /// Descent step size `eta` on the caching models.
    pub descent_step: f64,
    /// Base step size `upsilon` on the collaboration weights.
    pub alpha_step: f64,
    /// Use `upsilon / sqrt(t)` instead of a constant step.
    pub alpha_step_decay: bool,
    /// Regularizer weights `rho_b`; a single entry applies to every BS.
    #[serde(default = "default_rho")]
    pub rho: Vec<f64>,
    /// Loss bound `H`.
    pub loss_bound: f64,
    /// Confidence parameter `delta`.
    pub delta: f64,
    /// Cover radius `epsilon`.
    pub eps_cover: f64,
    /// Cache budget `C`, in tiles.
    pub cache_budget: f64,
    /// Floor on the per-tile squared error.
    pub e_floor: f64,
    pub seed: u64,
    pub error_model: ErrorModel,
    pub weight_policy: WeightPolicy,
    pub mixture_set: MixtureSet,
    /// Optional per-round cap on bytes exchanged between base stations.
    pub link_budget_bytes: Option<usize>,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            rounds: 60,
            inner_steps: 10,
            ascent_step: 0.1,
            descent_step: 0.05,
            alpha_step: 0.05,
            alpha_step_decay: true,
            rho: default_rho(),
            loss_bound: 6.0,
            delta: 0.1,
            eps_cover: 0.1,
            cache_budget: 1.0,
            e_floor: 1e-6,
            seed: 0,
            error_model: ErrorModel::default(),
            weight_policy: WeightPolicy::default(),
            mixture_set: MixtureSet::default(),
            link_budget_bytes: None,
        }
    }
}

impl HyperParams {
    /// Checks every invariant that does not depend on the data.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("ascent_step", self.ascent_step),
            ("descent_step", self.descent_step),
            ("alpha_step", self.alpha_step),
            ("loss_bound", self.loss_bound),
            ("e_floor", self.e_floor),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if !(self.eps_cover > 0.0 && self.eps_cover <= 2.0) {
            return Err(Error::InvalidParameter(format!(
                "eps_cover must lie in (0, 2], got {}",
                self.eps_cover
            )));
        }
        if self.inner_steps == 0 {
            return Err(Error::InvalidParameter("inner_steps must be >= 1".into()));
        }
        if self.rho.is_empty() || self.rho.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
            return Err(Error::InvalidParameter("rho must be nonempty and nonnegative".into()));
        }
        if !(self.cache_budget >= 1.0 && self.cache_budget.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "cache_budget must be >= 1, got {}",
                self.cache_budget
            )));
        }
        if let MixtureSet::Box { lower, upper } = self.mixture_set {
            if !(0.0..=1.0).contains(&lower) || !(0.0..=1.0).contains(&upper) || lower > upper {
                return Err(Error::InvalidParameter(format!(
                    "mixture box [{lower}, {upper}] is not a sub-interval of [0, 1]"
                )));
            }
        }
        Ok(())
    }

    /// Validation against a concrete network of `num_bs` stations and `tiles` tiles.
    pub fn validate_for(&self, num_bs: usize, tiles: usize) -> Result<()> {
        self.validate()?;
        if self.cache_budget > tiles as f64 {
            return Err(Error::InvalidParameter(format!(
                "cache_budget {} exceeds tile count {tiles}",
                self.cache_budget
            )));
        }
        if self.rho.len() != 1 && self.rho.len() != num_bs {
            return Err(Error::InvalidParameter(format!(
                "rho has {} entries, expected 1 or {num_bs}",
                self.rho.len()
            )));
        }
        if let MixtureSet::Box { lower, upper } = self.mixture_set {
            if lower * num_bs as f64 > 1.0 + SIMPLEX_TOL || upper * (num_bs as f64) < 1.0 - SIMPLEX_TOL {
                return Err(Error::Infeasible(format!(
                    "mixture box [{lower}, {upper}] does not meet the simplex over {num_bs} stations"
                )));
            }
        }
        Ok(())
    }

    pub fn rho_for(&self, b: usize) -> f64 {
        if self.rho.len() == 1 {
            self.rho[0]
        } else {
            self.rho[b]
        }
    }

    pub fn loss_spec<T: Real>(&self) -> LossSpec<T> {
        LossSpec::new(T::lit(self.e_floor), T::lit(self.loss_bound), self.error_model)
    }

    /// Step size on the collaboration weights in round `t` (1-based).
    pub fn alpha_step_at(&self, t: usize) -> f64 {
        if self.alpha_step_decay {
            self.alpha_step / (t.max(1) as f64).sqrt()
        } else {
            self.alpha_step
        }
    }
}
