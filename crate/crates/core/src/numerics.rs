//! Simplex geometry: Euclidean projections and the lattice cover of the
//! mixture set.

use crate::domain::{MixtureSet, MixtureWeights, SIMPLEX_TOL};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Largest cover the lattice builder will enumerate.
pub const MAX_COVER_SIZE: u128 = 5_000_000;

fn check_finite<T: Real>(v: &[T], what: &'static str) -> Result<()> {
    if v.is_empty() {
        return Err(Error::Empty(what));
    }
    if let Some((i, x)) = v.iter().enumerate().find(|(_, x)| !x.is_finite()) {
        return Err(Error::NonFinite(format!("{what}: entry {i} = {x}")));
    }
    Ok(())
}

/// Euclidean projection onto the probability simplex, by sort and threshold.
pub fn project_simplex_vec<T: Real>(v: &[T]) -> Result<Vec<T>> {
    check_finite(v, "simplex projection input")?;
    if v.len() == 1 {
        return Ok(vec![T::one()]);
    }
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
    let mut cumsum = T::zero();
    let mut theta = T::zero();
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - T::one()) / T::from_usize_lossy(j + 1);
        if uj - t > T::zero() {
            theta = t;
        }
    }
    Ok(v.iter().map(|&x| (x - theta).max(T::zero())).collect())
}

/// [`project_simplex_vec`] wrapped as mixture weights.
pub fn project_simplex<T: Real>(v: &[T]) -> Result<MixtureWeights<T>> {
    project_simplex_vec(v).map(MixtureWeights::from_simplex)
}

fn capped_sum<T: Real>(v: &[T], tau: T, cap: T) -> T {
    let mut s = T::zero();
    for &x in v {
        s += (x - tau).max(T::zero()).min(cap);
    }
    s
}

/// Euclidean projection onto `{phi : 0 <= phi_f <= cap, sum phi = total}`.
///
/// The solution is `clamp(v - tau, 0, cap)` for the unique `tau` hitting the
/// budget; `tau` is located exactly on the piecewise-linear sum by binary
/// search over the sorted breakpoints.
pub fn project_capped_simplex<T: Real>(v: &[T], cap: T, total: T) -> Result<Vec<T>> {
    check_finite(v, "capped simplex projection input")?;
    let n = T::from_usize_lossy(v.len());
    if !(cap > T::zero()) || !(total >= T::zero()) || total > cap * n {
        return Err(Error::Infeasible(format!(
            "no point with {} entries in [0, {cap}] sums to {total}",
            v.len()
        )));
    }
    if total == cap * n {
        return Ok(vec![cap; v.len()]);
    }
    if total == T::zero() {
        return Ok(vec![T::zero(); v.len()]);
    }
    let mut knots: Vec<T> = v.iter().flat_map(|&x| [x - cap, x]).collect();
    knots.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    // capped_sum is nonincreasing in tau: find the last knot with sum >= total.
    let (mut lo, mut hi) = (0usize, knots.len() - 1);
    if capped_sum(v, knots[0], cap) < total {
        unreachable!("sum at the lowest knot is cap * n");
    }
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if capped_sum(v, knots[mid], cap) >= total {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    let ta = knots[lo];
    let sa = capped_sum(v, ta, cap);
    let tau = if lo + 1 < knots.len() {
        let tb = knots[lo + 1];
        let sb = capped_sum(v, tb, cap);
        if sa > sb {
            ta + (sa - total) * (tb - ta) / (sa - sb)
        } else {
            ta
        }
    } else {
        ta
    };
    Ok(v.iter().map(|&x| (x - tau).max(T::zero()).min(cap)).collect())
}

/// A finite set of mixtures within l1 distance `epsilon` of every point of
/// the mixture set.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsCover<T> {
    centers: Vec<MixtureWeights<T>>,
    epsilon: T,
    resolution: usize,
}

impl<T: Real> EpsCover<T> {
    pub fn centers(&self) -> &[MixtureWeights<T>] {
        &self.centers
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    /// Cardinality `|Lambda_eps|`.
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Lattice denominator `K`; centres are `k / K` with integer `k`.
    pub fn resolution(&self) -> usize {
        self.resolution
    }

    /// A cover holding exactly the given centres.
    pub fn from_centers(centers: Vec<MixtureWeights<T>>, epsilon: T) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::Empty("cover without centres"));
        }
        Ok(Self {
            centers,
            epsilon,
            resolution: 0,
        })
    }
}

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r.saturating_mul(n - i) / (i + 1);
    }
    r
}

/// Number of lattice points `k / K` on the simplex over `b` coordinates.
pub fn lattice_size(b: usize, k: usize) -> u128 {
    binomial((k + b - 1) as u128, (b - 1) as u128)
}

fn lattice_resolution(num_bs: usize, epsilon: f64) -> usize {
    (num_bs as f64 / epsilon - 1e-12).ceil().max(1.0) as usize
}

/// Cardinality of the cover [`build_cover_for`] would return, without
/// enumerating it when the mixture set is the full simplex.
pub fn cover_cardinality(set: &MixtureSet, num_bs: usize, epsilon: f64) -> Result<usize> {
    match set {
        MixtureSet::Simplex => {
            if num_bs == 0 {
                return Err(Error::Empty("cover over zero base stations"));
            }
            if !(epsilon > 0.0 && epsilon <= 2.0) {
                return Err(Error::InvalidParameter(format!(
                    "cover radius must lie in (0, 2], got {epsilon}"
                )));
            }
            if num_bs == 1 {
                return Ok(1);
            }
            let size = lattice_size(num_bs, lattice_resolution(num_bs, epsilon));
            Ok(usize::try_from(size).unwrap_or(usize::MAX))
        }
        MixtureSet::Box { .. } => build_cover_for::<f64>(set, num_bs, epsilon).map(|c| c.len()),
    }
}

/// Builds the lattice cover `{k / K : sum k = K}` of the full simplex with
/// `K = ceil(B / epsilon)`: rounding any mixture to the lattice moves each
/// coordinate by less than `1 / K`, so the l1 distance stays within `epsilon`.
pub fn build_eps_cover<T: Real>(num_bs: usize, epsilon: f64) -> Result<EpsCover<T>> {
    if num_bs == 0 {
        return Err(Error::Empty("cover over zero base stations"));
    }
    if !(epsilon > 0.0 && epsilon <= 2.0) {
        return Err(Error::InvalidParameter(format!(
            "cover radius must lie in (0, 2], got {epsilon}"
        )));
    }
    if num_bs == 1 {
        return Ok(EpsCover {
            centers: vec![MixtureWeights::from_simplex(vec![T::one()])],
            epsilon: T::lit(epsilon),
            resolution: 1,
        });
    }
    let k = lattice_resolution(num_bs, epsilon);
    let size = lattice_size(num_bs, k);
    if size > MAX_COVER_SIZE {
        return Err(Error::InvalidParameter(format!(
            "cover of {num_bs} stations at radius {epsilon} has {size} centres (limit {MAX_COVER_SIZE})"
        )));
    }
    let denom = T::from_usize_lossy(k);
    let mut centers = Vec::with_capacity(size as usize);
    let mut counts = vec![0usize; num_bs];
    enumerate_compositions(&mut counts, 0, k, &mut |c| {
        centers.push(MixtureWeights::from_simplex(
            c.iter().map(|&x| T::from_usize_lossy(x) / denom).collect(),
        ));
    });
    Ok(EpsCover {
        centers,
        epsilon: T::lit(epsilon),
        resolution: k,
    })
}

/// Cover of the configured mixture set. For a box, lattice points outside
/// the box are dropped; this stays a cover when the box bounds lie on the
/// lattice.
pub fn build_cover_for<T: Real>(set: &MixtureSet, num_bs: usize, epsilon: f64) -> Result<EpsCover<T>> {
    let full = build_eps_cover::<T>(num_bs, epsilon)?;
    match *set {
        MixtureSet::Simplex => Ok(full),
        MixtureSet::Box { lower, upper } => {
            let (lo, hi) = (T::lit(lower - SIMPLEX_TOL), T::lit(upper + SIMPLEX_TOL));
            let resolution = full.resolution;
            let centers: Vec<_> = full
                .centers
                .into_iter()
                .filter(|c| c.as_slice().iter().all(|&x| x >= lo && x <= hi))
                .collect();
            if centers.is_empty() {
                return Err(Error::Infeasible(format!(
                    "no lattice point of resolution {resolution} lies in the box [{lower}, {upper}]"
                )));
            }
            Ok(EpsCover {
                centers,
                epsilon: T::lit(epsilon),
                resolution,
            })
        }
    }
}

fn enumerate_compositions(counts: &mut [usize], pos: usize, remaining: usize, emit: &mut impl FnMut(&[usize])) {
    if pos + 1 == counts.len() {
        counts[pos] = remaining;
        emit(counts);
        return;
    }
    for c in 0..=remaining {
        counts[pos] = c;
        enumerate_compositions(counts, pos + 1, remaining - c, emit);
    }
}
