use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Gamma;
use serde::{Deserialize, Serialize};

use crate::domain::{BsDataset, Sample, TileGrid};
use crate::error::{Error, Result};
use crate::scalar::Real;

use super::normalize_counts;
use super::tiling::fov_tiles;

/// Parameters of the synthetic non-iid demand generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub num_bs: usize,
    pub grid: TileGrid,
    /// Heads observed per station and window.
    pub users_per_bs: usize,
    pub samples_per_bs: usize,
    /// Dirichlet concentration of each station's tile popularity; small
    /// values give skewed, dissimilar stations.
    pub gamma: f64,
    #[serde(default = "default_fov")]
    pub fov_deg: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_fov() -> f64 {
    100.0
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        TileGrid::new(self.grid.rows(), self.grid.cols())?;
        if self.num_bs == 0 {
            return Err(Error::InvalidParameter("num_bs must be >= 1".into()));
        }
        if self.users_per_bs == 0 {
            return Err(Error::InvalidParameter("users_per_bs must be >= 1".into()));
        }
        if self.samples_per_bs == 0 {
            return Err(Error::Empty("samples_per_bs is zero"));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gamma must be > 0, got {}",
                self.gamma
            )));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg <= 180.0) {
            return Err(Error::InvalidParameter(format!(
                "fov_deg must lie in (0, 180], got {}",
                self.fov_deg
            )));
        }
        Ok(())
    }
}

/// Random generator for station `b`: one ChaCha stream per station.
pub(crate) fn station_rng(seed: u64, b: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b as u64 + 1);
    rng
}

/// Dirichlet draw as normalised Gamma variates.
fn dirichlet(rng: &mut ChaCha8Rng, gamma: f64, n: usize) -> Result<Vec<f64>> {
    let g = Gamma::new(gamma, 1.0).map_err(|e| Error::InvalidParameter(format!("gamma: {e}")))?;
    let mut p: Vec<f64> = (0..n).map(|_| g.sample(rng)).collect();
    let total: f64 = p.iter().sum();
    if total > 0.0 && total.is_finite() {
        p.iter_mut().for_each(|x| *x /= total);
    } else {
        // Every variate underflowed: fall back to a random vertex.
        let k = rng.random_range(0..n);
        p = vec![0.0; n];
        p[k] = 1.0;
    }
    Ok(p)
}

fn window_counts(rng: &mut ChaCha8Rng, pick: &WeightedIndex<f64>, cfg: &GenConfig) -> Result<Vec<u32>> {
    let g = &cfg.grid;
    let (tw, th) = (360.0 / g.cols() as f64, 180.0 / g.rows() as f64);
    let mut counts = vec![0u32; g.num_tiles()];
    for _ in 0..cfg.users_per_bs {
        let tile = pick.sample(rng);
        let (r, c) = (tile / g.cols(), tile % g.cols());
        let yaw = -180.0 + (c as f64 + rng.random::<f64>()) * tw;
        let pitch = 90.0 - (r as f64 + rng.random::<f64>()) * th;
        for t in fov_tiles(yaw, pitch.clamp(-90.0, 90.0), cfg.fov_deg, g)? {
            counts[t] += 1;
        }
    }
    Ok(counts)
}

/// Tile popularity profile of every station, as drawn by [`synth_noniid`].
pub fn station_profiles(cfg: &GenConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    (0..cfg.num_bs)
        .map(|b| dirichlet(&mut station_rng(cfg.seed, b), cfg.gamma, cfg.grid.num_tiles()))
        .collect()
}

fn draw_station<T: Real>(
    rng: &mut ChaCha8Rng,
    bs_id: usize,
    profile: &[f64],
    samples: usize,
    cfg: &GenConfig,
) -> Result<BsDataset<T>> {
    let pick = WeightedIndex::new(profile).map_err(|e| Error::InvalidParameter(format!("tile profile: {e}")))?;
    let mut prev = normalize_counts::<T>(&window_counts(rng, &pick, cfg)?);
    let mut out = Vec::with_capacity(samples);
    for _ in 0..samples {
        let y = normalize_counts::<T>(&window_counts(rng, &pick, cfg)?);
        out.push(Sample::new(prev, y.clone())?);
        prev = y;
    }
    BsDataset::new(bs_id, out)
}

/// Draws one dataset per station. Each station has its own Dirichlet tile
/// popularity; in every window each user looks at a point of a tile drawn
/// from it, and the union of FOV counts gives the demand. Samples pair the
/// previous window's normalised demand (features) with the current one
/// (label).
pub fn synth_noniid<T: Real>(cfg: &GenConfig) -> Result<Vec<BsDataset<T>>> {
    cfg.validate()?;
    let f = cfg.grid.num_tiles();
    (0..cfg.num_bs)
        .map(|b| {
            let mut rng = station_rng(cfg.seed, b);
            let profile = dirichlet(&mut rng, cfg.gamma, f)?;
            draw_station(&mut rng, b, &profile, cfg.samples_per_bs, cfg)
        })
        .collect()
}

/// Fresh datasets of `samples` windows per station from fixed `profiles`,
/// with sampling randomness from `seed`.
pub fn synth_from_profiles<T: Real>(
    cfg: &GenConfig,
    profiles: &[Vec<f64>],
    samples: usize,
    seed: u64,
) -> Result<Vec<BsDataset<T>>> {
    cfg.validate()?;
    if samples == 0 {
        return Err(Error::Empty("zero samples requested"));
    }
    profiles
        .iter()
        .enumerate()
        .map(|(b, p)| {
            if p.len() != cfg.grid.num_tiles() {
                return Err(Error::DimensionMismatch {
                    expected: cfg.grid.num_tiles(),
                    actual: p.len(),
                    context: "tile profile",
                });
            }
            draw_station(&mut station_rng(seed, b), b, p, samples, cfg)
        })
        .collect()
}
