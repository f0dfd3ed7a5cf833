//! Cache-hit metrics and the experiment runner.

mod config;
mod experiment;

pub use config::{Algorithm, BaselineParams, DataSource, ExperimentConfig, ExperimentSection};
pub use experiment::{load_datasets, read_metrics_csv, run_experiment, write_metrics_csv, MetricRow};

use crate::baselines::top_k;
use crate::domain::BsDataset;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// The `cache_size` tiles with the largest weight, ties to the lower index;
/// ascending.
pub fn cache_set_from_model<T: Real>(phi: &[T], cache_size: usize) -> Result<Vec<usize>> {
    if cache_size > phi.len() {
        return Err(Error::InvalidParameter(format!(
            "cache size {cache_size} exceeds {} tiles",
            phi.len()
        )));
    }
    Ok(top_k(phi, cache_size))
}

/// `(hit demand, total demand)` of one station: demand-weighted count of
/// requested tiles present in its cache.
fn station_tally<T: Real>(cache: &[usize], test: &BsDataset<T>) -> Result<(f64, f64)> {
    let tiles = test.num_tiles();
    let mut cached = vec![false; tiles];
    for &t in cache {
        *cached
            .get_mut(t)
            .ok_or_else(|| Error::OutOfRange(format!("cached tile {t} >= {tiles}")))? = true;
    }
    let (mut hit, mut total) = (0.0, 0.0);
    for s in test.samples() {
        for (f, &y) in s.label().iter().enumerate() {
            let y = y.to_f64_lossy();
            total += y;
            if cached[f] {
                hit += y;
            }
        }
    }
    Ok((hit, total))
}

fn tallies<T: Real>(caches: &[Vec<usize>], tests: &[BsDataset<T>]) -> Result<Vec<(f64, f64)>> {
    if caches.len() != tests.len() {
        return Err(Error::DimensionMismatch {
            expected: tests.len(),
            actual: caches.len(),
            context: "caches vs test sets",
        });
    }
    caches.iter().zip(tests).map(|(c, t)| station_tally(c, t)).collect()
}

/// Network-wide fraction of requested tiles served from the requesting
/// station's cache. Each tile request is weighted by its normalised demand.
pub fn avg_cache_hit<T: Real>(caches: &[Vec<usize>], tests: &[BsDataset<T>]) -> Result<f64> {
    let t = tallies(caches, tests)?;
    let (hit, total) = t.iter().fold((0.0, 0.0), |(h, n), &(a, b)| (h + a, n + b));
    if total <= 0.0 {
        return Err(Error::Empty("test sets contain no requests"));
    }
    Ok(hit / total)
}

/// Smallest per-station hit fraction, skipping stations without requests.
pub fn min_per_bs_hit<T: Real>(caches: &[Vec<usize>], tests: &[BsDataset<T>]) -> Result<f64> {
    tallies(caches, tests)?
        .iter()
        .filter(|(_, total)| *total > 0.0)
        .map(|(hit, total)| hit / total)
        .reduce(f64::min)
        .ok_or(Error::Empty("every station has an empty test set"))
}

/// Hit fraction of every station (NaN where a station has no requests).
pub fn per_bs_hits<T: Real>(caches: &[Vec<usize>], tests: &[BsDataset<T>]) -> Result<Vec<f64>> {
    Ok(tallies(caches, tests)?
        .iter()
        .map(|&(h, n)| if n > 0.0 { h / n } else { f64::NAN })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::TileGrid;

    fn ds(b: usize, ys: Vec<Vec<f64>>) -> BsDataset<f64> {
        let g = TileGrid::new(1, ys[0].len()).unwrap();
        BsDataset::from_rows(b, ys.into_iter().map(|y| (vec![0.0; y.len()], y)).collect(), &g).unwrap()
    }

    #[test]
    fn cache_set_examples() {
        assert_eq!(cache_set_from_model(&[0.25; 4], 1).unwrap(), vec![0]);
        assert_eq!(cache_set_from_model(&[0.0, 0.0, 0.0, 1.0], 1).unwrap(), vec![3]);
        assert_eq!(cache_set_from_model(&[0.2, 0.9, 0.9, 0.1], 2).unwrap(), vec![1, 2]);
        assert!(cache_set_from_model(&[0.2, 0.9], 3).is_err());
    }

    #[test]
    fn hit_examples() {
        let tests = [
            ds(0, vec![vec![1.0, 0.5, 0.0, 0.0]]),
            ds(1, vec![vec![0.0, 0.0, 1.0, 1.0], vec![0.0, 0.0, 0.0, 1.0]]),
        ];
        let all = vec![vec![0, 1, 2, 3]; 2];
        assert_eq!(avg_cache_hit(&all, &tests).unwrap(), 1.0);
        let none = vec![vec![2, 3], vec![0, 1]];
        assert_eq!(avg_cache_hit(&none, &tests).unwrap(), 0.0);
        // BS 0 hits 1.0 of 1.5, BS 1 hits 2.0 of 3.0.
        let caches = vec![vec![0], vec![3]];
        assert!((avg_cache_hit(&caches, &tests).unwrap() - 3.0 / 4.5).abs() < 1e-15);
        assert!((min_per_bs_hit(&caches, &tests).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let one_missed = vec![vec![0, 1], vec![0]];
        assert_eq!(min_per_bs_hit(&one_missed, &tests).unwrap(), 0.0);
    }

    #[test]
    fn zero_demand_stations_are_skipped() {
        let tests = [ds(0, vec![vec![0.0, 0.0]]), ds(1, vec![vec![1.0, 0.0]])];
        assert_eq!(min_per_bs_hit(&[vec![1], vec![0]], &tests).unwrap(), 1.0);
        assert!(min_per_bs_hit(&[vec![1]], &tests[..1]).is_err());
    }
}
