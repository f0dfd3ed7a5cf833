#![allow(dead_code)]

use fedcache::domain::{BsDataset, Sample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn sample(x: &[f64], y: &[f64]) -> Sample<f64> {
    Sample::new(x.to_vec(), y.to_vec()).unwrap()
}

pub fn dataset(bs: usize, rows: &[(&[f64], &[f64])]) -> BsDataset<f64> {
    BsDataset::new(bs, rows.iter().map(|(x, y)| sample(x, y)).collect()).unwrap()
}

/// Max-normalised random demand, as the generator produces it.
pub fn demand(rng: &mut ChaCha8Rng, tiles: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..tiles).map(|_| rng.random::<f64>()).collect();
    let m = raw.iter().cloned().fold(0.0, f64::max);
    raw.iter().map(|r| r / m).collect()
}

pub fn random_dataset(rng: &mut ChaCha8Rng, bs: usize, m: usize, tiles: usize) -> BsDataset<f64> {
    let samples = (0..m)
        .map(|_| Sample::new(demand(rng, tiles), demand(rng, tiles)).unwrap())
        .collect();
    BsDataset::new(bs, samples).unwrap()
}

/// A random point of `{0 <= phi <= 1, sum phi = c}`, kept away from the
/// box faces so small perturbations stay interior.
pub fn interior_model(rng: &mut ChaCha8Rng, tiles: usize, c: f64) -> Vec<f64> {
    loop {
        let raw: Vec<f64> = (0..tiles).map(|_| 0.1 + rng.random::<f64>()).collect();
        let s: f64 = raw.iter().sum();
        let phi: Vec<f64> = raw.iter().map(|r| r * c / s).collect();
        if phi.iter().all(|&p| p > 0.05 && p < 0.95) {
            return phi;
        }
    }
}

pub fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

pub fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Every point of `{0 <= g <= cap, sum g = total}` on a lattice of pitch
/// `1 / steps`, enumerated recursively.
pub fn capped_grid(dim: usize, steps: usize, cap: f64, total: f64) -> Vec<Vec<f64>> {
    let units = (total * steps as f64).round() as usize;
    let cap_units = (cap * steps as f64).round() as usize;
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(dim);
    fn rec(dim: usize, left: usize, cap: usize, steps: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if cur.len() + 1 == dim {
            if left <= cap {
                cur.push(left);
                out.push(cur.iter().map(|&u| u as f64 / steps as f64).collect());
                cur.pop();
            }
            return;
        }
        for u in 0..=left.min(cap) {
            cur.push(u);
            rec(dim, left - u, cap, steps, cur, out);
            cur.pop();
        }
    }
    rec(dim, units, cap_units, steps, &mut cur, &mut out);
    out
}
