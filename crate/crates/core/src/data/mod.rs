//! Tiling geometry, synthetic non-iid demand, and head-trace ingestion.

mod synth;
mod tiling;
mod trace;

pub use synth::{station_profiles, synth_from_profiles, synth_noniid, GenConfig};
pub use tiling::{fov_tiles, tile_index};
pub use trace::{ingest_trace, read_trace, HeadSample};

use std::io::{Read, Write};

use crate::domain::{BsDataset, Sample, TileGrid};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Per-tile demand of one window normalised by its largest count. An empty
/// window yields all zeros.
pub(crate) fn normalize_counts<T: Real>(counts: &[u32]) -> Vec<T> {
    let max = counts.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return vec![T::zero(); counts.len()];
    }
    let m = T::lit(f64::from(max));
    counts.iter().map(|&c| T::lit(f64::from(c)) / m).collect()
}

/// Turns consecutive window demands into `(previous, current)` samples.
/// `None` marks a window without requests: it yields no sample but still
/// serves as an all-zero previous window.
pub(crate) fn pair_windows<T: Real>(bs_id: usize, windows: &[Option<Vec<u32>>], tiles: usize) -> Result<BsDataset<T>> {
    let mut samples = Vec::new();
    let mut prev = vec![T::zero(); tiles];
    for w in windows {
        match w {
            Some(counts) => {
                let y = normalize_counts::<T>(counts);
                samples.push(Sample::new(prev, y.clone())?);
                prev = y;
            }
            None => prev = vec![T::zero(); tiles],
        }
    }
    if samples.is_empty() {
        return Err(Error::Empty("no window with requests"));
    }
    BsDataset::new(bs_id, samples)
}

/// Writes datasets as CSV, one row per sample: `bs_id, sample, x_*, y_*`.
pub fn write_datasets_csv<T: Real, W: Write>(datasets: &[BsDataset<T>], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let tiles = datasets.first().map_or(0, BsDataset::num_tiles);
    let mut header = vec!["bs_id".to_string(), "sample".to_string()];
    header.extend((0..tiles).map(|f| format!("x_{f}")));
    header.extend((0..tiles).map(|f| format!("y_{f}")));
    w.write_record(&header)?;
    for d in datasets {
        for (j, s) in d.samples().iter().enumerate() {
            let mut row = vec![d.bs_id().to_string(), j.to_string()];
            row.extend(
                s.features()
                    .iter()
                    .chain(s.label())
                    .map(|v| format!("{:?}", v.to_f64_lossy())),
            );
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads datasets written by [`write_datasets_csv`], validating each against `grid`.
pub fn read_datasets_csv<T: Real, R: Read>(input: R, grid: &TileGrid) -> Result<Vec<BsDataset<T>>> {
    let tiles = grid.num_tiles();
    let mut rdr = csv::Reader::from_reader(input);
    let mut rows: Vec<(usize, Vec<(Vec<T>, Vec<T>)>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let parse_err = |message: String| Error::Parse { line, message };
        if rec.len() != 2 + 2 * tiles {
            return Err(parse_err(format!(
                "expected {} fields, got {}",
                2 + 2 * tiles,
                rec.len()
            )));
        }
        let bs: usize = rec[0].parse().map_err(|e| parse_err(format!("bs_id: {e}")))?;
        let vals: Vec<T> = (2..rec.len())
            .map(|k| {
                rec[k]
                    .parse::<f64>()
                    .map(T::lit)
                    .map_err(|e| parse_err(format!("field {k}: {e}")))
            })
            .collect::<Result<_>>()?;
        let (x, y) = vals.split_at(tiles);
        match rows.last_mut() {
            Some((id, r)) if *id == bs => r.push((x.to_vec(), y.to_vec())),
            _ => rows.push((bs, vec![(x.to_vec(), y.to_vec())])),
        }
    }
    if rows.is_empty() {
        return Err(Error::Empty("dataset file has no samples"));
    }
    rows.into_iter()
        .map(|(id, r)| BsDataset::from_rows(id, r, grid))
        .collect()
}
