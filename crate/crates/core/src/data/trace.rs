use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Read;
use std::path::Path;

use serde::Deserialize;

use crate::domain::{BsDataset, TileGrid};
use crate::error::{Error, Result};
use crate::scalar::Real;

use super::pair_windows;
use super::tiling::fov_tiles;

/// One head-orientation record of a trace.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct HeadSample {
    pub user_id: String,
    pub timestamp: f64,
    #[serde(rename = "yaw_deg")]
    pub yaw: f64,
    #[serde(rename = "pitch_deg")]
    pub pitch: f64,
}

const HEADER: [&str; 4] = ["user_id", "timestamp", "yaw_deg", "pitch_deg"];

/// Parses a `user_id,timestamp,yaw_deg,pitch_deg` trace, checking angle
/// ranges and per-user timestamp order. Errors name the offending line.
pub fn read_trace<R: Read>(input: R) -> Result<Vec<HeadSample>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {}", HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    let mut last: HashMap<String, f64> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let err = |message: String| Error::Parse { line, message };
        let s: HeadSample = rec.deserialize(Some(&header)).map_err(|e| err(e.to_string()))?;
        if !s.timestamp.is_finite() {
            return Err(err(format!("timestamp {} is not finite", s.timestamp)));
        }
        if !(-180.0..180.0).contains(&s.yaw) {
            return Err(err(format!("yaw {} outside [-180, 180)", s.yaw)));
        }
        if !(-90.0..=90.0).contains(&s.pitch) {
            return Err(err(format!("pitch {} outside [-90, 90]", s.pitch)));
        }
        if let Some(&prev) = last.get(&s.user_id) {
            if s.timestamp < prev {
                return Err(err(format!("timestamp of user {} decreases", s.user_id)));
            }
        }
        last.insert(s.user_id.clone(), s.timestamp);
        out.push(s);
    }
    if out.is_empty() {
        return Err(Error::Empty("trace has no records"));
    }
    Ok(out)
}

/// Builds a station dataset from a head trace. Time is cut into windows of
/// `window_sec` from the first timestamp; in each window a user requests the
/// union of the tiles its FOVs cover, and tile demand counts requesting
/// users. Windows without records produce no sample.
pub fn ingest_trace<T: Real>(
    path: &Path,
    bs_id: usize,
    grid: &TileGrid,
    fov_deg: f64,
    window_sec: f64,
) -> Result<BsDataset<T>> {
    if !(window_sec > 0.0 && window_sec.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "window_sec must be > 0, got {window_sec}"
        )));
    }
    let samples = read_trace(std::fs::File::open(path)?)?;
    let t0 = samples.iter().map(|s| s.timestamp).fold(f64::INFINITY, f64::min);
    let mut per_window: BTreeMap<usize, BTreeMap<&str, BTreeSet<usize>>> = BTreeMap::new();
    for s in &samples {
        let k = ((s.timestamp - t0) / window_sec).floor() as usize;
        let tiles = fov_tiles(s.yaw, s.pitch, fov_deg, grid)?;
        per_window
            .entry(k)
            .or_default()
            .entry(&s.user_id)
            .or_default()
            .extend(tiles);
    }
    let last = *per_window.keys().next_back().expect("nonempty trace");
    let windows: Vec<Option<Vec<u32>>> = (0..=last)
        .map(|k| {
            per_window.get(&k).map(|users| {
                let mut counts = vec![0u32; grid.num_tiles()];
                for t in users.values().flatten() {
                    counts[*t] += 1;
                }
                counts
            })
        })
        .collect();
    pair_windows(bs_id, &windows, grid.num_tiles())
}
