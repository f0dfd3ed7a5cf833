use crate::domain::TileGrid;
use crate::error::{Error, Result};

fn check_angle(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::OutOfRange(format!("{name} = {v} is not finite")));
    }
    Ok(())
}

// Column of horizontal coordinate `u` in [0, 360), unclamped.
#[inline]
fn col_at(u: f64, cols: usize) -> usize {
    (u * cols as f64 / 360.0).floor() as usize
}

// Row of vertical coordinate `v = 90 - pitch` in [0, 180], clamped to the grid.
#[inline]
fn row_at(v: f64, rows: usize) -> usize {
    ((v * rows as f64 / 180.0).floor() as usize).min(rows - 1)
}

/// Tile containing the viewing direction `(yaw, pitch)`, with yaw in
/// [-180, 180) and pitch in [-90, 90].
pub fn tile_index(yaw: f64, pitch: f64, grid: &TileGrid) -> Result<usize> {
    check_angle("yaw", yaw)?;
    check_angle("pitch", pitch)?;
    if !(-180.0..180.0).contains(&yaw) {
        return Err(Error::OutOfRange(format!("yaw {yaw} outside [-180, 180)")));
    }
    if !(-90.0..=90.0).contains(&pitch) {
        return Err(Error::OutOfRange(format!("pitch {pitch} outside [-90, 90]")));
    }
    let col = col_at(yaw + 180.0, grid.cols()).min(grid.cols() - 1);
    let row = row_at(90.0 - pitch, grid.rows());
    Ok(grid.tile_id(row, col))
}

/// Tiles whose rectangle meets the window `[yaw +- fov/2] x [pitch +- fov/2]`
/// in the equirectangular plane, wrapping horizontally and clamping at the
/// poles. Tiles are half-open, the window is closed. Sorted ascending.
pub fn fov_tiles(yaw: f64, pitch: f64, fov_deg: f64, grid: &TileGrid) -> Result<Vec<usize>> {
    check_angle("yaw", yaw)?;
    check_angle("pitch", pitch)?;
    if !(-90.0..=90.0).contains(&pitch) {
        return Err(Error::OutOfRange(format!("pitch {pitch} outside [-90, 90]")));
    }
    if !(0.0..=360.0).contains(&fov_deg) {
        return Err(Error::OutOfRange(format!("fov {fov_deg} outside [0, 360]")));
    }
    let half = fov_deg / 2.0;
    let (rows, cols) = (grid.rows(), grid.cols());

    let cols_hit: Vec<usize> = if fov_deg >= 360.0 {
        (0..cols).collect()
    } else {
        let a = (yaw + 180.0 - half).rem_euclid(360.0);
        let b = a + fov_deg;
        let mut cs: Vec<usize> = (col_at(a, cols)..=col_at(b, cols)).map(|j| j % cols).collect();
        cs.sort_unstable();
        cs.dedup();
        cs
    };
    let top = (90.0 - pitch - half).max(0.0);
    let bottom = (90.0 - pitch + half).min(180.0);
    let rows_hit = row_at(top, rows)..=row_at(bottom, rows);

    let mut out: Vec<usize> = rows_hit
        .flat_map(|r| cols_hit.iter().map(move |&c| grid.tile_id(r, c)))
        .collect();
    out.sort_unstable();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g10() -> TileGrid {
        TileGrid::new(10, 10).unwrap()
    }

    // Independent check: test every tile rectangle against every shifted
    // copy of the window.
    fn brute(yaw: f64, pitch: f64, fov: f64, g: &TileGrid) -> Vec<usize> {
        let (tw, th) = (360.0 / g.cols() as f64, 180.0 / g.rows() as f64);
        let (wl, wr) = (yaw - fov / 2.0, yaw + fov / 2.0);
        let (wt, wb) = ((pitch + fov / 2.0).min(90.0), (pitch - fov / 2.0).max(-90.0));
        let mut out = Vec::new();
        for r in 0..g.rows() {
            // Row r spans pitch (90 - (r+1) th, 90 - r th]; the bottom row also holds -90.
            let (p_hi, p_lo) = (90.0 - r as f64 * th, 90.0 - (r + 1) as f64 * th);
            let vert = if r + 1 == g.rows() {
                wb <= p_hi && wt >= p_lo
            } else {
                wb <= p_hi && wt > p_lo
            };
            if !vert {
                continue;
            }
            for c in 0..g.cols() {
                let (lo, hi) = (-180.0 + c as f64 * tw, -180.0 + (c + 1) as f64 * tw);
                let horiz = fov >= 360.0
                    || [-720.0, -360.0, 0.0, 360.0, 720.0]
                        .iter()
                        .any(|s| wl < hi + s && wr >= lo + s);
                if horiz {
                    out.push(g.tile_id(r, c));
                }
            }
        }
        out
    }

    #[test]
    fn tile_index_examples() {
        let g = g10();
        assert_eq!(tile_index(-180.0, 90.0, &g).unwrap(), 0);
        assert_eq!(tile_index(180.0 - 1e-9, -90.0 + 1e-9, &g).unwrap(), 99);
        assert_eq!(tile_index(0.0, 0.0, &g).unwrap(), 55);
        assert_eq!(tile_index(0.0, -90.0, &g).unwrap(), 95);
        assert!(tile_index(f64::NAN, 0.0, &g).is_err());
        assert!(tile_index(180.0, 0.0, &g).is_err());
    }

    #[test]
    fn fov_examples() {
        let g = g10();
        assert_eq!(fov_tiles(0.0, 0.0, 360.0, &g).unwrap(), (0..100).collect::<Vec<_>>());
        assert_eq!(
            fov_tiles(13.0, 27.0, 0.0, &g).unwrap(),
            vec![tile_index(13.0, 27.0, &g).unwrap()]
        );
        let centre = fov_tiles(0.0, 0.0, 100.0, &g).unwrap();
        assert_eq!(centre, brute(0.0, 0.0, 100.0, &g));
        assert_eq!(centre.len(), 24);
    }

    #[test]
    fn fov_matches_brute_force_on_a_sweep() {
        for (rows, cols) in [(10, 10), (8, 8), (4, 16), (3, 7)] {
            let g = TileGrid::new(rows, cols).unwrap();
            for yi in -36..36 {
                for pi in -9..=9 {
                    for fov in [0.0, 10.0, 45.0, 100.0, 170.0, 359.5] {
                        let (yaw, pitch) = (yi as f64 * 5.0 + 0.5, pi as f64 * 10.0);
                        assert_eq!(
                            fov_tiles(yaw, pitch, fov, &g).unwrap(),
                            brute(yaw, pitch, fov, &g),
                            "{rows}x{cols} {yaw} {pitch} {fov}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn wraparound() {
        let g = g10();
        let t = fov_tiles(-175.0, 0.0, 20.0, &g).unwrap();
        assert!(t.contains(&50) && t.contains(&59));
        assert_eq!(
            fov_tiles(10.5, 3.0, 100.0, &g).unwrap(),
            fov_tiles(370.5, 3.0, 100.0, &g).unwrap()
        );
    }
}
