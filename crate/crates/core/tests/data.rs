mod common;

use std::io::Write;

use fedcache::data::{
    fov_tiles, ingest_trace, read_datasets_csv, read_trace, synth_noniid, tile_index, write_datasets_csv, GenConfig,
};
use fedcache::domain::{BsDataset, TileGrid};
use fedcache::Error;

fn g10() -> TileGrid {
    TileGrid::new(10, 10).unwrap()
}

#[test]
fn tile_index_examples() {
    assert_eq!(tile_index(-180.0, 90.0, &g10()).unwrap(), 0);
    let below = f64::from_bits(180f64.to_bits() - 1);
    let above = f64::from_bits((-90f64).to_bits() - 1);
    assert_eq!(tile_index(below, above, &g10()).unwrap(), 99);
    assert_eq!(tile_index(0.0, 0.0, &g10()).unwrap(), 55);
    assert!(tile_index(f64::NAN, 0.0, &g10()).is_err());
}

#[test]
fn fov_extremes() {
    let g = TileGrid::new(6, 8).unwrap();
    assert_eq!(fov_tiles(10.0, 0.0, 360.0, &g).unwrap(), (0..48).collect::<Vec<_>>());
    for (yaw, pitch) in [(12.5, 33.0), (-179.0, -88.0), (100.0, 5.0)] {
        assert_eq!(
            fov_tiles(yaw, pitch, 1e-9, &g).unwrap(),
            vec![tile_index(yaw, pitch, &g).unwrap()]
        );
    }
}

#[test]
fn centred_window_on_ten_by_ten() {
    // yaw [-50, 50] meets the 36-degree columns 3..=6, pitch [-50, 50]
    // meets the 18-degree rows 2..=7.
    let t = fov_tiles(0.0, 0.0, 100.0, &g10()).unwrap();
    assert_eq!(t.len(), 24);
}

fn write_tmp(text: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(text.as_bytes()).unwrap();
    f
}

#[test]
fn single_window_has_zero_features() {
    let g = TileGrid::new(2, 2).unwrap();
    let f = write_tmp("user_id,timestamp,yaw_deg,pitch_deg\nu1,0.0,-90,45\nu1,0.5,-90,45\n");
    let d: BsDataset<f64> = ingest_trace(f.path(), 0, &g, 10.0, 1.0).unwrap();
    assert_eq!(d.len(), 1);
    assert_eq!(d.samples()[0].features(), &[0.0; 4]);
    assert_eq!(d.samples()[0].label(), &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn out_of_range_yaw_names_its_line() {
    let f = write_tmp("user_id,timestamp,yaw_deg,pitch_deg\nu1,0.0,10,0\nu1,1.0,200,0\n");
    match read_trace(std::fs::File::open(f.path()).unwrap()) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
    let g = TileGrid::new(2, 2).unwrap();
    assert!(ingest_trace::<f64>(f.path(), 0, &g, 10.0, 1.0).is_err());
}

#[test]
fn empty_trace_is_rejected() {
    let f = write_tmp("user_id,timestamp,yaw_deg,pitch_deg\n");
    assert!(read_trace(std::fs::File::open(f.path()).unwrap()).is_err());
}

#[test]
fn two_window_toy_trace() {
    // 2 x 4 grid: columns of 90 degrees, rows of 90 degrees.
    let g = TileGrid::new(2, 4).unwrap();
    let trace = "user_id,timestamp,yaw_deg,pitch_deg\n\
                 a,0.0,-135,45\n\
                 b,0.2,-135,45\n\
                 b,0.4,45,-45\n\
                 a,1.1,135,-45\n\
                 b,1.5,135,-45\n";
    let f = write_tmp(trace);
    let d: BsDataset<f64> = ingest_trace(f.path(), 0, &g, 20.0, 1.0).unwrap();
    // window 0: a -> {0}, b -> {0, 6}: counts [2,0,0,0,0,0,1,0] / 2
    // window 1: a, b -> {7}: counts [0,...,0,2] / 2
    assert_eq!(d.len(), 2);
    let w0 = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5, 0.0];
    let w1 = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
    assert_eq!(d.samples()[0].features(), &[0.0; 8]);
    assert_eq!(d.samples()[0].label(), &w0);
    assert_eq!(d.samples()[1].features(), &w0);
    assert_eq!(d.samples()[1].label(), &w1);
}

fn cfg(gamma: f64, seed: u64) -> GenConfig {
    GenConfig {
        num_bs: 2,
        grid: TileGrid::new(4, 4).unwrap(),
        users_per_bs: 10,
        samples_per_bs: 200,
        gamma,
        fov_deg: 100.0,
        seed,
    }
}

fn mean_share(d: &BsDataset<f64>) -> Vec<f64> {
    let mut m = vec![0.0; d.num_tiles()];
    for s in d.samples() {
        for (a, y) in m.iter_mut().zip(s.label()) {
            *a += y;
        }
    }
    let t: f64 = m.iter().sum();
    m.iter().map(|x| x / t).collect()
}

#[test]
fn large_gamma_is_near_iid() {
    let mut total = 0.0;
    for seed in 0..20 {
        let d: Vec<BsDataset<f64>> = synth_noniid(&cfg(1e4, seed)).unwrap();
        total += common::l1(&mean_share(&d[0]), &mean_share(&d[1]));
    }
    assert!(total / 20.0 <= 0.05, "mean l1 gap {}", total / 20.0);
}

#[test]
fn small_gamma_separates_stations() {
    let mut total = 0.0;
    for seed in 0..20 {
        let d: Vec<BsDataset<f64>> = synth_noniid(&cfg(0.3, seed)).unwrap();
        total += common::l1(&mean_share(&d[0]), &mean_share(&d[1]));
    }
    assert!(total / 20.0 > 0.2, "mean l1 gap {}", total / 20.0);
}

#[test]
fn generator_contract() {
    let a: Vec<BsDataset<f64>> = synth_noniid(&cfg(0.3, 4)).unwrap();
    let b: Vec<BsDataset<f64>> = synth_noniid(&cfg(0.3, 4)).unwrap();
    assert_eq!(a, b);
    for d in &a {
        for s in d.samples() {
            assert!(s.label().iter().all(|&y| (0.0..=1.0).contains(&y)));
            assert!(s.label().contains(&1.0));
        }
    }
    let mut empty = cfg(0.3, 4);
    empty.samples_per_bs = 0;
    assert!(synth_noniid::<f64>(&empty).is_err());
}

#[test]
fn dataset_csv_round_trip() {
    let c = cfg(0.3, 5);
    let a: Vec<BsDataset<f64>> = synth_noniid(&c).unwrap();
    let mut buf = Vec::new();
    write_datasets_csv(&a, &mut buf).unwrap();
    let b: Vec<BsDataset<f64>> = read_datasets_csv(buf.as_slice(), &c.grid).unwrap();
    assert_eq!(a, b);
}
