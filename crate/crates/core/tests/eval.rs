mod common;

use common::dataset;
use fedcache::eval::{
    avg_cache_hit, cache_set_from_model, min_per_bs_hit, read_metrics_csv, run_experiment, write_metrics_csv,
    Algorithm, ExperimentConfig,
};
use fedcache::Error;

#[test]
fn cache_set_examples() {
    assert_eq!(cache_set_from_model(&[0.25; 4], 1).unwrap(), vec![0]);
    assert_eq!(cache_set_from_model(&[0.0, 0.0, 0.0, 1.0, 0.0], 1).unwrap(), vec![3]);
    assert_eq!(cache_set_from_model(&[0.2, 0.9, 0.9, 0.1], 2).unwrap(), vec![1, 2]);
    assert!(cache_set_from_model(&[0.2, 0.9], 3).is_err());
}

fn toy() -> Vec<fedcache::domain::BsDataset<f64>> {
    let d0 = dataset(0, &[(&[0.0; 3], &[1.0, 0.5, 0.0]), (&[0.0; 3], &[0.0, 1.0, 1.0])]);
    let d1 = dataset(1, &[(&[0.0; 3], &[0.0, 0.0, 1.0])]);
    vec![d0, d1]
}

#[test]
fn hits_on_a_two_station_toy() {
    let tests = toy();
    // station 0 caches {0}: 1.0 of its 3.5 units hit; station 1 caches {2}: 1 of 1
    let caches = vec![vec![0], vec![2]];
    assert!((avg_cache_hit(&caches, &tests).unwrap() - 2.0 / 4.5).abs() < 1e-15);
    assert!((min_per_bs_hit(&caches, &tests).unwrap() - 1.0 / 3.5).abs() < 1e-15);

    let all = vec![vec![0, 1, 2], vec![0, 1, 2]];
    assert_eq!(avg_cache_hit(&all, &tests).unwrap(), 1.0);
    let none = vec![vec![], vec![0]];
    assert_eq!(avg_cache_hit(&none, &tests).unwrap(), 0.0);
    assert_eq!(min_per_bs_hit(&none, &tests).unwrap(), 0.0);
}

#[test]
fn equal_rates_give_equal_metrics() {
    let d = dataset(0, &[(&[0.0; 2], &[1.0, 1.0])]);
    let e = dataset(1, &[(&[0.0; 2], &[1.0, 1.0]), (&[0.0; 2], &[1.0, 1.0])]);
    let caches = vec![vec![0], vec![1]];
    let tests = vec![d, e];
    assert_eq!(min_per_bs_hit(&caches, &tests).unwrap(), 0.5);
    assert_eq!(avg_cache_hit(&caches, &tests).unwrap(), 0.5);
}

#[test]
fn stations_without_demand_are_skipped() {
    let quiet = dataset(0, &[(&[0.0; 2], &[0.0, 0.0])]);
    let busy = dataset(1, &[(&[0.0; 2], &[1.0, 0.0])]);
    assert_eq!(
        min_per_bs_hit(&[vec![1], vec![0]], &[quiet.clone(), busy]).unwrap(),
        1.0
    );
    assert!(min_per_bs_hit(&[vec![1]], &[quiet]).is_err());
}

const SMALL: &str = r#"
[experiment]
algorithms = ["dmtfl", "fedavg", "fedprox", "heuristic"]
cache_sizes = [2, 9]
repetitions = 2

[data]
kind = "synthetic"
num_bs = 2
grid = { rows = 3, cols = 3 }
users_per_bs = 4
samples_per_bs = 10
gamma = 0.5
seed = 3

[dmtfl]
rounds = 4
inner_steps = 2
"#;

#[test]
fn config_defaults_and_round_trip() {
    let cfg = ExperimentConfig::from_toml(SMALL).unwrap();
    assert_eq!(cfg.experiment.train_fraction, 0.8);
    assert_eq!(cfg.baselines.local_steps, 1);
    assert_eq!(cfg.dmtfl.loss_bound, 6.0);
    let again = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
    assert_eq!(cfg, again);
}

#[test]
fn config_errors_are_reported() {
    let typo = SMALL.replace("users_per_bs", "users_per_station");
    match ExperimentConfig::from_toml(&typo) {
        Err(Error::Config(m)) => assert!(m.contains("line"), "{m}"),
        other => panic!("{other:?}"),
    }
    let empty = SMALL.replace("cache_sizes = [2, 9]", "cache_sizes = []");
    assert!(ExperimentConfig::from_toml(&empty).is_err());
    let zero = SMALL.replace("repetitions = 2", "repetitions = 0");
    assert!(ExperimentConfig::from_toml(&zero).is_err());
    let big = SMALL.replace("cache_sizes = [2, 9]", "cache_sizes = [10]");
    assert!(ExperimentConfig::from_toml(&big).is_err());
}

#[test]
fn full_cache_hits_everything() {
    let cfg = ExperimentConfig::from_toml(SMALL).unwrap();
    let rows = run_experiment(&cfg).unwrap();
    assert_eq!(rows.len(), 4 * 2 * 2);
    for r in rows.iter().filter(|r| r.cache_size == 9) {
        assert_eq!(r.avg_cache_hit, 1.0, "{r:?}");
        assert_eq!(r.min_per_bs_hit, 1.0);
    }
    for r in &rows {
        assert!((0.0..=1.0).contains(&r.avg_cache_hit) && (0.0..=1.0).contains(&r.min_per_bs_hit));
        assert!(r.wall_time_s.is_none());
    }
    let order: Vec<(Algorithm, usize, usize)> =
        rows.iter().map(|r| (r.algorithm, r.cache_size, r.repetition)).collect();
    let mut sorted = order.clone();
    sorted.sort();
    assert_eq!(order, sorted);
}

#[test]
fn fixed_seed_repetitions_agree() {
    let mut cfg = ExperimentConfig::from_toml(SMALL).unwrap();
    cfg.experiment.vary_seed = false;
    let rows = run_experiment(&cfg).unwrap();
    for pair in rows.chunks(2) {
        let (a, b) = (&pair[0], &pair[1]);
        assert_eq!((a.repetition, b.repetition), (0, 1));
        let mut b = b.clone();
        b.repetition = 0;
        assert_eq!(a, &b);
    }
}

#[test]
fn metrics_csv_round_trip() {
    let mut cfg = ExperimentConfig::from_toml(SMALL).unwrap();
    cfg.experiment.record_timing = true;
    let rows = run_experiment(&cfg).unwrap();
    let mut buf = Vec::new();
    write_metrics_csv(&rows, &cfg, &mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("# [experiment]"));
    assert!(text.contains("# loss_bound = 6.0"));
    assert_eq!(read_metrics_csv(buf.as_slice()).unwrap(), rows);
}
