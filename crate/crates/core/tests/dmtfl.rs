mod common;

use common::*;
use fedcache::data::{synth_from_profiles, synth_noniid, GenConfig};
use fedcache::dmtfl::{init_state, replay_node, run_dmtfl, run_dmtfl_with, w_step, RunOptions};
use fedcache::domain::{AlphaMatrix, BsDataset, HyperParams, MixtureWeights, TileGrid, WeightPolicy};
use fedcache::numerics::{build_eps_cover, project_capped_simplex};
use fedcache::objective::{empirical_loss_grad, PenaltyParams, Problem};
use fedcache::Error;

fn gen(num_bs: usize, rows: usize, cols: usize, samples: usize, seed: u64) -> GenConfig {
    GenConfig {
        num_bs,
        grid: TileGrid::new(rows, cols).unwrap(),
        users_per_bs: 5,
        samples_per_bs: samples,
        gamma: 0.3,
        fov_deg: 100.0,
        seed,
    }
}

fn small_hp(rounds: usize, budget: f64) -> HyperParams {
    HyperParams {
        rounds,
        inner_steps: 3,
        cache_budget: budget,
        ..HyperParams::default()
    }
}

fn feasible(phi: &[f64], budget: f64) -> bool {
    phi.iter().all(|&p| (-1e-12..=1.0 + 1e-12).contains(&p)) && (phi.iter().sum::<f64>() - budget).abs() < 1e-9
}

fn on_simplex(v: &[f64]) -> bool {
    v.iter().all(|&x| x >= 0.0) && (v.iter().sum::<f64>() - 1.0).abs() < 1e-9
}

#[test]
fn init_state_rules() {
    let d = dataset(0, &[(&[0.1, 0.2, 0.3, 1.0], &[1.0, 0.0, 0.0, 0.0])]);
    let hp = small_hp(1, 2.0);
    let (m, a, w) = init_state(std::slice::from_ref(&d), &hp).unwrap();
    assert_eq!(m[0].phi(), &[0.5, 0.5, 0.5, 0.5]);
    assert_eq!(a.row(0), &[1.0]);
    assert_eq!(w.as_slice(), &[1.0]);

    let data: Vec<_> = (0..3)
        .map(|b| BsDataset::new(b, d.samples().to_vec()).unwrap())
        .collect();
    let hp = small_hp(1, 3.0);
    let (m, a, w) = init_state(&data, &hp).unwrap();
    for b in 0..3 {
        assert_eq!(a.row(b), &[1.0 / 3.0; 3]);
        assert_eq!(m[b].phi().iter().sum::<f64>(), 3.0);
    }
    assert_eq!(w.as_slice(), &[1.0 / 3.0; 3]);
}

#[test]
fn zero_rounds_return_initial_models() {
    let data: Vec<BsDataset<f64>> = synth_noniid(&gen(2, 3, 3, 6, 1)).unwrap();
    let hp = small_hp(0, 3.0);
    let out = run_dmtfl(&data, &hp).unwrap();
    let (m0, a0, _) = init_state(&data, &hp).unwrap();
    assert_eq!(out.models, m0);
    assert_eq!(out.alpha, a0);
    assert!(out.history.rounds.is_empty());
    assert_eq!(out.history.total_messages(), 0);
}

/// Regularised projected gradient descent on one dataset, written out
/// independently of the round engine.
fn reference_descent(d: &BsDataset<f64>, hp: &HyperParams) -> Vec<Vec<f64>> {
    let spec = hp.loss_spec();
    let tiles = d.num_tiles();
    let mut phi = vec![hp.cache_budget / tiles as f64; tiles];
    let mut out = Vec::new();
    for _ in 0..hp.rounds {
        let (_, mut g) = empirical_loss_grad(&phi, d, &spec).unwrap();
        let mut sq = 0.0;
        for p in &phi {
            sq += p * p;
        }
        let norm = f64::sqrt(sq);
        if norm > 0.0 {
            for (gf, p) in g.iter_mut().zip(&phi) {
                *gf += hp.rho[0] * p / norm;
            }
        }
        let raw: Vec<f64> = phi.iter().zip(&g).map(|(p, gf)| p - hp.descent_step * gf).collect();
        phi = project_capped_simplex(&raw, 1.0, hp.cache_budget).unwrap();
        out.push(phi.clone());
    }
    out
}

#[test]
fn single_station_is_projected_descent() {
    let data: Vec<BsDataset<f64>> = synth_noniid(&gen(1, 4, 4, 20, 3)).unwrap();
    let hp = HyperParams {
        rounds: 25,
        cache_budget: 5.0,
        rho: vec![0.05],
        ..HyperParams::default()
    };
    let out = run_dmtfl(&data, &hp).unwrap();
    let want = reference_descent(&data[0], &hp);
    for (r, phi) in out.history.rounds.iter().zip(&want) {
        assert_eq!(&r.phi[0], phi, "round {}", r.round);
        assert_eq!(r.alpha, vec![vec![1.0]]);
    }
    assert_eq!(out.models[0].phi(), want.last().unwrap().as_slice());
    // no partner, no traffic
    assert_eq!(out.history.total_messages(), 0);
}

#[test]
fn single_station_objective_does_not_increase() {
    let data: Vec<BsDataset<f64>> = synth_noniid(&gen(1, 3, 3, 10, 4)).unwrap();
    let hp = HyperParams {
        rounds: 30,
        cache_budget: 3.0,
        descent_step: 0.01,
        ..HyperParams::default()
    };
    let out = run_dmtfl(&data, &hp).unwrap();
    for r in &out.history.rounds {
        assert!(r.objective_after <= r.objective_before + 1e-12, "round {}", r.round);
    }
}

#[test]
fn every_round_is_feasible_and_recorded() {
    let data: Vec<BsDataset<f64>> = synth_noniid(&gen(3, 3, 4, 8, 5)).unwrap();
    let hp = small_hp(6, 4.0);
    let out = run_dmtfl(&data, &hp).unwrap();
    assert_eq!(out.history.rounds.len(), 6);
    for r in &out.history.rounds {
        assert!(r.phi.iter().all(|p| feasible(p, 4.0)));
        assert!(r.alpha.iter().all(|row| on_simplex(row)));
        assert!(on_simplex(&r.weights));
        for b in 0..3 {
            assert_eq!(r.discrepancy[b][b], 0.0);
            for i in 0..3 {
                assert_eq!(r.discrepancy[b][i], r.discrepancy[i][b]);
                assert!(r.discrepancy[b][i] >= 0.0 && r.discrepancy[b][i] <= 6.0 * 12.0);
            }
        }
        assert!(r.messages > 0 && r.bytes > 0);
    }
}

#[test]
fn runs_are_deterministic() {
    let data: Vec<BsDataset<f64>> = synth_noniid(&gen(3, 3, 3, 8, 6)).unwrap();
    let hp = small_hp(5, 2.0);
    let a = run_dmtfl(&data, &hp).unwrap();
    let b = run_dmtfl(&data, &hp).unwrap();
    assert_eq!(a, b);
}

#[test]
fn one_worker_matches_the_pool() {
    let data: Vec<BsDataset<f64>> = synth_noniid(&gen(3, 3, 3, 8, 7)).unwrap();
    let hp = small_hp(4, 2.0);
    let pooled = run_dmtfl(&data, &hp).unwrap();
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| run_dmtfl(&data, &hp).unwrap());
    assert_eq!(pooled, single);
}

#[test]
fn stations_replay_from_messages_alone() {
    let data: Vec<BsDataset<f64>> = synth_noniid(&gen(3, 3, 3, 8, 8)).unwrap();
    let hp = small_hp(4, 2.0);
    let out = run_dmtfl_with(&data, &hp, &RunOptions { record_messages: true }).unwrap();
    let log = out.history.message_log.as_ref().unwrap();
    for b in 0..3 {
        // only station b's own dataset is handed to the replay
        let traj = replay_node(b, &data[b], 3, &hp, log).unwrap();
        for (r, (phi, alpha)) in out.history.rounds.iter().zip(&traj) {
            assert_eq!(&r.phi[b], phi);
            assert_eq!(&r.alpha[b], alpha);
        }
    }
}

#[test]
fn replay_detects_foreign_data() {
    let data: Vec<BsDataset<f64>> = synth_noniid(&gen(2, 3, 3, 8, 9)).unwrap();
    let hp = small_hp(2, 2.0);
    let out = run_dmtfl_with(&data, &hp, &RunOptions { record_messages: true }).unwrap();
    let log = out.history.message_log.as_ref().unwrap();
    let wrong = BsDataset::new(0, data[1].samples().to_vec()).unwrap();
    assert!(matches!(replay_node(0, &wrong, 2, &hp, log), Err(Error::Protocol(_))));
}

#[test]
fn iid_stations_look_alike() {
    let cfg = gen(2, 4, 4, 80, 10);
    let profile = fedcache::data::station_profiles(&cfg).unwrap()[0].clone();
    let data: Vec<BsDataset<f64>> = synth_from_profiles(&cfg, &[profile.clone(), profile], 80, 10).unwrap();
    let hp = HyperParams {
        rounds: 30,
        cache_budget: 5.0,
        ..HyperParams::default()
    };
    let out = run_dmtfl(&data, &hp).unwrap();
    let v = out.discrepancy.get(0, 1);
    assert!(v <= 0.05 * 6.0 * 16.0, "v = {v}");
    for b in 0..2 {
        for &a in out.alpha.row(b) {
            assert!((a - 0.5).abs() <= 0.15, "alpha row {b}: {:?}", out.alpha.row(b));
        }
    }
}

#[test]
fn objective_falls_on_a_two_station_instance() {
    let data: Vec<BsDataset<f64>> = synth_noniid(&gen(2, 4, 4, 30, 11)).unwrap();
    let hp = HyperParams {
        rounds: 40,
        cache_budget: 5.0,
        ..HyperParams::default()
    };
    let out = run_dmtfl(&data, &hp).unwrap();
    let first = out.history.rounds.first().unwrap().objective_before;
    let last = out.history.rounds.last().unwrap().objective_after;
    assert!(last <= first, "{first} -> {last}");
}

#[test]
fn link_budget_is_enforced() {
    let data: Vec<BsDataset<f64>> = synth_noniid(&gen(2, 3, 3, 6, 12)).unwrap();
    let hp = HyperParams {
        link_budget_bytes: Some(64),
        ..small_hp(2, 2.0)
    };
    assert!(matches!(run_dmtfl(&data, &hp), Err(Error::LinkBudget { .. })));
    let roomy = HyperParams {
        link_budget_bytes: Some(1 << 20),
        ..small_hp(2, 2.0)
    };
    assert!(run_dmtfl(&data, &roomy).is_ok());
}

#[test]
fn fixed_policies_keep_the_mixture() {
    let data: Vec<BsDataset<f64>> = synth_noniid(&gen(3, 3, 3, 8, 13)).unwrap();
    let hp = HyperParams {
        weight_policy: WeightPolicy::Uniform,
        ..small_hp(3, 2.0)
    };
    let out = run_dmtfl(&data, &hp).unwrap();
    assert_eq!(out.weights.as_slice(), &[1.0 / 3.0; 3]);
}

fn quiet() -> PenaltyParams<f64> {
    PenaltyParams {
        bound: 6.0,
        delta: 0.5,
        cover_size: 1,
    }
}

#[test]
fn w_step_ties_go_to_the_first_centre() {
    let d = dataset(0, &[(&[1.0, 0.2], &[0.4, 1.0])]);
    let data = vec![d.clone(), BsDataset::new(1, d.samples().to_vec()).unwrap()];
    let problem = Problem::new(
        &data,
        fedcache::LossSpec::new(1e-6, 6.0, Default::default()),
        quiet(),
        vec![0.0],
    )
    .unwrap();
    let models = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
    let cover = build_eps_cover::<f64>(2, 0.2).unwrap();
    let a = AlphaMatrix::uniform(2).unwrap();
    let w = w_step(&MixtureWeights::uniform(2).unwrap(), &problem, &models, &a, &cover).unwrap();
    assert_eq!(w, cover.centers()[0]);
}

#[test]
fn w_step_moves_to_the_worse_station() {
    let d0 = dataset(0, &[(&[1.0, 1.0], &[1.0, 1.0])]);
    let d1 = dataset(1, &[(&[1.0, 1.0], &[0.0, 0.0])]);
    let data = vec![d0, d1];
    let spec = fedcache::LossSpec::new(1e-6, 6.0, fedcache::ErrorModel::Predicted);
    let problem = Problem::new(&data, spec, quiet(), vec![0.0]).unwrap();
    let models = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
    let a = AlphaMatrix::identity(2).unwrap();
    let cover = build_eps_cover::<f64>(2, 0.2).unwrap();
    let w = w_step(&MixtureWeights::uniform(2).unwrap(), &problem, &models, &a, &cover).unwrap();
    let best = cover
        .centers()
        .iter()
        .map(|c| l1(c.as_slice(), &[0.0, 1.0]))
        .fold(f64::INFINITY, f64::min);
    assert_eq!(l1(w.as_slice(), &[0.0, 1.0]), best);
}

#[test]
fn w_step_matches_exhaustive_search() {
    let mut g = rng(14);
    let data: Vec<_> = (0..3).map(|b| random_dataset(&mut g, b, 4, 4)).collect();
    let spec = fedcache::LossSpec::new(1e-6, 6.0, fedcache::ErrorModel::Predicted);
    let problem = Problem::new(&data, spec, quiet(), vec![0.0]).unwrap();
    let models: Vec<Vec<f64>> = (0..3).map(|_| interior_model(&mut g, 4, 2.0)).collect();
    let a = AlphaMatrix::new((0..3).map(|_| random_simplex(&mut g, 3)).collect()).unwrap();
    let cover = build_eps_cover::<f64>(3, 0.25).unwrap();
    let prev = MixtureWeights::uniform(3).unwrap();
    let w = w_step(&prev, &problem, &models, &a, &cover).unwrap();
    let values: Vec<f64> = cover
        .centers()
        .iter()
        .map(|c| problem.weighted_objective(&models, c, &a).unwrap())
        .collect();
    let top = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let chosen = problem.weighted_objective(&models, &w, &a).unwrap();
    assert!((chosen - top).abs() <= 1e-12 * top.abs().max(1.0));
    assert!(chosen >= problem.weighted_objective(&models, &prev, &a).unwrap() - 1e-12);
}

#[test]
fn checkpoint_has_one_row_per_station_and_round() {
    let data: Vec<BsDataset<f64>> = synth_noniid(&gen(2, 2, 2, 6, 15)).unwrap();
    let out = run_dmtfl(&data, &small_hp(3, 2.0)).unwrap();
    let mut buf = Vec::new();
    out.history.write_checkpoint(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "round,bs_id,phi_0,phi_1,phi_2,phi_3,alpha_0,alpha_1"
    );
    assert_eq!(lines.count(), 6);
}
