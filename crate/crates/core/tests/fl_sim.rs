use eefl::fl_sim::{
    estimate_curvature, gram_extremes, local_iteration_bound, loss_and_grad, partition,
    read_csv, run_dane, solve_local, synthetic_linear, DaneConfig, LocalSolver, LocalStop,
    LossModel, PartitionMode, Sample, Surrogate, UserDataset, ORACLE_TOL,
};
use eefl::model::FlParams;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn gaussian_data(rng: &mut ChaCha8Rng, n: usize, d: usize) -> UserDataset {
    let samples = (0..n)
        .map(|_| Sample {
            x: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
            y: rng.random_range(-1.0..1.0),
        })
        .collect();
    UserDataset::new(samples).unwrap()
}

fn fl_for(data: &[UserDataset], eps0: f64) -> FlParams {
    let c = estimate_curvature(data, &LossModel::linear()).unwrap();
    FlParams {
        lipschitz: c.lipschitz,
        strong_convexity: c.strong_convexity,
        xi: c.strong_convexity / c.lipschitz,
        step_size: 1.0 / c.lipschitz,
        global_accuracy: eps0,
        local_accuracy_bounds: (1e-6, 1.0 - 1e-6),
    }
}

#[test]
fn power_iteration_matches_a_dense_eigensolver() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let d = rng.random_range(2..9);
        let data = gaussian_data(&mut rng, 200, d);
        let x = DMatrix::from_fn(data.len(), d, |i, j| data.samples[i].x[j]);
        let gram = x.transpose() * &x / data.len() as f64;
        let eig = gram.symmetric_eigenvalues();
        let top = eig.max();
        let bottom = eig.min();
        let (hi, lo) = gram_extremes(&data);
        assert!((hi - top).abs() <= 1e-6 * top, "{hi} vs {top}");
        assert!((lo - bottom).abs() <= 1e-6 * top, "{lo} vs {bottom}");
    }
}

#[test]
fn iid_and_non_iid_splits_both_converge() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pool = synthetic_linear(2000, 4, 0.3, &mut rng);
    for mode in [
        PartitionMode::Iid,
        PartitionMode::NonIid {
            shards_per_user: 2,
            shard_size: 100,
        },
    ] {
        let data = partition(pool.clone(), 10, mode, 3).unwrap();
        let fl = fl_for(&data, 1e-3);
        let trace = run_dane(&data, &LossModel::linear(), &DaneConfig::new(fl, LocalStop::AccuracyTarget(0.1), 2000))
            .unwrap();
        assert!(trace.rounds_to_eps0.is_some(), "{mode:?} did not converge");
    }
}

#[test]
fn full_scale_partitions() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pool = synthetic_linear(60_000, 2, 0.1, &mut rng);
    let iid = partition(pool.clone(), 120, PartitionMode::Iid, 0).unwrap();
    assert_eq!(iid.len(), 120);
    assert!(iid.iter().all(|d| d.len() == 500));
    let shards = partition(
        pool.clone(),
        120,
        PartitionMode::NonIid {
            shards_per_user: 2,
            shard_size: 250,
        },
        0,
    )
    .unwrap();
    let mut sorted: Vec<f64> = pool.iter().map(|s| s.y).collect();
    sorted.sort_by(f64::total_cmp);
    for user in &shards {
        assert_eq!(user.len(), 500);
        // every shard is a contiguous run of the sorted targets
        for shard in user.samples.chunks(250) {
            let first = sorted.iter().position(|&y| y == shard[0].y).unwrap();
            let ys: Vec<f64> = shard.iter().map(|s| s.y).collect();
            assert_eq!(ys, sorted[first..first + 250].to_vec());
        }
    }
}

#[test]
fn csv_round_trip_through_training() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pool = synthetic_linear(200, 3, 0.1, &mut rng);
    let mut text = String::from("a,b,c,target\n");
    for s in &pool {
        text.push_str(&format!("{},{},{},{}\n", s.x[0], s.x[1], s.x[2], s.y));
    }
    std::fs::write(&path, text).unwrap();
    let read = read_csv(&path, false).unwrap();
    assert_eq!(read.len(), 200);
    assert_eq!(read[7].x.len(), 3);
    let data = partition(read, 4, PartitionMode::Iid, 0).unwrap();
    let fl = fl_for(&data, 1e-2);
    let trace = run_dane(&data, &LossModel::linear(), &DaneConfig::new(fl, LocalStop::AccuracyTarget(0.2), 500)).unwrap();
    assert!(trace.global_loss.last().unwrap() < &trace.global_loss[0]);
}

#[test]
fn bad_csv_rows_name_their_position() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "1,2,3\n4,x,6\n").unwrap();
    let err = read_csv(&path, false).unwrap_err().to_string();
    assert!(err.contains("row 1, column 1"), "{err}");
}

#[test]
fn minibatch_training_is_reproducible() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pool = synthetic_linear(600, 3, 0.3, &mut rng);
    let data = partition(pool, 3, PartitionMode::Iid, 1).unwrap();
    let fl = fl_for(&data, 1e-2);
    let mut config = DaneConfig::new(fl, LocalStop::FixedIters(20), 30);
    config.local_solver = LocalSolver::Sgd { batch_size: 50 };
    config.seed = 17;
    let a = run_dane(&data, &LossModel::linear(), &config).unwrap();
    let b = run_dane(&data, &LossModel::linear(), &config).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn local_solves_meet_the_iteration_bound(seed in 0u64..100_000, eta in 0.01f64..0.9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.random_range(1..6);
        let data = gaussian_data(&mut rng, 60, d);
        let curv = estimate_curvature(std::slice::from_ref(&data), &LossModel::linear()).unwrap();
        prop_assume!(curv.strong_convexity > 1e-3 * curv.lipschitz);
        let delta = rng.random_range(0.1..1.9) / curv.lipschitz;
        let w: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let global: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, local) = loss_and_grad(&LossModel::linear(), &w, &data).unwrap();
        let g = Surrogate::new(&data, LossModel::linear(), &w, &global, &local, 0.1).unwrap();
        let s = solve_local(&g, delta, LocalSolver::Gd, LocalStop::AccuracyTarget(eta), ORACLE_TOL, &mut rng).unwrap();
        prop_assert!(s.measured_eta <= eta + 1e-12);
        prop_assert!(s.iters as f64 <= local_iteration_bound(&curv, delta, eta));
    }
}
