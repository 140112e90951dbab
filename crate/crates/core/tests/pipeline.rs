use hbl_core::fixedpoints::{detect_bifurcations, track_along_trajectory, BifurcationKind, SeedBattery, TrackSettings};
use hbl_core::integrate::Integrator;
use hbl_core::memory::{forgetting_log, TrialCounts};
use hbl_core::model::{NetworkConfig, StimulusSchedule, TrainingSet};
use hbl_core::rng::{Purpose, SeedSplitter};
use hbl_core::simulate::{integrate_learning, make_initial_conditions, WeightTrajectory};
use hbl_core::Scalar;

fn run<T: Scalar>(cfg: &NetworkConfig<T>, k: usize, root: u64, sample_dt: f64) -> (TrainingSet, WeightTrajectory<T>) {
    let split = SeedSplitter::new(root);
    let set = TrainingSet::generate(cfg.n, k, split.seed_for(Purpose::TrainingSet));
    let ics = make_initial_conditions(cfg, split.seed_for(Purpose::InitialConditions));
    let schedule = StimulusSchedule::new(set.clone(), cfg.t_s);
    let traj = integrate_learning(cfg, &schedule, &ics, T::of(sample_dt), Integrator::default()).unwrap();
    (set, traj)
}

fn n3() -> NetworkConfig<f64> {
    NetworkConfig {
        g: 5.0,
        t_train: 96.0,
        ..NetworkConfig::with_n(3)
    }
}

fn battery(n: usize, set: &TrainingSet, random: usize) -> SeedBattery<f64> {
    SeedBattery::new(
        n,
        Some(set),
        20,
        random,
        SeedSplitter::new(1).seed_for(Purpose::SeedBattery),
    )
}

#[test]
fn learning_runs_are_deterministic() {
    let cfg = NetworkConfig::with_n(8);
    let cfg = NetworkConfig { t_train: 48.0, ..cfg };
    let (_, a) = run(&cfg, 6, 7, 0.5);
    let (_, b) = run(&cfg, 6, 7, 0.5);
    assert_eq!(a.snapshots, b.snapshots);
    assert_eq!(a.x_samples, b.x_samples);
}

#[test]
fn single_precision_run_tracks_double_precision() {
    let cfg = n3();
    let (_, a) = run(&cfg, 3, 1, 0.5);
    let cfg32 = NetworkConfig::<f32> {
        g: 5.0,
        t_train: 96.0,
        ..NetworkConfig::with_n(3)
    };
    let (_, b) = run(&cfg32, 3, 1, 0.5);
    let worst = a
        .snapshots
        .iter()
        .zip(&b.snapshots)
        .flat_map(|(x, y)| x.entries().iter().zip(y.entries()).map(|(p, q)| (p - *q as f64).abs()))
        .fold(0.0, f64::max);
    assert!(worst < 1e-4, "worst {worst}");
}

#[test]
fn small_network_pitchfork_cycle_and_forgetting() {
    let cfg = n3();
    let (set, traj) = run(&cfg, 3, 1, 0.1);
    let s = TrackSettings::default();
    let tracking = track_along_trajectory(&traj, &cfg, &battery(3, &set, 50), (0.0, 96.0), &s).unwrap();
    let events = detect_bifurcations(&tracking, &traj, &cfg, &s).unwrap();
    let kinds: Vec<BifurcationKind> = events.iter().map(|e| e.kind).collect();
    assert_eq!(
        kinds,
        [
            BifurcationKind::Pitchfork,
            BifurcationKind::ReversePitchfork,
            BifurcationKind::Pitchfork
        ]
    );
    assert!(events.windows(2).all(|w| w[0].t_star <= w[1].t_star));
    for c in tracking.census() {
        assert!(c.stable == 1 || c.stable == 2);
    }

    let counts = TrialCounts {
        per_pattern: 20,
        type3: 0,
    };
    let seed = SeedSplitter::new(1).seed_for(Purpose::Perturbations);
    let log = forgetting_log(&traj, &cfg, &set, &tracking, &events, counts, seed, &Default::default()).unwrap();
    assert!(!log.incidents.is_empty());
    for i in &log.incidents {
        assert_eq!(i.kind, BifurcationKind::ReversePitchfork);
        assert!(i.labelled_at < i.t_star);
    }
}

#[test]
fn fold_times_do_not_depend_on_sampling() {
    let cfg = NetworkConfig {
        g: 1.6,
        t_train: 36.0,
        ..NetworkConfig::with_n(16)
    };
    let s = TrackSettings::default();
    let mut times = Vec::new();
    for dt in [0.1, 0.05] {
        let (set, traj) = run(&cfg, 6, 1, dt);
        let tracking = track_along_trajectory(&traj, &cfg, &battery(16, &set, 100), (20.0, 26.0), &s).unwrap();
        let events = detect_bifurcations(&tracking, &traj, &cfg, &s).unwrap();
        let fold = events
            .iter()
            .find(|e| e.kind == BifurcationKind::SaddleNodeBirth)
            .expect("fold in window");
        times.push(fold.t_star);
    }
    assert!((times[0] - times[1]).abs() < 1e-6, "{times:?}");
}
