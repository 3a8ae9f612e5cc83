//! Whole-pipeline reproducibility and bookkeeping under long runs.

use metaslice_core::harness::{train, ExperimentConfig, Scheme};
use metaslice_core::{rng_stream, streams, Action, EnvConfig, MetaSliceEnv, Trainer, TrainerConfig};
use rand::Rng;

/// (available, requested, class, reward, accepted) per decision epoch.
type Trace = Vec<(Vec<u32>, Vec<u32>, usize, f64, bool)>;

fn random_trace(seed: u64, epochs: usize) -> Trace {
    let mut env = MetaSliceEnv::new(EnvConfig::reference(), rng_stream(seed, streams::ENV)).unwrap();
    let mut coin = rng_stream(seed, 99);
    (0..epochs)
        .map(|_| {
            let s = env.state();
            let a = if coin.random_bool(0.7) {
                Action::Accept
            } else {
                Action::Reject
            };
            let step = env.step(a).unwrap();
            (
                s.available.amounts().to_vec(),
                s.requested.amounts().to_vec(),
                s.class_id,
                step.reward,
                step.info.accepted,
            )
        })
        .collect()
}

#[test]
fn same_seed_same_trace() {
    assert_eq!(random_trace(3, 5_000), random_trace(3, 5_000));
    assert_ne!(random_trace(3, 500), random_trace(4, 500));
}

#[test]
fn audited_env_survives_long_random_play() {
    let mut env = MetaSliceEnv::new(EnvConfig::reference(), rng_stream(8, streams::ENV)).unwrap();
    env.set_audit(true);
    let mut coin = rng_stream(8, 99);
    let cap = env.config().capacity.clone();
    for _ in 0..50_000 {
        let s = env.state();
        assert!(s.available.fits_within(&cap) && s.requested.fits_within(&cap));
        let live: u32 = env.occupancy().iter().sum();
        assert_eq!(live as usize, env.analyzer().live_slices());
        assert!(live <= env.config().max_concurrent_slices());
        let a = if coin.random_bool(0.8) {
            Action::Accept
        } else {
            Action::Reject
        };
        env.step(a).unwrap();
    }
}

#[test]
fn trainers_with_equal_seeds_have_equal_parameters() {
    let cfg = TrainerConfig {
        total_steps: 1_500,
        warmup: 100,
        target_sync: 250,
        ..TrainerConfig::default()
    };
    let run = || {
        let mut env = MetaSliceEnv::new(EnvConfig::reference(), rng_stream(6, streams::ENV)).unwrap();
        let mut t = Trainer::new(cfg.clone(), env.encoding_width(), 6).unwrap();
        for _ in 0..cfg.total_steps {
            t.train_step(&mut env).unwrap();
        }
        t.into_online()
    };
    assert_eq!(run(), run());
}

#[test]
fn harness_runs_are_reproducible_per_scheme() {
    let mut cfg = ExperimentConfig::reference();
    cfg.trainer.total_steps = 1_200;
    cfg.trainer.warmup = 100;
    cfg.log_interval = 300;
    for scheme in Scheme::ALL {
        let a = train(&cfg, scheme, 2).unwrap();
        let b = train(&cfg, scheme, 2).unwrap();
        assert_eq!(a.rows, b.rows, "{scheme}");
        assert_eq!(a.policy, b.policy, "{scheme}");
    }
}
