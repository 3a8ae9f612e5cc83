//! Trains and evaluates every scheme at the reference setting.
//!
//! `cargo run --release -p metaslice-core --example compare_schemes -- [steps] [seed]`

use std::time::Instant;

use metaslice_core::harness::{evaluate_scheme, train, ExperimentConfig, Scheme};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let steps: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(100_000);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1);
    let capacity: Option<u32> = args.next().map(|s| s.parse()).transpose()?;

    let mut cfg = ExperimentConfig::reference();
    if let Some(units) = capacity {
        cfg = cfg.with_function_capacity(units);
    }
    cfg.trainer.total_steps = steps;
    cfg.log_interval = (steps / 10).max(1);

    for scheme in Scheme::ALL {
        let start = Instant::now();
        let run = train(&cfg, scheme, seed)?;
        let m = evaluate_scheme(&cfg, scheme, seed, run.policy.as_ref())?;
        let per_class: Vec<String> = m.class_acceptance().iter().map(|p| format!("{p:.3}")).collect();
        println!(
            "{scheme:>9}  avg_reward {:.4}  accept {:.3}  per-class [{}]  ({:.1}s)",
            m.average_reward(),
            m.acceptance(),
            per_class.join(", "),
            start.elapsed().as_secs_f64()
        );
        for row in &run.rows {
            println!(
                "           step {:>7} reward {:.4} accept {:.3} eps {:?} loss {:?}",
                row.step, row.avg_reward, row.accept_prob, row.epsilon, row.loss
            );
        }
    }
    Ok(())
}
