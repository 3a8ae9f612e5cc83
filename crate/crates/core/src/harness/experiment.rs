//! Convergence runs, post-training evaluation and capacity sweeps.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{evaluate, EvalMetrics, Greedy, Policy, QPolicy, Trainer};
use crate::env::MetaSliceEnv;
use crate::error::Error;
use crate::harness::config::{ExperimentConfig, Scheme};
use crate::harness::report::{write_convergence, MetricsRow, SweepRow};
use crate::neural::QNetwork;
use crate::{rng_stream, streams};

/// Per-window tallies behind one [`MetricsRow`].
struct Window {
    epochs: u64,
    reward: f64,
    arrivals: Vec<u64>,
    accepted: Vec<u64>,
    loss_sum: f64,
    loss_count: u64,
}

impl Window {
    fn new(classes: usize) -> Self {
        Window {
            epochs: 0,
            reward: 0.0,
            arrivals: vec![0; classes],
            accepted: vec![0; classes],
            loss_sum: 0.0,
            loss_count: 0,
        }
    }

    fn record(&mut self, class_id: usize, accepted: bool, reward: f64, loss: Option<f64>) {
        self.epochs += 1;
        self.reward += reward;
        self.arrivals[class_id - 1] += 1;
        if accepted {
            self.accepted[class_id - 1] += 1;
        }
        if let Some(l) = loss {
            self.loss_sum += l;
            self.loss_count += 1;
        }
    }

    fn flush(&mut self, step: u64, epsilon: Option<f64>) -> MetricsRow {
        let ratio = |a: u64, n: u64| if n == 0 { 0.0 } else { a as f64 / n as f64 };
        let row = MetricsRow {
            step,
            avg_reward: self.reward / self.epochs.max(1) as f64,
            accept_prob: ratio(self.accepted.iter().sum(), self.arrivals.iter().sum()),
            accept_by_class: self
                .arrivals
                .iter()
                .zip(&self.accepted)
                .map(|(&n, &a)| ratio(a, n))
                .collect(),
            epsilon,
            loss: (self.loss_count > 0).then(|| self.loss_sum / self.loss_count as f64),
        };
        *self = Window::new(self.arrivals.len());
        row
    }
}

/// Outcome of one training (or greedy simulation) run.
#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub scheme: Scheme,
    pub seed: u64,
    pub steps: u64,
    pub rows: Vec<MetricsRow>,
    /// Learned online network; `None` for greedy.
    pub policy: Option<QNetwork>,
    pub final_epsilon: Option<f64>,
}

/// Runs `cfg.trainer.total_steps` decision epochs of `scheme`, logging a
/// row every `cfg.log_interval` epochs. Greedy only simulates.
pub fn train(cfg: &ExperimentConfig, scheme: Scheme, seed: u64) -> Result<TrainingRun, Error> {
    train_observed(cfg, scheme, seed, |_| {})
}

/// [`train`], calling `on_row` as each metrics row is produced.
pub fn train_observed<F>(cfg: &ExperimentConfig, scheme: Scheme, seed: u64, mut on_row: F) -> Result<TrainingRun, Error>
where
    F: FnMut(&MetricsRow),
{
    let mut env = MetaSliceEnv::new(cfg.env_for(scheme), rng_stream(seed, streams::ENV))?;
    let classes = cfg.env.classes.len();
    let total = cfg.trainer.total_steps;
    let mut window = Window::new(classes);
    let mut rows = Vec::new();
    let mut emit = |rows: &mut Vec<MetricsRow>, row: MetricsRow| {
        on_row(&row);
        rows.push(row);
    };

    if scheme.is_learned() {
        let mut trainer = Trainer::new(cfg.trainer.clone(), env.encoding_width(), seed)?;
        for step in 1..=total {
            let d = trainer.train_step(&mut env)?;
            window.record(d.class_id, d.accepted, d.reward, d.loss);
            if step % cfg.log_interval == 0 || step == total {
                let row = window.flush(step, Some(trainer.epsilon()));
                emit(&mut rows, row);
            }
        }
        let final_epsilon = Some(trainer.epsilon());
        Ok(TrainingRun {
            scheme,
            seed,
            steps: total,
            rows,
            policy: Some(trainer.into_online()),
            final_epsilon,
        })
    } else {
        let mut greedy = Greedy;
        for step in 1..=total {
            let action = greedy.decide(&env.state(), &env.pending_net_demand())?;
            let s = env.step(action)?;
            window.record(s.info.class_id, s.info.accepted, s.reward, None);
            if step % cfg.log_interval == 0 || step == total {
                let row = window.flush(step, None);
                emit(&mut rows, row);
            }
        }
        Ok(TrainingRun {
            scheme,
            seed,
            steps: total,
            rows,
            policy: None,
            final_epsilon: None,
        })
    }
}

/// Evaluates `scheme` for `cfg.eval_horizon` epochs on a fresh environment
/// driven by the evaluation stream of `seed`. Learned schemes need `policy`.
pub fn evaluate_scheme(
    cfg: &ExperimentConfig,
    scheme: Scheme,
    seed: u64,
    policy: Option<&QNetwork>,
) -> Result<EvalMetrics, Error> {
    evaluate_for(cfg, scheme, seed, policy, cfg.eval_horizon)
}

pub fn evaluate_for(
    cfg: &ExperimentConfig,
    scheme: Scheme,
    seed: u64,
    policy: Option<&QNetwork>,
    horizon: u64,
) -> Result<EvalMetrics, Error> {
    let mut env = MetaSliceEnv::new(cfg.env_for(scheme), rng_stream(seed, streams::EVAL))?;
    match (scheme.is_learned(), policy) {
        (false, _) => evaluate(&mut Greedy, &mut env, horizon),
        (true, Some(net)) => {
            let mut p = QPolicy::new(net.clone(), cfg.env.capacity.clone(), cfg.env.classes.len())?;
            evaluate(&mut p, &mut env, horizon)
        }
        (true, None) => Err(Error::InvalidInput(format!("scheme {scheme} needs a policy"))),
    }
}

/// Metadata written next to a saved policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub policy: Option<String>,
    pub scheme: Scheme,
    pub seed: u64,
    pub steps: u64,
    pub epsilon: Option<f64>,
    pub config_digest: String,
    pub eval_horizon: u64,
    pub eval_avg_reward: f64,
    pub eval_accept_prob: f64,
    pub eval_accept_by_class: Vec<f64>,
}

impl Checkpoint {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))
    }
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub csv: PathBuf,
    pub policy: Option<PathBuf>,
    pub checkpoint: PathBuf,
    pub eval: EvalMetrics,
    pub run: TrainingRun,
}

pub fn artifact_stem(scheme: Scheme, seed: u64) -> String {
    format!("{scheme}_seed{seed}")
}

/// Trains `cfg.scheme` with `seed`, then writes into `out_dir`:
/// `convergence_<scheme>_seed<N>.csv`, `policy_<scheme>_seed<N>.qnet`
/// (learned schemes) and `checkpoint_<scheme>_seed<N>.toml`.
pub fn run_convergence<F>(
    cfg: &ExperimentConfig,
    seed: u64,
    out_dir: &Path,
    on_row: F,
) -> Result<ConvergenceReport, Error>
where
    F: FnMut(&MetricsRow),
{
    std::fs::create_dir_all(out_dir)?;
    let scheme = cfg.scheme;
    let run = train_observed(cfg, scheme, seed, on_row)?;
    let stem = artifact_stem(scheme, seed);

    let csv = out_dir.join(format!("convergence_{stem}.csv"));
    write_convergence(&csv, cfg.env.classes.len(), &run.rows)?;

    let policy = match &run.policy {
        Some(net) => {
            let path = out_dir.join(format!("policy_{stem}.qnet"));
            net.save(&path)?;
            Some(path)
        }
        None => None,
    };

    let eval = evaluate_scheme(cfg, scheme, seed, run.policy.as_ref())?;
    let meta = Checkpoint {
        policy: policy
            .as_ref()
            .and_then(|p| p.file_name())
            .map(|n| n.to_string_lossy().into_owned()),
        scheme,
        seed,
        steps: run.steps,
        epsilon: run.final_epsilon,
        config_digest: cfg.digest().to_string(),
        eval_horizon: cfg.eval_horizon,
        eval_avg_reward: eval.average_reward(),
        eval_accept_prob: eval.acceptance(),
        eval_accept_by_class: eval.class_acceptance(),
    };
    let checkpoint = out_dir.join(format!("checkpoint_{stem}.toml"));
    let text = toml::to_string(&meta).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(&checkpoint, text)?;

    Ok(ConvergenceReport {
        csv,
        policy,
        checkpoint,
        eval,
        run,
    })
}

/// Trains (learned schemes) and evaluates every (capacity, scheme, seed)
/// cell. Cells are independent and run in parallel; rows come back in
/// capacity, scheme, seed order.
pub fn run_capacity_sweep(
    cfg: &ExperimentConfig,
    capacities: &[u32],
    seeds: &[u64],
    schemes: &[Scheme],
) -> Result<Vec<SweepRow>, Error> {
    if capacities.contains(&0) {
        return Err(Error::Config("sweep capacities must be positive".into()));
    }
    let cells: Vec<(u32, Scheme, u64)> = capacities
        .iter()
        .flat_map(|&c| {
            schemes
                .iter()
                .flat_map(move |&s| seeds.iter().map(move |&seed| (c, s, seed)))
        })
        .collect();
    cells
        .into_par_iter()
        .map(|(units, scheme, seed)| {
            let cell_cfg = cfg.with_function_capacity(units);
            let policy = if scheme.is_learned() {
                train(&cell_cfg, scheme, seed)?.policy
            } else {
                None
            };
            let m = evaluate_scheme(&cell_cfg, scheme, seed, policy.as_ref())?;
            Ok(SweepRow {
                capacity_units: units,
                scheme,
                seed,
                avg_reward: m.average_reward(),
                accept_prob: m.acceptance(),
                accept_by_class: m.class_acceptance(),
            })
        })
        .collect()
}
