//! `metaslice`: train, evaluate and sweep admission policies.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use metaslice_core::harness::{
    evaluate_for, run_capacity_sweep, run_convergence, write_sweep, ExperimentConfig, MetricsRow, Scheme,
};
use metaslice_core::{EvalMetrics, QNetwork};

#[derive(Parser)]
#[command(name = "metaslice", version, about = "MetaSlice admission control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one scheme and write its convergence CSV, policy and checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scheme named in the config.
        #[arg(long)]
        scheme: Option<Scheme>,
        /// Overrides trainer.total_steps.
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long, short)]
        quiet: bool,
    },
    /// Evaluate a saved policy (or the greedy baseline) with exploration off.
    Eval {
        /// Policy file written by `train`; omit for the greedy scheme.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        config: PathBuf,
        /// Decision epochs to evaluate.
        #[arg(long)]
        episodes: u64,
        #[arg(long)]
        scheme: Option<Scheme>,
        /// Seeds the evaluation event stream.
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Train and evaluate every (capacity, scheme, seed) cell; write sweep.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Function-capacity units per resource type, e.g. 10,15,20.
        #[arg(long, value_delimiter = ',', required = true)]
        capacities: Vec<u32>,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_values_t = Scheme::ALL)]
        schemes: Vec<Scheme>,
        /// Output directory; defaults to the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config file and print the derived quantities.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    if !path.is_file() {
        bail!("config file not found: {}", path.display());
    }
    ExperimentConfig::load(path).with_context(|| format!("config {} rejected", path.display()))
}

fn class_list(p: &[f64]) -> String {
    p.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ")
}

fn print_row(row: &MetricsRow) {
    let extra = match (row.epsilon, row.loss) {
        (Some(e), Some(l)) => format!("  eps {e:.4}  loss {l:.5}"),
        (Some(e), None) => format!("  eps {e:.4}"),
        _ => String::new(),
    };
    println!(
        "step {:>8}  reward {:.4}  accept {:.4}  by class [{}]{extra}",
        row.step,
        row.avg_reward,
        row.accept_prob,
        class_list(&row.accept_by_class)
    );
}

fn print_eval(label: &str, m: &EvalMetrics) {
    println!(
        "{label}: epochs {}  avg_reward {:.6}  accept {:.4}  by class [{}]",
        m.epochs,
        m.average_reward(),
        m.acceptance(),
        class_list(&m.class_acceptance())
    );
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            seed,
            out,
            scheme,
            steps,
            quiet,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = scheme {
                cfg.scheme = s;
            }
            if let Some(t) = steps {
                if t == 0 {
                    bail!("--steps must be positive");
                }
                cfg.trainer.total_steps = t;
            }
            let report = run_convergence(&cfg, seed, &out, |row| {
                if !quiet {
                    print_row(row)
                }
            })
            .with_context(|| format!("training {} with seed {seed}", cfg.scheme))?;
            print_eval(&format!("{} seed {seed}", cfg.scheme), &report.eval);
            println!("wrote {}", report.csv.display());
            if let Some(p) = &report.policy {
                println!("wrote {}", p.display());
            }
            println!("wrote {}", report.checkpoint.display());
        }
        Command::Eval {
            policy,
            config,
            episodes,
            scheme,
            seed,
        } => {
            let cfg = load_config(&config)?;
            if episodes == 0 {
                bail!("--episodes must be positive");
            }
            let scheme = scheme.unwrap_or(if policy.is_some() { cfg.scheme } else { Scheme::Greedy });
            let net = match (&policy, scheme.is_learned()) {
                (Some(path), true) => {
                    if !path.is_file() {
                        bail!("policy file not found: {}", path.display());
                    }
                    Some(QNetwork::load(path).with_context(|| format!("policy {} rejected", path.display()))?)
                }
                (None, true) => bail!("scheme {scheme} is learned; pass --policy"),
                (Some(_), false) => bail!("scheme {scheme} takes no policy file"),
                (None, false) => None,
            };
            let m = evaluate_for(&cfg, scheme, seed, net.as_ref(), episodes)?;
            print_eval(&format!("{scheme} seed {seed}"), &m);
        }
        Command::Sweep {
            config,
            capacities,
            seeds,
            schemes,
            out,
        } => {
            let cfg = load_config(&config)?;
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            let rows = run_capacity_sweep(&cfg, &capacities, &seeds, &schemes)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let path = out.join("sweep.csv");
            write_sweep(&path, cfg.env.classes.len(), &rows)?;
            for r in &rows {
                println!(
                    "capacity {:>3}  {:>8}  seed {:>3}  avg_reward {:.6}  accept {:.4}  by class [{}]",
                    r.capacity_units,
                    r.scheme,
                    r.seed,
                    r.avg_reward,
                    r.accept_prob,
                    class_list(&r.accept_by_class)
                );
            }
            println!("wrote {}", path.display());
        }
        Command::ValidateConfig { config } => {
            let cfg = load_config(&config)?;
            let env = &cfg.env;
            println!("config ok: {}", config.display());
            println!("digest = {}", cfg.digest());
            println!("scheme = {}", cfg.scheme);
            println!("classes = {}", env.classes.len());
            println!("capacity = {} function-units", env.capacity);
            println!("instance capacity = {}", env.instance_capacity());
            println!("X_max = {}", cfg.max_concurrent_slices());
            println!("z = {}/h", cfg.uniformization_rate());
            println!("state width = {}", 2 * env.capacity.len() + env.classes.len());
            println!("total steps = {}", cfg.trainer.total_steps);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
