//! Command-line runner: pre-train policies, run transfer experiments,
//! evaluate checkpoints, sweep seed grids and re-render charts.
//!
//! Exit codes: 0 success, 2 configuration error, 3 integrity failure,
//! 1 anything else.

use btrl::env::make_env;
use btrl::error::Error;
use btrl::harness::config::Phase;
use btrl::harness::{emit_metrics, evaluate, pretrain_run, transfer_run, Checkpoint, ExperimentConfig, RunRecord};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "btrl", version, about = "Exploration with frozen pre-trained policies: pretrain/transfer experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration file (`section.key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Override `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for metrics, charts and checkpoints.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Serialize all workers into one thread with a fixed interleave.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Reward-free pre-training; writes checkpoint.btck plus metrics.
    Pretrain(RunArgs),
    /// Downstream training on the extrinsic reward; writes metrics.
    Transfer(RunArgs),
    /// Greedy evaluation of a checkpoint on the configured environment.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint to evaluate (defaults to `run.pretrained_checkpoint`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Number of evaluation episodes (defaults to `run.eval_episodes`).
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Run the configured phase across a grid of seeds.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Seed grid: `a..b` (half-open) or a comma list like `1,2,5`.
        #[arg(long, default_value = "0..10")]
        seeds: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        deterministic: bool,
    },
    /// Re-render the SVG charts from an existing metrics.csv.
    Plot {
        /// Path to a metrics.csv produced by a run.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn load_config(path: &Path, seed: Option<u64>, deterministic: bool) -> Result<ExperimentConfig, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut cfg = ExperimentConfig::from_text(&text)?;
    if let Some(s) = seed {
        cfg.run.seed = s;
    }
    if deterministic {
        cfg.run.deterministic = true;
    }
    Ok(cfg)
}

fn parse_seeds(spec: &str) -> Result<Vec<u64>, Error> {
    if let Some((a, b)) = spec.split_once("..") {
        let lo: u64 = a
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad seed range `{spec}`")))?;
        let hi: u64 = b
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad seed range `{spec}`")))?;
        if hi <= lo {
            return Err(Error::Config(format!("empty seed range `{spec}`")));
        }
        return Ok((lo..hi).collect());
    }
    spec.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad seed `{s}`")))
        })
        .collect()
}

fn print_record_tail(record: &RunRecord) {
    if let Some(last) = record.rows.last() {
        println!(
            "final: env_steps={} mean_return={:.4} median_return={:.4} steps_to_first_reward={} extra_action_usage={:.4}",
            last.env_steps,
            last.mean_return,
            last.median_return,
            last.steps_to_first_reward,
            last.extra_action_usage
        );
    }
}

fn run_one(cfg: &ExperimentConfig, out: &Path) -> Result<RunRecord, Error> {
    std::fs::create_dir_all(out)?;
    let record = match cfg.run.phase {
        Phase::Transfer => transfer_run(cfg)?,
        _ => {
            let (checkpoint, record) = pretrain_run(cfg)?;
            let path = out.join("checkpoint.btck");
            checkpoint.write(&path)?;
            println!("checkpoint written to {}", path.display());
            record
        }
    };
    let files = emit_metrics(&record, out)?;
    println!("wrote {} metric files under {}", files.len(), out.display());
    Ok(record)
}

fn main_inner() -> Result<(), Error> {
    match Cli::parse().command {
        Command::Pretrain(args) => {
            let cfg = load_config(&args.config, args.seed, args.deterministic)?;
            if !cfg.run.phase.is_pretrain() {
                return Err(Error::Config(
                    "pretrain verb requires run.phase = pretrain_ngu or pretrain_rnd".into(),
                ));
            }
            let record = run_one(&cfg, &args.out)?;
            print_record_tail(&record);
        }
        Command::Transfer(args) => {
            let cfg = load_config(&args.config, args.seed, args.deterministic)?;
            if cfg.run.phase != Phase::Transfer {
                return Err(Error::Config("transfer verb requires run.phase = transfer".into()));
            }
            let record = run_one(&cfg, &args.out)?;
            print_record_tail(&record);
        }
        Command::Eval {
            config,
            checkpoint,
            episodes,
        } => {
            let cfg = load_config(&config, None, false)?;
            let path = checkpoint
                .or(cfg.run.pretrained_checkpoint.clone())
                .ok_or_else(|| {
                    Error::Config("eval needs --checkpoint or run.pretrained_checkpoint".into())
                })?;
            let ck = Checkpoint::read(&path)?;
            let mut env = make_env(cfg.env.clone())?;
            let episodes = episodes.unwrap_or(cfg.run.eval_episodes);
            let summary = evaluate(&ck.qf, None, &mut env, episodes)?;
            println!(
                "episodes={} mean_return={:.4} median_return={:.4} mean_length={:.2} unique_states={:.2}",
                episodes,
                summary.mean_return,
                summary.median_return,
                summary.mean_length,
                summary.mean_unique_states
            );
        }
        Command::Sweep {
            config,
            seeds,
            out,
            deterministic,
        } => {
            let seeds = parse_seeds(&seeds)?;
            std::fs::create_dir_all(&out)?;
            let mut summary = String::from(
                "seed,final_mean_return,final_median_return,steps_to_first_reward,final_extra_action_usage\n",
            );
            for seed in &seeds {
                let cfg = load_config(&config, Some(*seed), deterministic)?;
                let dir = out.join(format!("seed_{seed}"));
                let record = run_one(&cfg, &dir)?;
                let last = record
                    .rows
                    .last()
                    .ok_or_else(|| Error::Validation("run produced no evaluations".into()))?;
                summary.push_str(&format!(
                    "{seed},{:?},{:?},{},{:?}\n",
                    last.mean_return,
                    last.median_return,
                    last.steps_to_first_reward,
                    last.extra_action_usage
                ));
                println!("seed {seed}: final mean_return {:.4}", last.mean_return);
            }
            let sweep_path = out.join("sweep.csv");
            std::fs::write(&sweep_path, summary)?;
            println!("sweep summary written to {}", sweep_path.display());
        }
        Command::Plot { input, out } => {
            let text = std::fs::read_to_string(&input)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", input.display())))?;
            let record = RunRecord::from_csv(&text)?;
            let files = emit_metrics(&record, &out)?;
            println!("wrote {} files under {}", files.len(), out.display());
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = main_inner() {
        eprintln!("error: {e}");
        let code = match e {
            Error::Config(_) => 2,
            Error::Integrity(_) => 3,
            _ => 1,
        };
        std::process::exit(code);
    }
}
