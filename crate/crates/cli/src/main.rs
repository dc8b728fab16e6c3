use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use advimitate::checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
use advimitate::config::TrainConfig;
use advimitate::demos::{load_demos, load_demos_for, save_demos, DEMO_MAGIC};
use advimitate::train::{
    build_demos, evaluate_checkpoint, evaluate_tabular, inspect_checkpoint, train, TrainEvent,
    TrainOptions,
};
use advimitate::Error;
use clap::{Args, Parser, Subcommand};

const EXIT_USAGE: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "advimitate", version, about = "Adversarial imitation learning from demonstrations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config file; unset keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-path override, e.g. `ppo.epsilon=0.1`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Replaces the top-level `seed` (and `demos.seed` for `demos`).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the environment, sample expert demonstrations and save them.
    Demos {
        #[command(flatten)]
        common: Common,
        /// Output file (default: `demos_path` from the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a policy and discriminator against saved demonstrations.
    Train {
        #[command(flatten)]
        common: Common,
        /// Output directory (default: `out_dir` from the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Demonstration file (default: `demos_path` from the config).
        #[arg(long)]
        demos: Option<PathBuf>,
        /// Suppress the per-iteration progress lines.
        #[arg(long)]
        quiet: bool,
    },
    /// Greedy evaluation of a checkpoint (or of the value-iteration expert).
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate.
        #[arg(long, required_unless_present = "expert")]
        checkpoint: Option<PathBuf>,
        /// Evaluate the greedy value-iteration policy instead.
        #[arg(long)]
        expert: bool,
        /// Demonstrations to measure occupancy distance against.
        #[arg(long)]
        demos: Option<PathBuf>,
        /// Episodes (default: `eval_episodes` from the config).
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Print a summary of a checkpoint or demo file, or the resolved config.
    Inspect {
        #[command(flatten)]
        common: Common,
        /// Checkpoint or demo file; without it the resolved config is printed.
        path: Option<PathBuf>,
    },
}

fn load_config(c: &Common, demos_seed: bool) -> advimitate::Result<TrainConfig> {
    let mut overrides = c.overrides.clone();
    if let Some(s) = c.seed {
        overrides.push(format!("seed={s}"));
        if demos_seed {
            overrides.push(format!("demos.seed={s}"));
        }
    }
    TrainConfig::load(c.config.as_deref(), &overrides)
}

fn run(cli: Cli) -> advimitate::Result<()> {
    match cli.command {
        Command::Demos { common, out } => {
            let cfg = load_config(&common, true)?;
            let path = out.unwrap_or_else(|| cfg.demos_path.clone());
            let (_, demos) = build_demos(&cfg)?;
            save_demos(&demos, &path)?;
            println!(
                "wrote {} episodes ({} transitions, mean return {:.4}) to {}",
                demos.trajectories.len(),
                demos.num_transitions(),
                demos.mean_return,
                path.display()
            );
        }
        Command::Train {
            common,
            out,
            demos,
            quiet,
        } => {
            let cfg = load_config(&common, false)?;
            let spec = cfg.env.build()?.spec();
            let demos = load_demos_for(demos.as_deref().unwrap_or(&cfg.demos_path), &spec)?;
            let stop = Arc::new(AtomicBool::new(false));
            {
                let stop = stop.clone();
                // A second handler cannot be installed in the same process; ignore that case.
                let _ = ctrlc::set_handler(move || stop.store(true, Ordering::SeqCst));
            }
            let opts = TrainOptions {
                out_dir: out.unwrap_or_else(|| cfg.out_dir.clone()),
                stop: Some(&stop),
            };
            let summary = train(&cfg, &demos, &opts, &mut |e| {
                if let (TrainEvent::Metrics(r), false) = (e, quiet) {
                    eprintln!(
                        "iter {:4}  return {:+.4}  D(pol) {:.3}  D(exp) {:.3}  entropy {:.3}  occupancy {:.3}",
                        r.iteration,
                        r.mean_episode_return,
                        r.mean_d_policy,
                        r.mean_d_expert,
                        r.policy_entropy,
                        r.occupancy_distance
                    );
                }
            })?;
            if summary.interrupted {
                eprintln!("interrupted after {} iterations", summary.rows.len());
            }
            println!("metrics: {}", summary.metrics.display());
            println!("checkpoint: {}", summary.checkpoint.display());
        }
        Command::Eval {
            common,
            checkpoint,
            expert,
            demos,
            episodes,
        } => {
            let cfg = load_config(&common, false)?;
            let mut env = cfg.env.build()?;
            let n = episodes.unwrap_or(cfg.eval_episodes);
            let summary = if expert {
                let (policy, _) = build_demos(&cfg)?;
                evaluate_tabular(&policy, env.as_mut(), n, cfg.seed)?
            } else {
                let path = checkpoint.expect("clap enforces --checkpoint without --expert");
                let ckpt = Checkpoint::load(&path)?;
                let demos = demos.as_deref().map(load_demos).transpose()?;
                evaluate_checkpoint(&ckpt, env.as_mut(), n, cfg.seed, demos.as_ref())?
            };
            println!("episodes {}", summary.episodes);
            println!("mean_return {:.6}", summary.mean_return);
            println!("std_return {:.6}", summary.std_return);
            println!("mean_length {:.3}", summary.mean_length);
            if let Some(d) = summary.occupancy_distance {
                println!("occupancy_distance {d:.6}");
            }
        }
        Command::Inspect { common, path } => match path {
            None => print!("{}", load_config(&common, false)?.to_toml()),
            Some(p) => inspect_file(&p)?,
        },
    }
    Ok(())
}

fn inspect_file(path: &Path) -> advimitate::Result<()> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(DEMO_MAGIC) {
        let d = load_demos(path)?;
        println!("demos {}", path.display());
        println!("env_fingerprint {:016x}", d.env_fingerprint);
        println!("state_dim {}", d.state_dim);
        println!("n_actions {}", d.n_actions);
        println!("episodes {}", d.trajectories.len());
        println!("transitions {}", d.num_transitions());
        println!("mean_return {:.6}", d.mean_return);
    } else if bytes.starts_with(CHECKPOINT_MAGIC.as_bytes()) {
        println!("checkpoint {}", path.display());
        print!("{}", inspect_checkpoint(&Checkpoint::load(path)?));
    } else {
        return Err(Error::Format(format!(
            "{} is neither a demo file nor a checkpoint",
            path.display()
        )));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Numerical(_) => EXIT_NUMERICAL,
                _ => EXIT_USAGE,
            })
        }
    }
}
