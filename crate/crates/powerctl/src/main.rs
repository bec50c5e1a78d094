//! Command-line interface for the power-control simulator.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use powerctl::env::{self, StateMode};
use powerctl::runner::{
    self, evaluate_exhaustive, final_window, metrics_from_csv, summarize, BackendKind, RunConfig,
};

#[derive(Parser)]
#[command(name = "powerctl", version, about = "Multi-cell power control with in-context-learning example selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by the episode-loop subcommands. Every flag overrides the
/// matching key of the config file.
#[derive(Args, Clone)]
struct RunFlags {
    /// TOML config file; defaults apply for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    #[arg(long, value_enum)]
    state_mode: Option<StateMode>,
    #[arg(long)]
    episodes: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Epsilon used during the exploration phase.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    exploration_fraction: Option<f64>,
    /// Distance weight of the ranking score.
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    k_good: Option<usize>,
    #[arg(long)]
    k_bad: Option<usize>,
    /// Minimum average data rate constraint, bit/s.
    #[arg(long)]
    c_min: Option<f64>,
    #[arg(long)]
    num_bs: Option<usize>,
    /// Independent decision per BS instead of one shared level.
    #[arg(long)]
    per_bs: bool,
    /// Warm-start pool (JSONL).
    #[arg(long)]
    pool: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunFlags {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::from_toml_file(path)
                .with_context(|| format!("loading {}", path.display()))?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.backend {
            config.backend = v;
        }
        if let Some(v) = self.state_mode {
            config.state_mode = v;
        }
        if let Some(v) = self.episodes {
            config.episodes = v;
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
        if let Some(v) = self.epsilon {
            config.epsilon_during_exploration = v;
        }
        if let Some(v) = self.exploration_fraction {
            config.exploration_fraction = v;
        }
        if let Some(v) = self.tau {
            config.tau = v;
        }
        if let Some(v) = self.k_good {
            config.k_good = v;
        }
        if let Some(v) = self.k_bad {
            config.k_bad = v;
        }
        if let Some(v) = self.c_min {
            config.network.min_rate_bps = v;
        }
        if let Some(v) = self.num_bs {
            config.network.num_bs = v;
        }
        if self.per_bs {
            config.per_bs_actions = true;
        }
        if let Some(v) = &self.pool {
            config.warm_start_pool = Some(v.clone());
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the episode loop and write metrics, pool, and transcript.
    Run(RunFlags),
    /// Run seed sweeps over a list of C_min values or BS counts.
    Sweep {
        #[command(flatten)]
        flags: RunFlags,
        /// C_min values (bit/s) to sweep, comma separated.
        #[arg(long, value_delimiter = ',')]
        c_min_values: Vec<f64>,
        /// BS counts to sweep, comma separated.
        #[arg(long, value_delimiter = ',')]
        num_bs_values: Vec<usize>,
        /// Seeds per sweep point.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
    /// Exhaustively evaluate one sampled state and print the best action.
    Oracle {
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Recompute every logged reward from a metrics CSV and its config.
    Replay {
        /// metrics.csv produced by `run`.
        #[arg(long)]
        metrics: PathBuf,
        /// Config the run used (written as config.toml next to the metrics).
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Run(flags) => {
            let config = flags.resolve()?;
            let log = runner::run(&config)?;
            let out_dir = flags.out.unwrap_or_else(|| PathBuf::from("out"));
            runner::write_outputs(&log, &config, &out_dir)?;
            let summary = summarize(final_window(&log.records, 0.2))?;
            println!(
                "{} episodes done; final-20% mean reward {:.3}, power {:.3} W, service quality {:.3}",
                log.records.len(),
                summary.mean_reward,
                summary.mean_power_w,
                summary.service_quality
            );
            println!("outputs in {}", out_dir.display());
            Ok(())
        }
        Command::Sweep {
            flags,
            c_min_values,
            num_bs_values,
            seeds,
        } => {
            let base = flags.resolve()?;
            if c_min_values.is_empty() == num_bs_values.is_empty() {
                bail!("pass exactly one of --c-min-values or --num-bs-values");
            }
            let out_dir = flags.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            std::fs::create_dir_all(&out_dir)?;
            let mut rows =
                String::from("param,value,seeds,mean_reward,mean_power_w,service_quality\n");
            let points: Vec<(&str, f64)> = if c_min_values.is_empty() {
                num_bs_values.iter().map(|&n| ("num_bs", n as f64)).collect()
            } else {
                c_min_values.iter().map(|&c| ("c_min", c)).collect()
            };
            for (param, value) in points {
                let mut config = base.clone();
                match param {
                    "c_min" => config.network.min_rate_bps = value,
                    _ => config.network.num_bs = value as usize,
                }
                let mut reward = 0.0;
                let mut power = 0.0;
                let mut quality = 0.0;
                for s in 0..seeds {
                    config.seed = base.seed + s;
                    let log = runner::run(&config)?;
                    let summary = summarize(final_window(&log.records, 0.2))?;
                    reward += summary.mean_reward;
                    power += summary.mean_power_w;
                    quality += summary.service_quality;
                }
                let n = seeds as f64;
                println!(
                    "{param} = {value}: reward {:.3}, power {:.3} W, quality {:.3}",
                    reward / n,
                    power / n,
                    quality / n
                );
                rows.push_str(&format!(
                    "{param},{value},{seeds},{},{},{}\n",
                    reward / n,
                    power / n,
                    quality / n
                ));
            }
            let path = out_dir.join("sweep.csv");
            std::fs::write(&path, rows)?;
            println!("sweep results in {}", path.display());
            Ok(())
        }
        Command::Oracle { flags } => {
            let config = flags.resolve()?;
            let state = env::sample_state(&config.network, config.state_mode, config.seed)?;
            let (actions, reward) = evaluate_exhaustive(
                &state,
                &config.network,
                config.per_bs_actions,
                config.seed,
            )?;
            let levels: Vec<String> = actions.iter().map(|a| a.to_string()).collect();
            println!(
                "seed {}: best action [{}], mean reward {reward:.4}",
                config.seed,
                levels.join(", ")
            );
            let outcome = env::step(&state, &actions, &config.network, config.seed)?;
            println!("{}", runner::describe_outcome(&outcome));
            Ok(())
        }
        Command::Replay { metrics, config } => {
            let config_path = config.unwrap_or_else(|| {
                metrics
                    .parent()
                    .map(|p| p.join("config.toml"))
                    .unwrap_or_else(|| PathBuf::from("config.toml"))
            });
            let config = RunConfig::from_toml_file(&config_path)
                .with_context(|| format!("loading {}", config_path.display()))?;
            let text = std::fs::read_to_string(&metrics)
                .with_context(|| format!("reading {}", metrics.display()))?;
            let records = metrics_from_csv(&text)?;
            let verified = runner::replay(&records, &config)?;
            println!("replayed {verified} episodes; every reward matches exactly");
            Ok(())
        }
    }
}
