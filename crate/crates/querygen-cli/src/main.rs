//! Command-line front end for the query-recommendation pipeline.
//!
//! Typical flow:
//!
//! ```text
//! querygen synth-data   --workspace ws --seed 7
//! querygen build-samples --workspace ws
//! querygen train-sft    --workspace ws --seed 7 --mode direct
//! querygen train-rl     --workspace ws --seed 7 --mode direct
//! querygen build-index  --workspace ws --seed 7
//! querygen simulate     --workspace ws --seed 7 --day 8 --retrain
//! querygen eval         --workspace ws --seed 7
//! ```

use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use querygen_core::config::PipelineConfig;
use querygen_core::eval::{evaluate, read_predictions, read_truth, write_report};
use querygen_core::pipeline::{self, Mode, Workspace};

#[derive(Parser)]
#[command(
    name = "querygen",
    about = "Generative hint-query recommendation: corpus synthesis, list-level SFT, interest-aware list GRPO, and hybrid u2q/x2q serving",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Workspace directory holding all pipeline files.
    #[arg(long, default_value = "workspace")]
    workspace: PathBuf,
    /// Master random seed.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Optional key=value config file overriding the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    print_config: bool,
}

impl Common {
    fn load(&self) -> anyhow::Result<(Workspace, PipelineConfig)> {
        let cfg = PipelineConfig::load(self.config.as_deref())?;
        if self.print_config {
            print!("{}", cfg.dump());
            std::process::exit(0);
        }
        Ok((Workspace::new(&self.workspace), cfg))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the behavior corpus, hidden preferences and vocabulary.
    SynthData {
        #[command(flatten)]
        common: Common,
        /// Override synth.n_users.
        #[arg(long)]
        users: Option<usize>,
    },
    /// Aggregate sessions and build the direct/think training datasets.
    BuildSamples {
        #[command(flatten)]
        common: Common,
    },
    /// Supervised fine-tuning of one model variant from a fresh init.
    TrainSft {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "direct")]
        mode: Mode,
    },
    /// IL-GRPO reinforcement learning on top of the SFT checkpoint.
    TrainRl {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "direct")]
        mode: Mode,
    },
    /// Distill think-model outputs into the x2q trigger index.
    BuildIndex {
        #[command(flatten)]
        common: Common,
    },
    /// Replay one day through the serving stack (optionally with the daily
    /// CTR-then-RL retraining cycle).
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Calendar day to replay; defaults to the held-out day.
        #[arg(long)]
        day: Option<i64>,
        /// Run the daily continuous-training cycle on the day's logs.
        #[arg(long)]
        retrain: bool,
    },
    /// Score predictions against held-out-day truth.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Score an existing predictions file instead of generating one.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Truth file to score against (defaults to the corpus held-out day).
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Policy checkpoint to generate predictions with.
        #[arg(long)]
        policy: Option<PathBuf>,
    },
}

fn run() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::SynthData { common, users } => {
            let (ws, mut cfg) = common.load()?;
            if let Some(n) = users {
                cfg.synth.n_users = n;
            }
            let s = pipeline::synth_data(&ws, common.seed, &cfg).context("synth-data")?;
            println!(
                "synth-data: {} users, {} log lines -> {}",
                s.users,
                s.lines,
                ws.corpus_log().display()
            );
        }
        Command::BuildSamples { common } => {
            let (ws, cfg) = common.load()?;
            let s = pipeline::build_samples(&ws, &cfg).context("build-samples")?;
            println!(
                "build-samples: {} direct samples ({} exposures dropped for no click), \
                 {} think samples ({} dropped empty), {} rejected log lines",
                s.direct_samples, s.dropped_no_click, s.think_samples, s.think_dropped, s.rejects
            );
        }
        Command::TrainSft { common, mode } => {
            let (ws, cfg) = common.load()?;
            let losses =
                pipeline::train_sft_stage(&ws, common.seed, &cfg, mode).context("train-sft")?;
            println!(
                "train-sft[{}]: {} epochs, loss {} -> {}",
                mode.as_str(),
                losses.len(),
                losses
                    .iter()
                    .map(|l| format!("{l:.4}"))
                    .collect::<Vec<_>>()
                    .join(" -> "),
                ws.policy_sft(mode).display()
            );
        }
        Command::TrainRl { common, mode } => {
            let (ws, cfg) = common.load()?;
            let metrics =
                pipeline::train_rl_stage(&ws, common.seed, &cfg, mode).context("train-rl")?;
            let first = metrics.first().map(|m| m.mean_reward).unwrap_or(0.0);
            let last = metrics.last().map(|m| m.mean_reward).unwrap_or(0.0);
            println!(
                "train-rl[{}]: {} steps, mean reward {first:.4} -> {last:.4}, metrics -> {}",
                mode.as_str(),
                metrics.len(),
                ws.rl_metrics(mode).display()
            );
        }
        Command::BuildIndex { common } => {
            let (ws, cfg) = common.load()?;
            let s = pipeline::build_index_stage(&ws, common.seed, &cfg).context("build-index")?;
            println!(
                "build-index: {} users, {} parsed reasoning outputs, {} trigger keys -> {}",
                s.users_processed,
                s.parsed_outputs,
                s.triggers,
                ws.x2q_index().display()
            );
        }
        Command::Simulate {
            common,
            day,
            retrain,
        } => {
            let (ws, cfg) = common.load()?;
            let day = day.unwrap_or_else(|| cfg.test_day());
            let s = pipeline::simulate_stage(&ws, common.seed, &cfg, day, retrain)
                .context("simulate")?;
            println!(
                "simulate[day {}]: {} interactions from {}/{} exposure opportunities, {} inference runs",
                s.day, s.interactions, s.exposures_served, s.exposure_opportunities, s.inference_runs
            );
            for e in &s.cycle_events {
                println!("  cycle: {e}");
            }
        }
        Command::Eval {
            common,
            predictions,
            truth,
            policy,
        } => {
            let (ws, cfg) = common.load()?;
            let report = match (&predictions, &truth) {
                (Some(pred_path), truth_path) => {
                    let preds = read_predictions(pred_path).context("read predictions")?;
                    let truth_path = truth_path.clone().unwrap_or_else(|| ws.truth());
                    let truth = read_truth(&truth_path).context("read truth")?;
                    let catalog = querygen_core::behavior_log::QueryCatalog::from_taxonomy(
                        &querygen_core::behavior_log::Taxonomy::new(),
                    );
                    let report = evaluate(&preds, &truth, cfg.eval_k, &catalog);
                    write_report(&ws.eval_report(), &report)?;
                    report
                }
                (None, _) => pipeline::eval_stage(&ws, common.seed, &cfg, policy.as_deref())
                    .context("eval")?,
            };
            println!(
                "eval@{}: users={} query_hr={:.4} cate_hr={:.4} unique_cates={:.3} sem_sim(rouge-l-f proxy)={:.4}",
                report.k,
                report.users,
                report.query_hr_at_k,
                report.cate_hr_at_k,
                report.unique_cates,
                report.sem_sim_proxy
            );
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
