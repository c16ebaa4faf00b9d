//! Command-line front end.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use super::config::ExperimentConfig;
use super::{
    gen_data, prepare_out_dir, run_compare, run_distill, run_oracle_check, run_report, run_sft_teacher, run_sweep,
};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "adaswitch", version, about = "Adaptive-switching knowledge distillation lab")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON config file, or a manifest from an earlier run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set kd.multiplier=4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Run seed; overrides the config's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write train/valid/test JSONL.
    GenData(Common),
    /// Fine-tune the teacher on the ground truth.
    SftTeacher(Common),
    /// Distil one policy.
    Distill {
        #[command(flatten)]
        common: Common,
        /// Policy name; overrides `kd.policy`.
        #[arg(long)]
        policy: Option<String>,
    },
    /// Run all seven policies on shared data, teacher and student init.
    Compare(Common),
    /// AdaSwitch over the K x L grid.
    Sweep(Common),
    /// Enumeration and replay oracles on small models.
    OracleCheck(Common),
    /// Rebuild report CSV/JSON from a trace log.
    Report {
        #[command(flatten)]
        common: Common,
        /// Trace JSONL written by `distill`.
        #[arg(long)]
        trace: PathBuf,
    },
}

fn resolve(common: &Common, policy: Option<&str>) -> Result<ExperimentConfig> {
    let mut overrides = common.overrides.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(policy) = policy {
        overrides.push(format!("kd.policy={policy}"));
    }
    match &common.config {
        Some(path) => ExperimentConfig::load(path, &overrides),
        None => ExperimentConfig::resolve(None, &overrides),
    }
}

/// Runs a parsed command, returning a one-line summary for stdout.
pub fn run(cli: Cli) -> Result<String> {
    let (common, policy) = match &cli.command {
        Command::Distill { common, policy } => (common, policy.as_deref()),
        Command::Report { common, .. } => (common, None),
        Command::GenData(c)
        | Command::SftTeacher(c)
        | Command::Compare(c)
        | Command::Sweep(c)
        | Command::OracleCheck(c) => (c, None),
    };
    let cfg = resolve(common, policy)?;
    let out = &common.out;
    prepare_out_dir(out, common.force)?;
    let summary = match &cli.command {
        Command::GenData(_) => {
            let m = gen_data(&cfg, out)?;
            format!("wrote {} files, config {}", m.artifacts.len(), m.config_hash)
        }
        Command::SftTeacher(_) => {
            let (_, s) = run_sft_teacher(&cfg, out)?;
            format!("teacher epoch {} test accuracy {:.4}", s.selected_epoch, s.test_accuracy)
        }
        Command::Distill { .. } => {
            let (_, run) = run_distill(&cfg, out)?;
            let best = run.best_checkpoint();
            format!(
                "{}: best step {} val_loss {:.6} accuracy {:.4}",
                cfg.kd.policy, best.step, best.validation_loss, best.accuracy
            )
        }
        Command::Compare(_) => {
            let (_, rows) = run_compare(&cfg, out)?;
            format!("compared {} policies", rows.len())
        }
        Command::Sweep(_) => {
            let (_, rows) = run_sweep(&cfg, out)?;
            format!("swept {} configurations", rows.len())
        }
        Command::OracleCheck(_) => {
            let (_, s) = run_oracle_check(&cfg, out)?;
            if !s.pass() {
                return Err(Error::Contract(format!("oracle check failed: {s:?}")));
            }
            format!("oracle checks passed ({} replayed traces)", s.replay_traces)
        }
        Command::Report { trace, .. } => {
            let (_, r) = run_report(&cfg, trace, out)?;
            format!("report with {} windows", r.rows.len())
        }
    };
    Ok(summary)
}
