use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use feel_sched::harness::{self, SuiteOptions};
use feel_sched::oracle::{self, ORACLE_NAMES};
use feel_sched::{PolicyKind, RunStatus};

#[derive(Parser)]
#[command(name = "feel-sched", version, about = "Device scheduling simulator for federated edge learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (policy, seed) pair of an experiment and write the logs.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated policy names, overriding the config.
        #[arg(long, value_delimiter = ',')]
        policies: Option<Vec<PolicyKind>>,
        /// Seed list such as `0..19` (inclusive) or `1,4,9`.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Parse and check a config without running anything.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a brute-force verification: grid-search, mc-q, unbiasedness or finite-diff.
    Oracle {
        name: String,
        /// Config supplying device profiles; the shipped defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = spec.split_once("..") {
        let lo: u64 = a.trim().parse().with_context(|| format!("bad seed range start `{a}`"))?;
        let hi: u64 = b.trim().parse().with_context(|| format!("bad seed range end `{b}`"))?;
        if hi < lo {
            bail!("empty seed range `{spec}`");
        }
        return Ok((lo..=hi).collect());
    }
    spec.split(',')
        .map(|s| s.trim().parse().with_context(|| format!("bad seed `{s}`")))
        .collect()
}

const DEFAULT_CONFIG: &str = include_str!("../../../configs/default.toml");

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run {
            config,
            policies,
            seeds,
            out,
            jobs,
        } => {
            let mut cfg = harness::load_config(&config)?;
            if let Some(p) = policies {
                cfg.experiment.policies = p;
            }
            if let Some(s) = seeds {
                cfg.experiment.seeds = parse_seeds(&s)?;
            }
            let opts = SuiteOptions {
                output_dir: out,
                jobs,
                dry_run: false,
            };
            let output = harness::run_suite(&cfg, &opts)?;
            let mut ok = true;
            for r in &output.runs {
                if r.status == RunStatus::Stalled {
                    eprintln!("{} seed {}: stalled after {} rounds", r.policy, r.seed, r.rounds);
                    ok = false;
                }
            }
            let s = &output.summary;
            println!("policy   runs converged  median_time_s  {}", checkpoint_header(&s.checkpoints_s));
            for p in &s.policies {
                let gaps: Vec<String> = p.gap_at_checkpoint.iter().map(|q| fmt_opt(q.median)).collect();
                println!(
                    "{:<8} {:>4} {:>9}  {:>13}  {}",
                    p.policy.to_string(),
                    p.runs,
                    p.converged,
                    fmt_opt(p.time_to_target_s.median),
                    gaps.join("  ")
                );
            }
            println!("wrote {} files", output.files.len());
            Ok(ok)
        }
        Command::Validate { config } => {
            let cfg = harness::load_config(&config)?;
            cfg.sim_config()?;
            cfg.build_task()?;
            println!(
                "{}: ok ({} devices, {} policies, {} seeds)",
                config.display(),
                cfg.devices.len(),
                cfg.experiment.policies.len(),
                cfg.experiment.seeds.len()
            );
            Ok(true)
        }
        Command::Oracle { name, config, seed } => {
            if !ORACLE_NAMES.contains(&name.as_str()) {
                bail!("unknown oracle `{name}` (expected one of {})", ORACLE_NAMES.join(", "));
            }
            let cfg = match config {
                Some(path) => harness::load_config(&path)?,
                None => harness::ExperimentConfig::from_toml_str(DEFAULT_CONFIG)?,
            };
            let checks = oracle::run_named(&name, &cfg.device_profiles()?, &cfg.comm_params()?, seed)?;
            let mut ok = true;
            for c in &checks {
                println!("[{}] {}: {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
                ok &= c.passed;
            }
            Ok(ok)
        }
    }
}

fn checkpoint_header(checkpoints: &[f64]) -> String {
    checkpoints
        .iter()
        .map(|t| format!("gap@{t:.1}s"))
        .collect::<Vec<_>>()
        .join("  ")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "inf".to_string(), |x| format!("{x:.4e}"))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
