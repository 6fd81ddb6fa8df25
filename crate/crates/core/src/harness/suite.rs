//! Policy-by-seed sweeps: runs execute on a worker pool, a single collector
//! writes one CSV and one JSON summary per run plus a suite summary.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scheduler::PolicyKind;
use crate::simulator::{RunResult, RunStatus, Simulation};

use super::config::ExperimentConfig;
use super::stats::{median, Quartiles};

pub const CSV_HEADER: [&str; 13] = [
    "seed", "policy", "round", "device", "eta", "upload_s", "round_s", "cum_s", "loss", "gap", "rho", "lambda",
    "bound",
];

/// One CSV row; diagnostics are empty for policies other than CTM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub seed: u64,
    pub policy: PolicyKind,
    pub round: u64,
    pub device: usize,
    pub eta: f64,
    pub upload_s: f64,
    pub round_s: f64,
    pub cum_s: f64,
    pub loss: f64,
    pub gap: f64,
    pub rho: Option<f64>,
    pub lambda: Option<f64>,
    pub bound: Option<f64>,
}

pub fn csv_rows(run: &RunResult) -> impl Iterator<Item = CsvRow> + '_ {
    run.logs.iter().map(move |l| CsvRow {
        seed: run.seed,
        policy: run.policy,
        round: l.round,
        device: l.device,
        eta: l.eta,
        upload_s: l.upload_s,
        round_s: l.round_s,
        cum_s: l.cum_s,
        loss: l.loss,
        gap: l.gap,
        rho: l.rho,
        lambda: l.lambda,
        bound: l.bound,
    })
}

pub fn run_file_stem(policy: PolicyKind, seed: u64) -> String {
    format!("{policy}_seed{seed}")
}

pub fn write_run_csv(path: &Path, run: &RunResult) -> Result<()> {
    let wrap = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(wrap)?;
    if run.logs.is_empty() {
        w.write_record(CSV_HEADER).map_err(wrap)?;
    }
    for row in csv_rows(run) {
        w.serialize(row).map_err(wrap)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_run_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let wrap = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(wrap)?;
    r.deserialize().map(|row| row.map_err(wrap)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub policy: PolicyKind,
    pub seed: u64,
    pub status: RunStatus,
    pub rounds: u64,
    pub total_time_s: f64,
    pub time_to_target_s: Option<f64>,
    pub initial_gap: f64,
    pub final_gap: f64,
}

impl From<&RunResult> for RunSummary {
    fn from(r: &RunResult) -> Self {
        Self {
            policy: r.policy,
            seed: r.seed,
            status: r.status,
            rounds: r.rounds,
            total_time_s: r.total_time_s,
            time_to_target_s: r.time_to_target(),
            initial_gap: r.initial_gap,
            final_gap: r.final_gap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub policy: PolicyKind,
    pub runs: usize,
    pub converged: usize,
    /// Simulated time to the accuracy target; runs that never got there
    /// count as infinite, and an infinite statistic is reported as null.
    pub time_to_target_s: Quartiles,
    /// Loss gap in force at each checkpoint, same order as `checkpoints_s`.
    pub gap_at_checkpoint: Vec<Quartiles>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub epsilon: f64,
    pub seeds: Vec<u64>,
    pub checkpoints_s: Vec<f64>,
    pub policies: Vec<PolicySummary>,
}

impl SuiteSummary {
    pub fn policy(&self, kind: PolicyKind) -> Option<&PolicySummary> {
        self.policies.iter().find(|p| p.policy == kind)
    }
}

#[derive(Debug, Clone, Default)]
pub struct SuiteOptions {
    /// Overrides `experiment.output_dir`.
    pub output_dir: Option<PathBuf>,
    /// Worker threads; `None` uses rayon's default.
    pub jobs: Option<usize>,
    /// Skip writing files.
    pub dry_run: bool,
}

#[derive(Debug, Clone)]
pub struct SuiteOutput {
    pub summary: SuiteSummary,
    pub runs: Vec<RunResult>,
    pub files: Vec<PathBuf>,
}

/// Where the loss-gap snapshots are taken.
#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoints {
    /// Fractions of the largest per-policy median run time.
    Fractions(Vec<f64>),
    Times(Vec<f64>),
}

impl Checkpoints {
    pub fn from_config(config: &ExperimentConfig) -> Self {
        match &config.experiment.checkpoint_times_s {
            Some(t) => Self::Times(t.clone()),
            None => Self::Fractions(config.experiment.checkpoints.clone()),
        }
    }

    pub fn resolve(&self, runs: &[RunResult], policies: &[PolicyKind]) -> Vec<f64> {
        match self {
            Self::Times(t) => t.clone(),
            Self::Fractions(f) => {
                let horizon = policies
                    .iter()
                    .filter_map(|&kind| {
                        let times: Vec<f64> = runs.iter().filter(|r| r.policy == kind).map(|r| r.total_time_s).collect();
                        (!times.is_empty()).then(|| median(&times))
                    })
                    .fold(0.0, f64::max);
                f.iter().map(|f| f * horizon).collect()
            }
        }
    }
}

pub fn summarize(
    runs: &[RunResult],
    policies: &[PolicyKind],
    seeds: &[u64],
    epsilon: f64,
    checkpoints: &Checkpoints,
) -> SuiteSummary {
    let checkpoints_s = checkpoints.resolve(runs, policies);
    let policies = policies
        .iter()
        .map(|&kind| {
            let mine: Vec<&RunResult> = runs.iter().filter(|r| r.policy == kind).collect();
            let times: Vec<f64> = mine
                .iter()
                .map(|r| r.time_to_target().unwrap_or(f64::INFINITY))
                .collect();
            let gap_at_checkpoint = checkpoints_s
                .iter()
                .map(|&at| Quartiles::of(&mine.iter().map(|r| r.gap_at(at)).collect::<Vec<_>>()))
                .collect();
            PolicySummary {
                policy: kind,
                runs: mine.len(),
                converged: mine.iter().filter(|r| r.converged()).count(),
                time_to_target_s: Quartiles::of(&times),
                gap_at_checkpoint,
            }
        })
        .collect();
    SuiteSummary {
        epsilon,
        seeds: seeds.to_vec(),
        checkpoints_s,
        policies,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, text + "\n").map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn run_suite(config: &ExperimentConfig, opts: &SuiteOptions) -> Result<SuiteOutput> {
    config.validate()?;
    let sim_config = config.sim_config()?;
    let task = config.build_task()?;
    let sim = Simulation::new(&task, &sim_config)?;

    let jobs: Vec<(PolicyKind, u64)> = config
        .experiment
        .policies
        .iter()
        .flat_map(|&p| config.experiment.seeds.iter().map(move |&s| (p, s)))
        .collect();

    let execute = || jobs.par_iter().map(|&(p, s)| sim.run(p, s)).collect::<Result<Vec<_>>>();
    let runs = match opts.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?
            .install(execute)?,
        None => execute()?,
    };

    let summary = summarize(
        &runs,
        &config.experiment.policies,
        &config.experiment.seeds,
        sim_config.epsilon,
        &Checkpoints::from_config(config),
    );

    let mut files = Vec::new();
    if !opts.dry_run {
        let dir = opts.output_dir.clone().unwrap_or_else(|| config.experiment.output_dir.clone());
        fs::create_dir_all(&dir).map_err(|source| Error::Io {
            path: dir.clone(),
            source,
        })?;
        for run in &runs {
            let stem = run_file_stem(run.policy, run.seed);
            let csv_path = dir.join(format!("{stem}.csv"));
            write_run_csv(&csv_path, run)?;
            let json_path = dir.join(format!("{stem}.json"));
            write_json(&json_path, &RunSummary::from(run))?;
            files.push(csv_path);
            files.push(json_path);
        }
        let path = dir.join("summary.json");
        write_json(&path, &summary)?;
        files.push(path);
    }

    Ok(SuiteOutput { summary, runs, files })
}
