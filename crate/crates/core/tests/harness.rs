mod common;

use std::fs;
use std::path::Path;

use common::default_config;
use feel_sched::harness::config::{dbm_to_watts, noise_power_watts};
use feel_sched::harness::stats::median;
use feel_sched::harness::suite::{read_run_csv, CSV_HEADER};
use feel_sched::harness::{run_suite, ExperimentConfig, SuiteOptions};
use feel_sched::{Error, PolicyKind};

fn small_config() -> ExperimentConfig {
    let mut cfg = default_config();
    cfg.experiment.policies = vec![PolicyKind::Ctm, PolicyKind::Uniform];
    cfg.experiment.seeds = vec![0, 1, 2];
    cfg.task.dim = 5;
    cfg.schedule.nu = 40.0;
    cfg.simulation.epsilon = 1e-2;
    cfg
}

fn run_into(cfg: &ExperimentConfig, dir: &Path) -> feel_sched::harness::SuiteOutput {
    let opts = SuiteOptions {
        output_dir: Some(dir.to_path_buf()),
        jobs: Some(2),
        dry_run: false,
    };
    run_suite(cfg, &opts).unwrap()
}

#[test]
fn shipped_config_round_trips() {
    let cfg = default_config();
    let text = cfg.to_toml_string().unwrap();
    assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    assert_eq!(cfg.devices.len(), 4);
    assert_eq!(cfg.experiment.seeds.len(), 20);
    assert_eq!(cfg.experiment.policies.len(), 5);
}

#[test]
fn invalid_configs_name_the_offending_field() {
    let text = default_config().to_toml_string().unwrap();
    let bad = text.replace("bandwidth_hz = 1000000.0", "bandwidth_hz = -1000000.0");
    assert_ne!(bad, text);
    let err = ExperimentConfig::from_toml_str(&bad).unwrap_err().to_string();
    assert!(err.contains("comm.bandwidth_hz"), "{err}");

    let unknown = text.replace("[simulation]", "[simulation]\nwarp = 9");
    assert!(matches!(ExperimentConfig::from_toml_str(&unknown), Err(Error::Config(_))));

    let bad_policy = text.replace("\"ctm\"", "\"fastest\"");
    assert!(ExperimentConfig::from_toml_str(&bad_policy).is_err());
}

#[test]
fn unit_conversions_and_distance_profiles() {
    assert!((dbm_to_watts(24.0) - 0.251_188_643_150_958).abs() < 1e-12);
    assert!((dbm_to_watts(30.0) - 1.0).abs() < 1e-15);
    let n0 = noise_power_watts(-174.0, 1e6);
    assert!((n0 - 10f64.powf(-11.4) * 1e-3).abs() < 1e-27);

    let mut cfg = default_config();
    cfg.devices[0].distance_km = Some(0.5);
    let p = cfg.device_profiles().unwrap()[0];
    let pl_db = -10.0 * p.channel_variance.log10();
    assert!((pl_db - (128.1 - 37.6 * 2f64.log10())).abs() < 1e-9);
    assert!((pl_db - 116.78).abs() < 0.01);
}

#[test]
fn two_policies_three_seeds_write_six_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_into(&small_config(), dir.path());
    let mut names: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names.iter().filter(|n| n.ends_with(".csv")).count(), 6);
    assert_eq!(names.iter().filter(|n| n.ends_with(".json")).count(), 7);
    assert!(names.contains(&"summary.json".to_string()));
    assert!(names.contains(&"ctm_seed2.csv".to_string()));
    assert_eq!(out.files.len(), 13);
}

#[test]
fn reruns_are_byte_identical() {
    let cfg = small_config();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_into(&cfg, a.path());
    run_into(&cfg, b.path());
    for entry in fs::read_dir(a.path()).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(
            fs::read(a.path().join(&name)).unwrap(),
            fs::read(b.path().join(&name)).unwrap(),
            "{name:?} differs"
        );
    }
}

#[test]
fn csv_schema_is_fixed_and_rows_parse_back() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_into(&small_config(), dir.path());
    for run in &out.runs {
        let path = dir.path().join(format!("{}_seed{}.csv", run.policy, run.seed));
        let text = fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
        for (line, log) in lines.zip(&run.logs) {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields.len(), 13);
            let ctm = run.policy == PolicyKind::Ctm;
            assert_eq!(fields[10].is_empty(), !ctm);
            assert_eq!(fields[12].is_empty(), !ctm);
            assert_eq!(fields[9].parse::<f64>().unwrap(), log.gap);
        }
        let rows = read_run_csv(&path).unwrap();
        assert_eq!(rows.len(), run.logs.len());
        for (row, log) in rows.iter().zip(&run.logs) {
            assert_eq!((row.round, row.device, row.cum_s, row.loss), (log.round, log.device, log.cum_s, log.loss));
            assert_eq!((row.rho, row.lambda, row.bound), (log.rho, log.lambda, log.bound));
        }
    }
}

#[test]
fn summary_medians_are_recomputable_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config();
    run_into(&cfg, dir.path());
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    let eps = cfg.simulation.epsilon;
    let checkpoints: Vec<f64> = summary["checkpoints_s"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();

    for entry in summary["policies"].as_array().unwrap() {
        let policy = entry["policy"].as_str().unwrap();
        let mut times = Vec::new();
        let mut gaps = vec![Vec::new(); checkpoints.len()];
        for seed in &cfg.experiment.seeds {
            let text = fs::read_to_string(dir.path().join(format!("{policy}_seed{seed}.csv"))).unwrap();
            let rows: Vec<(f64, f64)> = text
                .lines()
                .skip(1)
                .map(|l| {
                    let f: Vec<&str> = l.split(',').collect();
                    (f[7].parse().unwrap(), f[9].parse().unwrap())
                })
                .collect();
            let meta: serde_json::Value =
                serde_json::from_str(&fs::read_to_string(dir.path().join(format!("{policy}_seed{seed}.json"))).unwrap())
                    .unwrap();
            let (last_t, last_gap) = *rows.last().unwrap();
            times.push(if last_gap.abs() <= eps { last_t } else { f64::INFINITY });
            for (k, &at) in checkpoints.iter().enumerate() {
                let g = rows
                    .iter()
                    .take_while(|(t, _)| *t <= at)
                    .last()
                    .map_or(meta["initial_gap"].as_f64().unwrap(), |r| r.1);
                gaps[k].push(g);
            }
        }
        let reported = entry["time_to_target_s"]["median"].as_f64().unwrap_or(f64::INFINITY);
        assert_eq!(reported, median(&times), "{policy}");
        for (k, g) in gaps.iter().enumerate() {
            let reported = entry["gap_at_checkpoint"][k]["median"].as_f64().unwrap();
            assert_eq!(reported, median(g), "{policy} checkpoint {k}");
        }
    }
}

#[test]
fn absolute_checkpoints_override_fractions() {
    let mut cfg = small_config();
    cfg.experiment.checkpoint_times_s = Some(vec![10.0, 50.0]);
    let out = run_suite(
        &cfg,
        &SuiteOptions {
            dry_run: true,
            ..SuiteOptions::default()
        },
    )
    .unwrap();
    assert_eq!(out.summary.checkpoints_s, vec![10.0, 50.0]);
    assert!(out.files.is_empty());
}

#[test]
fn unwritable_output_reports_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("occupied");
    fs::write(&blocker, "").unwrap();
    let opts = SuiteOptions {
        output_dir: Some(blocker.join("runs")),
        jobs: Some(1),
        dry_run: false,
    };
    let err = run_suite(&small_config(), &opts).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.to_string().contains("occupied"), "{err}");
}
