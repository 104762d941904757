//! Command implementations behind the CLI: single runs, sweeps, the approach
//! table and report comparison. Every artifact is written deterministically.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, RunConfig, SweepConfig};
use crate::engine::{run, EngineError, SimulationLog};
use crate::experiments::{table2, table2_csv};
use crate::link::{LatencyTrace, LinkError, LinkModel, LinkSource, Stream};
use crate::metrics::{compare, de_series_csv, fusion_events_csv, summarize, MetricsError, MetricsReport};
use crate::model::FusionMode;
use crate::presets::ScenarioConfig;
use crate::scenario::Scenario;

pub const DEFAULT_TABLE2_SEEDS: u64 = 1000;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("cannot read link trace {path}: {source}")]
    Trace { path: PathBuf, source: LinkError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl HarnessError {
    /// 2 for anything the user can fix in the config or inputs, 3 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Io { .. } | HarnessError::Config(ConfigError::Io { .. }) => 3,
            HarnessError::Trace { source: LinkError::Io(_), .. } => 3,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), HarnessError> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(io_err(&path))
}

fn read_trace(path: &Path) -> Result<LatencyTrace, HarnessError> {
    LatencyTrace::read_csv(path).map_err(|source| HarnessError::Trace { path: path.to_path_buf(), source })
}

/// The link source for one seed of `cfg`.
pub fn link_source(cfg: &RunConfig, seed: u64) -> Result<LinkSource, HarnessError> {
    match (&cfg.link.model, &cfg.link.trace) {
        (_, Some(trace)) => {
            let post = read_trace(trace)?;
            let heavy = match &cfg.link.heavy_trace {
                Some(p) => read_trace(p)?,
                None => post.clone(),
            };
            Ok(LinkSource::Replay { post_perception: post, heavy })
        }
        (Some(model), None) => Ok(LinkSource::Synthetic { model: model.clone(), seed }),
        (None, None) => Ok(LinkSource::Synthetic { model: LinkModel::field(), seed }),
    }
}

pub struct RunOutput {
    pub scenario: Scenario,
    pub log: SimulationLog,
    pub report: MetricsReport,
}

/// One simulation and its metrics.
pub fn simulate(cfg: &RunConfig, seed: u64) -> Result<RunOutput, HarnessError> {
    let scenario = cfg.validate()?;
    let link = link_source(cfg, seed)?;
    let log = run(&scenario, &link, &cfg.stages, &cfg.boundaries, &cfg.policy, seed)?;
    let report = summarize(&log, &scenario, &cfg.metrics)?;
    Ok(RunOutput { scenario, log, report })
}

pub fn log_json(log: &SimulationLog) -> String {
    serde_json::to_string_pretty(log).expect("log serializes") + "\n"
}

/// One-line summary of a run.
pub fn summary_line(report: &MetricsReport) -> String {
    let de = report.mean_displacement_error.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    let occupancy: Vec<String> = FusionMode::ALL
        .iter()
        .map(|m| format!("{}={:.3}", m.label(), report.mode_occupancy.get(m.label()).copied().unwrap_or(0.0)))
        .collect();
    format!(
        "policy={} seed={} ticks={} miss_ratio={:.4} mean_de_m={} occupancy {} violations={}",
        report.policy.label(),
        report.seed,
        report.ticks,
        report.deadline_miss_ratio,
        de,
        occupancy.join(" "),
        report.boundary_violations,
    )
}

const SWEEP_COLUMNS: [&str; 6] =
    ["deadline_miss_ratio", "mean_de_m", "e2e_p95_us", "interval_max_us", "boundary_violations", "ticks"];

fn sweep_record(report: &MetricsReport) -> Vec<String> {
    let mut rec = vec![
        report.deadline_miss_ratio.to_string(),
        report.mean_displacement_error.map_or(String::new(), |v| v.to_string()),
        report.e2e_latency.p95.to_string(),
        report.output_interval.max.to_string(),
        report.boundary_violations.to_string(),
        report.ticks.to_string(),
    ];
    for m in FusionMode::ALL {
        rec.push(report.mode_occupancy.get(m.label()).copied().unwrap_or(0.0).to_string());
    }
    rec
}

/// Runs the configured sweep and renders it as CSV, one row per seed or
/// parameter value in input order.
pub fn sweep_csv(cfg: &RunConfig, base_seed: u64, sweep: &SweepConfig) -> Result<String, HarnessError> {
    let (key, rows): (String, Vec<(String, MetricsReport)>) = match sweep {
        SweepConfig::Seeds { seeds } => {
            let rows = (base_seed..base_seed.saturating_add(*seeds))
                .into_par_iter()
                .map(|s| simulate(cfg, s).map(|o| (s.to_string(), o.report)))
                .collect::<Result<Vec<_>, _>>()?;
            ("seed".into(), rows)
        }
        SweepConfig::Param { param, values } => {
            let rows = values
                .par_iter()
                .map(|v| {
                    let swept = cfg.with_param(param, v.clone())?;
                    simulate(&swept, base_seed).map(|o| (v.to_string(), o.report))
                })
                .collect::<Result<Vec<_>, _>>()?;
            (param.clone(), rows)
        }
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![key];
    header.extend(SWEEP_COLUMNS.iter().map(|c| c.to_string()));
    header.extend(FusionMode::ALL.iter().map(|m| format!("occupancy_{}", m.label())));
    w.write_record(&header).expect("in-memory write");
    for (k, report) in &rows {
        let mut rec = vec![k.clone()];
        rec.extend(sweep_record(report));
        w.write_record(&rec).expect("in-memory write");
    }
    Ok(String::from_utf8(w.into_inner().expect("flush")).expect("utf8"))
}

/// Runs `cfg` with `seed`, writes every artifact into `out_dir` and returns
/// the report.
pub fn cmd_run(cfg: &RunConfig, seed: u64, out_dir: &Path) -> Result<MetricsReport, HarnessError> {
    let out = simulate(cfg, seed)?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    write(out_dir, "log.json", &log_json(&out.log))?;
    write(out_dir, "metrics.json", &out.report.to_json_string())?;
    write(out_dir, "fusion_events.csv", &fusion_events_csv(&out.log))?;
    write(out_dir, "de_series.csv", &de_series_csv(&out.report))?;
    let empty = LatencyTrace::default();
    let trace = |s: Stream| out.log.deliveries.get(&s).unwrap_or(&empty).to_csv_string();
    write(out_dir, "trace_perception.csv", &trace(Stream::PostPerception))?;
    write(out_dir, "trace_heavy.csv", &trace(Stream::HeavyPrediction))?;
    if let Some(sweep) = &cfg.sweep {
        write(out_dir, "sweep.csv", &sweep_csv(cfg, seed, sweep)?)?;
    }
    Ok(out.report)
}

/// Writes `table2.csv` for the approach family. Seeds come from a seed sweep
/// when one is configured.
pub fn cmd_table2(cfg: &RunConfig, seed: u64, out_dir: &Path) -> Result<String, HarnessError> {
    let scenario = cfg.validate()?;
    let is_approach = match &cfg.scenario {
        ScenarioConfig::Named(n) => n == "approach",
        ScenarioConfig::Preset(p) => p.preset == "approach",
        ScenarioConfig::Inline { .. } => false,
    };
    if !is_approach {
        return Err(ConfigError::Validation {
            path: "scenario".into(),
            message: "the approach table needs the `approach` preset".into(),
        }
        .into());
    }
    let seeds = match &cfg.sweep {
        Some(SweepConfig::Seeds { seeds }) => *seeds,
        _ => DEFAULT_TABLE2_SEEDS,
    };
    let csv = table2_csv(&table2(seed..seed.saturating_add(seeds), scenario.detection_noise_sigma));
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    write(out_dir, "table2.csv", &csv)?;
    Ok(csv)
}

/// Loads metric reports and returns the comparison CSV. Reports are named
/// after their file stem, or parent directory for `metrics.json`.
pub fn cmd_compare(paths: &[PathBuf]) -> Result<String, HarnessError> {
    let reports = paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(io_err(p))?;
            let report = MetricsReport::from_json_str(&text)?;
            Ok((report_name(p), report))
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok(compare(&reports)?.to_csv_string())
}

fn report_name(p: &Path) -> String {
    let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if stem == "metrics" {
        if let Some(dir) = p.parent().and_then(|d| d.file_name()) {
            return dir.to_string_lossy().into_owned();
        }
    }
    stem
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> RunConfig {
        RunConfig::from_json_str(text).unwrap()
    }

    #[test]
    fn run_writes_every_artifact_and_is_repeatable() {
        let c = cfg(r#"{"scenario": {"preset": "handover", "duration_s": 2.0}, "seed": 4}"#);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        cmd_run(&c, 4, a.path()).unwrap();
        cmd_run(&c, 4, b.path()).unwrap();
        for name in [
            "log.json",
            "metrics.json",
            "fusion_events.csv",
            "de_series.csv",
            "trace_perception.csv",
            "trace_heavy.csv",
        ] {
            let x = std::fs::read(a.path().join(name)).unwrap();
            assert!(!x.is_empty(), "{name}");
            assert_eq!(x, std::fs::read(b.path().join(name)).unwrap(), "{name}");
        }
        assert!(!a.path().join("sweep.csv").exists());
    }

    #[test]
    fn recorded_trace_reproduces_the_run() {
        let c = cfg(r#"{"scenario": {"preset": "tunnel", "duration_s": 6.0}}"#);
        let dir = tempfile::tempdir().unwrap();
        let original = cmd_run(&c, 11, dir.path()).unwrap();
        let mut replay = c.clone();
        replay.link.model = None;
        replay.link.trace = Some(dir.path().join("trace_perception.csv"));
        replay.link.heavy_trace = Some(dir.path().join("trace_heavy.csv"));
        let again = simulate(&replay, 11).unwrap();
        assert_eq!(again.report, original);
    }

    #[test]
    fn seed_sweep_rows_follow_seed_order() {
        let c = cfg(r#"{"scenario": {"preset": "complementary", "duration_s": 1.0}, "sweep": {"seeds": 4}}"#);
        let csv = sweep_csv(&c, 10, c.sweep.as_ref().unwrap()).unwrap();
        let keys: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(keys, ["10", "11", "12", "13"]);
        assert!(csv.starts_with("seed,deadline_miss_ratio,"));
    }

    #[test]
    fn param_sweep_changes_the_outcome() {
        let c = cfg(r#"{"scenario": {"preset": "complementary", "duration_s": 3.0},
                "sweep": {"param": "link.model.loss_prob", "values": [0.0, 1.0]}}"#);
        let csv = sweep_csv(&c, 0, c.sweep.as_ref().unwrap()).unwrap();
        let miss: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
        assert!(miss[0] < 1.0);
        assert_eq!(miss[1], 1.0);
    }

    #[test]
    fn table2_requires_the_approach_preset() {
        let dir = tempfile::tempdir().unwrap();
        let err = cmd_table2(&cfg(r#"{"scenario": "arc"}"#), 0, dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let csv = cmd_table2(&cfg(r#"{"scenario": "approach", "sweep": {"seeds": 5}}"#), 0, dir.path()).unwrap();
        assert_eq!(csv.lines().count(), 6);
        assert!(dir.path().join("table2.csv").exists());
    }

    #[test]
    fn compare_names_reports_and_classifies_errors() {
        let dir = tempfile::tempdir().unwrap();
        for (name, mode) in [("intra", "intra"), ("adaptive", "adaptive")] {
            let c = cfg(&format!(
                r#"{{"scenario": {{"preset": "handover", "duration_s": 2.0}}, "policy": {{"mode": "{mode}"}}}}"#
            ));
            cmd_run(&c, 0, &dir.path().join(name)).unwrap();
        }
        let paths = [dir.path().join("intra/metrics.json"), dir.path().join("adaptive/metrics.json")];
        let csv = cmd_compare(&paths).unwrap();
        assert!(csv.starts_with("metric,intra,adaptive,delta_adaptive"));
        let missing = cmd_compare(&[dir.path().join("nope.json"), paths[0].clone()]).unwrap_err();
        assert_eq!(missing.exit_code(), 3);
        let bad = dir.path().join("bad.json");
        std::fs::write(&bad, "{}").unwrap();
        assert_eq!(cmd_compare(&[bad, paths[0].clone()]).unwrap_err().exit_code(), 2);
    }
}
