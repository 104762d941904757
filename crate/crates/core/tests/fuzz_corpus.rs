//! Replays the checked-in fuzz corpus through the same assertions as the fuzz
//! targets, so the seeds stay meaningful without a nightly toolchain.

use std::path::PathBuf;

use iaad_core::config::RunConfig;
use iaad_core::link::LatencyTrace;
use iaad_core::metrics::MetricsReport;

fn corpus(target: &str) -> Vec<(PathBuf, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut files: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    assert!(!files.is_empty(), "empty corpus for {target}");
    files.into_iter().map(|p| (p.clone(), std::fs::read_to_string(&p).unwrap())).collect()
}

#[test]
fn trace_csv_seeds() {
    let mut parsed = 0;
    for (path, text) in corpus("trace_csv") {
        if let Ok(trace) = LatencyTrace::from_csv_str(&text) {
            let again = LatencyTrace::from_csv_str(&trace.to_csv_string()).unwrap();
            assert_eq!(again, trace, "{}", path.display());
            parsed += 1;
        }
    }
    assert!(parsed >= 2);
}

#[test]
fn run_config_seeds() {
    let results: Vec<_> = corpus("run_config").into_iter().map(|(p, t)| (p, RunConfig::from_json_str(&t))).collect();
    for (path, result) in &results {
        assert!(result.is_ok(), "{}: {}", path.display(), result.as_ref().unwrap_err());
    }
}

#[test]
fn metrics_report_seeds() {
    let mut parsed = 0;
    for (_, text) in corpus("metrics_report") {
        if let Ok(report) = MetricsReport::from_json_str(&text) {
            assert_eq!(MetricsReport::from_json_str(&report.to_json_string()).unwrap(), report);
            parsed += 1;
        }
    }
    assert_eq!(parsed, 1);
}
