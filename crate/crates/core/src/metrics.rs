//! Aggregation of simulation logs into summary reports and comparison tables.
//! Displacement errors are recomputed from the logged predictions against
//! ground truth.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::SimulationLog;
use crate::fusion::PolicyMode;
use crate::model::{FusionMode, PredictedTrajectory, Timestamp};
use crate::prediction::displacement_error;
use crate::scenario::Scenario;

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_LOOKAHEAD_US: u64 = 500_000;
pub const DEFAULT_LOOKAHEAD_FRAMES: [u64; 4] = [5, 10, 20, 50];

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("inconsistent log: {0}")]
    InconsistentLog(String),
    #[error("reports describe different scenarios: `{first}` vs `{other}`")]
    ScenarioMismatch { first: String, other: String },
    #[error("comparison needs at least two reports, got {0}")]
    TooFewReports(usize),
    #[error("malformed report: {0}")]
    Parse(String),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyStats {
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
    pub max: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntervalStats {
    pub count: u64,
    pub mean: f64,
    pub p95: f64,
    pub max: f64,
    pub jitter: f64,
}

/// Options for [`summarize`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    /// Lookahead of the headline displacement error.
    pub lookahead_us: u64,
    /// Extra lookaheads, in frames, for horizon curves.
    pub lookahead_frames: Vec<u64>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig { lookahead_us: DEFAULT_LOOKAHEAD_US, lookahead_frames: DEFAULT_LOOKAHEAD_FRAMES.to_vec() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeSample {
    pub tick: u64,
    pub de_m: Option<f64>,
    pub mode: FusionMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub scenario_hash: String,
    pub policy: PolicyMode,
    pub seed: u64,
    pub ticks: u64,
    pub deadline_miss_ratio: f64,
    pub e2e_latency: LatencyStats,
    pub output_interval: IntervalStats,
    pub lookahead_us: u64,
    pub mean_displacement_error: Option<f64>,
    pub displacement_error_series: Vec<DeSample>,
    pub de_by_mode: BTreeMap<String, f64>,
    pub de_by_lookahead: BTreeMap<String, f64>,
    pub mode_occupancy: BTreeMap<String, f64>,
    pub mean_predicted_objects: f64,
    pub boundary_violations: u64,
}

impl MetricsReport {
    pub fn from_json_str(text: &str) -> Result<Self, MetricsError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| MetricsError::Parse(format!("{}: {}", e.path(), e.inner())))
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Flat `(metric, value)` rows in a fixed order.
    pub fn rows(&self) -> Vec<(String, Option<f64>)> {
        let mut rows = vec![
            ("deadline_miss_ratio".to_string(), Some(self.deadline_miss_ratio)),
            ("e2e_latency.mean_us".into(), Some(self.e2e_latency.mean)),
            ("e2e_latency.p50_us".into(), Some(self.e2e_latency.p50)),
            ("e2e_latency.p95_us".into(), Some(self.e2e_latency.p95)),
            ("e2e_latency.max_us".into(), Some(self.e2e_latency.max)),
            ("output_interval.mean_us".into(), Some(self.output_interval.mean)),
            ("output_interval.p95_us".into(), Some(self.output_interval.p95)),
            ("output_interval.max_us".into(), Some(self.output_interval.max)),
            ("output_interval.jitter_us".into(), Some(self.output_interval.jitter)),
            ("displacement_error.mean_m".into(), self.mean_displacement_error),
        ];
        for mode in FusionMode::ALL {
            rows.push((format!("de_by_mode.{}", mode.label()), self.de_by_mode.get(mode.label()).copied()));
        }
        let mut horizons: Vec<_> = self.de_by_lookahead.iter().collect();
        horizons.sort_by_key(|(k, _)| k.parse::<u64>().unwrap_or(u64::MAX));
        for (k, v) in horizons {
            rows.push((format!("de_by_lookahead.{k}"), Some(*v)));
        }
        for mode in FusionMode::ALL {
            rows.push((format!("mode_occupancy.{}", mode.label()), self.mode_occupancy.get(mode.label()).copied()));
        }
        rows.push(("mean_predicted_objects".into(), Some(self.mean_predicted_objects)));
        rows.push(("boundary_violations".into(), Some(self.boundary_violations as f64)));
        rows
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Nearest-rank percentile of sorted data.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn sorted(mut xs: Vec<f64>) -> Vec<f64> {
    xs.sort_by(f64::total_cmp);
    xs
}

pub fn latency_stats(values: &[f64]) -> LatencyStats {
    let s = sorted(values.to_vec());
    LatencyStats {
        mean: mean(&s),
        p50: percentile(&s, 0.5),
        p95: percentile(&s, 0.95),
        max: s.last().copied().unwrap_or(0.0),
    }
}

pub fn interval_stats(decided_at: &[Timestamp]) -> IntervalStats {
    let gaps: Vec<f64> = decided_at.windows(2).map(|w| w[1].0 as f64 - w[0].0 as f64).collect();
    let m = mean(&gaps);
    let var = if gaps.is_empty() { 0.0 } else { gaps.iter().map(|g| (g - m).powi(2)).sum::<f64>() / gaps.len() as f64 };
    let s = sorted(gaps);
    IntervalStats {
        count: s.len() as u64,
        mean: m,
        p95: percentile(&s, 0.95),
        max: s.last().copied().unwrap_or(0.0),
        jitter: var.sqrt(),
    }
}

/// Displacement error at `eval_time` over the trajectories that cover it.
/// `None` when none does or when ground truth ends before `eval_time`.
pub fn covered_error(set: &[PredictedTrajectory], scenario: &Scenario, eval_time: Timestamp) -> Option<f64> {
    if eval_time > scenario.duration() {
        return None;
    }
    let covering: Vec<_> = set.iter().filter(|t| t.covers(eval_time)).cloned().collect();
    displacement_error(&covering, scenario, eval_time).ok()
}

/// Displacement error with every trajectory extended linearly past its
/// horizon, for lookahead curves.
pub fn extrapolated_error(set: &[PredictedTrajectory], scenario: &Scenario, eval_time: Timestamp) -> Option<f64> {
    if eval_time > scenario.duration() || set.is_empty() {
        return None;
    }
    let mut total = 0.0;
    for t in set {
        let p = t.extrapolated_position_at(eval_time).ok()?;
        let (truth, _) = scenario.true_state(t.object_id, eval_time).ok()?;
        total += p.distance(truth);
    }
    Some(total / set.len() as f64)
}

pub fn summarize(log: &SimulationLog, scenario: &Scenario, cfg: &MetricsConfig) -> Result<MetricsReport, MetricsError> {
    if log.scenario_hash != scenario.content_hash() {
        return Err(MetricsError::InconsistentLog("log was produced from a different scenario".into()));
    }
    let n = log.decisions.len();
    if n as u64 != log.tick_count || n as u64 != scenario.tick_count() {
        return Err(MetricsError::InconsistentLog(format!("{n} decisions for {} ticks", scenario.tick_count())));
    }
    if log.fusion_events.len() != n || log.waits.len() != n {
        return Err(MetricsError::InconsistentLog("per-tick records disagree in length".into()));
    }
    for (i, ((d, e), w)) in log.decisions.iter().zip(&log.fusion_events).zip(&log.waits).enumerate() {
        if d.tick != i as u64 || e.tick != d.tick || w.tick != d.tick || e.mode != d.fusion_mode_used {
            return Err(MetricsError::InconsistentLog(format!("records out of order at index {i}")));
        }
        if d.decided_at.0 != scenario.tick_time(d.tick).0 + d.e2e_latency {
            return Err(MetricsError::InconsistentLog(format!("tick {} decided_at disagrees with e2e", d.tick)));
        }
    }

    let e2e: Vec<f64> = log.decisions.iter().map(|d| d.e2e_latency as f64).collect();
    let decided: Vec<Timestamp> = log.decisions.iter().map(|d| d.decided_at).collect();

    let mut series = Vec::with_capacity(n);
    let mut by_mode: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut occupancy: BTreeMap<&str, u64> = BTreeMap::new();
    let mut lookahead: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    let mut predicted_objects = 0usize;
    for d in &log.decisions {
        let t_k = scenario.tick_time(d.tick);
        let de = covered_error(&d.predicted_set, scenario, t_k.plus(cfg.lookahead_us));
        *occupancy.entry(d.fusion_mode_used.label()).or_default() += 1;
        if let Some(v) = de {
            by_mode.entry(d.fusion_mode_used.label()).or_default().push(v);
        }
        for &k in &cfg.lookahead_frames {
            if let Some(v) = extrapolated_error(&d.predicted_set, scenario, t_k.plus(k * scenario.frame_period_us)) {
                lookahead.entry(k).or_default().push(v);
            }
        }
        predicted_objects += d.predicted_set.len();
        series.push(DeSample { tick: d.tick, de_m: de, mode: d.fusion_mode_used });
    }
    let values: Vec<f64> = series.iter().filter_map(|s| s.de_m).collect();
    let mut mode_occupancy: BTreeMap<String, f64> =
        FusionMode::ALL.iter().map(|m| (m.label().to_string(), 0.0)).collect();
    for (k, c) in occupancy {
        mode_occupancy.insert(k.to_string(), c as f64 / n.max(1) as f64);
    }

    Ok(MetricsReport {
        schema_version: REPORT_SCHEMA_VERSION,
        scenario_hash: log.scenario_hash.clone(),
        policy: log.policy,
        seed: log.seed,
        ticks: n as u64,
        deadline_miss_ratio: log.deadline_miss_ratio(),
        e2e_latency: latency_stats(&e2e),
        output_interval: interval_stats(&decided),
        lookahead_us: cfg.lookahead_us,
        mean_displacement_error: (!values.is_empty()).then(|| mean(&values)),
        displacement_error_series: series,
        de_by_mode: by_mode.into_iter().map(|(k, v)| (k.to_string(), mean(&v))).collect(),
        de_by_lookahead: lookahead.into_iter().map(|(k, v)| (k.to_string(), mean(&v))).collect(),
        mode_occupancy,
        mean_predicted_objects: predicted_objects as f64 / n.max(1) as f64,
        boundary_violations: log.boundary_violations.len() as u64,
    })
}

/// Side-by-side metric rows with deltas against the first report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub names: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub values: Vec<Option<f64>>,
    pub deltas: Vec<Option<f64>>,
}

pub fn compare(reports: &[(String, MetricsReport)]) -> Result<ComparisonTable, MetricsError> {
    if reports.len() < 2 {
        return Err(MetricsError::TooFewReports(reports.len()));
    }
    let first = &reports[0].1;
    for (_, r) in &reports[1..] {
        if r.scenario_hash != first.scenario_hash {
            return Err(MetricsError::ScenarioMismatch {
                first: first.scenario_hash.clone(),
                other: r.scenario_hash.clone(),
            });
        }
    }
    let per_report: Vec<BTreeMap<String, Option<f64>>> =
        reports.iter().map(|(_, r)| r.rows().into_iter().collect()).collect();
    let mut metrics: Vec<String> = Vec::new();
    for (_, r) in reports {
        for (m, _) in r.rows() {
            if !metrics.contains(&m) {
                metrics.push(m);
            }
        }
    }
    let rows = metrics
        .into_iter()
        .map(|metric| {
            let values: Vec<Option<f64>> = per_report.iter().map(|m| m.get(&metric).copied().flatten()).collect();
            let deltas = values[1..]
                .iter()
                .map(|v| match (v, values[0]) {
                    (Some(a), Some(b)) => Some(a - b),
                    _ => None,
                })
                .collect();
            ComparisonRow { metric, values, deltas }
        })
        .collect();
    Ok(ComparisonTable { names: reports.iter().map(|(n, _)| n.clone()).collect(), rows })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_csv(header: Vec<String>, rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

impl ComparisonTable {
    pub fn to_csv_string(&self) -> String {
        let mut header = vec!["metric".to_string()];
        header.extend(self.names.iter().cloned());
        header.extend(self.names[1..].iter().map(|n| format!("delta_{n}")));
        write_csv(
            header,
            self.rows.iter().map(|r| {
                let mut rec = vec![r.metric.clone()];
                rec.extend(r.values.iter().map(|v| cell(*v)));
                rec.extend(r.deltas.iter().map(|v| cell(*v)));
                rec
            }),
        )
    }
}

pub fn fusion_events_csv(log: &SimulationLog) -> String {
    write_csv(
        vec!["tick".into(), "mode".into(), "staleness_us".into()],
        log.fusion_events.iter().map(|e| {
            vec![
                e.tick.to_string(),
                e.mode.label().to_string(),
                e.staleness_us.map(|s| s.to_string()).unwrap_or_default(),
            ]
        }),
    )
}

pub fn de_series_csv(report: &MetricsReport) -> String {
    write_csv(
        vec!["tick".into(), "de_m".into(), "mode".into()],
        report
            .displacement_error_series
            .iter()
            .map(|s| vec![s.tick.to_string(), cell(s.de_m), s.mode.label().to_string()]),
    )
}
