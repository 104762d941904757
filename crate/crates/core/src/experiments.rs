//! Seeded multi-run experiments: the approach-distance table, light versus
//! heavy horizon curves, and policy comparisons across presets.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{run, BoundaryConfig, EngineError, StageLatencies};
use crate::fusion::{PolicyConfig, PolicyMode};
use crate::link::{LinkModel, LinkSource};
use crate::metrics::{summarize, MetricsConfig, MetricsReport};
use crate::model::{ObjectId, Timestamp, TrackState};
use crate::prediction::{CtrvFit, CvFit, NoiseModel, HEAVY_WINDOW, LIGHT_WINDOW};
use crate::presets::{approach, arc, SorKind};
use crate::rng::{derive_rng, Purpose};
use crate::scenario::{CoverageOwner, Scenario};

pub const TABLE2_FRAMES: [usize; 5] = [5, 10, 15, 20, 25];
const APPROACH_OBJECT: ObjectId = ObjectId(1);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table2Row {
    pub input_frames: usize,
    pub mean_displacement_error: f64,
    pub distance_no_sor: f64,
    pub distance_light_sor: f64,
    pub distance_heavy_sor: f64,
}

/// Ego-object distance at the tick when the widest sensor of `scenario` has
/// seen the object `n` times.
pub fn distance_after_frames(scenario: &Scenario, n: usize) -> Option<f64> {
    let coverage = scenario.sor_coverage().unwrap_or_else(|| scenario.sov_coverage());
    let mut seen = 0;
    for tick in 0..scenario.tick_count() {
        let t = scenario.tick_time(tick);
        if scenario.visible_objects(coverage, t).contains(&APPROACH_OBJECT) {
            seen += 1;
            if seen == n {
                let (p, _) = scenario.true_state(APPROACH_OBJECT, t).ok()?;
                return Some(scenario.ego_position(t).distance(p));
            }
        }
    }
    None
}

fn observed_states(
    scenario: &Scenario,
    owner: CoverageOwner,
    seed: u64,
    ticks: std::ops::Range<u64>,
) -> Vec<TrackState> {
    let purpose = if owner == CoverageOwner::SoV { Purpose::SenseSoV } else { Purpose::SenseSoR };
    ticks
        .filter_map(|tick| {
            let mut rng = derive_rng(seed, purpose, tick);
            let frame = scenario.sense(owner, tick, &mut rng);
            frame.detections.into_iter().find(|d| d.object_id == APPROACH_OBJECT).map(|d| TrackState {
                timestamp: frame.timestamp,
                position: d.position,
                velocity: d.velocity,
                source: d.source,
            })
        })
        .collect()
}

/// Vehicle-side displacement error 0.5 s ahead once `n` frames of the
/// approaching object have been tracked, using the most recent twenty.
pub fn approach_error(scenario: &Scenario, seed: u64, n: usize) -> Option<f64> {
    let noise = NoiseModel::for_scenario(scenario);
    let states = observed_states(scenario, CoverageOwner::SoV, seed, 0..scenario.tick_count());
    let history = states.get(..n)?;
    let window = &history[history.len().saturating_sub(HEAVY_WINDOW)..];
    let fit = CvFit::fit(window, &noise)?;
    let eval = history.last()?.timestamp.plus(500_000);
    let (truth, _) = scenario.true_state(APPROACH_OBJECT, eval).ok()?;
    Some(fit.position_at(eval).distance(truth))
}

/// Distance columns for every roadside variant and the vehicle-side error
/// column averaged over `seeds`.
pub fn table2(seeds: std::ops::Range<u64>, noise_sigma: f64) -> Vec<Table2Row> {
    let variants = [approach(SorKind::None), approach(SorKind::Light), approach(SorKind::Heavy)];
    let mut vehicle = variants[0].clone();
    vehicle.detection_noise_sigma = noise_sigma;
    TABLE2_FRAMES
        .iter()
        .map(|&n| {
            let errors: Vec<f64> =
                seeds.clone().into_par_iter().filter_map(|s| approach_error(&vehicle, s, n)).collect();
            let d = |s: &Scenario| distance_after_frames(s, n).unwrap_or(f64::NAN);
            Table2Row {
                input_frames: n,
                mean_displacement_error: errors.iter().sum::<f64>() / errors.len().max(1) as f64,
                distance_no_sor: d(&variants[0]),
                distance_light_sor: d(&variants[1]),
                distance_heavy_sor: d(&variants[2]),
            }
        })
        .collect()
}

pub fn table2_csv(rows: &[Table2Row]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "input_frames",
        "mean_displacement_error_m",
        "distance_no_sor_m",
        "distance_light_sor_m",
        "distance_heavy_sor_m",
    ])
    .expect("in-memory write");
    for r in rows {
        w.write_record([
            r.input_frames.to_string(),
            r.mean_displacement_error.to_string(),
            r.distance_no_sor.to_string(),
            r.distance_light_sor.to_string(),
            r.distance_heavy_sor.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

/// Mean error of light and heavy predictions against lookahead in frames,
/// with the raw detection error as the noise floor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonCurves {
    pub lookahead_frames: Vec<u64>,
    pub light: Vec<f64>,
    pub heavy: Vec<f64>,
    pub noise_floor: f64,
}

const ARC_ANCHORS: [u64; 7] = [20, 40, 60, 80, 100, 120, 140];

pub fn arc_horizon_curves(seeds: u64, max_frames: u64) -> HorizonCurves {
    let scenario = arc(SorKind::Heavy);
    let noise = NoiseModel::for_scenario(&scenario);
    let period = scenario.frame_period_us;
    let per_seed: Vec<(Vec<f64>, Vec<f64>, f64, usize)> = (0..seeds)
        .into_par_iter()
        .map(|seed| {
            let mut light = vec![0.0; max_frames as usize];
            let mut heavy = vec![0.0; max_frames as usize];
            let (mut floor, mut floor_n) = (0.0, 0);
            for &anchor in &ARC_ANCHORS {
                let sov =
                    observed_states(&scenario, CoverageOwner::SoV, seed, anchor + 1 - LIGHT_WINDOW as u64..anchor + 1);
                let sor = observed_states(
                    &scenario,
                    scenario.sor_coverage().unwrap().owner,
                    seed,
                    anchor + 1 - HEAVY_WINDOW as u64..anchor + 1,
                );
                for s in &sov {
                    let (truth, _) = scenario.true_state(APPROACH_OBJECT, s.timestamp).unwrap();
                    floor += s.position.distance(truth);
                    floor_n += 1;
                }
                let lf = CvFit::fit(&sov, &noise).unwrap();
                let hf = CtrvFit::fit(&sor, &noise).unwrap();
                let t0 = scenario.tick_time(anchor);
                for k in 1..=max_frames {
                    let t = Timestamp(t0.0 + k * period);
                    let (truth, _) = scenario.true_state(APPROACH_OBJECT, t).unwrap();
                    light[k as usize - 1] += lf.position_at(t).distance(truth);
                    heavy[k as usize - 1] += hf.position_at(t).distance(truth);
                }
            }
            (light, heavy, floor, floor_n)
        })
        .collect();
    let runs = (seeds as usize * ARC_ANCHORS.len()).max(1) as f64;
    let mut light = vec![0.0; max_frames as usize];
    let mut heavy = vec![0.0; max_frames as usize];
    let (mut floor, mut floor_n) = (0.0, 0usize);
    for (l, h, f, n) in per_seed {
        for i in 0..light.len() {
            light[i] += l[i] / runs;
            heavy[i] += h[i] / runs;
        }
        floor += f;
        floor_n += n;
    }
    HorizonCurves {
        lookahead_frames: (1..=max_frames).collect(),
        light,
        heavy,
        noise_floor: floor / floor_n.max(1) as f64,
    }
}

/// Runs `scenario` under one policy for seeds `0..seeds` and returns the
/// per-seed reports, ordered by seed.
pub fn policy_reports(
    scenario: &Scenario,
    model: &LinkModel,
    policy: &PolicyConfig,
    stages: &StageLatencies,
    bounds: &BoundaryConfig,
    seeds: std::ops::Range<u64>,
) -> Result<Vec<MetricsReport>, EngineError> {
    seeds
        .into_par_iter()
        .map(|seed| {
            let link = LinkSource::Synthetic { model: model.clone(), seed };
            let log = run(scenario, &link, stages, bounds, policy, seed)?;
            Ok(summarize(&log, scenario, &MetricsConfig::default()).expect("engine logs are consistent"))
        })
        .collect()
}

/// Mean over seeds of each run's mean displacement error.
pub fn mean_error(reports: &[MetricsReport]) -> f64 {
    let v: Vec<f64> = reports.iter().filter_map(|r| r.mean_displacement_error).collect();
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

pub fn policy_mean_error(scenario: &Scenario, model: &LinkModel, mode: PolicyMode, seeds: u64) -> f64 {
    let reports = policy_reports(
        scenario,
        model,
        &PolicyConfig::with_mode(mode),
        &StageLatencies::default(),
        &BoundaryConfig::default(),
        0..seeds,
    )
    .expect("default configuration is valid");
    mean_error(&reports)
}

/// Whether the two sides saw different objects at the same tick, in each
/// direction.
pub fn complementarity(scenario: &Scenario) -> (bool, bool) {
    let (mut sov_only, mut sor_only) = (false, false);
    let Some(sor) = scenario.sor_coverage() else { return (false, false) };
    for tick in 0..scenario.tick_count() {
        let t = scenario.tick_time(tick);
        let a = scenario.visible_objects(scenario.sov_coverage(), t);
        let b = scenario.visible_objects(sor, t);
        sov_only |= a.iter().any(|id| !b.contains(id));
        sor_only |= b.iter().any(|id| !a.contains(id));
    }
    (sov_only, sor_only)
}
