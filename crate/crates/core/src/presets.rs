//! Built-in scenarios and the scenario section of a run config.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize};

use crate::link::{Episode, EpisodeKind};
use crate::model::{secs_to_micros, ObjectId, Position2D, Timestamp, DEFAULT_FRAME_PERIOD_US};
use crate::scenario::{CoverageOwner, Mount, Rect, Scenario, ScenarioError, Segment, SensorCoverage, TrajectorySpec};

pub const SOV_RANGE_M: f64 = 70.0;
pub const SOR_LIGHT_RANGE_M: f64 = 170.0;
pub const SOR_HEAVY_RANGE_M: f64 = 320.0;
/// Head-on closing speed of the approach preset: 1.4 m per 100 ms frame.
pub const APPROACH_SPEED_MPS: f64 = 14.0;

pub const PRESET_NAMES: [&str; 5] = ["approach", "arc", "complementary", "handover", "tunnel"];

/// Which roadside unit, if any, a preset includes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SorKind {
    None,
    Light,
    Heavy,
}

impl SorKind {
    pub fn range(self) -> Option<f64> {
        match self {
            SorKind::None => None,
            SorKind::Light => Some(SOR_LIGHT_RANGE_M),
            SorKind::Heavy => Some(SOR_HEAVY_RANGE_M),
        }
    }

    fn owner(self) -> Option<CoverageOwner> {
        match self {
            SorKind::None => None,
            SorKind::Light => Some(CoverageOwner::SoRLight),
            SorKind::Heavy => Some(CoverageOwner::SoRHeavy),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetConfig {
    pub preset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sor: Option<SorKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection_noise_sigma: Option<f64>,
}

/// Scenario section of a run config: a preset name, a parameterised preset,
/// or a full inline description.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ScenarioConfig {
    Named(String),
    Preset(PresetConfig),
    Inline { inline: Box<Scenario> },
}

impl<'de> Deserialize<'de> for ScenarioConfig {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = serde_json::Value::deserialize(deserializer)?;
        match value {
            serde_json::Value::String(name) => Ok(ScenarioConfig::Named(name)),
            serde_json::Value::Object(ref map) if map.contains_key("inline") => {
                if map.len() != 1 {
                    return Err(D::Error::custom("`inline` cannot be combined with other keys"));
                }
                let scenario: Scenario = serde_path_to_error::deserialize(&map["inline"])
                    .map_err(|e| D::Error::custom(format!("inline.{}: {}", e.path(), e.inner())))?;
                Ok(ScenarioConfig::Inline { inline: Box::new(scenario) })
            }
            serde_json::Value::Object(_) => serde_path_to_error::deserialize(&value)
                .map(ScenarioConfig::Preset)
                .map_err(|e| D::Error::custom(format!("{}: {}", e.path(), e.inner()))),
            _ => Err(D::Error::custom("expected a preset name, a preset object or {\"inline\": ...}")),
        }
    }
}

impl ScenarioConfig {
    pub fn named(name: &str) -> Self {
        ScenarioConfig::Named(name.to_string())
    }

    pub fn preset(name: &str, sor: SorKind) -> Self {
        ScenarioConfig::Preset(PresetConfig {
            preset: name.to_string(),
            sor: Some(sor),
            duration_s: None,
            detection_noise_sigma: None,
        })
    }
}

pub fn build_scenario(config: &ScenarioConfig) -> Result<Scenario, ScenarioError> {
    let scenario = match config {
        ScenarioConfig::Named(name) => preset(name, None)?,
        ScenarioConfig::Preset(p) => {
            let mut s = preset(&p.preset, p.sor)?;
            if let Some(d) = p.duration_s {
                if !d.is_finite() || d <= 0.0 {
                    return Err(ScenarioError::InvalidConfig {
                        path: "duration_s".into(),
                        message: "must be positive".into(),
                    });
                }
                s.duration_us = secs_to_micros(d);
                let secs = d + 1.0;
                stretch(&mut s.ego, secs);
                for spec in s.objects.values_mut() {
                    stretch(spec, secs);
                }
            }
            if let Some(sigma) = p.detection_noise_sigma {
                s.detection_noise_sigma = sigma;
            }
            s
        }
        ScenarioConfig::Inline { inline } => (**inline).clone(),
    };
    scenario.validate()?;
    Ok(scenario)
}

/// Lengthens the final segment so the trajectory lasts at least `secs`.
fn stretch(spec: &mut TrajectorySpec, secs: f64) {
    let missing = secs - spec.total_duration();
    if missing > 0.0 {
        if let Some(Segment::Line { duration, .. } | Segment::Arc { duration, .. }) = spec.segments.last_mut() {
            *duration += missing;
        }
    }
}

fn preset(name: &str, sor: Option<SorKind>) -> Result<Scenario, ScenarioError> {
    match name {
        "approach" => Ok(approach(sor.unwrap_or(SorKind::Heavy))),
        "arc" => Ok(arc(sor.unwrap_or(SorKind::Heavy))),
        "complementary" => Ok(complementary(sor.unwrap_or(SorKind::Heavy))),
        "handover" => Ok(handover(sor.unwrap_or(SorKind::Heavy))),
        "tunnel" => Ok(tunnel(sor.unwrap_or(SorKind::Heavy))),
        other => Err(ScenarioError::InvalidConfig {
            path: "preset".into(),
            message: format!("unknown preset `{other}` (known: {})", PRESET_NAMES.join(", ")),
        }),
    }
}

fn sov_coverage() -> SensorCoverage {
    SensorCoverage::new(CoverageOwner::SoV, Mount::VehicleRelative, SOV_RANGE_M)
}

fn sor_coverage(kind: SorKind, at: Position2D) -> Option<SensorCoverage> {
    Some(SensorCoverage::new(kind.owner()?, Mount::FixedAt(at), kind.range()?))
}

/// A stationary ego at the origin and one object driving straight at it from
/// the edge of the widest configured range.
pub fn approach(sor: SorKind) -> Scenario {
    let origin = Position2D::new(0.0, 0.0);
    let range = sor.range().unwrap_or(SOV_RANGE_M);
    let frames = ((range - 10.0) / 1.4).floor() as u64;
    let duration_us = frames * DEFAULT_FRAME_PERIOD_US;
    let secs = duration_us as f64 / 1e6 + 1.0;
    let mut coverages = vec![sov_coverage()];
    coverages.extend(sor_coverage(sor, origin));
    Scenario {
        name: "approach".into(),
        duration_us,
        frame_period_us: DEFAULT_FRAME_PERIOD_US,
        ego: TrajectorySpec::stationary(origin, secs),
        objects: BTreeMap::from([(
            ObjectId(1),
            TrajectorySpec::line(Position2D::new(range, 0.0), APPROACH_SPEED_MPS, PI, secs),
        )]),
        coverages,
        detection_noise_sigma: 0.5,
        link_episodes: Vec::new(),
    }
}

pub const ARC_RADIUS_M: f64 = 50.0;
pub const ARC_SPEED_MPS: f64 = 10.0;

/// One object circling a stationary ego and a co-located roadside unit.
pub fn arc(sor: SorKind) -> Scenario {
    let origin = Position2D::new(0.0, 0.0);
    let duration_us = 20 * 1_000_000;
    let secs = 21.0;
    let mut coverages = vec![sov_coverage()];
    coverages.extend(sor_coverage(sor, origin));
    Scenario {
        name: "arc".into(),
        duration_us,
        frame_period_us: DEFAULT_FRAME_PERIOD_US,
        ego: TrajectorySpec::stationary(origin, secs),
        objects: BTreeMap::from([(
            ObjectId(1),
            TrajectorySpec {
                segments: vec![Segment::Arc {
                    center: origin,
                    radius: ARC_RADIUS_M,
                    angular_rate: ARC_SPEED_MPS / ARC_RADIUS_M,
                    start_angle: 0.0,
                    duration: secs,
                }],
            },
        )]),
        coverages,
        detection_noise_sigma: 0.5,
        link_episodes: Vec::new(),
    }
}

/// Occlusion layout of the street crossing the vehicle's view: strips of
/// alternating visibility along x.
#[derive(Clone, Copy, Debug)]
struct StreetLayout {
    /// Width of strips hidden from the vehicle (region B).
    sov_blind: f64,
    /// Width of strips hidden from the roadside unit (region A).
    sor_blind: f64,
}

const STREET_X: (f64, f64) = (-80.0, 80.0);
const STREET_Y: (f64, f64) = (8.0, 32.0);
const SOR_MOUNT: Position2D = Position2D::new(0.0, 45.0);

fn street_blind_regions(layout: StreetLayout) -> (Vec<Rect>, Vec<Rect>) {
    let mut sov = Vec::new();
    let mut sor = Vec::new();
    let mut x = STREET_X.0;
    while x < STREET_X.1 {
        sov.push(Rect::new(x, STREET_Y.0, x + layout.sov_blind, STREET_Y.1));
        x += layout.sov_blind;
        sor.push(Rect::new(x, STREET_Y.0, x + layout.sor_blind, STREET_Y.1));
        x += layout.sor_blind;
    }
    (sov, sor)
}

/// Lane y, speed, direction (+1 rightward) for each street object.
const STREET_TRAFFIC: [(f64, f64, f64); 6] =
    [(12.0, 6.0, 1.0), (16.0, 9.0, -1.0), (20.0, 7.5, 1.0), (24.0, 8.0, -1.0), (28.0, 6.5, 1.0), (14.0, 8.5, -1.0)];

fn street(name: &str, sor: SorKind, layout: StreetLayout, duration_s: f64, episodes: Vec<Episode>) -> Scenario {
    let origin = Position2D::new(0.0, 0.0);
    let secs = duration_s + 1.0;
    let (sov_blind, sor_blind) = street_blind_regions(layout);
    let mut coverages = vec![sov_coverage().with_blind_regions(sov_blind)];
    coverages.extend(sor_coverage(sor, SOR_MOUNT).map(|c| c.with_blind_regions(sor_blind)));
    let objects = STREET_TRAFFIC
        .iter()
        .enumerate()
        .map(|(i, &(y, speed, dir))| {
            let travel = speed * duration_s;
            let start_x = -dir * travel / 2.0;
            let heading = if dir > 0.0 { 0.0 } else { PI };
            (ObjectId(i as u32 + 1), TrajectorySpec::line(Position2D::new(start_x, y), speed, heading, secs))
        })
        .collect();
    Scenario {
        name: name.into(),
        duration_us: secs_to_micros(duration_s),
        frame_period_us: DEFAULT_FRAME_PERIOD_US,
        ego: TrajectorySpec::stationary(origin, secs),
        objects,
        coverages,
        detection_noise_sigma: 0.5,
        link_episodes: episodes,
    }
}

const COMPLEMENTARY_LAYOUT: StreetLayout = StreetLayout { sov_blind: 5.0, sor_blind: 5.0 };
/// Longer roadside-only stretches: the roadside unit keeps some objects long
/// enough to issue heavy predictions.
const CONNECTED_LAYOUT: StreetLayout = StreetLayout { sov_blind: 10.0, sor_blind: 5.0 };

/// A street where the vehicle and the roadside unit are each blind to
/// alternating strips, so every object is seen by one side at a time.
pub fn complementary(sor: SorKind) -> Scenario {
    street("complementary", sor, COMPLEMENTARY_LAYOUT, 10.0, Vec::new())
}

fn outage(start_s: f64, duration_s: f64) -> Episode {
    Episode { start: Timestamp(secs_to_micros(start_s)), duration_s, kind: EpisodeKind::Outage }
}

/// A street with longer roadside-only stretches and three short
/// base-station handovers.
pub fn handover(sor: SorKind) -> Scenario {
    let episodes = vec![outage(2.0, 0.3), outage(5.0, 0.3), outage(8.0, 0.3)];
    street("handover", sor, CONNECTED_LAYOUT, 10.0, episodes)
}

/// The handover street with one long connectivity loss instead.
pub fn tunnel(sor: SorKind) -> Scenario {
    street("tunnel", sor, CONNECTED_LAYOUT, 10.0, vec![outage(3.0, 2.0)])
}
