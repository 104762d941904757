//! Ground-truth world: parametric object motion, sensor coverage with blind
//! regions, and the noisy perception frames each side produces per tick.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::link::Episode;
use crate::model::{
    timestamp_of_tick, Detection, ObjectId, PerceptionFrame, Position2D, Source, Timestamp, Velocity2D,
    MICROS_PER_SECOND,
};

const CONTIGUITY_TOLERANCE_M: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("unknown object {0}")]
    UnknownObject(ObjectId),
    #[error("time {t} is outside the scenario duration {duration}")]
    TimeOutOfRange { t: Timestamp, duration: Timestamp },
    #[error("invalid scenario config at `{path}`: {message}")]
    InvalidConfig { path: String, message: String },
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::InvalidConfig { path: path.into(), message: message.into() }
}

/// One piece of a piecewise trajectory. Angles in radians, durations in
/// seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Segment {
    Line { start: Position2D, speed: f64, heading: f64, duration: f64 },
    Arc { center: Position2D, radius: f64, angular_rate: f64, start_angle: f64, duration: f64 },
}

impl Segment {
    pub fn duration(&self) -> f64 {
        match *self {
            Segment::Line { duration, .. } | Segment::Arc { duration, .. } => duration,
        }
    }

    /// State `tau` seconds into the segment.
    pub fn state_at(&self, tau: f64) -> (Position2D, Velocity2D) {
        match *self {
            Segment::Line { start, speed, heading, .. } => {
                let (s, c) = heading.sin_cos();
                let v = Velocity2D::new(speed * c, speed * s);
                (start.advanced(v, tau), v)
            }
            Segment::Arc { center, radius, angular_rate, start_angle, .. } => {
                let a = start_angle + angular_rate * tau;
                let (s, c) = a.sin_cos();
                (
                    Position2D::new(center.x + radius * c, center.y + radius * s),
                    Velocity2D::new(-radius * angular_rate * s, radius * angular_rate * c),
                )
            }
        }
    }

    fn check(&self, path: &str) -> Result<(), ScenarioError> {
        let d = self.duration();
        if !d.is_finite() || d <= 0.0 {
            return Err(invalid(format!("{path}.duration"), "must be positive and finite"));
        }
        let ok = match *self {
            Segment::Line { start, speed, heading, .. } => {
                start.is_finite() && speed.is_finite() && speed >= 0.0 && heading.is_finite()
            }
            Segment::Arc { center, radius, angular_rate, start_angle, .. } => {
                center.is_finite()
                    && radius.is_finite()
                    && radius > 0.0
                    && angular_rate.is_finite()
                    && start_angle.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(path, "segment parameters must be finite (speed >= 0, radius > 0)"))
        }
    }
}

/// Contiguous piecewise motion evaluated analytically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    pub segments: Vec<Segment>,
}

impl TrajectorySpec {
    pub fn line(start: Position2D, speed: f64, heading: f64, duration: f64) -> Self {
        TrajectorySpec { segments: vec![Segment::Line { start, speed, heading, duration }] }
    }

    pub fn stationary(at: Position2D, duration: f64) -> Self {
        TrajectorySpec::line(at, 0.0, 0.0, duration)
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(Segment::duration).sum()
    }

    /// State at `t` seconds from the start. Times past the end evaluate the
    /// last segment's end point.
    pub fn state_at(&self, t: f64) -> (Position2D, Velocity2D) {
        let mut offset = 0.0;
        let last = self.segments.len().saturating_sub(1);
        for (i, seg) in self.segments.iter().enumerate() {
            let d = seg.duration();
            if t < offset + d || i == last {
                return seg.state_at((t - offset).min(d).max(0.0));
            }
            offset += d;
        }
        (Position2D::default(), Velocity2D::default())
    }

    fn check(&self, path: &str, min_duration: f64) -> Result<(), ScenarioError> {
        if self.segments.is_empty() {
            return Err(invalid(format!("{path}.segments"), "must not be empty"));
        }
        for (i, seg) in self.segments.iter().enumerate() {
            seg.check(&format!("{path}.segments[{i}]"))?;
        }
        for (i, pair) in self.segments.windows(2).enumerate() {
            let end = pair[0].state_at(pair[0].duration()).0;
            let start = pair[1].state_at(0.0).0;
            if end.distance(start) > CONTIGUITY_TOLERANCE_M {
                return Err(invalid(
                    format!("{path}.segments[{}]", i + 1),
                    format!("starts {:.3e} m away from the end of the previous segment", end.distance(start)),
                ));
            }
        }
        if self.total_duration() + 1e-9 < min_duration {
            return Err(invalid(
                format!("{path}.segments"),
                format!("total duration {} s is shorter than the scenario", self.total_duration()),
            ));
        }
        Ok(())
    }
}

/// Axis-aligned world-frame rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub min: Position2D,
    pub max: Position2D,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Rect { min: Position2D::new(x0.min(x1), y0.min(y1)), max: Position2D::new(x0.max(x1), y0.max(y1)) }
    }

    pub fn contains(&self, p: Position2D) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CoverageOwner {
    SoV,
    SoRLight,
    SoRHeavy,
}

impl CoverageOwner {
    pub fn source(self) -> Source {
        match self {
            CoverageOwner::SoV => Source::SoV,
            CoverageOwner::SoRLight | CoverageOwner::SoRHeavy => Source::SoR,
        }
    }

    /// Velocity noise used when a coverage does not set one. Roadside units
    /// carry Doppler radar; the vehicle's fused output differentiates
    /// positions.
    pub fn default_velocity_sigma(self) -> f64 {
        match self {
            CoverageOwner::SoV => 2.0,
            CoverageOwner::SoRLight | CoverageOwner::SoRHeavy => 0.02,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mount {
    VehicleRelative,
    FixedAt(Position2D),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorCoverage {
    pub owner: CoverageOwner,
    pub mount: Mount,
    pub range: f64,
    #[serde(default)]
    pub blind_regions: Vec<Rect>,
    /// Per-axis velocity noise in m/s; owner default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity_noise_sigma: Option<f64>,
}

impl SensorCoverage {
    pub fn new(owner: CoverageOwner, mount: Mount, range: f64) -> Self {
        SensorCoverage { owner, mount, range, blind_regions: Vec::new(), velocity_noise_sigma: None }
    }

    pub fn with_blind_regions(mut self, regions: Vec<Rect>) -> Self {
        self.blind_regions = regions;
        self
    }

    pub fn velocity_sigma(&self) -> f64 {
        self.velocity_noise_sigma.unwrap_or_else(|| self.owner.default_velocity_sigma())
    }

    /// Objects strictly inside the range disc and outside every blind region
    /// are visible.
    pub fn sees(&self, mount_position: Position2D, p: Position2D) -> bool {
        mount_position.distance(p) < self.range && !self.blind_regions.iter().any(|r| r.contains(p))
    }
}

/// A fully resolved world description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub duration_us: u64,
    #[serde(default = "default_frame_period")]
    pub frame_period_us: u64,
    pub ego: TrajectorySpec,
    #[serde(default)]
    pub objects: BTreeMap<ObjectId, TrajectorySpec>,
    pub coverages: Vec<SensorCoverage>,
    #[serde(default = "default_noise")]
    pub detection_noise_sigma: f64,
    /// Connectivity events scripted by the scenario (handover, tunnel).
    #[serde(default)]
    pub link_episodes: Vec<Episode>,
}

fn default_frame_period() -> u64 {
    crate::model::DEFAULT_FRAME_PERIOD_US
}

fn default_noise() -> f64 {
    0.5
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.frame_period_us == 0 {
            return Err(invalid("frame_period_us", "must be positive"));
        }
        if self.duration_us == 0 {
            return Err(invalid("duration_us", "must be positive"));
        }
        if !self.detection_noise_sigma.is_finite() || self.detection_noise_sigma < 0.0 {
            return Err(invalid("detection_noise_sigma", "must be finite and >= 0"));
        }
        let secs = self.duration_us as f64 / MICROS_PER_SECOND as f64;
        self.ego.check("ego", secs)?;
        for (id, spec) in &self.objects {
            spec.check(&format!("objects.{}", id.0), secs)?;
        }
        let sov = self.coverages.iter().filter(|c| c.owner == CoverageOwner::SoV).count();
        if sov != 1 {
            return Err(invalid("coverages", format!("need exactly one SoV coverage, found {sov}")));
        }
        let sor = self.coverages.iter().filter(|c| c.owner != CoverageOwner::SoV).count();
        if sor > 1 {
            return Err(invalid("coverages", format!("at most one SoR coverage allowed, found {sor}")));
        }
        for (i, c) in self.coverages.iter().enumerate() {
            if !c.range.is_finite() || c.range <= 0.0 {
                return Err(invalid(format!("coverages[{i}].range"), "must be positive"));
            }
            if c.velocity_sigma() < 0.0 || !c.velocity_sigma().is_finite() {
                return Err(invalid(format!("coverages[{i}].velocity_noise_sigma"), "must be >= 0"));
            }
            if c.owner == CoverageOwner::SoV && c.mount != Mount::VehicleRelative {
                return Err(invalid(format!("coverages[{i}].mount"), "SoV sensors ride the vehicle"));
            }
            if c.owner != CoverageOwner::SoV && c.mount == Mount::VehicleRelative {
                return Err(invalid(format!("coverages[{i}].mount"), "SoR sensors are fixed"));
            }
        }
        Ok(())
    }

    pub fn duration(&self) -> Timestamp {
        Timestamp(self.duration_us)
    }

    /// Ticks `0..tick_count()` lie within the duration.
    pub fn tick_count(&self) -> u64 {
        self.duration_us / self.frame_period_us + 1
    }

    pub fn tick_time(&self, tick: u64) -> Timestamp {
        timestamp_of_tick(tick, self.frame_period_us)
    }

    pub fn coverage(&self, owner: CoverageOwner) -> Option<&SensorCoverage> {
        self.coverages.iter().find(|c| c.owner == owner)
    }

    pub fn sov_coverage(&self) -> &SensorCoverage {
        self.coverage(CoverageOwner::SoV).expect("validated scenario has a SoV coverage")
    }

    pub fn sor_coverage(&self) -> Option<&SensorCoverage> {
        self.coverages.iter().find(|c| c.owner != CoverageOwner::SoV)
    }

    /// Exact analytic position and velocity of an object at `t`.
    pub fn true_state(&self, object_id: ObjectId, t: Timestamp) -> Result<(Position2D, Velocity2D), ScenarioError> {
        let spec = self.objects.get(&object_id).ok_or(ScenarioError::UnknownObject(object_id))?;
        if t > self.duration() {
            return Err(ScenarioError::TimeOutOfRange { t, duration: self.duration() });
        }
        Ok(spec.state_at(t.as_secs_f64()))
    }

    pub fn ego_position(&self, t: Timestamp) -> Position2D {
        self.ego.state_at(t.as_secs_f64()).0
    }

    pub fn mount_position(&self, coverage: &SensorCoverage, t: Timestamp) -> Position2D {
        match coverage.mount {
            Mount::VehicleRelative => self.ego_position(t),
            Mount::FixedAt(p) => p,
        }
    }

    /// Objects a coverage can see at `t`, without noise.
    pub fn visible_objects(&self, coverage: &SensorCoverage, t: Timestamp) -> Vec<ObjectId> {
        let mount = self.mount_position(coverage, t);
        let secs = t.as_secs_f64();
        self.objects.iter().filter(|(_, spec)| coverage.sees(mount, spec.state_at(secs).0)).map(|(id, _)| *id).collect()
    }

    /// Noisy perception output of `owner`'s sensors for one tick. An absent
    /// coverage yields an empty frame.
    pub fn sense<R: Rng + ?Sized>(&self, owner: CoverageOwner, tick: u64, rng: &mut R) -> PerceptionFrame {
        let t = self.tick_time(tick);
        let source = owner.source();
        let Some(coverage) = self.coverage(owner) else {
            return PerceptionFrame::empty(tick, t, source);
        };
        let pos_noise = Normal::new(0.0, self.detection_noise_sigma).expect("validated sigma");
        let vel_noise = Normal::new(0.0, coverage.velocity_sigma()).expect("validated sigma");
        let secs = t.as_secs_f64();
        let mount = self.mount_position(coverage, t);
        let detections = self
            .objects
            .iter()
            .filter_map(|(id, spec)| {
                let (p, v) = spec.state_at(secs);
                coverage.sees(mount, p).then_some((*id, p, v))
            })
            .map(|(object_id, p, v)| Detection {
                object_id,
                position: Position2D::new(p.x + pos_noise.sample(rng), p.y + pos_noise.sample(rng)),
                velocity: Velocity2D::new(v.x + vel_noise.sample(rng), v.y + vel_noise.sample(rng)),
                source,
            })
            .collect();
        PerceptionFrame { tick, timestamp: t, source, detections }
    }

    /// Stable content hash, used to check that reports describe the same world.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("scenario serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::{build_scenario, ScenarioConfig, SorKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn approx(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    #[test]
    fn line_and_arc_states() {
        let line = Segment::Line { start: Position2D::new(0.0, 0.0), speed: 14.0, heading: 0.0, duration: 10.0 };
        assert_eq!(line.state_at(0.0).0, Position2D::new(0.0, 0.0));
        let p = line.state_at(0.1).0;
        assert!(approx(p.x, 1.4) && approx(p.y, 0.0));

        let center = Position2D::new(3.0, -2.0);
        let arc = Segment::Arc { center, radius: 50.0, angular_rate: 0.1, start_angle: 0.3, duration: 10.0 };
        let (p, v) = arc.state_at(1.0);
        assert!(approx(p.distance(center), 50.0));
        let angle = (p.y - center.y).atan2(p.x - center.x);
        assert!(approx(angle, 0.4));
        assert!(approx(v.speed(), 5.0));
    }

    #[test]
    fn piecewise_trajectory_must_be_contiguous() {
        let spec = TrajectorySpec {
            segments: vec![
                Segment::Line { start: Position2D::new(0.0, 0.0), speed: 1.0, heading: 0.0, duration: 1.0 },
                Segment::Line { start: Position2D::new(2.0, 0.0), speed: 1.0, heading: 0.0, duration: 1.0 },
            ],
        };
        assert!(spec.check("x", 1.0).is_err());
        let ok = TrajectorySpec {
            segments: vec![
                Segment::Line { start: Position2D::new(0.0, 0.0), speed: 1.0, heading: 0.0, duration: 1.0 },
                Segment::Arc {
                    center: Position2D::new(1.0, 5.0),
                    radius: 5.0,
                    angular_rate: 0.2,
                    start_angle: -std::f64::consts::FRAC_PI_2,
                    duration: 1.0,
                },
            ],
        };
        ok.check("x", 2.0).unwrap();
        assert!(ok.check("x", 2.5).is_err());
        let (p, _) = ok.state_at(1.5);
        assert!(approx(p.distance(Position2D::new(1.0, 5.0)), 5.0));
    }

    #[test]
    fn true_state_errors() {
        let s = build_scenario(&ScenarioConfig::named("approach")).unwrap();
        assert_eq!(s.true_state(ObjectId(999), Timestamp(0)), Err(ScenarioError::UnknownObject(ObjectId(999))));
        assert!(matches!(
            s.true_state(ObjectId(1), Timestamp(s.duration_us + 1)),
            Err(ScenarioError::TimeOutOfRange { .. })
        ));
    }

    #[test]
    fn range_and_blind_regions() {
        let cov = SensorCoverage::new(CoverageOwner::SoV, Mount::VehicleRelative, 70.0)
            .with_blind_regions(vec![Rect::new(10.0, -1.0, 20.0, 1.0)]);
        let origin = Position2D::default();
        assert!(!cov.sees(origin, Position2D::new(75.0, 0.0)));
        assert!(!cov.sees(origin, Position2D::new(70.0, 0.0)));
        assert!(cov.sees(origin, Position2D::new(69.9, 0.0)));
        assert!(!cov.sees(origin, Position2D::new(15.0, 0.0)));
        let light = SensorCoverage::new(CoverageOwner::SoRLight, Mount::FixedAt(origin), 170.0);
        assert!(light.sees(origin, Position2D::new(75.0, 0.0)));
    }

    #[test]
    fn zero_noise_senses_true_positions() {
        let mut s = build_scenario(&ScenarioConfig::preset("approach", SorKind::Heavy)).unwrap();
        s.detection_noise_sigma = 0.0;
        for c in &mut s.coverages {
            c.velocity_noise_sigma = Some(0.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let frame = s.sense(CoverageOwner::SoRHeavy, 3, &mut rng);
        assert_eq!(frame.detections.len(), 1);
        let (p, v) = s.true_state(ObjectId(1), frame.timestamp).unwrap();
        assert_eq!(frame.detections[0].position, p);
        assert_eq!(frame.detections[0].velocity, v);
        assert_eq!(frame.source, Source::SoR);
    }

    #[test]
    fn empty_object_map_gives_empty_frames() {
        let mut s = build_scenario(&ScenarioConfig::named("approach")).unwrap();
        s.objects.clear();
        s.validate().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for tick in 0..s.tick_count() {
            assert!(s.sense(CoverageOwner::SoV, tick, &mut rng).detections.is_empty());
        }
    }

    #[test]
    fn validation_reports_field_paths() {
        let mut s = build_scenario(&ScenarioConfig::named("approach")).unwrap();
        s.coverages.push(s.coverages[0].clone());
        assert!(matches!(s.validate(), Err(ScenarioError::InvalidConfig { path, .. }) if path == "coverages"));
        let mut s = build_scenario(&ScenarioConfig::named("approach")).unwrap();
        s.objects.insert(ObjectId(7), TrajectorySpec::stationary(Position2D::default(), 0.5));
        assert!(matches!(
            s.validate(),
            Err(ScenarioError::InvalidConfig { path, .. }) if path == "objects.7.segments"
        ));
    }

    fn moving_objects(specs: &[(f64, f64, f64, f64)]) -> BTreeMap<ObjectId, TrajectorySpec> {
        specs
            .iter()
            .enumerate()
            .map(|(i, &(x, y, speed, heading))| {
                (ObjectId(i as u32 + 1), TrajectorySpec::line(Position2D::new(x, y), speed, heading, 3.0))
            })
            .collect()
    }

    proptest::proptest! {
        #[test]
        fn wider_roadside_coverage_sees_a_superset(
            specs in proptest::collection::vec((-400.0f64..400.0, -400.0f64..400.0, 0.0f64..30.0, -3.2f64..3.2), 0..12),
            mx in -50.0f64..50.0,
            my in -50.0f64..50.0,
        ) {
            let mount = Mount::FixedAt(Position2D::new(mx, my));
            let heavy = SensorCoverage::new(CoverageOwner::SoRHeavy, mount, 320.0);
            let light = SensorCoverage::new(CoverageOwner::SoRLight, mount, 170.0);
            let scenario = Scenario {
                name: "monotone".into(),
                duration_us: 2_000_000,
                frame_period_us: 100_000,
                ego: TrajectorySpec::stationary(Position2D::new(0.0, 0.0), 3.0),
                objects: moving_objects(&specs),
                coverages: vec![SensorCoverage::new(CoverageOwner::SoV, Mount::VehicleRelative, 70.0), heavy.clone()],
                detection_noise_sigma: 0.5,
                link_episodes: Vec::new(),
            };
            for tick in 0..scenario.tick_count() {
                let t = scenario.tick_time(tick);
                let wide = scenario.visible_objects(&heavy, t);
                let narrow = scenario.visible_objects(&light, t);
                proptest::prop_assert!(narrow.iter().all(|id| wide.contains(id)));
            }
        }

        #[test]
        fn sensing_is_a_function_of_seed_and_tick(seed in proptest::prelude::any::<u64>(), tick in 0u64..100) {
            let scenario = crate::presets::complementary(SorKind::Heavy);
            for owner in [CoverageOwner::SoV, CoverageOwner::SoRHeavy] {
                let purpose = if owner == CoverageOwner::SoV { crate::rng::Purpose::SenseSoV } else { crate::rng::Purpose::SenseSoR };
                let a = scenario.sense(owner, tick, &mut crate::rng::derive_rng(seed, purpose, tick));
                let b = scenario.sense(owner, tick, &mut crate::rng::derive_rng(seed, purpose, tick));
                proptest::prop_assert_eq!(a, b);
            }
        }
    }
}
