//! Tracking bookkeeping, the short-horizon constant-velocity predictor, the
//! long-horizon constant-turn-rate predictor, and displacement error.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    ObjectId, PerceptionFrame, Position2D, PredictedTrajectory, Source, Timestamp, Track, TrackState, TrajectoryPoint,
    Velocity2D,
};
use crate::scenario::{CoverageOwner, Scenario};

pub const LIGHT_HORIZON_US: u64 = 500_000;
pub const HEAVY_HORIZON_US: u64 = 5_000_000;
pub const LIGHT_WINDOW: usize = 5;
pub const HEAVY_WINDOW: usize = 20;
pub const HEAVY_MIN_STATES: usize = 10;
/// Tracks not refreshed for longer than this are restarted.
pub const DEFAULT_COAST_US: u64 = 150_000;

const MIN_SIGMA: f64 = 1e-3;
const SINGULAR_DET: f64 = 1e-12;
const STRAIGHT_TURN_RATE: f64 = 1e-9;
/// Below this speed a heading cannot be read from the velocity.
const MIN_HEADING_SPEED: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum PredictionError {
    #[error("frame at {offered} is not newer than the last update at {last}")]
    StaleFrame { last: Timestamp, offered: Timestamp },
    #[error("{object} has {have} states, {need} needed")]
    InsufficientHistory { object: ObjectId, have: usize, need: usize },
    #[error("no trajectories to evaluate")]
    EmptyPredictionSet,
    #[error("trajectory of {object} does not cover {at}")]
    HorizonExceeded { object: ObjectId, at: Timestamp },
    #[error("ground truth unavailable: {0}")]
    GroundTruth(#[from] crate::scenario::ScenarioError),
}

/// Measurement noise the fits weight observations by.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub position_sigma: f64,
    pub sov_velocity_sigma: f64,
    pub sor_velocity_sigma: f64,
}

impl NoiseModel {
    pub fn for_scenario(scenario: &Scenario) -> Self {
        let sov = scenario.sov_coverage().velocity_sigma();
        let sor = scenario
            .sor_coverage()
            .map(|c| c.velocity_sigma())
            .unwrap_or_else(|| CoverageOwner::SoRHeavy.default_velocity_sigma());
        NoiseModel { position_sigma: scenario.detection_noise_sigma, sov_velocity_sigma: sov, sor_velocity_sigma: sor }
    }

    fn position_weight(&self) -> f64 {
        self.position_sigma.max(MIN_SIGMA).powi(-2)
    }

    fn velocity_weight(&self, source: Source) -> f64 {
        let sigma = match source {
            Source::SoV => self.sov_velocity_sigma,
            Source::SoR => self.sor_velocity_sigma,
        };
        sigma.max(MIN_SIGMA).powi(-2)
    }
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel { position_sigma: 0.5, sov_velocity_sigma: 2.0, sor_velocity_sigma: 0.02 }
    }
}

/// Per-side track table.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrackerState {
    pub tracks: BTreeMap<ObjectId, Track>,
    pub last_update: Option<Timestamp>,
    pub last_update_tick: Option<u64>,
    coast_us: Option<u64>,
}

impl TrackerState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Tracks that miss updates for longer than `coast_us` are dropped, and an
    /// object seen again later starts a fresh track.
    pub fn with_coast_limit(coast_us: u64) -> Self {
        TrackerState { coast_us: Some(coast_us), ..Self::default() }
    }

    /// Appends every detection of `frame` to its object's track.
    pub fn update(&mut self, frame: &PerceptionFrame) -> Result<(), PredictionError> {
        if let Some(last) = self.last_update {
            if frame.timestamp <= last {
                return Err(PredictionError::StaleFrame { last, offered: frame.timestamp });
            }
        }
        let now = frame.timestamp;
        if let Some(coast) = self.coast_us {
            self.tracks.retain(|_, t| t.latest().is_some_and(|s| now.0 - s.timestamp.0 <= coast));
        }
        for d in &frame.detections {
            let track = self.tracks.entry(d.object_id).or_insert_with(|| Track::new(d.object_id));
            let state = TrackState { timestamp: now, position: d.position, velocity: d.velocity, source: d.source };
            if track.push(state).is_err() {
                // duplicate id within one frame: the first detection stands
                continue;
            }
        }
        self.last_update = Some(now);
        self.last_update_tick = Some(frame.tick);
        Ok(())
    }

    pub fn get(&self, id: ObjectId) -> Option<&Track> {
        self.tracks.get(&id)
    }

    /// Tracks refreshed by the most recent update.
    pub fn updated_tracks(&self) -> impl Iterator<Item = &Track> {
        let last = self.last_update;
        self.tracks.values().filter(move |t| t.latest().map(|s| s.timestamp) == last)
    }
}

/// Free-function form of [`TrackerState::update`].
pub fn update_tracks(mut state: TrackerState, frame: &PerceptionFrame) -> Result<TrackerState, PredictionError> {
    state.update(frame)?;
    Ok(state)
}

fn secs_between(a: Timestamp, b: Timestamp) -> f64 {
    (b.0 as f64 - a.0 as f64) / 1e6
}

/// Constant-velocity fit anchored at `t_ref`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CvFit {
    pub t_ref: Timestamp,
    pub position: Position2D,
    pub velocity: Velocity2D,
}

impl CvFit {
    /// Weighted least squares over positions and measured velocities jointly.
    pub fn fit(states: &[TrackState], noise: &NoiseModel) -> Option<CvFit> {
        let last = states.last()?;
        let t_ref = last.timestamp;
        let wp = noise.position_weight();
        let (mut s0, mut s1, mut s2, mut wv_sum) = (0.0, 0.0, 0.0, 0.0);
        let (mut bx0, mut bx1, mut by0, mut by1) = (0.0, 0.0, 0.0, 0.0);
        for s in states {
            let tau = secs_between(t_ref, s.timestamp);
            let wv = noise.velocity_weight(s.source);
            s0 += wp;
            s1 += wp * tau;
            s2 += wp * tau * tau;
            wv_sum += wv;
            bx0 += wp * s.position.x;
            by0 += wp * s.position.y;
            bx1 += wp * s.position.x * tau + wv * s.velocity.x;
            by1 += wp * s.position.y * tau + wv * s.velocity.y;
        }
        let a11 = s2 + wv_sum;
        let det = s0 * a11 - s1 * s1;
        let (position, velocity) = if det.abs() > SINGULAR_DET * s0 * a11.max(1.0) && states.len() >= 2 {
            let solve = |b0: f64, b1: f64| ((a11 * b0 - s1 * b1) / det, (s0 * b1 - s1 * b0) / det);
            let (px, vx) = solve(bx0, bx1);
            let (py, vy) = solve(by0, by1);
            (Position2D::new(px, py), Velocity2D::new(vx, vy))
        } else {
            let n = states.len() as f64;
            let (mx, my) = states.iter().fold((0.0, 0.0), |(x, y), s| (x + s.position.x, y + s.position.y));
            (Position2D::new(mx / n, my / n), Velocity2D::default())
        };
        if !position.is_finite() || !velocity.is_finite() {
            return None;
        }
        Some(CvFit { t_ref, position, velocity })
    }

    pub fn position_at(&self, t: Timestamp) -> Position2D {
        self.position.advanced(self.velocity, secs_between(self.t_ref, t))
    }
}

/// Constant turn rate and speed fit anchored at `t_ref`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CtrvFit {
    pub t_ref: Timestamp,
    pub position: Position2D,
    pub speed: f64,
    pub heading: f64,
    pub turn_rate: f64,
}

fn ctrv_offset(heading: f64, turn_rate: f64, speed: f64, dt: f64) -> Position2D {
    if turn_rate.abs() < STRAIGHT_TURN_RATE {
        let (s, c) = heading.sin_cos();
        return Position2D::new(speed * dt * c, speed * dt * s);
    }
    let end = heading + turn_rate * dt;
    let r = speed / turn_rate;
    Position2D::new(r * (end.sin() - heading.sin()), r * (heading.cos() - end.cos()))
}

impl CtrvFit {
    pub fn fit(states: &[TrackState], noise: &NoiseModel) -> Option<CtrvFit> {
        let last = states.last()?;
        let t_ref = last.timestamp;
        let speed = states.iter().map(|s| s.velocity.speed()).sum::<f64>() / states.len() as f64;
        if speed < MIN_HEADING_SPEED {
            let cv = CvFit::fit(states, noise)?;
            let heading = cv.velocity.y.atan2(cv.velocity.x);
            return Some(CtrvFit { t_ref, position: cv.position, speed: cv.velocity.speed(), heading, turn_rate: 0.0 });
        }

        let mut headings = Vec::with_capacity(states.len());
        let mut prev: Option<f64> = None;
        for s in states {
            let mut h = s.velocity.y.atan2(s.velocity.x);
            if let Some(p) = prev {
                h = p + wrap_angle(h - p);
            }
            headings.push(h);
            prev = Some(h);
        }
        let (mut w0, mut w1, mut w2, mut b0, mut b1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (s, h) in states.iter().zip(&headings) {
            let w = noise.velocity_weight(s.source) * s.velocity.speed().powi(2);
            let tau = secs_between(t_ref, s.timestamp);
            w0 += w;
            w1 += w * tau;
            w2 += w * tau * tau;
            b0 += w * h;
            b1 += w * h * tau;
        }
        let det = w0 * w2 - w1 * w1;
        let (heading, turn_rate) = if det.abs() > SINGULAR_DET * w0 * w2.max(1.0) {
            ((w2 * b0 - w1 * b1) / det, (w0 * b1 - w1 * b0) / det)
        } else {
            (b0 / w0, 0.0)
        };

        let n = states.len() as f64;
        let anchor = states.iter().fold(Position2D::default(), |acc, s| {
            let tau = secs_between(t_ref, s.timestamp);
            let h = heading + turn_rate * tau;
            acc + s.position + ctrv_offset(h, turn_rate, speed, -tau)
        }) * (1.0 / n);

        let fit = CtrvFit { t_ref, position: anchor, speed, heading, turn_rate };
        (anchor.is_finite() && heading.is_finite() && turn_rate.is_finite()).then_some(fit)
    }

    pub fn position_at(&self, t: Timestamp) -> Position2D {
        self.position + ctrv_offset(self.heading, self.turn_rate, self.speed, secs_between(self.t_ref, t))
    }
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let r = (a + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if r.is_finite() {
        r
    } else {
        0.0
    }
}

fn sample_points(
    issued_at: Timestamp,
    horizon_us: u64,
    step_us: u64,
    at: impl Fn(Timestamp) -> Position2D,
) -> Vec<TrajectoryPoint> {
    let step = step_us.max(1);
    (1..=horizon_us / step)
        .map(|j| {
            let timestamp = issued_at.plus(j * step);
            TrajectoryPoint { timestamp, position: at(timestamp) }
        })
        .collect()
}

fn require(track: &Track, need: usize) -> Result<(), PredictionError> {
    if track.len() < need {
        return Err(PredictionError::InsufficientHistory { object: track.object_id, have: track.len(), need });
    }
    Ok(())
}

/// Constant-velocity fit over the last five states projected 0.5 s past
/// `issued_at`, one point per frame.
pub fn light_predict(
    track: &Track,
    issued_at: Timestamp,
    frame_period_us: u64,
    noise: &NoiseModel,
    source: Source,
) -> Result<PredictedTrajectory, PredictionError> {
    require(track, 2)?;
    let states = track.recent(LIGHT_WINDOW);
    let fit = CvFit::fit(&states, noise).ok_or(PredictionError::InsufficientHistory {
        object: track.object_id,
        have: track.len(),
        need: 2,
    })?;
    Ok(PredictedTrajectory {
        object_id: track.object_id,
        issued_at,
        horizon_us: LIGHT_HORIZON_US,
        source,
        points: sample_points(issued_at, LIGHT_HORIZON_US, frame_period_us, |t| fit.position_at(t)),
    })
}

/// Constant turn-rate fit over the last twenty states projected 5 s past
/// `issued_at`.
pub fn heavy_predict(
    track: &Track,
    issued_at: Timestamp,
    frame_period_us: u64,
    noise: &NoiseModel,
    source: Source,
) -> Result<PredictedTrajectory, PredictionError> {
    require(track, HEAVY_MIN_STATES)?;
    let states = track.recent(HEAVY_WINDOW);
    let fit = CtrvFit::fit(&states, noise).ok_or(PredictionError::InsufficientHistory {
        object: track.object_id,
        have: track.len(),
        need: HEAVY_MIN_STATES,
    })?;
    Ok(PredictedTrajectory {
        object_id: track.object_id,
        issued_at,
        horizon_us: HEAVY_HORIZON_US,
        source,
        points: sample_points(issued_at, HEAVY_HORIZON_US, frame_period_us, |t| fit.position_at(t)),
    })
}

/// Mean Euclidean distance between predicted and true positions at
/// `eval_time`.
pub fn displacement_error(
    predicted: &[PredictedTrajectory],
    scenario: &Scenario,
    eval_time: Timestamp,
) -> Result<f64, PredictionError> {
    if predicted.is_empty() {
        return Err(PredictionError::EmptyPredictionSet);
    }
    let mut total = 0.0;
    for traj in predicted {
        let p = traj
            .position_at(eval_time)
            .map_err(|_| PredictionError::HorizonExceeded { object: traj.object_id, at: eval_time })?;
        let (truth, _) = scenario.true_state(traj.object_id, eval_time)?;
        total += p.distance(truth);
    }
    Ok(total / predicted.len() as f64)
}
