//! Shared domain types: integer time, planar geometry, detections, tracks and
//! the predicted trajectories that flow between the two pipelines.

use std::collections::VecDeque;
use std::fmt;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default frame period: 10 Hz.
pub const DEFAULT_FRAME_PERIOD_US: u64 = 100_000;

/// Maximum number of states a [`Track`] retains.
pub const TRACK_CAPACITY: usize = 25;

pub const MICROS_PER_SECOND: u64 = 1_000_000;

/// Microseconds since simulation start.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub fn micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / MICROS_PER_SECOND as f64
    }

    pub fn plus(self, micros: u64) -> Timestamp {
        Timestamp(self.0 + micros)
    }

    /// `self - earlier`, or `None` when `earlier` is later than `self`.
    pub fn since(self, earlier: Timestamp) -> Option<u64> {
        self.0.checked_sub(earlier.0)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

/// Timestamp of a tick on the frame grid.
pub fn timestamp_of_tick(tick: u64, frame_period_us: u64) -> Timestamp {
    Timestamp(tick * frame_period_us)
}

pub fn secs_to_micros(secs: f64) -> u64 {
    (secs * MICROS_PER_SECOND as f64).round() as u64
}

/// World-frame position in meters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Position2D {
    pub x: f64,
    pub y: f64,
}

/// World-frame velocity in meters per second.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Velocity2D {
    pub x: f64,
    pub y: f64,
}

impl Position2D {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Position2D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Position after moving with `velocity` for `secs`.
    pub fn advanced(self, velocity: Velocity2D, secs: f64) -> Position2D {
        Position2D::new(self.x + velocity.x * secs, self.y + velocity.y * secs)
    }
}

impl Velocity2D {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn speed(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add<Position2D> for Position2D {
    type Output = Position2D;
    fn add(self, rhs: Position2D) -> Position2D {
        Position2D::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Position2D {
    type Output = Position2D;
    fn sub(self, rhs: Position2D) -> Position2D {
        Position2D::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Position2D {
    type Output = Position2D;
    fn mul(self, rhs: f64) -> Position2D {
        Position2D::new(self.x * rhs, self.y * rhs)
    }
}

/// Which pipeline produced a piece of data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Source {
    SoV,
    SoR,
}

/// Ground-truth object identity carried by detections.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectId(pub u32);

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "obj{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub object_id: ObjectId,
    pub position: Position2D,
    pub velocity: Velocity2D,
    pub source: Source,
}

/// Perception output of one side for one tick.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerceptionFrame {
    pub tick: u64,
    pub timestamp: Timestamp,
    pub source: Source,
    pub detections: Vec<Detection>,
}

impl PerceptionFrame {
    pub fn empty(tick: u64, timestamp: Timestamp, source: Source) -> Self {
        Self { tick, timestamp, source, detections: Vec::new() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackState {
    pub timestamp: Timestamp,
    pub position: Position2D,
    pub velocity: Velocity2D,
    pub source: Source,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("state at {offered} is not newer than the latest stored state at {latest}")]
pub struct StaleState {
    pub latest: Timestamp,
    pub offered: Timestamp,
}

/// Bounded history of one object's observed states, oldest first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub object_id: ObjectId,
    states: VecDeque<TrackState>,
}

impl Track {
    pub fn new(object_id: ObjectId) -> Self {
        Self { object_id, states: VecDeque::with_capacity(TRACK_CAPACITY) }
    }

    pub fn from_states(object_id: ObjectId, states: impl IntoIterator<Item = TrackState>) -> Result<Self, StaleState> {
        let mut track = Track::new(object_id);
        for s in states {
            track.push(s)?;
        }
        Ok(track)
    }

    /// Appends a state, evicting the oldest one once the track is full.
    pub fn push(&mut self, state: TrackState) -> Result<(), StaleState> {
        if let Some(latest) = self.latest() {
            if state.timestamp <= latest.timestamp {
                return Err(StaleState { latest: latest.timestamp, offered: state.timestamp });
            }
        }
        if self.states.len() == TRACK_CAPACITY {
            self.states.pop_front();
        }
        self.states.push_back(state);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn latest(&self) -> Option<&TrackState> {
        self.states.back()
    }

    pub fn states(&self) -> impl DoubleEndedIterator<Item = &TrackState> + ExactSizeIterator {
        self.states.iter()
    }

    /// The most recent `n` states (fewer if the track is shorter), oldest first.
    pub fn recent(&self, n: usize) -> Vec<TrackState> {
        let skip = self.states.len().saturating_sub(n);
        self.states.iter().skip(skip).copied().collect()
    }

    pub fn clear(&mut self) {
        self.states.clear();
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub timestamp: Timestamp,
    pub position: Position2D,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TrajectoryError {
    #[error("trajectory of {object} issued at {issued_at} does not cover {at}")]
    NotCovered { object: ObjectId, issued_at: Timestamp, at: Timestamp },
    #[error("trajectory has no points")]
    Empty,
}

/// Future path of one object, issued at a given time for a given horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictedTrajectory {
    pub object_id: ObjectId,
    pub issued_at: Timestamp,
    pub horizon_us: u64,
    pub source: Source,
    pub points: Vec<TrajectoryPoint>,
}

impl PredictedTrajectory {
    pub fn end(&self) -> Timestamp {
        self.issued_at.plus(self.horizon_us)
    }

    pub fn covers(&self, t: Timestamp) -> bool {
        t > self.issued_at && t <= self.end() && !self.points.is_empty()
    }

    /// Position at `t` by linear interpolation between points. Times between
    /// `issued_at` and the first point use the slope of the first two points.
    pub fn position_at(&self, t: Timestamp) -> Result<Position2D, TrajectoryError> {
        if !self.covers(t) {
            return Err(TrajectoryError::NotCovered { object: self.object_id, issued_at: self.issued_at, at: t });
        }
        self.interpolate(t)
    }

    /// Like [`position_at`](Self::position_at) but continues the last segment
    /// linearly past the horizon. Used for lookahead sweeps.
    pub fn extrapolated_position_at(&self, t: Timestamp) -> Result<Position2D, TrajectoryError> {
        self.interpolate(t)
    }

    fn interpolate(&self, t: Timestamp) -> Result<Position2D, TrajectoryError> {
        let pts = &self.points;
        match pts.len() {
            0 => Err(TrajectoryError::Empty),
            1 => Ok(pts[0].position),
            n => {
                let idx = pts.partition_point(|p| p.timestamp < t);
                let (a, b) = if idx == 0 {
                    (pts[0], pts[1])
                } else if idx >= n {
                    (pts[n - 2], pts[n - 1])
                } else {
                    (pts[idx - 1], pts[idx])
                };
                let span = (b.timestamp.0 as f64) - (a.timestamp.0 as f64);
                let frac = ((t.0 as f64) - (a.timestamp.0 as f64)) / span;
                Ok(a.position + (b.position - a.position) * frac)
            }
        }
    }
}

/// How SoR data entered a planning decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FusionMode {
    Intra,
    Inter,
    Planning,
    NoFusion,
}

impl FusionMode {
    pub const ALL: [FusionMode; 4] = [FusionMode::Intra, FusionMode::Inter, FusionMode::Planning, FusionMode::NoFusion];

    /// Label used in CSV exports.
    pub fn label(self) -> &'static str {
        match self {
            FusionMode::Intra => "INTRA",
            FusionMode::Inter => "INTER",
            FusionMode::Planning => "PLANNING",
            FusionMode::NoFusion => "NONE",
        }
    }

    pub fn from_label(s: &str) -> Option<FusionMode> {
        FusionMode::ALL.into_iter().find(|m| m.label() == s)
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanningDecision {
    pub tick: u64,
    pub decided_at: Timestamp,
    pub e2e_latency: u64,
    pub fusion_mode_used: FusionMode,
    pub predicted_set: Vec<PredictedTrajectory>,
}
