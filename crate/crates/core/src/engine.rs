//! Discrete-event core. Each tick the roadside side senses, tracks, predicts
//! and transmits two streams; the vehicle side senses, waits (bounded) for the
//! matching roadside frame, tracks, predicts and plans.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::{
    inter_frame_fuse, intra_frame_fuse, planning_fuse, select_mode, ArrivalStatus, PolicyConfig, PolicyMode, SorBuffer,
};
use crate::link::{Channel, LatencyTrace, LinkError, LinkSource, Stream};
use crate::model::{FusionMode, PerceptionFrame, PlanningDecision, PredictedTrajectory, Source, Timestamp};
use crate::prediction::{heavy_predict, light_predict, NoiseModel, TrackerState, DEFAULT_COAST_US, HEAVY_MIN_STATES};
use crate::rng::{derive_rng, Purpose};
use crate::scenario::{CoverageOwner, Scenario, ScenarioError};

pub const LOG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid config at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Link(#[from] LinkError),
}

fn config_error(path: &str, message: impl Into<String>) -> EngineError {
    EngineError::Config { path: path.into(), message: message.into() }
}

/// Processing time of every pipeline stage, in microseconds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageLatencies {
    pub sov_perception: u64,
    pub sov_tracking: u64,
    pub sov_light_prediction: u64,
    pub sov_planning: u64,
    pub sor_perception: u64,
    pub sor_tracking: u64,
    pub sor_heavy_prediction: u64,
}

impl Default for StageLatencies {
    fn default() -> Self {
        StageLatencies {
            sov_perception: 30_000,
            sov_tracking: 5_000,
            sov_light_prediction: 5_000,
            sov_planning: 10_000,
            sor_perception: 30_000,
            sor_tracking: 5_000,
            sor_heavy_prediction: 5_000,
        }
    }
}

impl StageLatencies {
    /// Vehicle stages after the fusion gate.
    pub fn sov_post_gate(&self) -> u64 {
        self.sov_tracking + self.sov_light_prediction + self.sov_planning
    }

    pub fn sor_total(&self) -> u64 {
        self.sor_perception + self.sor_tracking + self.sor_heavy_prediction
    }

    /// Largest link latency that still lets a matching frame arrive within
    /// `wait_window_us`.
    pub fn effective_window(&self, wait_window_us: u64) -> u64 {
        (wait_window_us + self.sov_perception).saturating_sub(self.sor_perception)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundaryConfig {
    pub e2e_bound_us: u64,
    pub output_interval_bound_us: u64,
    pub wait_window_us: u64,
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        BoundaryConfig { e2e_bound_us: 100_000, output_interval_bound_us: 150_000, wait_window_us: 35_000 }
    }
}

/// Checks the cross-field invariants that make the fallback rule sufficient to
/// keep every bound.
pub fn validate_timing(
    stages: &StageLatencies,
    bounds: &BoundaryConfig,
    frame_period_us: u64,
) -> Result<(), EngineError> {
    if bounds.e2e_bound_us == 0 {
        return Err(config_error("boundaries.e2e_bound_us", "must be positive"));
    }
    if bounds.output_interval_bound_us < frame_period_us {
        return Err(config_error("boundaries.output_interval_bound_us", "must be at least one frame period"));
    }
    let post = stages.sov_post_gate();
    if stages.sov_perception + post > bounds.e2e_bound_us {
        return Err(config_error("stages", "vehicle stages alone exceed the e2e bound"));
    }
    if bounds.wait_window_us + post > bounds.e2e_bound_us {
        return Err(config_error(
            "boundaries.wait_window_us",
            "must not exceed e2e_bound_us minus tracking, prediction and planning",
        ));
    }
    if bounds.wait_window_us > frame_period_us {
        return Err(config_error("boundaries.wait_window_us", "must not exceed the frame period"));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionEvent {
    pub tick: u64,
    pub mode: FusionMode,
    pub staleness_us: Option<u64>,
}

/// What happened at the fusion gate of one tick.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WaitRecord {
    pub tick: u64,
    pub intra_attempted: bool,
    pub intra_achieved: bool,
    pub wait_us: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationKind {
    E2EViolation,
    IntervalViolation,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryViolation {
    pub tick: u64,
    pub kind: ViolationKind,
    pub value_us: u64,
    pub bound_us: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationLog {
    pub schema_version: u32,
    pub scenario_hash: String,
    pub seed: u64,
    pub policy: PolicyMode,
    pub frame_period_us: u64,
    pub tick_count: u64,
    pub sor_configured: bool,
    pub frames: Vec<PerceptionFrame>,
    pub deliveries: BTreeMap<Stream, LatencyTrace>,
    pub decisions: Vec<PlanningDecision>,
    pub fusion_events: Vec<FusionEvent>,
    pub waits: Vec<WaitRecord>,
    pub boundary_violations: Vec<BoundaryViolation>,
}

impl SimulationLog {
    /// Fraction of ticks with a roadside stream where intra fusion was
    /// attempted but the frame missed the wait window.
    pub fn deadline_miss_ratio(&self) -> f64 {
        let attempted = self.waits.iter().filter(|w| w.intra_attempted).count();
        if attempted == 0 {
            return 0.0;
        }
        let missed = self.waits.iter().filter(|w| w.intra_attempted && !w.intra_achieved).count();
        missed as f64 / attempted as f64
    }
}

/// Flags every decision over the e2e bound and every gap between consecutive
/// decisions over the interval bound.
pub fn check_boundaries(decisions: &[PlanningDecision], bounds: &BoundaryConfig) -> Vec<BoundaryViolation> {
    let mut out = Vec::new();
    for d in decisions {
        if d.e2e_latency > bounds.e2e_bound_us {
            out.push(BoundaryViolation {
                tick: d.tick,
                kind: ViolationKind::E2EViolation,
                value_us: d.e2e_latency,
                bound_us: bounds.e2e_bound_us,
            });
        }
    }
    for pair in decisions.windows(2) {
        let gap = pair[1].decided_at.0.saturating_sub(pair[0].decided_at.0);
        if gap > bounds.output_interval_bound_us {
            out.push(BoundaryViolation {
                tick: pair[1].tick,
                kind: ViolationKind::IntervalViolation,
                value_us: gap,
                bound_us: bounds.output_interval_bound_us,
            });
        }
    }
    out.sort_by_key(|v| (v.tick, v.kind == ViolationKind::IntervalViolation));
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Side {
    SoR,
    SoV,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    SorPerceived,
    SorPredicted,
    PostArrival,
    HeavyArrival,
    SovPerceived,
    SovGateDeadline,
}

impl EventKind {
    fn side(self) -> Side {
        match self {
            EventKind::SovPerceived | EventKind::SovGateDeadline => Side::SoV,
            _ => Side::SoR,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Event {
    time: Timestamp,
    side: Side,
    tick: u64,
    kind: EventKind,
    seq: u64,
}

struct Engine<'a> {
    scenario: &'a Scenario,
    link: LinkSource,
    stages: &'a StageLatencies,
    bounds: &'a BoundaryConfig,
    policy: &'a PolicyConfig,
    seed: u64,
    noise: NoiseModel,
    sor_configured: bool,
    queue: BinaryHeap<Reverse<Event>>,
    seq: u64,
    post_channel: Channel,
    heavy_channel: Channel,
    sor_frames: BTreeMap<u64, PerceptionFrame>,
    in_flight_post: BTreeMap<u64, PerceptionFrame>,
    in_flight_heavy: BTreeMap<u64, Vec<PredictedTrajectory>>,
    sor_tracker: TrackerState,
    sov_tracker: TrackerState,
    buffer: SorBuffer,
    sov_frames: BTreeMap<u64, PerceptionFrame>,
    waiting: Option<u64>,
    last_decided: Option<Timestamp>,
    fresh_streak: u32,
    degraded: bool,
    decisions: Vec<PlanningDecision>,
    fusion_events: Vec<FusionEvent>,
    waits: Vec<WaitRecord>,
}

impl<'a> Engine<'a> {
    fn push(&mut self, time: Timestamp, tick: u64, kind: EventKind) {
        self.seq += 1;
        self.queue.push(Reverse(Event { time, side: kind.side(), tick, kind, seq: self.seq }));
    }

    fn tick_time(&self, tick: u64) -> Timestamp {
        self.scenario.tick_time(tick)
    }

    fn handle(&mut self, ev: Event) {
        match ev.kind {
            EventKind::SorPerceived => self.sor_perceived(ev.tick, ev.time),
            EventKind::SorPredicted => self.sor_predicted(ev.tick, ev.time),
            EventKind::PostArrival => {
                if let Some(frame) = self.in_flight_post.remove(&ev.tick) {
                    self.buffer.offer_frame(frame, ev.time);
                }
                if self.waiting == Some(ev.tick) {
                    self.gate(ev.tick, ev.time);
                }
            }
            EventKind::HeavyArrival => {
                if let Some(trajs) = self.in_flight_heavy.remove(&ev.tick) {
                    self.buffer.offer_heavy(ev.tick, trajs, ev.time);
                }
            }
            EventKind::SovPerceived => self.sov_perceived(ev.tick, ev.time),
            EventKind::SovGateDeadline => {
                if self.waiting == Some(ev.tick) {
                    self.gate(ev.tick, ev.time);
                }
            }
        }
    }

    fn sor_owner(&self) -> CoverageOwner {
        self.scenario.sor_coverage().map(|c| c.owner).unwrap_or(CoverageOwner::SoRHeavy)
    }

    fn sor_perceived(&mut self, tick: u64, now: Timestamp) {
        let mut rng = derive_rng(self.seed, Purpose::SenseSoR, tick);
        let frame = self.scenario.sense(self.sor_owner(), tick, &mut rng);
        self.sor_frames.insert(tick, frame.clone());
        let arrival = self.post_channel.transmit(&self.link, tick, now).expect("trace coverage checked before run");
        if let Some(at) = arrival {
            self.in_flight_post.insert(tick, frame);
            self.push(at, tick, EventKind::PostArrival);
        }
    }

    fn sor_predicted(&mut self, tick: u64, now: Timestamp) {
        let frame = self.sor_frames.get(&tick).cloned().expect("sensed before prediction");
        self.sor_tracker.update(&frame).expect("roadside ticks increase");
        let period = self.scenario.frame_period_us;
        let noise = self.noise;
        let trajectories: Vec<_> = self
            .sor_tracker
            .updated_tracks()
            .filter(|t| t.len() >= HEAVY_MIN_STATES)
            .filter_map(|t| heavy_predict(t, now, period, &noise, Source::SoR).ok())
            .collect();
        let arrival = self.heavy_channel.transmit(&self.link, tick, now).expect("trace coverage checked before run");
        if let Some(at) = arrival {
            self.in_flight_heavy.insert(tick, trajectories);
            self.push(at, tick, EventKind::HeavyArrival);
        }
    }

    fn sov_perceived(&mut self, tick: u64, now: Timestamp) {
        let mut rng = derive_rng(self.seed, Purpose::SenseSoV, tick);
        let frame = self.scenario.sense(CoverageOwner::SoV, tick, &mut rng);
        self.sov_frames.insert(tick, frame);
        let waits = self.sor_configured && self.policy.mode.waits();
        if !waits || self.buffer.frame_for_tick(tick).is_some() {
            self.gate(tick, now);
            return;
        }
        let t_k = self.tick_time(tick);
        let post = self.stages.sov_post_gate();
        let mut deadline = now.plus(self.bounds.wait_window_us);
        deadline = deadline.min(Timestamp(t_k.0 + self.bounds.e2e_bound_us - post));
        if let Some(prev) = self.last_decided {
            deadline = deadline.min(Timestamp((prev.0 + self.bounds.output_interval_bound_us).saturating_sub(post)));
        }
        let deadline = deadline.max(now);
        if deadline == now {
            self.gate(tick, now);
        } else {
            self.waiting = Some(tick);
            self.push(deadline, tick, EventKind::SovGateDeadline);
        }
    }

    fn gate(&mut self, tick: u64, now: Timestamp) {
        self.waiting = None;
        let t_k = self.tick_time(tick);
        let perceived = t_k.plus(self.stages.sov_perception);
        let sov = self.sov_frames.remove(&tick).expect("perceived before gate");
        let attempted = self.sor_configured && self.policy.mode.waits();
        let achieved = attempted && self.buffer.frame_for_tick(tick).is_some();
        self.waits.push(WaitRecord {
            tick,
            intra_attempted: attempted,
            intra_achieved: achieved,
            wait_us: now.0 - perceived.0,
        });

        let mut usable = achieved;
        if achieved && self.degraded {
            self.fresh_streak += 1;
            usable = self.fresh_streak > self.policy.switch_back_frames;
        }
        let arrival = ArrivalStatus { sor_configured: self.sor_configured, matching_arrived: usable };
        let mode = select_mode(arrival, &self.buffer, t_k, self.policy);
        if mode == FusionMode::Intra {
            self.degraded = false;
        } else if self.sor_configured {
            if !self.degraded {
                self.fresh_streak = 0;
            }
            self.degraded = true;
        }

        let gate_m = self.policy.dedup_gate_m;
        let (fused, staleness) = match mode {
            FusionMode::Intra => {
                let sor = self.buffer.frame_for_tick(tick).expect("selector saw the frame");
                (intra_frame_fuse(&sov, sor, gate_m).expect("ticks match"), Some(0))
            }
            FusionMode::Inter => {
                let (f, s) =
                    inter_frame_fuse(&sov, &self.buffer, t_k, self.policy).expect("selector checked staleness");
                (f, Some(s))
            }
            FusionMode::Planning => (sov, self.buffer.valid_heavy_age(t_k, self.policy.heavy_validity_us)),
            FusionMode::NoFusion => (sov, None),
        };
        self.sov_tracker.update(&fused).expect("vehicle ticks increase");

        let issued = now.plus(self.stages.sov_tracking + self.stages.sov_light_prediction);
        let period = self.scenario.frame_period_us;
        let noise = self.noise;
        let local: Vec<_> = self
            .sov_tracker
            .tracks
            .values()
            .filter_map(|t| light_predict(t, issued, period, &noise, Source::SoV).ok())
            .collect();
        let predicted_set = if mode == FusionMode::Planning {
            planning_fuse(&local, &self.buffer, t_k, self.policy).unwrap_or(local)
        } else {
            local
        };
        let decided_at = issued.plus(self.stages.sov_planning);
        self.last_decided = Some(decided_at);
        self.fusion_events.push(FusionEvent { tick, mode, staleness_us: staleness });
        self.decisions.push(PlanningDecision {
            tick,
            decided_at,
            e2e_latency: decided_at.0 - t_k.0,
            fusion_mode_used: mode,
            predicted_set,
        });
    }
}

/// Runs one simulation. Scenario link episodes are merged into a synthetic
/// link model.
pub fn run(
    scenario: &Scenario,
    link: &LinkSource,
    stages: &StageLatencies,
    bounds: &BoundaryConfig,
    policy: &PolicyConfig,
    seed: u64,
) -> Result<SimulationLog, EngineError> {
    scenario.validate()?;
    validate_timing(stages, bounds, scenario.frame_period_us)?;
    policy.validate().map_err(|e| config_error("policy", e.to_string()))?;
    let ticks = scenario.tick_count();
    let link = match link {
        LinkSource::Synthetic { model, seed } => {
            let model = model.clone().with_episodes(scenario.link_episodes.iter().copied());
            model.validate()?;
            LinkSource::Synthetic { model, seed: *seed }
        }
        replay => {
            replay.check_covers(ticks)?;
            replay.clone()
        }
    };
    let sor_configured = scenario.sor_coverage().is_some();
    let mut engine = Engine {
        scenario,
        link,
        stages,
        bounds,
        policy,
        seed,
        noise: NoiseModel::for_scenario(scenario),
        sor_configured,
        queue: BinaryHeap::new(),
        seq: 0,
        post_channel: Channel::new(Stream::PostPerception),
        heavy_channel: Channel::new(Stream::HeavyPrediction),
        sor_frames: BTreeMap::new(),
        in_flight_post: BTreeMap::new(),
        in_flight_heavy: BTreeMap::new(),
        sor_tracker: TrackerState::with_coast_limit(DEFAULT_COAST_US),
        sov_tracker: TrackerState::with_coast_limit(DEFAULT_COAST_US),
        buffer: SorBuffer::default(),
        sov_frames: BTreeMap::new(),
        waiting: None,
        last_decided: None,
        fresh_streak: 0,
        degraded: false,
        decisions: Vec::with_capacity(ticks as usize),
        fusion_events: Vec::with_capacity(ticks as usize),
        waits: Vec::with_capacity(ticks as usize),
    };
    for tick in 0..ticks {
        let t = scenario.tick_time(tick);
        if sor_configured {
            engine.push(t.plus(stages.sor_perception), tick, EventKind::SorPerceived);
            engine.push(t.plus(stages.sor_total()), tick, EventKind::SorPredicted);
        }
        engine.push(t.plus(stages.sov_perception), tick, EventKind::SovPerceived);
    }
    while let Some(Reverse(ev)) = engine.queue.pop() {
        engine.handle(ev);
    }

    let mut frames = Vec::with_capacity(engine.decisions.len() * 2);
    for d in &engine.decisions {
        let mut rng = derive_rng(seed, Purpose::SenseSoV, d.tick);
        frames.push(scenario.sense(CoverageOwner::SoV, d.tick, &mut rng));
        if let Some(f) = engine.sor_frames.get(&d.tick) {
            frames.push(f.clone());
        }
    }
    let mut deliveries = BTreeMap::new();
    if sor_configured {
        deliveries.insert(Stream::PostPerception, engine.post_channel.into_trace());
        deliveries.insert(Stream::HeavyPrediction, engine.heavy_channel.into_trace());
    }
    let boundary_violations = check_boundaries(&engine.decisions, bounds);
    Ok(SimulationLog {
        schema_version: LOG_SCHEMA_VERSION,
        scenario_hash: scenario.content_hash(),
        seed,
        policy: policy.mode,
        frame_period_us: scenario.frame_period_us,
        tick_count: ticks,
        sor_configured,
        frames,
        deliveries,
        decisions: engine.decisions,
        fusion_events: engine.fusion_events,
        waits: engine.waits,
        boundary_violations,
    })
}
